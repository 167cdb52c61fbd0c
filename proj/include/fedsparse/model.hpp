#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedsparse/nn.hpp"
#include "fedsparse/series.hpp"

namespace fedsparse::model {

// Canonical layer layouts. Heads depend only on w, so heads from users with
// different feature sets stay interchangeable.
std::vector<nn::LayerSpec> head_layout();
std::vector<nn::LayerSpec> embedding_layout(int w);
std::vector<nn::LayerSpec> prediction_layout();
std::vector<nn::LayerSpec> dnn_baseline_layout();

int head_input_dim(int w);            // w
int embedding_input_dim(int nf, int w);  // nf*w
int prediction_input_dim(int nf, int w); // nf+w

// nf per-feature heads, one embedding network, one prediction network, each
// with its own Adam state.
struct HflModel {
    int nf = 0;
    int w = 0;
    bool joint_grads = false;
    std::vector<nn::MlpWeights> heads;
    nn::MlpWeights embedding;
    nn::MlpWeights prediction;
    std::vector<nn::AdamState> head_opt;
    nn::AdamState embed_opt;
    nn::AdamState pred_opt;

    static HflModel init(int nf, int w, double lr, uint64_t seed,
                         bool joint_grads = false);
};

// Head count, head shape uniformity, and dimension compatibility.
void validate_model(const HflModel& m);

long param_count(const HflModel& m);

struct ForwardTrace {
    std::vector<double> prelim;    // nf preliminary predictions
    std::vector<double> embedded;  // w-dimensional temporal embedding
    double final_pred = 0.0;
    std::vector<nn::ForwardTape> head_tapes;
    nn::ForwardTape embed_tape;
    nn::ForwardTape pred_tape;
};

double head_forward(const HflModel& m, int feature, std::span<const double> dense_row);
ForwardTrace full_forward(const HflModel& m, const ts::SampleWindow& window);

// Flattened feature-major sparse tensor, the embedding network's input.
std::vector<double> flatten_sparse(const ts::SampleWindow& window);
std::vector<double> flatten_dense(const ts::SampleWindow& window);
std::vector<double> dense_row(const ts::SampleWindow& window, int feature);

struct BatchLosses {
    std::vector<double> head_mse;  // nf entries
    double final_mse = 0.0;
};

struct BatchGradients {
    std::vector<nn::Gradients> heads;
    nn::Gradients embedding;
    nn::Gradients prediction;
    BatchLosses losses;
};

// Gradients of the 1+nf batch-mean losses. Preliminary predictions are
// detached at the prediction-network input unless m.joint_grads is set.
BatchGradients compute_batch_gradients(const HflModel& m,
                                       std::span<const ts::SampleWindow> batch);

// One Adam step per network. Throws "diverged" on non-finite loss.
BatchLosses train_batch(HflModel& m, std::span<const ts::SampleWindow> batch);

struct EvalResult {
    std::vector<double> head_mse;
    double final_mse = 0.0;
};

// No weight updates; throws on an empty dataset.
EvalResult evaluate(const HflModel& m, std::span<const ts::SampleWindow> data);

}  // namespace fedsparse::model

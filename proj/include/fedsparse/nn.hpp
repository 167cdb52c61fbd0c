#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fedsparse::nn {

enum class Activation : uint8_t { none = 0, sigmoid = 1, lrelu = 2 };

constexpr double kLreluSlope = 0.01;

double apply_activation(Activation act, double z);
double activation_grad(Activation act, double z);

// Dense row-major matrix of doubles.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

struct Layer {
    Matrix W;                // out x in
    std::vector<double> b;   // out
    Activation act = Activation::none;

    int in_dim() const { return W.cols; }
    int out_dim() const { return W.rows; }
};

struct MlpWeights {
    std::vector<Layer> layers;

    int input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
    int output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
};

// Dimension chaining plus finiteness of every entry.
bool same_shape(const MlpWeights& a, const MlpWeights& b);
void validate_weights(const MlpWeights& net);

struct LayerSpec {
    int out = 0;
    Activation act = Activation::none;
};

// Uniform +-1/sqrt(fan_in) weights, zero biases. Deterministic per seed.
MlpWeights init_weights(int input_dim, const std::vector<LayerSpec>& spec, uint64_t seed);

long param_count(const MlpWeights& net);

// Per-layer inputs and pre-activations, enough to run backward.
struct ForwardTape {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> preacts;
    std::vector<double> output;
};

std::vector<double> forward(const MlpWeights& net, std::span<const double> input,
                            ForwardTape* tape = nullptr);

struct Gradients {
    std::vector<Matrix> dW;
    std::vector<std::vector<double>> db;

    static Gradients zeros_like(const MlpWeights& net);
    void accumulate(const Gradients& other);
};

// output_grad is dL/d(output). Returns parameter gradients; optionally the
// gradient with respect to the network input.
Gradients backward(const MlpWeights& net, const ForwardTape& tape,
                   std::span<const double> output_grad,
                   std::vector<double>* input_grad = nullptr);

// Same as backward but accumulates into an existing Gradients.
void backward_into(const MlpWeights& net, const ForwardTape& tape,
                   std::span<const double> output_grad, Gradients& grads,
                   std::vector<double>* input_grad = nullptr);

double mse(std::span<const double> prediction, std::span<const double> target);

struct AdamState {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::vector<Matrix> mW, vW;
    std::vector<std::vector<double>> mb, vb;

    static AdamState for_net(const MlpWeights& net, double lr);
};

// Standard Adam with bias correction; one call advances state.t by one.
void adam_step(MlpWeights& net, const Gradients& grads, AdamState& state);

}  // namespace fedsparse::nn

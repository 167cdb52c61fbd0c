#include "fedsparse/model.hpp"

#include <cmath>
#include <stdexcept>

#include "fedsparse/util.hpp"

namespace fedsparse::model {

using nn::Activation;
using nn::LayerSpec;

std::vector<LayerSpec> head_layout() {
    return {{16, Activation::sigmoid}, {256, Activation::sigmoid},
            {64, Activation::lrelu},   {16, Activation::lrelu},
            {1, Activation::none}};
}

std::vector<LayerSpec> embedding_layout(int w) {
    return {{16, Activation::sigmoid}, {256, Activation::sigmoid},
            {64, Activation::lrelu},   {16, Activation::lrelu},
            {w, Activation::none}};
}

std::vector<LayerSpec> prediction_layout() {
    return {{32, Activation::sigmoid}, {256, Activation::sigmoid},
            {16, Activation::lrelu},   {1, Activation::lrelu},
            {1, Activation::none}};
}

std::vector<LayerSpec> dnn_baseline_layout() {
    return {{64, Activation::sigmoid}, {1024, Activation::sigmoid},
            {64, Activation::lrelu},   {1, Activation::none}};
}

int head_input_dim(int w) { return w; }
int embedding_input_dim(int nf, int w) { return nf * w; }
int prediction_input_dim(int nf, int w) { return nf + w; }

HflModel HflModel::init(int nf, int w, double lr, uint64_t seed, bool joint_grads) {
    if (nf < 1 || w < 1) throw std::invalid_argument("nf and w must be >= 1");
    HflModel m;
    m.nf = nf;
    m.w = w;
    m.joint_grads = joint_grads;
    for (int i = 0; i < nf; ++i) {
        m.heads.push_back(nn::init_weights(head_input_dim(w), head_layout(),
                                           mix_seed(seed, 100 + i)));
        m.head_opt.push_back(nn::AdamState::for_net(m.heads.back(), lr));
    }
    m.embedding = nn::init_weights(embedding_input_dim(nf, w), embedding_layout(w),
                                   mix_seed(seed, 200));
    m.embed_opt = nn::AdamState::for_net(m.embedding, lr);
    m.prediction = nn::init_weights(prediction_input_dim(nf, w), prediction_layout(),
                                    mix_seed(seed, 300));
    m.pred_opt = nn::AdamState::for_net(m.prediction, lr);
    return m;
}

void validate_model(const HflModel& m) {
    if (static_cast<int>(m.heads.size()) != m.nf)
        throw std::invalid_argument("head count must equal nf");
    for (const auto& h : m.heads) {
        nn::validate_weights(h);
        if (!nn::same_shape(h, m.heads.front()))
            throw std::invalid_argument("heads must share one shape");
        if (h.input_dim() != m.w || h.output_dim() != 1)
            throw std::invalid_argument("head dimensions must be w -> 1");
    }
    nn::validate_weights(m.embedding);
    nn::validate_weights(m.prediction);
    if (m.embedding.input_dim() != m.nf * m.w || m.embedding.output_dim() != m.w)
        throw std::invalid_argument("embedding dimensions must be nf*w -> w");
    if (m.prediction.input_dim() != m.nf + m.w || m.prediction.output_dim() != 1)
        throw std::invalid_argument("prediction dimensions must be nf+w -> 1");
}

long param_count(const HflModel& m) {
    long n = 0;
    for (const auto& h : m.heads) n += nn::param_count(h);
    return n + nn::param_count(m.embedding) + nn::param_count(m.prediction);
}

std::vector<double> dense_row(const ts::SampleWindow& window, int feature) {
    const nn::Matrix& d = window.dense;
    std::vector<double> row(d.cols);
    for (int k = 0; k < d.cols; ++k) row[k] = d(feature, k);
    return row;
}

std::vector<double> flatten_sparse(const ts::SampleWindow& window) {
    return window.sparse.a;  // row-major is feature-major already
}

std::vector<double> flatten_dense(const ts::SampleWindow& window) {
    return window.dense.a;
}

double head_forward(const HflModel& m, int feature, std::span<const double> row) {
    if (feature < 0 || feature >= m.nf)
        throw std::out_of_range("head index out of range");
    return nn::forward(m.heads[feature], row)[0];
}

ForwardTrace full_forward(const HflModel& m, const ts::SampleWindow& window) {
    if (window.dense.rows != m.nf || window.dense.cols != m.w ||
        window.sparse.rows != m.nf || window.sparse.cols != m.w)
        throw std::invalid_argument("window shape does not match model");

    ForwardTrace tr;
    tr.prelim.resize(m.nf);
    tr.head_tapes.resize(m.nf);
    for (int i = 0; i < m.nf; ++i) {
        std::vector<double> row = dense_row(window, i);
        tr.prelim[i] = nn::forward(m.heads[i], row, &tr.head_tapes[i])[0];
    }
    tr.embedded = nn::forward(m.embedding, flatten_sparse(window), &tr.embed_tape);

    std::vector<double> pin;
    pin.reserve(m.nf + m.w);
    pin.insert(pin.end(), tr.prelim.begin(), tr.prelim.end());
    pin.insert(pin.end(), tr.embedded.begin(), tr.embedded.end());
    tr.final_pred = nn::forward(m.prediction, pin, &tr.pred_tape)[0];
    return tr;
}

BatchGradients compute_batch_gradients(const HflModel& m,
                                       std::span<const ts::SampleWindow> batch) {
    if (batch.empty()) throw std::invalid_argument("empty batch");

    BatchGradients out;
    out.heads.reserve(m.nf);
    for (int i = 0; i < m.nf; ++i) out.heads.push_back(nn::Gradients::zeros_like(m.heads[i]));
    out.embedding = nn::Gradients::zeros_like(m.embedding);
    out.prediction = nn::Gradients::zeros_like(m.prediction);
    out.losses.head_mse.assign(m.nf, 0.0);

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const ts::SampleWindow& win : batch) {
        ForwardTrace tr = full_forward(m, win);
        const double y = win.label;

        for (int i = 0; i < m.nf; ++i) {
            double diff = tr.prelim[i] - y;
            out.losses.head_mse[i] += diff * diff * inv_b;
            double g = 2.0 * diff * inv_b;
            nn::backward_into(m.heads[i], tr.head_tapes[i], std::span(&g, 1),
                              out.heads[i]);
        }

        double fdiff = tr.final_pred - y;
        out.losses.final_mse += fdiff * fdiff * inv_b;
        double fg = 2.0 * fdiff * inv_b;
        std::vector<double> pred_in_grad;
        nn::backward_into(m.prediction, tr.pred_tape, std::span(&fg, 1),
                          out.prediction, &pred_in_grad);

        std::span<const double> embed_grad(pred_in_grad.data() + m.nf,
                                           static_cast<size_t>(m.w));
        nn::backward_into(m.embedding, tr.embed_tape, embed_grad, out.embedding);

        if (m.joint_grads) {
            for (int i = 0; i < m.nf; ++i)
                nn::backward_into(m.heads[i], tr.head_tapes[i],
                                  std::span(&pred_in_grad[i], 1), out.heads[i]);
        }
    }
    return out;
}

BatchLosses train_batch(HflModel& m, std::span<const ts::SampleWindow> batch) {
    BatchGradients g = compute_batch_gradients(m, batch);
    for (double l : g.losses.head_mse)
        if (!std::isfinite(l)) throw std::runtime_error("diverged");
    if (!std::isfinite(g.losses.final_mse)) throw std::runtime_error("diverged");

    for (int i = 0; i < m.nf; ++i) nn::adam_step(m.heads[i], g.heads[i], m.head_opt[i]);
    nn::adam_step(m.embedding, g.embedding, m.embed_opt);
    nn::adam_step(m.prediction, g.prediction, m.pred_opt);
    return g.losses;
}

EvalResult evaluate(const HflModel& m, std::span<const ts::SampleWindow> data) {
    if (data.empty()) throw std::invalid_argument("empty dataset");
    EvalResult r;
    r.head_mse.assign(m.nf, 0.0);
    const double inv_n = 1.0 / static_cast<double>(data.size());
    for (const ts::SampleWindow& win : data) {
        ForwardTrace tr = full_forward(m, win);
        for (int i = 0; i < m.nf; ++i) {
            double d = tr.prelim[i] - win.label;
            r.head_mse[i] += d * d * inv_n;
        }
        double d = tr.final_pred - win.label;
        r.final_mse += d * d * inv_n;
    }
    return r;
}

}  // namespace fedsparse::model

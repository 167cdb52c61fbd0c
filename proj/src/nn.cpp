#include "fedsparse/nn.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "fedsparse/util.hpp"

namespace fedsparse::nn {

double apply_activation(Activation act, double z) {
    switch (act) {
        case Activation::none:
            return z;
        case Activation::sigmoid:
            if (z >= 0.0) {
                return 1.0 / (1.0 + std::exp(-z));
            } else {
                double e = std::exp(z);
                return e / (1.0 + e);
            }
        case Activation::lrelu:
            return z > 0.0 ? z : kLreluSlope * z;
    }
    throw std::logic_error("unknown activation");
}

double activation_grad(Activation act, double z) {
    switch (act) {
        case Activation::none:
            return 1.0;
        case Activation::sigmoid: {
            double s = apply_activation(Activation::sigmoid, z);
            return s * (1.0 - s);
        }
        case Activation::lrelu:
            return z > 0.0 ? 1.0 : kLreluSlope;
    }
    throw std::logic_error("unknown activation");
}

bool same_shape(const MlpWeights& a, const MlpWeights& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (size_t k = 0; k < a.layers.size(); ++k) {
        if (!a.layers[k].W.same_shape(b.layers[k].W)) return false;
        if (a.layers[k].b.size() != b.layers[k].b.size()) return false;
        if (a.layers[k].act != b.layers[k].act) return false;
    }
    return true;
}

void validate_weights(const MlpWeights& net) {
    int prev_out = -1;
    for (const Layer& l : net.layers) {
        if (l.in_dim() <= 0 || l.out_dim() <= 0)
            throw std::invalid_argument("layer has zero dimension");
        if (static_cast<int>(l.b.size()) != l.out_dim())
            throw std::invalid_argument("bias length does not match layer output");
        if (prev_out >= 0 && l.in_dim() != prev_out)
            throw std::invalid_argument("layer dimensions do not chain");
        prev_out = l.out_dim();
        for (double v : l.W.a)
            if (!std::isfinite(v)) throw std::invalid_argument("non-finite weight");
        for (double v : l.b)
            if (!std::isfinite(v)) throw std::invalid_argument("non-finite bias");
    }
}

MlpWeights init_weights(int input_dim, const std::vector<LayerSpec>& spec, uint64_t seed) {
    if (input_dim <= 0) throw std::invalid_argument("zero dimension");
    MlpWeights net;
    std::mt19937_64 rng(splitmix64(seed));
    int in = input_dim;
    for (const LayerSpec& s : spec) {
        if (s.out <= 0) throw std::invalid_argument("zero dimension");
        Layer l;
        l.W = Matrix(s.out, in);
        l.b.assign(s.out, 0.0);
        l.act = s.act;
        double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : l.W.a) v = dist(rng);
        in = s.out;
        net.layers.push_back(std::move(l));
    }
    return net;
}

long param_count(const MlpWeights& net) {
    long n = 0;
    for (const Layer& l : net.layers)
        n += static_cast<long>(l.out_dim()) * l.in_dim() + l.out_dim();
    return n;
}

std::vector<double> forward(const MlpWeights& net, std::span<const double> input,
                            ForwardTape* tape) {
    if (!net.layers.empty() &&
        static_cast<int>(input.size()) != net.layers.front().in_dim())
        throw std::invalid_argument("input length does not match network input dimension");

    std::vector<double> x(input.begin(), input.end());
    if (tape) {
        tape->inputs.clear();
        tape->preacts.clear();
        tape->inputs.reserve(net.layers.size());
        tape->preacts.reserve(net.layers.size());
    }
    for (const Layer& l : net.layers) {
        const int out = l.out_dim(), in = l.in_dim();
        std::vector<double> z(out);
        for (int o = 0; o < out; ++o) {
            const double* row = &l.W.a[static_cast<size_t>(o) * in];
            double acc = l.b[o];
            for (int i = 0; i < in; ++i) acc += row[i] * x[i];
            z[o] = acc;
        }
        if (tape) {
            tape->inputs.push_back(std::move(x));
            tape->preacts.push_back(z);
        }
        x.resize(out);
        for (int o = 0; o < out; ++o) x[o] = apply_activation(l.act, z[o]);
    }
    if (tape) tape->output = x;
    return x;
}

Gradients Gradients::zeros_like(const MlpWeights& net) {
    Gradients g;
    g.dW.reserve(net.layers.size());
    g.db.reserve(net.layers.size());
    for (const Layer& l : net.layers) {
        g.dW.emplace_back(l.out_dim(), l.in_dim());
        g.db.emplace_back(l.out_dim(), 0.0);
    }
    return g;
}

void Gradients::accumulate(const Gradients& other) {
    if (dW.size() != other.dW.size())
        throw std::invalid_argument("gradient shape mismatch");
    for (size_t k = 0; k < dW.size(); ++k) {
        if (!dW[k].same_shape(other.dW[k]))
            throw std::invalid_argument("gradient shape mismatch");
        for (size_t j = 0; j < dW[k].a.size(); ++j) dW[k].a[j] += other.dW[k].a[j];
        for (size_t j = 0; j < db[k].size(); ++j) db[k][j] += other.db[k][j];
    }
}

void backward_into(const MlpWeights& net, const ForwardTape& tape,
                   std::span<const double> output_grad, Gradients& grads,
                   std::vector<double>* input_grad) {
    if (tape.inputs.size() != net.layers.size())
        throw std::invalid_argument("tape does not match network");
    if (!net.layers.empty() &&
        static_cast<int>(output_grad.size()) != net.layers.back().out_dim())
        throw std::invalid_argument("output gradient shape mismatch");
    if (grads.dW.size() != net.layers.size())
        throw std::invalid_argument("gradient shape mismatch");

    std::vector<double> g(output_grad.begin(), output_grad.end());
    for (int k = static_cast<int>(net.layers.size()) - 1; k >= 0; --k) {
        const Layer& l = net.layers[k];
        const int out = l.out_dim(), in = l.in_dim();
        const std::vector<double>& x = tape.inputs[k];
        const std::vector<double>& z = tape.preacts[k];

        std::vector<double> dz(out);
        for (int o = 0; o < out; ++o) dz[o] = g[o] * activation_grad(l.act, z[o]);

        Matrix& dW = grads.dW[k];
        for (int o = 0; o < out; ++o) {
            double* drow = &dW.a[static_cast<size_t>(o) * in];
            const double d = dz[o];
            for (int i = 0; i < in; ++i) drow[i] += d * x[i];
            grads.db[k][o] += d;
        }

        if (k > 0 || input_grad) {
            std::vector<double> gin(in, 0.0);
            for (int o = 0; o < out; ++o) {
                const double* row = &l.W.a[static_cast<size_t>(o) * in];
                const double d = dz[o];
                for (int i = 0; i < in; ++i) gin[i] += row[i] * d;
            }
            g = std::move(gin);
        }
    }
    if (input_grad) {
        if (net.layers.empty())
            *input_grad = std::vector<double>(output_grad.begin(), output_grad.end());
        else
            *input_grad = std::move(g);
    }
}

Gradients backward(const MlpWeights& net, const ForwardTape& tape,
                   std::span<const double> output_grad, std::vector<double>* input_grad) {
    Gradients grads = Gradients::zeros_like(net);
    backward_into(net, tape, output_grad, grads, input_grad);
    return grads;
}

double mse(std::span<const double> prediction, std::span<const double> target) {
    if (prediction.size() != target.size())
        throw std::invalid_argument("mse length mismatch");
    if (prediction.empty()) return 0.0;
    double acc = 0.0;
    for (size_t i = 0; i < prediction.size(); ++i) {
        double d = prediction[i] - target[i];
        acc += d * d;
    }
    return acc / static_cast<double>(prediction.size());
}

AdamState AdamState::for_net(const MlpWeights& net, double lr) {
    AdamState st;
    st.lr = lr;
    st.mW.reserve(net.layers.size());
    st.vW.reserve(net.layers.size());
    for (const Layer& l : net.layers) {
        st.mW.emplace_back(l.out_dim(), l.in_dim());
        st.vW.emplace_back(l.out_dim(), l.in_dim());
        st.mb.emplace_back(l.out_dim(), 0.0);
        st.vb.emplace_back(l.out_dim(), 0.0);
    }
    return st;
}

namespace {

void adam_update(std::span<double> w, std::span<const double> g, std::span<double> m,
                 std::span<double> v, const AdamState& st, double bc1, double bc2) {
    for (size_t j = 0; j < w.size(); ++j) {
        m[j] = st.beta1 * m[j] + (1.0 - st.beta1) * g[j];
        v[j] = st.beta2 * v[j] + (1.0 - st.beta2) * g[j] * g[j];
        double mhat = m[j] / bc1;
        double vhat = v[j] / bc2;
        w[j] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
}

}  // namespace

void adam_step(MlpWeights& net, const Gradients& grads, AdamState& state) {
    if (grads.dW.size() != net.layers.size() || state.mW.size() != net.layers.size())
        throw std::invalid_argument("adam state shape mismatch");
    for (size_t k = 0; k < net.layers.size(); ++k) {
        if (!grads.dW[k].same_shape(net.layers[k].W))
            throw std::invalid_argument("adam gradient shape mismatch");
        for (double g : grads.dW[k].a)
            if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient");
        for (double g : grads.db[k])
            if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (size_t k = 0; k < net.layers.size(); ++k) {
        adam_update(net.layers[k].W.a, grads.dW[k].a, state.mW[k].a, state.vW[k].a,
                    state, bc1, bc2);
        adam_update(net.layers[k].b, grads.db[k], state.mb[k], state.vb[k], state, bc1,
                    bc2);
    }
}

}  // namespace fedsparse::nn

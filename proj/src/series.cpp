#include "fedsparse/series.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "fedsparse/util.hpp"

namespace fedsparse::ts {

void validate_series(const SparseSeries& series, int nf) {
    double prev = -std::numeric_limits<double>::infinity();
    for (const Event& e : series.events) {
        if (!(e.time > prev))
            throw std::invalid_argument("timestamps must strictly increase");
        prev = e.time;
        if (e.channel < 0 || e.channel > nf)
            throw std::invalid_argument("channel out of range");
        if (!std::isfinite(e.value))
            throw std::invalid_argument("non-finite value");
    }
}

std::vector<double> compact_labels(const SparseSeries& series, int nf) {
    std::vector<double> times;
    for (const Event& e : series.events)
        if (e.channel == nf) times.push_back(e.time);
    return times;
}

namespace {

// Index of the event at label_time; the grid is the event list itself.
size_t grid_index_of(const SparseSeries& series, double label_time) {
    auto it = std::lower_bound(series.events.begin(), series.events.end(), label_time,
                               [](const Event& e, double t) { return e.time < t; });
    if (it == series.events.end() || it->time != label_time)
        throw std::invalid_argument("label_time is not an observation timestamp");
    return static_cast<size_t>(it - series.events.begin());
}

}  // namespace

void pack_sparse(const SparseSeries& series, int nf, double label_time, int w,
                 nn::Matrix& out, std::vector<uint8_t>& mask) {
    if (w < 1) throw std::invalid_argument("window size must be >= 1");
    size_t idx = grid_index_of(series, label_time);
    if (idx < static_cast<size_t>(w)) throw std::runtime_error("insufficient history");

    out = nn::Matrix(nf, w);
    mask.assign(static_cast<size_t>(nf) * w, 0);
    for (int k = 0; k < w; ++k) {
        const Event& e = series.events[idx - 1 - k];
        if (e.channel < nf) {  // label events leave the whole column unobserved
            out(e.channel, k) = e.value;
            mask[static_cast<size_t>(e.channel) * w + k] = 1;
        }
    }
}

nn::Matrix pack_dense(const SparseSeries& series, int nf, double label_time, int w) {
    if (w < 1) throw std::invalid_argument("window size must be >= 1");
    nn::Matrix out(nf, w);
    std::vector<int> filled(nf, 0);
    int remaining = nf;
    for (auto it = series.events.rbegin(); it != series.events.rend() && remaining > 0;
         ++it) {
        if (it->time >= label_time) continue;
        int c = it->channel;
        if (c >= nf) continue;
        if (filled[c] < w) {
            out(c, filled[c]) = it->value;
            if (++filled[c] == w) --remaining;
        }
    }
    if (remaining > 0) throw std::runtime_error("insufficient history");
    return out;
}

Dataset build_dataset(const SparseSeries& series, int nf, int w) {
    validate_series(series, nf);
    Dataset ds;
    ds.nf = nf;
    ds.w = w;
    size_t idx = 0;
    for (const Event& e : series.events) {
        if (e.channel == nf) {
            try {
                SampleWindow win;
                pack_sparse(series, nf, e.time, w, win.sparse, win.mask);
                win.dense = pack_dense(series, nf, e.time, w);
                win.label = e.value;
                win.t_index = static_cast<int>(idx);
                ds.windows.push_back(std::move(win));
                ++idx;
            } catch (const std::runtime_error&) {
                ++ds.skipped;
            }
        }
    }
    return ds;
}

Split split_patients(size_t n_patients, const SplitRatios& ratios, uint64_t seed) {
    if (n_patients < 3) throw std::invalid_argument("too few patients");
    double sum = ratios.train + ratios.valid + ratios.test;
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("split ratios must sum to 1");

    std::vector<size_t> order(n_patients);
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 rng(mix_seed(seed, 0x5714));
    std::shuffle(order.begin(), order.end(), rng);

    // floor(ratio*n), nudged so exact fractions like 0.6*5 land on 3.
    auto floor_count = [n_patients](double ratio) {
        return static_cast<size_t>(ratio * static_cast<double>(n_patients) + 1e-9);
    };
    size_t n_train = floor_count(ratios.train);
    size_t n_valid = floor_count(ratios.valid);
    size_t n_test = floor_count(ratios.test);
    n_train += n_patients - (n_train + n_valid + n_test);  // remainder to train

    Split split;
    size_t pos = 0;
    for (size_t i = 0; i < n_train; ++i) split.train.push_back(order[pos++]);
    for (size_t i = 0; i < n_valid; ++i) split.valid.push_back(order[pos++]);
    for (size_t i = 0; i < n_test; ++i) split.test.push_back(order[pos++]);
    return split;
}

Split split_patients(std::span<const Dataset> per_patient, const SplitRatios& ratios,
                     uint64_t seed) {
    return split_patients(per_patient.size(), ratios, seed);
}

}  // namespace fedsparse::ts

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedsparse/nn.hpp"

namespace fedsparse::ts {

// One observation: exactly one channel carries a value at each timestamp.
// Channels 0..nf-1 are features, channel nf is the label.
struct Event {
    double time = 0.0;
    int channel = 0;
    double value = 0.0;
};

struct SparseSeries {
    std::string patient_id;
    std::vector<Event> events;  // strictly increasing time
};

// Throws if timestamps are not strictly increasing or a channel is out of
// [0, nf].
void validate_series(const SparseSeries& series, int nf);

struct SampleWindow {
    nn::Matrix dense;            // nf x w, most-recent-first columns
    nn::Matrix sparse;           // nf x w, zero where unobserved
    std::vector<uint8_t> mask;   // nf*w row-major, 1 where observed
    double label = 0.0;
    int t_index = 0;

    bool mask_at(int i, int k, int w) const {
        return mask[static_cast<size_t>(i) * w + k] != 0;
    }
};

struct Dataset {
    int nf = 0;
    int w = 0;
    std::vector<SampleWindow> windows;
    int skipped = 0;  // label events without enough history
};

// Ordered raw timestamps at which the label channel is observed; the k-th
// entry is compacted index k.
std::vector<double> compact_labels(const SparseSeries& series, int nf);

// Window over the w grid steps immediately preceding label_time, where the
// grid is the series' own event timestamps. Unobserved cells are 0 with a
// false mask. Throws "insufficient history" when fewer than w steps precede
// label_time.
void pack_sparse(const SparseSeries& series, int nf, double label_time, int w,
                 nn::Matrix& out, std::vector<uint8_t>& mask);

// Row i holds the last w observed values of feature i strictly before
// label_time, most-recent-first. Throws "insufficient history" when any
// feature has fewer than w prior observations.
nn::Matrix pack_dense(const SparseSeries& series, int nf, double label_time, int w);

// One window per label event that satisfies both packing preconditions;
// infeasible label events are skipped and counted.
Dataset build_dataset(const SparseSeries& series, int nf, int w);

struct SplitRatios {
    double train = 0.6;
    double valid = 0.2;
    double test = 0.2;
};

struct Split {
    std::vector<size_t> train;
    std::vector<size_t> valid;
    std::vector<size_t> test;
};

// Partition patient indices 0..n-1. Counts are floor(ratio*n) with the
// remainder assigned to train. Deterministic per seed.
Split split_patients(size_t n_patients, const SplitRatios& ratios, uint64_t seed);

// Split by patient, never by window.
Split split_patients(std::span<const Dataset> per_patient, const SplitRatios& ratios,
                     uint64_t seed);

}  // namespace fedsparse::ts

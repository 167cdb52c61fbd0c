#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedsparse/series.hpp"

namespace fedsparse::synth {

enum class Sampling {
    round_robin,     // channel at step t is t mod (nf+1)
    uniform_random,  // one channel drawn uniformly per step
};

// Generator recipe for one domain: a per-patient latent AR(1) process drives
// all nf+1 channels through a mixing matrix, then a per-channel affine map
// (the heterogeneity between domains) and Gaussian observation noise.
struct DomainSpec {
    int nf = 4;                    // feature channels; channel nf is the label
    int n_patients = 10;
    int events_per_patient = 200;  // one observation per integer timestamp
    int latent_dim = 3;
    uint64_t mixing_seed = 1;      // shared across a heterogeneous pair
    double noise_std = 0.05;
    double ar_phi = 0.95;          // latent AR(1) coefficient
    double ar_innovation_std = 1.0;
    Sampling sampling = Sampling::round_robin;
    std::vector<double> channel_scale;   // size nf+1; defaults to all 1
    std::vector<double> channel_offset;  // size nf+1; defaults to all 0
    std::string id_prefix = "p";
};

// Throws std::invalid_argument on a bad spec. min_window is the packer's w;
// pass it so events_per_patient is checked against (nf+1)*w.
void validate_spec(const DomainSpec& spec, int min_window);

// Debug/test view of the latent path behind one patient.
struct LatentTrace {
    std::vector<std::vector<double>> latent;     // per step, latent_dim values
    std::vector<std::vector<double>> noiseless;  // per step, nf+1 channel values pre-noise
};

std::vector<ts::SparseSeries> gen_domain(const DomainSpec& spec, uint64_t seed,
                                     std::vector<LatentTrace>* traces = nullptr);

// Target plus a 10x-larger source sharing the latent family (same mixing
// seed and dynamics) but with differing per-channel affine transforms.
std::pair<DomainSpec, DomainSpec> make_heterogeneous_pair(const DomainSpec& base);

}  // namespace fedsparse::synth

#include "fedsparse/synth.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "fedsparse/util.hpp"

namespace fedsparse::synth {

void validate_spec(const DomainSpec& spec, int min_window) {
    if (spec.nf < 2) throw std::invalid_argument("nf must be >= 2");
    if (spec.n_patients < 1) throw std::invalid_argument("n_patients must be positive");
    if (spec.latent_dim < 1) throw std::invalid_argument("latent_dim must be positive");
    if (min_window < 1) throw std::invalid_argument("window must be positive");
    if (spec.events_per_patient < (spec.nf + 1) * min_window) {
        throw std::invalid_argument("events_per_patient too small for window");
    }
    if (!(spec.noise_std >= 0.0)) throw std::invalid_argument("noise_std must be >= 0");
    if (!(std::abs(spec.ar_phi) < 1.0)) throw std::invalid_argument("ar_phi must satisfy |phi| < 1");
    if (!(spec.ar_innovation_std >= 0.0)) {
        throw std::invalid_argument("ar_innovation_std must be >= 0");
    }
    size_t nc = static_cast<size_t>(spec.nf) + 1;
    if (!spec.channel_scale.empty() && spec.channel_scale.size() != nc) {
        throw std::invalid_argument("channel_scale size mismatch");
    }
    if (!spec.channel_offset.empty() && spec.channel_offset.size() != nc) {
        throw std::invalid_argument("channel_offset size mismatch");
    }
    if (spec.id_prefix.empty()) throw std::invalid_argument("empty id_prefix");
}

// (nf+1) x latent_dim mixing matrix, rows scaled so channel variance stays
// comparable across latent_dim choices.
static std::vector<std::vector<double>> make_mixing(int nf, int latent_dim, uint64_t seed) {
    std::mt19937_64 rng(splitmix64(seed));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double row_scale = 1.0 / std::sqrt(static_cast<double>(latent_dim));
    std::vector<std::vector<double>> m(static_cast<size_t>(nf) + 1);
    for (auto& row : m) {
        row.resize(static_cast<size_t>(latent_dim));
        for (auto& v : row) v = u(rng) * row_scale;
    }
    return m;
}

std::vector<ts::SparseSeries> gen_domain(const DomainSpec& spec, uint64_t seed,
                                     std::vector<LatentTrace>* traces) {
    validate_spec(spec, 1);
    const int nc = spec.nf + 1;
    const auto mixing = make_mixing(spec.nf, spec.latent_dim, spec.mixing_seed);
    std::vector<double> scale = spec.channel_scale;
    std::vector<double> offset = spec.channel_offset;
    if (scale.empty()) scale.assign(static_cast<size_t>(nc), 1.0);
    if (offset.empty()) offset.assign(static_cast<size_t>(nc), 0.0);

    // stationary std of the latent AR(1); zero innovation collapses to a
    // constant-zero latent instead of dividing by zero
    double stat_std = spec.ar_innovation_std > 0.0
                          ? spec.ar_innovation_std / std::sqrt(1.0 - spec.ar_phi * spec.ar_phi)
                          : 0.0;

    std::vector<ts::SparseSeries> out;
    out.reserve(static_cast<size_t>(spec.n_patients));
    if (traces) traces->clear();

    for (int p = 0; p < spec.n_patients; ++p) {
        std::mt19937_64 rng(mix_seed(seed, 0x9e3779b9u + static_cast<uint64_t>(p)));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_int_distribution<int> pick(0, spec.nf);

        std::vector<double> z(static_cast<size_t>(spec.latent_dim));
        for (auto& zi : z) zi = stat_std * normal(rng);

        ts::SparseSeries series;
        series.patient_id = spec.id_prefix + std::to_string(p);
        series.events.reserve(static_cast<size_t>(spec.events_per_patient));
        LatentTrace trace;

        for (int t = 0; t < spec.events_per_patient; ++t) {
            if (t > 0) {
                for (auto& zi : z) {
                    zi = spec.ar_phi * zi + spec.ar_innovation_std * normal(rng);
                }
            }
            int channel = spec.sampling == Sampling::round_robin ? t % nc : pick(rng);
            std::vector<double> noiseless(static_cast<size_t>(nc));
            for (int c = 0; c < nc; ++c) {
                double dot = 0.0;
                for (int k = 0; k < spec.latent_dim; ++k) {
                    dot += mixing[static_cast<size_t>(c)][static_cast<size_t>(k)] *
                           z[static_cast<size_t>(k)];
                }
                noiseless[static_cast<size_t>(c)] =
                    scale[static_cast<size_t>(c)] * dot + offset[static_cast<size_t>(c)];
            }
            double value = noiseless[static_cast<size_t>(channel)] + spec.noise_std * normal(rng);
            series.events.push_back(ts::Event{static_cast<double>(t), channel, value});
            if (traces) {
                trace.latent.push_back(z);
                trace.noiseless.push_back(std::move(noiseless));
            }
        }
        ts::validate_series(series, spec.nf);
        out.push_back(std::move(series));
        if (traces) traces->push_back(std::move(trace));
    }
    return out;
}

std::pair<DomainSpec, DomainSpec> make_heterogeneous_pair(const DomainSpec& base) {
    const size_t nc = static_cast<size_t>(base.nf) + 1;
    DomainSpec target = base;
    target.id_prefix = "t";
    if (target.channel_scale.empty()) target.channel_scale.assign(nc, 1.0);
    if (target.channel_offset.empty()) target.channel_offset.assign(nc, 0.0);

    DomainSpec source = target;
    source.id_prefix = "s";
    source.n_patients = base.n_patients * 10;
    // feature channels get distinct affine maps (the heterogeneity); the
    // label channel stays shared so labels remain comparable across domains
    for (size_t c = 0; c < nc; ++c) {
        if (static_cast<int>(c) == base.nf) continue;
        source.channel_scale[c] *= (c % 2 == 0 ? 1.25 : 0.8);
        source.channel_offset[c] += (c % 2 == 0 ? 0.3 : -0.3);
    }
    return {target, source};
}

}  // namespace fedsparse::synth

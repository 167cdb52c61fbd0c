#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fedsparse/series.hpp"
#include "fedsparse/synth.hpp"

using namespace fedsparse;

namespace {

bool series_equal(const ts::SparseSeries& a, const ts::SparseSeries& b) {
    if (a.patient_id != b.patient_id || a.events.size() != b.events.size()) return false;
    for (size_t i = 0; i < a.events.size(); ++i) {
        if (a.events[i].time != b.events[i].time) return false;
        if (a.events[i].channel != b.events[i].channel) return false;
        if (a.events[i].value != b.events[i].value) return false;
    }
    return true;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    REQUIRE(x.size() == y.size());
    REQUIRE(x.size() > 2);
    double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("spec validation rejects unusable recipes") {
    synth::DomainSpec good;
    CHECK_NOTHROW(synth::validate_spec(good, 3));

    synth::DomainSpec s;

    s = good; s.nf = 1;
    CHECK_THROWS_AS(synth::validate_spec(s, 1), std::invalid_argument);
    s = good; s.n_patients = 0;
    CHECK_THROWS_AS(synth::validate_spec(s, 1), std::invalid_argument);
    s = good; s.latent_dim = 0;
    CHECK_THROWS_AS(synth::validate_spec(s, 1), std::invalid_argument);
    CHECK_THROWS_AS(synth::validate_spec(good, 0), std::invalid_argument);
    s = good; s.events_per_patient = (s.nf + 1) * 3 - 1;
    CHECK_THROWS_AS(synth::validate_spec(s, 3), std::invalid_argument);
    s = good; s.noise_std = -0.1;
    CHECK_THROWS_AS(synth::validate_spec(s, 1), std::invalid_argument);
    s = good; s.ar_phi = 1.0;
    CHECK_THROWS_AS(synth::validate_spec(s, 1), std::invalid_argument);
    s = good; s.ar_phi = -1.5;
    CHECK_THROWS_AS(synth::validate_spec(s, 1), std::invalid_argument);
    s = good; s.ar_innovation_std = -1.0;
    CHECK_THROWS_AS(synth::validate_spec(s, 1), std::invalid_argument);
    s = good; s.channel_scale = {1.0, 1.0};
    CHECK_THROWS_AS(synth::validate_spec(s, 1), std::invalid_argument);
    s = good; s.channel_offset = {0.0};
    CHECK_THROWS_AS(synth::validate_spec(s, 1), std::invalid_argument);
    s = good; s.id_prefix = "";
    CHECK_THROWS_AS(synth::validate_spec(s, 1), std::invalid_argument);
}

TEST_CASE("generation is deterministic per seed") {
    synth::DomainSpec spec;
    spec.n_patients = 3;
    spec.events_per_patient = 60;

    auto a = synth::gen_domain(spec, 42);
    auto b = synth::gen_domain(spec, 42);
    REQUIRE(a.size() == b.size());
    for (size_t p = 0; p < a.size(); ++p) CHECK(series_equal(a[p], b[p]));

    auto c = synth::gen_domain(spec, 43);
    bool any_diff = false;
    for (size_t p = 0; p < a.size(); ++p)
        if (!series_equal(a[p], c[p])) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("round robin cycles every channel on an integer grid") {
    synth::DomainSpec spec;
    spec.nf = 4;
    spec.n_patients = 2;
    spec.events_per_patient = 33;
    auto domain = synth::gen_domain(spec, 7);

    REQUIRE(domain.size() == 2);
    CHECK(domain[0].patient_id == "p0");
    CHECK(domain[1].patient_id == "p1");
    for (const auto& series : domain) {
        REQUIRE(series.events.size() == 33);
        for (size_t t = 0; t < series.events.size(); ++t) {
            CHECK(series.events[t].time == static_cast<double>(t));
            CHECK(series.events[t].channel == static_cast<int>(t) % 5);
        }
    }
}

TEST_CASE("generated series honor the container invariants") {
    synth::DomainSpec spec;
    spec.nf = 3;
    spec.n_patients = 4;
    spec.events_per_patient = 50;
    spec.sampling = synth::Sampling::uniform_random;

    auto domain = synth::gen_domain(spec, 11);
    for (const auto& series : domain) {
        CHECK_NOTHROW(ts::validate_series(series, spec.nf));
        for (const auto& e : series.events) {
            CHECK(e.channel >= 0);
            CHECK(e.channel <= spec.nf);
            CHECK(std::isfinite(e.value));
        }
        // Windows built from the output feed straight into training.
        ts::Dataset ds = ts::build_dataset(series, spec.nf, 2);
        CHECK(ds.windows.size() + static_cast<size_t>(ds.skipped) > 0);
    }
}

TEST_CASE("silent dynamics degenerate to per-channel constants") {
    synth::DomainSpec spec;
    spec.nf = 4;
    spec.n_patients = 2;
    spec.events_per_patient = 40;
    spec.noise_std = 0.0;
    spec.ar_innovation_std = 0.0;
    spec.channel_offset = {1.0, 2.0, 3.0, 4.0, 5.0};

    auto domain = synth::gen_domain(spec, 3);
    for (const auto& series : domain) {
        for (const auto& e : series.events) {
            CHECK(e.value == spec.channel_offset[static_cast<size_t>(e.channel)]);
        }
    }
    // Every label equals 5, so the constant predictor 5 reaches MSE zero.
    ts::Dataset ds = ts::build_dataset(domain[0], spec.nf, 2);
    REQUIRE_FALSE(ds.windows.empty());
    double mse = 0.0;
    for (const auto& win : ds.windows) {
        double diff = 5.0 - win.label;
        mse += diff * diff;
    }
    CHECK(mse == 0.0);
}

TEST_CASE("traces expose the latent path behind the observations") {
    synth::DomainSpec spec;
    spec.nf = 2;
    spec.n_patients = 2;
    spec.events_per_patient = 30;
    spec.noise_std = 0.0;

    std::vector<synth::LatentTrace> traces;
    auto domain = synth::gen_domain(spec, 5, &traces);
    REQUIRE(traces.size() == 2);
    for (size_t p = 0; p < traces.size(); ++p) {
        REQUIRE(traces[p].latent.size() == 30);
        REQUIRE(traces[p].noiseless.size() == 30);
        for (size_t t = 0; t < 30; ++t) {
            CHECK(traces[p].latent[t].size() == 3);
            CHECK(traces[p].noiseless[t].size() == 3);
            const ts::Event& e = domain[p].events[t];
            // Zero observation noise: the event value is the noiseless channel.
            CHECK(e.value == traces[p].noiseless[t][static_cast<size_t>(e.channel)]);
        }
    }
}

TEST_CASE("observed channels track their latent driver") {
    synth::DomainSpec spec;
    spec.nf = 2;
    spec.n_patients = 1;
    spec.events_per_patient = 3000;
    spec.latent_dim = 1;
    spec.noise_std = 0.01;

    std::vector<synth::LatentTrace> traces;
    auto domain = synth::gen_domain(spec, 9, &traces);

    std::vector<double> observed, latent, clean;
    for (size_t t = 0; t < domain[0].events.size(); ++t) {
        const ts::Event& e = domain[0].events[t];
        if (e.channel != 0) continue;
        observed.push_back(e.value);
        latent.push_back(traces[0].latent[t][0]);
        clean.push_back(traces[0].noiseless[t][0]);
    }

    // The noiseless channel is an affine image of the single latent, so the
    // clean correlation is +/-1; align the sign before checking strength.
    double r_clean = pearson(clean, latent);
    CHECK(std::abs(r_clean) > 0.999);
    double r_obs = pearson(observed, latent);
    CHECK(r_obs * (r_clean < 0 ? -1.0 : 1.0) > 0.5);
}

TEST_CASE("a linear fit on the previous step nearly explains the label") {
    // With one latent dimension, phi close to 1, and no observation noise,
    // regressing the label on the directly preceding grid value must leave
    // only the innovation variance: a residual fraction near 1 - phi^2.
    synth::DomainSpec spec;
    spec.nf = 2;
    spec.n_patients = 1;
    spec.events_per_patient = 1200;
    spec.latent_dim = 1;
    spec.noise_std = 0.0;
    spec.ar_phi = 0.98;

    auto domain = synth::gen_domain(spec, 17);
    ts::Dataset ds = ts::build_dataset(domain[0], spec.nf, 1);
    REQUIRE(ds.windows.size() > 300);

    std::vector<double> x, y;
    for (const auto& win : ds.windows) {
        REQUIRE(win.mask_at(1, 0, 1));  // round robin: channel 1 precedes the label
        x.push_back(win.sparse(1, 0));
        y.push_back(win.label);
    }

    double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    double slope = sxy / sxx;
    double intercept = my - slope * mx;
    double sse = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        double r = y[i] - slope * x[i] - intercept;
        sse += r * r;
    }
    CHECK(sse / syy < 0.15);  // 1 - phi^2 is ~0.04; allow sampling slack
}

TEST_CASE("the heterogeneous pair shares labels but not feature scales") {
    synth::DomainSpec base;
    base.nf = 4;
    base.n_patients = 20;

    auto [target, source] = synth::make_heterogeneous_pair(base);
    CHECK(target.n_patients == 20);
    CHECK(source.n_patients == 200);
    CHECK(target.id_prefix == "t");
    CHECK(source.id_prefix == "s");
    CHECK(target.mixing_seed == source.mixing_seed);

    REQUIRE(target.channel_scale.size() == 5);
    REQUIRE(source.channel_scale.size() == 5);
    for (int c = 0; c < 4; ++c) {
        CHECK(source.channel_scale[static_cast<size_t>(c)] !=
              target.channel_scale[static_cast<size_t>(c)]);
        CHECK(source.channel_offset[static_cast<size_t>(c)] !=
              target.channel_offset[static_cast<size_t>(c)]);
    }
    CHECK(source.channel_scale[0] == doctest::Approx(1.25));
    // Label channel transform is identical, keeping labels comparable.
    CHECK(source.channel_scale[4] == target.channel_scale[4]);
    CHECK(source.channel_offset[4] == target.channel_offset[4]);

    // Degenerate generation makes the claim visible in actual values.
    synth::DomainSpec still = base;
    still.noise_std = 0.0;
    still.ar_innovation_std = 0.0;
    still.channel_offset = {1.0, 2.0, 3.0, 4.0, 5.0};
    auto [t2, s2] = synth::make_heterogeneous_pair(still);
    auto td = synth::gen_domain(t2, 1);
    auto sd = synth::gen_domain(s2, 2);
    CHECK(td[0].events[0].channel == 0);
    CHECK(sd[0].events[0].channel == 0);
    CHECK(td[0].events[0].value == 1.0);
    CHECK(sd[0].events[0].value == 1.3);  // offset 1.0 shifted by +0.3
    // Labels (channel 4) stay on the shared transform.
    CHECK(td[0].events[4].value == 5.0);
    CHECK(sd[0].events[4].value == 5.0);
}

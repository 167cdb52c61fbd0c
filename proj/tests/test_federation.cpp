#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <vector>

#include "fedsparse/federation.hpp"
#include "fedsparse/io.hpp"
#include "fedsparse/model.hpp"
#include "fedsparse/nn.hpp"
#include "oracles.hpp"

using namespace fedsparse;

namespace {

nn::Matrix mat(int r, int c, std::vector<double> vals) {
    nn::Matrix m(r, c);
    m.a = std::move(vals);
    return m;
}

nn::MlpWeights single_layer(int in, int out, nn::Activation act,
                            std::vector<double> w, std::vector<double> b) {
    nn::Layer l;
    l.W = mat(out, in, std::move(w));
    l.b = std::move(b);
    l.act = act;
    nn::MlpWeights net;
    net.layers.push_back(std::move(l));
    return net;
}

std::vector<uint8_t> model_bytes(const model::HflModel& m) {
    std::vector<uint8_t> all;
    for (const auto& h : m.heads) {
        auto b = io::encode_weights(h);
        all.insert(all.end(), b.begin(), b.end());
    }
    auto e = io::encode_weights(m.embedding);
    all.insert(all.end(), e.begin(), e.end());
    auto p = io::encode_weights(m.prediction);
    all.insert(all.end(), p.begin(), p.end());
    return all;
}

std::vector<fed::RecentSample> rand_recent(std::mt19937_64& rng, int w, int count) {
    std::vector<fed::RecentSample> recent(count);
    for (auto& s : recent) {
        s.dense_row.resize(w);
        for (double& v : s.dense_row) v = oracles::urand(rng, -2.0, 2.0);
        s.label = oracles::urand(rng, -2.0, 2.0);
    }
    return recent;
}

std::vector<fed::PoolEntry> rand_pool(std::mt19937_64& rng, int w, int entries) {
    static const char* users[] = {"alice", "bob", "carol", "dave", "erin"};
    std::vector<fed::PoolEntry> pool;
    for (int j = 0; j < entries; ++j) {
        fed::PoolEntry e;
        e.user_id = users[j % 5];
        e.feature_index = j / 5;  // keys stay unique
        e.version = static_cast<uint64_t>(oracles::irand(rng, 1, 9));
        e.weights = oracles::rand_net(rng, w,
                                      {{3, nn::Activation::lrelu},
                                       {1, nn::Activation::none}});
        pool.push_back(std::move(e));
    }
    return pool;
}

// A pool client backed by a map, acking everything.
class RecordingClient : public fed::PoolClient {
  public:
    fed::PublishResult publish(const fed::PoolEntry& entry) override {
        entries[{entry.user_id, entry.feature_index}] = entry;
        ++publishes;
        return {true, entry.version, ""};
    }
    std::vector<fed::PoolEntry> fetch(const std::string& exclude_user) override {
        std::vector<fed::PoolEntry> out;
        for (const auto& [key, e] : entries)
            if (e.user_id != exclude_user) out.push_back(e);
        return out;
    }
    std::map<std::pair<std::string, int>, fed::PoolEntry> entries;
    int publishes = 0;
};

// Rejects a configurable feature index, acks the rest.
class FlakyClient : public RecordingClient {
  public:
    explicit FlakyClient(int reject) : reject_feature(reject) {}
    fed::PublishResult publish(const fed::PoolEntry& entry) override {
        if (entry.feature_index == reject_feature)
            return {false, 0, "injected outage"};
        return RecordingClient::publish(entry);
    }
    int reject_feature;
};

}  // namespace

TEST_CASE("switch gate follows the worked traces") {
    // Monotone improvement never opens the gate.
    fed::SwitchState s;
    CHECK_FALSE(fed::update_switch(s, 1.0));
    CHECK_FALSE(fed::update_switch(s, 0.9));
    CHECK_FALSE(fed::update_switch(s, 0.8));
    CHECK(s.best_validation_loss == 0.8);
    CHECK(s.epochs_since_improvement == 0);

    // Plateauing opens it after `patience` flat epochs.
    fed::SwitchState p;
    CHECK_FALSE(fed::update_switch(p, 1.0));
    CHECK_FALSE(fed::update_switch(p, 1.1));
    CHECK_FALSE(fed::update_switch(p, 1.2));
    CHECK(fed::update_switch(p, 1.3));
    CHECK(p.epochs_since_improvement == 3);

    // A late improvement resets the counter before the gate opens.
    fed::SwitchState r;
    CHECK_FALSE(fed::update_switch(r, 1.0));
    CHECK_FALSE(fed::update_switch(r, 1.1));
    CHECK_FALSE(fed::update_switch(r, 1.2));
    CHECK_FALSE(fed::update_switch(r, 0.5));
    CHECK(r.epochs_since_improvement == 0);
    CHECK(r.best_validation_loss == 0.5);

    // Ties are not improvements.
    fed::SwitchState t;
    CHECK_FALSE(fed::update_switch(t, 1.0));
    CHECK_FALSE(fed::update_switch(t, 1.0));
    CHECK_FALSE(fed::update_switch(t, 1.0));
    CHECK(fed::update_switch(t, 1.0));

    fed::SwitchState bad;
    CHECK_THROWS_AS(fed::update_switch(bad, std::numeric_limits<double>::quiet_NaN()),
                    std::runtime_error);
    CHECK_THROWS_AS(fed::update_switch(bad, std::numeric_limits<double>::infinity()),
                    std::runtime_error);
}

TEST_CASE("switch gate matches the trace oracle on random sequences") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        int patience = oracles::irand(rng, 1, 4);
        int len = oracles::irand(rng, 1, 50);
        std::vector<double> losses;
        for (int i = 0; i < len; ++i) {
            // Repeats force exact ties; fresh draws force resets.
            if (!losses.empty() && oracles::irand(rng, 0, 3) == 0)
                losses.push_back(losses[oracles::irand(rng, 0, static_cast<int>(losses.size()) - 1)]);
            else
                losses.push_back(oracles::urand(rng, 0.0, 2.0));
        }

        std::vector<double> padded = losses;
        padded.push_back(0.0);  // extend so the oracle covers the final return
        std::vector<bool> want = oracles::oracle_gate_trace(padded, patience);

        fed::SwitchState st;
        st.patience = patience;
        for (int e = 0; e < len; ++e) {
            bool got = fed::update_switch(st, losses[e]);
            REQUIRE(got == want[static_cast<size_t>(e) + 1]);
        }
    }
}

TEST_CASE("selection picks the zero-error head") {
    std::mt19937_64 rng(5);
    std::vector<fed::RecentSample> recent = rand_recent(rng, 2, 10);
    for (auto& s : recent) s.label = s.dense_row[0];  // reproducible by W=[1,0]

    std::vector<fed::PoolEntry> pool(2);
    pool[0].user_id = "zeta";
    pool[0].feature_index = 0;
    pool[0].weights = single_layer(2, 1, nn::Activation::none, {0.0, 0.0}, {5.0});
    pool[1].user_id = "omega";
    pool[1].feature_index = 1;
    pool[1].weights = single_layer(2, 1, nn::Activation::none, {1.0, 0.0}, {0.0});

    fed::SelectionResult res = fed::select_head(pool, recent);
    CHECK(res.best_index == 1);
    CHECK(res.scores[1] == 0.0);
    CHECK(res.scores[0] > 0.0);
}

TEST_CASE("selection breaks exact ties lexicographically") {
    std::mt19937_64 rng(6);
    std::vector<fed::RecentSample> recent = rand_recent(rng, 2, 8);
    nn::MlpWeights shared = oracles::rand_net(rng, 2, {{1, nn::Activation::none}});

    std::vector<fed::PoolEntry> pool(3);
    pool[0] = {"carol", 2, 1, shared, 0};
    pool[1] = {"bob", 7, 1, shared, 0};
    pool[2] = {"bob", 3, 1, shared, 0};
    fed::SelectionResult res = fed::select_head(pool, recent);
    CHECK(res.best_index == 2);  // ("bob",3) < ("bob",7) < ("carol",2)
    CHECK(res.scores[0] == res.scores[1]);
    CHECK(res.scores[1] == res.scores[2]);
}

TEST_CASE("selection agrees with the brute-force scorer") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 120; ++trial) {
        int w = oracles::irand(rng, 1, 3);
        int entries = oracles::irand(rng, 1, 10);
        int R = oracles::irand(rng, 1, 50);
        bool squared = oracles::irand(rng, 0, 1) == 1;
        std::vector<fed::PoolEntry> pool = rand_pool(rng, w, entries);
        if (oracles::irand(rng, 0, 2) == 0 && entries >= 2) {
            pool[0].weights = pool[entries - 1].weights;  // manufacture a tie
        }
        std::vector<fed::RecentSample> recent = rand_recent(rng, w, R);

        fed::SelectionResult res = fed::select_head(
            pool, recent,
            squared ? fed::SelectionScore::squared : fed::SelectionScore::signed_sum);
        size_t want = oracles::oracle_select(pool, recent, squared);
        REQUIRE(res.best_index == want);
        for (size_t j = 0; j < pool.size(); ++j) {
            REQUIRE(res.scores[j] == oracles::oracle_entry_score(pool[j], recent, squared));
        }
    }
}

TEST_CASE("selection rejects empty inputs") {
    std::mt19937_64 rng(8);
    std::vector<fed::PoolEntry> pool = rand_pool(rng, 2, 3);
    std::vector<fed::RecentSample> recent = rand_recent(rng, 2, 5);
    CHECK_THROWS_WITH_AS(fed::select_head({}, recent), "empty pool",
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(fed::select_head(pool, {}), "empty recent window",
                         std::runtime_error);
}

TEST_CASE("blending is exact at the endpoints and affine between") {
    std::mt19937_64 rng(9);
    nn::MlpWeights target = oracles::rand_net(rng, 3, {{4, nn::Activation::sigmoid},
                                                       {1, nn::Activation::none}});
    nn::MlpWeights selected = oracles::rand_net(rng, 3, {{4, nn::Activation::sigmoid},
                                                         {1, nn::Activation::none}});

    CHECK(io::encode_weights(fed::blend_head(target, selected, 0.0)) ==
          io::encode_weights(target));
    CHECK(io::encode_weights(fed::blend_head(target, selected, 1.0)) ==
          io::encode_weights(selected));

    nn::MlpWeights mixed = fed::blend_head(target, selected, 0.2);
    for (size_t l = 0; l < mixed.layers.size(); ++l) {
        for (size_t i = 0; i < mixed.layers[l].W.a.size(); ++i) {
            double t = target.layers[l].W.a[i];
            double s = selected.layers[l].W.a[i];
            double got = mixed.layers[l].W.a[i];
            CHECK(std::abs(got - (0.2 * s + 0.8 * t)) <=
                  1e-15 * std::max(1.0, std::abs(got)));
            CHECK(got >= std::min(t, s));
            CHECK(got <= std::max(t, s));
        }
    }

    // Scalar probe: target 0, selected 1, alpha 0.2 -> exactly 0.2.
    nn::MlpWeights zt = single_layer(1, 1, nn::Activation::none, {0.0}, {0.0});
    nn::MlpWeights os = single_layer(1, 1, nn::Activation::none, {1.0}, {1.0});
    nn::MlpWeights b = fed::blend_head(zt, os, 0.2);
    CHECK(b.layers[0].W.a[0] == 0.2);
    CHECK(b.layers[0].b[0] == 0.2);

    // Blending a head with itself moves nothing beyond rounding.
    nn::MlpWeights self = fed::blend_head(target, target, 0.37);
    for (size_t l = 0; l < self.layers.size(); ++l)
        for (size_t i = 0; i < self.layers[l].W.a.size(); ++i)
            CHECK(self.layers[l].W.a[i] ==
                  doctest::Approx(target.layers[l].W.a[i]).epsilon(1e-15));

    nn::MlpWeights small = single_layer(2, 1, nn::Activation::none, {1, 2}, {0});
    CHECK_THROWS_WITH_AS(fed::blend_head(target, small, 0.5), "incompatible head",
                         std::runtime_error);
    CHECK_THROWS_AS(fed::blend_head(target, selected, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(fed::blend_head(target, selected, 1.5), std::invalid_argument);
}

TEST_CASE("a federated round only rewrites the heads") {
    model::HflModel m = model::HflModel::init(2, 2, 0.01, 33);
    std::mt19937_64 rng(34);
    for (auto& h : m.heads)
        h = oracles::rand_net(rng, 2, {{16, nn::Activation::sigmoid},
                                       {1, nn::Activation::none}});
    std::vector<fed::PoolEntry> pool;
    for (int j = 0; j < 3; ++j) {
        fed::PoolEntry e;
        e.user_id = "src" + std::to_string(j);
        e.feature_index = 0;
        e.version = 4;
        e.weights = oracles::rand_net(rng, 2, {{16, nn::Activation::sigmoid},
                                               {1, nn::Activation::none}});
        pool.push_back(std::move(e));
    }
    std::vector<std::vector<fed::RecentSample>> recent{rand_recent(rng, 2, 12),
                                                       rand_recent(rng, 2, 12)};

    std::vector<uint8_t> embed_before = io::encode_weights(m.embedding);
    std::vector<uint8_t> pred_before = io::encode_weights(m.prediction);
    std::vector<uint8_t> heads_before = io::encode_weights(m.heads[0]);

    fed::FlRoundAudit audit = fed::fl_round(m, pool, recent, 0.2);
    CHECK_FALSE(audit.skipped);
    CHECK(audit.alpha == 0.2);
    REQUIRE(audit.selections.size() == 2);  // one per head, pool of 3
    CHECK(io::encode_weights(m.embedding) == embed_before);
    CHECK(io::encode_weights(m.prediction) == pred_before);
    CHECK(io::encode_weights(m.heads[0]) != heads_before);
}

TEST_CASE("a federated round audit matches per-head brute force") {
    std::mt19937_64 rng(40);
    for (int trial = 0; trial < 30; ++trial) {
        int nf = oracles::irand(rng, 2, 4);
        int w = oracles::irand(rng, 1, 3);
        model::HflModel m = model::HflModel::init(nf, w, 0.01, rng());
        for (auto& h : m.heads)
            h = oracles::rand_net(rng, w, {{3, nn::Activation::lrelu},
                                           {1, nn::Activation::none}});
        std::vector<fed::PoolEntry> pool = rand_pool(rng, w, oracles::irand(rng, 1, 10));
        std::vector<std::vector<fed::RecentSample>> recent;
        for (int i = 0; i < nf; ++i)
            recent.push_back(rand_recent(rng, w, oracles::irand(rng, 1, 50)));

        std::vector<nn::MlpWeights> heads_before = m.heads;
        fed::FlRoundAudit audit = fed::fl_round(m, pool, recent, 0.2);

        REQUIRE(audit.selections.size() == static_cast<size_t>(nf));
        for (int i = 0; i < nf; ++i) {
            size_t want = oracles::oracle_select(pool, recent[static_cast<size_t>(i)], true);
            const fed::HeadSelection& hs = audit.selections[static_cast<size_t>(i)];
            CHECK(hs.head == i);
            CHECK(hs.selected_user == pool[want].user_id);
            CHECK(hs.selected_feature == pool[want].feature_index);
            CHECK(hs.version == pool[want].version);
            CHECK(io::encode_weights(m.heads[static_cast<size_t>(i)]) ==
                  io::encode_weights(fed::blend_head(heads_before[static_cast<size_t>(i)],
                                                     pool[want].weights, 0.2)));
        }
    }
}

TEST_CASE("round results are a pure function of the pool snapshot") {
    // A stale snapshot and a live pool holding the same entries in another
    // order must produce identical selections and identical weights.
    std::mt19937_64 rng(50);
    model::HflModel a = model::HflModel::init(3, 2, 0.01, 51);
    for (auto& h : a.heads)
        h = oracles::rand_net(rng, 2, {{3, nn::Activation::lrelu},
                                       {1, nn::Activation::none}});
    model::HflModel b = a;
    std::vector<fed::PoolEntry> pool = rand_pool(rng, 2, 7);
    std::vector<std::vector<fed::RecentSample>> recent;
    for (int i = 0; i < 3; ++i) recent.push_back(rand_recent(rng, 2, 20));

    std::vector<fed::PoolEntry> shuffled = pool;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);

    fed::FlRoundAudit aa = fed::fl_round(a, pool, recent, 0.2);
    fed::FlRoundAudit ab = fed::fl_round(b, shuffled, recent, 0.2);
    REQUIRE(aa.selections.size() == ab.selections.size());
    for (size_t i = 0; i < aa.selections.size(); ++i) {
        CHECK(aa.selections[i].selected_user == ab.selections[i].selected_user);
        CHECK(aa.selections[i].selected_feature == ab.selections[i].selected_feature);
    }
    CHECK(model_bytes(a) == model_bytes(b));
}

TEST_CASE("federated round edge cases") {
    model::HflModel m = model::HflModel::init(2, 2, 0.01, 60);
    std::mt19937_64 rng(61);
    for (auto& h : m.heads)
        h = oracles::rand_net(rng, 2, {{3, nn::Activation::lrelu},
                                       {1, nn::Activation::none}});
    std::vector<std::vector<fed::RecentSample>> recent{rand_recent(rng, 2, 5),
                                                       rand_recent(rng, 2, 5)};

    // Empty pool: skipped, nothing changes.
    std::vector<uint8_t> before = model_bytes(m);
    fed::FlRoundAudit audit = fed::fl_round(m, {}, recent, 0.2);
    CHECK(audit.skipped);
    CHECK(audit.skip_reason == "empty pool");
    CHECK(audit.selections.empty());
    CHECK(model_bytes(m) == before);

    // Alpha 0: selection happens but weights stay put.
    std::vector<fed::PoolEntry> pool = rand_pool(rng, 2, 4);
    audit = fed::fl_round(m, pool, recent, 0.0);
    CHECK_FALSE(audit.skipped);
    CHECK(model_bytes(m) == before);

    // Wrong ring count / empty ring.
    std::vector<std::vector<fed::RecentSample>> one{rand_recent(rng, 2, 5)};
    CHECK_THROWS_AS(fed::fl_round(m, pool, one, 0.2), std::invalid_argument);
    std::vector<std::vector<fed::RecentSample>> holed{rand_recent(rng, 2, 5), {}};
    CHECK_THROWS_AS(fed::fl_round(m, pool, holed, 0.2), std::runtime_error);
}

TEST_CASE("a pool of the model's own heads is a fixed point") {
    model::HflModel m = model::HflModel::init(2, 2, 0.01, 70);
    std::mt19937_64 rng(71);

    // Each head's recent window is labeled by its own predictions, so its own
    // published copy scores exactly zero and wins.
    std::vector<fed::PoolEntry> pool;
    std::vector<std::vector<fed::RecentSample>> recent;
    for (int i = 0; i < 2; ++i) {
        fed::PoolEntry e;
        e.user_id = "self";
        e.feature_index = i;
        e.version = 1;
        e.weights = m.heads[static_cast<size_t>(i)];
        pool.push_back(e);

        std::vector<fed::RecentSample> ring = rand_recent(rng, 2, 10);
        for (auto& s : ring)
            s.label = nn::forward(m.heads[static_cast<size_t>(i)], s.dense_row)[0];
        recent.push_back(std::move(ring));
    }

    std::vector<uint8_t> before = model_bytes(m);
    fed::FlRoundAudit audit = fed::fl_round(m, pool, recent, 1.0);
    for (int i = 0; i < 2; ++i) {
        CHECK(audit.selections[static_cast<size_t>(i)].selected_feature == i);
        CHECK(audit.selections[static_cast<size_t>(i)].score == 0.0);
    }
    CHECK(model_bytes(m) == before);  // alpha=1 copies the identical weights back
}

TEST_CASE("publishing advances versions only on acknowledgment") {
    model::HflModel m = model::HflModel::init(3, 2, 0.01, 80);
    RecordingClient client;
    fed::Publisher pub;
    pub.user_id = "u7";

    std::vector<uint8_t> before = model_bytes(m);
    fed::PublishOutcome first = fed::publish_heads(m, pub, client);
    CHECK(first.failures == 0);
    CHECK(first.acknowledged == std::vector<uint64_t>{1, 1, 1});
    CHECK(pub.versions == std::vector<uint64_t>{1, 1, 1});
    CHECK(model_bytes(m) == before);  // publishing never rewrites the model
    CHECK(client.publishes == 3);

    fed::PublishOutcome second = fed::publish_heads(m, pub, client);
    CHECK(second.acknowledged == std::vector<uint64_t>{2, 2, 2});
    CHECK(pub.versions == std::vector<uint64_t>{2, 2, 2});

    // Stored entries carry the publisher's identity and the head bytes.
    const fed::PoolEntry& e1 = client.entries.at({"u7", 1});
    CHECK(e1.version == 2);
    CHECK(io::encode_weights(e1.weights) == io::encode_weights(m.heads[1]));

    // A fetch excluding the publisher hides all of its keys.
    CHECK(client.fetch("u7").empty());
    CHECK(client.fetch("someone-else").size() == 3);
}

TEST_CASE("publish failures are reported and retried at the same version") {
    model::HflModel m = model::HflModel::init(2, 2, 0.01, 90);
    FlakyClient client(1);
    fed::Publisher pub;
    pub.user_id = "u9";

    fed::PublishOutcome out = fed::publish_heads(m, pub, client);
    CHECK(out.failures == 1);
    CHECK(out.first_error == "injected outage");
    CHECK(out.acknowledged == std::vector<uint64_t>{1, 0});
    CHECK(pub.versions == std::vector<uint64_t>{1, 0});

    // Once the outage clears, the skipped head publishes version 1 while the
    // healthy head moves on to 2.
    client.reject_feature = -1;
    out = fed::publish_heads(m, pub, client);
    CHECK(out.failures == 0);
    CHECK(out.acknowledged == std::vector<uint64_t>{2, 1});
    CHECK(pub.versions == std::vector<uint64_t>{2, 1});

    fed::Publisher short_pub;
    short_pub.user_id = "u9";
    short_pub.versions = {1};
    CHECK_THROWS_AS(fed::publish_heads(m, short_pub, client), std::invalid_argument);
}

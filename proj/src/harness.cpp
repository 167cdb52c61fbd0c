#include "fedsparse/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fedsparse/io.hpp"
#include "fedsparse/model.hpp"
#include "fedsparse/pool.hpp"
#include "fedsparse/util.hpp"

namespace fedsparse::harness {

namespace fs = std::filesystem;

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::no: return "no";
        case Mode::random_sel: return "random";
        case Mode::always: return "always";
        case Mode::hfl: return "hfl";
    }
    throw std::logic_error("bad mode");
}

Mode mode_from_string(const std::string& s) {
    if (s == "no") return Mode::no;
    if (s == "random") return Mode::random_sel;
    if (s == "always") return Mode::always;
    if (s == "hfl") return Mode::hfl;
    throw std::invalid_argument("unknown mode: " + s);
}

void validate_config(const RunConfig& c) {
    if (c.w < 1) throw std::invalid_argument("w must be >= 1");
    if (c.R < 1) throw std::invalid_argument("R must be >= 1");
    if (c.alpha < 0.0 || c.alpha > 1.0) throw std::invalid_argument("alpha must be in [0,1]");
    if (c.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (c.repeats < 1) throw std::invalid_argument("repeats must be >= 1");
    if (c.label_index < 0) throw std::invalid_argument("label_index must be >= 0");
    if (c.patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (c.source_users < 1) throw std::invalid_argument("source_users must be >= 1");
    if (!(c.lr >= 0.0)) throw std::invalid_argument("lr must be >= 0");
}

nlohmann::json config_to_json(const RunConfig& c) {
    return nlohmann::json{
        {"w", c.w},
        {"R", c.R},
        {"alpha", c.alpha},
        {"lr", c.lr},
        {"epochs", c.epochs},
        {"repeats", c.repeats},
        {"seed", c.seed},
        {"label_index", c.label_index},
        {"mode", mode_name(c.mode)},
        {"pool", c.pool},
        {"joint_grads", c.joint_grads},
        {"selection_score",
         c.selection_score == fed::SelectionScore::squared ? "squared" : "signed"},
        {"normalize", c.normalize},
        {"patience", c.patience},
        {"sources_learn", c.sources_learn},
        {"include_self", c.include_self},
        {"pretrain_sources", c.pretrain_sources},
        {"source_users", c.source_users},
    };
}

void apply_json(RunConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("config must be an object");
    for (const auto& [key, value] : j.items()) {
        if (key == "w") c.w = value.get<int>();
        else if (key == "R") c.R = value.get<int>();
        else if (key == "alpha") c.alpha = value.get<double>();
        else if (key == "lr") c.lr = value.get<double>();
        else if (key == "epochs") c.epochs = value.get<int>();
        else if (key == "repeats") c.repeats = value.get<int>();
        else if (key == "seed") c.seed = value.get<uint64_t>();
        else if (key == "label_index") c.label_index = value.get<int>();
        else if (key == "mode") c.mode = mode_from_string(value.get<std::string>());
        else if (key == "pool") c.pool = value.get<std::string>();
        else if (key == "joint_grads") c.joint_grads = value.get<bool>();
        else if (key == "selection_score") {
            const std::string s = value.get<std::string>();
            if (s == "squared") c.selection_score = fed::SelectionScore::squared;
            else if (s == "signed") c.selection_score = fed::SelectionScore::signed_sum;
            else throw std::invalid_argument("unknown selection_score: " + s);
        } else if (key == "normalize") c.normalize = value.get<bool>();
        else if (key == "patience") c.patience = value.get<int>();
        else if (key == "sources_learn") c.sources_learn = value.get<bool>();
        else if (key == "include_self") c.include_self = value.get<bool>();
        else if (key == "pretrain_sources") c.pretrain_sources = value.get<bool>();
        else if (key == "source_users") c.source_users = value.get<int>();
        else throw std::invalid_argument("unknown config key: " + key);
    }
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    nlohmann::json j;
    in >> j;
    RunConfig c;
    apply_json(c, j);
    validate_config(c);
    return c;
}

std::vector<ts::SparseSeries> relabel_series(const std::vector<ts::SparseSeries>& raw,
                                             int n_channels, int label_index) {
    if (label_index < 0 || label_index >= n_channels) {
        throw std::invalid_argument("label_index out of range");
    }
    std::vector<ts::SparseSeries> out = raw;
    for (auto& series : out) {
        for (auto& ev : series.events) {
            if (ev.channel >= n_channels) throw std::invalid_argument("channel out of range");
            if (ev.channel == label_index) ev.channel = n_channels - 1;
            else if (ev.channel > label_index) ev.channel -= 1;
        }
    }
    return out;
}

// ---- internal training machinery -------------------------------------------

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct SplitData {
    std::vector<ts::SampleWindow> wins;
    std::vector<std::string> patient;  // parallel to wins
};

struct UserState {
    std::string user_id;
    int index = 0;  // 0 = target
    SplitData train, valid, test;
    model::HflModel net;
    model::HflModel best;
    double best_valid = kInf;
    int best_epoch = -1;
    fed::SwitchState gate;
    bool fl_active = false;
    fed::Publisher publisher;
    std::vector<std::deque<fed::RecentSample>> recent;
    std::vector<double> valid_trace;
    std::vector<int> fl_epochs;
    int fl_rounds = 0;
    int skipped_rounds = 0;
    int publish_failures = 0;
    int fetch_failures = 0;
    std::mt19937_64 rng_random;  // head draws in random mode only
};

struct OrderHasher {
    uint64_t h = 0xcbf29ce484222325ULL;

    void add(const std::string& patient, int t_index, double label) {
        h = fnv1a64_str(patient, h);
        uint8_t raw[4];
        uint32_t t = static_cast<uint32_t>(t_index);
        std::memcpy(raw, &t, 4);
        h = fnv1a64({raw, 4}, h);
        h = fnv1a64_double(label, h);
    }
};

int infer_channels(const std::vector<ts::SparseSeries>& a,
                   const std::vector<ts::SparseSeries>& b) {
    int max_c = -1;
    for (const auto* list : {&a, &b}) {
        for (const auto& s : *list) {
            for (const auto& ev : s.events) max_c = std::max(max_c, ev.channel);
        }
    }
    if (max_c < 1) throw std::invalid_argument("need at least 2 channels");
    return max_c + 1;
}

void standardize(SplitData& train, SplitData& valid, SplitData& test, int nf, int w) {
    std::vector<double> mean(static_cast<size_t>(nf), 0.0), var(static_cast<size_t>(nf), 0.0);
    double label_mean = 0.0, label_var = 0.0;
    size_t n = train.wins.size();
    if (n == 0) return;
    for (const auto& win : train.wins) {
        for (int f = 0; f < nf; ++f) {
            for (int k = 0; k < w; ++k) mean[static_cast<size_t>(f)] += win.dense(f, k);
        }
        label_mean += win.label;
    }
    double denom = static_cast<double>(n) * w;
    for (auto& m : mean) m /= denom;
    label_mean /= static_cast<double>(n);
    for (const auto& win : train.wins) {
        for (int f = 0; f < nf; ++f) {
            for (int k = 0; k < w; ++k) {
                double d = win.dense(f, k) - mean[static_cast<size_t>(f)];
                var[static_cast<size_t>(f)] += d * d;
            }
        }
        double d = win.label - label_mean;
        label_var += d * d;
    }
    std::vector<double> sd(static_cast<size_t>(nf));
    for (int f = 0; f < nf; ++f) {
        double s = std::sqrt(var[static_cast<size_t>(f)] / denom);
        sd[static_cast<size_t>(f)] = s < 1e-9 ? 1.0 : s;
    }
    double label_sd = std::sqrt(label_var / static_cast<double>(n));
    if (label_sd < 1e-9) label_sd = 1.0;

    auto apply = [&](SplitData& split) {
        for (auto& win : split.wins) {
            for (int f = 0; f < nf; ++f) {
                for (int k = 0; k < w; ++k) {
                    win.dense(f, k) = (win.dense(f, k) - mean[static_cast<size_t>(f)]) /
                                      sd[static_cast<size_t>(f)];
                    if (win.mask_at(f, k, w)) {
                        win.sparse(f, k) = (win.sparse(f, k) - mean[static_cast<size_t>(f)]) /
                                           sd[static_cast<size_t>(f)];
                    }
                }
            }
            win.label = (win.label - label_mean) / label_sd;
        }
    };
    apply(train);
    apply(valid);
    apply(test);
}

UserState build_user(const std::string& user_id, int index,
                     const std::vector<ts::SparseSeries>& series_list, const RunConfig& cfg,
                     int nf, uint64_t repeat_seed) {
    UserState u;
    u.user_id = user_id;
    u.index = index;

    std::vector<ts::Dataset> per_patient;
    per_patient.reserve(series_list.size());
    for (const auto& s : series_list) {
        per_patient.push_back(ts::build_dataset(s, nf, cfg.w));
    }
    ts::Split split = ts::split_patients(per_patient.size(), ts::SplitRatios{},
                                         mix_seed(repeat_seed, 0x5110u + static_cast<uint64_t>(index)));

    auto fill = [&](const std::vector<size_t>& ids, SplitData& out) {
        for (size_t pid : ids) {
            for (const auto& win : per_patient[pid].windows) {
                out.wins.push_back(win);
                out.patient.push_back(series_list[pid].patient_id);
            }
        }
    };
    fill(split.train, u.train);
    fill(split.valid, u.valid);
    fill(split.test, u.test);
    for (const auto* part : {&u.train, &u.valid, &u.test}) {
        if (part->wins.empty()) {
            throw std::invalid_argument("split produced no windows for user " + user_id);
        }
    }
    if (cfg.normalize) standardize(u.train, u.valid, u.test, nf, cfg.w);

    u.net = model::HflModel::init(nf, cfg.w, cfg.lr,
                                  mix_seed(repeat_seed, 0xA100u + static_cast<uint64_t>(index)),
                                  cfg.joint_grads);
    u.best = u.net;
    u.gate.patience = cfg.patience;
    u.publisher.user_id = user_id;
    u.recent.resize(static_cast<size_t>(nf));
    u.rng_random.seed(mix_seed(repeat_seed, 0xC200u + static_cast<uint64_t>(index)));
    return u;
}

uint64_t weights_checksum(const std::vector<UserState>& users) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& u : users) {
        for (const auto& head : u.net.heads) {
            auto blob = io::encode_weights(head);
            h = fnv1a64(blob, h);
        }
        h = fnv1a64(io::encode_weights(u.net.embedding), h);
        h = fnv1a64(io::encode_weights(u.net.prediction), h);
    }
    return h;
}

void train_one_epoch(UserState& u, const RunConfig& cfg, fed::PoolClient* client, int epoch,
                     uint64_t repeat_seed, OrderHasher& order) {
    const int nf = u.net.nf;
    std::vector<size_t> idx(u.train.wins.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::mt19937_64 rng(mix_seed(repeat_seed, 0xB0000000ull +
                                                  static_cast<uint64_t>(u.index) * 100003ull +
                                                  static_cast<uint64_t>(epoch)));
    std::shuffle(idx.begin(), idx.end(), rng);

    std::vector<ts::SampleWindow> batch;
    batch.reserve(static_cast<size_t>(cfg.R));
    const bool may_blend = u.index == 0 || cfg.sources_learn;

    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(cfg.R)) {
        size_t stop = std::min(idx.size(), start + static_cast<size_t>(cfg.R));
        batch.clear();
        for (size_t i = start; i < stop; ++i) {
            const auto& win = u.train.wins[idx[i]];
            batch.push_back(win);
            order.add(u.train.patient[idx[i]], win.t_index, win.label);
        }
        model::train_batch(u.net, batch);  // throws "diverged" on non-finite loss

        for (const auto& win : batch) {
            for (int f = 0; f < nf; ++f) {
                auto& ring = u.recent[static_cast<size_t>(f)];
                ring.push_back(fed::RecentSample{model::dense_row(win, f), win.label});
                while (ring.size() > static_cast<size_t>(cfg.R)) ring.pop_front();
            }
        }

        if (cfg.mode == Mode::no || client == nullptr) continue;
        fed::PublishOutcome pub = fed::publish_heads(u.net, u.publisher, *client);
        u.publish_failures += pub.failures;

        bool blend_now = may_blend && (cfg.mode == Mode::always || cfg.mode == Mode::random_sel ||
                                       (cfg.mode == Mode::hfl && u.fl_active));
        if (!blend_now) continue;

        std::vector<fed::PoolEntry> pool;
        try {
            pool = client->fetch(cfg.include_self ? "" : u.user_id);
        } catch (const std::exception&) {
            u.fetch_failures += 1;
            continue;
        }
        if (pool.empty()) {
            u.skipped_rounds += 1;
            continue;
        }

        if (cfg.mode == Mode::random_sel) {
            std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
            for (int f = 0; f < nf; ++f) {
                const auto& chosen = pool[pick(u.rng_random)];
                u.net.heads[static_cast<size_t>(f)] =
                    fed::blend_head(u.net.heads[static_cast<size_t>(f)], chosen.weights, cfg.alpha);
            }
            u.fl_rounds += 1;
        } else {
            std::vector<std::vector<fed::RecentSample>> recents(static_cast<size_t>(nf));
            for (int f = 0; f < nf; ++f) {
                recents[static_cast<size_t>(f)].assign(u.recent[static_cast<size_t>(f)].begin(),
                                                       u.recent[static_cast<size_t>(f)].end());
            }
            fed::FlRoundAudit round =
                fed::fl_round(u.net, pool, recents, cfg.alpha, cfg.selection_score);
            if (round.skipped) {
                u.skipped_rounds += 1;
                continue;
            }
            u.fl_rounds += 1;
        }
        if (u.fl_epochs.empty() || u.fl_epochs.back() != epoch) u.fl_epochs.push_back(epoch);
    }
}

void finish_epoch(UserState& u, const RunConfig& cfg, int epoch) {
    double v = model::evaluate(u.net, u.valid.wins).final_mse;
    u.valid_trace.push_back(v);
    if (v < u.best_valid) {
        u.best_valid = v;
        u.best = u.net;
        u.best_epoch = epoch;
    }
    if (cfg.mode == Mode::hfl) u.fl_active = fed::update_switch(u.gate, v);
}

// Sources run before the target inside each epoch so the target always sees
// current source heads.
void run_training(std::vector<UserState>& users, const RunConfig& cfg, fed::PoolClient* client,
                  uint64_t repeat_seed, OrderHasher& order) {
    auto user_epoch = [&](UserState& u, int epoch) {
        train_one_epoch(u, cfg, client, epoch, repeat_seed, order);
        finish_epoch(u, cfg, epoch);
    };
    if (cfg.pretrain_sources) {
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            for (auto& u : users) {
                if (u.index != 0) user_epoch(u, epoch);
            }
        }
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) user_epoch(users[0], epoch);
        return;
    }
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (auto& u : users) {
            if (u.index != 0) user_epoch(u, epoch);
        }
        user_epoch(users[0], epoch);
    }
}

nlohmann::json repeat_audit(const std::string& system, int task, int repeat,
                            const std::vector<UserState>& users, const MetricsRow& row) {
    const UserState& t = users[0];
    nlohmann::json user_ids = nlohmann::json::array();
    for (const auto& u : users) user_ids.push_back(u.user_id);
    return nlohmann::json{
        {"type", "repeat"},
        {"system", system},
        {"task", task},
        {"repeat", repeat},
        {"seed", row.seed},
        {"users", std::move(user_ids)},
        {"validation_trace", t.valid_trace},
        {"fl_epochs", t.fl_epochs},
        {"fl_rounds", t.fl_rounds},
        {"skipped_rounds", t.skipped_rounds},
        {"publish_failures", t.publish_failures},
        {"fetch_failures", t.fetch_failures},
        {"best_epoch", t.best_epoch},
        {"best_valid_mse", t.best_valid},
        {"test_mse", row.test_mse},
        {"init_checksum", row.init_checksum},
        {"order_checksum", row.order_checksum},
        {"failed", row.failed},
        {"wall_ms", row.wall_ms},
    };
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
}

void aggregate_rows(MetricsReport& report) {
    report.aggregates.clear();
    std::map<std::pair<std::string, int>, AggregateRow> agg;
    for (const auto& row : report.rows) {
        auto& a = agg[{row.system, row.task}];
        a.system = row.system;
        a.task = row.task;
        if (row.failed) {
            a.repeats_failed += 1;
        } else {
            a.repeats_ok += 1;
            a.mean_valid_mse += row.valid_mse;
            a.mean_test_mse += row.test_mse;
        }
    }
    for (auto& [key, a] : agg) {
        if (a.repeats_ok > 0) {
            a.mean_valid_mse /= a.repeats_ok;
            a.mean_test_mse /= a.repeats_ok;
        } else {
            a.mean_valid_mse = kNan;
            a.mean_test_mse = kNan;
        }
        report.aggregates.push_back(a);
    }
}

}  // namespace

void compute_ranks(MetricsReport& report) {
    aggregate_rows(report);
    std::map<int, std::vector<AggregateRow*>> by_task;
    for (auto& a : report.aggregates) by_task[a.task].push_back(&a);
    for (auto& [task, group] : by_task) {
        std::sort(group.begin(), group.end(), [](const AggregateRow* x, const AggregateRow* y) {
            double mx = std::isnan(x->mean_test_mse) ? kInf : x->mean_test_mse;
            double my = std::isnan(y->mean_test_mse) ? kInf : y->mean_test_mse;
            return std::tie(mx, x->system) < std::tie(my, y->system);
        });
        for (size_t i = 0; i < group.size(); ++i) group[i]->rank = static_cast<int>(i) + 1;
    }
    std::sort(report.aggregates.begin(), report.aggregates.end(),
              [](const AggregateRow& x, const AggregateRow& y) {
                  return std::tie(x.task, x.rank) < std::tie(y.task, y.rank);
              });
}

MetricsReport run_experiment(const RunConfig& config,
                             const std::vector<ts::SparseSeries>& target,
                             const std::vector<ts::SparseSeries>& source) {
    validate_config(config);
    if (target.empty()) throw std::invalid_argument("empty target data");
    auto t_start = std::chrono::steady_clock::now();

    const int n_channels = infer_channels(target, source);
    if (config.label_index >= n_channels) {
        throw std::invalid_argument("label_index out of range for data");
    }
    const int nf = n_channels - 1;
    const std::string system = mode_name(config.mode);

    auto target_ready = relabel_series(target, n_channels, config.label_index);
    auto source_ready = relabel_series(source, n_channels, config.label_index);

    // shard the source domain round-robin across source users
    int shards = source.empty() ? 0 : config.source_users;
    std::vector<std::vector<ts::SparseSeries>> shard_series(static_cast<size_t>(shards));
    for (size_t i = 0; i < source_ready.size(); ++i) {
        shard_series[i % static_cast<size_t>(shards)].push_back(source_ready[i]);
    }
    for (const auto& shard : shard_series) {
        if (shard.size() < 3) {
            throw std::invalid_argument("source shard too small; reduce source_users");
        }
    }

    MetricsReport report;
    {
        model::HflModel probe = model::HflModel::init(nf, config.w, config.lr, 1);
        report.param_count_model = model::param_count(probe);
        auto dnn = nn::init_weights(nf * config.w, model::dnn_baseline_layout(), 1);
        report.param_count_dnn = nn::param_count(dnn);
    }

    for (int repeat = 0; repeat < config.repeats; ++repeat) {
        auto r_start = std::chrono::steady_clock::now();
        const uint64_t rs = mix_seed(config.seed, 1000u + static_cast<uint64_t>(repeat));

        std::shared_ptr<pool::PoolStore> local_store;
        std::unique_ptr<fed::PoolClient> client;
        if (config.mode != Mode::no) {
            if (config.pool.empty()) {
                local_store = std::make_shared<pool::PoolStore>();
                client = std::make_unique<pool::InMemoryPool>(local_store);
            } else {
                client = pool::open_pool(config.pool);
            }
        }

        std::vector<UserState> users;
        users.push_back(build_user("target", 0, target_ready, config, nf, rs));
        for (int s = 0; s < shards; ++s) {
            users.push_back(build_user("source" + std::to_string(s), s + 1,
                                       shard_series[static_cast<size_t>(s)], config, nf, rs));
        }

        MetricsRow row;
        row.system = system;
        row.task = config.label_index;
        row.repeat = repeat;
        row.seed = rs;
        row.init_checksum = weights_checksum(users);

        OrderHasher order;
        try {
            run_training(users, config, client.get(), rs, order);
            row.valid_mse = users[0].best_valid;
            row.test_mse = model::evaluate(users[0].best, users[0].test.wins).final_mse;
        } catch (const std::runtime_error&) {
            row.failed = true;
            row.valid_mse = kNan;
            row.test_mse = kNan;
        }
        row.order_checksum = order.h;
        row.fl_rounds = users[0].fl_rounds;
        row.publish_failures = users[0].publish_failures;
        row.wall_ms = elapsed_ms(r_start);
        report.audit.push_back(repeat_audit(system, config.label_index, repeat, users, row));
        report.rows.push_back(std::move(row));
    }

    compute_ranks(report);
    report.wall_ms = elapsed_ms(t_start);
    report.audit.push_back(nlohmann::json{{"type", "meta"},
                                          {"config", config_to_json(config)},
                                          {"param_count_model", report.param_count_model},
                                          {"param_count_dnn", report.param_count_dnn},
                                          {"wall_ms", report.wall_ms}});
    return report;
}

MetricsReport run_ablation_grid(const RunConfig& config,
                                const std::vector<ts::SparseSeries>& target,
                                const std::vector<ts::SparseSeries>& source) {
    MetricsReport merged;
    for (Mode mode : {Mode::no, Mode::random_sel, Mode::always, Mode::hfl}) {
        RunConfig c = config;
        c.mode = mode;
        c.pool.clear();  // isolated per-repeat pools keep the four runs fair
        merge_reports(merged, run_experiment(c, target, source));
    }
    compute_ranks(merged);
    return merged;
}

MetricsReport dnn_baseline(const RunConfig& config,
                           const std::vector<ts::SparseSeries>& target) {
    validate_config(config);
    if (target.empty()) throw std::invalid_argument("empty target data");
    auto t_start = std::chrono::steady_clock::now();

    const int n_channels = infer_channels(target, {});
    if (config.label_index >= n_channels) {
        throw std::invalid_argument("label_index out of range for data");
    }
    const int nf = n_channels - 1;
    auto target_ready = relabel_series(target, n_channels, config.label_index);

    MetricsReport report;
    {
        model::HflModel probe = model::HflModel::init(nf, config.w, config.lr, 1);
        report.param_count_model = model::param_count(probe);
        auto net = nn::init_weights(nf * config.w, model::dnn_baseline_layout(), 1);
        report.param_count_dnn = nn::param_count(net);
    }

    for (int repeat = 0; repeat < config.repeats; ++repeat) {
        auto r_start = std::chrono::steady_clock::now();
        const uint64_t rs = mix_seed(config.seed, 1000u + static_cast<uint64_t>(repeat));
        // same splits and data order as the federated target user
        UserState u = build_user("target", 0, target_ready, config, nf, rs);

        nn::MlpWeights net = nn::init_weights(nf * config.w, model::dnn_baseline_layout(),
                                              mix_seed(rs, 0xD22Du));
        nn::AdamState opt = nn::AdamState::for_net(net, config.lr);
        nn::MlpWeights best = net;
        double best_valid = kInf;
        int best_epoch = -1;
        std::vector<double> valid_trace;

        MetricsRow row;
        row.system = "dnn";
        row.task = config.label_index;
        row.repeat = repeat;
        row.seed = rs;
        {
            uint64_t h = 0xcbf29ce484222325ULL;
            h = fnv1a64(io::encode_weights(net), h);
            row.init_checksum = h;
        }

        auto eval_net = [&](const nn::MlpWeights& m, const SplitData& split) {
            double acc = 0.0;
            for (const auto& win : split.wins) {
                std::vector<double> x = model::flatten_dense(win);
                double pred = nn::forward(m, x)[0];
                double d = pred - win.label;
                acc += d * d;
            }
            return acc / static_cast<double>(split.wins.size());
        };

        OrderHasher order;
        try {
            for (int epoch = 0; epoch < config.epochs; ++epoch) {
                std::vector<size_t> idx(u.train.wins.size());
                std::iota(idx.begin(), idx.end(), size_t{0});
                std::mt19937_64 rng(mix_seed(rs, 0xB0000000ull + static_cast<uint64_t>(epoch)));
                std::shuffle(idx.begin(), idx.end(), rng);
                for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(config.R)) {
                    size_t stop = std::min(idx.size(), start + static_cast<size_t>(config.R));
                    nn::Gradients grads = nn::Gradients::zeros_like(net);
                    double inv_b = 1.0 / static_cast<double>(stop - start);
                    double loss = 0.0;
                    for (size_t i = start; i < stop; ++i) {
                        const auto& win = u.train.wins[idx[i]];
                        order.add(u.train.patient[idx[i]], win.t_index, win.label);
                        std::vector<double> x = model::flatten_dense(win);
                        nn::ForwardTape tape;
                        double pred = nn::forward(net, x, &tape)[0];
                        double d = pred - win.label;
                        loss += d * d * inv_b;
                        double g = 2.0 * d * inv_b;
                        nn::backward_into(net, tape, std::span<const double>(&g, 1), grads);
                    }
                    if (!std::isfinite(loss)) throw std::runtime_error("diverged");
                    nn::adam_step(net, grads, opt);
                }
                double v = eval_net(net, u.valid);
                if (!std::isfinite(v)) throw std::runtime_error("diverged");
                valid_trace.push_back(v);
                if (v < best_valid) {
                    best_valid = v;
                    best = net;
                    best_epoch = epoch;
                }
            }
            row.valid_mse = best_valid;
            row.test_mse = eval_net(best, u.test);
        } catch (const std::runtime_error&) {
            row.failed = true;
            row.valid_mse = kNan;
            row.test_mse = kNan;
        }
        row.order_checksum = order.h;
        row.wall_ms = elapsed_ms(r_start);
        report.audit.push_back(nlohmann::json{{"type", "repeat"},
                                              {"system", "dnn"},
                                              {"task", config.label_index},
                                              {"repeat", repeat},
                                              {"seed", rs},
                                              {"validation_trace", valid_trace},
                                              {"best_epoch", best_epoch},
                                              {"best_valid_mse", row.valid_mse},
                                              {"test_mse", row.test_mse},
                                              {"init_checksum", row.init_checksum},
                                              {"order_checksum", row.order_checksum},
                                              {"failed", row.failed},
                                              {"wall_ms", row.wall_ms}});
        report.rows.push_back(std::move(row));
    }

    compute_ranks(report);
    report.wall_ms = elapsed_ms(t_start);
    report.audit.push_back(nlohmann::json{{"type", "meta"},
                                          {"config", config_to_json(config)},
                                          {"param_count_model", report.param_count_model},
                                          {"param_count_dnn", report.param_count_dnn},
                                          {"wall_ms", report.wall_ms}});
    return report;
}

void merge_reports(MetricsReport& into, const MetricsReport& from) {
    into.rows.insert(into.rows.end(), from.rows.begin(), from.rows.end());
    into.audit.insert(into.audit.end(), from.audit.begin(), from.audit.end());
    into.param_count_model = std::max(into.param_count_model, from.param_count_model);
    into.param_count_dnn = std::max(into.param_count_dnn, from.param_count_dnn);
    into.wall_ms += from.wall_ms;
    compute_ranks(into);
}

// ---- report files -----------------------------------------------------------

namespace {

const char* kCsvHeader =
    "kind,system,task,repeat,seed,valid_mse,test_mse,mean_valid_mse,mean_test_mse,rank,"
    "repeats_ok,repeats_failed,fl_rounds,publish_failures,init_checksum,order_checksum,"
    "failed,wall_ms";

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double_field(const std::string& s) {
    if (s.empty()) return kNan;
    return std::strtod(s.c_str(), nullptr);
}

uint64_t parse_u64_field(const std::string& s) {
    if (s.empty()) return 0;
    return std::strtoull(s.c_str(), nullptr, 10);
}

}  // namespace

void emit_report(const MetricsReport& report, const std::string& out_dir) {
    fs::create_directories(out_dir);
    fs::path csv_path = fs::path(out_dir) / "metrics.csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
    csv << kCsvHeader << "\n";
    for (const auto& r : report.rows) {
        csv << "row," << r.system << ',' << r.task << ',' << r.repeat << ',' << r.seed << ','
            << fmt_double(r.valid_mse) << ',' << fmt_double(r.test_mse) << ",,,,,,"
            << r.fl_rounds << ',' << r.publish_failures << ',' << r.init_checksum << ','
            << r.order_checksum << ',' << (r.failed ? 1 : 0) << ',' << fmt_double(r.wall_ms)
            << "\n";
    }
    for (const auto& a : report.aggregates) {
        csv << "aggregate," << a.system << ',' << a.task << ",,,,,"
            << fmt_double(a.mean_valid_mse) << ',' << fmt_double(a.mean_test_mse) << ','
            << a.rank << ',' << a.repeats_ok << ',' << a.repeats_failed << ",,,,,,\n";
    }
    csv.flush();
    if (!csv) throw std::runtime_error("short write to " + csv_path.string());

    fs::path audit_path = fs::path(out_dir) / "audit.jsonl";
    std::ofstream audit(audit_path, std::ios::trunc);
    if (!audit) throw std::runtime_error("cannot write " + audit_path.string());
    for (const auto& line : report.audit) audit << line.dump() << "\n";
    audit.flush();
    if (!audit) throw std::runtime_error("short write to " + audit_path.string());
}

MetricsReport parse_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty metrics file");
    if (split_csv_line(line) != split_csv_line(kCsvHeader)) {
        throw std::runtime_error("unexpected metrics header");
    }
    MetricsReport report;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 18) {
            throw std::runtime_error("bad field count at line " + std::to_string(lineno));
        }
        if (f[0] == "row") {
            MetricsRow r;
            r.system = f[1];
            r.task = static_cast<int>(std::strtol(f[2].c_str(), nullptr, 10));
            r.repeat = static_cast<int>(std::strtol(f[3].c_str(), nullptr, 10));
            r.seed = parse_u64_field(f[4]);
            r.valid_mse = parse_double_field(f[5]);
            r.test_mse = parse_double_field(f[6]);
            r.fl_rounds = static_cast<int>(std::strtol(f[12].c_str(), nullptr, 10));
            r.publish_failures = static_cast<int>(std::strtol(f[13].c_str(), nullptr, 10));
            r.init_checksum = parse_u64_field(f[14]);
            r.order_checksum = parse_u64_field(f[15]);
            r.failed = f[16] == "1";
            r.wall_ms = parse_double_field(f[17]);
            report.rows.push_back(std::move(r));
        } else if (f[0] == "aggregate") {
            AggregateRow a;
            a.system = f[1];
            a.task = static_cast<int>(std::strtol(f[2].c_str(), nullptr, 10));
            a.mean_valid_mse = parse_double_field(f[7]);
            a.mean_test_mse = parse_double_field(f[8]);
            a.rank = static_cast<int>(std::strtol(f[9].c_str(), nullptr, 10));
            a.repeats_ok = static_cast<int>(std::strtol(f[10].c_str(), nullptr, 10));
            a.repeats_failed = static_cast<int>(std::strtol(f[11].c_str(), nullptr, 10));
            report.aggregates.push_back(std::move(a));
        } else {
            throw std::runtime_error("unknown row kind at line " + std::to_string(lineno));
        }
    }
    return report;
}

std::string render_table(const MetricsReport& report) {
    std::ostringstream out;
    out << "systems: mean test MSE by task (rank)\n";
    int current_task = std::numeric_limits<int>::min();
    for (const auto& a : report.aggregates) {
        if (a.task != current_task) {
            current_task = a.task;
            out << "task " << a.task << ":\n";
        }
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6g", a.mean_test_mse);
        out << "  " << a.system << ": " << buf << " (" << a.rank << ")"
            << "  ok=" << a.repeats_ok;
        if (a.repeats_failed > 0) out << " failed=" << a.repeats_failed;
        out << "\n";
    }
    if (report.param_count_model > 0) {
        out << "model parameters: " << report.param_count_model << "\n";
    }
    if (report.param_count_dnn > 0) {
        out << "dnn parameters: " << report.param_count_dnn << "\n";
    }
    return out.str();
}

}  // namespace fedsparse::harness

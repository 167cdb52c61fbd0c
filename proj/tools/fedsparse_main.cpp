// fedsparse: synthetic data generation, pool service, federated training,
// ablation grids, and report pretty-printing.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedsparse/csv.hpp"
#include "fedsparse/harness.hpp"
#include "fedsparse/pool.hpp"
#include "fedsparse/synth.hpp"
#include "fedsparse/util.hpp"

namespace hn = fedsparse::harness;
namespace sy = fedsparse::synth;
namespace pl = fedsparse::pool;
namespace ts = fedsparse::ts;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop.store(true); }

sy::DomainSpec spec_from_json(const nlohmann::json& j) {
    sy::DomainSpec spec;
    for (const auto& [key, value] : j.items()) {
        if (key == "nf") spec.nf = value.get<int>();
        else if (key == "n_patients") spec.n_patients = value.get<int>();
        else if (key == "events_per_patient") spec.events_per_patient = value.get<int>();
        else if (key == "latent_dim") spec.latent_dim = value.get<int>();
        else if (key == "mixing_seed") spec.mixing_seed = value.get<uint64_t>();
        else if (key == "noise_std") spec.noise_std = value.get<double>();
        else if (key == "ar_phi") spec.ar_phi = value.get<double>();
        else if (key == "ar_innovation_std") spec.ar_innovation_std = value.get<double>();
        else if (key == "sampling") {
            const std::string s = value.get<std::string>();
            if (s == "round_robin") spec.sampling = sy::Sampling::round_robin;
            else if (s == "uniform_random") spec.sampling = sy::Sampling::uniform_random;
            else throw std::invalid_argument("unknown sampling: " + s);
        } else if (key == "channel_scale") spec.channel_scale = value.get<std::vector<double>>();
        else if (key == "channel_offset") spec.channel_offset = value.get<std::vector<double>>();
        else if (key == "id_prefix") spec.id_prefix = value.get<std::string>();
        else throw std::invalid_argument("unknown spec key: " + key);
    }
    return spec;
}

struct TrainArgs {
    std::string target_csv;
    std::string source_csv;
    std::string config_path;
    std::string mode;
    std::string label = "0";  // channel index or "all"
    std::string out_dir = "report";
    bool with_dnn = false;
    hn::RunConfig cfg;
    // flags recorded as strings so "unset" is distinguishable
    std::string pool_flag;
    std::string selection_flag;
};

void add_override_flags(CLI::App* cmd, TrainArgs& a) {
    cmd->add_option("--config", a.config_path, "JSON config file");
    cmd->add_option("--label", a.label, "label channel index, or 'all'");
    cmd->add_option("--out", a.out_dir, "report output directory");
    cmd->add_option("--epochs", a.cfg.epochs, "training epochs");
    cmd->add_option("--repeats", a.cfg.repeats, "independent repeats");
    cmd->add_option("--seed", a.cfg.seed, "base seed");
    cmd->add_option("--lr", a.cfg.lr, "learning rate");
    cmd->add_option("--alpha", a.cfg.alpha, "blend weight");
    cmd->add_option("--period", a.cfg.R, "batch size / federation period R");
    cmd->add_option("--window", a.cfg.w, "window length w");
    cmd->add_option("--pool", a.pool_flag, "pool endpoint (host:port or file:<dir>)");
    cmd->add_option("--patience", a.cfg.patience, "switch-gate patience");
    cmd->add_option("--source-users", a.cfg.source_users, "number of source users");
    cmd->add_flag("--joint-grads", a.cfg.joint_grads,
                  "let final-loss gradients reach the heads");
    cmd->add_flag("--normalize", a.cfg.normalize, "z-score features per user");
    cmd->add_flag("--include-self", a.cfg.include_self, "own heads visible on fetch");
    cmd->add_flag("--pretrain-sources", a.cfg.pretrain_sources,
                  "sources finish before the target starts");
    cmd->add_flag("--one-way", [&a](size_t) { a.cfg.sources_learn = false; },
                  "sources publish but never blend");
    cmd->add_option("--selection-score", a.selection_flag, "squared|signed");
    cmd->add_flag("--with-dnn", a.with_dnn, "append the dense MLP baseline");
}

// file config first, CLI flags second
void finalize_config(TrainArgs& a, CLI::App* cmd) {
    if (!a.config_path.empty()) {
        hn::RunConfig from_file = hn::load_config(a.config_path);
        // overlay every flag the user actually passed onto the file config
        hn::RunConfig cli = a.cfg;
        a.cfg = from_file;
        auto passed = [cmd](const std::string& name) { return cmd->count(name) > 0; };
        if (passed("--epochs")) a.cfg.epochs = cli.epochs;
        if (passed("--repeats")) a.cfg.repeats = cli.repeats;
        if (passed("--seed")) a.cfg.seed = cli.seed;
        if (passed("--lr")) a.cfg.lr = cli.lr;
        if (passed("--alpha")) a.cfg.alpha = cli.alpha;
        if (passed("--period")) a.cfg.R = cli.R;
        if (passed("--window")) a.cfg.w = cli.w;
        if (passed("--patience")) a.cfg.patience = cli.patience;
        if (passed("--source-users")) a.cfg.source_users = cli.source_users;
        if (passed("--joint-grads")) a.cfg.joint_grads = cli.joint_grads;
        if (passed("--normalize")) a.cfg.normalize = cli.normalize;
        if (passed("--include-self")) a.cfg.include_self = cli.include_self;
        if (passed("--pretrain-sources")) a.cfg.pretrain_sources = cli.pretrain_sources;
        if (passed("--one-way")) a.cfg.sources_learn = false;
    }
    if (!a.mode.empty()) a.cfg.mode = hn::mode_from_string(a.mode);
    if (!a.pool_flag.empty()) a.cfg.pool = a.pool_flag;
    if (!a.selection_flag.empty()) {
        if (a.selection_flag == "squared") {
            a.cfg.selection_score = fedsparse::fed::SelectionScore::squared;
        } else if (a.selection_flag == "signed") {
            a.cfg.selection_score = fedsparse::fed::SelectionScore::signed_sum;
        } else {
            throw std::invalid_argument("unknown selection score: " + a.selection_flag);
        }
    }
    if (a.cfg.pool.empty()) {
        if (const char* env = std::getenv("FEDSPARSE_POOL")) a.cfg.pool = env;
    }
    hn::validate_config(a.cfg);
}

std::vector<int> label_tasks(const std::string& label, const std::vector<ts::SparseSeries>& t,
                             const std::vector<ts::SparseSeries>& s) {
    int max_c = -1;
    for (const auto* list : {&t, &s}) {
        for (const auto& series : *list) {
            for (const auto& ev : series.events) max_c = std::max(max_c, ev.channel);
        }
    }
    if (label == "all") {
        std::vector<int> out;
        for (int c = 0; c <= max_c; ++c) out.push_back(c);
        return out;
    }
    return {std::stoi(label)};
}

int finish_run(hn::MetricsReport& report, const std::string& out_dir) {
    hn::compute_ranks(report);
    hn::emit_report(report, out_dir);
    std::cout << hn::render_table(report);
    int failed = 0;
    for (const auto& row : report.rows) failed += row.failed ? 1 : 0;
    if (failed > 0) {
        std::cout << failed << " repeat(s) failed\n";
        return 1;
    }
    std::cout << "report written to " << out_dir << "\n";
    return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_csv,
              const std::string& pair_out, uint64_t seed, int w) {
    std::ifstream in(spec_path);
    if (!in) throw std::runtime_error("cannot open spec: " + spec_path);
    nlohmann::json j;
    in >> j;
    sy::DomainSpec base = spec_from_json(j);
    if (pair_out.empty()) {
        sy::validate_spec(base, w);
        auto series = sy::gen_domain(base, seed);
        ts::write_csv(out_csv, series);
        std::cout << "wrote " << series.size() << " patients to " << out_csv << "\n";
        return 0;
    }
    auto [target_spec, source_spec] = sy::make_heterogeneous_pair(base);
    sy::validate_spec(target_spec, w);
    sy::validate_spec(source_spec, w);
    auto target = sy::gen_domain(target_spec, seed);
    auto source = sy::gen_domain(source_spec, fedsparse::mix_seed(seed, 0x50CEu));
    ts::write_csv(out_csv, target);
    ts::write_csv(pair_out, source);
    std::cout << "wrote " << target.size() << " target patients to " << out_csv << " and "
              << source.size() << " source patients to " << pair_out << "\n";
    return 0;
}

int cmd_pool(const std::string& bind_addr) {
    auto store = std::make_shared<pl::PoolStore>();
    pl::PoolServer server(bind_addr, store);
    server.start();
    std::cout << "pool listening on " << server.endpoint() << std::endl;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop.load()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    server.stop();
    std::cout << "pool stopped, " << pl::pool_size(*store) << " entries held\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"heterogeneous federated learning for sparse time series"};
    app.require_subcommand(1);

    // synth
    std::string spec_path, out_csv, pair_out;
    uint64_t synth_seed = 1;
    int synth_w = 3;
    CLI::App* synth = app.add_subcommand("synth", "generate synthetic sparse series");
    synth->add_option("--spec", spec_path, "domain spec JSON")->required();
    synth->add_option("--out", out_csv, "output CSV (target when --pair-out set)")->required();
    synth->add_option("--pair-out", pair_out, "also emit the 10x heterogeneous source domain");
    synth->add_option("--seed", synth_seed, "generation seed");
    synth->add_option("--window", synth_w, "window length the data must support");

    // pool
    std::string bind_addr = "127.0.0.1:7377";
    CLI::App* pool_cmd = app.add_subcommand("pool", "run the model pool service");
    pool_cmd->add_option("--bind", bind_addr, "host:port (port 0 = ephemeral)");

    // train
    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train one federation mode");
    train->add_option("--target", train_args.target_csv, "target domain CSV")->required();
    train->add_option("--source", train_args.source_csv, "source domain CSV");
    train->add_option("--mode", train_args.mode, "no|random|always|hfl");
    add_override_flags(train, train_args);

    // ablate
    TrainArgs ablate_args;
    CLI::App* ablate = app.add_subcommand("ablate", "run the four-mode ablation grid");
    ablate->add_option("--target", ablate_args.target_csv, "target domain CSV")->required();
    ablate->add_option("--source", ablate_args.source_csv, "source domain CSV");
    add_override_flags(ablate, ablate_args);

    // report
    std::string report_dir;
    CLI::App* report_cmd = app.add_subcommand("report", "pretty-print an emitted report");
    report_cmd->add_option("--in", report_dir, "report directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            return cmd_synth(spec_path, out_csv, pair_out, synth_seed, synth_w);
        }
        if (pool_cmd->parsed()) {
            return cmd_pool(bind_addr);
        }
        if (train->parsed() || ablate->parsed()) {
            TrainArgs& a = train->parsed() ? train_args : ablate_args;
            finalize_config(a, train->parsed() ? train : ablate);
            auto target = ts::ingest_csv(a.target_csv);
            std::vector<ts::SparseSeries> source;
            if (!a.source_csv.empty()) source = ts::ingest_csv(a.source_csv);
            hn::MetricsReport merged;
            for (int task : label_tasks(a.label, target, source)) {
                hn::RunConfig cfg = a.cfg;
                cfg.label_index = task;
                hn::MetricsReport part = train->parsed()
                                             ? hn::run_experiment(cfg, target, source)
                                             : hn::run_ablation_grid(cfg, target, source);
                hn::merge_reports(merged, part);
                if (a.with_dnn) hn::merge_reports(merged, hn::dnn_baseline(cfg, target));
            }
            return finish_run(merged, a.out_dir);
        }
        if (report_cmd->parsed()) {
            hn::MetricsReport report =
                hn::parse_metrics_csv(report_dir + "/metrics.csv");
            std::cout << hn::render_table(report);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

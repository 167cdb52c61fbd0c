#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsparse/federation.hpp"
#include "fedsparse/series.hpp"

namespace fedsparse::harness {

enum class Mode { no, random_sel, always, hfl };

std::string mode_name(Mode m);
Mode mode_from_string(const std::string& s);

// Full experiment recipe. Defaults follow the training protocol the library
// models; everything is overridable from a JSON config file and CLI flags.
struct RunConfig {
    int w = 3;
    int R = 50;           // batch size and federation period, in windows
    double alpha = 0.2;   // blend weight toward the selected head
    double lr = 0.01;
    int epochs = 50;
    int repeats = 5;
    uint64_t seed = 1;
    int label_index = 0;  // which raw channel acts as the label task
    Mode mode = Mode::hfl;
    std::string pool;     // endpoint, file:<dir>, or empty for per-repeat in-memory
    bool joint_grads = false;
    fed::SelectionScore selection_score = fed::SelectionScore::squared;
    bool normalize = false;
    int patience = 3;
    bool sources_learn = true;      // sources blend from the pool too
    bool include_self = false;      // own heads visible on fetch
    bool pretrain_sources = false;  // sources finish training before the target starts
    int source_users = 4;           // source domain is sharded across this many users
};

void validate_config(const RunConfig& c);
nlohmann::json config_to_json(const RunConfig& c);
void apply_json(RunConfig& c, const nlohmann::json& j);  // unknown keys rejected
RunConfig load_config(const std::string& path);

// One trained repeat of one system on one label task.
struct MetricsRow {
    std::string system;  // "no" | "random" | "always" | "hfl" | "dnn"
    int task = 0;        // raw label channel
    int repeat = 0;
    uint64_t seed = 0;
    double valid_mse = 0.0;  // best validation epoch
    double test_mse = 0.0;   // test MSE of the saved best model
    int fl_rounds = 0;       // blend rounds executed by the target user
    int publish_failures = 0;
    uint64_t init_checksum = 0;   // all users' initial weights
    uint64_t order_checksum = 0;  // training data consumption order
    bool failed = false;          // diverged; excluded from aggregates
    double wall_ms = 0.0;
};

struct AggregateRow {
    std::string system;
    int task = 0;
    double mean_valid_mse = 0.0;
    double mean_test_mse = 0.0;
    int repeats_ok = 0;
    int repeats_failed = 0;
    int rank = 0;  // 1 = lowest mean test MSE within the task
};

struct MetricsReport {
    std::vector<MetricsRow> rows;
    std::vector<AggregateRow> aggregates;
    std::vector<nlohmann::json> audit;  // one line per repeat + one meta line
    long param_count_model = 0;
    long param_count_dnn = 0;
    double wall_ms = 0.0;
};

// Remaps raw channel label_index to the label slot (the highest channel id)
// and compacts the remaining channels, per series.
std::vector<ts::SparseSeries> relabel_series(const std::vector<ts::SparseSeries>& raw,
                                             int n_channels, int label_index);

// Trains the target user against source users sharded from `source` under
// config.mode, with save-best and per-repeat determinism. Aggregates skip
// failed (diverged) repeats but count them.
MetricsReport run_experiment(const RunConfig& config,
                             const std::vector<ts::SparseSeries>& target,
                             const std::vector<ts::SparseSeries>& source);

// The four federation policies on identical seeds, data orders, and initial
// weights; reports carry checksums proving the fairness.
MetricsReport run_ablation_grid(const RunConfig& config,
                                const std::vector<ts::SparseSeries>& target,
                                const std::vector<ts::SparseSeries>& source);

// Dense-input MLP baseline trained on the target domain under the same
// batching, save-best, and splits; no federation.
MetricsReport dnn_baseline(const RunConfig& config,
                           const std::vector<ts::SparseSeries>& target);

void merge_reports(MetricsReport& into, const MetricsReport& from);

// Recomputes aggregates from rows and assigns ranks per task by ascending
// mean test MSE (ties by system name).
void compute_ranks(MetricsReport& report);

// Writes metrics.csv (rows + aggregates, exact round-trip doubles) and
// audit.jsonl into out_dir.
void emit_report(const MetricsReport& report, const std::string& out_dir);

// Reads back metrics.csv (rows and aggregates; audit is not parsed).
MetricsReport parse_metrics_csv(const std::string& path);

std::string render_table(const MetricsReport& report);  // human-readable summary

}  // namespace fedsparse::harness

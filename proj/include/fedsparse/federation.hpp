#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedsparse/model.hpp"
#include "fedsparse/nn.hpp"

namespace fedsparse::fed {

// One published head snapshot. version is a client-assigned monotone counter
// per (user_id, feature_index).
struct PoolEntry {
    std::string user_id;
    int feature_index = 0;
    uint64_t version = 0;
    nn::MlpWeights weights;
    int64_t published_at_ms = 0;
};

// Gate for federated rounds: active once validation loss has gone patience
// epochs without a strict improvement.
struct SwitchState {
    double best_validation_loss = std::numeric_limits<double>::infinity();
    int epochs_since_improvement = 0;
    int patience = 3;
};

// Returns whether federated learning is active for the next epoch. Throws on
// a non-finite loss.
bool update_switch(SwitchState& state, double epoch_validation_loss);

enum class SelectionScore {
    squared,     // sum of squared residuals over the recent window
    signed_sum,  // plain residual sum, kept for ablation
};

struct RecentSample {
    std::vector<double> dense_row;
    double label = 0.0;
};

struct SelectionResult {
    size_t best_index = 0;
    std::vector<double> scores;  // one per pool entry, for audit
};

// Argmin of the recent-window prediction error over pool entries. Ties break
// to the lowest (user_id, feature_index). Throws "empty pool".
SelectionResult select_head(std::span<const PoolEntry> pool,
                            std::span<const RecentSample> recent,
                            SelectionScore score = SelectionScore::squared);

// Elementwise alpha*selected + (1-alpha)*target. alpha 0 and 1 return exact
// copies. Throws "incompatible head" on shape mismatch.
nn::MlpWeights blend_head(const nn::MlpWeights& target, const nn::MlpWeights& selected,
                          double alpha);

struct PublishResult {
    bool ok = false;
    uint64_t version = 0;
    std::string error;
};

class PoolClient {
  public:
    virtual ~PoolClient() = default;
    virtual PublishResult publish(const PoolEntry& entry) = 0;
    // Latest entries, excluding exclude_user's own keys when nonempty.
    virtual std::vector<PoolEntry> fetch(const std::string& exclude_user) = 0;
};

struct HeadSelection {
    int head = 0;
    std::string selected_user;
    int selected_feature = 0;
    uint64_t version = 0;
    double score = 0.0;
};

struct FlRoundAudit {
    bool skipped = false;
    std::string skip_reason;
    double alpha = 0.0;
    std::vector<HeadSelection> selections;
};

// One federated round: per head, select from the pool and blend. Embedding
// and prediction networks are never touched. An empty pool skips the round.
FlRoundAudit fl_round(model::HflModel& m, std::span<const PoolEntry> pool,
                      const std::vector<std::vector<RecentSample>>& recent_per_head,
                      double alpha, SelectionScore score = SelectionScore::squared);

// Per-user publish bookkeeping; versions advance on acknowledged publishes.
struct Publisher {
    std::string user_id;
    std::vector<uint64_t> versions;  // per head, last acknowledged
};

struct PublishOutcome {
    std::vector<uint64_t> acknowledged;  // versions acked this call, per head (0 = failed)
    int failures = 0;
    std::string first_error;
};

// Publishes every head with the next version. Transport failures are
// reported, never thrown; the training loop continues.
PublishOutcome publish_heads(const model::HflModel& m, Publisher& publisher,
                             PoolClient& client);

}  // namespace fedsparse::fed

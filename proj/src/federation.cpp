#include "fedsparse/federation.hpp"

#include <cmath>
#include <stdexcept>
#include <tuple>

#include "fedsparse/util.hpp"

namespace fedsparse::fed {

bool update_switch(SwitchState& state, double epoch_validation_loss) {
    if (!std::isfinite(epoch_validation_loss)) {
        throw std::runtime_error("non-finite validation loss");
    }
    if (epoch_validation_loss < state.best_validation_loss) {
        state.best_validation_loss = epoch_validation_loss;
        state.epochs_since_improvement = 0;
    } else {
        state.epochs_since_improvement += 1;
    }
    return state.epochs_since_improvement >= state.patience;
}

SelectionResult select_head(std::span<const PoolEntry> pool,
                            std::span<const RecentSample> recent,
                            SelectionScore score) {
    if (pool.empty()) throw std::runtime_error("empty pool");
    if (recent.empty()) throw std::runtime_error("empty recent window");

    SelectionResult res;
    res.scores.resize(pool.size());
    for (size_t j = 0; j < pool.size(); ++j) {
        const auto& entry = pool[j];
        double s = 0.0;
        for (const auto& sample : recent) {
            double pred = nn::forward(entry.weights, sample.dense_row)[0];
            double r = sample.label - pred;
            s += score == SelectionScore::squared ? r * r : r;
        }
        res.scores[j] = s;
    }

    size_t best = 0;
    for (size_t j = 1; j < pool.size(); ++j) {
        if (res.scores[j] < res.scores[best]) {
            best = j;
        } else if (res.scores[j] == res.scores[best]) {
            auto key = [](const PoolEntry& e) {
                return std::tie(e.user_id, e.feature_index);
            };
            if (key(pool[j]) < key(pool[best])) best = j;
        }
    }
    res.best_index = best;
    return res;
}

nn::MlpWeights blend_head(const nn::MlpWeights& target, const nn::MlpWeights& selected,
                          double alpha) {
    if (!nn::same_shape(target, selected)) throw std::runtime_error("incompatible head");
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha out of range");
    if (alpha == 0.0) return target;
    if (alpha == 1.0) return selected;

    nn::MlpWeights out = target;
    double keep = 1.0 - alpha;
    for (size_t l = 0; l < out.layers.size(); ++l) {
        auto& wl = out.layers[l];
        const auto& sl = selected.layers[l];
        for (size_t i = 0; i < wl.W.a.size(); ++i) {
            wl.W.a[i] = alpha * sl.W.a[i] + keep * wl.W.a[i];
        }
        for (size_t i = 0; i < wl.b.size(); ++i) {
            wl.b[i] = alpha * sl.b[i] + keep * wl.b[i];
        }
    }
    return out;
}

FlRoundAudit fl_round(model::HflModel& m, std::span<const PoolEntry> pool,
                      const std::vector<std::vector<RecentSample>>& recent_per_head,
                      double alpha, SelectionScore score) {
    FlRoundAudit audit;
    audit.alpha = alpha;
    if (static_cast<int>(recent_per_head.size()) != m.nf) {
        throw std::invalid_argument("recent window count mismatch");
    }
    if (pool.empty()) {
        audit.skipped = true;
        audit.skip_reason = "empty pool";
        return audit;
    }
    for (int i = 0; i < m.nf; ++i) {
        if (recent_per_head[i].empty()) {
            throw std::runtime_error("empty recent window");
        }
        SelectionResult sel = select_head(pool, recent_per_head[i], score);
        const PoolEntry& chosen = pool[sel.best_index];
        m.heads[i] = blend_head(m.heads[i], chosen.weights, alpha);
        HeadSelection hs;
        hs.head = i;
        hs.selected_user = chosen.user_id;
        hs.selected_feature = chosen.feature_index;
        hs.version = chosen.version;
        hs.score = sel.scores[sel.best_index];
        audit.selections.push_back(hs);
    }
    return audit;
}

PublishOutcome publish_heads(const model::HflModel& m, Publisher& publisher,
                             PoolClient& client) {
    if (publisher.versions.empty()) {
        publisher.versions.assign(static_cast<size_t>(m.nf), 0);
    }
    if (publisher.versions.size() != static_cast<size_t>(m.nf)) {
        throw std::invalid_argument("publisher head count mismatch");
    }

    PublishOutcome out;
    out.acknowledged.assign(static_cast<size_t>(m.nf), 0);
    for (int i = 0; i < m.nf; ++i) {
        PoolEntry entry;
        entry.user_id = publisher.user_id;
        entry.feature_index = i;
        entry.version = publisher.versions[static_cast<size_t>(i)] + 1;
        entry.weights = m.heads[static_cast<size_t>(i)];
        entry.published_at_ms = now_ms();
        PublishResult r = client.publish(entry);
        if (r.ok) {
            publisher.versions[static_cast<size_t>(i)] = entry.version;
            out.acknowledged[static_cast<size_t>(i)] = entry.version;
        } else {
            out.failures += 1;
            if (out.first_error.empty()) out.first_error = r.error;
        }
    }
    return out;
}

}  // namespace fedsparse::fed

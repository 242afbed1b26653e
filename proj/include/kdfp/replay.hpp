#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "kdfp/data.hpp"
#include "kdfp/losses.hpp"
#include "kdfp/model.hpp"

namespace kdfp {

// A retained anchor/positive pair. Submaps are stored by value so later
// training steps never have to touch the original domain data again.
struct MemoryEntry {
    Submap anchor;
    Submap positive;
    int domain_id = 0;
    double stored_old_loss = 0.0;      // per-anchor task loss under the previous step's model
    double insertion_pred_loss = 0.0;  // head prediction at selection time
    int insertion_step = 0;
};

// Sampling weights from predicted losses: clamp each to at least 1e-6, then
// normalize to sum to 1. All-nonpositive input degrades to uniform.
std::vector<double> sampling_probabilities(const std::vector<double>& pred_losses);

// Weighted sampling without replacement via exponential keys:
// key_i = -ln(u_i) / w_i, keep the k smallest. Deterministic given the rng
// state and invariant to rescaling all weights by a positive constant.
// Returns the selected elements of `candidates`, sorted ascending.
std::vector<int> select_exemplars(const std::vector<int>& candidates,
                                  const std::vector<double>& pred_losses, int k,
                                  std::mt19937_64& rng);

class ReplayBuffer {
  public:
    ReplayBuffer() = default;
    explicit ReplayBuffer(int capacity);

    int capacity() const { return capacity_; }
    int size() const;
    int domain_count(int domain_id) const;
    std::vector<int> stored_domains() const;  // insertion order

    // All entries in deterministic order (domain insertion order, then
    // intra-domain order). Pointers are invalidated by the next update.
    std::vector<const MemoryEntry*> entries() const;
    std::vector<MemoryEntry*> entries_mut();

    // Equal-domain update: shrink every stored domain to its quota by
    // uniform random removal, then fill the new domain's quota by
    // loss-aware selection over the candidates. Quotas give ceil(S/T) to
    // the first S mod T domains in insertion order and floor(S/T) to the
    // rest. T must equal the number of domains present after the update.
    void update_after_domain(std::vector<MemoryEntry> new_candidates,
                             const std::vector<double>& new_pred_losses, int T,
                             std::mt19937_64& rng);

    // Max-replacement ablation: insert the same number of new-domain
    // entries, but make room by evicting random entries from whichever
    // stored domain is currently largest instead of rebalancing.
    void update_max_replacement(std::vector<MemoryEntry> new_candidates,
                                const std::vector<double>& new_pred_losses, int T,
                                std::mt19937_64& rng);

    // Uniform draw across all stored entries; without replacement when the
    // buffer is large enough, with replacement otherwise.
    std::vector<const MemoryEntry*> sample_replay_batch(int batch_pairs,
                                                        std::mt19937_64& rng) const;

    std::string dump_json() const;
    void dump_to_file(const std::string& path) const;

    // Rebuilds a buffer from a dump; submaps are resolved by id from the
    // original datasets. Domain insertion order is recovered from entry
    // order.
    static ReplayBuffer restore_json(const std::string& dump,
                                     const std::function<const Submap*(int)>& submap_by_id);

  private:
    std::vector<int> quotas(int T) const;

    int capacity_ = 0;
    // Parallel arrays in domain insertion order.
    std::vector<int> domain_order_;
    std::vector<std::vector<MemoryEntry>> groups_;
};

// Recompute every entry's stored task loss under the current model, in eval
// mode, treating the whole buffer as one memory batch (hardest positive is
// the stored pair, negatives are other stored places). Entries without a
// valid negative keep a loss of zero.
void refresh_old_losses(ReplayBuffer& buffer, const Encoder& encoder, const LossConfig& cfg);

}  // namespace kdfp

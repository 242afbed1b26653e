#include "kdfp/replay.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace kdfp {

namespace {
constexpr double kWeightFloor = 1e-6;
}

std::vector<double> sampling_probabilities(const std::vector<double>& pred_losses) {
    if (pred_losses.empty()) throw std::invalid_argument("sampling_probabilities: empty input");
    std::vector<double> p(pred_losses.size());
    double total = 0.0;
    for (size_t i = 0; i < pred_losses.size(); ++i) {
        if (!std::isfinite(pred_losses[i])) {
            throw std::invalid_argument("sampling_probabilities: non-finite entry");
        }
        p[i] = std::max(pred_losses[i], kWeightFloor);
        total += p[i];
    }
    for (double& v : p) v /= total;
    return p;
}

std::vector<int> select_exemplars(const std::vector<int>& candidates,
                                  const std::vector<double>& pred_losses, int k,
                                  std::mt19937_64& rng) {
    if (candidates.size() != pred_losses.size()) {
        throw std::invalid_argument("select_exemplars: length mismatch");
    }
    if (k > static_cast<int>(candidates.size())) {
        throw std::invalid_argument("select_exemplars: k exceeds candidate count");
    }
    if (k < 0) throw std::invalid_argument("select_exemplars: negative k");
    if (k == 0) return {};

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::pair<double, int>> keyed(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
        if (!std::isfinite(pred_losses[i])) {
            throw std::invalid_argument("select_exemplars: non-finite weight");
        }
        const double w = std::max(pred_losses[i], kWeightFloor);
        const double u = std::max(unit(rng), std::numeric_limits<double>::min());
        keyed[i] = {-std::log(u) / w, candidates[i]};
    }
    std::partial_sort(keyed.begin(), keyed.begin() + k, keyed.end());
    std::vector<int> selected(k);
    for (int i = 0; i < k; ++i) selected[i] = keyed[i].second;
    std::sort(selected.begin(), selected.end());
    return selected;
}

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
}

int ReplayBuffer::size() const {
    int n = 0;
    for (const auto& g : groups_) n += static_cast<int>(g.size());
    return n;
}

int ReplayBuffer::domain_count(int domain_id) const {
    for (size_t i = 0; i < domain_order_.size(); ++i) {
        if (domain_order_[i] == domain_id) return static_cast<int>(groups_[i].size());
    }
    return 0;
}

std::vector<int> ReplayBuffer::stored_domains() const { return domain_order_; }

std::vector<const MemoryEntry*> ReplayBuffer::entries() const {
    std::vector<const MemoryEntry*> out;
    for (const auto& g : groups_) {
        for (const MemoryEntry& e : g) out.push_back(&e);
    }
    return out;
}

std::vector<MemoryEntry*> ReplayBuffer::entries_mut() {
    std::vector<MemoryEntry*> out;
    for (auto& g : groups_) {
        for (MemoryEntry& e : g) out.push_back(&e);
    }
    return out;
}

std::vector<int> ReplayBuffer::quotas(int T) const {
    // ceil(S/T) for the first S mod T domains in insertion order, floor for
    // the rest.
    std::vector<int> q(T, capacity_ / T);
    for (int i = 0; i < capacity_ % T; ++i) q[i] += 1;
    return q;
}

namespace {

// Uniformly keeps `quota` entries of a group, preserving relative order.
void shrink_uniform(std::vector<MemoryEntry>& group, int quota, std::mt19937_64& rng) {
    const int n = static_cast<int>(group.size());
    if (n <= quota) return;
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(quota);
    std::sort(idx.begin(), idx.end());
    std::vector<MemoryEntry> kept;
    kept.reserve(quota);
    for (int i : idx) kept.push_back(std::move(group[i]));
    group = std::move(kept);
}

std::vector<MemoryEntry> pick_new_entries(std::vector<MemoryEntry>& candidates,
                                          const std::vector<double>& pred_losses, int want,
                                          std::mt19937_64& rng) {
    if (candidates.size() != pred_losses.size()) {
        throw std::invalid_argument("update_after_domain: candidate/loss length mismatch");
    }
    if (static_cast<int>(candidates.size()) < want) {
        std::cerr << "warning: only " << candidates.size() << " memory candidates for a quota of "
                  << want << "; taking all\n";
        want = static_cast<int>(candidates.size());
    }
    std::vector<int> index(candidates.size());
    std::iota(index.begin(), index.end(), 0);
    const std::vector<int> chosen = select_exemplars(index, pred_losses, want, rng);
    std::vector<MemoryEntry> out;
    out.reserve(chosen.size());
    for (int i : chosen) out.push_back(std::move(candidates[i]));
    return out;
}

}  // namespace

void ReplayBuffer::update_after_domain(std::vector<MemoryEntry> new_candidates,
                                       const std::vector<double>& new_pred_losses, int T,
                                       std::mt19937_64& rng) {
    if (T != static_cast<int>(domain_order_.size()) + 1) {
        throw std::invalid_argument("update_after_domain: T must count all domains after update");
    }
    const std::vector<int> q = quotas(T);
    for (size_t i = 0; i < groups_.size(); ++i) shrink_uniform(groups_[i], q[i], rng);

    std::vector<MemoryEntry> fresh = pick_new_entries(new_candidates, new_pred_losses, q[T - 1], rng);
    const int new_domain = fresh.empty() ? (new_candidates.empty() ? -1 : new_candidates[0].domain_id)
                                         : fresh[0].domain_id;
    domain_order_.push_back(new_domain);
    groups_.push_back(std::move(fresh));
}

void ReplayBuffer::update_max_replacement(std::vector<MemoryEntry> new_candidates,
                                          const std::vector<double>& new_pred_losses, int T,
                                          std::mt19937_64& rng) {
    if (T != static_cast<int>(domain_order_.size()) + 1) {
        throw std::invalid_argument("update_max_replacement: T must count all domains after update");
    }
    const int want = quotas(T)[T - 1];
    std::vector<MemoryEntry> fresh = pick_new_entries(new_candidates, new_pred_losses, want, rng);
    const int new_domain = fresh.empty() ? (new_candidates.empty() ? -1 : new_candidates[0].domain_id)
                                         : fresh[0].domain_id;
    const size_t old_groups = groups_.size();
    domain_order_.push_back(new_domain);
    groups_.emplace_back();

    for (MemoryEntry& e : fresh) {
        if (size() >= capacity_) {
            // Evict from the largest previously stored domain (earliest wins ties).
            size_t largest = old_groups;
            for (size_t i = 0; i < old_groups; ++i) {
                if (groups_[i].empty()) continue;
                if (largest == old_groups || groups_[i].size() > groups_[largest].size()) {
                    largest = i;
                }
            }
            if (largest == old_groups) break;  // nothing evictable; stop inserting
            auto& g = groups_[largest];
            std::uniform_int_distribution<size_t> pick(0, g.size() - 1);
            g.erase(g.begin() + static_cast<long>(pick(rng)));
        }
        groups_.back().push_back(std::move(e));
    }
}

std::vector<const MemoryEntry*> ReplayBuffer::sample_replay_batch(int batch_pairs,
                                                                  std::mt19937_64& rng) const {
    const std::vector<const MemoryEntry*> all = entries();
    if (all.empty()) throw std::runtime_error("sample_replay_batch: buffer is empty");
    if (batch_pairs < 1) throw std::invalid_argument("sample_replay_batch: batch_pairs < 1");

    std::vector<const MemoryEntry*> out;
    out.reserve(batch_pairs);
    if (batch_pairs <= static_cast<int>(all.size())) {
        std::vector<int> idx(all.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < batch_pairs; ++i) {
            std::uniform_int_distribution<int> pick(i, static_cast<int>(idx.size()) - 1);
            std::swap(idx[i], idx[pick(rng)]);
            out.push_back(all[idx[i]]);
        }
    } else {
        std::uniform_int_distribution<size_t> pick(0, all.size() - 1);
        for (int i = 0; i < batch_pairs; ++i) out.push_back(all[pick(rng)]);
    }
    return out;
}

std::string ReplayBuffer::dump_json() const {
    nlohmann::json j;
    j["capacity"] = capacity_;
    nlohmann::json arr = nlohmann::json::array();
    for (const MemoryEntry* e : entries()) {
        arr.push_back({{"anchor_id", e->anchor.id},
                       {"positive_id", e->positive.id},
                       {"domain_id", e->domain_id},
                       {"stored_old_loss", e->stored_old_loss},
                       {"insertion_pred_loss", e->insertion_pred_loss},
                       {"insertion_step", e->insertion_step}});
    }
    j["entries"] = std::move(arr);
    return j.dump();
}

void ReplayBuffer::dump_to_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("ReplayBuffer: cannot open " + path);
    out << dump_json() << "\n";
}

ReplayBuffer ReplayBuffer::restore_json(const std::string& dump,
                                        const std::function<const Submap*(int)>& submap_by_id) {
    const nlohmann::json j = nlohmann::json::parse(dump);
    ReplayBuffer buf(j.at("capacity").get<int>());
    for (const auto& ej : j.at("entries")) {
        MemoryEntry e;
        const int anchor_id = ej.at("anchor_id").get<int>();
        const int positive_id = ej.at("positive_id").get<int>();
        const Submap* anchor = submap_by_id(anchor_id);
        const Submap* positive = submap_by_id(positive_id);
        if (anchor == nullptr || positive == nullptr) {
            throw std::runtime_error("ReplayBuffer::restore_json: unresolved submap id " +
                                     std::to_string(anchor == nullptr ? anchor_id : positive_id));
        }
        e.anchor = *anchor;
        e.positive = *positive;
        e.domain_id = ej.at("domain_id").get<int>();
        e.stored_old_loss = ej.at("stored_old_loss").get<double>();
        e.insertion_pred_loss = ej.at("insertion_pred_loss").get<double>();
        e.insertion_step = ej.at("insertion_step").get<int>();
        if (buf.domain_order_.empty() || buf.domain_order_.back() != e.domain_id) {
            buf.domain_order_.push_back(e.domain_id);
            buf.groups_.emplace_back();
        }
        buf.groups_.back().push_back(std::move(e));
    }
    return buf;
}

void refresh_old_losses(ReplayBuffer& buffer, const Encoder& encoder, const LossConfig& cfg) {
    std::vector<MemoryEntry*> all = buffer.entries_mut();
    if (all.empty()) return;

    std::vector<const Matrix*> point_sets;
    std::vector<long long> labels;
    std::vector<int> anchor_rows;
    point_sets.reserve(all.size() * 2);
    labels.reserve(all.size() * 2);
    for (size_t i = 0; i < all.size(); ++i) {
        anchor_rows.push_back(static_cast<int>(2 * i));
        point_sets.push_back(&all[i]->anchor.points);
        labels.push_back(all[i]->anchor.place_label);
        point_sets.push_back(&all[i]->positive.points);
        labels.push_back(all[i]->positive.place_label);
    }

    const Encoder::EvalEmbed emb = encoder.embed_batch_eval(point_sets);
    std::vector<double> losses(all.size(), 0.0);
    try {
        const TripletMining mining = mine_batch_hard(emb.descriptors, labels, cfg.triplet_margin,
                                                     nullptr, &anchor_rows);
        for (size_t k = 0; k < mining.anchor_rows.size(); ++k) {
            losses[mining.anchor_rows[k] / 2] = mining.per_anchor[k];
        }
    } catch (const std::runtime_error&) {
        // Degenerate buffer (single place): no valid triplets, losses stay 0.
    }
    for (size_t i = 0; i < all.size(); ++i) all[i]->stored_old_loss = losses[i];
}

}  // namespace kdfp

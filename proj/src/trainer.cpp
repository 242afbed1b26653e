#include "kdfp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <stdexcept>

namespace kdfp {

void OptimConfig::validate() const {
    if (learning_rate <= 0.0) throw std::invalid_argument("OptimConfig: learning_rate <= 0");
    if (lr_drop_factor <= 0.0) throw std::invalid_argument("OptimConfig: lr_drop_factor <= 0");
    if (weight_decay < 0.0) throw std::invalid_argument("OptimConfig: weight_decay < 0");
    if (adam_beta1 <= 0.0 || adam_beta1 >= 1.0 || adam_beta2 <= 0.0 || adam_beta2 >= 1.0) {
        throw std::invalid_argument("OptimConfig: betas must be in (0, 1)");
    }
    if (adam_eps <= 0.0) throw std::invalid_argument("OptimConfig: adam_eps <= 0");
    if (head_lr_ratio <= 0.0) throw std::invalid_argument("OptimConfig: head_lr_ratio <= 0");
    if (epochs_per_step < 1) throw std::invalid_argument("OptimConfig: epochs_per_step < 1");
    if (batch_start < 2) throw std::invalid_argument("OptimConfig: batch_start < 2");
    if (batch_growth <= 1.0) throw std::invalid_argument("OptimConfig: batch_growth <= 1");
    if (batch_cap < batch_start) throw std::invalid_argument("OptimConfig: batch_cap < batch_start");
    if (expansion_threshold <= 0.0 || expansion_threshold > 1.0) {
        throw std::invalid_argument("OptimConfig: expansion_threshold outside (0, 1]");
    }
}

double learning_rate_at(const OptimConfig& cfg, int epoch) {
    return epoch < cfg.epochs_per_step / 2.0 ? cfg.learning_rate
                                             : cfg.learning_rate * cfg.lr_drop_factor;
}

int next_batch_size(int current, double last_active_fraction, const OptimConfig& cfg) {
    if (last_active_fraction >= cfg.expansion_threshold) return current;
    return std::min(cfg.batch_cap,
                    static_cast<int>(std::floor(current * cfg.batch_growth)));
}

Method method_from_string(const std::string& s) {
    if (s == "finetune") return Method::finetune;
    if (s == "kdf_plus") return Method::kdf_plus;
    throw std::invalid_argument("unknown method: " + s);
}
std::string to_string(Method m) { return m == Method::finetune ? "finetune" : "kdf_plus"; }

SamplingMode sampling_from_string(const std::string& s) {
    if (s == "loss_aware") return SamplingMode::loss_aware;
    if (s == "random") return SamplingMode::random;
    throw std::invalid_argument("unknown sampling mode: " + s);
}
std::string to_string(SamplingMode m) {
    return m == SamplingMode::loss_aware ? "loss_aware" : "random";
}

ReplayMode replay_mode_from_string(const std::string& s) {
    if (s == "experience_replay") return ReplayMode::experience_replay;
    if (s == "mix") return ReplayMode::mix;
    throw std::invalid_argument("unknown replay mode: " + s);
}
std::string to_string(ReplayMode m) {
    return m == ReplayMode::experience_replay ? "experience_replay" : "mix";
}

MemoryPolicy memory_policy_from_string(const std::string& s) {
    if (s == "equal_domain") return MemoryPolicy::equal_domain;
    if (s == "max_replacement") return MemoryPolicy::max_replacement;
    throw std::invalid_argument("unknown memory policy: " + s);
}
std::string to_string(MemoryPolicy m) {
    return m == MemoryPolicy::equal_domain ? "equal_domain" : "max_replacement";
}

StrategyConfig StrategyConfig::effective() const {
    StrategyConfig e = *this;
    if (e.method == Method::finetune) {
        e.rehearsal_enabled = false;
        e.kd_variant = KdVariant::none;
    }
    return e;
}

void StrategyConfig::validate() const {
    if (replay_ratio <= 0.0) throw std::invalid_argument("StrategyConfig: replay_ratio <= 0");
}

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params, const OptimConfig& cfg) : cfg_(cfg) {
    slots_.reserve(params.size());
    for (Parameter* p : params) {
        slots_.push_back({p, Matrix(p->value.rows, p->value.cols),
                          Matrix(p->value.rows, p->value.cols)});
    }
}

void AdamOptimizer::step(double lr) {
    ++t_;
    const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (Slot& s : slots_) {
        for (size_t i = 0; i < s.p->value.data.size(); ++i) {
            const double g = s.p->grad.data[i] + cfg_.weight_decay * s.p->value.data[i];
            s.m.data[i] = b1 * s.m.data[i] + (1.0 - b1) * g;
            s.v.data[i] = b2 * s.v.data[i] + (1.0 - b2) * g * g;
            const double mhat = s.m.data[i] / bc1;
            const double vhat = s.v.data[i] / bc2;
            s.p->value.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (Slot& s : slots_) s.p->zero_grad();
}

ContinualTrainer::ContinualTrainer(const EncoderConfig& encoder_cfg, const OptimConfig& optim_cfg,
                                   const StrategyConfig& strategy, const LossConfig& losses,
                                   int memory_capacity, uint64_t seed)
    : encoder_cfg_(encoder_cfg),
      optim_cfg_(optim_cfg),
      strategy_(strategy),
      losses_(losses),
      rng_(seed) {
    encoder_cfg.validate();
    optim_cfg.validate();
    strategy.validate();
    losses.validate();
    encoder_ = Encoder(encoder_cfg, rng_);
    head_ = LossPredictionHead(encoder_cfg.pool_dim(), encoder_cfg.head_hidden, rng_);
    buffer_ = ReplayBuffer(memory_capacity);
    encoder_opt_ = AdamOptimizer(encoder_.parameters(), optim_cfg);
    head_opt_ = AdamOptimizer(head_.parameters(), optim_cfg);
}

namespace {

// One mini-batch's submaps in row order (anchor, positive per pair).
struct BatchRows {
    std::vector<const Submap*> submaps;
    std::vector<const Matrix*> points;
    std::vector<long long> labels;
    std::vector<int> anchor_rows;  // even rows

    void add_pair(const Submap& anchor, const Submap& positive) {
        anchor_rows.push_back(static_cast<int>(submaps.size()));
        submaps.push_back(&anchor);
        points.push_back(&anchor.points);
        labels.push_back(anchor.place_label);
        submaps.push_back(&positive);
        points.push_back(&positive.points);
        labels.push_back(positive.place_label);
    }
    int rows() const { return static_cast<int>(submaps.size()); }
};

// Negative eligibility between batch rows: farther apart than the negative
// threshold (cross-domain distances are infinite).
std::vector<uint8_t> negative_mask(const BatchRows& batch, double neg_threshold) {
    const int b = batch.rows();
    std::vector<uint8_t> mask(static_cast<size_t>(b) * b, 0);
    for (int i = 0; i < b; ++i) {
        for (int j = i + 1; j < b; ++j) {
            if (place_distance(*batch.submaps[i], *batch.submaps[j]) > neg_threshold) {
                mask[static_cast<size_t>(i) * b + j] = 1;
                mask[static_cast<size_t>(j) * b + i] = 1;
            }
        }
    }
    return mask;
}

int count_active(const std::vector<double>& per_anchor) {
    int n = 0;
    for (double v : per_anchor) {
        if (v > 0.0) ++n;
    }
    return n;
}

}  // namespace

void ContinualTrainer::train_initial_domain(const std::vector<Submap>& domain_train,
                                            const ProtocolSpec& proto) {
    if (step_ != 0) throw std::logic_error("train_initial_domain: trainer already started");
    train_step(domain_train, proto, /*initial=*/true);
}

void ContinualTrainer::train_incremental_step(const std::vector<Submap>& domain_train,
                                              const ProtocolSpec& proto) {
    if (step_ < 1) throw std::logic_error("train_incremental_step: initial domain not trained");
    train_step(domain_train, proto, /*initial=*/false);
}

void ContinualTrainer::train_step(const std::vector<Submap>& train, const ProtocolSpec& proto,
                                  bool initial) {
    if (train.empty()) throw std::invalid_argument("train_step: empty domain");
    const StrategyConfig strat = strategy_.effective();
    const PairSet pairs =
        build_training_pairs(train, proto.pos_threshold_train, proto.neg_threshold_train);
    if (pairs.pairs.empty()) throw std::runtime_error("train_step: domain has no training pairs");

    const bool use_memory = !initial && strat.method == Method::kdf_plus;
    const bool mix = use_memory && strat.replay_mode == ReplayMode::mix;
    if (!initial) {
        snapshot_ = snapshot(encoder_);  // freeze the previous step's model
        if (strat.method == Method::kdf_plus && buffer_.size() == 0) {
            throw std::runtime_error("train_step: replay requested from an empty buffer");
        }
    }

    // Distillation targets are fixed for the whole step; embed the buffer
    // through the snapshot once.
    std::vector<const MemoryEntry*> stored = use_memory ? buffer_.entries()
                                                        : std::vector<const MemoryEntry*>{};
    Matrix old_desc_all;
    if (use_memory) {
        std::vector<const Matrix*> pts;
        for (const MemoryEntry* e : stored) {
            pts.push_back(&e->anchor.points);
            pts.push_back(&e->positive.points);
        }
        old_desc_all = snapshot_.embed_batch_eval(pts).descriptors;
    }
    auto stored_index = [&](const MemoryEntry* e) {
        for (size_t i = 0; i < stored.size(); ++i) {
            if (stored[i] == e) return static_cast<int>(i);
        }
        throw std::logic_error("train_step: replay entry not in buffer");
    };

    // The epoch pool: current-domain pairs, plus (mix ablation only) the
    // buffer entries as ordinary training pairs. Under experience replay the
    // memory stream is drawn per iteration instead.
    struct PoolItem {
        int pair_index;            // into pairs.pairs, or -1
        const MemoryEntry* entry;  // non-null for memory items
    };
    std::vector<PoolItem> pool;
    for (size_t i = 0; i < pairs.pairs.size(); ++i) pool.push_back({static_cast<int>(i), nullptr});
    if (mix) {
        for (const MemoryEntry* e : stored) pool.push_back({-1, e});
    }

    int batch_pairs = optim_cfg_.batch_start;
    for (int epoch = 0; epoch < optim_cfg_.epochs_per_step; ++epoch) {
        const double lr = learning_rate_at(optim_cfg_, epoch);
        const double lambda_t = lambda_at(losses_, epoch, optim_cfg_.epochs_per_step);
        std::shuffle(pool.begin(), pool.end(), rng_);

        long long contributing = 0, active = 0;
        for (size_t off = 0; off < pool.size(); off += batch_pairs) {
            const int n_pairs = static_cast<int>(std::min<size_t>(batch_pairs, pool.size() - off));
            if (n_pairs < 2) continue;

            // Current-domain pairs first, memory pairs as the tail block.
            BatchRows cur;
            std::vector<const MemoryEntry*> batch_entries;
            for (int k = 0; k < n_pairs; ++k) {
                const PoolItem& item = pool[off + k];
                if (item.entry == nullptr) {
                    const TrainingPair& p = pairs.pairs[item.pair_index];
                    cur.add_pair(train[p.anchor_index], train[p.positive_index]);
                } else {
                    batch_entries.push_back(item.entry);
                }
            }
            if (!mix && use_memory) {
                const int want =
                    std::max(1, static_cast<int>(std::lround(n_pairs * strat.replay_ratio)));
                batch_entries = buffer_.sample_replay_batch(want, rng_);
            }

            BatchRows mem;
            std::vector<double> mem_old_losses;
            for (const MemoryEntry* e : batch_entries) {
                mem.add_pair(e->anchor, e->positive);
                mem_old_losses.push_back(e->stored_old_loss);
            }

            // The task loss covers the current sub-batch under experience
            // replay, or everything drawn from the pool under mix.
            BatchRows task = cur;
            if (mix) {
                for (size_t i = 0; i < mem.submaps.size(); i += 2) {
                    task.add_pair(*mem.submaps[i], *mem.submaps[i + 1]);
                }
            }
            if (task.rows() < 4) continue;

            Tape tape;
            const Encoder::TapeEmbed task_emb = encoder_.embed_batch(tape, task.points);
            const std::vector<uint8_t> task_mask = negative_mask(task, proto.neg_threshold_train);
            TripletLoss tl;
            try {
                tl = triplet_batch_hard(tape, task_emb.descriptors, task.labels,
                                        losses_.triplet_margin, &task_mask);
            } catch (const std::runtime_error&) {
                continue;  // no valid triplet in this batch
            }

            Value mem_desc;
            if (use_memory && mem.rows() > 0) {
                mem_desc = mix ? tape.slice_rows(task_emb.descriptors, cur.rows(), mem.rows())
                               : encoder_.embed_batch(tape, mem.points).descriptors;
            }

            // Loss-prediction head on the current-domain rows, detached
            // unless the pass-through flag is set.
            std::optional<Value> mse;
            if (cur.rows() >= 2) {
                Value head_pred;
                if (strat.head_grad_to_encoder) {
                    Value pooled_cur = mix ? tape.slice_rows(task_emb.pooled, 0, cur.rows())
                                           : task_emb.pooled;
                    head_pred = head_.predict_tape_attached(tape, pooled_cur);
                } else {
                    Matrix pooled_cur(cur.rows(), task_emb.pooled.cols());
                    std::copy(task_emb.pooled.val().data.begin(),
                              task_emb.pooled.val().data.begin() +
                                  static_cast<size_t>(cur.rows()) * pooled_cur.cols,
                              pooled_cur.data.begin());
                    head_pred = head_.predict_tape(tape, pooled_cur);
                }
                std::vector<std::pair<int, int>> pred_rows;
                std::vector<double> pred_targets;
                for (size_t k = 0; k < tl.mining.anchor_rows.size(); ++k) {
                    if (tl.mining.anchor_rows[k] < cur.rows()) {
                        pred_rows.emplace_back(tl.mining.anchor_rows[k], 0);
                        pred_targets.push_back(tl.mining.per_anchor[k]);
                    }
                }
                if (!pred_rows.empty()) {
                    mse = loss_pred_mse(tape, tape.gather(head_pred, std::move(pred_rows)),
                                        pred_targets);
                }
            }

            std::optional<Value> kd;
            if (use_memory && mem.rows() > 0 && strat.kd_variant != KdVariant::none &&
                !(strat.kd_variant == KdVariant::ranking_surrogate && mem.rows() < 3)) {
                Matrix old_desc(mem.rows(), old_desc_all.cols);
                for (size_t i = 0; i < batch_entries.size(); ++i) {
                    const int src = 2 * stored_index(batch_entries[i]);
                    for (int j = 0; j < old_desc.cols; ++j) {
                        old_desc.at(static_cast<int>(2 * i), j) = old_desc_all.at(src, j);
                        old_desc.at(static_cast<int>(2 * i + 1), j) = old_desc_all.at(src + 1, j);
                    }
                }
                kd = kd_loss(tape, strat.kd_variant, old_desc, mem_desc, losses_.ranking_delta);
            }

            std::optional<Value> reh;
            if (use_memory && mem.rows() > 0 && strat.rehearsal_enabled) {
                try {
                    const TripletLoss mem_tl =
                        triplet_batch_hard(tape, mem_desc, mem.labels, losses_.triplet_margin,
                                           nullptr, &mem.anchor_rows);
                    std::vector<double> aligned_old;
                    aligned_old.reserve(mem_tl.mining.anchor_rows.size());
                    for (int row : mem_tl.mining.anchor_rows) {
                        aligned_old.push_back(mem_old_losses[row / 2]);
                    }
                    reh = rehearsal_loss(tape, mem_tl.per_anchor, aligned_old,
                                         losses_.rehearsal_margin);
                } catch (const std::runtime_error&) {
                    // memory sub-batch had no valid triplet
                }
            }

            LossBreakdown bd;
            Value total = total_objective(tape, tl.mean, kd, reh, lambda_t, losses_.omega, &bd);
            bd.l_losspred_mse = mse.has_value() ? mse->val().scalar() : 0.0;
            bd.per_anchor_pr = tl.mining.per_anchor;
            Value objective = mse.has_value() ? tape.add(total, *mse) : total;
            tape.backward(objective);
            encoder_opt_.step(lr);
            head_opt_.step(lr * optim_cfg_.head_lr_ratio);
            encoder_opt_.zero_grad();
            head_opt_.zero_grad();
            last_breakdown_ = std::move(bd);

            contributing += static_cast<long long>(tl.mining.per_anchor.size());
            active += count_active(tl.mining.per_anchor);
        }

        const double frac =
            contributing > 0 ? static_cast<double>(active) / contributing : 1.0;
        batch_pairs = next_batch_size(batch_pairs, frac, optim_cfg_);
    }

    if (strat.method == Method::kdf_plus) {
        if (!initial) refresh_old_losses(buffer_, encoder_, losses_);
        rebuild_memory(train, pairs);
        if (initial) refresh_old_losses(buffer_, encoder_, losses_);
    }
    ++step_;
}

void ContinualTrainer::rebuild_memory(const std::vector<Submap>& train, const PairSet& pairs) {
    BatchRows all;
    for (const TrainingPair& p : pairs.pairs) {
        all.add_pair(train[p.anchor_index], train[p.positive_index]);
    }
    const Encoder::EvalEmbed emb = encoder_.embed_batch_eval(all.points);

    // True per-candidate task losses under the just-finished model.
    std::vector<double> true_losses(pairs.pairs.size(), 0.0);
    try {
        const TripletMining mining = mine_batch_hard(emb.descriptors, all.labels,
                                                     losses_.triplet_margin, nullptr,
                                                     &all.anchor_rows);
        for (size_t k = 0; k < mining.anchor_rows.size(); ++k) {
            true_losses[mining.anchor_rows[k] / 2] = mining.per_anchor[k];
        }
    } catch (const std::runtime_error&) {
        // single-place domain: losses stay zero
    }

    // Head predictions on anchor pooled features.
    Matrix anchor_pooled(static_cast<int>(pairs.pairs.size()), emb.pooled.cols);
    for (size_t k = 0; k < pairs.pairs.size(); ++k) {
        for (int j = 0; j < emb.pooled.cols; ++j) {
            anchor_pooled.at(static_cast<int>(k), j) = emb.pooled.at(all.anchor_rows[k], j);
        }
    }
    const Matrix preds = head_.predict_eval(anchor_pooled);

    const StrategyConfig strat = strategy_.effective();
    std::vector<double> weights(pairs.pairs.size(), 1.0);
    if (strat.sampling == SamplingMode::loss_aware) {
        for (size_t k = 0; k < weights.size(); ++k) {
            weights[k] = strat.select_with_true_loss ? true_losses[k]
                                                     : preds.at(static_cast<int>(k), 0);
        }
    }

    std::vector<MemoryEntry> candidates;
    candidates.reserve(pairs.pairs.size());
    for (size_t k = 0; k < pairs.pairs.size(); ++k) {
        MemoryEntry e;
        e.anchor = train[pairs.pairs[k].anchor_index];
        e.positive = train[pairs.pairs[k].positive_index];
        e.domain_id = e.anchor.domain_id;
        e.stored_old_loss = true_losses[k];
        e.insertion_pred_loss = preds.at(static_cast<int>(k), 0);
        e.insertion_step = step_ + 1;
        candidates.push_back(std::move(e));
    }

    const int T = static_cast<int>(buffer_.stored_domains().size()) + 1;
    if (strat.memory_policy == MemoryPolicy::max_replacement) {
        buffer_.update_max_replacement(std::move(candidates), weights, T, rng_);
    } else {
        buffer_.update_after_domain(std::move(candidates), weights, T, rng_);
    }
}

RunResult run_protocol(DatasetProvider& provider, const ProtocolSpec& proto,
                       const EncoderConfig& encoder_cfg, const OptimConfig& optim_cfg,
                       const StrategyConfig& strategy, const LossConfig& losses,
                       int memory_capacity, uint64_t seed, const std::string& artifact_dir) {
    proto.validate();
    const int T = static_cast<int>(proto.domains.size());
    if (provider.domain_count() != T) {
        throw std::invalid_argument("run_protocol: provider/protocol domain count mismatch");
    }
    if (!artifact_dir.empty()) std::filesystem::create_directories(artifact_dir);

    // Test splits are cached up front; training data is fetched per step.
    std::vector<std::vector<Submap>> test_sets(T);
    for (int t = 0; t < T; ++t) test_sets[t] = filter_split(provider.load_domain(t), Split::test);

    ContinualTrainer trainer(encoder_cfg, optim_cfg, strategy, losses, memory_capacity, seed);
    RunResult result;
    result.r = RMatrix(T);

    for (int t = 0; t < T; ++t) {
        const auto start = std::chrono::steady_clock::now();
        const std::vector<Submap> domain = provider.load_domain(t);
        const std::vector<Submap> train = filter_split(domain, Split::train);
        if (t == 0) {
            trainer.train_initial_domain(train, proto);
        } else {
            trainer.train_incremental_step(train, proto);
        }
        const auto stop = std::chrono::steady_clock::now();
        result.step_wall_seconds.push_back(std::chrono::duration<double>(stop - start).count());

        for (int tt = 0; tt < T; ++tt) {
            const std::vector<const Submap*> database = filter_pass(test_sets[tt], Pass::A);
            const std::vector<const Submap*> queries = filter_pass(test_sets[tt], Pass::B);
            result.r.at(t, tt) =
                recall_at_1(queries, database, trainer.encoder(), proto.pos_threshold_test);
        }

        if (!artifact_dir.empty()) {
            save_checkpoint(artifact_dir + "/checkpoint_step_" + std::to_string(t + 1) + ".json",
                            trainer.encoder(), trainer.head());
            trainer.buffer().dump_to_file(artifact_dir + "/buffer_step_" + std::to_string(t + 1) +
                                          ".json");
        }
    }
    return result;
}

}  // namespace kdfp

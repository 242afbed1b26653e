#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "kdfp/data.hpp"
#include "kdfp/eval.hpp"
#include "kdfp/losses.hpp"
#include "kdfp/model.hpp"
#include "kdfp/replay.hpp"

namespace kdfp {

struct OptimConfig {
    double learning_rate = 1e-4;
    double lr_drop_factor = 0.1;  // applied at half of the step's epochs
    double weight_decay = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double head_lr_ratio = 0.5;
    int epochs_per_step = 20;
    int batch_start = 16;
    double batch_growth = 1.4;
    int batch_cap = 256;
    double expansion_threshold = 0.7;

    void validate() const;
};

// Backbone learning rate for an epoch of the current step.
double learning_rate_at(const OptimConfig& cfg, int epoch);

// Batch expansion: grow by the configured factor when the previous epoch's
// active-triplet fraction fell below the expansion threshold.
int next_batch_size(int current, double last_active_fraction, const OptimConfig& cfg);

enum class Method { finetune, kdf_plus };
enum class SamplingMode { loss_aware, random };
enum class ReplayMode { experience_replay, mix };
enum class MemoryPolicy { equal_domain, max_replacement };

Method method_from_string(const std::string& s);
std::string to_string(Method m);
SamplingMode sampling_from_string(const std::string& s);
std::string to_string(SamplingMode m);
ReplayMode replay_mode_from_string(const std::string& s);
std::string to_string(ReplayMode m);
MemoryPolicy memory_policy_from_string(const std::string& s);
std::string to_string(MemoryPolicy m);

struct StrategyConfig {
    Method method = Method::kdf_plus;
    SamplingMode sampling = SamplingMode::loss_aware;
    bool rehearsal_enabled = true;
    ReplayMode replay_mode = ReplayMode::experience_replay;
    MemoryPolicy memory_policy = MemoryPolicy::equal_domain;
    KdVariant kd_variant = KdVariant::ranking_surrogate;
    // Selection-time weights from true per-anchor losses instead of head
    // predictions (comparison flag).
    bool select_with_true_loss = false;
    // Let the head's MSE gradient reach the backbone (off by default; the
    // pooled features are detached before entering the head).
    bool head_grad_to_encoder = false;
    double replay_ratio = 1.0;  // replay pairs per current-domain pair

    // finetune forces every continual mechanism off.
    StrategyConfig effective() const;
    void validate() const;
};

// Adam with coupled L2 weight decay.
class AdamOptimizer {
  public:
    AdamOptimizer() = default;
    AdamOptimizer(std::vector<Parameter*> params, const OptimConfig& cfg);

    void step(double lr);
    void zero_grad();

  private:
    struct Slot {
        Parameter* p;
        Matrix m, v;
    };
    std::vector<Slot> slots_;
    OptimConfig cfg_;
    long long t_ = 0;
};

// Runs the continual protocol step by step: initial-domain training, then
// incremental steps with experience replay, distillation against the frozen
// previous model, and rehearsal enhancement over the buffer.
class ContinualTrainer {
  public:
    ContinualTrainer(const EncoderConfig& encoder_cfg, const OptimConfig& optim_cfg,
                     const StrategyConfig& strategy, const LossConfig& losses,
                     int memory_capacity, uint64_t seed);

    void train_initial_domain(const std::vector<Submap>& domain_train, const ProtocolSpec& proto);
    void train_incremental_step(const std::vector<Submap>& domain_train, const ProtocolSpec& proto);

    const Encoder& encoder() const { return encoder_; }
    Encoder& encoder_mut() { return encoder_; }
    const LossPredictionHead& head() const { return head_; }
    LossPredictionHead& head_mut() { return head_; }
    const ReplayBuffer& buffer() const { return buffer_; }
    const FrozenEncoder& previous_model() const { return snapshot_; }
    int steps_completed() const { return step_; }
    const LossBreakdown& last_breakdown() const { return last_breakdown_; }

  private:
    void train_step(const std::vector<Submap>& domain_train, const ProtocolSpec& proto,
                    bool initial);
    void rebuild_memory(const std::vector<Submap>& train, const PairSet& pairs);

    EncoderConfig encoder_cfg_;
    OptimConfig optim_cfg_;
    StrategyConfig strategy_;
    LossConfig losses_;
    std::mt19937_64 rng_;
    Encoder encoder_;
    LossPredictionHead head_;
    FrozenEncoder snapshot_;
    ReplayBuffer buffer_;
    AdamOptimizer encoder_opt_;
    AdamOptimizer head_opt_;
    int step_ = 0;
    LossBreakdown last_breakdown_;
};

// Feeds domain datasets to the protocol runner. Training data for step t is
// fetched when step t starts; earlier domains are only reachable through the
// replay buffer.
class DatasetProvider {
  public:
    virtual ~DatasetProvider() = default;
    virtual std::vector<Submap> load_domain(int index) = 0;
    virtual int domain_count() const = 0;
};

class InMemoryProvider : public DatasetProvider {
  public:
    explicit InMemoryProvider(std::vector<std::vector<Submap>> domains)
        : domains_(std::move(domains)) {}
    std::vector<Submap> load_domain(int index) override { return domains_.at(index); }
    int domain_count() const override { return static_cast<int>(domains_.size()); }

  private:
    std::vector<std::vector<Submap>> domains_;
};

class FileProvider : public DatasetProvider {
  public:
    explicit FileProvider(std::vector<std::string> paths) : paths_(std::move(paths)) {}
    std::vector<Submap> load_domain(int index) override { return load_dataset(paths_.at(index)); }
    int domain_count() const override { return static_cast<int>(paths_.size()); }

  private:
    std::vector<std::string> paths_;
};

struct RunResult {
    RMatrix r;
    std::vector<double> step_wall_seconds;
};

// Full protocol: train each domain in order, evaluate every domain's test
// set after each step (row l of the R-matrix), and, when artifact_dir is
// nonempty, drop per-step checkpoints and buffer dumps there.
RunResult run_protocol(DatasetProvider& provider, const ProtocolSpec& proto,
                       const EncoderConfig& encoder_cfg, const OptimConfig& optim_cfg,
                       const StrategyConfig& strategy, const LossConfig& losses,
                       int memory_capacity, uint64_t seed, const std::string& artifact_dir = "");

}  // namespace kdfp

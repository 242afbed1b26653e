#pragma once

#include <random>
#include <string>
#include <vector>

#include "kdfp/autodiff.hpp"
#include "kdfp/matrix.hpp"

namespace kdfp {

struct EncoderConfig {
    int point_dim = 3;
    std::vector<int> mlp_widths = {32, 64};
    double gem_p = 3.0;
    int descriptor_dim = 32;
    int head_hidden = 16;

    int pool_dim() const { return mlp_widths.back(); }
    void validate() const;
};

struct LinearLayer {
    Parameter weight;  // in x out
    Parameter bias;    // 1 x out

    LinearLayer() = default;
    LinearLayer(int in, int out, std::mt19937_64& rng);
};

// Embedding backbone: shared per-point MLP -> GEM pooling -> linear
// projection -> L2 normalization. The pooled feature (GEM output, before
// projection) is surfaced separately as the loss-prediction head's input.
class Encoder {
  public:
    Encoder() = default;
    Encoder(const EncoderConfig& cfg, std::mt19937_64& rng);

    struct TapeEmbed {
        Value descriptors;  // b x descriptor_dim, unit rows
        Value pooled;       // b x pool_dim
    };
    struct EvalEmbed {
        Matrix descriptors;
        Matrix pooled;
    };

    // Training-time forward; records the batch on the tape.
    TapeEmbed embed_batch(Tape& tape, const std::vector<const Matrix*>& point_sets);
    // Gradient-free forward; numerically identical to the tape path.
    EvalEmbed embed_batch_eval(const std::vector<const Matrix*>& point_sets) const;
    // Single-submap convenience wrapper.
    EvalEmbed embed_eval(const Matrix& points) const;

    std::vector<Parameter*> parameters();
    const EncoderConfig& config() const { return cfg_; }

    EncoderConfig cfg_;
    std::vector<LinearLayer> mlp_;
    LinearLayer projection_;
};

// Immutable deep copy of an encoder, for distillation targets. Runs the
// eval-mode forward only; later training of the source cannot touch it.
class FrozenEncoder {
  public:
    FrozenEncoder() = default;
    explicit FrozenEncoder(const Encoder& live) : copy_(live) {}

    Encoder::EvalEmbed embed_batch_eval(const std::vector<const Matrix*>& point_sets) const {
        return copy_.embed_batch_eval(point_sets);
    }
    const EncoderConfig& config() const { return copy_.config(); }

  private:
    Encoder copy_;
};

inline FrozenEncoder snapshot(const Encoder& encoder) { return FrozenEncoder(encoder); }

// Per-sample loss estimator: Linear -> BatchNorm -> ReLU -> Linear on pooled
// features. Its input is detached by the callers, so its MSE objective never
// reaches the encoder.
class LossPredictionHead {
  public:
    LossPredictionHead() = default;
    LossPredictionHead(int pool_dim, int hidden, std::mt19937_64& rng);

    // Train-mode forward on detached pooled features (batch >= 2).
    Value predict_tape(Tape& tape, const Matrix& pooled);
    // Train-mode forward on a live pooled node; only used when the head's
    // gradient is deliberately allowed into the backbone.
    Value predict_tape_attached(Tape& tape, Value pooled);
    // Eval-mode forward using running statistics.
    Matrix predict_eval(const Matrix& pooled) const;

    std::vector<Parameter*> parameters();
    size_t parameter_count() const;
    const BatchNormState& bn_state() const { return bn_state_; }

    LinearLayer linear1_;
    Parameter bn_gamma_;  // 1 x hidden
    Parameter bn_beta_;   // 1 x hidden
    BatchNormState bn_state_;
    LinearLayer linear2_;
    int pool_dim_ = 0;
    int hidden_ = 0;
};

// Checkpoint round trip. JSON with shape headers; values survive bit-exactly.
void save_checkpoint(const std::string& path, const Encoder& encoder,
                     const LossPredictionHead& head);
void load_checkpoint(const std::string& path, Encoder& encoder, LossPredictionHead& head);

}  // namespace kdfp

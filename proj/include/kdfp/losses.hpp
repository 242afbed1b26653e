#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kdfp/autodiff.hpp"
#include "kdfp/matrix.hpp"

namespace kdfp {

enum class KdVariant { ranking_surrogate, pairwise_distance, feature_l2, none };
enum class LambdaSchedule { constant, linear_decay };

KdVariant kd_variant_from_string(const std::string& s);
std::string to_string(KdVariant v);

struct LossConfig {
    double triplet_margin = 0.2;      // cosine-distance space
    double rehearsal_margin = 0.1;    // m
    double lambda = 1.0;              // distillation weight
    LambdaSchedule lambda_schedule = LambdaSchedule::constant;
    double omega = 0.08;              // rehearsal weight
    KdVariant kd_variant = KdVariant::ranking_surrogate;
    double ranking_delta = 0.01;

    void validate() const;
};

// Distillation weight for a given epoch of the current step.
double lambda_at(const LossConfig& cfg, int epoch, int epochs_per_step);

struct LossBreakdown {
    double l_pr = 0.0;
    double l_kd = 0.0;
    double l_rehearsal = 0.0;
    double l_losspred_mse = 0.0;
    double l_total = 0.0;
    std::vector<double> per_anchor_pr;
};

// Batch-hard triplet mining on unit-norm descriptors. Distance is
// 1 - cosine similarity. Every row with at least one positive (same label,
// other row) and one valid negative contributes one loss; rows without a
// valid triplet are skipped.
//
// neg_mask, when given, is a b x b row-major byte map where nonzero marks
// (anchor, candidate) as an eligible negative; by default any differing
// label is eligible. anchor_rows, when given, restricts which rows are
// treated as anchors.
struct TripletMining {
    std::vector<int> anchor_rows;
    std::vector<int> hardest_pos;
    std::vector<int> hardest_neg;
    std::vector<double> per_anchor;
    double mean = 0.0;
    double active_fraction = 0.0;
};

TripletMining mine_batch_hard(const Matrix& descriptors, const std::vector<long long>& labels,
                              double margin, const std::vector<uint8_t>* neg_mask = nullptr,
                              const std::vector<int>* anchor_rows = nullptr);

struct TripletLoss {
    Value per_anchor;  // k x 1
    Value mean;        // 1 x 1
    TripletMining mining;
};

TripletLoss triplet_batch_hard(Tape& tape, Value descriptors,
                               const std::vector<long long>& labels, double margin,
                               const std::vector<uint8_t>* neg_mask = nullptr,
                               const std::vector<int>* anchor_rows = nullptr);

// MSE between head predictions (b x 1 node) and detached targets.
Value loss_pred_mse(Tape& tape, Value predicted, const std::vector<double>& targets);

// Rehearsal hinge: mean over samples of max(0, m - (old - new)). The new
// per-sample losses carry gradient; old values are stored constants.
Value rehearsal_loss(Tape& tape, Value l_pr_new, const std::vector<double>& l_pr_old, double m);
double rehearsal_loss_value(const std::vector<double>& l_pr_old,
                            const std::vector<double>& l_pr_new, double m);

// Distillation between frozen (old) and live (new) unit-norm descriptors.
Value kd_loss(Tape& tape, KdVariant variant, const Matrix& old_desc, Value new_desc,
              double ranking_delta);

// l_total = l_pr + lambda_t * l_kd + omega * l_rehearsal. Absent memory-side
// terms enter as zero. The head MSE is optimized alongside but reported
// separately, never inside l_total.
Value total_objective(Tape& tape, Value l_pr, std::optional<Value> l_kd,
                      std::optional<Value> l_rehearsal, double lambda_t, double omega,
                      LossBreakdown* breakdown = nullptr);

double total_objective_value(double l_pr, double l_kd, double l_rehearsal, double lambda_t,
                             double omega);

}  // namespace kdfp

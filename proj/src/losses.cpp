#include "kdfp/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace kdfp {

KdVariant kd_variant_from_string(const std::string& s) {
    if (s == "ranking_surrogate") return KdVariant::ranking_surrogate;
    if (s == "pairwise_distance") return KdVariant::pairwise_distance;
    if (s == "feature_l2") return KdVariant::feature_l2;
    if (s == "none") return KdVariant::none;
    throw std::invalid_argument("unknown kd_variant: " + s);
}

std::string to_string(KdVariant v) {
    switch (v) {
        case KdVariant::ranking_surrogate: return "ranking_surrogate";
        case KdVariant::pairwise_distance: return "pairwise_distance";
        case KdVariant::feature_l2: return "feature_l2";
        case KdVariant::none: return "none";
    }
    return "none";
}

void LossConfig::validate() const {
    if (triplet_margin < 0.0) throw std::invalid_argument("LossConfig: triplet_margin < 0");
    if (rehearsal_margin < 0.0) throw std::invalid_argument("LossConfig: rehearsal_margin < 0");
    if (lambda < 0.0) throw std::invalid_argument("LossConfig: lambda < 0");
    if (omega < 0.0) throw std::invalid_argument("LossConfig: omega < 0");
    if (ranking_delta < 0.0) throw std::invalid_argument("LossConfig: ranking_delta < 0");
}

double lambda_at(const LossConfig& cfg, int epoch, int epochs_per_step) {
    if (cfg.lambda_schedule == LambdaSchedule::constant) return cfg.lambda;
    if (epochs_per_step <= 0) return cfg.lambda;
    const double frac = static_cast<double>(epoch) / epochs_per_step;
    return cfg.lambda * std::max(0.0, 1.0 - frac);
}

namespace {

// Shared mining core over a precomputed cosine-similarity matrix.
TripletMining mine_from_similarity(const Matrix& sim, const std::vector<long long>& labels,
                                   double margin, const std::vector<uint8_t>* neg_mask,
                                   const std::vector<int>* anchor_rows) {
    const int b = sim.rows;
    if (static_cast<int>(labels.size()) != b) {
        throw std::invalid_argument("triplet: label count mismatch");
    }
    if (b < 2) throw std::invalid_argument("triplet: batch size must be >= 2");
    if (neg_mask != nullptr && static_cast<int>(neg_mask->size()) != b * b) {
        throw std::invalid_argument("triplet: negative mask size mismatch");
    }

    std::vector<int> anchors;
    if (anchor_rows != nullptr) {
        anchors = *anchor_rows;
    } else {
        anchors.resize(b);
        for (int i = 0; i < b; ++i) anchors[i] = i;
    }

    TripletMining out;
    int active = 0;
    double total = 0.0;
    for (int a : anchors) {
        if (a < 0 || a >= b) throw std::invalid_argument("triplet: anchor row out of range");
        int best_pos = -1, best_neg = -1;
        double pos_sim = 0.0, neg_sim = 0.0;
        for (int j = 0; j < b; ++j) {
            if (j == a) continue;
            if (labels[j] == labels[a]) {
                if (best_pos < 0 || sim.at(a, j) < pos_sim) {
                    best_pos = j;
                    pos_sim = sim.at(a, j);
                }
            } else {
                const bool eligible =
                    neg_mask != nullptr ? (*neg_mask)[static_cast<size_t>(a) * b + j] != 0 : true;
                if (!eligible) continue;
                if (best_neg < 0 || sim.at(a, j) > neg_sim) {
                    best_neg = j;
                    neg_sim = sim.at(a, j);
                }
            }
        }
        if (best_pos < 0 || best_neg < 0) continue;
        const double loss = std::max(0.0, neg_sim - pos_sim + margin);
        out.anchor_rows.push_back(a);
        out.hardest_pos.push_back(best_pos);
        out.hardest_neg.push_back(best_neg);
        out.per_anchor.push_back(loss);
        total += loss;
        if (loss > 0.0) ++active;
    }
    if (out.anchor_rows.empty()) {
        throw std::runtime_error("triplet: no anchor has a valid (positive, negative) pair");
    }
    out.mean = total / out.anchor_rows.size();
    out.active_fraction = static_cast<double>(active) / out.anchor_rows.size();
    return out;
}

}  // namespace

TripletMining mine_batch_hard(const Matrix& descriptors, const std::vector<long long>& labels,
                              double margin, const std::vector<uint8_t>* neg_mask,
                              const std::vector<int>* anchor_rows) {
    const Matrix sim = matmul(descriptors, transpose(descriptors));
    return mine_from_similarity(sim, labels, margin, neg_mask, anchor_rows);
}

TripletLoss triplet_batch_hard(Tape& tape, Value descriptors,
                               const std::vector<long long>& labels, double margin,
                               const std::vector<uint8_t>* neg_mask,
                               const std::vector<int>* anchor_rows) {
    Value sim = tape.matmul(descriptors, tape.transpose(descriptors));
    TripletMining mining = mine_from_similarity(sim.val(), labels, margin, neg_mask, anchor_rows);

    std::vector<std::pair<int, int>> pos_idx, neg_idx;
    pos_idx.reserve(mining.anchor_rows.size());
    neg_idx.reserve(mining.anchor_rows.size());
    for (size_t k = 0; k < mining.anchor_rows.size(); ++k) {
        pos_idx.emplace_back(mining.anchor_rows[k], mining.hardest_pos[k]);
        neg_idx.emplace_back(mining.anchor_rows[k], mining.hardest_neg[k]);
    }
    Value s_pos = tape.gather(sim, std::move(pos_idx));
    Value s_neg = tape.gather(sim, std::move(neg_idx));
    Value per_anchor = tape.hinge(tape.add_scalar(tape.sub(s_neg, s_pos), margin));
    return {per_anchor, tape.mean_all(per_anchor), std::move(mining)};
}

Value loss_pred_mse(Tape& tape, Value predicted, const std::vector<double>& targets) {
    if (predicted.cols() != 1) throw std::invalid_argument("loss_pred_mse: predictions must be b x 1");
    if (predicted.rows() != static_cast<int>(targets.size())) {
        throw std::invalid_argument("loss_pred_mse: length mismatch");
    }
    Matrix t(static_cast<int>(targets.size()), 1);
    for (size_t i = 0; i < targets.size(); ++i) t.at(static_cast<int>(i), 0) = targets[i];
    return tape.mean_all(tape.squared_diff(predicted, tape.constant(std::move(t))));
}

Value rehearsal_loss(Tape& tape, Value l_pr_new, const std::vector<double>& l_pr_old, double m) {
    if (l_pr_new.cols() != 1) throw std::invalid_argument("rehearsal_loss: losses must be k x 1");
    if (l_pr_new.rows() != static_cast<int>(l_pr_old.size())) {
        throw std::invalid_argument("rehearsal_loss: length mismatch");
    }
    Matrix old_col(static_cast<int>(l_pr_old.size()), 1);
    for (size_t i = 0; i < l_pr_old.size(); ++i) {
        if (!std::isfinite(l_pr_old[i])) {
            throw std::invalid_argument("rehearsal_loss: non-finite stored loss");
        }
        old_col.at(static_cast<int>(i), 0) = l_pr_old[i];
    }
    // max(0, m - (old - new)) == max(0, new - old + m)
    Value gap = tape.add_scalar(tape.sub(l_pr_new, tape.constant(std::move(old_col))), m);
    return tape.mean_all(tape.hinge(gap));
}

double rehearsal_loss_value(const std::vector<double>& l_pr_old,
                            const std::vector<double>& l_pr_new, double m) {
    if (l_pr_old.size() != l_pr_new.size()) {
        throw std::invalid_argument("rehearsal_loss: length mismatch");
    }
    if (l_pr_old.empty()) throw std::invalid_argument("rehearsal_loss: empty");
    double total = 0.0;
    for (size_t i = 0; i < l_pr_old.size(); ++i) {
        total += std::max(0.0, m - (l_pr_old[i] - l_pr_new[i]));
    }
    return total / l_pr_old.size();
}

Value kd_loss(Tape& tape, KdVariant variant, const Matrix& old_desc, Value new_desc,
              double ranking_delta) {
    if (variant == KdVariant::none) return tape.constant(Matrix(1, 1));
    if (old_desc.rows != new_desc.rows() || old_desc.cols != new_desc.cols()) {
        throw std::invalid_argument("kd_loss: descriptor shape mismatch");
    }
    const int b = old_desc.rows;
    switch (variant) {
        case KdVariant::feature_l2:
            return tape.mean_all(tape.squared_diff(new_desc, tape.constant(old_desc)));
        case KdVariant::pairwise_distance: {
            if (b < 2) throw std::invalid_argument("kd_loss: pairwise_distance needs b >= 2");
            Value sim_new = tape.matmul(new_desc, tape.transpose(new_desc));
            Matrix sim_old = matmul(old_desc, transpose(old_desc));
            Value sq = tape.squared_diff(sim_new, tape.constant(std::move(sim_old)));
            Matrix offdiag = Matrix::full(b, b, 1.0);
            for (int i = 0; i < b; ++i) offdiag.at(i, i) = 0.0;
            Value masked = tape.hadamard(sq, tape.constant(std::move(offdiag)));
            const double rescale = static_cast<double>(b) * b / (static_cast<double>(b) * b - b);
            return tape.scale(tape.mean_all(masked), rescale);
        }
        case KdVariant::ranking_surrogate: {
            Value sim_new = tape.matmul(new_desc, tape.transpose(new_desc));
            Matrix sim_old = matmul(old_desc, transpose(old_desc));
            return tape.ranking_hinge(sim_new, sim_old, ranking_delta);
        }
        case KdVariant::none: break;
    }
    return tape.constant(Matrix(1, 1));
}

Value total_objective(Tape& tape, Value l_pr, std::optional<Value> l_kd,
                      std::optional<Value> l_rehearsal, double lambda_t, double omega,
                      LossBreakdown* breakdown) {
    if (lambda_t < 0.0 || omega < 0.0) {
        throw std::invalid_argument("total_objective: negative lambda or omega");
    }
    Value total = l_pr;
    double kd_val = 0.0, reh_val = 0.0;
    if (l_kd.has_value() && lambda_t != 0.0) {
        total = tape.add(total, tape.scale(*l_kd, lambda_t));
    }
    if (l_kd.has_value()) kd_val = l_kd->val().scalar();
    if (l_rehearsal.has_value() && omega != 0.0) {
        total = tape.add(total, tape.scale(*l_rehearsal, omega));
    }
    if (l_rehearsal.has_value()) reh_val = l_rehearsal->val().scalar();
    if (breakdown != nullptr) {
        breakdown->l_pr = l_pr.val().scalar();
        breakdown->l_kd = kd_val;
        breakdown->l_rehearsal = reh_val;
        breakdown->l_total = total.val().scalar();
    }
    return total;
}

double total_objective_value(double l_pr, double l_kd, double l_rehearsal, double lambda_t,
                             double omega) {
    if (lambda_t < 0.0 || omega < 0.0) {
        throw std::invalid_argument("total_objective: negative lambda or omega");
    }
    return l_pr + lambda_t * l_kd + omega * l_rehearsal;
}

}  // namespace kdfp

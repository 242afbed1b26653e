#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kdfp/data.hpp"
#include "kdfp/model.hpp"

namespace kdfp {

// R[l][t]: Recall@1 (percent) of task t's test set under the step-l model.
// All tasks are evaluated at every step, including before they are trained.
struct RMatrix {
    int T = 0;
    std::vector<double> values;  // T*T row-major

    RMatrix() = default;
    explicit RMatrix(int t) : T(t), values(static_cast<size_t>(t) * t, 0.0) {}

    double& at(int l, int t) { return values[static_cast<size_t>(l) * T + t]; }
    double at(int l, int t) const { return values[static_cast<size_t>(l) * T + t]; }
};

// How the Forgetting score's per-task maximum ranges over steps:
//   eq8_literal: l in {1..t}   (includes the task's zero-shot evaluations)
//   standard:    l in {t..T-1} (only steps at or after the task was trained)
enum class ForgettingConvention { eq8_literal, standard };

ForgettingConvention convention_from_string(const std::string& s);
std::string to_string(ForgettingConvention c);

// Nearest-neighbor retrieval by cosine similarity over unit descriptors.
// A query succeeds when the retrieved submap's ground-truth place lies
// within the test threshold. Ties go to the lowest database id.
double recall_at_1(const std::vector<const Submap*>& queries,
                   const std::vector<const Submap*>& database, const Encoder& model,
                   double pos_threshold_test);

// Same computation from precomputed descriptor rows (one per submap).
double recall_at_1_from_descriptors(const Matrix& query_desc,
                                    const std::vector<const Submap*>& queries,
                                    const Matrix& db_desc,
                                    const std::vector<const Submap*>& database,
                                    double pos_threshold_test);

// mR@1: mean of the last R-matrix row.
double mean_recall(const RMatrix& r);

// Forgetting score; null when T == 1.
std::optional<double> forgetting(const RMatrix& r,
                                 ForgettingConvention convention = ForgettingConvention::eq8_literal);

// CSV emission. R-matrix: header "step,task,recall_at_1", 1-indexed rows.
std::string rmatrix_csv(const RMatrix& r);
void write_rmatrix_csv(const std::string& path, const RMatrix& r);

struct SummaryRow {
    std::string method;
    uint64_t seed = 0;
    double mr_at_1 = 0.0;
    std::optional<double> forgetting;
};

// Summary: header "method,seed,mr_at_1,forgetting"; null forgetting prints
// as an empty field.
std::string summary_csv(const std::vector<SummaryRow>& rows);

}  // namespace kdfp

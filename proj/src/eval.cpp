#include "kdfp/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace kdfp {

ForgettingConvention convention_from_string(const std::string& s) {
    if (s == "eq8-literal") return ForgettingConvention::eq8_literal;
    if (s == "standard") return ForgettingConvention::standard;
    throw std::invalid_argument("unknown forgetting convention: " + s);
}

std::string to_string(ForgettingConvention c) {
    return c == ForgettingConvention::eq8_literal ? "eq8-literal" : "standard";
}

double recall_at_1_from_descriptors(const Matrix& query_desc,
                                    const std::vector<const Submap*>& queries,
                                    const Matrix& db_desc,
                                    const std::vector<const Submap*>& database,
                                    double pos_threshold_test) {
    if (database.empty()) throw std::invalid_argument("recall_at_1: empty database");
    if (queries.empty()) throw std::invalid_argument("recall_at_1: no queries");
    if (query_desc.rows != static_cast<int>(queries.size()) ||
        db_desc.rows != static_cast<int>(database.size())) {
        throw std::invalid_argument("recall_at_1: descriptor row count mismatch");
    }

    // Visit database entries in ascending id so similarity ties resolve to
    // the lowest id.
    std::vector<int> order(database.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return database[a]->id < database[b]->id; });

    const Matrix sim = matmul(query_desc, transpose(db_desc));
    int successes = 0;
    for (size_t q = 0; q < queries.size(); ++q) {
        int best = order[0];
        double best_sim = sim.at(static_cast<int>(q), order[0]);
        for (size_t k = 1; k < order.size(); ++k) {
            const double s = sim.at(static_cast<int>(q), order[k]);
            if (s > best_sim) {
                best_sim = s;
                best = order[k];
            }
        }
        if (place_distance(*queries[q], *database[best]) <= pos_threshold_test) ++successes;
    }
    return 100.0 * successes / static_cast<double>(queries.size());
}

double recall_at_1(const std::vector<const Submap*>& queries,
                   const std::vector<const Submap*>& database, const Encoder& model,
                   double pos_threshold_test) {
    if (database.empty()) throw std::invalid_argument("recall_at_1: empty database");
    if (queries.empty()) throw std::invalid_argument("recall_at_1: no queries");

    std::vector<const Matrix*> qpts, dpts;
    for (const Submap* s : queries) qpts.push_back(&s->points);
    for (const Submap* s : database) dpts.push_back(&s->points);
    const Matrix qd = model.embed_batch_eval(qpts).descriptors;
    const Matrix dd = model.embed_batch_eval(dpts).descriptors;
    return recall_at_1_from_descriptors(qd, queries, dd, database, pos_threshold_test);
}

double mean_recall(const RMatrix& r) {
    if (r.T < 1) throw std::invalid_argument("mean_recall: empty R-matrix");
    double s = 0.0;
    for (int t = 0; t < r.T; ++t) s += r.at(r.T - 1, t);
    return s / r.T;
}

std::optional<double> forgetting(const RMatrix& r, ForgettingConvention convention) {
    if (r.T < 1) throw std::invalid_argument("forgetting: empty R-matrix");
    if (r.T == 1) return std::nullopt;
    double total = 0.0;
    for (int t = 0; t < r.T - 1; ++t) {
        const int l_begin = convention == ForgettingConvention::eq8_literal ? 0 : t;
        const int l_end = convention == ForgettingConvention::eq8_literal ? t : r.T - 2;
        double best = r.at(l_begin, t);
        for (int l = l_begin; l <= l_end; ++l) best = std::max(best, r.at(l, t));
        total += best - r.at(r.T - 1, t);
    }
    return total / (r.T - 1);
}

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::string rmatrix_csv(const RMatrix& r) {
    std::string out = "step,task,recall_at_1\n";
    for (int l = 0; l < r.T; ++l) {
        for (int t = 0; t < r.T; ++t) {
            out += std::to_string(l + 1) + "," + std::to_string(t + 1) + "," +
                   format_double(r.at(l, t)) + "\n";
        }
    }
    return out;
}

void write_rmatrix_csv(const std::string& path, const RMatrix& r) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_rmatrix_csv: cannot open " + path);
    out << rmatrix_csv(r);
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::string out = "method,seed,mr_at_1,forgetting\n";
    for (const SummaryRow& r : rows) {
        out += r.method + "," + std::to_string(r.seed) + "," + format_double(r.mr_at_1) + ",";
        if (r.forgetting.has_value()) out += format_double(*r.forgetting);
        out += "\n";
    }
    return out;
}

}  // namespace kdfp

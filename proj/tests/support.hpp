#pragma once

// Test-only oracles: finite differences, brute-force mining/ranking loops,
// rank correlation. These stay independent of the implementation paths they
// check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "kdfp/autodiff.hpp"
#include "kdfp/matrix.hpp"

namespace kdfp::testing {

// Central finite differences against analytic gradients already stored in
// the parameters. forward() must rebuild the loss from the parameters'
// current values. Returns the max relative error over all elements.
inline double finite_diff_max_rel_err(const std::vector<Parameter*>& params,
                                      const std::function<double()>& forward,
                                      double step = 1e-5) {
    double worst = 0.0;
    for (Parameter* p : params) {
        for (size_t i = 0; i < p->value.data.size(); ++i) {
            const double orig = p->value.data[i];
            p->value.data[i] = orig + step;
            const double fp = forward();
            p->value.data[i] = orig - step;
            const double fm = forward();
            p->value.data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double analytic = p->grad.data[i];
            const double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1e-6});
            worst = std::max(worst, std::fabs(numeric - analytic) / denom);
        }
    }
    return worst;
}

// Exhaustive batch-hard triplet reference: per anchor, the hardest positive
// and hardest negative by full enumeration over all (a, p, n) triples.
struct BruteTriplet {
    std::vector<int> anchors;
    std::vector<double> losses;
};

inline BruteTriplet brute_force_batch_hard(const Matrix& desc,
                                           const std::vector<long long>& labels, double margin) {
    const int b = desc.rows;
    auto cosine = [&](int i, int j) {
        double s = 0.0;
        for (int c = 0; c < desc.cols; ++c) s += desc.at(i, c) * desc.at(j, c);
        return s;
    };
    BruteTriplet out;
    for (int a = 0; a < b; ++a) {
        double worst_pos = 2.0, best_neg = -2.0;
        bool has_pos = false, has_neg = false;
        for (int j = 0; j < b; ++j) {
            if (j == a) continue;
            if (labels[j] == labels[a]) {
                has_pos = true;
                worst_pos = std::min(worst_pos, cosine(a, j));
            } else {
                has_neg = true;
                best_neg = std::max(best_neg, cosine(a, j));
            }
        }
        if (!has_pos || !has_neg) continue;
        out.anchors.push_back(a);
        out.losses.push_back(std::max(0.0, best_neg - worst_pos + margin));
    }
    return out;
}

// Brute-force ranking-distillation reference over all ordered anchor/pair
// triples with a strict order in the old similarities.
inline double brute_force_ranking(const Matrix& sim_old, const Matrix& sim_new, double delta) {
    const int b = sim_old.rows;
    long long count = 0;
    double total = 0.0;
    for (int a = 0; a < b; ++a) {
        for (int i = 0; i < b; ++i) {
            for (int j = 0; j < b; ++j) {
                if (i == a || j == a || i == j) continue;
                if (sim_old.at(a, i) > sim_old.at(a, j)) {
                    ++count;
                    total += std::max(0.0, sim_new.at(a, j) - sim_new.at(a, i) + delta);
                }
            }
        }
    }
    // Each unordered pair appears once per strict direction, so this counts
    // exactly what the implementation averages over.
    return count > 0 ? total / count : 0.0;
}

inline std::vector<double> ranks_with_ties(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const std::vector<double> ra = ranks_with_ties(a), rb = ranks_with_ties(b);
    const size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

inline Matrix random_unit_rows(int rows, int cols, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix m(rows, cols);
    for (double& v : m.data) v = g(rng);
    return l2_normalize_rows(m);
}

// Random orthogonal matrix via Gram-Schmidt on a Gaussian matrix.
inline Matrix random_orthogonal(int d, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix q(d, d);
    for (int r = 0; r < d; ++r) {
        std::vector<double> v(d);
        for (int c = 0; c < d; ++c) v[c] = g(rng);
        for (int prev = 0; prev < r; ++prev) {
            double dot = 0.0;
            for (int c = 0; c < d; ++c) dot += v[c] * q.at(prev, c);
            for (int c = 0; c < d; ++c) v[c] -= dot * q.at(prev, c);
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        for (int c = 0; c < d; ++c) q.at(r, c) = v[c] / norm;
    }
    return q;
}

}  // namespace kdfp::testing

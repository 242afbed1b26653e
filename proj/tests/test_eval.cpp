#include <cmath>
#include <random>

#include <doctest.h>

#include "kdfp/eval.hpp"
#include "support.hpp"

using namespace kdfp;
using kdfp::testing::random_unit_rows;

namespace {

// Minimal submaps carrying only what retrieval needs.
std::vector<Submap> grid_submaps(int n, double spacing, Pass pass, int id_base) {
    std::vector<Submap> out(n);
    for (int i = 0; i < n; ++i) {
        out[i].id = id_base + i;
        out[i].domain_id = 0;
        out[i].pass = pass;
        out[i].x = spacing * i;
        out[i].y = 0.0;
        out[i].place_label = i;
    }
    return out;
}

std::vector<const Submap*> ptrs(const std::vector<Submap>& v) {
    std::vector<const Submap*> out;
    for (const Submap& s : v) out.push_back(&s);
    return out;
}

}  // namespace

TEST_CASE("perfect descriptors retrieve perfectly") {
    const auto db = grid_submaps(6, 100.0, Pass::A, 0);
    const auto q = grid_submaps(6, 100.0, Pass::B, 100);
    std::mt19937_64 rng(1);
    const Matrix desc = random_unit_rows(6, 8, rng);
    CHECK(recall_at_1_from_descriptors(desc, ptrs(q), desc, ptrs(db), 25.0) == 100.0);
}

TEST_CASE("random descriptors on two far places sit at chance level") {
    std::mt19937_64 rng(2);
    const auto db = grid_submaps(2, 500.0, Pass::A, 0);
    long long hits = 0, total = 0;
    for (int trial = 0; trial < 4000; ++trial) {
        const Matrix dd = random_unit_rows(2, 16, rng);
        const Matrix qd = random_unit_rows(1, 16, rng);
        auto queries = grid_submaps(1, 500.0, Pass::B, 100);
        queries[0].x = 0.0;  // true place is the first database entry
        hits += static_cast<long long>(
            recall_at_1_from_descriptors(qd, ptrs(queries), dd, ptrs(db), 25.0) == 100.0);
        ++total;
    }
    const double rate = static_cast<double>(hits) / total;
    CHECK(rate > 0.45);
    CHECK(rate < 0.55);
}

TEST_CASE("retrieval agrees with a brute-force scan including ties") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const int nq = 12, nd = 15;
        auto db = grid_submaps(nd, 40.0, Pass::A, 0);
        auto q = grid_submaps(nq, 40.0, Pass::B, 500);
        const Matrix dd = random_unit_rows(nd, 6, rng);
        const Matrix qd = random_unit_rows(nq, 6, rng);

        // brute force with the same tie rule (lowest database id wins)
        int successes = 0;
        for (int i = 0; i < nq; ++i) {
            int best = -1;
            double best_sim = -2.0;
            for (int j = 0; j < nd; ++j) {
                double s = 0.0;
                for (int c = 0; c < 6; ++c) s += qd.at(i, c) * dd.at(j, c);
                if (s > best_sim || (s == best_sim && best >= 0 && db[j].id < db[best].id)) {
                    best_sim = s;
                    best = j;
                }
            }
            if (place_distance(q[i], db[best]) <= 25.0) ++successes;
        }
        const double expect = 100.0 * successes / nq;
        CHECK(recall_at_1_from_descriptors(qd, ptrs(q), dd, ptrs(db), 25.0) ==
              doctest::Approx(expect).epsilon(1e-12));
    }

    auto db = grid_submaps(3, 40.0, Pass::A, 0);
    auto q = grid_submaps(2, 40.0, Pass::B, 100);
    std::vector<const Submap*> no_db;
    CHECK_THROWS(recall_at_1_from_descriptors(random_unit_rows(2, 4, rng), ptrs(q),
                                              random_unit_rows(3, 4, rng), no_db, 25.0));
}

TEST_CASE("recall is invariant under a common descriptor rotation") {
    std::mt19937_64 rng(4);
    const auto db = grid_submaps(10, 60.0, Pass::A, 0);
    const auto q = grid_submaps(10, 60.0, Pass::B, 100);
    const Matrix dd = random_unit_rows(10, 8, rng);
    const Matrix qd = random_unit_rows(10, 8, rng);
    const Matrix rot = kdfp::testing::random_orthogonal(8, rng);
    const double base = recall_at_1_from_descriptors(qd, ptrs(q), dd, ptrs(db), 25.0);
    const double rotated =
        recall_at_1_from_descriptors(matmul(qd, rot), ptrs(q), matmul(dd, rot), ptrs(db), 25.0);
    CHECK(base == rotated);
}

TEST_CASE("mean recall of the last row") {
    RMatrix r(3);
    const double vals[3][3] = {{80, 40, 0}, {70, 60, 0}, {65, 55, 50}};
    for (int l = 0; l < 3; ++l)
        for (int t = 0; t < 3; ++t) r.at(l, t) = vals[l][t];
    CHECK(mean_recall(r) == doctest::Approx(170.0 / 3.0).epsilon(1e-15));

    RMatrix one(1);
    one.at(0, 0) = 80.0;
    CHECK(mean_recall(one) == 80.0);

    RMatrix c(4);
    for (double& v : c.values) v = 42.5;
    CHECK(mean_recall(c) == doctest::Approx(42.5).epsilon(1e-15));
}

TEST_CASE("forgetting: worked example, two-step case, and null for T=1") {
    RMatrix r(3);
    const double vals[3][3] = {{80, 40, 0}, {70, 60, 0}, {65, 55, 50}};
    for (int l = 0; l < 3; ++l)
        for (int t = 0; t < 3; ++t) r.at(l, t) = vals[l][t];
    CHECK(*forgetting(r) == doctest::Approx(10.0).epsilon(1e-15));

    RMatrix two(2);
    two.at(0, 0) = 90;
    two.at(0, 1) = 10;
    two.at(1, 0) = 85;
    two.at(1, 1) = 80;
    CHECK(*forgetting(two) == doctest::Approx(5.0).epsilon(1e-15));

    RMatrix one(1);
    one.at(0, 0) = 50;
    CHECK_FALSE(forgetting(one).has_value());
}

TEST_CASE("non-decreasing columns give nonpositive forgetting") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 20.0);
    for (int trial = 0; trial < 20; ++trial) {
        RMatrix r(4);
        for (int t = 0; t < 4; ++t) {
            double v = u(rng);
            for (int l = 0; l < 4; ++l) {
                r.at(l, t) = v;
                v += u(rng) * 0.2;  // column grows with l
            }
        }
        CHECK(*forgetting(r) <= 1e-12);
    }
}

TEST_CASE("appending a step that degrades nothing adds no forgetting mass") {
    // Appending task T+1 pulls the previous last task into the forgetting
    // sum; when that task still sits at its own maximum and the new final
    // row repeats the old one elsewhere, the per-task sum is unchanged and
    // F only rescales from 1/(T-1) to 1/T.
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    for (int trial = 0; trial < 10; ++trial) {
        RMatrix r(3);
        for (double& v : r.values) v = u(rng);
        r.at(2, 2) = std::max(r.at(0, 2), r.at(1, 2)) + 5.0;  // last task at its max

        RMatrix ext(4);
        for (int l = 0; l < 3; ++l)
            for (int t = 0; t < 3; ++t) ext.at(l, t) = r.at(l, t);
        for (int t = 0; t < 3; ++t) ext.at(3, t) = r.at(2, t);  // nothing degrades
        for (int l = 0; l < 4; ++l) ext.at(l, 3) = u(rng);      // the appended task

        const double f3 = *forgetting(r);
        const double f4 = *forgetting(ext);
        CHECK(f4 == doctest::Approx(f3 * 2.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("forgetting conventions differ on zero-shot maxima") {
    RMatrix r(3);
    const double vals[3][3] = {{10, 90, 0}, {20, 40, 0}, {30, 35, 50}};
    for (int l = 0; l < 3; ++l)
        for (int t = 0; t < 3; ++t) r.at(l, t) = vals[l][t];

    // literal: t=1 uses max(10) - 30 = -20; t=2 uses max(90, 40) - 35 = 55
    CHECK(*forgetting(r, ForgettingConvention::eq8_literal) ==
          doctest::Approx((-20.0 + 55.0) / 2.0).epsilon(1e-15));
    // standard: t=1 uses max(10, 20) - 30 = -10; t=2 uses max(40) - 35 = 5
    CHECK(*forgetting(r, ForgettingConvention::standard) ==
          doctest::Approx((-10.0 + 5.0) / 2.0).epsilon(1e-15));

    CHECK(convention_from_string("eq8-literal") == ForgettingConvention::eq8_literal);
    CHECK(convention_from_string("standard") == ForgettingConvention::standard);
    CHECK_THROWS(convention_from_string("nope"));
}

TEST_CASE("csv formats") {
    RMatrix r(2);
    r.at(0, 0) = 75.0;
    r.at(0, 1) = 12.5;
    r.at(1, 0) = 70.0;
    r.at(1, 1) = 65.0;
    const std::string csv = rmatrix_csv(r);
    CHECK(csv.rfind("step,task,recall_at_1\n", 0) == 0);
    CHECK(csv.find("1,2,12.500000") != std::string::npos);
    CHECK(csv.find("2,1,70.000000") != std::string::npos);

    const std::string sum =
        summary_csv({{"kdf_plus", 3, 85.25, 0.5}, {"finetune", 3, 70.0, std::nullopt}});
    CHECK(sum.rfind("method,seed,mr_at_1,forgetting\n", 0) == 0);
    CHECK(sum.find("kdf_plus,3,85.250000,0.500000") != std::string::npos);
    CHECK(sum.find("finetune,3,70.000000,\n") != std::string::npos);
}

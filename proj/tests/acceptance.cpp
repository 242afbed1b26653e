// Acceptance suite: one pass/fail line per criterion.
//
//  1. gradient correctness of the full encoder+head composite (finite diff)
//  2. exact formula checks (sampling weights, rehearsal hinge, total
//     objective, mean recall / forgetting on hand matrices)
//  3. sampling statistics (proportionality, chi-square uniformity, scale
//     invariance)
//  4. buffer invariants under fuzzed update sequences
//  5. loss application map (task loss on current rows only, distillation
//     and rehearsal on memory rows only)
//  6. directional strategy comparison on the default 4-step protocol
//  7. omega sweep harness completes and emits its 5-row CSV
//  8. loss-head usefulness (rank correlation with true losses)
//  9. byte-identical R-matrix CSVs for identical (config, seed)

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "kdfp/eval.hpp"
#include "kdfp/run_config.hpp"
#include "kdfp/trainer.hpp"

using namespace kdfp;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("%s criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. gradient correctness
// ---------------------------------------------------------------------------

void criterion_1() {
    const double t0 = now_seconds();
    double worst = 0.0;
    int configs = 0;

    for (int seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 rng(9000 + seed);
        std::uniform_int_distribution<int> w1(4, 8), w2(6, 12), dd(4, 8), hh(3, 6), np(6, 12);

        EncoderConfig cfg;
        cfg.mlp_widths = {w1(rng), w2(rng)};
        cfg.descriptor_dim = dd(rng);
        cfg.head_hidden = hh(rng);
        Encoder enc(cfg, rng);
        LossPredictionHead head(cfg.pool_dim(), cfg.head_hidden, rng);

        // Three places, two submaps each. Strong per-place offsets keep the
        // descriptors well separated, so batch-hard selections and ranking
        // hinges sit away from their switching points (finite differences
        // are only meaningful on the smooth pieces).
        std::normal_distribution<double> g(0.0, 2.0);
        std::vector<Matrix> clouds;
        std::vector<long long> labels;
        for (int p = 0; p < 3; ++p) {
            Matrix base(np(rng), 3);
            for (int i = 0; i < base.rows; ++i) {
                base.at(i, 0) = g(rng) + 6.0 * p;
                base.at(i, 1) = g(rng) - 4.0 * p;
                base.at(i, 2) = g(rng) + 1.5 * p * p;
            }
            Matrix noisy = base;
            for (double& v : noisy.data) v += 0.05 * g(rng);
            clouds.push_back(base);
            labels.push_back(p);
            clouds.push_back(noisy);
            labels.push_back(p);
        }
        const Matrix old_desc = [&]() {
            std::mt19937_64 r2(40 + seed);
            std::normal_distribution<double> gg(0.0, 1.0);
            Matrix m(6, cfg.descriptor_dim);
            for (double& v : m.data) v = gg(r2);
            return l2_normalize_rows(m);
        }();
        const std::vector<double> old_losses{0.4, 0.1, 0.3, 0.2, 0.5, 0.15};

        // The head-MSE targets are detached constants in the objective, so
        // the finite-difference oracle must hold them fixed at their
        // base-parameter values.
        std::vector<std::pair<int, int>> mse_rows;
        std::vector<double> mse_targets;
        {
            Tape tape;
            std::vector<const Matrix*> pts;
            for (const Matrix& c : clouds) pts.push_back(&c);
            const auto emb = enc.embed_batch(tape, pts);
            const TripletLoss tl = triplet_batch_hard(tape, emb.descriptors, labels, 0.3);
            for (size_t k = 0; k < tl.mining.anchor_rows.size(); ++k) {
                mse_rows.emplace_back(tl.mining.anchor_rows[k], 0);
                mse_targets.push_back(tl.mining.per_anchor[k]);
            }
        }

        // composite: triplet + kd + rehearsal + head mse
        auto forward = [&](bool backward) {
            Tape tape;
            std::vector<const Matrix*> pts;
            for (const Matrix& c : clouds) pts.push_back(&c);
            const auto emb = enc.embed_batch(tape, pts);
            const TripletLoss tl = triplet_batch_hard(tape, emb.descriptors, labels, 0.3);
            Value kd = kd_loss(tape, KdVariant::ranking_surrogate, old_desc, emb.descriptors,
                               0.01);
            Value reh = rehearsal_loss(
                tape,
                tape.gather(emb.descriptors,
                            {{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}}),
                old_losses, 0.1);
            Value head_pred = head.predict_tape(tape, emb.pooled.val());
            Value mse = loss_pred_mse(tape, tape.gather(head_pred, mse_rows), mse_targets);
            LossBreakdown bd;
            Value total = total_objective(tape, tl.mean, kd, reh, 0.7, 0.08, &bd);
            Value objective = tape.add(total, mse);
            if (backward) tape.backward(objective);
            return objective.val().scalar();
        };

        std::vector<Parameter*> params = enc.parameters();
        for (Parameter* p : head.parameters()) params.push_back(p);
        for (Parameter* p : params) p->zero_grad();
        forward(true);

        const double step = 1e-5;
        const double f0 = forward(false);
        for (Parameter* p : params) {
            for (size_t i = 0; i < p->value.data.size(); ++i) {
                const double orig = p->value.data[i];
                p->value.data[i] = orig + step;
                const double fp = forward(false);
                p->value.data[i] = orig - step;
                const double fm = forward(false);
                p->value.data[i] = orig;
                const double analytic = p->grad.data[i];
                const double central = (fp - fm) / (2.0 * step);
                double err;
                {
                    const double denom =
                        std::max({std::fabs(central), std::fabs(analytic), 1e-6});
                    err = std::fabs(central - analytic) / denom;
                }
                if (err >= 1e-4) {
                    // Hinge/relu/mining kinks within the step make the central
                    // difference average two branches; the analytic gradient
                    // must then match a one-sided secant instead.
                    for (const double sided : {(fp - f0) / step, (f0 - fm) / step}) {
                        const double denom =
                            std::max({std::fabs(sided), std::fabs(analytic), 1e-6});
                        err = std::min(err, std::fabs(sided - analytic) / denom);
                    }
                }
                worst = std::max(worst, err);
            }
        }
        ++configs;
    }
    const double secs = now_seconds() - t0;
    report(1, "encoder+head composite gradients vs finite differences",
           worst < 1e-4 && configs >= 20 && secs < 30.0,
           fmt("max rel err %.3g over %d configs, %.1fs", worst, configs, secs));
}

// ---------------------------------------------------------------------------
// 2. exact formulas
// ---------------------------------------------------------------------------

void criterion_2() {
    bool ok = true;
    std::string why = "all exact";

    auto expect = [&](bool cond, const char* what) {
        if (!cond && ok) {
            ok = false;
            why = std::string("failed: ") + what;
        }
    };

    // sampling probabilities
    {
        const auto p = sampling_probabilities({2.0, 1.0, 1.0});
        expect(std::fabs(p[0] - 0.5) < 1e-12 && std::fabs(p[1] - 0.25) < 1e-12 &&
                   std::fabs(p[2] - 0.25) < 1e-12,
               "sampling-weight normalization");
        const auto u = sampling_probabilities({0.0, 0.0});
        expect(std::fabs(u[0] - 0.5) < 1e-12, "sampling-weight clamp fallback");
    }
    // rehearsal hinge
    expect(std::fabs(rehearsal_loss_value({0.5}, {0.3}, 0.1) - 0.0) < 1e-12,
           "rehearsal hinge inactive");
    expect(std::fabs(rehearsal_loss_value({0.5}, {0.5}, 0.1) - 0.1) < 1e-12,
           "rehearsal hinge boundary");
    expect(std::fabs(rehearsal_loss_value({0.5}, {0.6}, 0.1) - 0.2) < 1e-12,
           "rehearsal hinge regression");
    // total objective
    expect(std::fabs(total_objective_value(1.0, 2.0, 3.0, 0.5, 0.08) - 2.24) < 1e-12,
           "total objective composition");
    expect(std::fabs(total_objective_value(1.0, 2.0, 3.0, 0.0, 0.0) - 1.0) < 1e-12,
           "fine-tuning degenerate objective");
    // mean recall and forgetting on the worked T=3 example
    {
        RMatrix r(3);
        const double vals[3][3] = {{80, 40, 0}, {70, 60, 0}, {65, 55, 50}};
        for (int l = 0; l < 3; ++l)
            for (int t = 0; t < 3; ++t) r.at(l, t) = vals[l][t];
        expect(std::fabs(mean_recall(r) - 170.0 / 3.0) < 1e-12, "mR@1 worked example (56.667)");
        expect(std::fabs(*forgetting(r) - 10.0) < 1e-12, "forgetting worked example");

        RMatrix two(2);
        two.at(0, 0) = 90;
        two.at(0, 1) = 10;
        two.at(1, 0) = 85;
        two.at(1, 1) = 80;
        expect(std::fabs(*forgetting(two) - 5.0) < 1e-12, "forgetting two-step case");
        RMatrix one(1);
        one.at(0, 0) = 80.0;
        expect(!forgetting(one).has_value(), "forgetting null for T=1");
        expect(std::fabs(mean_recall(one) - 80.0) < 1e-12, "mR@1 single task");
    }
    report(2, "exact-formula checks at 1e-12", ok, why);
}

// ---------------------------------------------------------------------------
// 3. sampling statistics
// ---------------------------------------------------------------------------

void criterion_3() {
    const double t0 = now_seconds();
    const std::vector<int> ids{0, 1, 2, 3};

    std::mt19937_64 rng(101);
    int hits = 0;
    for (int t = 0; t < 10000; ++t) {
        if (select_exemplars(ids, {1e6, 1.0, 1.0, 1.0}, 1, rng)[0] == 0) ++hits;
    }
    const bool proportional = hits > 9900;

    std::map<std::pair<int, int>, int> counts;
    std::mt19937_64 rng2(102);
    for (int t = 0; t < 10000; ++t) {
        const auto pick = select_exemplars(ids, {1, 1, 1, 1}, 2, rng2);
        counts[{pick[0], pick[1]}]++;
    }
    double chi2 = 0.0;
    const double expected = 10000.0 / 6.0;
    for (const auto& [k, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
    const bool uniform = counts.size() == 6 && chi2 < 15.086;  // p > 0.01, 5 dof

    std::mt19937_64 ra(103), rb(103);
    const std::vector<int> many{0, 1, 2, 3, 4, 5, 6, 7};
    const std::vector<double> w{0.2, 1.4, 0.6, 2.2, 0.1, 0.9, 1.1, 0.4};
    std::vector<double> scaled(w);
    for (double& v : scaled) v *= 311.7;
    const bool scale_invariant =
        select_exemplars(many, w, 3, ra) == select_exemplars(many, scaled, 3, rb);

    const double secs = now_seconds() - t0;
    report(3, "sampling statistics",
           proportional && uniform && scale_invariant && secs < 10.0,
           fmt("heavy-weight hits %d/10000, chi2 %.2f (<15.086), scale-invariant %s, %.1fs",
               hits, chi2, scale_invariant ? "yes" : "no", secs));
}

// ---------------------------------------------------------------------------
// 4. buffer invariants under fuzz
// ---------------------------------------------------------------------------

void criterion_4() {
    std::mt19937_64 rng(104);
    std::uniform_int_distribution<int> cap_dist(1, 64), dom_dist(2, 8);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> wd(-0.5, 2.0);

    auto make_entry = [&](int domain, int i) {
        MemoryEntry e;
        e.domain_id = domain;
        e.anchor.id = domain * 1000 + 2 * i;
        e.anchor.domain_id = domain;
        e.anchor.place_label = domain * 1000 + i;
        e.anchor.points = Matrix(16, 3);
        for (double& v : e.anchor.points.data) v = g(rng);
        e.positive = e.anchor;
        e.positive.id += 1;
        return e;
    };

    int updates = 0, violations = 0;
    while (updates < 100) {
        const int cap = cap_dist(rng);
        ReplayBuffer buf(cap);
        const int domains = dom_dist(rng);
        for (int d = 0; d < domains && updates < 100; ++d, ++updates) {
            std::vector<MemoryEntry> cands;
            std::vector<double> w;
            for (int i = 0; i < cap + 30; ++i) {  // always enough candidates
                cands.push_back(make_entry(d, i));
                w.push_back(wd(rng));
            }
            buf.update_after_domain(std::move(cands), w, d + 1, rng);

            if (buf.size() > buf.capacity()) ++violations;
            int min_c = 1 << 30, max_c = 0;
            for (int dd = 0; dd <= d; ++dd) {
                min_c = std::min(min_c, buf.domain_count(dd));
                max_c = std::max(max_c, buf.domain_count(dd));
            }
            if (max_c - min_c > 1) ++violations;
        }
    }
    report(4, "buffer capacity and equal-domain invariants under fuzz", violations == 0,
           fmt("%d updates, %d violations", updates, violations));
}

// ---------------------------------------------------------------------------
// 5. loss application map
// ---------------------------------------------------------------------------

void criterion_5() {
    std::mt19937_64 rng(105);
    EncoderConfig cfg;
    cfg.mlp_widths = {8, 16};
    cfg.descriptor_dim = 8;
    Encoder enc(cfg, rng);
    FrozenEncoder snap = snapshot(enc);

    std::normal_distribution<double> g(0.0, 2.0);
    auto cloud = [&]() {
        Matrix m(20, 3);
        for (double& v : m.data) v = g(rng);
        return m;
    };
    std::vector<Matrix> cur_clouds, mem_clouds;
    std::vector<long long> cur_labels, mem_labels;
    for (int p = 0; p < 3; ++p) {
        cur_clouds.push_back(cloud());
        cur_clouds.push_back(cloud());
        cur_labels.push_back(p);
        cur_labels.push_back(p);
        mem_clouds.push_back(cloud());
        mem_clouds.push_back(cloud());
        mem_labels.push_back(100 + p);
        mem_labels.push_back(100 + p);
    }
    std::vector<const Matrix*> cur_pts, mem_pts;
    for (const Matrix& m : cur_clouds) cur_pts.push_back(&m);
    for (const Matrix& m : mem_clouds) mem_pts.push_back(&m);

    Tape tape;
    const auto cur_emb = enc.embed_batch(tape, cur_pts);
    const auto mem_emb = enc.embed_batch(tape, mem_pts);
    const Matrix old_desc = snap.embed_batch_eval(mem_pts).descriptors;

    const TripletLoss l_pr = triplet_batch_hard(tape, cur_emb.descriptors, cur_labels, 0.3);
    Value l_kd = kd_loss(tape, KdVariant::ranking_surrogate, old_desc, mem_emb.descriptors, 0.01);
    const std::vector<int> anchor_rows{0, 2, 4};
    const TripletLoss mem_tl =
        triplet_batch_hard(tape, mem_emb.descriptors, mem_labels, 0.3, nullptr, &anchor_rows);
    Value l_reh = rehearsal_loss(tape, mem_tl.per_anchor, {0.2, 0.3, 0.1}, 0.1);

    auto all_zero = [](const Matrix& m) {
        for (double v : m.data) {
            if (v != 0.0) return false;
        }
        return true;
    };

    tape.backward(l_pr.mean);
    const bool pr_isolated = all_zero(mem_emb.descriptors.grad()) &&
                             !all_zero(cur_emb.descriptors.grad());

    Value memory_side = tape.add(tape.scale(l_kd, 0.7), tape.scale(l_reh, 0.08));
    tape.backward(memory_side);
    const bool mem_isolated = all_zero(cur_emb.descriptors.grad()) &&
                              !all_zero(mem_emb.descriptors.grad());

    report(5, "loss application map gradient isolation", pr_isolated && mem_isolated,
           fmt("task loss on current rows only: %s; distillation+rehearsal on memory rows only: %s",
               pr_isolated ? "yes" : "no", mem_isolated ? "yes" : "no"));
}

// ---------------------------------------------------------------------------
// 6/7/8/9 share protocol runs
// ---------------------------------------------------------------------------

struct RunOutcome {
    double mr = 0.0;
    double f = 0.0;
    RMatrix r;
};

RunOutcome run_once(const RunConfig& cfg, const std::vector<std::vector<Submap>>& domains,
                    uint64_t seed) {
    InMemoryProvider provider(domains);
    const RunResult res = run_protocol(provider, cfg.protocol, cfg.encoder, cfg.optim,
                                       cfg.strategy, cfg.losses, cfg.memory_capacity, seed);
    RunOutcome out;
    out.mr = mean_recall(res.r);
    out.f = forgetting(res.r).value_or(0.0);
    out.r = res.r;
    return out;
}

void run_parallel(std::vector<std::function<void()>> jobs) {
    unsigned n = std::thread::hardware_concurrency();
    if (n < 1) n = 1;
    n = std::min<unsigned>(n, static_cast<unsigned>(jobs.size()));
    std::mutex m;
    size_t next = 0;
    auto worker = [&]() {
        for (;;) {
            size_t mine;
            {
                std::lock_guard<std::mutex> lock(m);
                if (next >= jobs.size()) return;
                mine = next++;
            }
            jobs[mine]();
        }
    };
    std::vector<std::thread> threads;
    for (unsigned i = 0; i < n; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
}

void criterion_6(const RunConfig& base, const std::vector<std::vector<Submap>>& domains) {
    const double t0 = now_seconds();
    const std::vector<uint64_t> seeds{1, 2, 3, 4, 5};

    RunConfig kdf = base;
    RunConfig ft = base;
    ft.strategy.method = Method::finetune;
    RunConfig no_la = base;
    no_la.strategy.sampling = SamplingMode::random;
    RunConfig mix = base;
    mix.strategy.replay_mode = ReplayMode::mix;

    struct Arm {
        const char* name;
        const RunConfig* cfg;
        std::vector<RunOutcome> outcomes;
    };
    std::vector<Arm> arms{{"kdf_plus", &kdf, {}},
                          {"finetune", &ft, {}},
                          {"no_loss_aware", &no_la, {}},
                          {"mix", &mix, {}}};
    for (Arm& a : arms) a.outcomes.resize(seeds.size());

    std::vector<std::function<void()>> jobs;
    for (Arm& a : arms) {
        for (size_t i = 0; i < seeds.size(); ++i) {
            jobs.push_back([&a, i, &seeds, &domains]() {
                a.outcomes[i] = run_once(*a.cfg, domains, seeds[i]);
            });
        }
    }
    run_parallel(std::move(jobs));

    auto mean_of = [](const std::vector<RunOutcome>& v, bool use_f) {
        double s = 0.0;
        for (const RunOutcome& o : v) s += use_f ? o.f : o.mr;
        return s / v.size();
    };
    const double f_kdf = mean_of(arms[0].outcomes, true);
    const double mr_kdf = mean_of(arms[0].outcomes, false);
    const double f_ft = mean_of(arms[1].outcomes, true);
    const double mr_ft = mean_of(arms[1].outcomes, false);
    const double f_no_la = mean_of(arms[2].outcomes, true);
    const double f_mix = mean_of(arms[3].outcomes, true);

    const bool a_ok = f_kdf < f_ft;
    const bool b_ok = mr_kdf > mr_ft;
    const bool c_ok = f_no_la > f_kdf;
    const bool d_ok = f_mix > f_kdf;
    const double secs = now_seconds() - t0;

    report(6, "directional strategy comparison (5 seeds)",
           a_ok && b_ok && c_ok && d_ok && secs < 900.0,
           fmt("F: kdf %.2f ft %.2f no-loss-aware %.2f mix %.2f | mR@1: kdf %.2f ft %.2f | "
               "(a)%s (b)%s (c)%s (d)%s | %.0fs",
               f_kdf, f_ft, f_no_la, f_mix, mr_kdf, mr_ft, a_ok ? "ok" : "FAIL",
               b_ok ? "ok" : "FAIL", c_ok ? "ok" : "FAIL", d_ok ? "ok" : "FAIL", secs));
}

void criterion_7(const RunConfig& base, const std::vector<std::vector<Submap>>& domains) {
    const double t0 = now_seconds();
    const std::vector<double> values{0.01, 0.05, 0.08, 0.1, 0.5};
    const std::vector<uint64_t> seeds{1};  // reduced seed count by config

    std::vector<std::vector<RunOutcome>> grid(values.size());
    std::vector<std::function<void()>> jobs;
    for (size_t vi = 0; vi < values.size(); ++vi) {
        grid[vi].resize(seeds.size());
        for (size_t si = 0; si < seeds.size(); ++si) {
            jobs.push_back([&, vi, si]() {
                RunConfig cfg = base;
                cfg.losses.omega = values[vi];
                grid[vi][si] = run_once(cfg, domains, seeds[si]);
            });
        }
    }
    run_parallel(std::move(jobs));

    std::ostringstream csv;
    csv << "omega,mr_at_1_mean,forgetting_mean\n";
    for (size_t vi = 0; vi < values.size(); ++vi) {
        double mr = 0.0, f = 0.0;
        for (const RunOutcome& o : grid[vi]) {
            mr += o.mr / grid[vi].size();
            f += o.f / grid[vi].size();
        }
        char line[128];
        std::snprintf(line, sizeof(line), "%.6f,%.6f,%.6f\n", values[vi], mr, f);
        csv << line;
    }
    const std::string text = csv.str();
    {
        std::FILE* out = std::fopen("acceptance_omega_sweep.csv", "w");
        if (out != nullptr) {
            std::fwrite(text.data(), 1, text.size(), out);
            std::fclose(out);
        }
    }
    int lines = 0;
    for (char c : text) lines += c == '\n';
    const bool header_ok = text.rfind("omega,mr_at_1_mean,forgetting_mean\n", 0) == 0;
    const double secs = now_seconds() - t0;
    report(7, "omega sensitivity sweep harness",
           header_ok && lines == 6 && secs < 2700.0,
           fmt("5 values x %zu seed(s), csv rows %d, %.0fs -> acceptance_omega_sweep.csv",
               seeds.size(), lines - 1, secs));
}

void criterion_8(const RunConfig& base, const std::vector<std::vector<Submap>>& domains) {
    // rank correlation between head predictions and true per-anchor losses on
    // held-out batches after initial-domain training
    const std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    int good = 0;
    std::string detail;

    for (uint64_t seed : seeds) {
        ContinualTrainer trainer(base.encoder, base.optim, base.strategy, base.losses,
                                 base.memory_capacity, seed);
        const std::vector<Submap> train = filter_split(domains[0], Split::train);
        trainer.train_initial_domain(train, base.protocol);

        const PairSet pairs = build_training_pairs(train, base.protocol.pos_threshold_train,
                                                   base.protocol.neg_threshold_train);
        std::mt19937_64 holdout_rng(7700 + seed);
        std::vector<int> order(pairs.pairs.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), holdout_rng);

        // Large held-out batches give the oracle strong hardest negatives,
        // so most anchors carry an active, comparable loss.
        std::vector<double> preds, truths;
        const int batch = 80;
        for (size_t off = 0; off + batch <= order.size(); off += batch) {
            std::vector<const Matrix*> pts;
            std::vector<long long> labels;
            std::vector<int> anchor_rows;
            for (int k = 0; k < batch; ++k) {
                const TrainingPair& p = pairs.pairs[order[off + k]];
                anchor_rows.push_back(static_cast<int>(pts.size()));
                pts.push_back(&train[p.anchor_index].points);
                labels.push_back(train[p.anchor_index].place_label);
                pts.push_back(&train[p.positive_index].points);
                labels.push_back(train[p.positive_index].place_label);
            }
            const auto emb = trainer.encoder().embed_batch_eval(pts);
            const TripletMining mining =
                mine_batch_hard(emb.descriptors, labels, base.losses.triplet_margin, nullptr,
                                &anchor_rows);
            Matrix anchor_pooled(static_cast<int>(mining.anchor_rows.size()), emb.pooled.cols);
            for (size_t k = 0; k < mining.anchor_rows.size(); ++k) {
                for (int j = 0; j < emb.pooled.cols; ++j) {
                    anchor_pooled.at(static_cast<int>(k), j) =
                        emb.pooled.at(mining.anchor_rows[k], j);
                }
            }
            const Matrix pred = trainer.head().predict_eval(anchor_pooled);
            for (size_t k = 0; k < mining.anchor_rows.size(); ++k) {
                preds.push_back(pred.at(static_cast<int>(k), 0));
                truths.push_back(mining.per_anchor[k]);
            }
        }

        // Spearman rank correlation with average ranks for ties.
        auto ranks = [](const std::vector<double>& v) {
            std::vector<size_t> idx(v.size());
            std::iota(idx.begin(), idx.end(), 0);
            std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
            std::vector<double> r(v.size());
            size_t i = 0;
            while (i < idx.size()) {
                size_t j = i;
                while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
                const double avg = (i + j) / 2.0 + 1.0;
                for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
                i = j + 1;
            }
            return r;
        };
        const std::vector<double> ra = ranks(preds), rb = ranks(truths);
        double ma = 0.0, mb = 0.0;
        for (size_t i = 0; i < ra.size(); ++i) {
            ma += ra[i];
            mb += rb[i];
        }
        ma /= ra.size();
        mb /= rb.size();
        double cov = 0.0, va = 0.0, vb = 0.0;
        for (size_t i = 0; i < ra.size(); ++i) {
            cov += (ra[i] - ma) * (rb[i] - mb);
            va += (ra[i] - ma) * (ra[i] - ma);
            vb += (rb[i] - mb) * (rb[i] - mb);
        }
        const double rho = (va > 0 && vb > 0) ? cov / std::sqrt(va * vb) : 0.0;
        if (rho > 0.5) ++good;
        detail += fmt("%.2f ", rho);
    }
    report(8, "loss-head rank correlation > 0.5 on 3 of 5 seeds", good >= 3,
           fmt("spearman per seed: %s-> %d/5 above 0.5", detail.c_str(), good));
}

void criterion_9(const RunConfig& base, const std::vector<std::vector<Submap>>& domains) {
    const RunOutcome a = run_once(base, domains, 3);
    const RunOutcome b = run_once(base, domains, 3);
    const std::string csv_a = rmatrix_csv(a.r), csv_b = rmatrix_csv(b.r);
    report(9, "deterministic R-matrix CSV for identical (config, seed)", csv_a == csv_b,
           csv_a == csv_b ? "byte-identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    // With arguments, run only the named criteria (e.g. `acceptance 1 5`).
    bool want[10];
    for (int i = 0; i < 10; ++i) want[i] = argc < 2;
    for (int i = 1; i < argc; ++i) {
        const int id = std::atoi(argv[i]);
        if (id >= 1 && id <= 9) want[id] = true;
    }

    std::printf("acceptance suite\n================\n");
    if (want[1]) criterion_1();
    if (want[2]) criterion_2();
    if (want[3]) criterion_3();
    if (want[4]) criterion_4();
    if (want[5]) criterion_5();

    if (want[6] || want[7] || want[8] || want[9]) {
        const RunConfig base = default_run_config();
        std::vector<std::vector<Submap>> domains;
        for (const DomainSpec& d : base.protocol.domains) domains.push_back(generate_domain(d));

        if (want[6]) criterion_6(base, domains);
        if (want[7]) criterion_7(base, domains);
        if (want[8]) criterion_8(base, domains);
        if (want[9]) criterion_9(base, domains);
    }

    std::printf("================\n%s (%d failure%s)\n", failures == 0 ? "ALL PASS" : "FAILURES",
                failures, failures == 1 ? "" : "s");
    return failures == 0 ? 0 : 1;
}

// kdfp — continual place-recognition lab driver.
//
// Subcommands:
//   gen     write the protocol's synthetic domain datasets
//   train   run the continual protocol for one strategy over seeds
//   sweep   repeat train over a grid of rehearsal weights (omega)
//   report  merge finished runs into comparison / plot-data CSVs

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kdfp/data.hpp"
#include "kdfp/eval.hpp"
#include "kdfp/run_config.hpp"
#include "kdfp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kdfp;

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Human-readable strategy label; ablations get a suffix so their run
// directories never collide with the full method's.
std::string strategy_label(const StrategyConfig& s) {
    if (s.method == Method::finetune) return "finetune";
    std::string label = "kdf_plus";
    if (s.sampling == SamplingMode::random) label += "-no_loss_aware";
    if (!s.rehearsal_enabled) label += "-no_rehearsal";
    if (s.replay_mode == ReplayMode::mix) label += "-mix";
    if (s.memory_policy == MemoryPolicy::max_replacement) label += "-max_replacement";
    return label;
}

void apply_ablation(StrategyConfig& s, const std::string& name) {
    if (name.empty() || name == "none") return;
    if (name == "no-loss-aware") {
        s.sampling = SamplingMode::random;
    } else if (name == "no-rehearsal") {
        s.rehearsal_enabled = false;
    } else if (name == "mix") {
        s.replay_mode = ReplayMode::mix;
    } else if (name == "max-replacement") {
        s.memory_policy = MemoryPolicy::max_replacement;
    } else {
        throw CLI::ValidationError("--ablation",
                                   "unknown ablation '" + name +
                                       "' (expected no-loss-aware, no-rehearsal, mix, "
                                       "max-replacement)");
    }
}

std::vector<std::string> dataset_paths(const RunConfig& cfg) {
    std::vector<std::string> paths;
    for (size_t i = 0; i < cfg.protocol.domains.size(); ++i) {
        paths.push_back(cfg.data_dir + "/" + domain_file_name(static_cast<int>(i)));
    }
    return paths;
}

struct FinishedRun {
    SummaryRow row;
    std::string dir;
};

// One full protocol run: artifacts land in run_dir, the summary row comes
// back for aggregation.
FinishedRun execute_run(const RunConfig& cfg, uint64_t seed, const std::string& run_dir,
                        const std::string& label) {
    fs::create_directories(run_dir);
    const std::vector<std::string> paths = dataset_paths(cfg);
    FileProvider provider(paths);
    const RunResult res =
        run_protocol(provider, cfg.protocol, cfg.encoder, cfg.optim, cfg.strategy, cfg.losses,
                     cfg.memory_capacity, seed, run_dir);

    write_rmatrix_csv(run_dir + "/rmatrix.csv", res.r);

    SummaryRow row;
    row.method = label;
    row.seed = seed;
    row.mr_at_1 = mean_recall(res.r);
    row.forgetting = forgetting(res.r, cfg.convention);
    {
        std::ofstream out(run_dir + "/summary.csv");
        out << summary_csv({row});
    }

    json manifest;
    manifest["config"] = to_json(cfg);
    manifest["config_hash"] = fnv1a64_hex(to_json(cfg).dump());
    manifest["seed"] = seed;
    manifest["method_label"] = label;
    manifest["convention"] = to_string(cfg.convention);
    json input_hashes = json::object();
    for (const std::string& p : paths) input_hashes[p] = fnv1a64_hex(read_file(p));
    manifest["input_hashes"] = std::move(input_hashes);
    manifest["step_wall_seconds"] = res.step_wall_seconds;
    json rmat = json::array();
    for (int l = 0; l < res.r.T; ++l) {
        json rrow = json::array();
        for (int t = 0; t < res.r.T; ++t) rrow.push_back(res.r.at(l, t));
        rmat.push_back(std::move(rrow));
    }
    manifest["r_matrix"] = std::move(rmat);
    manifest["mr_at_1"] = row.mr_at_1;
    if (row.forgetting.has_value()) {
        manifest["forgetting"] = *row.forgetting;
    } else {
        manifest["forgetting"] = nullptr;
    }
    manifest["complete"] = true;
    std::ofstream(run_dir + "/manifest.json") << manifest.dump(2) << "\n";

    return {row, run_dir};
}

// Bounded parallel dispatch; each job is fully independent.
void run_jobs(std::vector<std::function<void()>> jobs, int parallel) {
    if (parallel < 1) parallel = 1;
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
    const int n = std::min<int>(parallel, static_cast<int>(jobs.size()));
    threads.reserve(n);
    for (int i = 0; i < n; ++i) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
}

void append_aggregate_summary(const std::string& out_dir, const std::vector<SummaryRow>& rows) {
    const std::string path = out_dir + "/summary.csv";
    const bool fresh = !fs::exists(path);
    std::ofstream out(path, std::ios::app);
    if (fresh) out << "method,seed,mr_at_1,forgetting\n";
    for (const SummaryRow& r : rows) {
        out << r.method << "," << r.seed << "," << format_double(r.mr_at_1) << ",";
        if (r.forgetting.has_value()) out << format_double(*r.forgetting);
        out << "\n";
    }
}

int cmd_gen(const RunConfig& cfg) {
    fs::create_directories(cfg.data_dir);
    json manifest;
    manifest["config_hash"] = fnv1a64_hex(to_json(cfg).dump());
    manifest["pos_threshold_train"] = cfg.protocol.pos_threshold_train;
    manifest["neg_threshold_train"] = cfg.protocol.neg_threshold_train;
    manifest["pos_threshold_test"] = cfg.protocol.pos_threshold_test;
    json files = json::array();
    for (size_t i = 0; i < cfg.protocol.domains.size(); ++i) {
        const DomainSpec& d = cfg.protocol.domains[i];
        const std::string file = domain_file_name(static_cast<int>(i));
        const std::vector<Submap> submaps = generate_domain(d);
        save_dataset(cfg.data_dir + "/" + file, submaps);
        files.push_back({{"file", file},
                         {"domain_id", d.domain_id},
                         {"submaps", submaps.size()},
                         {"seed", d.seed}});
        std::cout << "wrote " << cfg.data_dir << "/" << file << " (" << submaps.size()
                  << " submaps)\n";
    }
    manifest["domains"] = std::move(files);
    std::ofstream(cfg.data_dir + "/protocol_manifest.json") << manifest.dump(2) << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, int jobs) {
    for (const std::string& p : dataset_paths(cfg)) {
        if (!fs::exists(p)) {
            std::cerr << "error: missing dataset file " << p << " (run `kdfp gen` first)\n";
            return 1;
        }
    }
    const std::string label = strategy_label(cfg.strategy);
    std::vector<FinishedRun> finished(cfg.seeds.size());
    std::vector<std::function<void()>> work;
    for (size_t i = 0; i < cfg.seeds.size(); ++i) {
        work.push_back([&, i]() {
            const uint64_t seed = cfg.seeds[i];
            const std::string dir = cfg.out_dir + "/" + label + "/seed_" + std::to_string(seed);
            finished[i] = execute_run(cfg, seed, dir, label);
            std::cout << "finished " << dir << "\n";
        });
    }
    try {
        run_jobs(std::move(work), jobs);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::vector<SummaryRow> rows;
    for (const FinishedRun& f : finished) rows.push_back(f.row);
    fs::create_directories(cfg.out_dir);
    append_aggregate_summary(cfg.out_dir, rows);
    return 0;
}

int cmd_sweep(const RunConfig& base, const std::vector<double>& values, int jobs) {
    if (values.empty()) {
        std::cerr << "error: sweep needs at least one omega value\n";
        return 1;
    }
    for (double v : values) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            std::cerr << "error: invalid omega value " << v << "\n";
            return 1;
        }
    }
    for (const std::string& p : dataset_paths(base)) {
        if (!fs::exists(p)) {
            std::cerr << "error: missing dataset file " << p << " (run `kdfp gen` first)\n";
            return 1;
        }
    }

    struct Cell {
        double omega;
        uint64_t seed;
        std::string dir;
        RunConfig cfg;
    };
    std::vector<Cell> cells;
    for (double v : values) {
        RunConfig cfg = base;
        cfg.losses.omega = v;
        for (uint64_t seed : base.seeds) {
            const std::string dir = base.out_dir + "/sweep/omega_" + format_double(v) + "/seed_" +
                                    std::to_string(seed);
            cells.push_back({v, seed, dir, cfg});
        }
    }

    const std::string label = strategy_label(base.strategy);
    std::vector<std::function<void()>> work;
    for (Cell& c : cells) {
        work.push_back([&c, &label]() {
            if (fs::exists(c.dir + "/manifest.json")) {
                std::cout << "skipping completed " << c.dir << "\n";
                return;
            }
            execute_run(c.cfg, c.seed, c.dir, label);
            std::cout << "finished " << c.dir << "\n";
        });
    }
    try {
        run_jobs(std::move(work), jobs);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    // Aggregate from the manifests so restarted sweeps still report fully.
    std::string csv = "omega,mr_at_1_mean,forgetting_mean\n";
    for (double v : values) {
        double mr = 0.0, fg = 0.0;
        int n = 0;
        for (const Cell& c : cells) {
            if (c.omega != v) continue;
            std::ifstream in(c.dir + "/manifest.json");
            if (!in) {
                std::cerr << "error: missing manifest for " << c.dir << "\n";
                return 1;
            }
            json m;
            in >> m;
            mr += m.at("mr_at_1").get<double>();
            fg += m.at("forgetting").is_null() ? 0.0 : m.at("forgetting").get<double>();
            ++n;
        }
        csv += format_double(v) + "," + format_double(mr / n) + "," + format_double(fg / n) + "\n";
    }
    fs::create_directories(base.out_dir);
    std::ofstream(base.out_dir + "/sweep.csv") << csv;
    std::cout << "wrote " << base.out_dir << "/sweep.csv\n";
    return 0;
}

struct LoadedRun {
    std::string method;
    uint64_t seed;
    double mr;
    std::optional<double> forgetting;
    RMatrix r;
};

bool load_run_dir(const fs::path& dir, LoadedRun& out) {
    std::ifstream in(dir / "manifest.json");
    if (!in) return false;
    json m;
    try {
        in >> m;
        if (!m.value("complete", false)) return false;
        out.method = m.at("method_label").get<std::string>();
        out.seed = m.at("seed").get<uint64_t>();
        out.mr = m.at("mr_at_1").get<double>();
        if (m.at("forgetting").is_null()) {
            out.forgetting = std::nullopt;
        } else {
            out.forgetting = m.at("forgetting").get<double>();
        }
        const auto& rm = m.at("r_matrix");
        out.r = RMatrix(static_cast<int>(rm.size()));
        for (int l = 0; l < out.r.T; ++l)
            for (int t = 0; t < out.r.T; ++t) out.r.at(l, t) = rm[l][t].get<double>();
    } catch (const std::exception&) {
        return false;
    }
    return true;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_dir) {
    std::vector<LoadedRun> runs;
    for (const std::string& input : inputs) {
        if (!fs::exists(input)) {
            std::cerr << "skipping missing path " << input << "\n";
            continue;
        }
        std::vector<fs::path> manifest_dirs;
        if (fs::exists(fs::path(input) / "manifest.json")) manifest_dirs.push_back(input);
        for (const auto& e : fs::recursive_directory_iterator(input)) {
            if (e.is_regular_file() && e.path().filename() == "manifest.json") {
                manifest_dirs.push_back(e.path().parent_path());
            }
        }
        std::sort(manifest_dirs.begin(), manifest_dirs.end());
        manifest_dirs.erase(std::unique(manifest_dirs.begin(), manifest_dirs.end()),
                            manifest_dirs.end());
        for (const fs::path& dir : manifest_dirs) {
            LoadedRun run;
            if (load_run_dir(dir, run)) {
                runs.push_back(std::move(run));
            } else {
                std::cerr << "skipping incomplete run " << dir << "\n";
            }
        }
    }
    if (runs.empty()) {
        std::cerr << "error: no completed runs found\n";
        return 1;
    }
    std::sort(runs.begin(), runs.end(), [](const LoadedRun& a, const LoadedRun& b) {
        return a.method != b.method ? a.method < b.method : a.seed < b.seed;
    });

    fs::create_directories(out_dir);

    std::vector<SummaryRow> rows;
    for (const LoadedRun& r : runs) rows.push_back({r.method, r.seed, r.mr, r.forgetting});
    std::ofstream(out_dir + "/report_summary.csv") << summary_csv(rows);

    // Per-method seed means.
    std::map<std::string, std::vector<const LoadedRun*>> by_method;
    for (const LoadedRun& r : runs) by_method[r.method].push_back(&r);

    std::string cmp = "method,runs,mr_at_1_mean,forgetting_mean\n";
    for (const auto& [method, group] : by_method) {
        double mr = 0.0, fg = 0.0;
        for (const LoadedRun* r : group) {
            mr += r->mr;
            fg += r->forgetting.value_or(0.0);
        }
        cmp += method + "," + std::to_string(group.size()) + "," +
               format_double(mr / group.size()) + "," + format_double(fg / group.size()) + "\n";
    }
    std::ofstream(out_dir + "/report_comparison.csv") << cmp;

    // Seed-mean R-matrix per method (grid plot data) and per-step series
    // (line plot data: first task's recall and mean recall over seen tasks).
    std::string series = "method,step,recall_task1,mean_recall_seen\n";
    for (const auto& [method, group] : by_method) {
        const int T = group.front()->r.T;
        RMatrix mean_r(T);
        for (const LoadedRun* r : group) {
            if (r->r.T != T) continue;
            for (int l = 0; l < T; ++l)
                for (int t = 0; t < T; ++t) mean_r.at(l, t) += r->r.at(l, t) / group.size();
        }
        std::string grid = "step,task,recall_at_1\n";
        for (int l = 0; l < T; ++l)
            for (int t = 0; t < T; ++t)
                grid += std::to_string(l + 1) + "," + std::to_string(t + 1) + "," +
                        format_double(mean_r.at(l, t)) + "\n";
        std::ofstream(out_dir + "/report_rmatrix_" + method + ".csv") << grid;

        for (int l = 0; l < T; ++l) {
            double seen = 0.0;
            for (int t = 0; t <= l; ++t) seen += mean_r.at(l, t);
            series += method + "," + std::to_string(l + 1) + "," +
                      format_double(mean_r.at(l, 0)) + "," + format_double(seen / (l + 1)) + "\n";
        }
    }
    std::ofstream(out_dir + "/report_series.csv") << series;
    std::cout << "report written to " << out_dir << " (" << runs.size() << " runs, "
              << by_method.size() << " methods)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual place-recognition lab"};
    app.require_subcommand(1);

    std::string config_path, out_override, data_override, method_override, ablation, convention;
    std::vector<uint64_t> seed_override;
    int jobs = 1;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run config JSON");
        cmd->add_option("--out", out_override, "output directory override");
        cmd->add_option("--data", data_override, "dataset directory override");
        cmd->add_option("--seed", seed_override, "seed override (repeatable)");
        cmd->add_option("--method", method_override, "strategy: finetune or kdf_plus");
        cmd->add_option("--ablation", ablation,
                        "no-loss-aware | no-rehearsal | mix | max-replacement");
        cmd->add_option("--convention", convention, "forgetting convention: eq8-literal | standard");
        cmd->add_option("--jobs", jobs, "parallel workers");
    };

    CLI::App* gen = app.add_subcommand("gen", "generate the protocol's synthetic datasets");
    add_common(gen);
    CLI::App* train = app.add_subcommand("train", "run the continual protocol");
    add_common(train);
    CLI::App* sweep = app.add_subcommand("sweep", "omega sensitivity sweep");
    add_common(sweep);
    std::string sweep_param = "omega";
    std::vector<double> sweep_values;
    sweep->add_option("--param", sweep_param, "swept parameter (omega)");
    sweep->add_option("--values", sweep_values, "sweep values")->delimiter(',');

    CLI::App* report = app.add_subcommand("report", "merge completed runs into CSV reports");
    std::vector<std::string> report_inputs;
    std::string report_out = "report";
    report->add_option("runs", report_inputs, "run directories");
    report->add_option("--out", report_out, "report output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (report->parsed()) return cmd_report(report_inputs, report_out);

        RunConfig cfg = config_path.empty() ? default_run_config() : load_run_config(config_path);
        if (!out_override.empty()) cfg.out_dir = out_override;
        if (!data_override.empty()) cfg.data_dir = data_override;
        if (!seed_override.empty()) cfg.seeds = seed_override;
        if (!method_override.empty()) cfg.strategy.method = method_from_string(method_override);
        if (!convention.empty()) cfg.convention = convention_from_string(convention);
        apply_ablation(cfg.strategy, ablation);
        cfg.validate();

        if (gen->parsed()) return cmd_gen(cfg);
        if (train->parsed()) return cmd_train(cfg, jobs);
        if (sweep->parsed()) {
            if (sweep_param != "omega") {
                std::cerr << "error: only omega sweeps are supported\n";
                return 1;
            }
            return cmd_sweep(cfg, sweep_values, jobs);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

// End-to-end exercise of the kdfp binary: gen -> train -> sweep -> report.
// Takes the binary path as argv[1]; uses a tiny two-domain config so the
// whole flow stays in seconds.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int checks_failed = 0;

void expect(bool ok, const std::string& what) {
    if (!ok) {
        ++checks_failed;
        std::cerr << "FAILED: " << what << "\n";
    } else {
        std::cout << "ok: " << what << "\n";
    }
}

int run(const std::string& cmd) {
    const int status = std::system((cmd + " >> cli_smoke_log.txt 2>&1").c_str());
    return status;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kTinyConfig = R"({
  "protocol": {
    "domains": [
      {"domain_id": 0, "num_places": 20, "area_side": 400, "landmarks_per_place": 5,
       "points_per_submap": 24, "noise_sigma": 0.4, "rotation": 0.0,
       "dropout_rate": 0.0, "clutter_rate": 0.02, "seed": 501},
      {"domain_id": 1, "num_places": 20, "area_side": 400, "landmarks_per_place": 5,
       "points_per_submap": 24, "noise_sigma": 0.6, "rotation": 0.9,
       "dropout_rate": 0.1, "clutter_rate": 0.08, "seed": 502}
    ]
  },
  "encoder": {"mlp_widths": [8, 16], "descriptor_dim": 8, "head_hidden": 4},
  "optim": {"learning_rate": 0.001, "epochs_per_step": 3, "batch_start": 4, "batch_cap": 16},
  "memory_capacity": 12,
  "data_dir": "smoke_data",
  "out_dir": "smoke_runs",
  "seeds": [1]
})";

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: cli_smoke <path-to-kdfp>\n";
        return 2;
    }
    const std::string kdfp = fs::absolute(argv[1]).string();
    const std::string sandbox = "cli_smoke_sandbox";
    fs::remove_all(sandbox);
    fs::create_directories(sandbox);
    const auto prev = fs::current_path();
    fs::current_path(sandbox);

    {
        std::ofstream cfg("config.json");
        cfg << kTinyConfig;
    }

    // train before gen: must fail naming the missing file
    expect(run(kdfp + " train --config config.json") != 0, "train without datasets fails");
    expect(slurp("cli_smoke_log.txt").find("domain_0.jsonl") != std::string::npos,
           "missing dataset is named");

    // gen is deterministic byte for byte
    expect(run(kdfp + " gen --config config.json") == 0, "gen succeeds");
    expect(fs::exists("smoke_data/domain_0.jsonl") && fs::exists("smoke_data/domain_1.jsonl"),
           "gen wrote one file per domain");
    expect(fs::exists("smoke_data/protocol_manifest.json"), "gen wrote the protocol manifest");
    const std::string first = slurp("smoke_data/domain_0.jsonl");
    expect(run(kdfp + " gen --config config.json") == 0, "second gen succeeds");
    expect(slurp("smoke_data/domain_0.jsonl") == first, "gen output is byte-identical");

    // train the default strategy, then the finetune baseline by flag
    expect(run(kdfp + " train --config config.json") == 0, "train kdf_plus succeeds");
    expect(fs::exists("smoke_runs/kdf_plus/seed_1/rmatrix.csv"), "run dir has rmatrix.csv");
    expect(fs::exists("smoke_runs/kdf_plus/seed_1/manifest.json"), "run dir has manifest.json");
    expect(fs::exists("smoke_runs/kdf_plus/seed_1/summary.csv"), "run dir has summary.csv");
    expect(fs::exists("smoke_runs/kdf_plus/seed_1/checkpoint_step_2.json"),
           "run dir has per-step checkpoints");
    expect(fs::exists("smoke_runs/kdf_plus/seed_1/buffer_step_2.json"),
           "run dir has buffer dumps");

    expect(run(kdfp + " train --config config.json --method finetune") == 0,
           "train finetune succeeds");
    expect(fs::exists("smoke_runs/finetune/seed_1/rmatrix.csv"), "finetune run dir exists");

    // determinism across repeated runs of the same (config, seed)
    const std::string rmat = slurp("smoke_runs/kdf_plus/seed_1/rmatrix.csv");
    expect(run(kdfp + " train --config config.json --out smoke_runs2") == 0, "re-train succeeds");
    expect(slurp("smoke_runs2/kdf_plus/seed_1/rmatrix.csv") == rmat,
           "rmatrix.csv is byte-identical across runs");

    // ablation flag routes to a distinct run directory
    expect(run(kdfp + " train --config config.json --ablation no-loss-aware") == 0,
           "ablation run succeeds");
    expect(fs::exists("smoke_runs/kdf_plus-no_loss_aware/seed_1/rmatrix.csv"),
           "ablation run dir is suffixed");

    // sweep: restartable, emits the aggregate csv
    expect(run(kdfp + " sweep --config config.json --values 0.05,0.1") == 0, "sweep succeeds");
    expect(fs::exists("smoke_runs/sweep.csv"), "sweep.csv exists");
    {
        const std::string csv = slurp("smoke_runs/sweep.csv");
        expect(csv.rfind("omega,mr_at_1_mean,forgetting_mean\n", 0) == 0, "sweep csv header");
        int lines = 0;
        for (char c : csv) lines += c == '\n';
        expect(lines == 3, "sweep csv has one row per value");
    }
    expect(run(kdfp + " sweep --config config.json --values 0.05,0.1") == 0,
           "re-sweep skips completed cells");
    expect(slurp("cli_smoke_log.txt").find("skipping completed") != std::string::npos,
           "sweep restart detected completed runs");
    expect(run(kdfp + " sweep --config config.json --values=-1") != 0,
           "invalid sweep value rejected");

    // report over everything
    expect(run(kdfp + " report smoke_runs --out report") == 0, "report succeeds");
    expect(fs::exists("report/report_summary.csv"), "report summary exists");
    expect(fs::exists("report/report_comparison.csv"), "report comparison exists");
    expect(fs::exists("report/report_rmatrix_kdf_plus.csv"), "per-method grid exists");
    expect(fs::exists("report/report_series.csv"), "per-step series exists");
    const std::string cmp = slurp("report/report_comparison.csv");
    expect(cmp.find("finetune") != std::string::npos &&
               cmp.find("kdf_plus") != std::string::npos,
           "comparison covers both methods");
    expect(run(kdfp + " report empty_nowhere --out report2") != 0, "empty report input fails");

    fs::current_path(prev);
    if (checks_failed == 0) fs::remove_all(sandbox);

    std::cout << (checks_failed == 0 ? "cli_smoke: all checks passed\n"
                                     : "cli_smoke: FAILURES\n");
    return checks_failed == 0 ? 0 : 1;
}

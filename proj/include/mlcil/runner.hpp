#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mlcil/cinet.hpp"
#include "mlcil/dataio.hpp"
#include "mlcil/protocol.hpp"
#include "mlcil/trainer.hpp"

namespace mlcil {

// One config file drives every command; missing keys fall back to these
// defaults and unknown keys are rejected.
struct RunnerConfig {
    GenConfig gen;
    std::string model_kind = "cinet";
    CinetConfig model;
    TrainConfig train;
    std::string protocol = "B0-C5";
};

RunnerConfig load_config(const std::string& path);  // empty path -> defaults

struct CliOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> mper;
    std::optional<double> alpha;
    std::optional<double> beta;
    std::optional<std::string> protocol;
};

void apply_overrides(RunnerConfig& cfg, const CliOverrides& o);

std::string config_json(const RunnerConfig& cfg);  // canonical echo

// ---- command cores (throw DataError / CheckError; CLI maps to exit codes) ----

struct GenOutcome {
    std::string manifest_path;
    std::size_t train_samples = 0;
    std::size_t test_samples = 0;
};
GenOutcome cmd_gen(const RunnerConfig& cfg, const std::string& out_dir);

std::string cmd_split(const RunnerConfig& cfg, const std::string& out_dir);  // manifest path

struct TrainOutcome {
    std::vector<SessionReport> reports;
    RunSummary summary;
    std::string report_path;   // reports.jsonl
    std::string summary_path;  // summary.json
};
// data_dir empty -> generate the stream in memory from cfg.gen
TrainOutcome cmd_train(const RunnerConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir);

struct EvalOutcome {
    std::size_t session = 0;
    MetricsSummary metrics;
    std::string report_path;
};
EvalOutcome cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
                     const std::string& out_dir);

struct GradCheckOutcome {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t checked = 0;
};
// full model with all three losses on a random batch
GradCheckOutcome run_gradcheck(std::size_t feature_dim, std::size_t patches,
                               std::size_t classes, std::size_t heads, std::size_t batch,
                               std::uint64_t seed);

struct AblateRow {
    std::string variant;
    std::vector<double> final_map;    // per seed
    std::vector<double> average_map;  // per seed
    double mean_final = 0.0;
    double mean_average = 0.0;
};
// variants out of {"baseline", "cinet", "cinet_mc"}; each runs seed_count
// seeds starting at cfg.train.seed
std::vector<AblateRow> cmd_ablate(const RunnerConfig& cfg,
                                  const std::vector<std::string>& variants,
                                  std::size_t seed_count, const std::string& out_dir);

struct SweepRow {
    std::size_t mper = 0;
    double final_map = 0.0;
    double average_map = 0.0;
};
std::vector<SweepRow> cmd_sweep_buffer(const RunnerConfig& cfg,
                                       const std::vector<std::size_t>& mpers,
                                       const std::string& out_dir);

}  // namespace mlcil

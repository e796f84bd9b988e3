#pragma once

// Command-line front end: gen, probe, test, scm, report.
//
// Exit codes: 0 success, 2 usage/config/format/IO error, 3 statistical error.
// stdout carries only output paths (or a JSON document with --json); all
// diagnostics go to stderr.

#include "nullprobe/estimators.hpp"
#include "nullprobe/nulltest.hpp"
#include "nullprobe/synthetic_task.hpp"
#include "nullprobe/toynet.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace nullprobe {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitStatistical = 3;

// Every parameter of a gen/probe/test run. Seeds left unset in the config
// derive from `seed`.
struct RunConfig {
  std::uint64_t seed = 0;
  ToyModelConfig model;
  std::uint64_t model_seed = 0;
  PlantSpec plant;
  TaskParams task;
  std::size_t n_samples = 300;
  std::uint64_t input_seed = 0;
  std::optional<std::filesystem::path> traces_dir;  // analyze stored traces instead of generating
  std::string probe_kind = "auto";  // auto | logistic | ridge
  ProbeSpec probe;
  std::size_t folds = 10;
  std::uint64_t cv_seed = 0;
  std::string metric = "auto";  // auto | accuracy | r2 | pearson
  std::vector<std::size_t> layers;  // empty = every layer
  std::string family = "weights:all";
  std::size_t B = 39;
  std::size_t chance_B = 99;
  double alpha = 0.05;
  CorrectionMethod correction = CorrectionMethod::kBenjaminiHochberg;
  std::uint64_t master_seed = 0;
  std::size_t threads = 1;  // not part of the echoed config; results do not depend on it
};

// Parses a config document; unknown keys and ill-typed values raise
// ValidationError naming the key path.
RunConfig run_config_from_json(const nlohmann::json& j);
// Resolved config with every seed explicit (threads and paths omitted).
nlohmann::json run_config_to_json(const RunConfig& config);
// Cross-field checks; called before any computation.
void validate(const RunConfig& config);

// Parses "0:4" (inclusive range) or "1,3,4".
std::vector<std::size_t> parse_layer_list(const std::string& text);

// Checks the structure of a layer-sweep report; ValidationError names the path.
void validate_sweep_report(const nlohmann::json& report);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nullprobe

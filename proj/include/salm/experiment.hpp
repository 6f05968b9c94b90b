#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "salm/config.hpp"
#include "salm/eval.hpp"

namespace salm {

struct ExperimentResult {
  std::string run_dir;
  EvalReport report;
  std::string tokenizer_path;
  std::string model_path;  // model.ckpt or model.arpa
  std::string report_path;
};

/// Full pipeline: prepare corpora, train the tokenizer on the training split
/// only, train the model, evaluate on the target test split. All artifacts
/// land under <runs_root>/<config stem>/ with the config copied in verbatim.
/// Reruns with the same seed reproduce identical artifacts.
ExperimentResult run_experiment(const std::string& config_path, const std::string& runs_root,
                                std::optional<std::uint64_t> seed_override = std::nullopt,
                                bool verbose = false);

/// Parses `text` as three comma-separated split ratios (percent or fraction).
std::array<double, 3> parse_split(const std::string& text);

}  // namespace salm

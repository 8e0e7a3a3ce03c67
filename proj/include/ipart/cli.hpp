#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "ipart/config.hpp"
#include "ipart/evaluator.hpp"

namespace ipart {

enum ExitCode : int {
  exit_ok = 0,
  exit_usage = 1,
  exit_config = 2,
  exit_io = 3,
  exit_numerical = 4,
};

struct RunOptions {
  std::filesystem::path checkpoint;  // default: <out>/checkpoint.rgt
  Index samples = 4;                 // visualize: number of test samples
};

/// Runs one of gen, train, eval, visualize, ablate and maps failures to exit
/// codes. Progress and errors go to `log`.
int run(const std::string& command, const RunConfig& cfg, const RunOptions& opts, std::ostream& log);

struct Splits {
  Dataset train, fit, test;
};

/// Reads `<data>/{train,fit,test}` when a data directory is configured,
/// otherwise generates the requested splits from the run seed.
Splits load_splits(const RunConfig& cfg, bool want_train, bool want_eval);

struct AblationRow {
  std::string variant;
  EvalReport report;
};

/// full, no_regularization (w_reg = 0) and no_attention, sharing seeds and data.
std::vector<AblationRow> ablate(const RunConfig& cfg, const Splits& splits, std::ostream& log);
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Overlay of the hard part map on the image, colored per part.
Tensor assignment_overlay(const Tensor& image, const Tensor& assignment);
/// Part colors scaled by the attention of the winning part.
Tensor attention_overlay(const Tensor& image, const Tensor& assignment, const Tensor& attention);
/// Attribution heat map, min-max normalized, blended with the image.
Tensor attribution_overlay(const Tensor& image, const Tensor& attribution);

}  // namespace ipart

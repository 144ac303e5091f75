#pragma once

#include <ostream>
#include <string>

#include "star/config.hpp"

namespace star::cli {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kInputError = 2,
  kDegenerate = 3,
  kDivergence = 4,
};

/// Entry point of the star_kit tool; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Experiment drivers. Each writes its CSV tables, summary.json and the
/// effective config.json into `dir` and returns true when every claim in the
/// summary holds.
bool run_stability(const RunConfig& cfg, const std::string& dir, int threads);
bool run_anisotropy(const RunConfig& cfg, const std::string& dir);
bool run_restriction(const RunConfig& cfg, const std::string& dir);

}  // namespace star::cli

#pragma once

#include <cstdint>
#include <string>

#include "star/heatmap.hpp"
#include "star/losses.hpp"
#include "star/metrics.hpp"
#include "star/synthetic.hpp"

namespace star {

struct ExperimentSettings {
  int n_models = 5;
  double restriction_w = 1.0;  // weight for the restricted arm of the restriction run
};

struct MetricsSettings {
  metrics::Normalizer normalizer = metrics::InterOcular{0, 1};
  double threshold = 0.10;
  int resolution = 1000;
};

/// Fully explicit run description. The dataset is drawn from `seed`; model k
/// of an experiment trains with optimizer seed `seed + kModelSeedOffset + k`.
struct RunConfig {
  std::uint64_t seed = 0;
  Grid grid{40, 40};
  LossConfig loss;
  synthetic::DatasetConfig dataset;  // dataset.grid mirrors `grid`
  synthetic::OptimizerConfig optimizer;
  ExperimentSettings experiment;
  MetricsSettings metrics;

  static constexpr std::uint64_t kModelSeedOffset = 1000;

  synthetic::OptimizerConfig model_optimizer() const;
  void validate() const;
};

/// Strict parse: unknown keys and wrong types raise ParseError, bad values
/// raise InvalidArgument. Missing keys take their defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

/// Every field written out, defaults included.
std::string dump_run_config(const RunConfig& cfg);

}  // namespace star

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "star/heatmap.hpp"
#include "star/losses.hpp"
#include "star/moments.hpp"

namespace star::synthetic {

using Vec = Eigen::VectorXd;
using Pt = Point<double>;

enum class ContourKind { Ellipse, Parabola };

/// Landmarks evenly spaced along an ellipse (closed, t = k/K) or a parabola
/// y = cy + curvature (x - cx)^2 over |x - cx| <= half_width (t = k/(K-1)).
struct ContourSpec {
  ContourKind kind = ContourKind::Ellipse;
  Pt center{19.5, 19.5};
  double semi_x = 5.0;
  double semi_y = 4.0;
  double curvature = 0.08;
  double half_width = 6.0;
  int landmark_count = 8;

  std::vector<Pt> points() const;
  std::vector<Pt> tangents() const;
};

/// Ambiguous landmarks get sigma_tangent along the contour and sigma_normal
/// across it; the rest get sigma_normal in both directions.
struct NoiseModel {
  double sigma_tangent = 3.0;
  double sigma_normal = 0.5;
  std::vector<bool> ambiguous;  // one flag per landmark

  bool is_ambiguous(int landmark) const {
    return landmark < int(ambiguous.size()) && ambiguous[landmark];
  }
};

/// Alternating flags: even landmarks ambiguous.
std::vector<bool> alternating_flags(int count);

struct DatasetConfig {
  Grid grid{40, 40};
  ContourSpec contour;
  NoiseModel noise{3.0, 0.5, alternating_flags(8)};
  int n_train = 500;
  int n_test = 200;
  double translation_jitter = 2.0;  // per-image shift, uniform in [-j, j] px
  double feature_jitter = 0.1;      // px, on the encoded coordinates
  int nuisance_dims = 8;

  void validate() const;
};

struct SyntheticSample {
  Vec feature;
  Pt true_point;
  Pt annotation;
  Pt tangent;
};

/// samples[landmark][image]
struct Dataset {
  Grid grid;
  std::vector<bool> ambiguous;
  std::vector<std::vector<SyntheticSample>> samples;

  int landmarks() const { return int(samples.size()); }
  int images() const { return samples.empty() ? 0 : int(samples.front().size()); }
  Dataset slice(int begin, int end) const;
};

/// Deterministic in `seed`. Throws LandmarkOutOfBounds when a landmark, its
/// translation range and a 4-sigma noise margin do not fit the grid.
Dataset generate_dataset(const DatasetConfig& cfg, int n_samples,
                         std::uint64_t seed);

/// Same, with the default jitter and nuisance settings.
Dataset generate_dataset(const ContourSpec& contour, const NoiseModel& noise,
                         int n_samples, const Grid& grid, std::uint64_t seed);

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

TrainTestSplit generate_split(const DatasetConfig& cfg, std::uint64_t seed);

/// feature -> logits, one affine map per landmark; inputs are standardized
/// with statistics frozen from the training features.
struct LinearPredictor {
  Grid grid;
  Eigen::MatrixXd weights;  // (H*W) x D
  Vec bias;                 // H*W
  Vec input_mean;
  Vec input_scale;

  Vec standardize(const Vec& feature) const;
  GridMatrix<double> logits(const Vec& feature) const;
  HeatmapD heatmap(const Vec& feature) const;
  Pt predict(const Vec& feature) const;
};

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 40;
  int batch_size = 16;
  double init_scale = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-parameter-block optimizer state; parameters and gradients are flat.
class Optimizer {
 public:
  explicit Optimizer(const OptimizerConfig& cfg) : cfg_(cfg) {}
  void step(Eigen::Ref<Vec> params, const Vec& grad);
  long steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  Vec m_;
  Vec v_;
  long t_ = 0;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0;
  double mean_lambda1 = 0;
  double mean_lambda2 = 0;
  int degenerate = 0;  // samples skipped for a zero Bessel denominator
};

struct TrainResult {
  std::vector<LinearPredictor> models;  // one per landmark
  std::vector<EpochStats> history;
};

TrainResult train(const Dataset& dataset, const LossConfig& loss,
                  const OptimizerConfig& opt);

Pt predict(const TrainResult& model, int landmark, const Vec& feature);

struct LandmarkVariance {
  int landmark = 0;
  bool ambiguous = false;
  double mean_tangential = 0;
  double median_tangential = 0;
  double mean_normal = 0;
  double median_normal = 0;
  double mean_total = 0;
};

struct StabilityResult {
  int n_models = 0;
  std::vector<LandmarkVariance> landmarks;
  // [landmark][test image] cross-model variances
  std::vector<std::vector<double>> tangential;
  std::vector<std::vector<double>> normal;
  std::vector<std::vector<double>> total;
  std::vector<std::vector<EpochStats>> histories;

  /// Median over all test samples of the selected landmarks.
  double pooled_median_tangential(bool ambiguous) const;
  double pooled_median_normal(bool ambiguous) const;
};

/// Cross-model variance of `predictions[model][image]` split into the
/// tangent and normal components of each image's landmark.
void decompose_variance(const std::vector<std::vector<Pt>>& predictions,
                        const std::vector<SyntheticSample>& samples,
                        std::vector<double>& tangential,
                        std::vector<double>& normal, std::vector<double>& total);

/// Trains n_models models that differ only in optimizer seed
/// (opt_base.seed + k) and measures their disagreement on the test split.
StabilityResult stability_experiment(int n_models, const TrainTestSplit& data,
                                     const LossConfig& loss,
                                     const OptimizerConfig& opt_base,
                                     int threads = 1);

struct LandmarkAnisotropy {
  int landmark = 0;
  bool ambiguous = false;
  double mean_ratio = 0;
  int evaluated = 0;
  int excluded = 0;  // degenerate heatmaps
};

std::vector<LandmarkAnisotropy> anisotropy_experiment(const TrainResult& model,
                                                      const Dataset& test,
                                                      double lambda_floor = kDefaultLambdaFloor);

/// Mean of per-landmark mean ratios over landmarks with the given flag.
double mean_ratio(const std::vector<LandmarkAnisotropy>& rows, bool ambiguous);

struct RestrictionResult {
  std::vector<EpochStats> unrestricted;
  std::vector<EpochStats> restricted;
  double final_lambda1_unrestricted = 0;
  double final_lambda1_restricted = 0;
};

/// Same data and seed, NoRestriction vs the value restriction with weight w.
RestrictionResult restriction_experiment(const Dataset& train,
                                         const LossConfig& loss, double w,
                                         const OptimizerConfig& opt);

int threads_from_env(int fallback = 1);

}  // namespace star::synthetic

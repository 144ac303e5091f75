#pragma once

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "star/heatmap.hpp"

namespace star::metrics {

using Pt = Point<double>;

/// Landmark coordinates of one image, in pixels.
struct Annotation {
  std::vector<Pt> points;

  void validate() const;
  int size() const { return int(points.size()); }
};

/// Distance between two configured landmarks of the ground truth
/// (outer eye corners for inter-ocular, pupil centers for inter-pupil).
struct InterOcular {
  int i = 0;
  int j = 1;
};
struct InterPupil {
  int i = 0;
  int j = 1;
};
struct ConstantNormalizer {
  double value = 1.0;
};

using Normalizer = std::variant<InterOcular, InterPupil, ConstantNormalizer>;

/// Named index presets: "300w_inter_ocular" (36, 45), "wflw_inter_ocular" (60, 72).
Normalizer normalizer_preset(const std::string& name);

double normalizing_distance(const Annotation& gt, const Normalizer& norm);

/// Mean point-to-point error over landmarks divided by the normalizer.
double nme(const Annotation& pred, const Annotation& gt, const Normalizer& norm);

/// Fraction of images whose NME is strictly above the threshold.
double fr(const std::vector<double>& nmes, double threshold = 0.10);

/// Area under the cumulative error curve on [0, threshold], divided by the
/// threshold; integrated exactly over the step function's breakpoints.
double auc(const std::vector<double>& nmes, double threshold = 0.10,
           int resolution = 1000);

/// `resolution` samples t_j = threshold * j / (resolution - 1) of the
/// fraction of images with NME <= t_j.
std::vector<std::pair<double, double>> ced(const std::vector<double>& nmes,
                                           double threshold = 0.10,
                                           int resolution = 1000);

struct MetricReport {
  std::vector<double> nme_per_image;
  double mean_nme = 0;
  double fr = 0;
  double auc = 0;
  double threshold = 0.10;
  std::vector<std::pair<double, double>> ced;
};

MetricReport evaluate(const std::vector<Annotation>& preds,
                      const std::vector<Annotation>& gts, const Normalizer& norm,
                      double threshold = 0.10, int resolution = 1000);

// Annotation JSON: {"points": [[x, y], ...]} for one image, or an array of
// such objects for several.
std::vector<Annotation> parse_annotations(const std::string& text);
std::vector<Annotation> read_annotations(const std::string& path);

}  // namespace star::metrics

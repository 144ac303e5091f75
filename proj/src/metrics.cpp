#include "star/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace star::metrics {

namespace {

void require_nonempty(const std::vector<double>& nmes, const char* who) {
  if (nmes.empty()) throw EmptyInput(std::string(who) + ": empty NME list");
}

void require_resolution(int resolution) {
  if (resolution < 2) throw InvalidArgument("resolution must be at least 2");
}

}  // namespace

void Annotation::validate() const {
  if (points.size() < 2) throw ShapeMismatch("annotation needs at least 2 landmarks");
  for (const auto& p : points) {
    if (!p.allFinite()) throw NonFiniteInput("annotation has non-finite coordinates");
  }
}

Normalizer normalizer_preset(const std::string& name) {
  if (name == "300w_inter_ocular") return InterOcular{36, 45};
  if (name == "wflw_inter_ocular") return InterOcular{60, 72};
  throw InvalidArgument("unknown normalizer preset '" + name + "'");
}

double normalizing_distance(const Annotation& gt, const Normalizer& norm) {
  if (const auto* c = std::get_if<ConstantNormalizer>(&norm)) return c->value;
  const auto [i, j] = std::visit(
      [](const auto& n) -> std::pair<int, int> {
        if constexpr (std::is_same_v<std::decay_t<decltype(n)>, ConstantNormalizer>) {
          return {0, 0};
        } else {
          return {n.i, n.j};
        }
      },
      norm);
  if (i < 0 || j < 0 || i >= gt.size() || j >= gt.size()) {
    throw ShapeMismatch("normalizer index out of range for " +
                        std::to_string(gt.size()) + " landmarks");
  }
  return (gt.points[i] - gt.points[j]).norm();
}

double nme(const Annotation& pred, const Annotation& gt, const Normalizer& norm) {
  pred.validate();
  gt.validate();
  if (pred.size() != gt.size()) {
    throw ShapeMismatch("prediction has " + std::to_string(pred.size()) +
                        " landmarks, ground truth " + std::to_string(gt.size()));
  }
  const double d = normalizing_distance(gt, norm);
  if (!(d > 0)) throw ZeroNormalizer("normalizing distance must be positive");
  double sum = 0;
  for (int k = 0; k < gt.size(); ++k) sum += (pred.points[k] - gt.points[k]).norm();
  return sum / gt.size() / d;
}

double fr(const std::vector<double>& nmes, double threshold) {
  require_nonempty(nmes, "fr");
  const auto failures = std::count_if(nmes.begin(), nmes.end(),
                                      [&](double v) { return v > threshold; });
  return double(failures) / double(nmes.size());
}

double auc(const std::vector<double>& nmes, double threshold, int resolution) {
  require_nonempty(nmes, "auc");
  require_resolution(resolution);
  if (!(threshold > 0)) throw InvalidArgument("threshold must be positive");
  // The curve steps up by 1/n at each sorted breakpoint; between breakpoints
  // it is flat, so trapezoids over the breakpoints are exact.
  std::vector<double> sorted = nmes;
  std::sort(sorted.begin(), sorted.end());
  const double n = double(sorted.size());
  double area = 0;
  std::size_t count = 0;
  double t_prev = 0;
  for (double v : sorted) {
    if (v > threshold) break;
    const double t = std::max(v, 0.0);
    area += double(count) / n * (t - t_prev);
    ++count;
    t_prev = t;
  }
  area += double(count) / n * (threshold - t_prev);
  return area / threshold;
}

std::vector<std::pair<double, double>> ced(const std::vector<double>& nmes,
                                           double threshold, int resolution) {
  require_nonempty(nmes, "ced");
  require_resolution(resolution);
  std::vector<double> sorted = nmes;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::pair<double, double>> curve;
  curve.reserve(resolution);
  for (int j = 0; j < resolution; ++j) {
    const double t = j == resolution - 1 ? threshold : threshold * j / (resolution - 1);
    const auto below = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    curve.emplace_back(t, double(below) / double(sorted.size()));
  }
  return curve;
}

MetricReport evaluate(const std::vector<Annotation>& preds,
                      const std::vector<Annotation>& gts, const Normalizer& norm,
                      double threshold, int resolution) {
  if (preds.size() != gts.size()) {
    throw ShapeMismatch("prediction file has " + std::to_string(preds.size()) +
                        " images, ground truth " + std::to_string(gts.size()));
  }
  if (gts.empty()) throw EmptyInput("no images to evaluate");
  MetricReport r;
  r.threshold = threshold;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    r.nme_per_image.push_back(nme(preds[i], gts[i], norm));
  }
  double sum = 0;
  for (double v : r.nme_per_image) sum += v;
  r.mean_nme = sum / double(r.nme_per_image.size());
  r.fr = fr(r.nme_per_image, threshold);
  r.auc = auc(r.nme_per_image, threshold, resolution);
  r.ced = ced(r.nme_per_image, threshold, resolution);
  return r;
}

}  // namespace star::metrics

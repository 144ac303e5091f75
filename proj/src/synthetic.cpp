#include "star/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

#include "star/gradients.hpp"

namespace star::synthetic {

namespace {

Pt normal_of(const Pt& tangent) { return {-tangent.y(), tangent.x()}; }

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  const auto mid = v.begin() + v.size() / 2;
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0;
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

}  // namespace

std::vector<Pt> ContourSpec::points() const {
  std::vector<Pt> pts;
  for (int k = 0; k < landmark_count; ++k) {
    if (kind == ContourKind::Ellipse) {
      const double theta = 2.0 * std::numbers::pi * k / landmark_count;
      pts.emplace_back(center.x() + semi_x * std::cos(theta),
                       center.y() + semi_y * std::sin(theta));
    } else {
      const double t = landmark_count > 1 ? double(k) / (landmark_count - 1) : 0.5;
      const double dx = (2.0 * t - 1.0) * half_width;
      pts.emplace_back(center.x() + dx, center.y() + curvature * dx * dx);
    }
  }
  return pts;
}

std::vector<Pt> ContourSpec::tangents() const {
  std::vector<Pt> out;
  for (int k = 0; k < landmark_count; ++k) {
    Pt t;
    if (kind == ContourKind::Ellipse) {
      const double theta = 2.0 * std::numbers::pi * k / landmark_count;
      t = Pt(-semi_x * std::sin(theta), semi_y * std::cos(theta));
    } else {
      const double u = landmark_count > 1 ? double(k) / (landmark_count - 1) : 0.5;
      const double dx = (2.0 * u - 1.0) * half_width;
      t = Pt(1.0, 2.0 * curvature * dx);
    }
    out.push_back(t.normalized());
  }
  return out;
}

std::vector<bool> alternating_flags(int count) {
  std::vector<bool> flags(std::max(count, 0));
  for (int k = 0; k < count; ++k) flags[k] = (k % 2 == 0);
  return flags;
}

void DatasetConfig::validate() const {
  if (contour.landmark_count < 1) throw InvalidArgument("landmark_count must be positive");
  if (contour.kind == ContourKind::Ellipse && (!(contour.semi_x > 0) || !(contour.semi_y > 0))) {
    throw InvalidArgument("ellipse semi-axes must be positive");
  }
  if (contour.kind == ContourKind::Parabola && !(contour.half_width > 0)) {
    throw InvalidArgument("parabola half_width must be positive");
  }
  if (!(noise.sigma_normal >= 0) || !(noise.sigma_tangent >= 0)) {
    throw InvalidArgument("noise sigmas must be nonnegative");
  }
  for (int k = 0; k < contour.landmark_count; ++k) {
    if (noise.is_ambiguous(k) && noise.sigma_tangent < noise.sigma_normal) {
      throw InvalidArgument("ambiguous landmarks need sigma_tangent >= sigma_normal");
    }
  }
  if (!noise.ambiguous.empty() && int(noise.ambiguous.size()) != contour.landmark_count) {
    throw InvalidArgument("noise.ambiguous needs one flag per landmark");
  }
  if (n_train < 1 || n_test < 1) throw InvalidArgument("n_train and n_test must be positive");
  if (!(translation_jitter >= 0) || !(feature_jitter >= 0)) {
    throw InvalidArgument("jitters must be nonnegative");
  }
  if (nuisance_dims < 0) throw InvalidArgument("nuisance_dims must be nonnegative");
}

Dataset Dataset::slice(int begin, int end) const {
  Dataset out{grid, ambiguous, {}};
  for (const auto& per_landmark : samples) {
    out.samples.emplace_back(per_landmark.begin() + begin, per_landmark.begin() + end);
  }
  return out;
}

Dataset generate_dataset(const DatasetConfig& cfg, int n_samples,
                         std::uint64_t seed) {
  cfg.validate();
  if (n_samples < 1) throw InvalidArgument("n_samples must be at least 1");
  const Grid& grid = cfg.grid;
  const auto anchors = cfg.contour.points();
  const auto tangents = cfg.contour.tangents();
  const int landmarks = cfg.contour.landmark_count;

  for (int k = 0; k < landmarks; ++k) {
    const double sigma = cfg.noise.is_ambiguous(k)
                             ? std::max(cfg.noise.sigma_tangent, cfg.noise.sigma_normal)
                             : cfg.noise.sigma_normal;
    const double reach = cfg.translation_jitter + 4.0 * sigma;
    const Pt& p = anchors[k];
    if (p.x() - reach <= 0 || p.y() - reach <= 0 || p.x() + reach >= grid.width - 1 ||
        p.y() + reach >= grid.height - 1) {
      throw LandmarkOutOfBounds("landmark " + std::to_string(k) +
                                " violates the 4-sigma border margin");
    }
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-1.0, 1.0);

  Dataset ds;
  ds.grid = grid;
  ds.ambiguous.resize(landmarks);
  for (int k = 0; k < landmarks; ++k) ds.ambiguous[k] = cfg.noise.is_ambiguous(k);
  ds.samples.assign(landmarks, {});
  for (auto& v : ds.samples) v.reserve(n_samples);

  const int dims = 2 + cfg.nuisance_dims;
  for (int i = 0; i < n_samples; ++i) {
    const Pt offset(cfg.translation_jitter * shift(rng),
                    cfg.translation_jitter * shift(rng));
    for (int k = 0; k < landmarks; ++k) {
      SyntheticSample s;
      s.true_point = anchors[k] + offset;
      s.tangent = tangents[k];
      const bool amb = ds.ambiguous[k];
      const double nt = (amb ? cfg.noise.sigma_tangent : cfg.noise.sigma_normal) * gauss(rng);
      const double nn = cfg.noise.sigma_normal * gauss(rng);
      s.annotation = s.true_point + nt * s.tangent + nn * normal_of(s.tangent);
      s.feature.resize(dims);
      s.feature(0) = (s.true_point.x() + cfg.feature_jitter * gauss(rng)) / grid.width;
      s.feature(1) = (s.true_point.y() + cfg.feature_jitter * gauss(rng)) / grid.height;
      for (int d = 2; d < dims; ++d) s.feature(d) = gauss(rng);
      ds.samples[k].push_back(std::move(s));
    }
  }
  return ds;
}

Dataset generate_dataset(const ContourSpec& contour, const NoiseModel& noise,
                         int n_samples, const Grid& grid, std::uint64_t seed) {
  DatasetConfig cfg;
  cfg.grid = grid;
  cfg.contour = contour;
  cfg.noise = noise;
  return generate_dataset(cfg, n_samples, seed);
}

TrainTestSplit generate_split(const DatasetConfig& cfg, std::uint64_t seed) {
  const auto all = generate_dataset(cfg, cfg.n_train + cfg.n_test, seed);
  return {all.slice(0, cfg.n_train), all.slice(cfg.n_train, cfg.n_train + cfg.n_test)};
}

Vec LinearPredictor::standardize(const Vec& feature) const {
  return (feature - input_mean).cwiseQuotient(input_scale);
}

GridMatrix<double> LinearPredictor::logits(const Vec& feature) const {
  const Vec z = weights * standardize(feature) + bias;
  return Eigen::Map<const GridMatrix<double>>(z.data(), grid.height, grid.width);
}

HeatmapD LinearPredictor::heatmap(const Vec& feature) const {
  return softmax_normalize(logits(feature));
}

Pt LinearPredictor::predict(const Vec& feature) const {
  return soft_argmax(heatmap(feature));
}

void OptimizerConfig::validate() const {
  // learning_rate == 0 is accepted as a no-op run
  if (!(learning_rate >= 0)) throw InvalidArgument("learning_rate must be nonnegative");
  if (epochs < 1) throw InvalidArgument("epochs must be at least 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw InvalidArgument("adam betas must lie in [0, 1)");
  }
  if (!(eps > 0)) throw InvalidArgument("adam eps must be positive");
  if (!(init_scale >= 0)) throw InvalidArgument("init_scale must be nonnegative");
}

void Optimizer::step(Eigen::Ref<Vec> params, const Vec& grad) {
  ++t_;
  if (cfg_.kind == OptimizerKind::Sgd) {
    params -= cfg_.learning_rate * grad;
    return;
  }
  if (m_.size() != params.size()) {
    m_ = Vec::Zero(params.size());
    v_ = Vec::Zero(params.size());
  }
  m_ = cfg_.beta1 * m_ + (1 - cfg_.beta1) * grad;
  v_ = cfg_.beta2 * v_ + (1 - cfg_.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1 - std::pow(cfg_.beta1, double(t_));
  const double c2 = 1 - std::pow(cfg_.beta2, double(t_));
  params.array() -= cfg_.learning_rate * (m_.array() / c1) /
                    ((v_.array() / c2).sqrt() + cfg_.eps);
}

TrainResult train(const Dataset& dataset, const LossConfig& loss,
                  const OptimizerConfig& opt) {
  loss.validate();
  opt.validate();
  const int landmarks = dataset.landmarks();
  const int n = dataset.images();
  if (landmarks < 1 || n < 1) throw InvalidArgument("empty training set");
  const Grid grid = dataset.grid;
  const Eigen::Index cells = grid.cells();
  const Eigen::Index dims = dataset.samples[0][0].feature.size();

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  TrainResult result;
  std::vector<std::vector<Vec>> inputs(landmarks);
  for (int k = 0; k < landmarks; ++k) {
    LinearPredictor m;
    m.grid = grid;
    m.input_mean = Vec::Zero(dims);
    for (const auto& s : dataset.samples[k]) m.input_mean += s.feature;
    m.input_mean /= n;
    Vec var = Vec::Zero(dims);
    for (const auto& s : dataset.samples[k]) {
      var += (s.feature - m.input_mean).cwiseAbs2();
    }
    m.input_scale = (var / n).cwiseSqrt().unaryExpr(
        [](double sd) { return sd > 1e-12 ? sd : 1.0; });
    m.weights.resize(cells, dims);
    for (Eigen::Index i = 0; i < m.weights.size(); ++i) {
      m.weights.data()[i] = opt.init_scale * gauss(rng);
    }
    m.bias = Vec::Zero(cells);
    inputs[k].reserve(n);
    for (const auto& s : dataset.samples[k]) inputs[k].push_back(m.standardize(s.feature));
    result.models.push_back(std::move(m));
  }

  std::vector<Optimizer> weight_opt(landmarks, Optimizer(opt));
  std::vector<Optimizer> bias_opt(landmarks, Optimizer(opt));
  Eigen::MatrixXd grad_w(cells, dims);
  Vec grad_b(cells);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    stats.epoch = epoch;
    long evaluated = 0;
    for (int start = 0; start < n; start += opt.batch_size) {
      const int stop = std::min(n, start + opt.batch_size);
      const double scale = 1.0 / (double(stop - start) * landmarks);
      for (int k = 0; k < landmarks; ++k) {
        auto& model = result.models[k];
        grad_w.setZero();
        grad_b.setZero();
        for (int idx = start; idx < stop; ++idx) {
          const int i = order[idx];
          const Vec& x = inputs[k][i];
          const Vec z = model.weights * x + model.bias;
          const Eigen::Map<const GridMatrix<double>> logits(z.data(), grid.height,
                                                            grid.width);
          ValueAndGrad<double> vg;
          try {
            vg = value_and_grad(logits, dataset.samples[k][i].annotation, loss);
          } catch (const DegenerateDistribution&) {
            ++stats.degenerate;
            continue;
          } catch (const NonFiniteInput&) {
            throw NonFiniteLoss(epoch, "non-finite logits in epoch " + std::to_string(epoch) +
                                           ", landmark " + std::to_string(k));
          }
          if (!std::isfinite(vg.parts.total)) {
            throw NonFiniteLoss(epoch, "non-finite loss in epoch " +
                                           std::to_string(epoch) + ", landmark " +
                                           std::to_string(k));
          }
          EigenPair2<double> eig = vg.eigen;
          if (loss.objective == Objective::Regression) {
            const auto h = softmax_normalize(logits);
            try {
              eig = eigen2x2(covariance_unbiased(h, vg.mean));
            } catch (const DegenerateDistribution&) {
              eig = {};
            }
          }
          stats.loss += vg.parts.total;
          stats.mean_lambda1 += eig.lambda1;
          stats.mean_lambda2 += eig.lambda2;
          ++evaluated;
          const Eigen::Map<const Vec> g(vg.grad.data(), cells);
          grad_w.noalias() += g * x.transpose();
          grad_b += g;
        }
        grad_w *= scale;
        grad_b *= scale;
        Eigen::Map<Vec> flat_w(model.weights.data(), model.weights.size());
        weight_opt[k].step(flat_w, Eigen::Map<const Vec>(grad_w.data(), grad_w.size()));
        bias_opt[k].step(model.bias, grad_b);
      }
    }
    if (evaluated == 0) {
      throw NonFiniteLoss(epoch, "every heatmap collapsed to a single cell in epoch " +
                                     std::to_string(epoch));
    }
    stats.loss /= double(evaluated);
    stats.mean_lambda1 /= double(evaluated);
    stats.mean_lambda2 /= double(evaluated);
    if (!std::isfinite(stats.loss)) {
      throw NonFiniteLoss(epoch, "non-finite mean loss in epoch " + std::to_string(epoch));
    }
    result.history.push_back(stats);
  }
  return result;
}

Pt predict(const TrainResult& model, int landmark, const Vec& feature) {
  return model.models.at(landmark).predict(feature);
}

void decompose_variance(const std::vector<std::vector<Pt>>& predictions,
                        const std::vector<SyntheticSample>& samples,
                        std::vector<double>& tangential,
                        std::vector<double>& normal, std::vector<double>& total) {
  const int models = int(predictions.size());
  if (models < 2) throw InvalidArgument("variance needs at least two models");
  const int n = int(samples.size());
  tangential.assign(n, 0.0);
  normal.assign(n, 0.0);
  total.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    Pt centroid = Pt::Zero();
    for (int m = 0; m < models; ++m) centroid += predictions[m][i];
    centroid /= models;
    const Pt t = samples[i].tangent;
    const Pt nrm = normal_of(t);
    for (int m = 0; m < models; ++m) {
      const Pt d = predictions[m][i] - centroid;
      tangential[i] += std::pow(d.dot(t), 2);
      normal[i] += std::pow(d.dot(nrm), 2);
      total[i] += d.squaredNorm();
    }
    tangential[i] /= models - 1;
    normal[i] /= models - 1;
    total[i] /= models - 1;
  }
}

namespace {

template <typename F>
void parallel_for(int count, int threads, F&& body) {
  threads = std::clamp(threads, 1, std::max(count, 1));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(count);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t]() {
      for (int i = t; i < count; i += threads) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double pooled_median(const std::vector<std::vector<double>>& values,
                     const std::vector<LandmarkVariance>& rows, bool ambiguous) {
  std::vector<double> pool;
  for (const auto& row : rows) {
    if (row.ambiguous != ambiguous) continue;
    const auto& v = values[row.landmark];
    pool.insert(pool.end(), v.begin(), v.end());
  }
  return median(std::move(pool));
}

}  // namespace

double StabilityResult::pooled_median_tangential(bool ambiguous) const {
  return pooled_median(tangential, landmarks, ambiguous);
}

double StabilityResult::pooled_median_normal(bool ambiguous) const {
  return pooled_median(normal, landmarks, ambiguous);
}

StabilityResult stability_experiment(int n_models, const TrainTestSplit& data,
                                     const LossConfig& loss,
                                     const OptimizerConfig& opt_base, int threads) {
  if (n_models < 2) throw InvalidArgument("stability experiment needs n_models >= 2");
  std::vector<TrainResult> runs(n_models);
  parallel_for(n_models, threads, [&](int m) {
    OptimizerConfig opt = opt_base;
    opt.seed = opt_base.seed + std::uint64_t(m);
    runs[m] = train(data.train, loss, opt);
  });

  StabilityResult out;
  out.n_models = n_models;
  const int landmarks = data.test.landmarks();
  out.tangential.resize(landmarks);
  out.normal.resize(landmarks);
  out.total.resize(landmarks);
  for (const auto& r : runs) out.histories.push_back(r.history);

  for (int k = 0; k < landmarks; ++k) {
    const auto& samples = data.test.samples[k];
    std::vector<std::vector<Pt>> preds(n_models);
    for (int m = 0; m < n_models; ++m) {
      preds[m].reserve(samples.size());
      for (const auto& s : samples) preds[m].push_back(runs[m].models[k].predict(s.feature));
    }
    decompose_variance(preds, samples, out.tangential[k], out.normal[k], out.total[k]);
    LandmarkVariance row;
    row.landmark = k;
    row.ambiguous = data.test.ambiguous[k];
    row.mean_tangential = mean(out.tangential[k]);
    row.median_tangential = median(out.tangential[k]);
    row.mean_normal = mean(out.normal[k]);
    row.median_normal = median(out.normal[k]);
    row.mean_total = mean(out.total[k]);
    out.landmarks.push_back(row);
  }
  return out;
}

std::vector<LandmarkAnisotropy> anisotropy_experiment(const TrainResult& model,
                                                      const Dataset& test,
                                                      double lambda_floor) {
  std::vector<LandmarkAnisotropy> rows;
  for (int k = 0; k < test.landmarks(); ++k) {
    LandmarkAnisotropy row;
    row.landmark = k;
    row.ambiguous = test.ambiguous[k];
    double sum = 0;
    for (const auto& s : test.samples[k]) {
      const auto h = model.models[k].heatmap(s.feature);
      try {
        const auto eig = eigen2x2(covariance_unbiased(h, soft_argmax(h)));
        sum += anisotropy_ratio(eig, lambda_floor);
        ++row.evaluated;
      } catch (const DegenerateDistribution&) {
        ++row.excluded;
      }
    }
    row.mean_ratio = row.evaluated ? sum / row.evaluated : 0.0;
    rows.push_back(row);
  }
  return rows;
}

double mean_ratio(const std::vector<LandmarkAnisotropy>& rows, bool ambiguous) {
  double sum = 0;
  int count = 0;
  for (const auto& r : rows) {
    if (r.ambiguous == ambiguous && r.evaluated > 0) {
      sum += r.mean_ratio;
      ++count;
    }
  }
  return count ? sum / count : 0.0;
}

RestrictionResult restriction_experiment(const Dataset& train_set,
                                         const LossConfig& loss, double w,
                                         const OptimizerConfig& opt) {
  LossConfig unrestricted = loss;
  unrestricted.objective = Objective::Star;
  unrestricted.restriction = NoRestriction{};
  LossConfig restricted = unrestricted;
  restricted.restriction = ValueRestriction{w};

  RestrictionResult out;
  out.unrestricted = train(train_set, unrestricted, opt).history;
  out.restricted = train(train_set, restricted, opt).history;
  out.final_lambda1_unrestricted = out.unrestricted.back().mean_lambda1;
  out.final_lambda1_restricted = out.restricted.back().mean_lambda1;
  return out;
}

int threads_from_env(int fallback) {
  const char* env = std::getenv("STAR_KIT_THREADS");
  if (!env) return fallback;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || v < 1) return fallback;
  return int(std::min<long>(v, 256));
}

}  // namespace star::synthetic

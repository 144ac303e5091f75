#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <utility>

#include <Eigen/Core>

#include "star/heatmap.hpp"
#include "star/losses.hpp"
#include "star/moments.hpp"

namespace star {

inline constexpr double kDefaultFiniteDiffStep = 1e-6;

/// dL/dSigma (symmetric) and the explicit dL/dmu for one evaluated objective.
template <typename Scalar>
struct MomentGradients {
  Point<Scalar> mean = Point<Scalar>::Zero();
  Eigen::Matrix<Scalar, 2, 2> sigma = Eigen::Matrix<Scalar, 2, 2>::Zero();
};

template <typename Scalar>
MomentGradients<Scalar> moment_gradients(const ObjectiveEval<Scalar>& ev,
                                         const Point<Scalar>& target,
                                         const LossConfig& cfg) {
  using Mat2 = Eigen::Matrix<Scalar, 2, 2>;
  MomentGradients<Scalar> g;
  const Point<Scalar> e = target - ev.mean;
  const auto& kind = cfg.distance;

  if (cfg.objective == Objective::Regression) {
    g.mean = -Point<Scalar>(scalar_distance_deriv(kind, e.x()),
                            scalar_distance_deriv(kind, e.y()));
    return g;
  }

  const auto& eig = ev.eigen;
  const Scalar floor = Scalar(cfg.lambda_floor);
  const Scalar l1 = floored(eig.lambda1, floor);
  const Scalar l2 = floored(eig.lambda2, floor);
  const Scalar phi1 = Scalar(1) / std::sqrt(l1);
  const Scalar phi2 = Scalar(1) / std::sqrt(l2);
  const Scalar p1 = eig.v1.dot(e);
  const Scalar p2 = eig.v2.dot(e);
  const Scalar dd1 = scalar_distance_deriv(kind, p1);
  const Scalar dd2 = scalar_distance_deriv(kind, p2);

  g.mean = -(phi1 * dd1 * eig.v1 + phi2 * dd2 * eig.v2);

  if (std::holds_alternative<DetachRestriction>(cfg.restriction)) return g;

  // d lambda_k = v_k^T dSigma v_k; the floor is flat below lambda_floor.
  const Scalar dphi1 = eig.lambda1 > floor ? Scalar(-0.5) * phi1 / l1 : Scalar(0);
  const Scalar dphi2 = eig.lambda2 > floor ? Scalar(-0.5) * phi2 / l2 : Scalar(0);
  g.sigma += dphi1 * scalar_distance(kind, p1) * eig.v1 * eig.v1.transpose();
  g.sigma += dphi2 * scalar_distance(kind, p2) * eig.v2 * eig.v2.transpose();

  // dv_1 = (v_2^T dSigma v_1 / gap) v_2, dv_2 = -(v_1^T dSigma v_2 / gap) v_1
  const Scalar gap = eig.lambda1 - eig.lambda2;
  if (gap >= Scalar(kEigenGap)) {
    const Scalar coupling = (phi1 * dd1 * p2 - phi2 * dd2 * p1) / gap;
    const Mat2 cross = eig.v1 * eig.v2.transpose();
    g.sigma += Scalar(0.5) * coupling * (cross + cross.transpose());
  }

  if (const auto* v = std::get_if<ValueRestriction>(&cfg.restriction)) {
    // w (lambda1 + lambda2) / 2 = w tr(Sigma) / 2
    g.sigma += Scalar(0.5 * v->w) * Mat2::Identity();
  }
  return g;
}

/// Gradient of the objective with respect to the heatmap cells.
template <typename Scalar>
GridMatrix<Scalar> grad_wrt_probs(const Heatmap<Scalar>& h,
                                  const Point<Scalar>& target,
                                  const LossConfig& cfg,
                                  const ObjectiveEval<Scalar>& ev) {
  using Mat2 = Eigen::Matrix<Scalar, 2, 2>;
  const auto& p = h.probs();
  const auto mg = moment_gradients(ev, target, cfg);
  const Point<Scalar>& mu = ev.mean;
  GridMatrix<Scalar> g(p.rows(), p.cols());

  const bool through_sigma = !mg.sigma.isZero(0);
  Mat2 G = mg.sigma;
  Point<Scalar> c_term = Point<Scalar>::Zero();  // -2 G c, c = (1 - V1) mu
  Scalar den = 0;
  Scalar v1 = 0;
  Scalar v2 = 0;
  Scalar scatter_dot = 0;  // tr(G S)
  if (through_sigma) {
    const auto ws = weight_sums(h);
    v1 = ws.v1_sum;
    v2 = ws.v2_sum;
    den = bessel_denominator(ws);
    const Point<Scalar> c = (Scalar(1) - v1) * mu;
    c_term = Scalar(-2) * (G * c);
    const Mat2 s = ev.sigma.matrix() * den;
    scatter_dot = (G.array() * s.array()).sum();
  }

  // g_i = dmu . y_i + [ (y_i - mu)^T G (y_i - mu) - 2 c^T G y_i ] / D
  //       - tr(G S) dD_i / D^2,  dD_i = 1 - 2 h_i / V1 + V2 / V1^2
  const Scalar gxx = G(0, 0);
  const Scalar gxy = Scalar(0.5) * (G(0, 1) + G(1, 0));
  const Scalar gyy = G(1, 1);
  const Scalar inv_den = through_sigma ? Scalar(1) / den : Scalar(0);
  const Scalar den_const =
      through_sigma ? -scatter_dot * (Scalar(1) + v2 / (v1 * v1)) * inv_den * inv_den
                    : Scalar(0);
  const Scalar den_slope =
      through_sigma ? Scalar(2) * scatter_dot * inv_den * inv_den / v1 : Scalar(0);
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const Scalar dy = Scalar(r) - mu.y();
    const Scalar row_base = mg.mean.y() * Scalar(r) + den_const +
                            inv_den * (gyy * dy * dy + c_term.y() * Scalar(r));
    const Scalar row_cross = Scalar(2) * gxy * dy;
    for (Eigen::Index col = 0; col < p.cols(); ++col) {
      const Scalar dx = Scalar(col) - mu.x();
      g(r, col) = row_base + mg.mean.x() * Scalar(col) +
                  inv_den * (dx * (gxx * dx + row_cross) + c_term.x() * Scalar(col)) +
                  den_slope * p(r, col);
    }
  }

  if (cfg.dr_weight > 0) {
    const auto gauss = render_gaussian(h.grid(), target, Scalar(cfg.dr_sigma));
    const auto& q = gauss.probs();
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const Scalar a = p.data()[i];
      if (a > 0) {
        g.data()[i] += Scalar(0.5 * cfg.dr_weight) *
                       std::log(Scalar(2) * a / (a + q.data()[i]));
      }
    }
  }
  return g;
}

/// Backpropagates a cell gradient through softmax(logits / temperature).
template <typename Scalar>
GridMatrix<Scalar> softmax_backward(const Heatmap<Scalar>& h,
                                    const GridMatrix<Scalar>& grad_probs,
                                    Scalar temperature = 1) {
  const auto& p = h.probs();
  const Scalar mean = (p.array() * grad_probs.array()).sum();
  return (p.array() * (grad_probs.array() - mean) / temperature).matrix();
}

template <typename Scalar>
struct ValueAndGrad {
  LossParts<Scalar> parts;
  GridMatrix<Scalar> grad;
  EigenPair2<Scalar> eigen;
  Point<Scalar> mean;
};

template <typename Derived>
ValueAndGrad<typename Derived::Scalar> value_and_grad(
    const Eigen::MatrixBase<Derived>& logits,
    const Point<typename Derived::Scalar>& target, const LossConfig& cfg) {
  const auto h = softmax_normalize(logits);
  const auto ev = evaluate_objective(h, target, cfg);
  return {ev.parts, softmax_backward(h, grad_wrt_probs(h, target, cfg, ev)),
          ev.eigen, ev.mean};
}

/// Exact gradient of total_objective with respect to the logits.
template <typename Derived>
GridMatrix<typename Derived::Scalar> grad_total(
    const Eigen::MatrixBase<Derived>& logits,
    const Point<typename Derived::Scalar>& target, const LossConfig& cfg) {
  return value_and_grad(logits, target, cfg).grad;
}

/// Central differences (f(x + step) - f(x - step)) / (2 step), per entry.
template <typename Scalar, typename F>
GridMatrix<Scalar> finite_diff_grad(F&& objective,
                                    const GridMatrix<Scalar>& logits,
                                    Scalar step = Scalar(kDefaultFiniteDiffStep)) {
  GridMatrix<Scalar> x = logits;
  GridMatrix<Scalar> g(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar orig = x.data()[i];
    x.data()[i] = orig + step;
    const Scalar fp = objective(std::as_const(x));
    x.data()[i] = orig - step;
    const Scalar fm = objective(std::as_const(x));
    x.data()[i] = orig;
    g.data()[i] = (fp - fm) / (Scalar(2) * step);
  }
  return g;
}

struct GradReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  double tolerance = 0;
  int instances = 0;
  int resampled = 0;
  int worst_instance = -1;
  GridMatrix<double> analytic;  // worst instance
  GridMatrix<double> numeric;
  bool passed = false;
};

/// max|a - n| / max(max|a|, max|n|): normwise relative error of two gradients.
inline double relative_gradient_error(const GridMatrix<double>& analytic,
                                      const GridMatrix<double>& numeric) {
  const double abs_err = (analytic - numeric).cwiseAbs().maxCoeff();
  const double scale =
      std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
  if (scale == 0) return abs_err == 0 ? 0 : std::numeric_limits<double>::infinity();
  return abs_err / scale;
}

namespace detail {

inline bool near_kink(const DistanceKind& kind, double x, double margin) {
  const double a = std::abs(x);
  switch (kind.index()) {
    case 0:
      return a < margin;
    case 1:
      return false;
    case 2:
      return std::abs(a - std::get<SmoothL1Distance>(kind).s) < margin;
    default:
      return a < margin || std::abs(a - std::get<WingDistance>(kind).omega) < margin;
  }
}

}  // namespace detail

/// One random logits/target pair on which finite differences are trustworthy.
struct GradCheckInstance {
  GridMatrix<double> logits;
  Point<double> target;
  int attempts = 0;
};

inline GradCheckInstance make_gradcheck_instance(const LossConfig& cfg,
                                                 const Grid& grid,
                                                 std::uint64_t seed,
                                                 double step) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double margin = 10.0 * step * std::max(grid.width, grid.height);
  GradCheckInstance inst;
  for (;;) {
    ++inst.attempts;
    inst.logits.resize(grid.height, grid.width);
    for (Eigen::Index i = 0; i < inst.logits.size(); ++i) {
      inst.logits.data()[i] = 1.5 * normal(rng);
    }
    const auto h = softmax_normalize(inst.logits);
    const Point<double> mu = soft_argmax(h);
    inst.target = mu + Point<double>(1.5 * normal(rng), 1.5 * normal(rng));
    inst.target.x() = std::clamp(inst.target.x(), 0.0, grid.width - 1.0);
    inst.target.y() = std::clamp(inst.target.y(), 0.0, grid.height - 1.0);

    const Point<double> e = inst.target - mu;
    double p1 = e.x();
    double p2 = e.y();
    if (cfg.objective == Objective::Star) {
      const auto eig = eigen2x2(covariance_unbiased(h, mu));
      if (eig.lambda1 - eig.lambda2 < 1e-3 * (eig.lambda1 + eig.lambda2)) continue;
      p1 = eig.v1.dot(e);
      p2 = eig.v2.dot(e);
    }
    if (detail::near_kink(cfg.distance, p1, margin) ||
        detail::near_kink(cfg.distance, p2, margin)) {
      continue;
    }
    return inst;
  }
}

/// The objective as seen by detach-mode differentiation: the eigenpair is
/// held at `frozen` while the mean (and the DR term) follow the logits.
template <typename Scalar>
Scalar detached_objective(const GridMatrix<Scalar>& logits,
                          const Point<Scalar>& target, const LossConfig& cfg,
                          const EigenPair2<Scalar>& frozen) {
  const auto h = softmax_normalize(logits);
  Scalar total = star_core(soft_argmax(h), frozen, target, cfg.distance,
                           Scalar(cfg.lambda_floor));
  if (cfg.dr_weight > 0) {
    const auto gauss = render_gaussian(h.grid(), target, Scalar(cfg.dr_sigma));
    total += Scalar(cfg.dr_weight) * js_regularizer(h, gauss);
  }
  return total;
}

/// Central differences of the scalar that `grad_total` differentiates under
/// the configured restriction mode.
inline GridMatrix<double> reference_gradient(const GridMatrix<double>& logits,
                                             const Point<double>& target,
                                             const LossConfig& cfg,
                                             double step = kDefaultFiniteDiffStep) {
  if (cfg.objective == Objective::Star &&
      std::holds_alternative<DetachRestriction>(cfg.restriction)) {
    const auto h = softmax_normalize(logits);
    const auto frozen = eigen2x2(covariance_unbiased(h, soft_argmax(h)));
    return finite_diff_grad<double>(
        [&](const GridMatrix<double>& z) {
          return detached_objective(z, target, cfg, frozen);
        },
        logits, step);
  }
  return finite_diff_grad<double>(
      [&](const GridMatrix<double>& z) {
        return total_objective(z, target, cfg).total;
      },
      logits, step);
}

/// Analytic vs central-difference gradients on `seeds` random instances.
inline GradReport grad_check(const LossConfig& cfg, const Grid& grid, int seeds,
                             double tolerance,
                             double step = kDefaultFiniteDiffStep,
                             std::uint64_t base_seed = 0) {
  if (seeds < 1) throw InvalidArgument("grad_check needs at least one seed");
  GradReport report;
  report.tolerance = tolerance;
  for (int k = 0; k < seeds; ++k) {
    const auto inst = make_gradcheck_instance(cfg, grid, base_seed + k, step);
    report.resampled += inst.attempts - 1;
    const GridMatrix<double> analytic = grad_total(inst.logits, inst.target, cfg);
    const GridMatrix<double> numeric =
        reference_gradient(inst.logits, inst.target, cfg, step);
    const double rel = relative_gradient_error(analytic, numeric);
    const double abs_err = (analytic - numeric).cwiseAbs().maxCoeff();
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (report.worst_instance < 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_instance = k;
      report.analytic = analytic;
      report.numeric = numeric;
    }
    ++report.instances;
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace star

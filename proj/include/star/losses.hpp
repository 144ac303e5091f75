#pragma once

#include <cmath>
#include <string>
#include <variant>

#include <Eigen/Core>

#include "star/errors.hpp"
#include "star/heatmap.hpp"
#include "star/moments.hpp"

namespace star {

struct L1Distance {};
struct L2Distance {};  // squared error per scalar
struct SmoothL1Distance {
  double s = 0.01;
};
struct WingDistance {
  double omega = 10.0;
  double epsilon = 2.0;
};

using DistanceKind =
    std::variant<L1Distance, L2Distance, SmoothL1Distance, WingDistance>;

struct ValueRestriction {
  double w = 1.0;
};
/// Eigenvalues and eigenvectors act as constants under differentiation.
struct DetachRestriction {};
/// No guard against eigenvalue inflation.
struct NoRestriction {};

using RestrictionMode =
    std::variant<ValueRestriction, DetachRestriction, NoRestriction>;

/// Which data term drives the objective.
enum class Objective { Star, Regression };

struct LossConfig {
  DistanceKind distance = SmoothL1Distance{};
  RestrictionMode restriction = ValueRestriction{};
  Objective objective = Objective::Star;
  double dr_weight = 0.0;
  double dr_sigma = 1.0;
  double lambda_floor = kDefaultLambdaFloor;

  void validate() const;
};

std::string distance_name(const DistanceKind& kind);
std::string restriction_name(const RestrictionMode& mode);

inline void LossConfig::validate() const {
  std::visit(
      [](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, SmoothL1Distance>) {
          if (!(d.s > 0)) throw InvalidArgument("smooth-l1 threshold s must be positive");
        } else if constexpr (std::is_same_v<D, WingDistance>) {
          if (!(d.omega > 0) || !(d.epsilon > 0)) {
            throw InvalidArgument("wing omega and epsilon must be positive");
          }
        }
      },
      distance);
  if (const auto* v = std::get_if<ValueRestriction>(&restriction); v && !(v->w >= 0)) {
    throw InvalidArgument("value restriction weight must be nonnegative");
  }
  if (!(dr_weight >= 0)) throw InvalidArgument("dr_weight must be nonnegative");
  if (!(dr_sigma > 0)) throw InvalidArgument("dr_sigma must be positive");
  if (!(lambda_floor > 0)) throw InvalidArgument("lambda_floor must be positive");
}

inline std::string distance_name(const DistanceKind& kind) {
  static const char* names[] = {"l1", "l2", "smooth_l1", "wing"};
  return names[kind.index()];
}

inline std::string restriction_name(const RestrictionMode& mode) {
  static const char* names[] = {"value", "detach", "none"};
  return names[mode.index()];
}

template <typename Scalar>
Scalar sign_or_zero(Scalar x) {
  return Scalar((x > 0) - (x < 0));
}

template <typename Scalar>
Scalar scalar_distance(const DistanceKind& kind, Scalar x) {
  using std::abs;
  using std::log;
  const Scalar a = abs(x);
  switch (kind.index()) {
    case 0:
      return a;
    case 1:
      return x * x;
    case 2: {
      const Scalar s = std::get<SmoothL1Distance>(kind).s;
      return a < s ? Scalar(0.5) * x * x / s : a - Scalar(0.5) * s;
    }
    default: {
      const auto& wing = std::get<WingDistance>(kind);
      const Scalar omega = wing.omega;
      const Scalar eps = wing.epsilon;
      if (a < omega) return omega * log(Scalar(1) + a / eps);
      return a - (omega - omega * log(Scalar(1) + omega / eps));
    }
  }
}

/// d'(x); the L1 and Wing kinks at zero take subgradient 0.
template <typename Scalar>
Scalar scalar_distance_deriv(const DistanceKind& kind, Scalar x) {
  using std::abs;
  const Scalar a = abs(x);
  switch (kind.index()) {
    case 0:
      return sign_or_zero(x);
    case 1:
      return Scalar(2) * x;
    case 2: {
      const Scalar s = std::get<SmoothL1Distance>(kind).s;
      return a < s ? x / s : sign_or_zero(x);
    }
    default: {
      const auto& wing = std::get<WingDistance>(kind);
      if (a < Scalar(wing.omega)) {
        return sign_or_zero(x) * Scalar(wing.omega) / (Scalar(wing.epsilon) + a);
      }
      return sign_or_zero(x);
    }
  }
}

/// Coordinate-wise d(e_x) + d(e_y) with e = y_t - mu.
template <typename Scalar>
Scalar regression_loss(const Point<Scalar>& mu, const Point<Scalar>& target,
                       const DistanceKind& kind) {
  const Point<Scalar> e = target - mu;
  return scalar_distance(kind, e.x()) + scalar_distance(kind, e.y());
}

template <typename Scalar>
Scalar floored(Scalar lambda, Scalar floor) {
  return lambda > floor ? lambda : floor;
}

/// Error projected on each principal axis, scaled by 1/sqrt(lambda_k).
template <typename Scalar>
Scalar star_core(const Point<Scalar>& mu, const EigenPair2<Scalar>& eig,
                 const Point<Scalar>& target, const DistanceKind& kind,
                 Scalar lambda_floor = Scalar(kDefaultLambdaFloor)) {
  using std::sqrt;
  const Point<Scalar> e = target - mu;
  return scalar_distance(kind, eig.v1.dot(e)) /
             sqrt(floored(eig.lambda1, lambda_floor)) +
         scalar_distance(kind, eig.v2.dot(e)) /
             sqrt(floored(eig.lambda2, lambda_floor));
}

template <typename Scalar>
Scalar value_restriction(const EigenPair2<Scalar>& eig) {
  return Scalar(0.5) * (eig.lambda1 + eig.lambda2);
}

/// Jensen-Shannon divergence in nats, 0 log 0 = 0.
template <typename Scalar>
Scalar js_regularizer(const Heatmap<Scalar>& h, const Heatmap<Scalar>& target) {
  if (!(h.grid() == target.grid())) {
    throw GridMismatch("js_regularizer: heatmaps live on different grids");
  }
  using std::log;
  const auto& p = h.probs();
  const auto& q = target.probs();
  Scalar kl_p = 0;
  Scalar kl_q = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const Scalar a = p.data()[i];
    const Scalar b = q.data()[i];
    const Scalar m = Scalar(0.5) * (a + b);
    if (a > 0) kl_p += a * log(a / m);
    if (b > 0) kl_q += b * log(b / m);
  }
  return Scalar(0.5) * (kl_p + kl_q);
}

/// (y_t - mu)^T Sigma^{-1} (y_t - mu) through the floored eigen-factorization.
template <typename Scalar>
Scalar mahalanobis_loss(const Point<Scalar>& mu, const Covariance2<Scalar>& sigma,
                        const Point<Scalar>& target,
                        Scalar lambda_floor = Scalar(kDefaultLambdaFloor)) {
  const auto eig = eigen2x2(sigma);
  const Point<Scalar> e = target - mu;
  const Scalar p1 = eig.v1.dot(e);
  const Scalar p2 = eig.v2.dot(e);
  return p1 * p1 / floored(eig.lambda1, lambda_floor) +
         p2 * p2 / floored(eig.lambda2, lambda_floor);
}

template <typename Scalar>
struct LossParts {
  Scalar star = 0;        // STAR data term (Objective::Star)
  Scalar regression = 0;  // plain regression term (Objective::Regression)
  Scalar restriction = 0; // w * (lambda1 + lambda2) / 2
  Scalar dr = 0;          // dr_weight * JS(h || gaussian at target)
  Scalar total = 0;
};

/// Objective value plus the intermediates the backward pass reuses.
template <typename Scalar>
struct ObjectiveEval {
  LossParts<Scalar> parts;
  Point<Scalar> mean;
  Covariance2<Scalar> sigma;  // unbiased; zero for Objective::Regression
  EigenPair2<Scalar> eigen;
};

template <typename Scalar>
ObjectiveEval<Scalar> evaluate_objective(const Heatmap<Scalar>& h,
                                         const Point<Scalar>& target,
                                         const LossConfig& cfg) {
  cfg.validate();
  ObjectiveEval<Scalar> out;
  out.mean = soft_argmax(h);
  auto& parts = out.parts;
  if (cfg.objective == Objective::Regression) {
    parts.regression = regression_loss(out.mean, target, cfg.distance);
  } else {
    out.sigma = covariance_unbiased(h, out.mean);
    out.eigen = eigen2x2(out.sigma);
    parts.star = star_core(out.mean, out.eigen, target, cfg.distance,
                           Scalar(cfg.lambda_floor));
    if (const auto* v = std::get_if<ValueRestriction>(&cfg.restriction)) {
      parts.restriction = Scalar(v->w) * value_restriction(out.eigen);
    }
  }
  if (cfg.dr_weight > 0) {
    const auto gauss = render_gaussian(h.grid(), target, Scalar(cfg.dr_sigma));
    parts.dr = Scalar(cfg.dr_weight) * js_regularizer(h, gauss);
  }
  parts.total = parts.star + parts.regression + parts.restriction + parts.dr;
  return out;
}

/// Softmax-normalizes the logits, then evaluates the configured objective.
template <typename Derived>
LossParts<typename Derived::Scalar> total_objective(
    const Eigen::MatrixBase<Derived>& logits,
    const Point<typename Derived::Scalar>& target, const LossConfig& cfg) {
  return evaluate_objective(softmax_normalize(logits), target, cfg).parts;
}

}  // namespace star

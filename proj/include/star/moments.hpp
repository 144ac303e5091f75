#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "star/errors.hpp"
#include "star/heatmap.hpp"

namespace star {

/// Smallest admissible V1 - V2/V1 for the Bessel-corrected covariance.
inline constexpr double kDenominatorFloor = 1e-8;
/// Below this eigengap (px^2) eigenvector derivatives are not propagated.
inline constexpr double kEigenGap = 1e-8;
inline constexpr double kDefaultLambdaFloor = 1e-5;

/// Symmetric 2x2 matrix; xy is stored once.
template <typename Scalar>
struct Covariance2 {
  Scalar xx = 0;
  Scalar xy = 0;
  Scalar yy = 0;

  Eigen::Matrix<Scalar, 2, 2> matrix() const {
    Eigen::Matrix<Scalar, 2, 2> m;
    m << xx, xy, xy, yy;
    return m;
  }

  static Covariance2 from_matrix(const Eigen::Matrix<Scalar, 2, 2>& m) {
    return {m(0, 0), Scalar(0.5) * (m(0, 1) + m(1, 0)), m(1, 1)};
  }

  Scalar trace() const { return xx + yy; }
  Scalar determinant() const { return xx * yy - xy * xy; }

  bool is_psd(Scalar tol = Scalar(1e-9)) const {
    return xx >= 0 && yy >= 0 && determinant() >= -tol;
  }

  Covariance2 operator*(Scalar s) const { return {xx * s, xy * s, yy * s}; }
};

/// Ordered eigenpairs, lambda1 >= lambda2 >= 0, orthonormal vectors whose
/// first nonzero component is positive.
template <typename Scalar>
struct EigenPair2 {
  Scalar lambda1 = 0;
  Point<Scalar> v1 = Point<Scalar>::UnitX();
  Scalar lambda2 = 0;
  Point<Scalar> v2 = Point<Scalar>::UnitY();

  Eigen::Matrix<Scalar, 2, 2> vectors() const {
    Eigen::Matrix<Scalar, 2, 2> v;
    v << v1, v2;
    return v;
  }

  Eigen::Matrix<Scalar, 2, 2> reconstruct() const {
    const auto v = vectors();
    return v * Eigen::Matrix<Scalar, 2, 1>(lambda1, lambda2).asDiagonal() *
           v.transpose();
  }
};

template <typename Scalar>
struct WeightSums {
  Scalar v1_sum = 0;  // sum h_i
  Scalar v2_sum = 0;  // sum h_i^2
};

template <typename Scalar>
WeightSums<Scalar> weight_sums(const Heatmap<Scalar>& h) {
  return {h.probs().sum(), h.probs().squaredNorm()};
}

/// Unnormalized scatter sum_i h_i (y_i - mu)(y_i - mu)^T.
template <typename Scalar>
Covariance2<Scalar> weighted_scatter(const Heatmap<Scalar>& h,
                                     const Point<Scalar>& mu) {
  const auto& p = h.probs();
  Covariance2<Scalar> s;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const Scalar dy = Scalar(r) - mu.y();
    Scalar row_xx = 0;
    Scalar row_x = 0;
    Scalar row_mass = 0;
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const Scalar w = p(r, c);
      const Scalar dx = Scalar(c) - mu.x();
      row_xx += w * dx * dx;
      row_x += w * dx;
      row_mass += w;
    }
    s.xx += row_xx;
    s.xy += row_x * dy;
    s.yy += row_mass * dy * dy;
  }
  return s;
}

template <typename Scalar>
Covariance2<Scalar> covariance_biased(const Heatmap<Scalar>& h,
                                      const Point<Scalar>& mu) {
  return weighted_scatter(h, mu) * (Scalar(1) / weight_sums(h).v1_sum);
}

template <typename Scalar>
Scalar bessel_denominator(const WeightSums<Scalar>& w) {
  return w.v1_sum - w.v2_sum / w.v1_sum;
}

/// Bessel-corrected weighted covariance; the default covariance estimate.
template <typename Scalar>
Covariance2<Scalar> covariance_unbiased(const Heatmap<Scalar>& h,
                                        const Point<Scalar>& mu) {
  const Scalar den = bessel_denominator(weight_sums(h));
  if (!(den >= Scalar(kDenominatorFloor))) {
    throw DegenerateDistribution(
        "unbiased covariance denominator V1 - V2/V1 = " +
        std::to_string(double(den)) +
        " is zero or too small (mass concentrated on a single cell)");
  }
  return weighted_scatter(h, mu) * (Scalar(1) / den);
}

template <typename Scalar>
Point<Scalar> sign_normalized(Point<Scalar> v) {
  if (v.x() < 0 || (v.x() == 0 && v.y() < 0)) v = -v;
  return v;
}

/// Closed-form eigen-decomposition of a symmetric 2x2 matrix.
template <typename Scalar>
EigenPair2<Scalar> eigen2x2(const Covariance2<Scalar>& sigma) {
  using std::hypot;
  const Scalar mean = Scalar(0.5) * (sigma.xx + sigma.yy);
  // sqrt(mean^2 - det) written without cancellation
  const Scalar radius = hypot(Scalar(0.5) * (sigma.xx - sigma.yy), sigma.xy);

  EigenPair2<Scalar> e;
  e.lambda1 = std::max(mean + radius, Scalar(0));
  e.lambda2 = std::max(mean - radius, Scalar(0));
  if (radius == Scalar(0)) return e;  // tie: (1,0), (0,1)

  Point<Scalar> v;
  if (sigma.xy == Scalar(0)) {
    v = sigma.xx >= sigma.yy ? Point<Scalar>::UnitX() : Point<Scalar>::UnitY();
  } else {
    const Scalar l1 = mean + radius;
    const Point<Scalar> a(l1 - sigma.yy, sigma.xy);
    const Point<Scalar> b(sigma.xy, l1 - sigma.xx);
    v = a.squaredNorm() >= b.squaredNorm() ? a : b;
    v.normalize();
  }
  e.v1 = sign_normalized(v);
  e.v2 = sign_normalized<Scalar>(Point<Scalar>(-e.v1.y(), e.v1.x()));
  return e;
}

/// Elliptical eccentricity lambda1 / lambda2, both floored first.
template <typename Scalar>
Scalar anisotropy_ratio(const EigenPair2<Scalar>& e,
                        Scalar floor = Scalar(kDefaultLambdaFloor)) {
  return std::max(e.lambda1, floor) / std::max(e.lambda2, floor);
}

/// Everything the decoder reports for one heatmap.
template <typename Scalar>
struct Moments {
  Point<Scalar> mean;
  Covariance2<Scalar> biased;
  Covariance2<Scalar> unbiased;
  EigenPair2<Scalar> eigen;  // of the unbiased covariance
};

template <typename Scalar>
Moments<Scalar> compute_moments(const Heatmap<Scalar>& h) {
  Moments<Scalar> m;
  m.mean = soft_argmax(h);
  m.biased = covariance_biased(h, m.mean);
  m.unbiased = covariance_unbiased(h, m.mean);
  m.eigen = eigen2x2(m.unbiased);
  return m;
}

}  // namespace star

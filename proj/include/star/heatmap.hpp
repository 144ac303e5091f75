#pragma once

#include <cmath>
#include <string>

#include <Eigen/Core>

#include "star/errors.hpp"

namespace star {

template <typename Scalar>
using Point = Eigen::Matrix<Scalar, 2, 1>;

/// H x W matrix stored row-major; entry (r, c) sits at coordinate (x=c, y=r).
template <typename Scalar>
using GridMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kNormalizationTolerance = 1e-9;

struct Grid {
  int width = 0;
  int height = 0;

  Grid() = default;
  Grid(int w, int h) : width(w), height(h) {
    if (w < 2 || h < 2) {
      throw InvalidArgument("grid must be at least 2x2, got " +
                            std::to_string(w) + "x" + std::to_string(h));
    }
  }

  Eigen::Index cells() const { return Eigen::Index(width) * height; }

  template <typename Scalar>
  bool contains(const Point<Scalar>& p) const {
    return p.x() >= 0 && p.y() >= 0 && p.x() <= width - 1 &&
           p.y() <= height - 1;
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Nonnegative probability mass over a pixel grid, summing to one.
template <typename Scalar>
class Heatmap {
 public:
  using Matrix = GridMatrix<Scalar>;

  explicit Heatmap(Matrix probs)
      : grid_(int(probs.cols()), int(probs.rows())), probs_(std::move(probs)) {
    if (!probs_.allFinite()) {
      throw NonFiniteInput("heatmap contains NaN or Inf");
    }
    if ((probs_.array() < Scalar(0)).any()) {
      throw InvalidArgument("heatmap has negative mass");
    }
    const Scalar total = probs_.sum();
    if (std::abs(total - Scalar(1)) > Scalar(kNormalizationTolerance)) {
      throw InvalidArgument("heatmap mass sums to " + std::to_string(double(total)));
    }
  }

  /// Skips validation; for producers that normalize by construction.
  struct Trusted {};
  Heatmap(Matrix probs, Trusted)
      : grid_(int(probs.cols()), int(probs.rows())), probs_(std::move(probs)) {}

  const Grid& grid() const { return grid_; }
  const Matrix& probs() const { return probs_; }
  Scalar operator()(Eigen::Index row, Eigen::Index col) const {
    return probs_(row, col);
  }

 private:
  Grid grid_;
  Matrix probs_;
};

using HeatmapD = Heatmap<double>;

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (!m.allFinite()) {
    throw NonFiniteInput(std::string(what) + " contains NaN or Inf");
  }
}

/// Softmax over all cells with max-subtraction.
template <typename Derived>
Heatmap<typename Derived::Scalar> softmax_normalize(
    const Eigen::MatrixBase<Derived>& logits,
    typename Derived::Scalar temperature = 1) {
  using Scalar = typename Derived::Scalar;
  require_finite(logits, "logits");
  if (!(temperature > Scalar(0))) {
    throw InvalidArgument("temperature must be positive");
  }
  GridMatrix<Scalar> p =
      ((logits.array() - logits.maxCoeff()) / temperature).exp().matrix();
  p /= p.sum();
  return Heatmap<Scalar>(std::move(p), typename Heatmap<Scalar>::Trusted{});
}

/// Expected cell coordinate under the heatmap.
template <typename Scalar>
Point<Scalar> soft_argmax(const Heatmap<Scalar>& h) {
  const auto& p = h.probs();
  // column sums weight x, row sums weight y
  const auto col_mass = p.colwise().sum();
  const auto row_mass = p.rowwise().sum();
  Scalar x = 0;
  Scalar y = 0;
  for (Eigen::Index c = 0; c < p.cols(); ++c) x += col_mass(c) * Scalar(c);
  for (Eigen::Index r = 0; r < p.rows(); ++r) y += row_mass(r) * Scalar(r);
  return {x, y};
}

/// Isotropic Gaussian evaluated on every cell, renormalized.
template <typename Scalar>
Heatmap<Scalar> render_gaussian(const Grid& grid, const Point<Scalar>& center,
                                Scalar sigma) {
  if (!(sigma > Scalar(0))) throw InvalidArgument("sigma must be positive");
  if (!center.allFinite() || !grid.contains(center)) {
    throw CenterOutOfBounds("gaussian center lies outside the grid");
  }
  GridMatrix<Scalar> p(grid.height, grid.width);
  const Scalar inv = Scalar(1) / (Scalar(2) * sigma * sigma);
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      const Scalar dx = Scalar(c) - center.x();
      const Scalar dy = Scalar(r) - center.y();
      p(r, c) = std::exp(-(dx * dx + dy * dy) * inv);
    }
  }
  p /= p.sum();
  return Heatmap<Scalar>(std::move(p));
}

// Heatmap CSV: "H,W" header then H rows of W values, 17 significant digits.
std::string format_heatmap_csv(const HeatmapD& h);
HeatmapD parse_heatmap_csv(const std::string& text);
HeatmapD read_heatmap_csv(const std::string& path);
void write_heatmap_csv(const std::string& path, const HeatmapD& h);

}  // namespace star

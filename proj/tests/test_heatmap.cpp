#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "star/heatmap.hpp"
#include "test_util.hpp"

using namespace star;
using star::testing::Mat;

TEST(Grid, RejectsDegenerateSizes) {
  EXPECT_THROW(Grid(1, 5), InvalidArgument);
  EXPECT_THROW(Grid(5, 0), InvalidArgument);
  EXPECT_NO_THROW(Grid(2, 2));
}

TEST(Heatmap, ValidatesInvariants) {
  Mat m = Mat::Constant(2, 2, 0.25);
  EXPECT_NO_THROW(HeatmapD{m});
  m(0, 0) = 0.3;
  EXPECT_THROW(HeatmapD{m}, InvalidArgument);
  m(0, 0) = std::nan("");
  EXPECT_THROW(HeatmapD{m}, NonFiniteInput);
  Mat neg = Mat::Constant(2, 2, 0.5);
  neg(0, 0) = -0.5;
  neg(0, 1) = 0.0;
  EXPECT_THROW(HeatmapD{neg}, InvalidArgument);
}

TEST(Softmax, ZeroLogitsGiveUniform) {
  const auto h = softmax_normalize(Mat(Mat::Zero(2, 2)));
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(h(r, c), 0.25);
}

TEST(Softmax, SaturatesOnHugeLogit) {
  Mat z = Mat::Zero(4, 4);
  z(0, 0) = 1000;
  const auto h = softmax_normalize(z);
  EXPECT_NEAR(h(0, 0), 1.0, 1e-12);
  for (Eigen::Index i = 1; i < 16; ++i) EXPECT_NEAR(h.probs().data()[i], 0.0, 1e-12);
}

TEST(Softmax, MatchesBruteForce) {
  std::mt19937_64 rng(1);
  const Mat z = star::testing::random_logits(8, 8, rng, 2.0);
  const auto h = softmax_normalize(z);
  double total = 0;
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) total += std::exp(z(r, c));
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) EXPECT_NEAR(h(r, c), std::exp(z(r, c)) / total, 1e-12);
}

TEST(Softmax, TemperatureDividesLogits) {
  std::mt19937_64 rng(2);
  const Mat z = star::testing::random_logits(5, 6, rng);
  const auto a = softmax_normalize(z, 2.5);
  const auto b = softmax_normalize(Mat(z / 2.5));
  EXPECT_LT((a.probs() - b.probs()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(softmax_normalize(z, 0.0), InvalidArgument);
}

TEST(Softmax, ShiftInvariant) {
  std::mt19937_64 rng(3);
  const Mat z = star::testing::random_logits(8, 8, rng);
  const auto a = softmax_normalize(z);
  const auto b = softmax_normalize(Mat(z.array() + 123.25));
  EXPECT_LT((a.probs() - b.probs()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Softmax, RejectsNonFinite) {
  Mat z = Mat::Zero(3, 3);
  z(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(softmax_normalize(z), NonFiniteInput);
  z(1, 1) = std::nan("");
  EXPECT_THROW(softmax_normalize(z), NonFiniteInput);
}

TEST(Softmax, OutputNormalized) {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 20; ++k) {
    const auto h = softmax_normalize(star::testing::random_logits(7, 9, rng, 5.0));
    EXPECT_LE(std::abs(h.probs().sum() - 1.0), 1e-9);
    EXPECT_GE(h.probs().minCoeff(), 0.0);
  }
}

TEST(SoftArgmax, DeltaIsIdentity) {
  const auto mu = soft_argmax(star::testing::delta_heatmap(8, 8, 2, 3));
  EXPECT_EQ(mu.x(), 3.0);
  EXPECT_EQ(mu.y(), 2.0);
}

TEST(SoftArgmax, UniformTwoByTwo) {
  const auto mu = soft_argmax(HeatmapD(Mat::Constant(2, 2, 0.25)));
  EXPECT_DOUBLE_EQ(mu.x(), 0.5);
  EXPECT_DOUBLE_EQ(mu.y(), 0.5);
}

TEST(SoftArgmax, TwoPointAverage) {
  const auto mu = soft_argmax(star::testing::sparse_heatmap(4, 4, {{0, 0, 0.5}, {0, 3, 0.5}}));
  EXPECT_DOUBLE_EQ(mu.x(), 1.5);
  EXPECT_DOUBLE_EQ(mu.y(), 0.0);
}

TEST(SoftArgmax, LinearInConvexMixtures) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 20; ++k) {
    const auto h1 = star::testing::random_heatmap(6, 7, rng);
    const auto h2 = star::testing::random_heatmap(6, 7, rng);
    const double a = std::uniform_real_distribution<double>(0, 1)(rng);
    const HeatmapD mix(Mat(a * h1.probs() + (1 - a) * h2.probs()));
    const Point<double> expect = a * soft_argmax(h1) + (1 - a) * soft_argmax(h2);
    EXPECT_LT((soft_argmax(mix) - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SoftArgmax, StaysInsideGrid) {
  std::mt19937_64 rng(6);
  for (int k = 0; k < 20; ++k) {
    const auto h = softmax_normalize(star::testing::random_logits(5, 9, rng, 10.0));
    EXPECT_TRUE(h.grid().contains(soft_argmax(h)));
  }
}

TEST(RenderGaussian, SymmetricAboutOddGridMidpoint) {
  const Grid g(9, 9);
  const auto h = render_gaussian(g, Point<double>(4, 4), 1.7);
  Eigen::Index r = 0;
  Eigen::Index c = 0;
  h.probs().maxCoeff(&r, &c);
  EXPECT_EQ(r, 4);
  EXPECT_EQ(c, 4);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) EXPECT_NEAR(h(i, j), h(8 - i, 8 - j), 1e-17);
}

TEST(RenderGaussian, ConcentratesForTinySigma) {
  const auto h = render_gaussian(Grid(8, 8), Point<double>(4, 4), 0.1);
  EXPECT_GT(h(4, 4), 0.999);
}

TEST(RenderGaussian, MatchesBruteForce) {
  const auto h = render_gaussian(Grid(8, 8), Point<double>(3.5, 2.0), 1.0);
  double total = 0;
  Mat k(8, 8);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) {
      const double d2 = (c - 3.5) * (c - 3.5) + (r - 2.0) * (r - 2.0);
      k(r, c) = std::exp(-d2 / 2.0);
      total += k(r, c);
    }
  }
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) EXPECT_NEAR(h(r, c), k(r, c) / total, 1e-12);
}

TEST(RenderGaussian, DecodesLatticeCenter) {
  const auto h = render_gaussian(Grid(15, 13), Point<double>(7, 6), 1.0);
  const auto mu = soft_argmax(h);
  EXPECT_NEAR(mu.x(), 7.0, 1e-6);
  EXPECT_NEAR(mu.y(), 6.0, 1e-6);
}

TEST(RenderGaussian, RejectsBadInputs) {
  const Grid g(8, 8);
  EXPECT_THROW(render_gaussian(g, Point<double>(-0.1, 3), 1.0), CenterOutOfBounds);
  EXPECT_THROW(render_gaussian(g, Point<double>(3, 7.5), 1.0), CenterOutOfBounds);
  EXPECT_THROW(render_gaussian(g, Point<double>(3, 3), 0.0), InvalidArgument);
  EXPECT_NO_THROW(render_gaussian(g, Point<double>(7, 7), 1.0));
}

TEST(HeatmapCsv, RoundTripsBitExactly) {
  std::mt19937_64 rng(7);
  const auto h = softmax_normalize(star::testing::random_logits(5, 7, rng));
  const std::string text = format_heatmap_csv(h);
  EXPECT_EQ(text.substr(0, 4), "5,7\n");
  const auto back = parse_heatmap_csv(text);
  EXPECT_EQ(back.grid(), h.grid());
  EXPECT_TRUE((back.probs().array() == h.probs().array()).all());
}

TEST(HeatmapCsv, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "star_heatmap_roundtrip.csv";
  const auto h = render_gaussian(Grid(6, 4), Point<double>(2.5, 1.5), 0.8);
  write_heatmap_csv(path.string(), h);
  const auto back = read_heatmap_csv(path.string());
  EXPECT_TRUE((back.probs().array() == h.probs().array()).all());
  std::filesystem::remove(path);
}

TEST(HeatmapCsv, RejectsMalformedText) {
  EXPECT_THROW(parse_heatmap_csv(""), ParseError);
  EXPECT_THROW(parse_heatmap_csv("2,2\n0.5,0.5\n"), ParseError);           // missing row
  EXPECT_THROW(parse_heatmap_csv("2,2\n0.5,0.5,0\n0,0\n"), ParseError);   // ragged row
  EXPECT_THROW(parse_heatmap_csv("2,2\n0.5,abc\n0,0\n"), ParseError);
  EXPECT_THROW(parse_heatmap_csv("2,2\n0.5,0.5\n0.5,0.5\n"), ParseError); // sums to 2
  EXPECT_THROW(read_heatmap_csv("/nonexistent/file.csv"), ParseError);
  EXPECT_NO_THROW(parse_heatmap_csv("2,2\n0.25,0.25\n0.25,0.25\n"));
}

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "shapesos/certify.hpp"
#include "shapesos/errors.hpp"
#include "shapesos/transport.hpp"

using namespace shapesos;
using namespace shapesos::transport;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Image solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image im;
  im.width = w;
  im.height = h;
  im.rgb.resize(im.pixels() * 3);
  for (std::size_t p = 0; p < im.pixels(); ++p) {
    im.rgb[3 * p] = r;
    im.rgb[3 * p + 1] = g;
    im.rgb[3 * p + 2] = b;
  }
  return im;
}

Image noise_image(int w, int h, std::uint64_t seed) {
  Image im = solid(w, h, 0, 0, 0);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> U(0, 255);
  for (auto& c : im.rgb) c = static_cast<std::uint8_t>(U(rng));
  return im;
}

// smooth gradients with a tint, 8-bit
Image scene(int w, int h, double tr, double tg, double tb, std::uint64_t seed) {
  Image im = solid(w, h, 0, 0, 0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 6.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = static_cast<double>(x) / (w - 1), v = static_cast<double>(y) / (h - 1);
      const double base[3] = {tr * (0.3 + 0.6 * u), tg * (0.2 + 0.7 * v), tb * (0.5 + 0.4 * u * v)};
      for (int k = 0; k < 3; ++k)
        im.rgb[3 * (static_cast<std::size_t>(y) * w + x) + k] =
            static_cast<std::uint8_t>(std::clamp(std::round(255.0 * base[k] + N(rng)), 0.0, 255.0));
    }
  return im;
}

est::FittedModel quadratic_potential(double c) {
  auto f = initial_potential(3, 1.0, 1.0);  // (1/2)|x|^2
  f.poly *= c;
  f.shape = est::ShapeSpec::band(c, c);
  return f;
}

VectorXd random_simplex(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.1, 1.0);
  VectorXd a(n);
  for (int i = 0; i < n; ++i) a[i] = U(rng);
  return a / a.sum();
}

}  // namespace

TEST(Measure, SingleColorIsOnePoint) {
  const auto mu = measure_from_image(solid(2, 1, 255, 0, 0));
  ASSERT_EQ(mu.size(), 1);
  EXPECT_DOUBLE_EQ(mu.support(0, 0), 255.0 / 256.0);
  EXPECT_EQ(mu.support(0, 1), 0.0);
  EXPECT_EQ(mu.weights[0], 1.0);
}

TEST(Measure, TwoColorsHalfEach) {
  Image im = solid(2, 1, 10, 20, 30);
  im.rgb[3] = 40;
  const auto mu = measure_from_image(im);
  ASSERT_EQ(mu.size(), 2);
  EXPECT_EQ(mu.weights[0], 0.5);
  EXPECT_EQ(mu.weights[1], 0.5);
  EXPECT_NO_THROW(mu.validate());
}

TEST(Measure, BinningBoundsSupport) {
  const Image im = noise_image(200, 200, 4);
  const auto mu = measure_from_image(im, 4);
  EXPECT_LE(mu.size(), 64);
  EXPECT_NEAR(mu.weights.sum(), 1.0, 1e-12);
  EXPECT_NO_THROW(mu.validate());
  EXPECT_LE(measure_from_image(im, 32).size(), 32 * 32 * 32);
}

TEST(Measure, EmptyImageRejected) {
  Image im;
  EXPECT_THROW(measure_from_image(im), ValidationError);
}

TEST(Sinkhorn, OneByOne) {
  const auto c = sinkhorn(VectorXd::Ones(1), VectorXd::Ones(1), MatrixXd::Constant(1, 1, 0.7));
  EXPECT_NEAR(c.P(0, 0), 1.0, 1e-15);
  EXPECT_TRUE(c.converged);
}

TEST(Sinkhorn, TwoByTwoFixedPoint) {
  // uniform marginals force P = [[p, 1/2 - p], [1/2 - p, p]]; the Gibbs form
  // gives p^2 / (1/2 - p)^2 = exp(2 delta / eps), delta = cost gap.
  const double eps = 0.1;
  MatrixXd C(2, 2);
  C << 0.0, 1.0, 1.0, 0.0;
  SinkhornOptions opt;
  opt.epsilon = eps;
  opt.tol = 1e-14;
  const auto c = sinkhorn(VectorXd::Constant(2, 0.5), VectorXd::Constant(2, 0.5), C, opt);
  const double k = std::exp(1.0 / eps);
  const double p = 0.5 * k / (1.0 + k);
  EXPECT_NEAR(c.P(0, 0), p, 1e-12);
  EXPECT_NEAR(c.P(0, 1), 0.5 - p, 1e-12);
  EXPECT_GT(c.P(0, 0), c.P(0, 1));
  EXPECT_LE(c.marginal_error, 1e-13);
}

TEST(Sinkhorn, RandomInstanceReachesTolerance) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const VectorXd a = random_simplex(20, rng), b = random_simplex(30, rng);
  MatrixXd C(20, 30);
  for (Eigen::Index k = 0; k < C.size(); ++k) C.data()[k] = U(rng);
  SinkhornOptions opt;
  opt.epsilon = 0.01;
  opt.tol = 1e-7;
  const auto c = sinkhorn(a, b, C, opt);
  ASSERT_TRUE(c.converged);
  EXPECT_LE((c.P.rowwise().sum() - a).lpNorm<1>(), 1e-6);
  EXPECT_LE((c.P.colwise().sum().transpose() - b).lpNorm<1>(), 1e-6);
  EXPECT_GE(c.P.minCoeff(), 0.0);
}

TEST(Sinkhorn, FlagsOrThrowsOnIterationCap) {
  std::mt19937_64 rng(5);
  const VectorXd a = random_simplex(15, rng), b = random_simplex(15, rng);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  MatrixXd C(15, 15);
  for (Eigen::Index k = 0; k < C.size(); ++k) C.data()[k] = U(rng);
  SinkhornOptions opt;
  opt.epsilon = 0.001;
  opt.max_iters = 2;
  opt.tol = 1e-15;
  const auto c = sinkhorn(a, b, C, opt);
  EXPECT_FALSE(c.converged);
  EXPECT_EQ(c.iterations, 2);
  opt.throw_on_failure = true;
  EXPECT_THROW(sinkhorn(a, b, C, opt), NonConvergence);
}

TEST(Sinkhorn, RejectsBadInput) {
  const VectorXd a = VectorXd::Constant(2, 0.5);
  MatrixXd C = MatrixXd::Zero(2, 2);
  SinkhornOptions opt;
  opt.epsilon = 0.0;
  EXPECT_THROW(sinkhorn(a, a, C, opt), ValidationError);
  C(0, 0) = NAN;
  EXPECT_THROW(sinkhorn(a, a, C), ValidationError);
  EXPECT_THROW(sinkhorn(a, VectorXd::Ones(3) / 3.0, MatrixXd::Zero(2, 2)), DimensionMismatch);
}

TEST(Potential, InitialIsInsideBand) {
  const auto f = initial_potential(3, 1.0, 10.0);
  const auto g = certify::grid_audit_band(f.original_poly(), poly::Box::unit(3), 1.0, 10.0, 5);
  EXPECT_LE(g.worst, 0.0);
  const auto G = gradients(f, MatrixXd::Identity(3, 3));
  EXPECT_NEAR(G(0, 0), 5.5, 1e-12);
  EXPECT_NEAR(G(0, 1), 0.0, 1e-12);
}

TEST(Potential, ScaledIdentityInterpolates) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const int N = 12;
  MatrixXd X(N, 3);
  for (Eigen::Index k = 0; k < X.size(); ++k) X.data()[k] = U(rng);
  const double c = 2.0;
  const MatrixXd Y = c * X;
  const MatrixXd P = MatrixXd::Identity(N, N) / N;
  PotentialParams prm;
  prm.r = 1;
  const auto f = fit_potential(P, X, Y, prm);
  EXPECT_LE(transport_cost(P, gradients(f, X), Y), 1e-7);
  EXPECT_NEAR(f.poly.coeffs()[0], 0.0, 1e-9);
}

TEST(Potential, BandAuditOnFineGrid) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const int N = 15, M = 10;
  MatrixXd X(N, 3), Y(M, 3);
  for (Eigen::Index k = 0; k < X.size(); ++k) X.data()[k] = U(rng);
  for (Eigen::Index k = 0; k < Y.size(); ++k) Y.data()[k] = U(rng);
  const MatrixXd P = random_simplex(N, rng) * random_simplex(M, rng).transpose();
  PotentialParams prm;
  prm.r = 1;
  prm.ell = 1.0;
  prm.L = 10.0;
  const auto f = fit_potential(P, X, Y, prm);
  const auto g = certify::grid_audit_band(f.original_poly(), poly::Box::unit(3), prm.ell, prm.L, 20);
  EXPECT_LE(g.worst, 1e-6);
  EXPECT_FALSE(f.certificates.empty());
}

TEST(Potential, BarycentricGapMatchesDoubleSum) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 3; ++trial) {
    const int N = 8, M = 6;
    MatrixXd X(N, 3), Y(M, 3), P(N, M);
    for (Eigen::Index k = 0; k < X.size(); ++k) X.data()[k] = U(rng);
    for (Eigen::Index k = 0; k < Y.size(); ++k) Y.data()[k] = U(rng);
    for (Eigen::Index k = 0; k < P.size(); ++k) P.data()[k] = U(rng);
    P /= P.sum();
    PotentialParams p1, p2;
    p1.r = p2.r = 1;
    p2.ell = 3.0;
    const auto f1 = fit_potential(P, X, Y, p1);
    const auto f2 = fit_potential(P, X, Y, p2);
    // direct double sum
    const double J1 = transport_cost(P, gradients(f1, X), Y);
    const double J2 = transport_cost(P, gradients(f2, X), Y);
    EXPECT_NEAR(J1 - J2, f1.train_sse - f2.train_sse, 1e-9);
    EXPECT_NEAR(J1, std::stod(f1.provenance.extra.at("transport_cost")), 1e-9);
  }
}

TEST(Potential, RejectsBadBand) {
  PotentialParams prm;
  prm.ell = 0.0;
  const MatrixXd X = MatrixXd::Zero(2, 3);
  EXPECT_THROW(fit_potential(MatrixXd::Identity(2, 2) / 2, X, X, prm), ValidationError);
  prm.ell = 5.0;
  prm.L = 4.0;
  EXPECT_THROW(fit_potential(MatrixXd::Identity(2, 2) / 2, X, X, prm), ValidationError);
}

TEST(Potential, OneDimensionalMapIsIncreasing) {
  // grayscale: push a spread of levels onto a darker, compressed set
  const int N = 20, M = 15;
  MatrixXd X(N, 1), Y(M, 1);
  for (int i = 0; i < N; ++i) X(i, 0) = (i + 0.5) / N;
  for (int j = 0; j < M; ++j) Y(j, 0) = 0.1 + 0.5 * std::pow((j + 0.5) / M, 2.0);
  DiscreteMeasure mu{X, VectorXd::Constant(N, 1.0 / N)}, nu{Y, VectorXd::Constant(M, 1.0 / M)};
  TransferParams prm;
  prm.potential.ell = 0.2;
  prm.potential.L = 5.0;
  prm.potential.r = 2;
  prm.max_outer = 5;
  const auto res = alternate(mu, nu, prm);
  const auto g = poly::gradient(res.potential.original_poly());
  double prev = -INFINITY;
  for (int k = 0; k <= 100; ++k) {
    const double v = g[0](Eigen::VectorXd::Constant(1, k / 100.0));
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(Alternate, ObjectiveNonIncreasing) {
  const auto mu = measure_from_image(scene(64, 64, 1.0, 0.8, 0.6, 1), 16);
  const auto nu = measure_from_image(scene(64, 64, 0.5, 0.9, 1.0, 2), 16);
  TransferParams prm;
  prm.potential.r = 1;
  prm.max_outer = 4;
  prm.rel_tol = -1.0;
  const auto res = alternate(mu, nu, prm);
  ASSERT_GE(res.outer, 3);
  ASSERT_EQ(res.objective.size(), static_cast<std::size_t>(2 * res.outer + 1));
  for (std::size_t k = 1; k < res.objective.size(); ++k) EXPECT_LE(res.objective[k], res.objective[k - 1] + 1e-7) << k;
  EXPECT_LE(res.coupling.marginal_error, 2e-6);
  const auto g = certify::grid_audit_band(res.potential.original_poly(), poly::Box::unit(3), 1.0, 10.0, 20);
  EXPECT_LE(g.worst, 1e-6);
}

TEST(Alternate, MatchedSetsStopAfterOneRound) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  MatrixXd X(6, 3);
  for (Eigen::Index k = 0; k < X.size(); ++k) X.data()[k] = U(rng);
  // the initial potential (ell + L)/4 |x|^2 already maps X onto Y
  const double c = 0.5 * (0.5 + 1.5);
  DiscreteMeasure mu{X, VectorXd::Constant(6, 1.0 / 6)}, nu{c * X, VectorXd::Constant(6, 1.0 / 6)};
  TransferParams prm;
  prm.potential.ell = 0.5;
  prm.potential.L = 1.5;
  prm.potential.r = 1;
  prm.sinkhorn.epsilon = 1e-4;
  const auto res = alternate(mu, nu, prm);
  EXPECT_EQ(res.outer, 1);
  EXPECT_TRUE(res.converged);
}

TEST(Alternate, LowerBoundChangesMap) {
  const auto mu = measure_from_image(scene(24, 24, 1.0, 1.0, 1.0, 3), 8);
  const auto nu = measure_from_image(scene(24, 24, 0.3, 0.3, 0.3, 4), 8);
  TransferParams a, b;
  a.potential.r = b.potential.r = 1;
  a.max_outer = b.max_outer = 3;
  b.potential.ell = 2.0;
  const auto fa = alternate(mu, nu, a).potential;
  const auto fb = alternate(mu, nu, b).potential;
  const auto ga = certify::grid_audit_band(fa.original_poly(), poly::Box::unit(3), 2.0, 10.0, 10);
  const auto gb = certify::grid_audit_band(fb.original_poly(), poly::Box::unit(3), 2.0, 10.0, 10);
  // ell = 1 dips below 2 somewhere; ell = 2 cannot
  EXPECT_GT(ga.worst, 1e-3);
  EXPECT_LE(gb.worst, 1e-6);
  const Image src = scene(24, 24, 1.0, 1.0, 1.0, 3);
  EXPECT_NE(apply_map(fa, src).image.rgb, apply_map(fb, src).image.rgb);
}

TEST(Alternate, MemoryGuard) {
  DiscreteMeasure big{MatrixXd::Constant(20000, 3, 0.5), VectorXd::Constant(20000, 1.0 / 20000)};
  TransferParams prm;
  EXPECT_THROW(alternate(big, big, prm), ValidationError);
}

TEST(ApplyMap, IdentityRoundTripIsExact) {
  const Image im = noise_image(64, 64, 6);
  const auto out = apply_map(quadratic_potential(1.0), im);
  EXPECT_EQ(out.image.rgb, im.rgb);
  EXPECT_EQ(out.clamped, 0u);
}

TEST(ApplyMap, ScaledQuadraticDarkens) {
  const Image im = noise_image(16, 16, 7);
  const double c = 0.5;
  const auto out = apply_map(quadratic_potential(c), im);
  for (std::size_t k = 0; k < im.rgb.size(); ++k)
    EXPECT_EQ(out.image.rgb[k], static_cast<std::uint8_t>(std::round(c * im.rgb[k])));
}

TEST(ApplyMap, ClampsAndCounts) {
  const Image im = solid(3, 3, 200, 10, 10);
  const auto out = apply_map(quadratic_potential(2.0), im);
  EXPECT_EQ(out.image.rgb[0], 255);
  EXPECT_EQ(out.image.rgb[1], 20);
  EXPECT_EQ(out.clamped, 9u);
}

TEST(Png, RoundTrip) {
  const Image im = noise_image(13, 7, 8);
  const auto path = std::filesystem::temp_directory_path() / "shapesos_png_roundtrip.png";
  write_png(path, im);
  const Image back = read_png(path);
  EXPECT_EQ(back.width, 13);
  EXPECT_EQ(back.height, 7);
  EXPECT_EQ(back.rgb, im.rgb);
  std::filesystem::remove(path);
  EXPECT_THROW(read_png(path), ValidationError);
}

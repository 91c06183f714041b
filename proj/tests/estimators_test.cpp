#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "shapesos/certify.hpp"
#include "shapesos/data.hpp"
#include "shapesos/errors.hpp"
#include "shapesos/estimators.hpp"

namespace shapesos::est {
namespace {

FitOptions tight() {
  FitOptions o;
  o.solver.feas_tol = 1e-10;
  o.solver.gap_tol = 1e-10;
  return o;
}

Dataset line_data(const std::vector<double>& x, const std::function<double(double)>& f, Box box = Box::unit(1)) {
  Dataset d;
  d.box = box;
  d.X.resize(static_cast<Eigen::Index>(x.size()), 1);
  d.Y.resize(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    d.X(static_cast<Eigen::Index>(i), 0) = x[i];
    d.Y[static_cast<Eigen::Index>(i)] = f(x[i]);
  }
  return d;
}

std::vector<double> grid01(int m) {
  std::vector<double> x;
  for (int i = 0; i < m; ++i) x.push_back(static_cast<double>(i) / (m - 1));
  return x;
}

// Coefficients of the model in original coordinates.
Eigen::VectorXd original_coeffs(const FittedModel& m) { return m.original_poly().coeffs(); }

// Every shape-constrained fit must replay its certificate, pass the grid
// audit, and never beat plain least squares of the same degree.
void check_fit(const FittedModel& model, const Dataset& data) {
  const auto reports = certify::audit_model(model);
  for (const auto& r : reports) EXPECT_TRUE(r.passed) << r.name << " worst=" << r.worst << " tol=" << r.tolerance;
  const FittedModel upr = fit_upr(data, model.degree);
  // equal up to rounding of the sums when no constraint is active
  EXPECT_LE(upr.train_sse, model.train_sse * (1.0 + 1e-12));
  EXPECT_NEAR(sse(model, data), model.train_sse, 1e-10 * (1.0 + model.train_sse));
}

// Least squares with the columns selected by `cols`.
double ls_sse(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, Eigen::VectorXd* coef = nullptr) {
  Eigen::VectorXd c = A.colPivHouseholderQr().solve(y);
  if (coef) *coef = c;
  return (y - A * c).squaredNorm();
}

// ---------------------------------------------------------------------------

TEST(Dataset, ValidateAndCsvRoundTrip) {
  Dataset d = data::synth_convex(12, 2, 0.1, 3);
  EXPECT_NO_THROW(d.validate());
  const auto dir = std::filesystem::temp_directory_path() / "shapesos_est_test";
  std::filesystem::create_directories(dir);
  const auto csv = dir / "d.csv";
  std::filesystem::remove(dir / "d.csv.box");
  write_csv(csv, d);
  Dataset back = read_csv(csv);
  EXPECT_LE((back.X - d.X).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE((back.Y - d.Y).cwiseAbs().maxCoeff(), 0.0);
  // padded by 1% of the range
  const Eigen::VectorXd lo = d.X.colwise().minCoeff().transpose();
  const Eigen::VectorXd hi = d.X.colwise().maxCoeff().transpose();
  EXPECT_NEAR(back.box.lower()[0], lo[0] - 0.01 * (hi[0] - lo[0]), 1e-15);
  EXPECT_NEAR(back.box.upper()[1], hi[1] + 0.01 * (hi[1] - lo[1]), 1e-15);

  std::ofstream(dir / "d.csv.box") << "lower 0 0\nupper 1 1\n";
  back = read_csv(csv);
  EXPECT_EQ(back.box.lower()[0], 0.0);
  EXPECT_EQ(back.box.upper()[1], 1.0);

  std::ofstream(dir / "bad.csv") << "x,y\n1,2\n3\n";
  EXPECT_THROW(read_csv(dir / "bad.csv"), ValidationError);
  std::ofstream(dir / "nan.csv") << "x,y\n1,abc\n";
  EXPECT_THROW(read_csv(dir / "nan.csv"), ValidationError);
  EXPECT_THROW(read_csv(dir / "missing.csv"), ValidationError);
  std::ofstream(dir / "out.csv") << "x,y\n2,1\n";
  std::ofstream(dir / "out.box") << "lower 0\nupper 1\n";
  EXPECT_THROW(read_csv(dir / "out.csv", dir / "out.box"), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST(ShapeSpec, Validation) {
  EXPECT_THROW(ShapeSpec::bounded({{1.0, 0.0}}).validate(1), ValidationError);
  EXPECT_THROW(ShapeSpec::bounded({{0.0, 1.0}}).validate(2), DimensionMismatch);
  EXPECT_THROW(ShapeSpec::band(2.0, 1.0).validate(2), ValidationError);
  EXPECT_THROW(ShapeSpec::partial({{{0, 1}, 1}, {{1}, -1}}).validate(2), ValidationError);
  EXPECT_THROW(ShapeSpec::partial({{{0}, 2}}).validate(2), ValidationError);
  EXPECT_NO_THROW(ShapeSpec::partial({{{0, 1}, -1}}, {{0.0, INFINITY}, {-INFINITY, 1.0}}).validate(2));
}

// ---------------------------------------------------------------------------

TEST(Upr, InterpolatesExactPolynomialData) {
  const Dataset d = line_data(grid01(7), [](double x) { return 1.0 - 2.0 * x + 3.0 * x * x * x; });
  const FittedModel m = fit_upr(d, 3);
  EXPECT_LE(m.train_sse, 1e-10);
  const Eigen::VectorXd c = original_coeffs(m);
  EXPECT_NEAR(c[0], 1.0, 1e-9);
  EXPECT_NEAR(c[1], -2.0, 1e-9);
  EXPECT_NEAR(c[3], 3.0, 1e-8);
}

TEST(Upr, MatchesNormalEquations) {
  std::mt19937 rng(4);
  std::normal_distribution<double> N;
  Dataset d = data::synth_convex(60, 2, 0.0, 9);
  for (int i = 0; i < d.m(); ++i) d.Y[i] = N(rng);
  const FittedModel m = fit_upr(d, 3);
  // normal equations in raw coordinates
  const auto basis = poly::MonomialBasis::make(2, 3);
  Eigen::MatrixXd A(d.m(), static_cast<Eigen::Index>(basis->size()));
  for (int i = 0; i < d.m(); ++i) A.row(i) = basis->evaluate(d.X.row(i).transpose()).transpose();
  const Eigen::VectorXd c = (A.transpose() * A).ldlt().solve(A.transpose() * d.Y);
  const double oracle = (d.Y - A * c).squaredNorm();
  EXPECT_NEAR(m.train_sse, oracle, 1e-8 * oracle);
}

TEST(Upr, MinimumNormWhenUnderdetermined) {
  const Dataset d = line_data({0.1, 0.5, 0.9}, [](double x) { return std::exp(x); }, Box::symmetric(1));
  const FittedModel m = fit_upr(d, 5);  // 6 coefficients, 3 points
  EXPECT_LE(m.train_sse, 1e-20);
  // scaling is the identity on [-1, 1]; oracle is the pseudo-inverse
  const auto basis = poly::MonomialBasis::make(1, 5);
  Eigen::MatrixXd A(3, 6);
  for (int i = 0; i < 3; ++i) A.row(i) = basis->evaluate(d.X.row(i).transpose()).transpose();
  const Eigen::VectorXd pinv = A.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(d.Y);
  EXPECT_LE((m.poly.coeffs() - pinv).norm(), 1e-10);
}

// ---------------------------------------------------------------------------

TEST(SoseConvex, RecoversConvexQuadratic) {
  const Dataset d = line_data(grid01(20), [](double x) { return x * x; });
  const FittedModel m = fit_sose_convex(d, 2, 0, tight());
  const Eigen::VectorXd c = original_coeffs(m);
  EXPECT_NEAR(c[0], 0.0, 1e-4);
  EXPECT_NEAR(c[1], 0.0, 1e-4);
  EXPECT_NEAR(c[2], 1.0, 1e-4);
  check_fit(m, d);
}

TEST(SoseConvex, ConcaveDataGivesConstrainedOptimum) {
  const Dataset d = line_data(grid01(20), [](double x) { return -x * x; });
  const FittedModel m = fit_sose_convex(d, 2, 0, tight());
  // Oracle: minimize SSE over (a, b) for each c >= 0, grid then golden section.
  Eigen::MatrixXd A(d.m(), 2);
  A.col(0).setOnes();
  A.col(1) = d.X.col(0);
  auto sse_at = [&](double c) {
    const Eigen::VectorXd y = d.Y - c * d.X.col(0).cwiseProduct(d.X.col(0));
    return ls_sse(A, y);
  };
  double best_c = 0.0, best = sse_at(0.0);
  for (int i = 1; i <= 200; ++i) {
    const double c = 0.01 * i;
    if (sse_at(c) < best) best = sse_at(c), best_c = c;
  }
  double lo = std::max(0.0, best_c - 0.01), hi = best_c + 0.01;
  for (int it = 0; it < 100; ++it) {
    const double m1 = lo + (hi - lo) * 0.382, m2 = lo + (hi - lo) * 0.618;
    (sse_at(m1) < sse_at(m2) ? hi : lo) = (sse_at(m1) < sse_at(m2) ? m2 : m1);
  }
  const double c_star = 0.5 * (lo + hi);
  Eigen::VectorXd ab;
  ls_sse(A, d.Y - c_star * d.X.col(0).cwiseProduct(d.X.col(0)), &ab);
  const Eigen::VectorXd got = original_coeffs(m);
  EXPECT_NEAR(got[0], ab[0], 1e-4);
  EXPECT_NEAR(got[1], ab[1], 1e-4);
  EXPECT_NEAR(got[2], c_star, 1e-4);
  EXPECT_NEAR(c_star, 0.0, 1e-6);
  check_fit(m, d);
}

TEST(SoseConvex, LowDegreeShortCircuitsToLeastSquares) {
  const Dataset d = data::synth_convex(30, 2, 0.1, 5);
  const FittedModel m = fit_sose_convex(d, 1, 0);
  const FittedModel u = fit_upr(d, 1);
  EXPECT_EQ(m.shape.kind, ShapeKind::Convex);
  EXPECT_NEAR(m.train_sse, u.train_sse, 1e-14);
  EXPECT_TRUE(m.certificates.empty());
}

TEST(SoseConvex, RejectsUnbalancedDegree) {
  const Dataset d = data::synth_convex(30, 1, 0.1, 5);
  EXPECT_THROW(fit_sose_convex(d, 6, 0), DegreeMismatch);
}

TEST(SoseConvex, SseNonIncreasingInR) {
  const Dataset d = data::synth_convex(200, 2, 1.0, 17);
  double prev = INFINITY;
  for (int r : {1, 2, 3}) {
    const FittedModel m = fit_sose_convex(d, 4, r, tight());
    EXPECT_LE(m.train_sse, prev * (1.0 + 1e-9)) << "r=" << r;
    prev = m.train_sse;
    check_fit(m, d);
  }
}

TEST(SoseConvex, QuadraticMatchesConstantGram) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset d = data::synth_convex(80, 2, 1.0, seed);
    const FittedModel a = fit_sose_convex(d, 2, 0, tight());
    const FittedModel b = fit_convex_quadratic(d, tight());
    EXPECT_NEAR(a.train_sse, b.train_sse, 1e-6 * b.train_sse) << "seed " << seed;
    check_fit(a, d);
    check_fit(b, d);
  }
}

TEST(SoseConvex, RestrictedGramsAreFeasibleAndConvex) {
  const Dataset d = data::synth_convex(100, 2, 0.5, 2);
  double prev = INFINITY;
  for (auto kind : {sos::GramKind::DD, sos::GramKind::SDD, sos::GramKind::PSD}) {
    FitOptions o = tight();
    o.gram.kind = kind;
    const FittedModel m = fit_sose_convex(d, 4, 1, o);
    check_fit(m, d);
    EXPECT_LE(m.train_sse, prev * (1.0 + 1e-8));
    prev = m.train_sse;
  }
}

TEST(SoseConvex, GlobalVariantIsConvexEverywhere) {
  const Dataset d = data::synth_convex(100, 2, 0.5, 3);
  FitOptions o = tight();
  o.gram.global = true;
  const FittedModel m = fit_sose_convex(d, 4, 1, o);
  check_fit(m, d);
  const Box wide(Eigen::Vector2d(-5, -5), Eigen::Vector2d(5, 5));
  EXPECT_GE(certify::grid_audit_convexity(m.original_poly(), wide, 25).worst, -1e-6);
  const FittedModel boxed = fit_sose_convex(d, 4, 1, tight());
  EXPECT_LE(boxed.train_sse, m.train_sse * (1.0 + 1e-8));
}

// ---------------------------------------------------------------------------

TEST(SoseBounded, MonotoneOnDecreasingDataIsConstant) {
  const Dataset d = line_data(grid01(11), [](double x) { return -x; });
  const FittedModel m = fit_sose_bounded(d, 1, 0, {{0.0, INFINITY}}, tight());
  const Eigen::VectorXd c = original_coeffs(m);
  EXPECT_NEAR(c[0], d.Y.mean(), 1e-6);
  EXPECT_NEAR(c[1], 0.0, 1e-6);
  check_fit(m, d);
}

TEST(SoseBounded, LooseBoundsMatchLeastSquares) {
  std::mt19937 rng(6);
  std::normal_distribution<double> N;
  Dataset d = data::synth_convex(50, 2, 0.0, 7);
  for (int i = 0; i < d.m(); ++i) d.Y[i] = N(rng);
  const double M = 1e4;
  const FittedModel m = fit_sose_bounded(d, 3, 1, {{-M, M}, {-M, M}}, tight());
  const FittedModel u = fit_upr(d, 3);
  EXPECT_LE((m.poly.coeffs() - u.poly.coeffs()).cwiseAbs().maxCoeff(), 1e-5);
  check_fit(m, d);
}

TEST(SoseBounded, FeasibleInterpolant) {
  const Dataset d = line_data(grid01(9), [](double x) { return x; });
  const FittedModel m = fit_sose_bounded(d, 1, 0, {{0.0, 1.0}}, tight());
  const Eigen::VectorXd c = original_coeffs(m);
  EXPECT_NEAR(c[0], 0.0, 1e-6);
  EXPECT_NEAR(c[1], 1.0, 1e-6);
  check_fit(m, d);
}

TEST(SoseBounded, MarginTightensTheBounds) {
  // y = x with slope capped at 1 - 0.1: least squares gives slope 0.9 and
  // intercept mean(y) - 0.9 mean(x) = 0.05
  const Dataset d = line_data(grid01(9), [](double x) { return x; });
  FitOptions o = tight();
  o.derivative_margin = 0.1;
  const FittedModel m = fit_sose_bounded(d, 1, 0, {{0.0, 1.0}}, o);
  const Eigen::VectorXd c = original_coeffs(m);
  EXPECT_NEAR(c[1], 0.9, 1e-6);
  EXPECT_NEAR(c[0], 0.05, 1e-6);
  o.derivative_margin = 0.6;
  EXPECT_THROW(fit_sose_bounded(d, 1, 0, {{0.0, 1.0}}, o), ValidationError);
  o.derivative_margin = -1e-3;
  EXPECT_THROW(fit_sose_bounded(d, 1, 0, {{0.0, 1.0}}, o), ValidationError);
}

TEST(SoseBounded, ActiveBoundsOnNonUnitBox) {
  // slope of 3 x^2 reaches 12 at x = 2; cap it at 5
  Dataset d = line_data({-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0}, [](double x) { return x * x * x; },
                        Box(Eigen::VectorXd::Constant(1, -1.0), Eigen::VectorXd::Constant(1, 2.0)));
  const FittedModel m = fit_sose_bounded(d, 3, 1, {{-INFINITY, 5.0}}, tight());
  check_fit(m, d);
  const auto g = certify::grid_audit_derivatives(m.original_poly(), d.box, {{-INFINITY, 5.0}}, 200);
  EXPECT_LE(g.worst, 1e-6);
  EXPECT_GE(g.worst, -1e-3);  // the bound binds somewhere
}

TEST(SoseShapes, HessianBandAndPartial) {
  const Dataset d = data::synth_convex(60, 2, 0.2, 8);
  const FittedModel band = fit_sose(d, 4, 1, ShapeSpec::band(0.5, 3.0), tight());
  check_fit(band, d);
  const auto g = certify::grid_audit_band(band.original_poly(), d.box, 0.5, 3.0, 30);
  EXPECT_LE(g.worst, 1e-6);

  const FittedModel part =
      fit_sose(d, 4, 1, ShapeSpec::partial({{{0}, 1}, {{1}, -1}}, {{0.0, INFINITY}, {-INFINITY, INFINITY}}), tight());
  check_fit(part, d);
  Dataset d3 = data::synth_convex(80, 3, 0.2, 8);
  const FittedModel joint = fit_sose(d3, 2, 0, ShapeSpec::partial({{{0, 2}, -1}}), tight());
  check_fit(joint, d3);
}

// ---------------------------------------------------------------------------

TEST(Clse, TwoPointsInterpolate) {
  const Dataset d = line_data({0.2, 0.7}, [](double x) { return 3.0 * x; });
  const ClseModel m = fit_clse(d);
  EXPECT_LE(m.train_sse, 1e-12);
}

TEST(Clse, ConvexDataIsInterpolated) {
  const Dataset d = line_data({0.0, 0.25, 0.5, 0.75, 1.0}, [](double x) { return x * x; });
  const ClseModel m = fit_clse(d);
  EXPECT_LE((m.theta - d.Y).cwiseAbs().maxCoeff(), 1e-6);
}

// Brute force over knot supports of  a + b x + sum_k c_k (x - x_k)_+ , c >= 0.
double convex_regression_1d(const Dataset& d, Eigen::VectorXd* fitted) {
  const int m = d.m();
  std::vector<double> xs(d.X.data(), d.X.data() + m);
  std::sort(xs.begin(), xs.end());
  const int knots = m - 2;
  double best = INFINITY;
  for (int mask = 0; mask < (1 << knots); ++mask) {
    std::vector<int> on;
    for (int k = 0; k < knots; ++k)
      if (mask & (1 << k)) on.push_back(k + 1);
    Eigen::MatrixXd A(m, 2 + static_cast<Eigen::Index>(on.size()));
    for (int i = 0; i < m; ++i) {
      A(i, 0) = 1.0;
      A(i, 1) = d.X(i, 0);
      for (std::size_t k = 0; k < on.size(); ++k)
        A(i, 2 + static_cast<Eigen::Index>(k)) = std::max(0.0, d.X(i, 0) - xs[static_cast<std::size_t>(on[k])]);
    }
    Eigen::VectorXd c;
    const double s = ls_sse(A, d.Y, &c);
    if ((c.tail(c.size() - 2).array() < -1e-12).any()) continue;
    if (s < best) {
      best = s;
      *fitted = A * c;
    }
  }
  return best;
}

TEST(Clse, ConcaveDataMatchesBruteForceQp) {
  const Dataset d = line_data({0.0, 0.15, 0.3, 0.5, 0.65, 0.8, 1.0}, [](double x) { return std::sin(3.0 * x); });
  Eigen::VectorXd fitted;
  const double oracle = convex_regression_1d(d, &fitted);
  const ClseModel m = fit_clse(d);
  EXPECT_NEAR(m.train_sse, oracle, 1e-6);
  EXPECT_LE((m.theta - fitted).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Clse, SubgradientInequalitiesHold) {
  const Dataset d = data::synth_convex(40, 2, 0.5, 12);
  conic::SolverSettings s;
  s.feas_tol = 1e-10;
  s.gap_tol = 1e-10;
  const ClseModel m = fit_clse(d, false, s);
  double worst = 0.0;
  for (int i = 0; i < d.m(); ++i)
    for (int j = 0; j < d.m(); ++j)
      worst = std::max(worst, m.theta[i] + m.xi.row(i).dot(d.X.row(j) - d.X.row(i)) - m.theta[j]);
  EXPECT_LE(worst, 1e-7);
}

TEST(Clse, RefusesLargeProblems) {
  Dataset d = data::synth_convex(kClseMaxPoints + 1, 1, 0.1, 1);
  EXPECT_THROW(fit_clse(d), ValidationError);
}

// Vertices of {lambda >= 0, sum = 1, sum lambda_i x_i = x} in 1-D.
double clse_lp_oracle(const ClseModel& m, double x) {
  double best = INFINITY;
  const auto n = m.X.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(m.X(i, 0) - x) < 1e-15) best = std::min(best, m.theta[i]);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double xi = m.X(i, 0), xj = m.X(j, 0);
      if (!(xi < x && x < xj)) continue;
      const double w = (xj - x) / (xj - xi);
      best = std::min(best, w * m.theta[i] + (1.0 - w) * m.theta[j]);
    }
  }
  return best;
}

TEST(Clse, PredictionLp) {
  const Dataset d = line_data({0.0, 0.2, 0.45, 0.6, 1.0}, [](double x) { return std::exp(2.0 * x) + 0.1 * std::sin(40 * x); });
  const ClseModel m = fit_clse(d);
  for (int k = 0; k < d.m(); ++k) {
    const Eigen::VectorXd x = d.X.row(k).transpose();
    EXPECT_LE(predict_clse(m, x), m.theta[k] + 1e-7);
  }
  const double mid = 0.5 * (d.X(1, 0) + d.X(2, 0));
  const double pm = predict_clse(m, Eigen::VectorXd::Constant(1, mid));
  EXPECT_LE(pm, 0.5 * (m.theta[1] + m.theta[2]) + 1e-7);
  for (double x : {0.1, 0.33, mid, 0.77, 0.95}) EXPECT_NEAR(predict_clse(m, Eigen::VectorXd::Constant(1, x)), clse_lp_oracle(m, x), 1e-6);
  EXPECT_THROW(predict_clse(m, Eigen::VectorXd::Constant(1, 1.5)), OutsideHull);
  EXPECT_THROW(predict_clse(m, Eigen::VectorXd::Constant(1, -0.1)), OutsideHull);
  const double slacked = predict_clse(m, Eigen::VectorXd::Constant(1, 1.5), true);
  EXPECT_TRUE(std::isfinite(slacked));
  EXPECT_NEAR(predict_clse(m, Eigen::VectorXd::Constant(1, 0.33), true), clse_lp_oracle(m, 0.33), 1e-6);
}

// ---------------------------------------------------------------------------

TEST(Predict, RmseIdentities) {
  const Dataset d = data::synth_convex(25, 2, 0.3, 4);
  FittedModel constant = fit_upr(d, 0);
  const double mean = d.Y.mean();
  EXPECT_NEAR(rmse(constant, d), std::sqrt((d.Y.array() - mean).square().mean()), 1e-12);
  const FittedModel m = fit_upr(d, 3);
  double acc = 0.0;
  for (int i = 0; i < d.m(); ++i) acc += std::pow(d.Y[i] - predict(m, d.X.row(i).transpose()), 2);
  EXPECT_NEAR(rmse(m, d) * rmse(m, d) * d.m(), acc, 1e-10);
  bool outside = false;
  predict(m, Eigen::Vector2d(2.0, 0.5), &outside);
  EXPECT_TRUE(outside);
  predict(m, Eigen::Vector2d(0.5, 0.5), &outside);
  EXPECT_FALSE(outside);
  EXPECT_THROW(predict(m, Eigen::Vector3d(0.5, 0.5, 0.5)), DimensionMismatch);
}

TEST(Predict, ScalingIsTransparent) {
  const Dataset d = data::synth_convex(40, 2, 0.0, 10);
  const FittedModel m = fit_sose_convex(d, 4, 1, tight());
  const poly::Polynomial p = m.original_poly();
  for (int i = 0; i < 10; ++i) {
    const Eigen::VectorXd x = d.X.row(i).transpose();
    EXPECT_NEAR(predict(m, x), p(x), 1e-10);
  }
}

}  // namespace
}  // namespace shapesos::est

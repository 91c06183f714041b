#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "shapesos/certify.hpp"
#include "shapesos/data.hpp"
#include "shapesos/errors.hpp"
#include "shapesos/model_io.hpp"

using namespace shapesos;
using poly::Box;
using poly::Polynomial;

namespace {

est::FittedModel round_trip(const est::FittedModel& m, bool certs = true) {
  std::stringstream ss;
  io::write_model(ss, m, certs);
  return io::read_model(ss);
}

void expect_same_predictions(const est::FittedModel& a, const est::FittedModel& b) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 50; ++k) {
    Eigen::VectorXd x(a.num_vars());
    for (int i = 0; i < x.size(); ++i) {
      std::uniform_real_distribution<double> U(a.box.lower()[i], a.box.upper()[i]);
      x[i] = U(rng);
    }
    EXPECT_EQ(est::predict(a, x), est::predict(b, x));
  }
}

}  // namespace

TEST(ModelIo, PolynomialRoundTripIsExact) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> N;
  Polynomial p(3, 4);
  for (Eigen::Index k = 0; k < p.coeffs().size(); ++k) p.coeffs()[k] = k % 3 ? N(rng) : 0.0;
  std::stringstream ss;
  io::write_polynomial(ss, p);
  const auto q = io::read_polynomial(ss);
  EXPECT_EQ(q.basis_degree(), 4);
  EXPECT_EQ(q.coeffs(), p.coeffs());
}

TEST(ModelIo, ConvexFitWithCertificates) {
  const auto data = data::synth_convex(60, 2, 0.5, 3);
  const auto m = est::fit_sose_convex(data, 4, 1);
  const auto back = round_trip(m);
  EXPECT_EQ(back.poly.coeffs(), m.poly.coeffs());
  EXPECT_EQ(back.box.lower(), m.box.lower());
  EXPECT_EQ(back.scaling.half_width, m.scaling.half_width);
  EXPECT_EQ(back.train_sse, m.train_sse);
  EXPECT_EQ(back.shape.kind, est::ShapeKind::Convex);
  EXPECT_EQ(back.provenance.status, m.provenance.status);
  EXPECT_EQ(back.provenance.extra, m.provenance.extra);
  ASSERT_EQ(back.certificates.size(), m.certificates.size());
  for (std::size_t k = 0; k < m.certificates.size(); ++k) {
    EXPECT_EQ(back.certificates[k].label, m.certificates[k].label);
    EXPECT_EQ(back.certificates[k].grams.size(), m.certificates[k].grams.size());
    EXPECT_EQ(certify::identity_residual(back.certificates[k], 200, 4),
              certify::identity_residual(m.certificates[k], 200, 4));
  }
  expect_same_predictions(m, back);
  EXPECT_TRUE(round_trip(m, false).certificates.empty());
}

TEST(ModelIo, PartialAndBoundedShapes) {
  const auto data = data::synth_convex(50, 3, 0.2, 4);
  std::vector<est::Interval> K{{0.0, INFINITY}, {-INFINITY, 10.0}, {}};
  const auto m = est::fit_sose(data, 2, 1, est::ShapeSpec::partial({{{0, 1}, +1}, {{2}, -1}}, K));
  const auto back = round_trip(m);
  ASSERT_EQ(back.shape.K.size(), 3u);
  EXPECT_EQ(back.shape.K[0].hi, INFINITY);
  EXPECT_EQ(back.shape.K[1].lo, -INFINITY);
  ASSERT_EQ(back.shape.blocks.size(), 2u);
  EXPECT_EQ(back.shape.blocks[0].coords, (std::vector<int>{0, 1}));
  EXPECT_EQ(back.shape.blocks[1].sign, -1);
  expect_same_predictions(m, back);
  for (std::size_t k = 0; k < m.certificates.size(); ++k) {
    EXPECT_EQ(back.certificates[k].matrix_size, m.certificates[k].matrix_size);
    EXPECT_EQ(certify::identity_residual(back.certificates[k], 100, 5),
              certify::identity_residual(m.certificates[k], 100, 5));
  }
}

TEST(ModelIo, ToySquareFromFile) {
  est::FittedModel m;
  m.box = Box::symmetric(1);
  m.scaling = est::Scaling::identity(1);
  m.degree = 2;
  const auto x = Polynomial::variable(1, 0);
  m.poly = x * x;
  m.provenance.extra["note"] = "hand built\twith tab";
  const auto path = std::filesystem::temp_directory_path() / "shapesos_toy.model";
  io::save_model(path, m);
  const auto back = io::load_model(path);
  EXPECT_NEAR(est::predict(back, Eigen::VectorXd::Constant(1, 0.5)), 0.25, 1e-12);
  EXPECT_EQ(back.provenance.extra.at("note"), "hand built\twith tab");
  std::filesystem::remove(path);
  EXPECT_THROW(io::load_model(path), ValidationError);
}

TEST(ModelIo, RejectsMalformedFiles) {
  const auto data = data::synth_convex(30, 2, 0.5, 5);
  const auto m = est::fit_upr(data, 2);
  std::stringstream ss;
  io::write_model(ss, m);
  const std::string good = ss.str();
  auto bad = [](std::string s) {
    std::istringstream in(s);
    return io::read_model(in);
  };
  EXPECT_NO_THROW(bad(good));
  std::string v2 = good;
  v2.replace(v2.find("shapesos-model 1"), 16, "shapesos-model 9");
  EXPECT_THROW(bad(v2), ValidationError);
  EXPECT_THROW(bad(good.substr(0, good.size() / 2)), ValidationError);
  std::string shape = good;
  shape.replace(shape.find("shape none"), 10, "shape blob");
  EXPECT_THROW(bad(shape), ValidationError);
  EXPECT_THROW(bad("not a model\n"), ValidationError);
}

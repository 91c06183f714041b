#pragma once

// Robust single-product inventory with a flexible commitment contract.
// Orders follow affine decision rules in past demand; the worst case over a
// demand box (LP) or ellipsoid (SOCP) is taken constraint by constraint. The
// optimal value as a function of the contract (alpha+-, beta+-, L) is then
// fitted with a shape-constrained polynomial.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "shapesos/conic.hpp"
#include "shapesos/estimators.hpp"

namespace shapesos::inventory {

enum class Uncertainty { Box, Ellipsoid };

const char* to_string(Uncertainty u);

struct InventoryInstance {
  int T = 0;
  double h = 0.0;  // holding, per unit and period
  double p = 0.0;  // backlog
  double c = 0.0;  // ordering
  double s = 0.0;  // salvage of the final stock
  Eigen::VectorXd d_bar;  // nominal demand
  Eigen::VectorXd rho;    // box half-widths or ellipsoid semi-axes
  Uncertainty set = Uncertainty::Box;

  void validate() const;
  // Seasonal demand 10 (1 + 0.5 sin(pi (t-1) / 6)) with 20% spread.
  static InventoryInstance example(int T);
};

// Text format:
//   T <int>
//   h|p|c|s <real>
//   set box|ellipsoid
//   demand
//   <t> <d_bar> <rho>     (T lines)
// '#' starts a comment.
InventoryInstance read_instance(std::istream& in);
InventoryInstance read_instance(const std::filesystem::path& path);
void write_instance(std::ostream& out, const InventoryInstance& inst);

struct ContractParams {
  double alpha_plus = 0.0, alpha_minus = 0.0;
  double beta_plus = 0.0, beta_minus = 0.0;
  double L = 0.0;

  void validate() const;
  // (alpha+, alpha-, beta+, beta-, L)
  Eigen::VectorXd to_vector() const;
  static ContractParams from_vector(const Eigen::Ref<const Eigen::VectorXd>& x);
};

inline const std::vector<std::string>& param_names() {
  static const std::vector<std::string> names{"alpha_plus", "alpha_minus", "beta_plus", "beta_minus", "L"};
  return names;
}

// Linear expression in the decision variables.
struct LinExpr {
  std::vector<conic::Term> terms;
  double constant = 0.0;

  LinExpr() = default;
  LinExpr(double c) : constant(c) {}  // NOLINT
  LinExpr(conic::VarRef v, double coef = 1.0) : terms{{v, coef}} {}  // NOLINT

  LinExpr& operator+=(const LinExpr& o);
  LinExpr& operator*=(double s);
  bool is_constant() const { return terms.empty(); }
  friend LinExpr operator+(LinExpr a, const LinExpr& b) { return a += b; }
  friend LinExpr operator-(LinExpr a, LinExpr b) { return a += (b *= -1.0); }
  friend LinExpr operator*(double s, LinExpr a) { return a *= s; }
};

// a0 + sum_tau a[tau] d_tau with coefficients linear in the decisions.
struct AffineInD {
  LinExpr a0;
  std::vector<LinExpr> a;  // size T

  explicit AffineInD(int T = 0) : a(static_cast<std::size_t>(T)) {}
  AffineInD& operator+=(const AffineInD& o);
  AffineInD& operator*=(double s);
  friend AffineInD operator+(AffineInD x, const AffineInD& y) { return x += y; }
  friend AffineInD operator-(AffineInD x, AffineInD y) { return x += (y *= -1.0); }
  friend AffineInD operator*(double s, AffineInD x) { return x *= s; }
};

// g(d) >= 0 for all |d_t - d_bar_t| <= rho_t:
//   a0 + a'd_bar - sum rho_t gamma_t >= 0,  gamma_t >= +-a_t.
// Constant a_t enter as rho_t |a_t| directly and rho_t = 0 needs no gamma.
// Returns the number of rows added.
int robustify_box(conic::ConicProgram& prog, const AffineInD& g, const Eigen::VectorXd& d_bar,
                  const Eigen::VectorXd& rho, const std::string& label = "robust");

// g(d) >= 0 for all |diag(rho)^-1 (d - d_bar)| <= 1:
//   a0 + a'd_bar >= |diag(rho) a|   (one second-order cone).
int robustify_ellipsoid(conic::ConicProgram& prog, const AffineInD& g, const Eigen::VectorXd& d_bar,
                        const Eigen::VectorXd& rho, const std::string& label = "robust");

// Affine rule x_t = x_t^0 + sum_{tau < t} x_t^tau d_tau.
struct Rule {
  conic::VarRef base;
  std::vector<conic::VarRef> coef;  // tau = 1 .. t-1
  AffineInD expr(int T) const;
};

struct AarcModel {
  conic::ConicProgram program;
  conic::BlockId w, z_plus, z_minus, C;
  std::vector<Rule> q, y, u, v;
  int robust_rows = 0;
};

AarcModel build_aarc(const InventoryInstance& inst, const ContractParams& params);

struct AarcSolution {
  double value = 0.0;
  conic::SolveStatus status = conic::SolveStatus::Failed;
  Eigen::VectorXd w;   // commitments
  Eigen::VectorXd q0;  // nominal part of the order rules
  double solve_seconds = 0.0;
};

// Throws SolveNotOptimal when the program is not solved.
AarcSolution solve_aarc(const InventoryInstance& inst, const ContractParams& params,
                        const conic::SolverSettings& settings = {});
double value(const InventoryInstance& inst, const ContractParams& params, const conic::SolverSettings& settings = {});

// Monotone in every parameter, convex in L, concave in (beta+, beta-).
est::ShapeSpec surrogate_shape();

// alpha+-, beta+- in [0, 2c], L in [0, sum d_bar].
poly::Box default_sample_box(const InventoryInstance& inst);

struct SurrogateOptions {
  int m = 200;
  int d = 4;
  int r = 2;
  std::uint64_t seed = 1;
  int max_resamples = 1000;
  conic::SolverSettings solver;
  est::FitOptions fit;
};

struct SurrogateResult {
  est::FittedModel model;
  est::Dataset samples;
  int resampled = 0;  // tuples discarded because the LP was not solved
};

// Samples m tuples uniformly in `box`, solves each robust program and fits
// the shape-constrained polynomial.
SurrogateResult fit_surrogate(const InventoryInstance& inst, const poly::Box& box, const SurrogateOptions& options = {});
// Solves the robust program at uniformly sampled tuples; unsolved tuples are
// resampled and counted.
est::Dataset sample_values(const InventoryInstance& inst, const poly::Box& box, int m, std::uint64_t seed,
                           const conic::SolverSettings& settings = {}, int* resampled = nullptr,
                           int max_resamples = 1000);

struct RelativeError {
  double mean = 0.0;
  double max = 0.0;
};
// |prediction - v| / max(1, |v|) over the rows of `data`.
RelativeError relative_error(const est::FittedModel& model, const est::Dataset& data);

struct ShapeCheck {
  std::string what;
  double worst = 0.0;  // largest violation, <= tol passes
  bool passed = true;
};

struct ShapeAudit {
  std::vector<ShapeCheck> checks;
  int solves = 0;
  bool passed = true;
};

// Exact-solve audit of the true value function around `base`: v nondecreasing
// on the grid {x/2, x, 2x} in each parameter, midpoint convexity in L and
// midpoint concavity in beta+, beta- and along (beta+, beta-) jointly. A zero
// base coordinate uses {0, c, 2c} instead ({0, S/2, S} for L, S = sum d_bar).
ShapeAudit audit_value_shape(const InventoryInstance& inst, const ContractParams& base, double tol = 1e-6,
                          const conic::SolverSettings& settings = {});
void write_report(std::ostream& os, const ShapeAudit& report);

}  // namespace shapesos::inventory

#pragma once

// A posteriori audits. Nothing here looks at solver output other than the
// returned polynomial and Gram matrices; checks use plain evaluation and
// dense eigen-solves.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "shapesos/estimators.hpp"
#include "shapesos/poly.hpp"
#include "shapesos/sos.hpp"

namespace shapesos::certify {

using poly::Box;
using poly::Polynomial;

struct Tolerances {
  double identity = 1e-6;    // relative to 1 + max |coeff|
  double eigenvalue = 1e-6;  // Hessian grid audits
  double derivative = 1e-6;
  double lp = 1e-6;          // optimal-value shape checks, relative to 1 + |v|
  int density_small = 20;    // n <= 3
  int density_medium = 8;    // n <= 6
  int density_large = 4;
  int random_samples = 2000;
  int identity_samples = 1000;
};

const Tolerances& defaults();
int default_density(int n, const Tolerances& tol = defaults());

// Tensor grid with `density` points per axis (endpoints included) followed
// by `random` uniform samples.
std::vector<Eigen::VectorXd> audit_points(const Box& box, int density, int random = 0, std::uint64_t seed = 0);

// Max over uniform box samples of |target - sum of terms| (spectral norm for
// matrix identities).
double identity_residual(const sos::Certificate& cert, int samples, std::uint64_t seed = 0);
// Largest coefficient of the certificate target.
double certificate_scale(const sos::Certificate& cert);
// Magnitude the identity residual of a model's certificate is measured
// against: the larger of the model and target coefficient scales. The solver
// works to a tolerance set by the whole fit, not by one certificate.
double identity_scale(const est::FittedModel& model, const sos::Certificate& cert);

struct GridResult {
  double worst = 0.0;
  Eigen::VectorXd where;
  int points = 0;
};

// Minimum of lambda_min(H_p(x)) over the points.
GridResult min_hessian_eigenvalue(const Polynomial& p, const std::vector<Eigen::VectorXd>& points);
GridResult grid_audit_convexity(const Polynomial& p, const Box& box, int density, int random = 0,
                                std::uint64_t seed = 0);
// max_i max(K_i^- - dp/dx_i, dp/dx_i - K_i^+); <= 0 means satisfied.
GridResult grid_audit_derivatives(const Polynomial& p, const Box& box, const std::vector<est::Interval>& K,
                                  int density, int random = 0, std::uint64_t seed = 0);
// max(ell - lambda_min, lambda_max - L); <= 0 means inside the band.
GridResult grid_audit_band(const Polynomial& p, const Box& box, double ell, double L, int density, int random = 0,
                           std::uint64_t seed = 0);
// Worst of -sign * eigenvalues of the curvature blocks; <= 0 means satisfied.
GridResult grid_audit_blocks(const Polynomial& p, const Box& box, const std::vector<est::CurvatureBlock>& blocks,
                             int density, int random = 0, std::uint64_t seed = 0);

struct AuditReport {
  std::string name;
  double worst = 0.0;
  Eigen::VectorXd where;
  double tolerance = 0.0;
  bool passed = true;
  std::string note;
};

void write_report(std::ostream& os, const std::vector<AuditReport>& reports);
bool all_passed(const std::vector<AuditReport>& reports);

// Certificate replays plus grid audits of the model's shape claims in
// original coordinates.
std::vector<AuditReport> audit_model(const est::FittedModel& model, const Tolerances& tol = defaults(),
                                     std::uint64_t seed = 0);

// Optimal-value shape checks on random LPs  v(b, c) = min c'x s.t. Ax <= b.
struct ValueFunctionReport {
  int instances = 0;
  int skipped = 0;
  double worst_b_convexity = -INFINITY;  // v(mid b) - mean(v)
  double worst_c_concavity = -INFINITY;  // mean(v) - v(mid c)
  double worst_monotonicity = -INFINITY; // v(b + k) - v(b), k >= 0
  bool passed = true;
  std::string note;
};

ValueFunctionReport audit_value_function(int count, std::uint64_t seed, const Tolerances& tol = defaults());
void write_report(std::ostream& os, const ValueFunctionReport& report);

// Optimal value of min c'x s.t. Ax <= b (x free). Returns NaN when the LP is
// infeasible or unbounded.
double lp_value(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c);

}  // namespace shapesos::certify

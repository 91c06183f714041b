#pragma once

// Shape-constrained polynomial regression and the baselines it is compared
// against.
//
// Every SOS fit works in scaled coordinates t = (x - center) / half_width on
// [-1, 1]^n. The fitted polynomial, its certificates and the Gram matrices are
// stored in those coordinates; predict() maps x first.

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "shapesos/conic.hpp"
#include "shapesos/poly.hpp"
#include "shapesos/sos.hpp"

namespace shapesos::est {

using poly::Box;
using poly::Polynomial;

struct Dataset {
  Eigen::MatrixXd X;  // m x n
  Eigen::VectorXd Y;
  Box box;

  int m() const { return static_cast<int>(X.rows()); }
  int n() const { return static_cast<int>(X.cols()); }
  // Throws ValidationError unless rows are inside the box (1e-12 slack).
  void validate() const;
  Dataset subset(const std::vector<int>& rows) const;
  Dataset concat(const Dataset& other) const;  // keeps this box
};

// Header row, then n feature columns and the response. The box is taken from
// `box_file` (lines "lower v1 .. vn" / "upper v1 .. vn"), from "<csv>.box" if
// present, or from the data range padded by 1% per side.
Dataset read_csv(const std::filesystem::path& csv, const std::optional<std::filesystem::path>& box_file = {});
void write_csv(const std::filesystem::path& csv, const Dataset& data);
Box read_box(const std::filesystem::path& file);
Box padded_box(const Eigen::MatrixXd& X, double pad = 0.01);

struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

// Convex (+1) or concave (-1) in the listed coordinates jointly. A block of a
// single coordinate constrains one second derivative.
struct CurvatureBlock {
  std::vector<int> coords;
  int sign = 1;
};

enum class ShapeKind { None, Convex, BoundedDerivatives, HessianBand, Partial };

const char* to_string(ShapeKind kind);

struct ShapeSpec {
  ShapeKind kind = ShapeKind::None;
  std::vector<Interval> K;              // BoundedDerivatives, optional for Partial
  double ell = 0.0, L = 0.0;            // HessianBand
  std::vector<CurvatureBlock> blocks;   // Partial

  static ShapeSpec none() { return {}; }
  static ShapeSpec convex();
  static ShapeSpec bounded(std::vector<Interval> K);
  static ShapeSpec band(double ell, double L);
  static ShapeSpec partial(std::vector<CurvatureBlock> blocks, std::vector<Interval> K = {});
  void validate(int n) const;
};

// t = (x - center) / half_width
struct Scaling {
  Eigen::VectorXd center;
  Eigen::VectorXd half_width;

  static Scaling identity(int n);
  static Scaling to_unit(const Box& box);  // box -> [-1, 1]^n
  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& X) const;
};

struct Provenance {
  std::string created;  // ISO-8601 UTC
  std::uint64_t seed = 0;
  std::string backend;
  std::string status;
  int iterations = 0;
  double solve_seconds = 0.0;
  std::map<std::string, std::string> extra;
};

struct FittedModel {
  Polynomial poly;  // in scaled coordinates
  Box box;          // original coordinates
  ShapeSpec shape;
  Scaling scaling;
  std::vector<sos::Certificate> certificates;
  double train_sse = 0.0;
  int degree = 0;
  int r = 0;
  std::string gram_kind = "psd";
  Provenance provenance;

  int num_vars() const { return box.dim(); }
  double operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  // The same polynomial in original coordinates.
  Polynomial original_poly() const;
};

struct FitOptions {
  conic::SolverSettings solver;
  sos::GramOptions gram;           // Gram kind, congruence, global variant
  std::optional<Scaling> scaling;  // default: box -> [-1, 1]^n
  std::uint64_t seed = 0;          // recorded only
  // Derivative bounds are certified as [lo + margin, hi - margin], so that
  // solver-level error cannot show up as a violation of [lo, hi].
  double derivative_margin = 0.0;
};

// Minimizes the training SSE over degree-d polynomials satisfying `shape`,
// encoded with multiplier half-degree r. Dispatch for all shape kinds.
FittedModel fit_sose(const Dataset& data, int d, int r, const ShapeSpec& shape, const FitOptions& options = {});

FittedModel fit_sose_convex(const Dataset& data, int d, int r, const FitOptions& options = {});

// The scaling a fit on `box` uses: options.scaling or box -> [-1, 1]^n.
Scaling resolve_scaling(const Box& box, const FitOptions& options);
// Minimizes ||A c - y|| over the coefficients c of a degree-d polynomial in
// the scaled coordinates of `box` under `shape`. Columns of A follow the grlex
// basis of degree d in scaled coordinates; train_sse is ||A c - y||^2.
FittedModel fit_shaped_lsq(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, const Box& box, int d, int r,
                           const ShapeSpec& shape, const FitOptions& options = {});
FittedModel fit_sose_bounded(const Dataset& data, int d, int r, std::vector<Interval> K,
                             const FitOptions& options = {});

// Least squares without shape constraints; minimum-norm when the design is
// rank deficient.
FittedModel fit_upr(const Dataset& data, int d, const std::optional<Scaling>& scaling = {});

// Convex quadratic fit with a single constant PSD Gram (the Hessian / 2).
FittedModel fit_convex_quadratic(const Dataset& data, const FitOptions& options = {});

struct ClseModel {
  Eigen::VectorXd theta;
  Eigen::MatrixXd xi;  // m x n subgradients
  Eigen::MatrixXd X;
  double train_sse = 0.0;
  conic::ConicSolution solution;  // stats only
};

inline constexpr int kClseMaxPoints = 2000;

ClseModel fit_clse(const Dataset& data, bool allow_large = false, const conic::SolverSettings& settings = {});
// min sum lambda_i theta_i over the simplex with sum lambda_i X_i = x. With
// slack, violations of the location equalities are penalized instead.
double predict_clse(const ClseModel& model, const Eigen::Ref<const Eigen::VectorXd>& x, bool slack = false);

double predict(const FittedModel& model, const Eigen::Ref<const Eigen::VectorXd>& x, bool* outside_box = nullptr);
Eigen::VectorXd predict_rows(const FittedModel& model, const Eigen::MatrixXd& X);
double sse(const FittedModel& model, const Dataset& data);
double rmse(const FittedModel& model, const Dataset& data);
double rmse_clse(const ClseModel& model, const Dataset& data, bool slack = true);

}  // namespace shapesos::est

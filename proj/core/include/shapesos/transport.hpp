#pragma once

// Color transfer by shape-constrained transport maps: discrete color
// measures, entropic couplings, and alternating fits of a potential f whose
// gradient carries one measure onto the other with l I <= H_f <= L I.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "shapesos/estimators.hpp"

namespace shapesos::transport {

// 8-bit RGB, row-major, three bytes per pixel.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
};

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

struct DiscreteMeasure {
  Eigen::MatrixXd support;  // k x n, rows in [0, 1]^n
  Eigen::VectorXd weights;  // positive, summing to 1

  int size() const { return static_cast<int>(support.rows()); }
  int dim() const { return static_cast<int>(support.cols()); }
  void validate() const;
};

// Colors are normalized by 256. bins == 0 keeps every distinct color; bins > 0
// groups colors on a uniform bins^3 grid and uses the mean color of each
// occupied cell.
DiscreteMeasure measure_from_image(const Image& image, int bins = 0);

struct SinkhornOptions {
  double epsilon = 0.01;
  int max_iters = 5000;
  double tol = 1e-9;          // L1 error of the row marginal
  bool normalize_cost = true; // divide the cost by its maximum first
  bool throw_on_failure = false;
};

struct Coupling {
  Eigen::MatrixXd P;
  Eigen::VectorXd row_sums, col_sums;
  double marginal_error = 0.0;  // ||P 1 - a||_1 + ||P' 1 - b||_1
  int iterations = 0;
  bool converged = false;
  double epsilon = 0.0;         // regularization in the units of the given cost
};

// Log-domain Sinkhorn iterations for min <C, P> + eps sum P (log P - 1).
// Without throw_on_failure a run that hits max_iters returns the last
// iterate with converged == false; with it, NonConvergence is thrown.
Coupling sinkhorn(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& C,
                  const SinkhornOptions& options = {});

// sum_ij P_ij ||grad(x_i) - y_j||^2
double transport_cost(const Eigen::MatrixXd& P, const Eigen::MatrixXd& G, const Eigen::MatrixXd& Y);
// sum_ij P_ij (log P_ij - 1), with 0 log 0 = 0
double entropy_term(const Eigen::MatrixXd& P);
// C_ij = ||G_i - Y_j||^2
Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& G, const Eigen::MatrixXd& Y);

// Gradients of the model at the rows of X (original coordinates).
Eigen::MatrixXd gradients(const est::FittedModel& f, const Eigen::MatrixXd& X);

struct PotentialParams {
  int d = 4;
  int r = 3;
  double ell = 1.0;
  double L = 10.0;
};

// Minimizes sum_ij P_ij ||grad f(x_i) - y_j||^2 over degree-d polynomials on
// [0, 1]^n with ell I <= H_f <= L I, using the barycentric form
//   sum_i a_i ||grad f(x_i) - c_i / a_i||^2 + const,  c_i = sum_j P_ij y_j.
// The constant coefficient of f does not enter and is pinned to 0.
est::FittedModel fit_potential(const Eigen::MatrixXd& P, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                               const PotentialParams& params, const est::FitOptions& options = {});

// ((ell + L) / 4) ||x||^2, whose Hessian (ell + L) / 2 I sits inside the band.
est::FittedModel initial_potential(int n, double ell, double L);

// Refuse couplings beyond this many entries unless forced.
inline constexpr double kMaxCouplingEntries = 1e8;

struct TransferParams {
  PotentialParams potential;
  SinkhornOptions sinkhorn;
  int max_outer = 20;
  double rel_tol = 1e-4;
  bool force = false;  // allow couplings beyond kMaxCouplingEntries
};

struct TransferResult {
  est::FittedModel potential;
  Coupling coupling;
  // Entropic objective <C_f, P> + eps_abs * entropy after every half-step,
  // starting with the first coupling of the initial potential.
  std::vector<double> objective;
  std::vector<double> transport;  // the bare transport cost at the same points
  double epsilon_abs = 0.0;
  int outer = 0;
  bool converged = false;
};

// Alternates Sinkhorn (f fixed) and fit_potential (P fixed). epsilon is taken
// relative to max_ij |x_i - y_j|^2 and then held fixed, so that both half-steps
// minimize the same objective. A negative rel_tol runs all max_outer rounds.
TransferResult alternate(const DiscreteMeasure& mu, const DiscreteMeasure& nu, const TransferParams& params,
                         const est::FitOptions& options = {});

struct MapResult {
  Image image;
  std::size_t clamped = 0;  // pixels with a component outside [0, 1]
};

// Applies grad f to every pixel color c / 256 and re-quantizes round(256 y)
// clamped to 0..255.
MapResult apply_map(const est::FittedModel& f, const Image& image);

}  // namespace shapesos::transport

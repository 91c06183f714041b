#pragma once

// Cheap refits around an incumbent convex fit. Each Gram block Q* of the
// incumbent's convexity certificate is factored as U* U*; the refit searches
// Q = U* D U* with D diagonally dominant (LP) or scaled diagonally dominant
// (SOCP). D = I reproduces the incumbent, so a refit never does worse than
// the incumbent on the augmented data.

#include <vector>

#include <Eigen/Core>

#include "shapesos/estimators.hpp"

namespace shapesos::online {

inline constexpr double kEigenClamp = 1e-10;

// Symmetric square root; eigenvalues below `clamp` are set to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& Q, double clamp = kEigenClamp);

struct UpdateBasis {
  std::vector<Eigen::MatrixXd> U;      // one per Gram block, s_0 first
  std::vector<Eigen::MatrixXd> Q;      // the incumbent Grams
  std::vector<int> half_degrees;       // x-degree of each block's w(x, y)
  bool global = false;                 // s_0 only, no box multipliers
  est::FittedModel model;              // the incumbent
};

// Throws MissingCertificate unless the model carries a convexity certificate.
UpdateBasis factorize(const est::FittedModel& model);

struct RefitResult {
  est::FittedModel model;
  double incumbent_sse = 0.0;  // frozen incumbent on the augmented data
  double solve_seconds = 0.0;
  bool kept_incumbent = false; // solver point was not better than D = I
};

// `augmented` must lie in the incumbent's box; its box is replaced by it.
RefitResult refit(const UpdateBasis& basis, const est::Dataset& augmented, sos::GramKind kind,
                  const conic::SolverSettings& settings = {});
est::FittedModel refit_dd(const UpdateBasis& basis, const est::Dataset& augmented);
est::FittedModel refit_sdd(const UpdateBasis& basis, const est::Dataset& augmented);

// Feeds batches one at a time, refactorizing after every refit.
struct StreamStep {
  double incumbent_sse = 0.0;
  double refit_sse = 0.0;
  double solve_seconds = 0.0;
};
std::vector<StreamStep> run_stream(const est::FittedModel& start, const est::Dataset& seen,
                                   const std::vector<est::Dataset>& batches, sos::GramKind kind,
                                   est::FittedModel* final_model = nullptr);

}  // namespace shapesos::online

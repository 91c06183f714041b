#include "shapesos/online.hpp"

#include <Eigen/Eigenvalues>

#include "shapesos/errors.hpp"

namespace shapesos::online {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& Q, double clamp) {
  if (Q.rows() != Q.cols()) throw DimensionMismatch("square root of a non-square matrix");
  if (Q.rows() == 0) return Q;
  const Eigen::MatrixXd S = 0.5 * (Q + Q.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  Eigen::VectorXd root = es.eigenvalues();
  for (Eigen::Index i = 0; i < root.size(); ++i) root[i] = root[i] < clamp ? 0.0 : std::sqrt(root[i]);
  const Eigen::MatrixXd& V = es.eigenvectors();
  Eigen::MatrixXd U = V * root.asDiagonal() * V.transpose();
  return 0.5 * (U + U.transpose());
}

UpdateBasis factorize(const est::FittedModel& model) {
  if (model.shape.kind != est::ShapeKind::Convex)
    throw MissingCertificate("online refits need a model fitted under the convexity shape");
  const sos::Certificate* cert = nullptr;
  for (const auto& c : model.certificates)
    if (c.label == "convex") cert = &c;
  if (cert == nullptr || cert->grams.empty()) throw MissingCertificate("model has no convexity certificate");
  UpdateBasis b;
  b.model = model;
  b.global = cert->grams.size() == 1;
  b.half_degrees = cert->half_degrees;
  for (const auto& Q : cert->grams) {
    b.Q.push_back(Q);
    b.U.push_back(psd_sqrt(Q));
  }
  return b;
}

RefitResult refit(const UpdateBasis& basis, const est::Dataset& augmented, sos::GramKind kind,
                  const conic::SolverSettings& settings) {
  if (kind == sos::GramKind::PSD) throw ValidationError("online refits use DD or SDD Gram restrictions");
  est::Dataset data = augmented;
  data.box = basis.model.box;
  data.validate();

  est::FitOptions opt;
  opt.solver = settings;
  opt.gram.kind = kind;
  opt.gram.global = basis.global;
  opt.gram.congruence = basis.U;
  opt.scaling = basis.model.scaling;
  opt.seed = basis.model.provenance.seed;

  RefitResult res;
  res.incumbent_sse = est::sse(basis.model, data);
  est::FittedModel fresh = est::fit_sose_convex(data, basis.model.degree, basis.model.r, opt);
  res.solve_seconds = fresh.provenance.solve_seconds;
  fresh.train_sse = est::sse(fresh, data);
  fresh.provenance.extra["update"] = sos::to_string(kind);
  fresh.provenance.extra["incumbent_sse"] = std::to_string(res.incumbent_sse);
  if (fresh.train_sse > res.incumbent_sse) {
    // D = I is feasible; the solver only reached it up to its tolerance.
    res.kept_incumbent = true;
    fresh.poly = basis.model.poly;
    fresh.certificates = basis.model.certificates;
    fresh.train_sse = res.incumbent_sse;
    fresh.provenance.extra["kept_incumbent"] = "1";
  }
  res.model = std::move(fresh);
  return res;
}

est::FittedModel refit_dd(const UpdateBasis& basis, const est::Dataset& augmented) {
  return refit(basis, augmented, sos::GramKind::DD).model;
}

est::FittedModel refit_sdd(const UpdateBasis& basis, const est::Dataset& augmented) {
  return refit(basis, augmented, sos::GramKind::SDD).model;
}

std::vector<StreamStep> run_stream(const est::FittedModel& start, const est::Dataset& seen,
                                   const std::vector<est::Dataset>& batches, sos::GramKind kind,
                                   est::FittedModel* final_model) {
  std::vector<StreamStep> steps;
  est::FittedModel current = start;
  est::Dataset all = seen;
  all.box = start.box;
  for (const auto& batch : batches) {
    est::Dataset b = batch;
    b.box = start.box;
    all = all.concat(b);
    const RefitResult res = refit(factorize(current), all, kind);
    steps.push_back({res.incumbent_sse, res.model.train_sse, res.solve_seconds});
    current = res.model;
  }
  if (final_model != nullptr) *final_model = current;
  return steps;
}

}  // namespace shapesos::online

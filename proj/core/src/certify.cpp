#include "shapesos/certify.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include <Eigen/Dense>

#include "shapesos/conic.hpp"
#include "shapesos/errors.hpp"

namespace shapesos::certify {

const Tolerances& defaults() {
  static const Tolerances t;
  return t;
}

int default_density(int n, const Tolerances& tol) {
  if (n <= 3) return tol.density_small;
  if (n <= 6) return tol.density_medium;
  return tol.density_large;
}

std::vector<Eigen::VectorXd> audit_points(const Box& box, int density, int random, std::uint64_t seed) {
  const int n = box.dim();
  if (density < 2) throw ValidationError("grid density must be at least 2");
  std::vector<Eigen::VectorXd> pts;
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  const Eigen::VectorXd step = (box.upper() - box.lower()) / (density - 1);
  while (true) {
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i)
      x[i] = idx[static_cast<std::size_t>(i)] == density - 1 ? box.upper()[i]
                                                             : box.lower()[i] + idx[static_cast<std::size_t>(i)] * step[i];
    pts.push_back(std::move(x));
    int k = 0;
    while (k < n && ++idx[static_cast<std::size_t>(k)] == density) idx[static_cast<std::size_t>(k++)] = 0;
    if (k == n) break;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int s = 0; s < random; ++s) {
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x[i] = box.lower()[i] + U(rng) * (box.upper()[i] - box.lower()[i]);
    pts.push_back(std::move(x));
  }
  return pts;
}

double certificate_scale(const sos::Certificate& cert) {
  double s = 0.0;
  if (cert.matrix_size == 0) {
    if (cert.target.size() > 0) s = cert.target.coeffs().cwiseAbs().maxCoeff();
  } else {
    for (int i = 0; i < cert.matrix_size; ++i)
      for (int j = i; j < cert.matrix_size; ++j) {
        const auto& c = cert.target_matrix(i, j).coeffs();
        if (c.size() > 0) s = std::max(s, c.cwiseAbs().maxCoeff());
      }
  }
  return s;
}

double identity_residual(const sos::Certificate& cert, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const int n = cert.num_vars();
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x[i] = cert.box.lower()[i] + U(rng) * (cert.box.upper()[i] - cert.box.lower()[i]);
    const Eigen::MatrixXd R = cert.target_at(x) - cert.decomposition(x);
    double v;
    if (R.rows() == 1) {
      v = std::abs(R(0, 0));
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (R + R.transpose()), Eigen::EigenvaluesOnly);
      v = es.eigenvalues().cwiseAbs().maxCoeff();
    }
    worst = std::max(worst, v);
  }
  return worst;
}

namespace {

template <class F>
GridResult scan(const std::vector<Eigen::VectorXd>& pts, F&& f) {
  GridResult g;
  g.worst = -INFINITY;
  for (const auto& x : pts) {
    const double v = f(x);
    if (v > g.worst) {
      g.worst = v;
      g.where = x;
    }
  }
  g.points = static_cast<int>(pts.size());
  return g;
}

Eigen::VectorXd eigenvalues(const Eigen::MatrixXd& H) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

}  // namespace

GridResult min_hessian_eigenvalue(const Polynomial& p, const std::vector<Eigen::VectorXd>& points) {
  const poly::PolyMatrix H = poly::hessian(p);
  GridResult g = scan(points, [&](const Eigen::VectorXd& x) { return -eigenvalues(H(x))[0]; });
  g.worst = -g.worst;
  return g;
}

GridResult grid_audit_convexity(const Polynomial& p, const Box& box, int density, int random, std::uint64_t seed) {
  return min_hessian_eigenvalue(p, audit_points(box, density, random, seed));
}

GridResult grid_audit_derivatives(const Polynomial& p, const Box& box, const std::vector<est::Interval>& K,
                                  int density, int random, std::uint64_t seed) {
  if (static_cast<int>(K.size()) != p.num_vars()) throw DimensionMismatch("one interval per coordinate expected");
  const auto grad = poly::gradient(p);
  return scan(audit_points(box, density, random, seed), [&](const Eigen::VectorXd& x) {
    double worst = -INFINITY;
    for (std::size_t i = 0; i < K.size(); ++i) {
      const double g = grad[i](x);
      if (std::isfinite(K[i].lo)) worst = std::max(worst, K[i].lo - g);
      if (std::isfinite(K[i].hi)) worst = std::max(worst, g - K[i].hi);
    }
    return worst;
  });
}

GridResult grid_audit_band(const Polynomial& p, const Box& box, double ell, double L, int density, int random,
                           std::uint64_t seed) {
  const poly::PolyMatrix H = poly::hessian(p);
  return scan(audit_points(box, density, random, seed), [&](const Eigen::VectorXd& x) {
    const Eigen::VectorXd ev = eigenvalues(H(x));
    return std::max(ell - ev[0], ev[ev.size() - 1] - L);
  });
}

GridResult grid_audit_blocks(const Polynomial& p, const Box& box, const std::vector<est::CurvatureBlock>& blocks,
                             int density, int random, std::uint64_t seed) {
  const poly::PolyMatrix H = poly::hessian(p);
  return scan(audit_points(box, density, random, seed), [&](const Eigen::VectorXd& x) {
    const Eigen::MatrixXd Hx = H(x);
    double worst = -INFINITY;
    for (const auto& b : blocks) {
      const auto k = static_cast<Eigen::Index>(b.coords.size());
      Eigen::MatrixXd S(k, k);
      for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) S(i, j) = Hx(b.coords[static_cast<std::size_t>(i)], b.coords[static_cast<std::size_t>(j)]);
      const Eigen::VectorXd ev = eigenvalues(b.sign * S);
      worst = std::max(worst, -ev[0]);
    }
    return worst;
  });
}

void write_report(std::ostream& os, const std::vector<AuditReport>& reports) {
  for (const auto& r : reports) {
    os << "audit " << r.name << ": worst=" << r.worst;
    if (r.where.size() > 0) {
      os << " at (";
      for (Eigen::Index i = 0; i < r.where.size(); ++i) os << (i ? "," : "") << r.where[i];
      os << ")";
    }
    os << " tol=" << r.tolerance << " verdict=" << (r.passed ? "PASS" : "FAIL");
    if (!r.note.empty()) os << " note=" << r.note;
    os << "\n";
  }
}

bool all_passed(const std::vector<AuditReport>& reports) {
  return std::all_of(reports.begin(), reports.end(), [](const AuditReport& r) { return r.passed; });
}

double identity_scale(const est::FittedModel& model, const sos::Certificate& cert) {
  const double coeff_scale = model.poly.size() ? model.poly.coeffs().cwiseAbs().maxCoeff() : 0.0;
  return std::max(coeff_scale, certificate_scale(cert));
}

std::vector<AuditReport> audit_model(const est::FittedModel& model, const Tolerances& tol, std::uint64_t seed) {
  std::vector<AuditReport> out;
  for (const auto& cert : model.certificates) {
    AuditReport r;
    r.name = "identity[" + cert.label + "]";
    r.worst = identity_residual(cert, tol.identity_samples, seed);
    r.tolerance = tol.identity * (1.0 + identity_scale(model, cert));
    r.passed = r.worst <= r.tolerance;
    out.push_back(std::move(r));
  }
  const Polynomial p = model.original_poly();
  const int n = model.num_vars();
  const int density = default_density(n, tol);
  const auto& shape = model.shape;
  auto add = [&](const std::string& name, const GridResult& g, double limit, bool lower_is_bad) {
    AuditReport r;
    r.name = name;
    r.worst = g.worst;
    r.where = g.where;
    r.tolerance = limit;
    r.passed = lower_is_bad ? g.worst >= -limit : g.worst <= limit;
    r.note = std::to_string(g.points) + " points";
    out.push_back(std::move(r));
  };
  switch (shape.kind) {
    case est::ShapeKind::Convex:
      add("convexity.min_eig", grid_audit_convexity(p, model.box, density, tol.random_samples, seed), tol.eigenvalue,
          true);
      break;
    case est::ShapeKind::BoundedDerivatives:
      add("derivatives.violation",
          grid_audit_derivatives(p, model.box, shape.K, density, tol.random_samples, seed), tol.derivative, false);
      break;
    case est::ShapeKind::HessianBand:
      add("band.violation", grid_audit_band(p, model.box, shape.ell, shape.L, density, tol.random_samples, seed),
          tol.eigenvalue, false);
      break;
    case est::ShapeKind::Partial:
      if (!shape.K.empty())
        add("derivatives.violation",
            grid_audit_derivatives(p, model.box, shape.K, density, tol.random_samples, seed), tol.derivative, false);
      if (!shape.blocks.empty())
        add("curvature.violation", grid_audit_blocks(p, model.box, shape.blocks, density, tol.random_samples, seed),
            tol.eigenvalue, false);
      break;
    case est::ShapeKind::None:
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------

double lp_value(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& c) {
  if (A.rows() != b.size() || A.cols() != c.size()) throw DimensionMismatch("LP data dimensions disagree");
  conic::ConicProgram prog;
  const auto x = prog.add_free(static_cast<int>(A.cols()), "x");
  const auto s = prog.add_nonneg(static_cast<int>(A.rows()), "s");
  std::vector<conic::Term> row;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    row.clear();
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      if (A(i, j) != 0.0) row.push_back({prog.var(x, static_cast<int>(j)), A(i, j)});
    row.push_back({prog.var(s, static_cast<int>(i)), 1.0});
    prog.add_equality(row, b[i]);
  }
  for (Eigen::Index j = 0; j < c.size(); ++j) prog.add_objective(prog.var(x, static_cast<int>(j)), c[j]);
  conic::SolverSettings set;
  set.feas_tol = 1e-10;
  set.gap_tol = 1e-10;
  const auto sol = conic::solve(prog, set);
  if (!sol.ok()) return NAN;
  return sol.objective;
}

ValueFunctionReport audit_value_function(int count, std::uint64_t seed, const Tolerances& tol) {
  ValueFunctionReport rep;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N;
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::uniform_int_distribution<int> dim(2, 5);
  for (int k = 0; k < count; ++k) {
    const int n = dim(rng);
    const int extra = dim(rng);
    // Random rows plus a bounding box keep the LP bounded.
    Eigen::MatrixXd A(extra + 2 * n, n);
    for (int i = 0; i < extra; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = N(rng);
    A.bottomRows(2 * n) << Eigen::MatrixXd::Identity(n, n), -Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd x0(n);
    for (int j = 0; j < n; ++j) x0[j] = N(rng);
    auto feasible_rhs = [&]() {
      Eigen::VectorXd b = A * x0;
      for (Eigen::Index i = 0; i < b.size(); ++i) b[i] += 0.1 + U(rng);
      return b;
    };
    auto cost = [&]() {
      Eigen::VectorXd c(n);
      for (int j = 0; j < n; ++j) c[j] = N(rng);
      return c;
    };
    const Eigen::VectorXd b1 = feasible_rhs(), b2 = feasible_rhs();
    const Eigen::VectorXd c1 = cost(), c2 = cost();
    Eigen::VectorXd kick(A.rows());
    for (Eigen::Index i = 0; i < kick.size(); ++i) kick[i] = U(rng);
    const double v11 = lp_value(A, b1, c1);
    const double v21 = lp_value(A, b2, c1);
    const double vm1 = lp_value(A, 0.5 * (b1 + b2), c1);
    const double v12 = lp_value(A, b1, c2);
    const double v1m = lp_value(A, b1, 0.5 * (c1 + c2));
    const double vk = lp_value(A, b1 + kick, c1);
    if (!std::isfinite(v11) || !std::isfinite(v21) || !std::isfinite(vm1) || !std::isfinite(v12) ||
        !std::isfinite(v1m) || !std::isfinite(vk)) {
      ++rep.skipped;
      continue;
    }
    ++rep.instances;
    auto rel = [&](double excess, double scale) { return excess / (1.0 + std::abs(scale)); };
    const double conv = rel(vm1 - 0.5 * (v11 + v21), vm1);
    const double conc = rel(0.5 * (v11 + v12) - v1m, v1m);
    const double mono = rel(vk - v11, v11);
    rep.worst_b_convexity = std::max(rep.worst_b_convexity, conv);
    rep.worst_c_concavity = std::max(rep.worst_c_concavity, conc);
    rep.worst_monotonicity = std::max(rep.worst_monotonicity, mono);
    if (conv > tol.lp || conc > tol.lp || mono > tol.lp) rep.passed = false;
  }
  rep.note =
      "enlarging b in the cone order can only enlarge the feasible set, so the check is v(b + k) <= v(b); "
      "this is nonincreasing in b although the result is usually labelled nondecreasing";
  return rep;
}

void write_report(std::ostream& os, const ValueFunctionReport& r) {
  os << "value_function instances=" << r.instances << " skipped=" << r.skipped
     << " worst_b_convexity=" << r.worst_b_convexity << " worst_c_concavity=" << r.worst_c_concavity
     << " worst_monotonicity=" << r.worst_monotonicity << " verdict=" << (r.passed ? "PASS" : "FAIL") << "\n"
     << "note: " << r.note << "\n";
}

}  // namespace shapesos::certify

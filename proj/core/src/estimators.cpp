#include "shapesos/estimators.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "shapesos/errors.hpp"

namespace shapesos::est {

using conic::BlockId;
using conic::ConicProgram;
using conic::ConicSolution;
using conic::Term;
using conic::VarRef;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double parse_double(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("cannot parse number '" + std::string(s) + "' in " + where);
  return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

Eigen::MatrixXd design(const poly::MonomialBasis& basis, const Eigen::MatrixXd& T) {
  Eigen::MatrixXd Phi(T.rows(), static_cast<Eigen::Index>(basis.size()));
  for (Eigen::Index i = 0; i < T.rows(); ++i) Phi.row(i) = basis.evaluate(T.row(i).transpose()).transpose();
  return Phi;
}

void fill_provenance(Provenance& p, const ConicSolution& sol, std::uint64_t seed) {
  p.created = utc_now();
  p.seed = seed;
  p.backend = sol.backend;
  p.status = conic::to_string(sol.status);
  p.iterations = sol.iterations;
  p.solve_seconds = sol.solve_seconds;
}

Box scaled_box(const Box& box, const Scaling& s) {
  return Box(s.apply(box.lower()), s.apply(box.upper()));
}

}  // namespace

// ---------------------------------------------------------------------------

void Dataset::validate() const {
  if (X.rows() < 1) throw ValidationError("dataset is empty");
  if (Y.size() != X.rows()) throw DimensionMismatch("X and Y row counts differ");
  if (box.dim() != X.cols()) throw DimensionMismatch("box dimension differs from feature count");
  if (!X.allFinite() || !Y.allFinite()) throw ValidationError("dataset contains non-finite values");
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    if (!box.contains(X.row(i).transpose(), 1e-12))
      throw ValidationError("row " + std::to_string(i) + " lies outside the dataset box");
}

Dataset Dataset::subset(const std::vector<int>& rows) const {
  Dataset out;
  out.box = box;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  out.Y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.X.row(static_cast<Eigen::Index>(k)) = X.row(rows[k]);
    out.Y[static_cast<Eigen::Index>(k)] = Y[rows[k]];
  }
  return out;
}

Dataset Dataset::concat(const Dataset& other) const {
  if (other.n() != n()) throw DimensionMismatch("feature counts differ");
  Dataset out;
  out.box = box;
  out.X.resize(X.rows() + other.X.rows(), X.cols());
  out.X << X, other.X;
  out.Y.resize(Y.size() + other.Y.size());
  out.Y << Y, other.Y;
  return out;
}

Box padded_box(const Eigen::MatrixXd& X, double pad) {
  if (X.rows() == 0) throw ValidationError("cannot infer a box from no rows");
  Eigen::VectorXd lo = X.colwise().minCoeff().transpose();
  Eigen::VectorXd hi = X.colwise().maxCoeff().transpose();
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    double range = hi[i] - lo[i];
    if (range <= 0.0) range = std::max(1.0, std::abs(lo[i]));
    lo[i] -= pad * range;
    hi[i] += pad * range;
  }
  return Box(lo, hi);
}

Box read_box(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ValidationError("cannot open box file " + file.string());
  std::vector<double> lo, hi;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    std::vector<double>* dst = key == "lower" ? &lo : key == "upper" ? &hi : nullptr;
    if (dst == nullptr) throw ValidationError("unknown box key '" + key + "' in " + file.string());
    std::string tok;
    while (ls >> tok) dst->push_back(parse_double(tok, file.string()));
  }
  if (lo.empty() || lo.size() != hi.size()) throw ValidationError("box file needs matching lower/upper lines");
  return Box(Eigen::Map<Eigen::VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size())),
             Eigen::Map<Eigen::VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size())));
}

Dataset read_csv(const std::filesystem::path& csv, const std::optional<std::filesystem::path>& box_file) {
  std::ifstream in(csv);
  if (!in) throw ValidationError("cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(csv.string() + " has no header");
  const std::size_t cols = split(line, ',').size();
  if (cols < 2) throw ValidationError(csv.string() + " needs at least one feature and a response column");
  std::vector<double> vals;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto parts = split(line, ',');
    if (parts.size() != cols)
      throw ValidationError(csv.string() + ": row " + std::to_string(rows + 1) + " has " +
                            std::to_string(parts.size()) + " fields, expected " + std::to_string(cols));
    for (auto p : parts) vals.push_back(parse_double(p, csv.string()));
    ++rows;
  }
  if (rows == 0) throw ValidationError(csv.string() + " has no data rows");
  Dataset d;
  const auto n = static_cast<Eigen::Index>(cols - 1);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> M(
      vals.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  d.X = M.leftCols(n);
  d.Y = M.col(n);
  std::filesystem::path sidecar = csv;
  sidecar += ".box";
  if (box_file) {
    d.box = read_box(*box_file);
  } else if (std::filesystem::exists(sidecar)) {
    d.box = read_box(sidecar);
  } else {
    d.box = padded_box(d.X);
  }
  d.validate();
  return d;
}

void write_csv(const std::filesystem::path& csv, const Dataset& data) {
  std::ofstream out(csv);
  if (!out) throw ValidationError("cannot write " + csv.string());
  out.precision(17);
  for (int j = 0; j < data.n(); ++j) out << "x" << (j + 1) << ",";
  out << "y\n";
  for (int i = 0; i < data.m(); ++i) {
    for (int j = 0; j < data.n(); ++j) out << data.X(i, j) << ",";
    out << data.Y[i] << "\n";
  }
}

// ---------------------------------------------------------------------------

const char* to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::None: return "none";
    case ShapeKind::Convex: return "convex";
    case ShapeKind::BoundedDerivatives: return "bounded";
    case ShapeKind::HessianBand: return "band";
    case ShapeKind::Partial: return "partial";
  }
  return "?";
}

ShapeSpec ShapeSpec::convex() {
  ShapeSpec s;
  s.kind = ShapeKind::Convex;
  return s;
}

ShapeSpec ShapeSpec::bounded(std::vector<Interval> K) {
  ShapeSpec s;
  s.kind = ShapeKind::BoundedDerivatives;
  s.K = std::move(K);
  return s;
}

ShapeSpec ShapeSpec::band(double ell, double L) {
  ShapeSpec s;
  s.kind = ShapeKind::HessianBand;
  s.ell = ell;
  s.L = L;
  return s;
}

ShapeSpec ShapeSpec::partial(std::vector<CurvatureBlock> blocks, std::vector<Interval> K) {
  ShapeSpec s;
  s.kind = ShapeKind::Partial;
  s.blocks = std::move(blocks);
  s.K = std::move(K);
  return s;
}

void ShapeSpec::validate(int n) const {
  auto check_K = [&](bool required) {
    if (K.empty() && !required) return;
    if (static_cast<int>(K.size()) != n) throw DimensionMismatch("one derivative interval per coordinate expected");
    for (const auto& k : K) {
      if (std::isnan(k.lo) || std::isnan(k.hi) || k.lo > k.hi) throw ValidationError("derivative bounds need K- <= K+");
      if (k.lo == INFINITY || k.hi == -INFINITY) throw ValidationError("derivative bound interval is empty");
    }
  };
  switch (kind) {
    case ShapeKind::None:
    case ShapeKind::Convex:
      break;
    case ShapeKind::BoundedDerivatives:
      check_K(true);
      break;
    case ShapeKind::HessianBand:
      if (!(std::isfinite(ell) && std::isfinite(L)) || ell > L) throw ValidationError("Hessian band needs ell <= L");
      break;
    case ShapeKind::Partial: {
      check_K(false);
      std::vector<int> seen(static_cast<std::size_t>(n), 0);
      for (const auto& b : blocks) {
        if (b.coords.empty()) throw ValidationError("empty curvature block");
        if (b.sign != 1 && b.sign != -1) throw ValidationError("curvature sign must be +1 or -1");
        for (int c : b.coords) {
          if (c < 0 || c >= n) throw DimensionMismatch("curvature block coordinate out of range");
          if (seen[static_cast<std::size_t>(c)]++) throw ValidationError("curvature blocks must be disjoint");
        }
      }
      break;
    }
  }
}

Scaling Scaling::identity(int n) {
  return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n)};
}

Scaling Scaling::to_unit(const Box& box) { return {box.center(), box.half_width()}; }

Eigen::VectorXd Scaling::apply(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != center.size()) throw DimensionMismatch("point dimension differs from model");
  return (x - center).cwiseQuotient(half_width);
}

Eigen::MatrixXd Scaling::apply_rows(const Eigen::MatrixXd& X) const {
  if (X.cols() != center.size()) throw DimensionMismatch("feature count differs from model");
  return (X.rowwise() - center.transpose()).array().rowwise() / half_width.transpose().array();
}

double FittedModel::operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const { return poly(scaling.apply(x)); }

Polynomial FittedModel::original_poly() const {
  const Eigen::VectorXd inv = scaling.half_width.cwiseInverse();
  return poly.compose_affine(inv, -scaling.center.cwiseProduct(inv));
}

// ---------------------------------------------------------------------------

FittedModel fit_upr(const Dataset& data, int d, const std::optional<Scaling>& scaling) {
  data.validate();
  if (d < 0) throw ValidationError("degree must be nonnegative");
  FittedModel model;
  model.box = data.box;
  model.scaling = scaling ? *scaling : Scaling::to_unit(data.box);
  model.degree = d;
  const auto basis = poly::MonomialBasis::make(data.n(), d);
  const Eigen::MatrixXd Phi = design(*basis, model.scaling.apply_rows(data.X));
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Phi);
  Eigen::VectorXd c = cod.solve(data.Y);
  c += cod.solve(data.Y - Phi * c);  // one refinement step
  model.poly = Polynomial(basis, std::move(c));
  model.train_sse = (data.Y - Phi * model.poly.coeffs()).squaredNorm();
  model.provenance.created = utc_now();
  model.provenance.backend = "cod";
  model.provenance.status = "optimal";
  model.provenance.extra["rank"] = std::to_string(cod.rank());
  return model;
}

FittedModel fit_sose(const Dataset& data, int d, int r, const ShapeSpec& shape, const FitOptions& options) {
  data.validate();
  shape.validate(data.n());
  if (d < 0 || r < 0) throw ValidationError("degree and r must be nonnegative");
  if (shape.kind == ShapeKind::None) return fit_upr(data, d, options.scaling);
  // Affine functions are convex; nothing to certify.
  if (shape.kind == ShapeKind::Convex && d <= 1) {
    FittedModel m = fit_upr(data, d, options.scaling);
    m.shape = shape;
    m.r = r;
    return m;
  }

  const Scaling scaling = resolve_scaling(data.box, options);
  const auto basis = poly::MonomialBasis::make(data.n(), d);
  const Eigen::MatrixXd Phi = design(*basis, scaling.apply_rows(data.X));
  FitOptions opt = options;
  opt.scaling = scaling;
  return fit_shaped_lsq(Phi, data.Y, data.box, d, r, shape, opt);
}

Scaling resolve_scaling(const Box& box, const FitOptions& options) {
  return options.scaling ? *options.scaling : Scaling::to_unit(box);
}

FittedModel fit_shaped_lsq(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, const Box& box, int d, int r,
                           const ShapeSpec& shape, const FitOptions& options) {
  const int n = box.dim();
  shape.validate(n);
  if (d < 0 || r < 0) throw ValidationError("degree and r must be nonnegative");
  const Scaling scaling = resolve_scaling(box, options);
  const Box tbox = scaled_box(box, scaling);
  const Eigen::VectorXd& hw = scaling.half_width;
  const auto basis = poly::MonomialBasis::make(n, d);
  if (A.cols() != static_cast<Eigen::Index>(basis->size()) || A.rows() != y.size())
    throw DimensionMismatch("least-squares design does not match the degree-d basis");
  const Eigen::MatrixXd& Phi = A;

  ConicProgram prog;
  const BlockId theta = prog.add_free(static_cast<int>(basis->size()), "theta");
  std::vector<VarRef> vars;
  for (std::size_t k = 0; k < basis->size(); ++k) vars.push_back(prog.var(theta, static_cast<int>(k)));
  const VarRef t = conic::quad_epigraph(prog, Phi, y, vars, "residual");
  prog.add_objective(t, 1.0);

  const sos::AffinePoly g = sos::AffinePoly::from_vars(basis, vars);
  std::vector<sos::IdentityConstraint> constraints;
  int encoders = 0;
  auto gram_for_next = [&]() {
    sos::GramOptions go = options.gram;
    if (!go.congruence.empty() && encoders > 0)
      throw ValidationError("congruence restriction supports a single shape constraint");
    ++encoders;
    return go;
  };
  auto hess = [&]() { return sos::AffinePolyMatrix::hessian(g); };
  auto add_gradient_bounds = [&]() {
    const double mg = options.derivative_margin;
    if (!(mg >= 0.0) || !std::isfinite(mg)) throw ValidationError("derivative margin must be finite and >= 0");
    for (int i = 0; i < static_cast<int>(shape.K.size()); ++i) {
      const auto& k = shape.K[static_cast<std::size_t>(i)];
      if (k.lo + mg > k.hi - mg) throw ValidationError("derivative margin leaves an empty bound interval");
      const sos::AffinePoly di = g.derivative(i);
      if (std::isfinite(k.lo)) {
        sos::AffinePoly target = di;
        target -= Polynomial::constant(n, (k.lo + options.derivative_margin) * hw[i]);
        constraints.push_back(sos::putinar_encode(target, tbox, r, prog, gram_for_next(), "dlo" + std::to_string(i)));
      }
      if (std::isfinite(k.hi)) {
        sos::AffinePoly target = -di;
        target += Polynomial::constant(n, (k.hi - options.derivative_margin) * hw[i]);
        constraints.push_back(sos::putinar_encode(target, tbox, r, prog, gram_for_next(), "dhi" + std::to_string(i)));
      }
    }
  };
  switch (shape.kind) {
    case ShapeKind::Convex:
      constraints.push_back(sos::scherer_hol_encode(hess(), tbox, r, prog, gram_for_next(), "convex"));
      break;
    case ShapeKind::BoundedDerivatives:
      add_gradient_bounds();
      break;
    case ShapeKind::HessianBand: {
      // ell I <= D^-1 H D^-1 <= L I  with D = diag(hw)
      const Eigen::MatrixXd D2 = hw.cwiseProduct(hw).asDiagonal();
      sos::AffinePolyMatrix lower = hess();
      lower -= sos::AffinePolyMatrix::constant(shape.ell * D2, n);
      sos::AffinePolyMatrix upper = sos::AffinePolyMatrix::constant(shape.L * D2, n);
      upper -= hess();
      constraints.push_back(sos::scherer_hol_encode(lower, tbox, r, prog, gram_for_next(), "hess_lo"));
      constraints.push_back(sos::scherer_hol_encode(upper, tbox, r, prog, gram_for_next(), "hess_hi"));
      break;
    }
    case ShapeKind::Partial: {
      add_gradient_bounds();
      const sos::AffinePolyMatrix H = hess();
      for (const auto& b : shape.blocks) {
        std::string label = (b.sign > 0 ? "convex" : "concave");
        for (int c : b.coords) label += "_" + std::to_string(c);
        if (b.coords.size() == 1) {
          sos::AffinePoly target = H(b.coords[0], b.coords[0]);
          target *= b.sign;
          constraints.push_back(sos::putinar_encode(target, tbox, r, prog, gram_for_next(), label));
        } else {
          sos::AffinePolyMatrix sub = H.submatrix(b.coords);
          sub *= b.sign;
          constraints.push_back(sos::scherer_hol_encode(sub, tbox, r, prog, gram_for_next(), label));
        }
      }
      break;
    }
    case ShapeKind::None:
      break;
  }

  const ConicSolution sol = conic::solve(prog, options.solver);
  if (!sol.ok())
    throw SolverFailed(std::string("shape-constrained fit ended ") + conic::to_string(sol.status) +
                       (sol.message.empty() ? "" : ": " + sol.message));
  FittedModel model;
  model.box = box;
  model.shape = shape;
  model.scaling = scaling;
  model.degree = d;
  model.r = r;
  model.gram_kind = sos::to_string(options.gram.kind);
  model.poly = Polynomial(basis, sol.vector(theta));
  for (const auto& c : constraints) model.certificates.push_back(sos::certificate_extract(sol, c));
  model.train_sse = (y - Phi * model.poly.coeffs()).squaredNorm();
  fill_provenance(model.provenance, sol, options.seed);
  if (options.gram.global) model.provenance.extra["variant"] = "global";
  return model;
}

FittedModel fit_sose_convex(const Dataset& data, int d, int r, const FitOptions& options) {
  return fit_sose(data, d, r, ShapeSpec::convex(), options);
}

FittedModel fit_sose_bounded(const Dataset& data, int d, int r, std::vector<Interval> K, const FitOptions& options) {
  return fit_sose(data, d, r, ShapeSpec::bounded(std::move(K)), options);
}

FittedModel fit_convex_quadratic(const Dataset& data, const FitOptions& options) {
  data.validate();
  const int n = data.n();
  const Scaling scaling = options.scaling ? *options.scaling : Scaling::to_unit(data.box);
  const Eigen::MatrixXd T = scaling.apply_rows(data.X);
  const auto basis = poly::MonomialBasis::make(n, 2);

  // g(t) = c + b^T t + t^T Q t, Q >= 0
  ConicProgram prog;
  const BlockId lin = prog.add_free(n + 1, "affine");
  const BlockId Q = prog.add_psd(n, "Q");
  std::vector<VarRef> vars;
  std::vector<Eigen::VectorXd> cols;
  vars.push_back(prog.var(lin, 0));
  cols.emplace_back(Eigen::VectorXd::Ones(data.m()));
  for (int i = 0; i < n; ++i) {
    vars.push_back(prog.var(lin, i + 1));
    cols.emplace_back(T.col(i));
  }
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      vars.push_back(prog.entry(Q, i, j));
      cols.emplace_back((i == j ? 1.0 : 2.0) * T.col(i).cwiseProduct(T.col(j)));
    }
  Eigen::MatrixXd A(data.m(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) A.col(static_cast<Eigen::Index>(k)) = cols[k];
  prog.add_objective(conic::quad_epigraph(prog, A, data.Y, vars), 1.0);

  const ConicSolution sol = conic::solve(prog, options.solver);
  if (!sol.ok()) throw SolverFailed(std::string("quadratic fit ended ") + conic::to_string(sol.status));
  const Eigen::VectorXd ab = sol.vector(lin);
  const Eigen::MatrixXd Qv = sol.matrix(Q);
  Eigen::VectorXd coeffs(static_cast<Eigen::Index>(basis->size()));
  coeffs.head(n + 1) = ab;
  Eigen::Index k = n + 1;  // grlex degree-2 block: (i, j), i <= j in row order
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) coeffs[k++] = (i == j ? 1.0 : 2.0) * 0.5 * (Qv(i, j) + Qv(j, i));

  FittedModel model;
  model.box = data.box;
  model.shape = ShapeSpec::convex();
  model.scaling = scaling;
  model.degree = 2;
  model.poly = Polynomial(basis, coeffs);
  model.train_sse = (data.Y - design(*basis, T) * coeffs).squaredNorm();
  fill_provenance(model.provenance, sol, options.seed);
  model.provenance.extra["formulation"] = "constant-gram";

  // Hessian 2Q written as a constant Gram over y (x) [1].
  sos::Certificate cert;
  cert.label = "convex";
  cert.matrix_size = n;
  cert.box = scaled_box(data.box, scaling);
  cert.target_matrix = poly::hessian(model.poly);
  cert.grams.push_back(Qv + Qv.transpose());
  cert.multipliers.push_back(Polynomial::constant(n, 1.0));
  cert.half_degrees.push_back(0);
  model.certificates.push_back(std::move(cert));
  return model;
}

// ---------------------------------------------------------------------------

namespace {

double clse_worst_violation(const Dataset& data, const Eigen::VectorXd& theta, const Eigen::MatrixXd& xi) {
  double worst = 0.0;
  for (int i = 0; i < data.m(); ++i)
    for (int j = 0; j < data.m(); ++j)
      if (i != j) worst = std::max(worst, theta[i] + xi.row(i).dot(data.X.row(j) - data.X.row(i)) - theta[j]);
  return worst;
}

// Re-solves the least squares fit with the pairs the interior point method
// left tight held as equalities. Returns false when the result is not usable.
bool polish_clse(const Dataset& data, const Eigen::VectorXd& lambda, Eigen::VectorXd& theta, Eigen::MatrixXd& xi) {
  const int m = data.m();
  const int n = data.n();
  const int nz = m + m * n;
  std::vector<std::pair<int, int>> active;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      const double lam = lambda[i * (m - 1) + (j < i ? j : j - 1)];
      const double slack = theta[j] - theta[i] - xi.row(i).dot(data.X.row(j) - data.X.row(i));
      if (lam > std::max(slack, 0.0)) active.emplace_back(i, j);
    }
  const int na = static_cast<int>(active.size());
  const double reg = 1e-8;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(nz + na * (3 + 2 * n)));
  for (int k = 0; k < m; ++k) trip.emplace_back(k, k, 1.0);
  for (int k = m; k < nz; ++k) trip.emplace_back(k, k, reg);
  for (int a = 0; a < na; ++a) {
    const auto [i, j] = active[static_cast<std::size_t>(a)];
    const int r = nz + a;
    // theta_j - theta_i - xi_i'(X_j - X_i) = 0
    trip.emplace_back(r, j, 1.0);
    trip.emplace_back(j, r, 1.0);
    trip.emplace_back(r, i, -1.0);
    trip.emplace_back(i, r, -1.0);
    for (int c = 0; c < n; ++c) {
      const double v = -(data.X(j, c) - data.X(i, c));
      if (v == 0.0) continue;
      trip.emplace_back(r, m + i * n + c, v);
      trip.emplace_back(m + i * n + c, r, v);
    }
    trip.emplace_back(r, r, -reg);
  }
  Eigen::SparseMatrix<double> K(nz + na, nz + na);
  K.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(K);
  if (ldlt.info() != Eigen::Success) return false;
  // xi is not unique, keep it close to the interior point one. Refinement
  // drops only the regularization of the constraint rows.
  Eigen::SparseMatrix<double> K0 = K;
  for (int k = nz; k < nz + na; ++k) K0.coeffRef(k, k) = 0.0;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nz + na);
  rhs.head(m) = data.Y;
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < n; ++c) rhs[m + i * n + c] = reg * xi(i, c);
  Eigen::VectorXd z = ldlt.solve(rhs);
  for (int it = 0; it < 5; ++it) z += ldlt.solve(rhs - K0 * z);
  if (!z.allFinite()) return false;

  Eigen::VectorXd th = z.head(m);
  Eigen::MatrixXd x(m, n);
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < n; ++c) x(i, c) = z[m + i * n + c];
  const double scale = 1.0 + data.Y.cwiseAbs().maxCoeff();
  if (clse_worst_violation(data, th, x) > 1e-10 * scale) return false;
  if ((data.Y - th).squaredNorm() > (data.Y - theta).squaredNorm() + 1e-12 * scale * scale) return false;
  theta = std::move(th);
  xi = std::move(x);
  return true;
}

}  // namespace

ClseModel fit_clse(const Dataset& data, bool allow_large, const conic::SolverSettings& settings) {
  data.validate();
  const int m = data.m();
  const int n = data.n();
  if (m < 2) throw ValidationError("CLSE needs at least two points");
  if (m > kClseMaxPoints && !allow_large)
    throw ValidationError("CLSE with m = " + std::to_string(m) + " exceeds the default limit of " +
                          std::to_string(kClseMaxPoints) + " points");
  // Solved through the dual, which has no free variables:
  //   min ||Y + D lambda||  over lambda_ij >= 0 (i != j)
  //   s.t. sum_j lambda_ij (X_j - X_i) = 0 for every i,
  // with (D lambda)_k = sum_i lambda_ik - sum_j lambda_kj. The fitted values
  // are theta = Y + D lambda and the subgradients are t * nu_i, nu_i being the
  // multipliers of the rows of point i.
  ConicProgram prog;
  const BlockId lam = prog.add_nonneg(m * (m - 1), "lambda");
  const BlockId cone = prog.add_soc(m + 1, "norm");
  auto pair = [m](int i, int j) { return i * (m - 1) + (j < i ? j : j - 1); };
  std::vector<Term> row;
  for (int k = 0; k < m; ++k) {
    row.clear();
    row.push_back({prog.var(cone, k + 1), 1.0});
    for (int i = 0; i < m; ++i)
      if (i != k) {
        row.push_back({prog.var(lam, pair(i, k)), -1.0});
        row.push_back({prog.var(lam, pair(k, i)), 1.0});
      }
    prog.add_equality(row, data.Y[k], "fitted");
  }
  std::vector<int> xi_rows(static_cast<std::size_t>(m * n));
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < n; ++c) {
      row.clear();
      for (int j = 0; j < m; ++j)
        if (j != i && data.X(j, c) != data.X(i, c)) row.push_back({prog.var(lam, pair(i, j)), data.X(j, c) - data.X(i, c)});
      xi_rows[static_cast<std::size_t>(i * n + c)] = prog.add_equality(row, 0.0, "subgradient");
    }
  prog.add_objective(prog.var(cone, 0), 1.0);

  ClseModel model;
  model.solution = conic::solve(prog, settings);
  if (!model.solution.ok()) throw SolverFailed(std::string("CLSE QP ended ") + conic::to_string(model.solution.status));
  const Eigen::VectorXd& u = model.solution.values[static_cast<std::size_t>(cone.index)];
  model.theta = u.tail(m);
  const double t = u[0];
  model.xi.resize(m, n);
  for (int i = 0; i < m; ++i)
    for (int c = 0; c < n; ++c) model.xi(i, c) = t * model.solution.duals[xi_rows[static_cast<std::size_t>(i * n + c)]];
  polish_clse(data, model.solution.values[static_cast<std::size_t>(lam.index)], model.theta, model.xi);
  model.X = data.X;
  model.train_sse = (data.Y - model.theta).squaredNorm();
  model.solution.values.clear();
  return model;
}

double predict_clse(const ClseModel& model, const Eigen::Ref<const Eigen::VectorXd>& x, bool slack) {
  const auto m = static_cast<int>(model.X.rows());
  const auto n = static_cast<int>(model.X.cols());
  if (x.size() != n) throw DimensionMismatch("point dimension differs from CLSE model");
  ConicProgram prog;
  const BlockId lam = prog.add_nonneg(m, "lambda");
  BlockId sp, sn;
  if (slack) {
    sp = prog.add_nonneg(n, "s+");
    sn = prog.add_nonneg(n, "s-");
  }
  std::vector<Term> row;
  for (int c = 0; c < n; ++c) {
    row.clear();
    for (int i = 0; i < m; ++i) row.push_back({prog.var(lam, i), model.X(i, c)});
    if (slack) {
      row.push_back({prog.var(sp, c), 1.0});
      row.push_back({prog.var(sn, c), -1.0});
    }
    prog.add_equality(row, x[c], "loc");
  }
  row.clear();
  for (int i = 0; i < m; ++i) row.push_back({prog.var(lam, i), 1.0});
  prog.add_equality(row, 1.0, "simplex");
  for (int i = 0; i < m; ++i) prog.add_objective(prog.var(lam, i), model.theta[i]);
  if (slack) {
    const double penalty = 10.0 * (1.0 + (model.xi.size() ? model.xi.cwiseAbs().maxCoeff() : 0.0));
    for (int c = 0; c < n; ++c) {
      prog.add_objective(prog.var(sp, c), penalty);
      prog.add_objective(prog.var(sn, c), penalty);
    }
  }
  conic::SolverSettings s;
  s.feas_tol = 1e-9;
  s.gap_tol = 1e-9;
  const ConicSolution sol = conic::solve(prog, s);
  if (sol.status == conic::SolveStatus::Infeasible) throw OutsideHull("point lies outside the convex hull of the training features");
  if (!sol.ok()) throw SolverFailed(std::string("CLSE prediction LP ended ") + conic::to_string(sol.status));
  return sol.vector(lam).dot(model.theta);
}

double predict(const FittedModel& model, const Eigen::Ref<const Eigen::VectorXd>& x, bool* outside_box) {
  if (x.size() != model.num_vars()) throw DimensionMismatch("point dimension differs from model");
  if (outside_box != nullptr) *outside_box = !model.box.contains(x, 1e-12);
  return model(x);
}

Eigen::VectorXd predict_rows(const FittedModel& model, const Eigen::MatrixXd& X) {
  const Eigen::MatrixXd T = model.scaling.apply_rows(X);
  return design(*model.poly.basis(), T) * model.poly.coeffs();
}

double sse(const FittedModel& model, const Dataset& data) {
  return (data.Y - predict_rows(model, data.X)).squaredNorm();
}

double rmse(const FittedModel& model, const Dataset& data) {
  if (data.m() == 0) return 0.0;
  return std::sqrt(sse(model, data) / data.m());
}

double rmse_clse(const ClseModel& model, const Dataset& data, bool slack) {
  if (data.m() == 0) return 0.0;
  double acc = 0.0;
  for (int i = 0; i < data.m(); ++i) {
    const double e = data.Y[i] - predict_clse(model, data.X.row(i).transpose(), slack);
    acc += e * e;
  }
  return std::sqrt(acc / data.m());
}

}  // namespace shapesos::est

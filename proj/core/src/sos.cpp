#include "shapesos/sos.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "shapesos/errors.hpp"

namespace shapesos::sos {

using poly::BasisPtr;
using poly::MonomialBasis;
using poly::Polynomial;

double AffineExpr::evaluate(const ConicSolution& sol) const {
  double v = constant;
  for (const auto& t : terms) v += t.coef * sol.value(t.var);
  return v;
}

AffineExpr& AffineExpr::operator+=(const AffineExpr& o) {
  constant += o.constant;
  terms.insert(terms.end(), o.terms.begin(), o.terms.end());
  return *this;
}

AffineExpr& AffineExpr::operator*=(double s) {
  constant *= s;
  for (auto& t : terms) t.coef *= s;
  return *this;
}

namespace {

bool is_empty(const AffineExpr& e) { return e.constant == 0.0 && e.terms.empty(); }

int structural_degree(const AffinePoly& p) {
  int deg = 0;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (!is_empty(p.coeff(k))) deg = std::max(deg, p.basis()->total_degree(k));
  return deg;
}

}  // namespace

AffinePoly::AffinePoly(int num_vars, int max_degree)
    : basis_(MonomialBasis::make(num_vars, max_degree)), coeffs_(basis_->size()) {}

AffinePoly AffinePoly::constant(const Polynomial& p) {
  AffinePoly a(p.num_vars(), p.basis_degree());
  for (std::size_t k = 0; k < p.size(); ++k) a.coeffs_[k].constant = p.coeffs()[static_cast<Eigen::Index>(k)];
  return a;
}

AffinePoly AffinePoly::from_vars(BasisPtr basis, std::span<const VarRef> vars) {
  if (vars.size() != basis->size()) throw DimensionMismatch("one variable per basis monomial expected");
  AffinePoly a(basis->num_vars(), basis->max_degree());
  for (std::size_t k = 0; k < vars.size(); ++k) a.coeffs_[k].terms.push_back(Term{vars[k], 1.0});
  return a;
}

AffinePoly AffinePoly::with_degree(int max_degree) const {
  if (max_degree == basis_degree()) return *this;
  if (max_degree < structural_degree(*this)) throw DegreeMismatch("cannot trim a nonzero affine coefficient");
  AffinePoly a(num_vars(), max_degree);
  const std::size_t keep = std::min(a.size(), size());
  for (std::size_t k = 0; k < keep; ++k) a.coeffs_[k] = coeffs_[k];
  return a;
}

AffinePoly AffinePoly::derivative(int var) const {
  if (var < 0 || var >= num_vars()) throw DimensionMismatch("derivative variable out of range");
  AffinePoly out(num_vars(), std::max(0, basis_degree() - 1));
  poly::Exponent e;
  for (std::size_t k = 0; k < size(); ++k) {
    const auto& ek = (*basis_)[k];
    if (ek[static_cast<std::size_t>(var)] == 0 || is_empty(coeffs_[k])) continue;
    e = ek;
    e[static_cast<std::size_t>(var)] -= 1;
    AffineExpr term = coeffs_[k];
    term *= ek[static_cast<std::size_t>(var)];
    out.coeffs_[out.basis_->index_of(e)] += term;
  }
  return out;
}

AffinePoly& AffinePoly::operator+=(const AffinePoly& o) {
  if (o.num_vars() != num_vars()) throw DimensionMismatch("adding affine polynomials in different variables");
  if (o.basis_degree() > basis_degree()) *this = with_degree(o.basis_degree());
  for (std::size_t k = 0; k < o.size(); ++k) coeffs_[k] += o.coeffs_[k];
  return *this;
}

AffinePoly& AffinePoly::operator-=(const AffinePoly& o) {
  AffinePoly neg = o;
  neg *= -1.0;
  return *this += neg;
}

AffinePoly& AffinePoly::operator+=(const Polynomial& p) { return *this += AffinePoly::constant(p); }
AffinePoly& AffinePoly::operator-=(const Polynomial& p) { return *this -= AffinePoly::constant(p); }

AffinePoly& AffinePoly::operator*=(double s) {
  for (auto& c : coeffs_) c *= s;
  return *this;
}

Polynomial AffinePoly::evaluate(const ConicSolution& sol) const {
  Eigen::VectorXd c(static_cast<Eigen::Index>(size()));
  for (std::size_t k = 0; k < size(); ++k) c[static_cast<Eigen::Index>(k)] = coeffs_[k].evaluate(sol);
  return Polynomial(basis_, std::move(c));
}

// ---------------------------------------------------------------------------

AffinePolyMatrix::AffinePolyMatrix(int size, int num_vars, int max_degree) : size_(size) {
  entries_.assign(static_cast<std::size_t>(size * (size + 1) / 2), AffinePoly(num_vars, max_degree));
}

std::size_t AffinePolyMatrix::index(int i, int j) const {
  if (i < 0 || j < 0 || i >= size_ || j >= size_) throw DimensionMismatch("matrix index out of range");
  if (i > j) std::swap(i, j);
  return static_cast<std::size_t>(i * size_ - i * (i - 1) / 2 + (j - i));
}

int AffinePolyMatrix::basis_degree() const {
  int d = 0;
  for (const auto& e : entries_) d = std::max(d, e.basis_degree());
  return d;
}

AffinePolyMatrix AffinePolyMatrix::hessian(const AffinePoly& p) {
  const int n = p.num_vars();
  AffinePolyMatrix h(n, n, std::max(0, p.basis_degree() - 2));
  for (int i = 0; i < n; ++i) {
    const AffinePoly di = p.derivative(i);
    for (int j = i; j < n; ++j) h.set(i, j, di.derivative(j));
  }
  return h;
}

AffinePolyMatrix AffinePolyMatrix::constant(const Eigen::MatrixXd& m, int num_vars) {
  const auto t = static_cast<int>(m.rows());
  AffinePolyMatrix out(t, num_vars, 0);
  for (int i = 0; i < t; ++i)
    for (int j = i; j < t; ++j) out.set(i, j, AffinePoly::constant(Polynomial::constant(num_vars, m(i, j))));
  return out;
}

AffinePolyMatrix AffinePolyMatrix::submatrix(std::span<const int> idx) const {
  const auto t = static_cast<int>(idx.size());
  AffinePolyMatrix out(t, num_vars(), 0);
  for (int i = 0; i < t; ++i)
    for (int j = i; j < t; ++j) out.set(i, j, (*this)(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]));
  return out;
}

AffinePolyMatrix& AffinePolyMatrix::operator+=(const AffinePolyMatrix& o) {
  if (o.size_ != size_) throw DimensionMismatch("matrix sizes differ");
  for (std::size_t k = 0; k < entries_.size(); ++k) entries_[k] += o.entries_[k];
  return *this;
}

AffinePolyMatrix& AffinePolyMatrix::operator-=(const AffinePolyMatrix& o) {
  if (o.size_ != size_) throw DimensionMismatch("matrix sizes differ");
  for (std::size_t k = 0; k < entries_.size(); ++k) entries_[k] -= o.entries_[k];
  return *this;
}

AffinePolyMatrix& AffinePolyMatrix::operator*=(double s) {
  for (auto& e : entries_) e *= s;
  return *this;
}

poly::PolyMatrix AffinePolyMatrix::evaluate(const ConicSolution& sol) const {
  poly::PolyMatrix out(size_, num_vars(), basis_degree());
  for (int i = 0; i < size_; ++i)
    for (int j = i; j < size_; ++j) out.set(i, j, (*this)(i, j).evaluate(sol));
  return out;
}

// ---------------------------------------------------------------------------

const char* to_string(GramKind kind) {
  switch (kind) {
    case GramKind::PSD: return "psd";
    case GramKind::DD: return "dd";
    case GramKind::SDD: return "sdd";
  }
  return "?";
}

int GramBlock::size() const {
  const auto nz = static_cast<int>(z->size());
  return y_dim == 0 ? nz : y_dim * nz;
}

Eigen::MatrixXd GramBlock::gram(const ConicSolution& sol) const {
  const int N = size();
  if (kind == GramKind::PSD) {
    Eigen::MatrixXd Q = sol.matrix(psd);
    return 0.5 * (Q + Q.transpose());
  }
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(N, N);
  for (const auto& g : generators) {
    const double x = sol.value(g.var);
    Q += 0.5 * x * (g.u1 * g.u2.transpose() + g.u2 * g.u1.transpose());
  }
  return Q;
}

int balanced_half_degree(int target_degree, int r) {
  if (r < 0) throw ValidationError("multiplier half-degree r must be nonnegative");
  if (2 * r + 2 < target_degree)
    throw DegreeMismatch("2r+2 = " + std::to_string(2 * r + 2) + " is below the target degree " +
                         std::to_string(target_degree));
  return std::max(r + 1, (target_degree + 1) / 2);
}

namespace {

struct Weighted {
  double w;
  Eigen::VectorXd a, b;
};

// Creates the program variables of one Gram block.
void parametrize(GramBlock& blk, GramKind kind, const Eigen::MatrixXd* U, ConicProgram& program,
                 const std::string& label) {
  const int N = blk.size();
  blk.kind = kind;
  if (kind == GramKind::PSD) {
    if (U != nullptr) throw ValidationError("congruence parametrization requires DD or SDD Gram kind");
    blk.psd = program.add_psd(N, label);
    return;
  }
  Eigen::MatrixXd Ui = U != nullptr ? *U : Eigen::MatrixXd::Identity(N, N);
  if (Ui.rows() != N || Ui.cols() != N) throw DimensionMismatch("congruence matrix size does not match Gram block");
  auto col = [&](int i) -> Eigen::VectorXd { return Ui.col(i); };
  if (kind == GramKind::DD || N == 1) {
    // D_ii = d_i + sum_j (P_ij + N_ij), D_ij = P_ij - N_ij
    const conic::BlockId diag = program.add_nonneg(N, label + ".diag");
    for (int i = 0; i < N; ++i) blk.generators.push_back({program.var(diag, i), col(i), col(i)});
    const int pairs = N * (N - 1) / 2;
    if (pairs > 0) {
      const conic::BlockId pos = program.add_nonneg(pairs, label + ".pos");
      const conic::BlockId neg = program.add_nonneg(pairs, label + ".neg");
      int k = 0;
      for (int i = 0; i < N; ++i)
        for (int j = i + 1; j < N; ++j, ++k) {
          const Eigen::VectorXd p = col(i) + col(j);
          const Eigen::VectorXd m = col(i) - col(j);
          blk.generators.push_back({program.var(pos, k), p, p});
          blk.generators.push_back({program.var(neg, k), m, m});
        }
    }
    return;
  }
  // SDD: one 2x2 PSD block per pair written as (t, u, v) in a 3-dim SOC,
  // [[(t+v)/2, u/2], [u/2, (t-v)/2]].
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j) {
      const conic::BlockId c = program.add_soc(3, label + ".sdd");
      const Eigen::VectorXd ui = col(i);
      const Eigen::VectorXd uj = col(j);
      // t: (ui ui' + uj uj') / 2 ; v: (ui ui' - uj uj') / 2 ; u: (ui uj' + uj ui') / 2
      // Each generator stores a single symmetric outer product, so t and v
      // are split across two generators sharing the variable.
      blk.generators.push_back({program.var(c, 0), 0.5 * ui, ui});
      blk.generators.push_back({program.var(c, 0), 0.5 * uj, uj});
      blk.generators.push_back({program.var(c, 2), 0.5 * ui, ui});
      blk.generators.push_back({program.var(c, 2), -0.5 * uj, uj});
      blk.generators.push_back({program.var(c, 1), ui, uj});
    }
}

struct Encoding {
  int num_vars;
  int match_degree;
  int pairs;  // 1 for scalar, t(t+1)/2 for matrices
  std::size_t monomials;
  std::vector<std::vector<Term>> rows;
  std::vector<double> rhs;

  int pair_index(int k, int l, int t) const { return k * t - k * (k - 1) / 2 + (l - k); }
};

// Adds Gram contributions of one block to the row lists.
void add_block_terms(Encoding& enc, const GramBlock& blk, int t) {
  const auto& z = *blk.z;
  const int nz = static_cast<int>(z.size());
  const int N = blk.size();
  const int ny = blk.y_dim == 0 ? 1 : blk.y_dim;
  const auto& mb = *blk.multiplier.basis();
  std::vector<std::pair<std::size_t, double>> mult;
  for (std::size_t k = 0; k < mb.size(); ++k) {
    const double c = blk.multiplier.coeffs()[static_cast<Eigen::Index>(k)];
    if (c != 0.0) mult.emplace_back(k, c);
  }
  // Restricted blocks accumulate (P, Q, coef) per row first.
  struct Hit {
    int p, q;
    double c;
  };
  std::vector<std::vector<Hit>> hits;
  if (blk.kind != GramKind::PSD) hits.resize(enc.rows.size());
  poly::Exponent gamma(static_cast<std::size_t>(enc.num_vars));
  for (int P = 0; P < N; ++P) {
    const int k = P / nz;
    const int a = P % nz;
    for (int Q = P; Q < N; ++Q) {
      const int l = Q / nz;
      const int b = Q % nz;
      double base;
      if (k == l) {
        base = a == b ? 1.0 : 2.0;
      } else {
        base = 1.0;
      }
      const int pair = ny == 1 ? 0 : enc.pair_index(k, l, t);
      for (const auto& [mk, mc] : mult) {
        for (int v = 0; v < enc.num_vars; ++v)
          gamma[static_cast<std::size_t>(v)] =
              z[static_cast<std::size_t>(a)][static_cast<std::size_t>(v)] + z[static_cast<std::size_t>(b)][static_cast<std::size_t>(v)] + mb[mk][static_cast<std::size_t>(v)];
        const std::size_t g = MonomialBasis::rank(gamma);
        if (g >= enc.monomials) throw DegreeMismatch("multiplier product exceeds the matched degree");
        const std::size_t row = static_cast<std::size_t>(pair) * enc.monomials + g;
        const double coef = base * mc;
        if (blk.kind == GramKind::PSD) {
          enc.rows[row].push_back(Term{VarRef{blk.psd.index, P, Q}, coef});
        } else {
          hits[row].push_back(Hit{P, Q, coef});
        }
      }
    }
  }
  if (blk.kind == GramKind::PSD) return;
  for (std::size_t row = 0; row < hits.size(); ++row) {
    if (hits[row].empty()) continue;
    // Coefficient of a generator: sum over hits of coef * F(P, Q).
    std::vector<std::pair<int, double>> merged;
    for (std::size_t gi = 0; gi < blk.generators.size(); ++gi) {
      const auto& g = blk.generators[gi];
      double acc = 0.0;
      for (const auto& h : hits[row]) acc += h.c * 0.5 * (g.u1[h.p] * g.u2[h.q] + g.u2[h.p] * g.u1[h.q]);
      if (acc != 0.0) enc.rows[row].push_back(Term{g.var, acc});
    }
  }
}

IdentityConstraint encode(IdentityConstraint ic, ConicProgram& program, const GramOptions& options,
                          int target_degree, int t) {
  const int n = ic.box.dim();
  const int r = ic.r;
  int half0;
  if (options.global) {
    half0 = (target_degree + 1) / 2;
  } else {
    half0 = balanced_half_degree(target_degree, r);
  }
  ic.match_degree = 2 * half0;
  const std::vector<Polynomial> g = poly::box_polys(ic.box);
  const std::size_t nblocks = options.global ? 1 : static_cast<std::size_t>(n) + 1;
  if (!options.congruence.empty() && options.congruence.size() != nblocks)
    throw DimensionMismatch("one congruence matrix per Gram block expected");
  for (std::size_t bi = 0; bi < nblocks; ++bi) {
    GramBlock blk;
    const int half = bi == 0 ? half0 : r;
    blk.z = MonomialBasis::make(n, half);
    blk.y_dim = t;
    blk.multiplier = bi == 0 ? Polynomial::constant(n, 1.0) : g[bi - 1];
    const Eigen::MatrixXd* U = options.congruence.empty() ? nullptr : &options.congruence[bi];
    parametrize(blk, options.kind, U, program, ic.label + (bi == 0 ? ".s0" : ".s" + std::to_string(bi)));
    ic.blocks.push_back(std::move(blk));
  }
  Encoding enc;
  enc.num_vars = n;
  enc.match_degree = ic.match_degree;
  enc.pairs = t == 0 ? 1 : t * (t + 1) / 2;
  enc.monomials = MonomialBasis::count(n, ic.match_degree);
  enc.rows.resize(static_cast<std::size_t>(enc.pairs) * enc.monomials);
  enc.rhs.assign(enc.rows.size(), 0.0);
  for (const auto& blk : ic.blocks) add_block_terms(enc, blk, t);
  // Subtract the target: gram terms - target vars = target constant.
  auto add_target = [&](const AffinePoly& p, int pair) {
    for (std::size_t k = 0; k < p.size(); ++k) {
      const AffineExpr& e = p.coeff(k);
      if (is_empty(e)) continue;
      const std::size_t row = static_cast<std::size_t>(pair) * enc.monomials + MonomialBasis::rank((*p.basis())[k]);
      for (const auto& term : e.terms) enc.rows[row].push_back(Term{term.var, -term.coef});
      enc.rhs[row] += e.constant;
    }
  };
  if (t == 0) {
    add_target(ic.target, 0);
  } else {
    for (int k = 0; k < t; ++k)
      for (int l = k; l < t; ++l) add_target(ic.target_matrix(k, l), enc.pair_index(k, l, t));
  }
  ic.first_row = program.num_rows();
  for (std::size_t row = 0; row < enc.rows.size(); ++row)
    program.add_equality(enc.rows[row], enc.rhs[row], ic.label + ".match");
  ic.num_rows = static_cast<int>(enc.rows.size());
  return ic;
}

}  // namespace

IdentityConstraint putinar_encode(const AffinePoly& target, const poly::Box& box, int r, ConicProgram& program,
                                  const GramOptions& options, const std::string& label) {
  if (target.num_vars() != box.dim()) throw DimensionMismatch("target and box dimensions differ");
  IdentityConstraint ic;
  ic.label = label;
  ic.matrix_size = 0;
  ic.target = target;
  ic.box = box;
  ic.r = r;
  return encode(std::move(ic), program, options, structural_degree(target), 0);
}

IdentityConstraint scherer_hol_encode(const AffinePolyMatrix& target, const poly::Box& box, int r,
                                      ConicProgram& program, const GramOptions& options, const std::string& label) {
  if (target.size() < 1) throw DimensionMismatch("empty target matrix");
  if (target.num_vars() != box.dim()) throw DimensionMismatch("target and box dimensions differ");
  int deg = 0;
  for (int i = 0; i < target.size(); ++i)
    for (int j = i; j < target.size(); ++j) deg = std::max(deg, structural_degree(target(i, j)));
  IdentityConstraint ic;
  ic.label = label;
  ic.matrix_size = target.size();
  ic.target_matrix = target;
  ic.box = box;
  ic.r = r;
  return encode(std::move(ic), program, options, deg, target.size());
}

namespace {

// Entry (k, l) of Z' Q Z as a polynomial, Z = I_t (x) z.
Polynomial gram_entry(const MonomialBasis& zb, const Eigen::MatrixXd& Q, int k, int l) {
  const int n = zb.num_vars();
  const auto nz = static_cast<Eigen::Index>(zb.size());
  Polynomial out(n, 2 * zb.max_degree());
  const auto& ob = *out.basis();
  poly::Exponent e(static_cast<std::size_t>(n));
  for (Eigen::Index a = 0; a < nz; ++a)
    for (Eigen::Index b = 0; b < nz; ++b) {
      const double q = Q(k * nz + a, l * nz + b);
      if (q == 0.0) continue;
      for (int v = 0; v < n; ++v) e[v] = zb[a][v] + zb[b][v];
      out.coeffs()[static_cast<Eigen::Index>(ob.index_of(e))] += q;
    }
  return out;
}

// The solver meets the coefficient equations only to its tolerance. Moves the
// leftover into the constant-multiplier Gram so the identity holds to rounding,
// unless that would push the Gram out of the PSD cone.
void close_identity(Certificate& cert) {
  int s0 = -1;
  for (std::size_t i = 0; i < cert.grams.size(); ++i) {
    const auto& m = cert.multipliers[i];
    if (m.degree() == 0 && m.size() > 0 && m.coeffs()[0] == 1.0 && cert.grams[i].rows() > 0 &&
        (s0 < 0 || cert.half_degrees[i] > cert.half_degrees[static_cast<std::size_t>(s0)]))
      s0 = static_cast<int>(i);
  }
  if (s0 < 0) return;
  const int n = cert.num_vars();
  const int t = cert.matrix_size == 0 ? 1 : cert.matrix_size;
  const auto zb0 = MonomialBasis::make(n, cert.half_degrees[static_cast<std::size_t>(s0)]);
  const auto nz = static_cast<Eigen::Index>(zb0->size());
  // pairs (a, b) of the s_0 basis by the exponent of z_a z_b
  const auto prod = MonomialBasis::make(n, 2 * zb0->max_degree());
  std::vector<std::vector<std::pair<Eigen::Index, Eigen::Index>>> pairs(prod->size());
  poly::Exponent e(static_cast<std::size_t>(n));
  for (Eigen::Index a = 0; a < nz; ++a)
    for (Eigen::Index b = 0; b < nz; ++b) {
      for (int v = 0; v < n; ++v) e[v] = (*zb0)[a][v] + (*zb0)[b][v];
      pairs[prod->index_of(e)].emplace_back(a, b);
    }

  // Correction of the s_0 Gram that zeroes the coefficient residual, false
  // when some residual monomial is outside its reach
  auto correction = [&](Eigen::MatrixXd& dQ, double& size) {
    dQ.setZero(t * nz, t * nz);
    size = 0.0;
    for (int k = 0; k < t; ++k)
      for (int l = k; l < t; ++l) {
        Polynomial r = cert.matrix_size == 0 ? cert.target : cert.target_matrix(k, l);
        for (std::size_t i = 0; i < cert.grams.size(); ++i) {
          if (cert.grams[i].rows() == 0) continue;
          const auto zb = MonomialBasis::make(n, cert.half_degrees[i]);
          r -= cert.multipliers[i] * gram_entry(*zb, cert.grams[i], k, l);
        }
        const auto& rb = *r.basis();
        for (std::size_t c = 0; c < r.size(); ++c) {
          const double v = r.coeffs()[static_cast<Eigen::Index>(c)];
          if (v == 0.0) continue;
          size = std::max(size, std::abs(v));
          if (rb.total_degree(c) > prod->max_degree()) return false;
          const auto& ps = pairs[prod->index_of(rb[c])];
          if (ps.empty()) return false;
          const double share = v / static_cast<double>(ps.size());
          for (const auto& [a, b] : ps) {
            dQ(k * nz + a, l * nz + b) += share;
            if (k != l) dQ(l * nz + b, k * nz + a) += share;
          }
        }
      }
    return true;
  };

  Eigen::MatrixXd dQ;
  double size = 0.0;
  if (!correction(dQ, size) || size == 0.0) return;
  Eigen::MatrixXd Q = cert.grams[static_cast<std::size_t>(s0)] + dQ;
  Q = 0.5 * (Q + Q.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q, Eigen::EigenvaluesOnly);
  if (es.eigenvalues()[0] < -kGramPsdTolerance * (1.0 + std::abs(Q.trace()))) return;
  cert.grams[static_cast<std::size_t>(s0)] = std::move(Q);
}

}  // namespace

Certificate certificate_extract(const ConicSolution& solution, const IdentityConstraint& constraint) {
  if (!solution.ok())
    throw SolveNotOptimal(std::string("no certificate: solve ended ") + conic::to_string(solution.status));
  Certificate cert;
  cert.label = constraint.label;
  cert.matrix_size = constraint.matrix_size;
  cert.box = constraint.box;
  if (constraint.matrix_size == 0) {
    cert.target = constraint.target.evaluate(solution);
  } else {
    cert.target_matrix = constraint.target_matrix.evaluate(solution);
  }
  for (const auto& blk : constraint.blocks) {
    Eigen::MatrixXd Q = blk.gram(solution);
    if (Q.rows() > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q, Eigen::EigenvaluesOnly);
      const double tol = kGramPsdTolerance * (1.0 + std::abs(Q.trace()));
      if (es.eigenvalues()[0] < -tol)
        throw SolveNotOptimal("Gram block of '" + constraint.label + "' has eigenvalue " +
                              std::to_string(es.eigenvalues()[0]));
    }
    cert.grams.push_back(std::move(Q));
    cert.multipliers.push_back(blk.multiplier);
    cert.half_degrees.push_back(blk.z->max_degree());
  }
  close_identity(cert);
  return cert;
}

Eigen::MatrixXd Certificate::decomposition(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const int t = matrix_size == 0 ? 1 : matrix_size;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(t, t);
  for (std::size_t i = 0; i < grams.size(); ++i) {
    const auto zb = MonomialBasis::make(num_vars(), half_degrees[i]);
    const Eigen::VectorXd z = zb->evaluate(x);
    const auto nz = z.size();
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(t * nz, t);
    for (int k = 0; k < t; ++k) Z.block(k * nz, k, nz, 1) = z;
    acc += multipliers[i](x) * (Z.transpose() * grams[i] * Z);
  }
  return acc;
}

Eigen::MatrixXd Certificate::target_at(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (matrix_size == 0) return Eigen::MatrixXd::Constant(1, 1, target(x));
  return target_matrix(x);
}

double Certificate::min_gram_eigenvalue() const {
  double mn = INFINITY;
  for (const auto& Q : grams) {
    if (Q.rows() == 0) continue;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q, Eigen::EigenvaluesOnly);
    mn = std::min(mn, es.eigenvalues()[0]);
  }
  return mn;
}

}  // namespace shapesos::sos

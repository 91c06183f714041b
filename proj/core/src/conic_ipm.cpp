// Homogeneous self-dual interior-point method with Nesterov-Todd scaling and
// Mehrotra predictor-corrector steps.
//
// Internal layout: free coordinates xF, then the conic part xC ordered as
// nonnegative coordinates, second-order blocks, PSD blocks (full column-major
// storage). Newton systems are reduced to the Schur complement
// M = A_C H A_C^T bordered by the free columns A_F.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "shapesos/conic.hpp"
#include "shapesos/errors.hpp"

extern "C" {
void dpotrf_(const char* uplo, const int* n, double* a, const int* lda, int* info);
void dpotrs_(const char* uplo, const int* n, const int* nrhs, const double* a, const int* lda, double* b,
             const int* ldb, int* info);
}

namespace shapesos::conic {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

constexpr double kInf = std::numeric_limits<double>::infinity();

struct SocBlock {
  int off = 0;
  int dim = 0;
  // scaling
  double eta = 1.0;
  VectorXd wbar;  // normalized scaling point (a, q)
  VectorXd v;     // (wbar + e) / sqrt(2 (a + 1))
};

struct PsdBlock {
  int off = 0;
  int side = 0;
  MatrixXd R;
  MatrixXd Rinv;
  MatrixXd Wbar;  // R R^T
  // Per-row coefficient lists for Schur assembly.
  std::vector<int> rows;  // global rows touching the block, ascending
  struct Entry {
    int p;
    int q;
    double c;  // inner-product coefficient on X_pq (p <= q)
  };
  std::vector<std::vector<Entry>> entries;
};

// The conic part of the variable vector and the operations of its Euclidean
// Jordan algebra.
struct Cones {
  int n_lp = 0;
  std::vector<SocBlock> soc;
  std::vector<PsdBlock> psd;
  int size = 0;
  int degree = 0;

  VectorXd lp_d;       // sqrt(x / s)
  VectorXd lambda;     // scaled point, PSD blocks store eigenvalues on the diagonal

  VectorXd identity() const {
    VectorXd e = VectorXd::Zero(size);
    e.head(n_lp).setOnes();
    for (const auto& b : soc) e[b.off] = 1.0;
    for (const auto& b : psd)
      for (int i = 0; i < b.side; ++i) e[b.off + i * b.side + i] = 1.0;
    return e;
  }

  static Eigen::Map<MatrixXd> mat(VectorXd& v, const PsdBlock& b) {
    return Eigen::Map<MatrixXd>(v.data() + b.off, b.side, b.side);
  }
  static Eigen::Map<const MatrixXd> mat(const VectorXd& v, const PsdBlock& b) {
    return Eigen::Map<const MatrixXd>(v.data() + b.off, b.side, b.side);
  }

  static void soc_apply_w(const SocBlock& b, const double* u, double* out, bool inverse) {
    const int n = b.dim;
    const double a = b.wbar[0];
    double qu = 0.0;
    for (int i = 1; i < n; ++i) qu += b.wbar[i] * u[i];
    const double scale = inverse ? 1.0 / b.eta : b.eta;
    const double sgn = inverse ? -1.0 : 1.0;
    const double u0 = u[0];
    const double coef = sgn * u0 + qu / (1.0 + a);
    for (int i = 1; i < n; ++i) out[i] = scale * (u[i] + coef * b.wbar[i]);
    out[0] = scale * (a * u0 + sgn * qu);
  }

  // Computes NT scalings at (x, s). Returns false when a point left the cone.
  bool compute_scaling(const VectorXd& x, const VectorXd& s) {
    lambda.resize(size);
    lp_d.resize(n_lp);
    for (int i = 0; i < n_lp; ++i) {
      if (!(x[i] > 0.0) || !(s[i] > 0.0)) return false;
      lp_d[i] = std::sqrt(x[i] / s[i]);
      lambda[i] = std::sqrt(x[i] * s[i]);
    }
    for (auto& b : soc) {
      const int n = b.dim;
      const double* xp = x.data() + b.off;
      const double* sp = s.data() + b.off;
      const double x1 = Eigen::Map<const VectorXd>(xp + 1, n - 1).norm();
      const double s1 = Eigen::Map<const VectorXd>(sp + 1, n - 1).norm();
      const double nx2 = (xp[0] - x1) * (xp[0] + x1);
      const double ns2 = (sp[0] - s1) * (sp[0] + s1);
      if (!(xp[0] > x1) || !(sp[0] > s1) || !(nx2 > 0.0) || !(ns2 > 0.0)) return false;
      const double nx = std::sqrt(nx2);
      const double ns = std::sqrt(ns2);
      Eigen::Map<const VectorXd> xv(xp, n);
      Eigen::Map<const VectorXd> sv(sp, n);
      const VectorXd xb = xv / nx;
      const VectorXd sb = sv / ns;
      const double gamma = std::sqrt(std::max(0.5 * (1.0 + xb.dot(sb)), 1e-300));
      b.wbar.resize(n);
      b.wbar[0] = (xb[0] + sb[0]) / (2.0 * gamma);
      b.wbar.tail(n - 1) = (xb.tail(n - 1) - sb.tail(n - 1)) / (2.0 * gamma);
      b.eta = std::sqrt(nx / ns);
      b.v = b.wbar;
      b.v[0] += 1.0;
      b.v /= std::sqrt(2.0 * (b.wbar[0] + 1.0));
      soc_apply_w(b, sp, lambda.data() + b.off, false);
    }
    for (auto& b : psd) {
      const int k = b.side;
      MatrixXd X = mat(x, b);
      MatrixXd S = mat(s, b);
      X = 0.5 * (X + X.transpose()).eval();
      S = 0.5 * (S + S.transpose()).eval();
      Eigen::LLT<MatrixXd> lx(X);
      Eigen::LLT<MatrixXd> ls(S);
      if (lx.info() != Eigen::Success || ls.info() != Eigen::Success) return false;
      const MatrixXd Lx = lx.matrixL();
      const MatrixXd Ls = ls.matrixL();
      Eigen::JacobiSVD<MatrixXd> svd;
      Eigen::BDCSVD<MatrixXd> bdc;
      const MatrixXd P = Ls.transpose() * Lx;
      MatrixXd U, V;
      VectorXd sig;
      if (k <= 16) {
        svd.compute(P, Eigen::ComputeFullU | Eigen::ComputeFullV);
        U = svd.matrixU();
        V = svd.matrixV();
        sig = svd.singularValues();
      } else {
        bdc.compute(P, Eigen::ComputeFullU | Eigen::ComputeFullV);
        U = bdc.matrixU();
        V = bdc.matrixV();
        sig = bdc.singularValues();
      }
      if (!(sig.minCoeff() > 0.0)) return false;
      const VectorXd isq = sig.cwiseSqrt().cwiseInverse();
      b.R = Lx * V * isq.asDiagonal();
      b.Rinv = isq.asDiagonal() * U.transpose() * Ls.transpose();
      b.Wbar = b.R * b.R.transpose();
      auto lam = mat(lambda, b);
      lam.setZero();
      for (int i = 0; i < k; ++i) lam(i, i) = sig[i];
    }
    return true;
  }

  // W applied to a dual direction (into the scaled space).
  VectorXd scale_dual(const VectorXd& ds) const {
    VectorXd out(size);
    out.head(n_lp) = ds.head(n_lp).cwiseProduct(lp_d);
    for (const auto& b : soc) soc_apply_w(b, ds.data() + b.off, out.data() + b.off, false);
    for (const auto& b : psd) mat(out, b) = b.R.transpose() * mat(ds, b) * b.R;
    return out;
  }

  // W^{-T} applied to a primal direction.
  VectorXd scale_primal(const VectorXd& dx) const {
    VectorXd out(size);
    out.head(n_lp) = dx.head(n_lp).cwiseQuotient(lp_d);
    for (const auto& b : soc) soc_apply_w(b, dx.data() + b.off, out.data() + b.off, true);
    for (const auto& b : psd) mat(out, b) = b.Rinv * mat(dx, b) * b.Rinv.transpose();
    return out;
  }

  // W^T applied to a scaled-space vector (back into primal space).
  VectorXd unscale_to_primal(const VectorXd& v) const {
    VectorXd out(size);
    out.head(n_lp) = v.head(n_lp).cwiseProduct(lp_d);
    for (const auto& b : soc) soc_apply_w(b, v.data() + b.off, out.data() + b.off, false);
    for (const auto& b : psd) mat(out, b) = b.R * mat(v, b) * b.R.transpose();
    return out;
  }

  // H = W^T W.
  VectorXd apply_h(const VectorXd& v) const {
    VectorXd out(size);
    out.head(n_lp) = v.head(n_lp).cwiseProduct(lp_d).cwiseProduct(lp_d);
    std::vector<double> tmp;
    for (const auto& b : soc) {
      tmp.resize(static_cast<std::size_t>(b.dim));
      soc_apply_w(b, v.data() + b.off, tmp.data(), false);
      soc_apply_w(b, tmp.data(), out.data() + b.off, false);
    }
    for (const auto& b : psd) mat(out, b) = b.Wbar * mat(v, b) * b.Wbar;
    return out;
  }

  VectorXd jordan(const VectorXd& u, const VectorXd& v) const {
    VectorXd out(size);
    out.head(n_lp) = u.head(n_lp).cwiseProduct(v.head(n_lp));
    for (const auto& b : soc) {
      const auto uu = u.segment(b.off, b.dim);
      const auto vv = v.segment(b.off, b.dim);
      out[b.off] = uu.dot(vv);
      out.segment(b.off + 1, b.dim - 1) = uu[0] * vv.tail(b.dim - 1) + vv[0] * uu.tail(b.dim - 1);
    }
    for (const auto& b : psd) {
      const MatrixXd uv = mat(u, b) * mat(v, b);
      mat(out, b) = 0.5 * (uv + uv.transpose());
    }
    return out;
  }

  // z with lambda o z = r.
  VectorXd lambda_divide(const VectorXd& r) const {
    VectorXd out(size);
    out.head(n_lp) = r.head(n_lp).cwiseQuotient(lambda.head(n_lp));
    for (const auto& b : soc) {
      const auto l = lambda.segment(b.off, b.dim);
      const auto rr = r.segment(b.off, b.dim);
      const double l1n = l.tail(b.dim - 1).norm();
      const double det = (l[0] - l1n) * (l[0] + l1n);
      const double z0 = (l[0] * rr[0] - l.tail(b.dim - 1).dot(rr.tail(b.dim - 1))) / det;
      out[b.off] = z0;
      out.segment(b.off + 1, b.dim - 1) = (rr.tail(b.dim - 1) - z0 * l.tail(b.dim - 1)) / l[0];
    }
    for (const auto& b : psd) {
      const auto rm = mat(r, b);
      auto z = mat(out, b);
      const auto lm = mat(lambda, b);
      for (int j = 0; j < b.side; ++j)
        for (int i = 0; i < b.side; ++i) z(i, j) = 2.0 * rm(i, j) / (lm(i, i) + lm(j, j));
    }
    return out;
  }

  // Largest alpha with lambda + alpha * v in the cone (may be +inf).
  double max_step(const VectorXd& v) const {
    double alpha = kInf;
    for (int i = 0; i < n_lp; ++i)
      if (v[i] < 0.0) alpha = std::min(alpha, -lambda[i] / v[i]);
    for (const auto& b : soc) {
      const auto l = lambda.segment(b.off, b.dim);
      const auto d = v.segment(b.off, b.dim);
      const double l1n = l.tail(b.dim - 1).norm();
      const double lnorm = std::sqrt((l[0] - l1n) * (l[0] + l1n));
      const VectorXd lbar = l / lnorm;
      const double rho0 = (lbar[0] * d[0] - lbar.tail(b.dim - 1).dot(d.tail(b.dim - 1))) / lnorm;
      const double factor = (rho0 + d[0] / lnorm) / (lbar[0] + 1.0);
      const double rho1 = (d.tail(b.dim - 1) / lnorm - factor * lbar.tail(b.dim - 1)).norm();
      const double denom = rho1 - rho0;
      if (denom > 0.0) alpha = std::min(alpha, 1.0 / denom);
    }
    for (const auto& b : psd) {
      const auto lm = mat(lambda, b);
      VectorXd isq(b.side);
      for (int i = 0; i < b.side; ++i) isq[i] = 1.0 / std::sqrt(lm(i, i));
      MatrixXd D = mat(v, b);
      D = isq.asDiagonal() * (0.5 * (D + D.transpose())) * isq.asDiagonal();
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(D, Eigen::EigenvaluesOnly);
      const double mn = es.eigenvalues()[0];
      if (mn < 0.0) alpha = std::min(alpha, -1.0 / mn);
    }
    return alpha;
  }
};

// ---------------------------------------------------------------------------

// Reduced Newton system
//   A_C dxC + A_F dxF = r1
//   A_C^T dy + dsC    = r2C
//   A_F^T dy          = r2F
//   dxC + H dsC       = r4
class KktSolver {
 public:
  KktSolver(const SpMat& AC, const SpMat& AF, Cones& cones) : AC_(AC), AF_(AF), cones_(cones) {
    m_ = static_cast<int>(AC.rows());
    const SpMat ACt = AC.transpose();
    ACrow_ = ACt;  // rows of A_C as columns of the transpose
    decide_pattern();
  }

  bool factor() {
    if (dense_) {
      if (!assemble_dense()) return false;
    } else {
      if (!assemble_sparse()) return false;
    }
    const int nF = static_cast<int>(AF_.cols());
    if (nF > 0) {
      MatrixXd AFd = MatrixXd(AF_);
      Y_ = solve_m(AFd);
      MatrixXd S = AF_.transpose() * Y_;
      S = 0.5 * (S + S.transpose()).eval();
      const double sreg = 1e-13 * std::max(1.0, S.diagonal().cwiseAbs().maxCoeff());
      S.diagonal().array() += sreg;
      s_llt_.compute(S);
      if (s_llt_.info() != Eigen::Success) {
        S.diagonal().array() += 1e-9 * std::max(1.0, S.diagonal().cwiseAbs().maxCoeff());
        s_llt_.compute(S);
        if (s_llt_.info() != Eigen::Success) return false;
      }
    }
    return true;
  }

  struct Sol {
    VectorXd dxF, dy, dxC, dsC;
  };

  Sol solve(const VectorXd& r1, const VectorXd& r2F, const VectorXd& r2C, const VectorXd& r4) const {
    Sol sol = solve_once(r1, r2F, r2C, r4);
    const double scale = 1.0 + std::max({r1.lpNorm<Eigen::Infinity>(), r2F.size() ? r2F.lpNorm<Eigen::Infinity>() : 0.0,
                                        r2C.lpNorm<Eigen::Infinity>(), r4.lpNorm<Eigen::Infinity>()});
    double prev = kInf;
    for (int it = 0; it < 4; ++it) {
      VectorXd e1 = r1 - AC_ * sol.dxC - AF_ * sol.dxF;
      VectorXd e2F = r2F - AF_.transpose() * sol.dy;
      VectorXd e2C = r2C - AC_.transpose() * sol.dy - sol.dsC;
      VectorXd e4 = r4 - sol.dxC - cones_.apply_h(sol.dsC);
      const double err = std::max({e1.lpNorm<Eigen::Infinity>(), e2F.size() ? e2F.lpNorm<Eigen::Infinity>() : 0.0,
                                   e2C.lpNorm<Eigen::Infinity>(), e4.lpNorm<Eigen::Infinity>()});
      if (err <= 1e-15 * scale || err >= 0.5 * prev) break;
      prev = err;
      const Sol c = solve_once(e1, e2F, e2C, e4);
      sol.dxF += c.dxF;
      sol.dy += c.dy;
      sol.dxC += c.dxC;
      sol.dsC += c.dsC;
    }
    return sol;
  }

  bool dense() const { return dense_; }

 private:
  Sol solve_once(const VectorXd& r1, const VectorXd& r2F, const VectorXd& r2C, const VectorXd& r4) const {
    Sol sol;
    const VectorXd t = r4 - cones_.apply_h(r2C);
    const VectorXd rhs1 = r1 - AC_ * t;
    const VectorXd z = solve_m(rhs1);
    if (AF_.cols() > 0) {
      sol.dxF = s_llt_.solve(AF_.transpose() * z - r2F);
      sol.dy = z - Y_ * sol.dxF;
    } else {
      sol.dxF = VectorXd(0);
      sol.dy = z;
    }
    const VectorXd atdy = AC_.transpose() * sol.dy;
    sol.dsC = r2C - atdy;
    sol.dxC = t + cones_.apply_h(atdy);
    return sol;
  }

  MatrixXd solve_m(const MatrixXd& B) const {
    if (m_ == 0) return MatrixXd(0, B.cols());
    if (dense_) {
      MatrixXd X = B;
      const int n = m_;
      const int nrhs = static_cast<int>(B.cols());
      int info = 0;
      const char uplo = 'L';
      dpotrs_(&uplo, &n, &nrhs, Mdense_.data(), &n, X.data(), &n, &info);
      return X;
    }
    return sparse_ldlt_.solve(B);
  }

  // Row cliques of M: rows sharing an LP coordinate or a cone block.
  void decide_pattern() {
    const int nC = cones_.size;
    double entries = 0.0;
    for (int j = 0; j < cones_.n_lp; ++j) {
      const double c = static_cast<double>(AC_.col(j).nonZeros());
      entries += c * c;
    }
    auto block_rows = [&](int off, int len) {
      std::vector<int> rows;
      for (int j = off; j < off + len; ++j)
        for (SpMat::InnerIterator it(AC_, j); it; ++it) rows.push_back(static_cast<int>(it.row()));
      std::sort(rows.begin(), rows.end());
      rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
      return rows;
    };
    soc_rows_.clear();
    for (const auto& b : cones_.soc) {
      soc_rows_.push_back(block_rows(b.off, b.dim));
      const double c = static_cast<double>(soc_rows_.back().size());
      entries += c * c;
    }
    for (const auto& b : cones_.psd) {
      const double c = static_cast<double>(b.rows.size());
      entries += c * c;
    }
    (void)nC;
    const double full = static_cast<double>(m_) * m_;
    dense_ = m_ <= 400 || entries > 0.15 * full;
    // Dense storage beyond ~1.5 GB is not an option on desk machines.
    if (static_cast<double>(m_) * m_ * 8.0 > 1.5e9) dense_ = false;
    // Dense LP columns go through one BLAS-3 update instead of per-entry adds.
    lp_dense_ = false;
    if (dense_ && cones_.n_lp > 0) {
      const SpMat lp = AC_.leftCols(cones_.n_lp);
      const double cells = static_cast<double>(m_) * cones_.n_lp;
      if (lp.nonZeros() > 0.05 * cells && cells * 8.0 < 4e8) {
        ALP_ = MatrixXd(lp);
        lp_dense_ = true;
      }
    }
    // Many small second-order cones (SDD pairs) are batched the same way.
    soc_dense_ = false;
    if (dense_ && cones_.soc.size() > 8) {
      const int first = cones_.soc.front().off;
      const int last = cones_.soc.back().off + cones_.soc.back().dim;
      const double cells = static_cast<double>(m_) * (last - first);
      if (cells * 8.0 < 4e8) {
        ASOC_ = MatrixXd(AC_.middleCols(first, last - first));
        soc_first_ = first;
        soc_dense_ = true;
      }
    }
  }

  // M += sum_k A_k H_k A_k^T with H_k = eta^2 (I + 4 (v'v) v v' - 2 v (Jv)' - 2 (Jv) v').
  void add_soc_dense() {
    const int p = static_cast<int>(cones_.soc.size());
    MatrixXd W(m_, ASOC_.cols());
    MatrixXd V(m_, 2 * p), VE(m_, 2 * p);
    for (int k = 0; k < p; ++k) {
      const auto& b = cones_.soc[static_cast<std::size_t>(k)];
      const auto Ak = ASOC_.middleCols(b.off - soc_first_, b.dim);
      W.middleCols(b.off - soc_first_, b.dim) = b.eta * Ak;
      VectorXd Jv = b.v;
      Jv.tail(b.dim - 1) = -Jv.tail(b.dim - 1);
      V.col(2 * k) = b.eta * (Ak * b.v);
      V.col(2 * k + 1) = b.eta * (Ak * Jv);
      const double vv = b.v.squaredNorm();
      VE.col(2 * k) = 4.0 * vv * V.col(2 * k) - 2.0 * V.col(2 * k + 1);
      VE.col(2 * k + 1) = -2.0 * V.col(2 * k);
    }
    Mdense_.selfadjointView<Eigen::Lower>().rankUpdate(W);
    const MatrixXd C = VE * V.transpose();
    Mdense_.triangularView<Eigen::Lower>() += C;
  }

  template <class Sink>
  void assemble(Sink&& add, bool skip_lp = false, bool skip_soc = false) const {
    // LP part
    for (int j = 0; j < (skip_lp ? 0 : cones_.n_lp); ++j) {
      const double h = cones_.lp_d[j] * cones_.lp_d[j];
      for (SpMat::InnerIterator a(AC_, j); a; ++a)
        for (SpMat::InnerIterator b(AC_, j); b; ++b)
          if (b.row() <= a.row()) add(static_cast<int>(a.row()), static_cast<int>(b.row()), h * a.value() * b.value());
    }
    // SOC: H = eta^2 (I + 4 (v'v) v v' - 2 v v' J - 2 J v v')
    for (std::size_t k = 0; k < (skip_soc ? 0 : cones_.soc.size()); ++k) {
      const auto& b = cones_.soc[k];
      const auto& rows = soc_rows_[k];
      const int r = static_cast<int>(rows.size());
      if (r == 0) continue;
      MatrixXd Ak = MatrixXd::Zero(r, b.dim);
      for (int j = 0; j < b.dim; ++j)
        for (SpMat::InnerIterator it(AC_, b.off + j); it; ++it) {
          const auto pos = std::lower_bound(rows.begin(), rows.end(), static_cast<int>(it.row())) - rows.begin();
          Ak(pos, j) = it.value();
        }
      VectorXd Jv = b.v;
      Jv.tail(b.dim - 1) = -Jv.tail(b.dim - 1);
      const VectorXd av = Ak * b.v;
      const VectorXd ajv = Ak * Jv;
      const double vv = b.v.squaredNorm();
      MatrixXd blk = Ak * Ak.transpose();
      blk += 4.0 * vv * av * av.transpose();
      blk -= 2.0 * (av * ajv.transpose() + ajv * av.transpose());
      blk *= b.eta * b.eta;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j <= i; ++j) add(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(j)], blk(i, j));
    }
    // PSD: M_ij += <A_i, W A_j W>
    for (const auto& b : cones_.psd) {
      const int r = static_cast<int>(b.rows.size());
      const int k = b.side;
      std::vector<int> cols;
      MatrixXd G(k, k);
      for (int jj = 0; jj < r; ++jj) {
        const auto& ej = b.entries[static_cast<std::size_t>(jj)];
        cols.clear();
        for (const auto& e : ej) {
          cols.push_back(e.p);
          cols.push_back(e.q);
        }
        std::sort(cols.begin(), cols.end());
        cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
        const int nc = static_cast<int>(cols.size());
        if (2 * nc < k) {
          MatrixXd Wc(k, nc);
          for (int c = 0; c < nc; ++c) Wc.col(c) = b.Wbar.col(cols[static_cast<std::size_t>(c)]);
          MatrixXd C = MatrixXd::Zero(nc, nc);
          for (const auto& e : ej) {
            const auto pi = std::lower_bound(cols.begin(), cols.end(), e.p) - cols.begin();
            const auto qi = std::lower_bound(cols.begin(), cols.end(), e.q) - cols.begin();
            if (pi == qi) {
              C(pi, pi) += e.c;
            } else {
              C(pi, qi) += 0.5 * e.c;
              C(qi, pi) += 0.5 * e.c;
            }
          }
          G.noalias() = Wc * (C * Wc.transpose());
        } else {
          MatrixXd Aj = MatrixXd::Zero(k, k);
          for (const auto& e : ej) {
            if (e.p == e.q) {
              Aj(e.p, e.p) += e.c;
            } else {
              Aj(e.p, e.q) += 0.5 * e.c;
              Aj(e.q, e.p) += 0.5 * e.c;
            }
          }
          G.noalias() = b.Wbar * Aj * b.Wbar;
        }
        const int gj = b.rows[static_cast<std::size_t>(jj)];
        for (int ii = jj; ii < r; ++ii) {
          double acc = 0.0;
          for (const auto& e : b.entries[static_cast<std::size_t>(ii)]) acc += e.c * G(e.p, e.q);
          add(b.rows[static_cast<std::size_t>(ii)], gj, acc);
        }
      }
    }
  }

  bool assemble_dense() {
    if (Mdense_.rows() != m_) Mdense_.resize(m_, m_);
    Mdense_.setZero();
    if (lp_dense_) {
      const MatrixXd W = ALP_ * cones_.lp_d.asDiagonal();
      Mdense_.selfadjointView<Eigen::Lower>().rankUpdate(W);
    }
    if (soc_dense_) add_soc_dense();
    assemble([&](int i, int j, double v) { Mdense_(i, j) += v; }, lp_dense_, soc_dense_);
    double dmax = 0.0;
    for (int i = 0; i < m_; ++i) dmax = std::max(dmax, Mdense_(i, i));
    const double reg = 1e-14 * std::max(1.0, dmax);
    MatrixXd backup;
    for (int attempt = 0; attempt < 6; ++attempt) {
      const double r = reg * std::pow(100.0, attempt);
      if (attempt == 0) {
        backup = Mdense_;
      } else {
        Mdense_ = backup;
      }
      for (int i = 0; i < m_; ++i) Mdense_(i, i) += r;
      int info = 0;
      const char uplo = 'L';
      const int n = m_;
      if (n == 0) return true;
      dpotrf_(&uplo, &n, Mdense_.data(), &n, &info);
      if (info == 0) return true;
    }
    return false;
  }

  bool assemble_sparse() {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(AC_.nonZeros()) * 2 + static_cast<std::size_t>(m_));
    assemble([&](int i, int j, double v) { trips.emplace_back(i, j, v); });
    double dmax = 0.0;
    std::vector<double> diag(static_cast<std::size_t>(m_), 0.0);
    for (const auto& t : trips)
      if (t.row() == t.col()) diag[static_cast<std::size_t>(t.row())] += t.value();
    for (double d : diag) dmax = std::max(dmax, d);
    SpMat M(m_, m_);
    for (int attempt = 0; attempt < 6; ++attempt) {
      std::vector<Eigen::Triplet<double>> all = trips;
      const double r = 1e-14 * std::max(1.0, dmax) * std::pow(100.0, attempt);
      for (int i = 0; i < m_; ++i) all.emplace_back(i, i, r);
      M.setFromTriplets(all.begin(), all.end());
      if (!analyzed_) {
        sparse_ldlt_.analyzePattern(M);
        analyzed_ = true;
      }
      sparse_ldlt_.factorize(M);
      if (sparse_ldlt_.info() == Eigen::Success && (sparse_ldlt_.vectorD().array() > 0.0).all()) return true;
    }
    return false;
  }

  const SpMat& AC_;
  const SpMat& AF_;
  Cones& cones_;
  SpMat ACrow_;
  int m_ = 0;
  bool dense_ = true;
  bool lp_dense_ = false;
  MatrixXd ALP_;
  bool soc_dense_ = false;
  int soc_first_ = 0;
  MatrixXd ASOC_;
  std::vector<std::vector<int>> soc_rows_;
  MatrixXd Mdense_;
  Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> sparse_ldlt_;
  bool analyzed_ = false;
  MatrixXd Y_;
  Eigen::LLT<MatrixXd> s_llt_;
};

// ---------------------------------------------------------------------------

struct Problem {
  // internal scaled data
  SpMat AF, AC;
  VectorXd b, cF, cC;
  Cones cones;
  // scaling: x_orig = E x_int, y_orig = D y_int, s_orig = E^{-1} s_int
  VectorXd D, EF, EC;
  // maps
  std::vector<int> row_map;  // program row -> internal row (-1 when dropped)
  struct BlockMap {
    ConeKind kind;
    int off;  // offset in F or C space
    int dim;
  };
  std::vector<BlockMap> blocks;
  double c0 = 0.0;
  int m = 0;
};

struct Iterate {
  VectorXd xF, xC, y, s;
  double tau = 1.0, kappa = 1.0;
};

class HsdBackend final : public Backend {
 public:
  std::string name() const override { return "hsd"; }
  ConicSolution solve(const ConicProgram& program, const SolverSettings& settings) const override;
};

std::optional<ConicSolution> build(const ConicProgram& program, const SolverSettings& settings, Problem& P) {
  (void)settings;
  const int nblocks = program.num_blocks();
  int nF = 0, nL = 0;
  for (const auto& b : program.blocks()) {
    if (b.kind == ConeKind::Free) nF += b.dim;
    if (b.kind == ConeKind::Nonneg) nL += b.dim;
  }
  P.blocks.resize(static_cast<std::size_t>(nblocks));
  int offF = 0, offC = nL;
  int offL = 0;
  P.cones.n_lp = nL;
  int degree = nL;
  for (int bi = 0; bi < nblocks; ++bi) {
    const Block& b = program.block(bi);
    auto& bm = P.blocks[static_cast<std::size_t>(bi)];
    bm.kind = b.kind;
    bm.dim = b.dim;
    switch (b.kind) {
      case ConeKind::Free:
        bm.off = offF;
        offF += b.dim;
        break;
      case ConeKind::Nonneg:
        bm.off = offL;
        offL += b.dim;
        break;
      case ConeKind::SecondOrder:
        bm.off = offC;
        P.cones.soc.push_back(SocBlock{offC, b.dim, 1.0, {}, {}});
        offC += b.dim;
        degree += 1;
        break;
      case ConeKind::PSD:
        break;
    }
  }
  for (int bi = 0; bi < nblocks; ++bi) {
    const Block& b = program.block(bi);
    if (b.kind != ConeKind::PSD) continue;
    auto& bm = P.blocks[static_cast<std::size_t>(bi)];
    bm.off = offC;
    PsdBlock pb;
    pb.off = offC;
    pb.side = b.dim;
    P.cones.psd.push_back(std::move(pb));
    offC += b.dim * b.dim;
    degree += b.dim;
  }
  const int nC = offC;
  P.cones.size = nC;
  P.cones.degree = degree;

  // Row usage and empty rows.
  const int mprog = program.num_rows();
  std::vector<int> nnz(static_cast<std::size_t>(mprog), 0);
  for (const auto& t : program.triplets()) nnz[static_cast<std::size_t>(t.row)]++;
  P.row_map.assign(static_cast<std::size_t>(mprog), -1);
  int m = 0;
  for (int r = 0; r < mprog; ++r) {
    if (nnz[static_cast<std::size_t>(r)] == 0) {
      if (std::abs(program.rhs()[static_cast<std::size_t>(r)]) > 0.0) {
        ConicSolution sol;
        sol.status = SolveStatus::Infeasible;
        sol.message = "empty row " + std::to_string(r) + " with nonzero right-hand side";
        return sol;
      }
      continue;
    }
    P.row_map[static_cast<std::size_t>(r)] = m++;
  }
  P.m = m;

  // Coordinates, with PSD entries split symmetrically.
  auto emit = [&](const VarRef& v, double coef, auto&& sink) {
    const auto& bm = P.blocks[static_cast<std::size_t>(v.block)];
    switch (bm.kind) {
      case ConeKind::Free: sink(true, bm.off + v.i, coef); break;
      case ConeKind::Nonneg:
      case ConeKind::SecondOrder: sink(false, bm.off + v.i, coef); break;
      case ConeKind::PSD:
        if (v.i == v.j) {
          sink(false, bm.off + v.j * bm.dim + v.i, coef);
        } else {
          sink(false, bm.off + v.j * bm.dim + v.i, 0.5 * coef);
          sink(false, bm.off + v.i * bm.dim + v.j, 0.5 * coef);
        }
        break;
    }
  };
  std::vector<Eigen::Triplet<double>> tf, tc;
  for (const auto& t : program.triplets()) {
    const int r = P.row_map[static_cast<std::size_t>(t.row)];
    emit(t.var, t.coef, [&](bool free, int col, double c) { (free ? tf : tc).emplace_back(r, col, c); });
  }
  P.AF.resize(m, nF);
  P.AF.setFromTriplets(tf.begin(), tf.end());
  P.AC.resize(m, nC);
  P.AC.setFromTriplets(tc.begin(), tc.end());
  P.AF.makeCompressed();
  P.AC.makeCompressed();
  P.b = VectorXd::Zero(m);
  for (int r = 0; r < mprog; ++r)
    if (P.row_map[static_cast<std::size_t>(r)] >= 0) P.b[P.row_map[static_cast<std::size_t>(r)]] = program.rhs()[static_cast<std::size_t>(r)];
  P.cF = VectorXd::Zero(nF);
  P.cC = VectorXd::Zero(nC);
  for (const auto& t : program.objective())
    emit(t.var, t.coef, [&](bool free, int col, double c) { (free ? P.cF[col] : P.cC[col]) += c; });
  P.c0 = program.objective_constant();

  // Free columns that appear in no row.
  for (int j = 0; j < nF; ++j) {
    if (P.AF.col(j).nonZeros() == 0 && P.cF[j] != 0.0) {
      ConicSolution sol;
      sol.status = SolveStatus::Unbounded;
      sol.message = "free variable with nonzero cost appears in no constraint";
      return sol;
    }
  }
  return std::nullopt;
}

void equilibrate(Problem& P, bool enabled) {
  const int m = P.m;
  const auto nF = static_cast<int>(P.AF.cols());
  const int nC = P.cones.size;
  P.D = VectorXd::Ones(m);
  P.EF = VectorXd::Ones(nF);
  P.EC = VectorXd::Ones(nC);
  if (!enabled || m == 0) return;
  auto clamp = [](double v) { return std::clamp(v, 1e-4, 1e4); };
  for (int iter = 0; iter < 12; ++iter) {
    VectorXd rown = VectorXd::Zero(m);
    VectorXd colF = VectorXd::Zero(nF);
    VectorXd colC = VectorXd::Zero(nC);
    for (int j = 0; j < nF; ++j)
      for (SpMat::InnerIterator it(P.AF, j); it; ++it) {
        const double v = std::abs(it.value());
        rown[it.row()] = std::max(rown[it.row()], v);
        colF[j] = std::max(colF[j], v);
      }
    for (int j = 0; j < nC; ++j)
      for (SpMat::InnerIterator it(P.AC, j); it; ++it) {
        const double v = std::abs(it.value());
        rown[it.row()] = std::max(rown[it.row()], v);
        colC[j] = std::max(colC[j], v);
      }
    // Cone blocks share one scale.
    for (const auto& b : P.cones.soc) {
      const double mx = colC.segment(b.off, b.dim).maxCoeff();
      colC.segment(b.off, b.dim).setConstant(mx);
    }
    for (const auto& b : P.cones.psd) {
      const int len = b.side * b.side;
      const double mx = len ? colC.segment(b.off, len).maxCoeff() : 0.0;
      colC.segment(b.off, len).setConstant(mx);
    }
    VectorXd dr(m), ef(nF), ec(nC);
    double worst = 0.0;
    for (int i = 0; i < m; ++i) {
      dr[i] = rown[i] > 0 ? clamp(1.0 / std::sqrt(rown[i])) : 1.0;
      worst = std::max(worst, std::abs(1.0 - rown[i]));
    }
    for (int j = 0; j < nF; ++j) ef[j] = colF[j] > 0 ? clamp(1.0 / std::sqrt(colF[j])) : 1.0;
    for (int j = 0; j < nC; ++j) ec[j] = colC[j] > 0 ? clamp(1.0 / std::sqrt(colC[j])) : 1.0;
    P.AF = dr.asDiagonal() * P.AF * ef.asDiagonal();
    P.AC = dr.asDiagonal() * P.AC * ec.asDiagonal();
    P.D = P.D.cwiseProduct(dr);
    P.EF = P.EF.cwiseProduct(ef);
    P.EC = P.EC.cwiseProduct(ec);
    if (worst < 0.05) break;
  }
  P.b = P.D.cwiseProduct(P.b);
  P.cF = P.EF.cwiseProduct(P.cF);
  P.cC = P.EC.cwiseProduct(P.cC);
  P.AF.makeCompressed();
  P.AC.makeCompressed();
}

void fill_psd_entries(Problem& P) {
  // Inner-product coefficient lists per row, read back from the scaled A_C.
  const SpMat At = P.AC.transpose();  // columns are rows of A_C
  for (auto& b : P.cones.psd) {
    b.rows.clear();
    b.entries.clear();
    const int k = b.side;
    std::vector<std::vector<PsdBlock::Entry>> per_row(static_cast<std::size_t>(P.m));
    for (int q = 0; q < k; ++q)
      for (int p = 0; p <= q; ++p) {
        const int col = b.off + q * k + p;
        for (SpMat::InnerIterator it(P.AC, col); it; ++it) {
          const double c = p == q ? it.value() : 2.0 * it.value();
          per_row[static_cast<std::size_t>(it.row())].push_back(PsdBlock::Entry{p, q, c});
        }
      }
    for (int r = 0; r < P.m; ++r)
      if (!per_row[static_cast<std::size_t>(r)].empty()) {
        b.rows.push_back(r);
        b.entries.push_back(std::move(per_row[static_cast<std::size_t>(r)]));
      }
  }
}

ConicSolution solve_free_only(const ConicProgram& program, const Problem& P) {
  // No conic coordinates: a linear system plus a linear objective.
  ConicSolution sol;
  const MatrixXd A = MatrixXd(P.AF);
  VectorXd x = VectorXd::Zero(A.cols());
  if (A.rows() > 0 && A.cols() > 0) x = Eigen::CompleteOrthogonalDecomposition<MatrixXd>(A).solve(P.b);
  const double bn = 1.0 + P.b.norm();
  if (P.m > 0 && (A * x - P.b).norm() > 1e-9 * bn) {
    sol.status = SolveStatus::Infeasible;
    sol.message = "linear equalities are inconsistent";
    return sol;
  }
  VectorXd y = VectorXd::Zero(P.m);
  if (P.m > 0 && A.cols() > 0) y = Eigen::CompleteOrthogonalDecomposition<MatrixXd>(A.transpose()).solve(P.cF);
  if ((A.transpose() * y - P.cF).norm() > 1e-9 * (1.0 + P.cF.norm())) {
    sol.status = SolveStatus::Unbounded;
    sol.message = "objective not in the row space of the equalities";
    return sol;
  }
  sol.status = SolveStatus::Optimal;
  sol.values.resize(static_cast<std::size_t>(program.num_blocks()));
  for (int bi = 0; bi < program.num_blocks(); ++bi) {
    const auto& bm = P.blocks[static_cast<std::size_t>(bi)];
    VectorXd v = VectorXd::Zero(program.block(bi).flat_size());
    if (bm.kind == ConeKind::Free)
      for (int i = 0; i < bm.dim; ++i) v[i] = P.EF[bm.off + i] * x[bm.off + i];
    sol.values[static_cast<std::size_t>(bi)] = v;
  }
  sol.duals = VectorXd::Zero(program.num_rows());
  for (int r = 0; r < program.num_rows(); ++r) {
    const int ir = P.row_map[static_cast<std::size_t>(r)];
    if (ir >= 0) sol.duals[r] = P.D[ir] * y[ir];
  }
  sol.objective = P.cF.dot(x) + P.c0;
  sol.dual_objective = P.b.dot(y) + P.c0;
  return sol;
}

ConicSolution HsdBackend::solve(const ConicProgram& program, const SolverSettings& settings) const {
  Problem P;
  if (auto early = build(program, settings, P)) return *early;
  equilibrate(P, settings.equilibrate);
  fill_psd_entries(P);
  if (P.cones.size == 0) return solve_free_only(program, P);

  Cones& K = P.cones;
  const int m = P.m;
  const auto nF = static_cast<int>(P.AF.cols());
  const int nC = K.size;
  const VectorXd e = K.identity();
  const double nu = static_cast<double>(K.degree);

  // Original-unit data for stopping criteria.
  const VectorXd b_orig = P.b.cwiseQuotient(P.D);
  const VectorXd cF_orig = P.cF.cwiseQuotient(P.EF);
  const VectorXd cC_orig = P.cC.cwiseQuotient(P.EC);
  const double bnorm = b_orig.norm();
  const double cnorm = std::sqrt(cF_orig.squaredNorm() + cC_orig.squaredNorm());

  Iterate z;
  z.xF = VectorXd::Zero(nF);
  z.xC = e;
  z.s = e;
  z.y = VectorXd::Zero(m);
  z.tau = 1.0;
  z.kappa = 1.0;

  KktSolver kkt(P.AC, P.AF, K);

  struct Metrics {
    double pres = kInf, dres = kInf, gap = kInf, pobj = 0, dobj = 0;
    double pinf = kInf, dinf = kInf;  // certificate quality
    bool pinf_ok = false, dinf_ok = false;
  };

  auto evaluate = [&](const Iterate& it) {
    Metrics mt;
    // original units
    const VectorXd xF = P.EF.cwiseProduct(it.xF) / it.tau;
    const VectorXd xC = P.EC.cwiseProduct(it.xC) / it.tau;
    const VectorXd y = P.D.cwiseProduct(it.y) / it.tau;
    const VectorXd s = it.s.cwiseQuotient(P.EC) / it.tau;
    // A_orig = D^{-1} A E^{-1}
    const VectorXd Ax = (P.AF * it.xF + P.AC * it.xC).cwiseQuotient(P.D) / it.tau;
    const VectorXd ATyF = (P.AF.transpose() * it.y).cwiseQuotient(P.EF) / it.tau;
    const VectorXd ATyC = (P.AC.transpose() * it.y).cwiseQuotient(P.EC) / it.tau;
    mt.pres = (Ax - b_orig).norm() / (1.0 + bnorm);
    mt.dres = std::sqrt((ATyF - cF_orig).squaredNorm() + (ATyC + s - cC_orig).squaredNorm()) / (1.0 + cnorm);
    mt.pobj = cF_orig.dot(xF) + cC_orig.dot(xC);
    mt.dobj = b_orig.dot(y);
    const double comp = std::abs(xC.dot(s));
    mt.gap = std::max(comp, std::abs(mt.pobj - mt.dobj)) / std::max(1.0, std::min(std::abs(mt.pobj), std::abs(mt.dobj)));
    // infeasibility certificates on unnormalized iterates
    const VectorXd yu = P.D.cwiseProduct(it.y);
    const VectorXd su = it.s.cwiseQuotient(P.EC);
    const double by = b_orig.dot(yu);
    if (by > 0) {
      const VectorXd rF = (P.AF.transpose() * it.y).cwiseQuotient(P.EF);
      const VectorXd rC = (P.AC.transpose() * it.y).cwiseQuotient(P.EC) + su;
      mt.pinf = std::sqrt(rF.squaredNorm() + rC.squaredNorm()) / by;
      mt.pinf_ok = mt.pinf <= settings.feas_tol;
    }
    const VectorXd xFu = P.EF.cwiseProduct(it.xF);
    const VectorXd xCu = P.EC.cwiseProduct(it.xC);
    const double cx = cF_orig.dot(xFu) + cC_orig.dot(xCu);
    if (cx < 0) {
      const VectorXd Axu = (P.AF * it.xF + P.AC * it.xC).cwiseQuotient(P.D);
      mt.dinf = Axu.norm() / (-cx);
      mt.dinf_ok = mt.dinf <= settings.feas_tol;
    }
    return mt;
  };

  auto finish = [&](const Iterate& it, SolveStatus status, const Metrics& mt, int iters, std::string msg) {
    ConicSolution sol;
    sol.status = status;
    sol.iterations = iters;
    sol.message = std::move(msg);
    double div = it.tau;
    if (status == SolveStatus::Infeasible || status == SolveStatus::Unbounded) div = 1.0;
    const VectorXd xF = P.EF.cwiseProduct(it.xF) / div;
    const VectorXd xC = P.EC.cwiseProduct(it.xC) / div;
    sol.values.resize(static_cast<std::size_t>(program.num_blocks()));
    for (int bi = 0; bi < program.num_blocks(); ++bi) {
      const auto& bm = P.blocks[static_cast<std::size_t>(bi)];
      const int len = program.block(bi).flat_size();
      VectorXd v(len);
      const VectorXd& src = bm.kind == ConeKind::Free ? xF : xC;
      for (int i = 0; i < len; ++i) v[i] = src[bm.off + i];
      if (bm.kind == ConeKind::PSD) {
        Eigen::Map<MatrixXd> mm(v.data(), bm.dim, bm.dim);
        mm = 0.5 * (mm + mm.transpose()).eval();
      }
      sol.values[static_cast<std::size_t>(bi)] = std::move(v);
    }
    sol.duals = VectorXd::Zero(program.num_rows());
    for (int r = 0; r < program.num_rows(); ++r) {
      const int ir = P.row_map[static_cast<std::size_t>(r)];
      if (ir >= 0) sol.duals[r] = P.D[ir] * it.y[ir] / div;
    }
    if (status == SolveStatus::Infeasible || status == SolveStatus::Unbounded) {
      sol.objective = status == SolveStatus::Infeasible ? kInf : -kInf;
      sol.dual_objective = sol.objective;
    } else {
      // Recompute the objective from the returned values.
      double obj = program.objective_constant();
      for (const auto& t : program.objective()) {
        const auto& v = sol.values[static_cast<std::size_t>(t.var.block)];
        const auto& blk = program.block(t.var.block);
        obj += t.coef * (blk.kind == ConeKind::PSD ? v[t.var.j * blk.dim + t.var.i] : v[t.var.i]);
      }
      sol.objective = obj;
      sol.dual_objective = mt.dobj + P.c0;
    }
    sol.primal_residual = mt.pres;
    sol.dual_residual = mt.dres;
    sol.gap = mt.gap;
    return sol;
  };

  Iterate best = z;
  Metrics best_mt;
  double best_score = kInf;
  const double sigma_min = 1e-4;
  int iter = 0;
  std::string stop_reason = "iteration limit";

  for (iter = 0; iter <= settings.max_iters; ++iter) {
    const Metrics mt = evaluate(z);
    const double score = std::max({mt.pres, mt.dres, mt.gap});
    if (score < best_score) {
      best_score = score;
      best = z;
      best_mt = mt;
    }
    if (settings.verbose)
      std::fprintf(stderr, "hsd %3d pres %.2e dres %.2e gap %.2e pobj %.8e tau %.2e kappa %.2e\n", iter, mt.pres,
                   mt.dres, mt.gap, mt.pobj, z.tau, z.kappa);
    if (mt.pres <= settings.feas_tol && mt.dres <= settings.feas_tol && mt.gap <= settings.gap_tol)
      return finish(z, SolveStatus::Optimal, mt, iter, "");
    if (mt.pinf_ok) return finish(z, SolveStatus::Infeasible, mt, iter, "primal infeasibility certificate");
    if (mt.dinf_ok) return finish(z, SolveStatus::Unbounded, mt, iter, "dual infeasibility certificate");
    if (iter == settings.max_iters) break;

    if (!K.compute_scaling(z.xC, z.s)) {
      stop_reason = "iterate left the cone";
      break;
    }
    if (!kkt.factor()) {
      stop_reason = "factorization failed";
      break;
    }

    const VectorXd rp = P.AF * z.xF + P.AC * z.xC - P.b * z.tau;
    const VectorXd rdF = P.AF.transpose() * z.y - P.cF * z.tau;
    const VectorXd rdC = P.AC.transpose() * z.y + z.s - P.cC * z.tau;
    const double rg = P.cF.dot(z.xF) + P.cC.dot(z.xC) - P.b.dot(z.y) + z.kappa;
    const double mu = (z.xC.dot(z.s) + z.tau * z.kappa) / (nu + 1.0);

    const auto d1 = kkt.solve(P.b, P.cF, P.cC, VectorXd::Zero(nC));
    const double denom_base = P.cF.dot(d1.dxF) + P.cC.dot(d1.dxC) - P.b.dot(d1.dy);

    struct Dir {
      VectorXd dxF, dxC, dy, ds;
      double dtau, dkappa;
    };
    auto direction = [&](double red, const VectorXd& p4, double p5) {
      const VectorXd p1 = -red * rp;
      const VectorXd p2F = -red * rdF;
      const VectorXd p2C = -red * rdC;
      const double p3 = -red * rg;
      const auto d0 = kkt.solve(p1, p2F, p2C, p4);
      const double num =
          p3 - (P.cF.dot(d0.dxF) + P.cC.dot(d0.dxC)) + P.b.dot(d0.dy) - p5 / z.tau;
      const double den = denom_base - z.kappa / z.tau;
      Dir d;
      d.dtau = num / den;
      d.dxF = d0.dxF + d.dtau * d1.dxF;
      d.dxC = d0.dxC + d.dtau * d1.dxC;
      d.dy = d0.dy + d.dtau * d1.dy;
      d.ds = d0.dsC + d.dtau * d1.dsC;
      d.dkappa = (p5 - z.kappa * d.dtau) / z.tau;
      return d;
    };
    auto step_length = [&](const Dir& d, VectorXd& sdx, VectorXd& sds) {
      sdx = K.scale_primal(d.dxC);
      sds = K.scale_dual(d.ds);
      double a = std::min(K.max_step(sdx), K.max_step(sds));
      if (d.dtau < 0) a = std::min(a, -z.tau / d.dtau);
      if (d.dkappa < 0) a = std::min(a, -z.kappa / d.dkappa);
      return a;
    };

    // Predictor
    const Dir aff = direction(1.0, -z.xC, -z.tau * z.kappa);
    VectorXd sdx_a, sds_a;
    const double alpha_aff = std::min(1.0, step_length(aff, sdx_a, sds_a));
    double sigma = std::pow(1.0 - alpha_aff, 3);
    sigma = std::clamp(sigma, sigma_min, 1.0);

    // Corrector
    const VectorXd lam2 = K.jordan(K.lambda, K.lambda);
    const VectorXd rc = sigma * mu * e - lam2 - K.jordan(sdx_a, sds_a);
    const VectorXd p4 = K.unscale_to_primal(K.lambda_divide(rc));
    const double p5 = sigma * mu - z.tau * z.kappa - aff.dtau * aff.dkappa;
    const Dir dir = direction(1.0 - sigma, p4, p5);
    VectorXd sdx, sds;
    const double amax = step_length(dir, sdx, sds);
    const double alpha = std::min(1.0, 0.99 * amax);
    if (!std::isfinite(alpha) || alpha < 1e-10 || !dir.dxC.allFinite() || !dir.dy.allFinite()) {
      stop_reason = "step length too small";
      break;
    }
    z.xF += alpha * dir.dxF;
    z.xC += alpha * dir.dxC;
    z.y += alpha * dir.dy;
    z.s += alpha * dir.ds;
    z.tau += alpha * dir.dtau;
    z.kappa += alpha * dir.dkappa;
  }

  const Metrics& mt = best_mt;
  if (mt.pres <= settings.near_feas_tol && mt.dres <= settings.near_feas_tol && mt.gap <= settings.near_gap_tol)
    return finish(best, SolveStatus::NearOptimal, mt, iter, stop_reason);
  {
    // Weak certificates at the last iterate.
    const Metrics last = evaluate(z);
    if (last.pinf <= settings.near_feas_tol && z.kappa > z.tau)
      return finish(z, SolveStatus::Infeasible, last, iter, stop_reason + "; approximate infeasibility certificate");
    if (last.dinf <= settings.near_feas_tol && z.kappa > z.tau)
      return finish(z, SolveStatus::Unbounded, last, iter, stop_reason + "; approximate unboundedness certificate");
  }
  return finish(best, SolveStatus::Failed, mt, iter, stop_reason);
}

}  // namespace

std::unique_ptr<Backend> make_hsd_backend() { return std::make_unique<HsdBackend>(); }

}  // namespace shapesos::conic

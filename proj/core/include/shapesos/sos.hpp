#pragma once

// Compilation of polynomial positivity statements into conic constraints.
//
//   putinar_encode:      p(x) = s_0(x) + sum_i g_i(x) s_i(x),  s_i SOS
//   scherer_hol_encode:  H(x) = S_0(x) + sum_i g_i(x) S_i(x),  S_i SOS matrices
//
// g_i are the box polynomials. Multipliers s_i (i >= 1) have degree 2r and
// s_0 has degree 2 rbar = max(2r + 2, deg p rounded up to even). A Gram
// matrix Q over the monomial vector z represents z^T Q z; for matrices the
// vector is w = y (x) z (y-major) and S(x)_kl = sum_ab Q[(k,a),(l,b)] z_a z_b.

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "shapesos/conic.hpp"
#include "shapesos/poly.hpp"

namespace shapesos::sos {

using conic::ConicProgram;
using conic::ConicSolution;
using conic::Term;
using conic::VarRef;

// constant + sum(coef * var)
struct AffineExpr {
  double constant = 0.0;
  std::vector<Term> terms;

  double evaluate(const ConicSolution& sol) const;
  AffineExpr& operator+=(const AffineExpr& o);
  AffineExpr& operator*=(double s);
};

// Polynomial whose coefficients are affine in program variables.
class AffinePoly {
 public:
  AffinePoly() : AffinePoly(1, 0) {}
  AffinePoly(int num_vars, int max_degree);

  static AffinePoly constant(const poly::Polynomial& p);
  // Coefficient k is the program variable vars[k].
  static AffinePoly from_vars(poly::BasisPtr basis, std::span<const VarRef> vars);

  int num_vars() const { return basis_->num_vars(); }
  int basis_degree() const { return basis_->max_degree(); }
  const poly::BasisPtr& basis() const { return basis_; }
  std::size_t size() const { return coeffs_.size(); }
  AffineExpr& coeff(std::size_t k) { return coeffs_[k]; }
  const AffineExpr& coeff(std::size_t k) const { return coeffs_[k]; }

  AffinePoly with_degree(int max_degree) const;  // pads only
  AffinePoly derivative(int var) const;

  AffinePoly& operator+=(const AffinePoly& o);
  AffinePoly& operator-=(const AffinePoly& o);
  AffinePoly& operator+=(const poly::Polynomial& p);
  AffinePoly& operator-=(const poly::Polynomial& p);
  AffinePoly& operator*=(double s);
  friend AffinePoly operator-(AffinePoly a) { return a *= -1.0; }

  poly::Polynomial evaluate(const ConicSolution& sol) const;

 private:
  poly::BasisPtr basis_;
  std::vector<AffineExpr> coeffs_;
};

// Symmetric matrix of affine polynomials.
class AffinePolyMatrix {
 public:
  AffinePolyMatrix() = default;
  AffinePolyMatrix(int size, int num_vars, int max_degree);

  static AffinePolyMatrix hessian(const AffinePoly& p);
  // Constant matrix times the constant polynomial.
  static AffinePolyMatrix constant(const Eigen::MatrixXd& m, int num_vars);

  int size() const { return size_; }
  int num_vars() const { return entries_.empty() ? 1 : entries_.front().num_vars(); }
  int basis_degree() const;
  const AffinePoly& operator()(int i, int j) const { return entries_[index(i, j)]; }
  void set(int i, int j, AffinePoly p) { entries_[index(i, j)] = std::move(p); }

  AffinePolyMatrix submatrix(std::span<const int> idx) const;
  AffinePolyMatrix& operator+=(const AffinePolyMatrix& o);
  AffinePolyMatrix& operator-=(const AffinePolyMatrix& o);
  AffinePolyMatrix& operator*=(double s);

  poly::PolyMatrix evaluate(const ConicSolution& sol) const;

 private:
  std::size_t index(int i, int j) const;
  int size_ = 0;
  std::vector<AffinePoly> entries_;
};

enum class GramKind { PSD, DD, SDD };

const char* to_string(GramKind kind);

struct GramOptions {
  GramKind kind = GramKind::PSD;
  // Optional congruence Q = U D U per Gram block (s_0 first, then s_1..s_n);
  // empty means U = I. Used with DD/SDD to search around an incumbent.
  std::vector<Eigen::MatrixXd> congruence;
  // Without box multipliers (global positivity): s_0 alone, of degree
  // deg p rounded up to even.
  bool global = false;
};

// One Gram matrix of the certificate and how it is parametrized in the
// program.
struct GramBlock {
  poly::BasisPtr z;               // x-monomials of degree <= half_degree
  int y_dim = 0;                  // 0 for scalar multipliers, t for t x t matrices
  poly::Polynomial multiplier;    // 1 for s_0, g_i otherwise
  GramKind kind = GramKind::PSD;
  conic::BlockId psd;             // PSD parametrization
  // Restricted parametrization: Q = sum_v x_v F_v with F_v = sum of outer products.
  struct Generator {
    VarRef var;
    Eigen::VectorXd u1, u2;       // F = (u1 u2^T + u2 u1^T) / 2
  };
  std::vector<Generator> generators;

  int size() const;
  Eigen::MatrixXd gram(const ConicSolution& sol) const;
};

struct IdentityConstraint {
  std::string label;
  int matrix_size = 0;              // 0 for scalar identities
  AffinePoly target;                // scalar case
  AffinePolyMatrix target_matrix;   // matrix case
  poly::Box box;
  int r = 0;
  int match_degree = 0;
  std::vector<GramBlock> blocks;
  int first_row = 0;
  int num_rows = 0;
};

// Numerical certificate: Gram matrices, multipliers and the target they
// reproduce, all in the coordinates of the encoded box.
struct Certificate {
  std::string label;
  int matrix_size = 0;
  poly::Polynomial target;
  poly::PolyMatrix target_matrix;
  poly::Box box;
  std::vector<Eigen::MatrixXd> grams;
  std::vector<poly::Polynomial> multipliers;
  std::vector<int> half_degrees;

  int num_vars() const { return box.dim(); }
  // Sum of the multiplier terms at x (1 x 1 for scalar certificates).
  Eigen::MatrixXd decomposition(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::MatrixXd target_at(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  double min_gram_eigenvalue() const;
};

// Half-degree of s_0 for target degree deg and multiplier half-degree r.
int balanced_half_degree(int target_degree, int r);

IdentityConstraint putinar_encode(const AffinePoly& target, const poly::Box& box, int r, ConicProgram& program,
                                  const GramOptions& options = {}, const std::string& label = "putinar");

IdentityConstraint scherer_hol_encode(const AffinePolyMatrix& target, const poly::Box& box, int r,
                                      ConicProgram& program, const GramOptions& options = {},
                                      const std::string& label = "scherer_hol");

// PSD acceptance: lambda_min >= -tol * (1 + trace).
inline constexpr double kGramPsdTolerance = 1e-7;

Certificate certificate_extract(const ConicSolution& solution, const IdentityConstraint& constraint);

}  // namespace shapesos::sos

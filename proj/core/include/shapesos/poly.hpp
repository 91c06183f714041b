#pragma once

// Dense multivariate polynomials over a graded-lexicographic monomial basis.
//
// Coefficient vectors are always ordered constant term first, then by total
// degree, and lexicographically (x1 before x2 ...) within a degree:
//   n = 2, d = 2:   1, x1, x2, x1^2, x1 x2, x2^2
// Because the order is graded, the basis of degree d is a prefix of the basis
// of degree d + 1, so changing the degree of a polynomial only pads or trims
// its coefficient vector.

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace shapesos::poly {

using Exponent = std::vector<int>;

std::size_t binomial(int n, int k);

class MonomialBasis {
 public:
  // Shared, cached instance for (n, d). Thread-safe.
  static std::shared_ptr<const MonomialBasis> make(int num_vars, int max_degree);

  // Number of monomials of degree <= d in n variables, binomial(n + d, d).
  static std::size_t count(int num_vars, int max_degree);

  // Position of an exponent in the (infinite) grlex order. Independent of d.
  static std::size_t rank(std::span<const int> exponent);

  int num_vars() const { return num_vars_; }
  int max_degree() const { return max_degree_; }
  std::size_t size() const { return exponents_.size(); }

  const Exponent& operator[](std::size_t k) const { return exponents_[k]; }
  const std::vector<Exponent>& exponents() const { return exponents_; }
  int total_degree(std::size_t k) const { return totals_[k]; }

  // Throws DimensionMismatch when the exponent is not in this basis.
  std::size_t index_of(std::span<const int> exponent) const;

  // Values of every monomial at x, in basis order.
  Eigen::VectorXd evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  MonomialBasis(int num_vars, int max_degree);

 private:
  int num_vars_;
  int max_degree_;
  std::vector<Exponent> exponents_;
  std::vector<int> totals_;
};

using BasisPtr = std::shared_ptr<const MonomialBasis>;

std::shared_ptr<const MonomialBasis> monomial_basis(int num_vars, int max_degree);

class Polynomial {
 public:
  Polynomial();  // zero polynomial in one variable
  Polynomial(int num_vars, int max_degree);  // zero polynomial
  Polynomial(BasisPtr basis, Eigen::VectorXd coeffs);

  static Polynomial constant(int num_vars, double value);
  static Polynomial variable(int num_vars, int index);
  static Polynomial monomial(const Exponent& exponent, double coef = 1.0);

  int num_vars() const { return basis_->num_vars(); }
  // Degree of the storage basis (an upper bound on degree()).
  int basis_degree() const { return basis_->max_degree(); }
  // Highest total degree carrying a nonzero coefficient; 0 for constants.
  int degree() const;

  const BasisPtr& basis() const { return basis_; }
  const Eigen::VectorXd& coeffs() const { return coeffs_; }
  Eigen::VectorXd& coeffs() { return coeffs_; }
  std::size_t size() const { return static_cast<std::size_t>(coeffs_.size()); }

  double coeff(std::span<const int> exponent) const;

  double operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  // Same polynomial stored in the degree-d basis. Throws when trimming would
  // drop a nonzero coefficient.
  Polynomial with_degree(int max_degree) const;

  Polynomial derivative(int var) const;

  // p(diag(scale) t + shift) as a polynomial in t.
  Polynomial compose_affine(const Eigen::VectorXd& scale, const Eigen::VectorXd& shift) const;

  Polynomial& operator+=(const Polynomial& other);
  Polynomial& operator-=(const Polynomial& other);
  Polynomial& operator*=(double s);

  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }
  friend Polynomial operator*(Polynomial a, double s) { return a *= s; }
  friend Polynomial operator*(double s, Polynomial a) { return a *= s; }
  friend Polynomial operator*(const Polynomial& a, const Polynomial& b);

 private:
  BasisPtr basis_;
  Eigen::VectorXd coeffs_;
};

Polynomial poly_mul(const Polynomial& p, const Polynomial& q);

// Symmetric t x t matrix of polynomials.
class PolyMatrix {
 public:
  PolyMatrix() = default;
  PolyMatrix(int size, int num_vars, int max_degree);

  int size() const { return size_; }
  int num_vars() const;
  const Polynomial& operator()(int i, int j) const { return entries_[index(i, j)]; }
  // Sets both (i, j) and (j, i).
  void set(int i, int j, Polynomial p);

  Eigen::MatrixXd operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const;

 private:
  std::size_t index(int i, int j) const;
  int size_ = 0;
  std::vector<Polynomial> entries_;  // upper triangle, row-major
};

std::vector<Polynomial> gradient(const Polynomial& p);
PolyMatrix hessian(const Polynomial& p);

class Box {
 public:
  Box() = default;
  Box(Eigen::VectorXd lower, Eigen::VectorXd upper);
  static Box unit(int n);       // [0, 1]^n
  static Box symmetric(int n);  // [-1, 1]^n

  int dim() const { return static_cast<int>(lower_.size()); }
  const Eigen::VectorXd& lower() const { return lower_; }
  const Eigen::VectorXd& upper() const { return upper_; }
  Eigen::VectorXd center() const { return 0.5 * (lower_ + upper_); }
  Eigen::VectorXd half_width() const { return 0.5 * (upper_ - lower_); }
  bool contains(const Eigen::Ref<const Eigen::VectorXd>& x, double slack = 0.0) const;

 private:
  Eigen::VectorXd lower_;
  Eigen::VectorXd upper_;
};

// g_i(x) = (u_i - x_i)(x_i - l_i), one per coordinate.
std::vector<Polynomial> box_polys(const Box& box);

// Text form:
//   n=<n> d=<d> order=grlex
//   e1,e2,...,en<TAB>coefficient     (one line per basis monomial)
void write_text(std::ostream& os, const Polynomial& p);
Polynomial read_text(std::istream& is);

}  // namespace shapesos::poly

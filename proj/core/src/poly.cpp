#include "shapesos/poly.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "shapesos/errors.hpp"

namespace shapesos::poly {

std::size_t binomial(int n, int k) {
  if (k < 0 || n < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::size_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::size_t>(n - k + i) / static_cast<std::size_t>(i);
  return r;
}

namespace {

void enumerate_degree(int n, int total, int pos, Exponent& cur, std::vector<Exponent>& out) {
  if (pos == n - 1) {
    cur[pos] = total;
    out.push_back(cur);
    return;
  }
  for (int v = total; v >= 0; --v) {
    cur[pos] = v;
    enumerate_degree(n, total - v, pos + 1, cur, out);
  }
}

}  // namespace

MonomialBasis::MonomialBasis(int num_vars, int max_degree) : num_vars_(num_vars), max_degree_(max_degree) {
  if (num_vars < 1) throw ValidationError("monomial basis needs at least one variable");
  if (max_degree < 0) throw ValidationError("monomial basis degree must be nonnegative");
  exponents_.reserve(count(num_vars, max_degree));
  Exponent cur(static_cast<std::size_t>(num_vars), 0);
  for (int k = 0; k <= max_degree; ++k) enumerate_degree(num_vars, k, 0, cur, exponents_);
  totals_.reserve(exponents_.size());
  for (const auto& e : exponents_) totals_.push_back(std::accumulate(e.begin(), e.end(), 0));
}

std::size_t MonomialBasis::count(int num_vars, int max_degree) {
  return binomial(num_vars + max_degree, max_degree);
}

std::size_t MonomialBasis::rank(std::span<const int> e) {
  const int n = static_cast<int>(e.size());
  int total = 0;
  for (int v : e) total += v;
  std::size_t r = total == 0 ? 0 : binomial(n + total - 1, n);
  int rem = total;
  for (int i = 0; i + 1 < n; ++i) {
    const int tail = n - i - 2;
    for (int v = rem; v > e[i]; --v) r += binomial(rem - v + tail, tail);
    rem -= e[i];
  }
  return r;
}

std::size_t MonomialBasis::index_of(std::span<const int> exponent) const {
  if (static_cast<int>(exponent.size()) != num_vars_)
    throw DimensionMismatch("exponent length does not match basis variable count");
  int total = 0;
  for (int v : exponent) {
    if (v < 0) throw DimensionMismatch("negative exponent");
    total += v;
  }
  if (total > max_degree_) throw DimensionMismatch("exponent exceeds basis degree");
  return rank(exponent);
}

Eigen::VectorXd MonomialBasis::evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != num_vars_) throw DimensionMismatch("point dimension does not match polynomial");
  // powers(i, k) = x_i^k
  Eigen::MatrixXd powers(num_vars_, max_degree_ + 1);
  for (int i = 0; i < num_vars_; ++i) {
    powers(i, 0) = 1.0;
    for (int k = 1; k <= max_degree_; ++k) powers(i, k) = powers(i, k - 1) * x[i];
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(size()));
  for (std::size_t k = 0; k < exponents_.size(); ++k) {
    double v = 1.0;
    const auto& e = exponents_[k];
    for (int i = 0; i < num_vars_; ++i)
      if (e[i] != 0) v *= powers(i, e[i]);
    out[static_cast<Eigen::Index>(k)] = v;
  }
  return out;
}

std::shared_ptr<const MonomialBasis> MonomialBasis::make(int num_vars, int max_degree) {
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::shared_ptr<const MonomialBasis>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{num_vars, max_degree}];
  if (!slot) slot = std::make_shared<const MonomialBasis>(num_vars, max_degree);
  return slot;
}

std::shared_ptr<const MonomialBasis> monomial_basis(int num_vars, int max_degree) {
  return MonomialBasis::make(num_vars, max_degree);
}

// ---------------------------------------------------------------------------

Polynomial::Polynomial() : Polynomial(1, 0) {}

Polynomial::Polynomial(int num_vars, int max_degree)
    : basis_(MonomialBasis::make(num_vars, max_degree)),
      coeffs_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis_->size()))) {}

Polynomial::Polynomial(BasisPtr basis, Eigen::VectorXd coeffs) : basis_(std::move(basis)), coeffs_(std::move(coeffs)) {
  if (!basis_) throw ValidationError("polynomial needs a basis");
  if (static_cast<std::size_t>(coeffs_.size()) != basis_->size())
    throw DimensionMismatch("coefficient vector length does not match basis size");
}

Polynomial Polynomial::constant(int num_vars, double value) {
  Polynomial p(num_vars, 0);
  p.coeffs_[0] = value;
  return p;
}

Polynomial Polynomial::variable(int num_vars, int index) {
  if (index < 0 || index >= num_vars) throw DimensionMismatch("variable index out of range");
  Polynomial p(num_vars, 1);
  p.coeffs_[1 + index] = 1.0;
  return p;
}

Polynomial Polynomial::monomial(const Exponent& exponent, double coef) {
  const int total = std::accumulate(exponent.begin(), exponent.end(), 0);
  Polynomial p(static_cast<int>(exponent.size()), total);
  p.coeffs_[static_cast<Eigen::Index>(p.basis_->index_of(exponent))] = coef;
  return p;
}

int Polynomial::degree() const {
  for (Eigen::Index k = coeffs_.size() - 1; k >= 0; --k)
    if (coeffs_[k] != 0.0) return basis_->total_degree(static_cast<std::size_t>(k));
  return 0;
}

double Polynomial::coeff(std::span<const int> exponent) const {
  int total = 0;
  for (int v : exponent) total += v;
  if (static_cast<int>(exponent.size()) != num_vars()) throw DimensionMismatch("exponent length mismatch");
  if (total > basis_degree()) return 0.0;
  return coeffs_[static_cast<Eigen::Index>(basis_->index_of(exponent))];
}

double Polynomial::operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return coeffs_.dot(basis_->evaluate(x));
}

Polynomial Polynomial::with_degree(int max_degree) const {
  if (max_degree == basis_degree()) return *this;
  auto target = MonomialBasis::make(num_vars(), max_degree);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(target->size()));
  const Eigen::Index keep = std::min<Eigen::Index>(c.size(), coeffs_.size());
  c.head(keep) = coeffs_.head(keep);
  for (Eigen::Index k = keep; k < coeffs_.size(); ++k)
    if (coeffs_[k] != 0.0) throw DegreeMismatch("cannot lower polynomial degree below its actual degree");
  return Polynomial(std::move(target), std::move(c));
}

Polynomial Polynomial::derivative(int var) const {
  if (var < 0 || var >= num_vars()) throw DimensionMismatch("derivative variable out of range");
  const int d = std::max(0, basis_degree() - 1);
  Polynomial out(num_vars(), d);
  Exponent e;
  for (std::size_t k = 0; k < basis_->size(); ++k) {
    const double c = coeffs_[static_cast<Eigen::Index>(k)];
    const auto& ek = (*basis_)[k];
    if (c == 0.0 || ek[var] == 0) continue;
    e = ek;
    e[var] -= 1;
    out.coeffs_[static_cast<Eigen::Index>(out.basis_->index_of(e))] += c * ek[var];
  }
  return out;
}

Polynomial Polynomial::compose_affine(const Eigen::VectorXd& scale, const Eigen::VectorXd& shift) const {
  const int n = num_vars();
  if (scale.size() != n || shift.size() != n) throw DimensionMismatch("affine map dimension mismatch");
  // (a t + b)^k expanded once per variable and degree.
  const int d = basis_degree();
  std::vector<std::vector<std::vector<double>>> expand(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& rows = expand[static_cast<std::size_t>(i)];
    rows.resize(static_cast<std::size_t>(d + 1));
    rows[0] = {1.0};
    for (int k = 1; k <= d; ++k) {
      const auto& prev = rows[static_cast<std::size_t>(k - 1)];
      std::vector<double> next(static_cast<std::size_t>(k + 1), 0.0);
      for (int j = 0; j < k; ++j) {
        next[static_cast<std::size_t>(j)] += prev[static_cast<std::size_t>(j)] * shift[i];
        next[static_cast<std::size_t>(j + 1)] += prev[static_cast<std::size_t>(j)] * scale[i];
      }
      rows[static_cast<std::size_t>(k)] = std::move(next);
    }
  }
  Polynomial out(n, d);
  Exponent e(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < basis_->size(); ++k) {
    const double c = coeffs_[static_cast<Eigen::Index>(k)];
    if (c == 0.0) continue;
    const auto& ek = (*basis_)[k];
    // Iterate over the tensor product of the per-variable expansions.
    std::vector<int> j(static_cast<std::size_t>(n), 0);
    while (true) {
      double v = c;
      for (int i = 0; i < n; ++i) {
        v *= expand[static_cast<std::size_t>(i)][static_cast<std::size_t>(ek[i])][static_cast<std::size_t>(j[i])];
        e[static_cast<std::size_t>(i)] = j[i];
      }
      if (v != 0.0) out.coeffs_[static_cast<Eigen::Index>(out.basis_->index_of(e))] += v;
      int i = 0;
      while (i < n && ++j[i] > ek[i]) j[i++] = 0;
      if (i == n) break;
    }
  }
  return out;
}

Polynomial& Polynomial::operator+=(const Polynomial& other) {
  if (other.num_vars() != num_vars()) throw DimensionMismatch("adding polynomials in different variables");
  if (other.basis_degree() > basis_degree()) *this = with_degree(other.basis_degree());
  coeffs_.head(other.coeffs_.size()) += other.coeffs_;
  return *this;
}

Polynomial& Polynomial::operator-=(const Polynomial& other) {
  if (other.num_vars() != num_vars()) throw DimensionMismatch("subtracting polynomials in different variables");
  if (other.basis_degree() > basis_degree()) *this = with_degree(other.basis_degree());
  coeffs_.head(other.coeffs_.size()) -= other.coeffs_;
  return *this;
}

Polynomial& Polynomial::operator*=(double s) {
  coeffs_ *= s;
  return *this;
}

Polynomial operator*(const Polynomial& a, const Polynomial& b) {
  if (a.num_vars() != b.num_vars()) throw DimensionMismatch("multiplying polynomials in different variables");
  const int n = a.num_vars();
  Polynomial out(n, a.basis_degree() + b.basis_degree());
  Exponent e(static_cast<std::size_t>(n));
  const auto& ba = *a.basis();
  const auto& bb = *b.basis();
  for (std::size_t i = 0; i < ba.size(); ++i) {
    const double ca = a.coeffs()[static_cast<Eigen::Index>(i)];
    if (ca == 0.0) continue;
    for (std::size_t j = 0; j < bb.size(); ++j) {
      const double cb = b.coeffs()[static_cast<Eigen::Index>(j)];
      if (cb == 0.0) continue;
      for (int k = 0; k < n; ++k) e[static_cast<std::size_t>(k)] = ba[i][k] + bb[j][k];
      out.coeffs()[static_cast<Eigen::Index>(MonomialBasis::rank(e))] += ca * cb;
    }
  }
  return out;
}

Polynomial poly_mul(const Polynomial& p, const Polynomial& q) { return p * q; }

// ---------------------------------------------------------------------------

PolyMatrix::PolyMatrix(int size, int num_vars, int max_degree) : size_(size) {
  if (size < 0) throw ValidationError("negative matrix size");
  entries_.assign(static_cast<std::size_t>(size * (size + 1) / 2), Polynomial(num_vars, max_degree));
}

int PolyMatrix::num_vars() const { return entries_.empty() ? 0 : entries_.front().num_vars(); }

std::size_t PolyMatrix::index(int i, int j) const {
  if (i < 0 || j < 0 || i >= size_ || j >= size_) throw DimensionMismatch("matrix index out of range");
  if (i > j) std::swap(i, j);
  // row-major upper triangle
  return static_cast<std::size_t>(i * size_ - i * (i - 1) / 2 + (j - i));
}

void PolyMatrix::set(int i, int j, Polynomial p) { entries_[index(i, j)] = std::move(p); }

Eigen::MatrixXd PolyMatrix::operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  Eigen::MatrixXd m(size_, size_);
  for (int i = 0; i < size_; ++i)
    for (int j = i; j < size_; ++j) m(i, j) = m(j, i) = (*this)(i, j)(x);
  return m;
}

std::vector<Polynomial> gradient(const Polynomial& p) {
  std::vector<Polynomial> g;
  g.reserve(static_cast<std::size_t>(p.num_vars()));
  for (int i = 0; i < p.num_vars(); ++i) g.push_back(p.derivative(i));
  return g;
}

PolyMatrix hessian(const Polynomial& p) {
  const int n = p.num_vars();
  PolyMatrix h(n, n, std::max(0, p.basis_degree() - 2));
  for (int i = 0; i < n; ++i) {
    const Polynomial di = p.derivative(i);
    for (int j = i; j < n; ++j) h.set(i, j, di.derivative(j));
  }
  return h;
}

// ---------------------------------------------------------------------------

Box::Box(Eigen::VectorXd lower, Eigen::VectorXd upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
  if (lower_.size() != upper_.size()) throw DimensionMismatch("box bounds have different lengths");
  if (lower_.size() == 0) throw ValidationError("box must have at least one coordinate");
  for (Eigen::Index i = 0; i < lower_.size(); ++i) {
    if (!std::isfinite(lower_[i]) || !std::isfinite(upper_[i]))
      throw ValidationError("box bounds must be finite");
    if (!(lower_[i] < upper_[i])) throw ValidationError("box must be full-dimensional (lower < upper)");
  }
}

Box Box::unit(int n) { return Box(Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n)); }
Box Box::symmetric(int n) { return Box(-Eigen::VectorXd::Ones(n), Eigen::VectorXd::Ones(n)); }

bool Box::contains(const Eigen::Ref<const Eigen::VectorXd>& x, double slack) const {
  if (x.size() != lower_.size()) throw DimensionMismatch("point dimension does not match box");
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (x[i] < lower_[i] - slack || x[i] > upper_[i] + slack) return false;
  return true;
}

std::vector<Polynomial> box_polys(const Box& box) {
  const int n = box.dim();
  std::vector<Polynomial> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double l = box.lower()[i];
    const double u = box.upper()[i];
    Polynomial g(n, 2);
    Exponent e(static_cast<std::size_t>(n), 0);
    g.coeffs()[0] = -u * l;
    e[static_cast<std::size_t>(i)] = 1;
    g.coeffs()[static_cast<Eigen::Index>(g.basis()->index_of(e))] = u + l;
    e[static_cast<std::size_t>(i)] = 2;
    g.coeffs()[static_cast<Eigen::Index>(g.basis()->index_of(e))] = -1.0;
    out.push_back(std::move(g));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("cannot parse number '" + std::string(s) + "'");
  return v;
}

int parse_int(std::string_view s) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("cannot parse integer '" + std::string(s) + "'");
  return v;
}

}  // namespace

void write_text(std::ostream& os, const Polynomial& p) {
  os << "n=" << p.num_vars() << " d=" << p.basis_degree() << " order=grlex\n";
  const auto& b = *p.basis();
  for (std::size_t k = 0; k < b.size(); ++k) {
    for (int i = 0; i < p.num_vars(); ++i) {
      if (i) os << ',';
      os << b[k][i];
    }
    os << '\t' << format_double(p.coeffs()[static_cast<Eigen::Index>(k)]) << '\n';
  }
}

Polynomial read_text(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw ValidationError("missing polynomial header");
  int n = -1;
  int d = -1;
  std::string order;
  std::istringstream hs(header);
  std::string tok;
  while (hs >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ValidationError("malformed polynomial header: " + header);
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "n") n = parse_int(val);
    else if (key == "d") d = parse_int(val);
    else if (key == "order") order = val;
  }
  if (n < 1 || d < 0 || order != "grlex") throw ValidationError("unsupported polynomial header: " + header);
  Polynomial p(n, d);
  const auto& b = *p.basis();
  Exponent e(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < b.size(); ++k) {
    std::string line;
    if (!std::getline(is, line)) throw ValidationError("polynomial text truncated");
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ValidationError("polynomial line missing tab: " + line);
    std::string_view ev(line.data(), tab);
    int i = 0;
    std::size_t start = 0;
    while (start <= ev.size()) {
      const auto comma = ev.find(',', start);
      const auto part = ev.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      if (i >= n) throw ValidationError("exponent vector too long: " + line);
      e[static_cast<std::size_t>(i++)] = parse_int(part);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (i != n) throw ValidationError("exponent vector too short: " + line);
    const double c = parse_double(std::string_view(line).substr(tab + 1));
    p.coeffs()[static_cast<Eigen::Index>(b.index_of(e))] = c;
  }
  return p;
}

}  // namespace shapesos::poly

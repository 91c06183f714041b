#include "shapesos/model_io.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "shapesos/errors.hpp"

namespace shapesos::io {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using poly::Polynomial;

namespace {

std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void write_vec(std::ostream& os, const char* key, const VectorXd& v) {
  os << key;
  for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << num(v[i]);
  os << '\n';
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  // Next nonblank line split on whitespace; the raw line is kept.
  std::vector<std::string> next() {
    while (std::getline(is_, raw_)) {
      ++line_;
      std::istringstream ls(raw_);
      std::vector<std::string> tok;
      for (std::string t; ls >> t;) tok.push_back(t);
      if (!tok.empty()) return tok;
    }
    fail("unexpected end of file");
  }

  std::vector<std::string> expect(const std::string& key, std::size_t min_tokens = 1) {
    auto tok = next();
    if (tok[0] != key) fail("expected '" + key + "', found '" + tok[0] + "'");
    if (tok.size() < min_tokens) fail("too few values after '" + key + "'");
    return tok;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError("model file line " + std::to_string(line_) + ": " + what);
  }

  double real(const std::string& s) const {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') fail("not a number: '" + s + "'");
    return v;
  }

  long integer(const std::string& s) const {
    char* end = nullptr;
    const long v = std::strtol(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0') fail("not an integer: '" + s + "'");
    return v;
  }

  VectorXd reals(const std::vector<std::string>& tok, std::size_t from, std::size_t count) const {
    if (tok.size() != from + count) fail("expected " + std::to_string(count) + " values");
    VectorXd v(static_cast<Eigen::Index>(count));
    for (std::size_t k = 0; k < count; ++k) v[static_cast<Eigen::Index>(k)] = real(tok[from + k]);
    return v;
  }

  // text after the first token and one separator
  std::string rest() const {
    const auto start = raw_.find_first_not_of(" \t");
    const auto sep = raw_.find_first_of(" \t", start);
    if (sep == std::string::npos) return {};
    return raw_.substr(sep + 1);
  }

 private:
  std::istream& is_;
  std::string raw_;
  int line_ = 0;
};

// `head` is the already read "poly" line, if any
Polynomial read_poly(Reader& rd, std::vector<std::string> head = {}) {
  if (head.empty()) head = rd.expect("poly", 4);
  if (head[0] != "poly" || head.size() != 4) rd.fail("bad polynomial header");
  const int n = static_cast<int>(rd.integer(head[1]));
  const int deg = static_cast<int>(rd.integer(head[2]));
  const long count = rd.integer(head[3]);
  if (n < 1 || deg < 0 || count < 0) rd.fail("bad polynomial header");
  Polynomial p(n, deg);
  const auto& basis = *p.basis();
  for (long k = 0; k < count; ++k) {
    const auto tok = rd.next();
    if (tok.size() != static_cast<std::size_t>(n) + 1) rd.fail("expected exponent and coefficient");
    poly::Exponent e(static_cast<std::size_t>(n));
    int total = 0;
    for (int i = 0; i < n; ++i) {
      e[static_cast<std::size_t>(i)] = static_cast<int>(rd.integer(tok[static_cast<std::size_t>(i)]));
      if (e[static_cast<std::size_t>(i)] < 0) rd.fail("negative exponent");
      total += e[static_cast<std::size_t>(i)];
    }
    if (total > deg) rd.fail("exponent exceeds the basis degree");
    p.coeffs()[static_cast<Eigen::Index>(basis.index_of(e))] = rd.real(tok.back());
  }
  return p;
}

void write_box(std::ostream& os, const poly::Box& box) {
  write_vec(os, "lower", box.lower());
  write_vec(os, "upper", box.upper());
}

poly::Box read_box(Reader& rd, int n) {
  const auto lo = rd.expect("lower");
  const auto hi = rd.expect("upper");
  try {
    return poly::Box(rd.reals(lo, 1, static_cast<std::size_t>(n)), rd.reals(hi, 1, static_cast<std::size_t>(n)));
  } catch (const ValidationError& e) {
    rd.fail(e.what());
  }
}

void write_matrix(std::ostream& os, const MatrixXd& M) {
  os << "gram " << M.rows() << ' ' << M.cols() << '\n';
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) os << (j ? " " : "") << num(M(i, j));
    os << '\n';
  }
}

MatrixXd read_matrix(Reader& rd) {
  const auto head = rd.expect("gram", 3);
  const long r = rd.integer(head[1]), c = rd.integer(head[2]);
  if (r < 0 || c < 0) rd.fail("bad matrix size");
  MatrixXd M(r, c);
  for (long i = 0; i < r; ++i) M.row(i) = rd.reals(rd.next(), 0, static_cast<std::size_t>(c)).transpose();
  return M;
}

void write_certificate(std::ostream& os, const sos::Certificate& c) {
  os << "certificate " << c.label << '\n';
  os << "matrix_size " << c.matrix_size << '\n';
  write_box(os, c.box);
  if (c.matrix_size > 0) {
    for (int i = 0; i < c.matrix_size; ++i)
      for (int j = i; j < c.matrix_size; ++j) {
        os << "entry " << i << ' ' << j << '\n';
        write_polynomial(os, c.target_matrix(i, j));
      }
  } else {
    write_polynomial(os, c.target);
  }
  os << "blocks " << c.grams.size() << '\n';
  for (std::size_t k = 0; k < c.grams.size(); ++k) {
    os << "half_degree " << c.half_degrees[k] << '\n';
    write_polynomial(os, c.multipliers[k]);
    write_matrix(os, c.grams[k]);
  }
}

sos::Certificate read_certificate(Reader& rd, int n) {
  sos::Certificate c;
  rd.expect("certificate");
  c.label = rd.rest();
  c.matrix_size = static_cast<int>(rd.integer(rd.expect("matrix_size", 2)[1]));
  if (c.matrix_size < 0) rd.fail("bad matrix size");
  c.box = read_box(rd, n);
  if (c.matrix_size > 0) {
    bool first = true;
    for (int i = 0; i < c.matrix_size; ++i)
      for (int j = i; j < c.matrix_size; ++j) {
        const auto tok = rd.expect("entry", 3);
        if (rd.integer(tok[1]) != i || rd.integer(tok[2]) != j) rd.fail("matrix entries out of order");
        Polynomial p = read_poly(rd);
        if (first) {
          c.target_matrix = poly::PolyMatrix(c.matrix_size, n, p.basis_degree());
          first = false;
        }
        c.target_matrix.set(i, j, std::move(p));
      }
  } else {
    c.target = read_poly(rd);
  }
  const long blocks = rd.integer(rd.expect("blocks", 2)[1]);
  if (blocks < 0) rd.fail("bad block count");
  for (long k = 0; k < blocks; ++k) {
    c.half_degrees.push_back(static_cast<int>(rd.integer(rd.expect("half_degree", 2)[1])));
    c.multipliers.push_back(read_poly(rd));
    c.grams.push_back(read_matrix(rd));
  }
  return c;
}

est::ShapeKind shape_kind(const Reader& rd, const std::string& s) {
  for (auto k : {est::ShapeKind::None, est::ShapeKind::Convex, est::ShapeKind::BoundedDerivatives,
                 est::ShapeKind::HessianBand, est::ShapeKind::Partial})
    if (s == est::to_string(k)) return k;
  rd.fail("unknown shape '" + s + "'");
}

}  // namespace

void write_polynomial(std::ostream& os, const Polynomial& p) {
  const auto& basis = *p.basis();
  std::size_t count = 0;
  for (Eigen::Index k = 0; k < p.coeffs().size(); ++k) count += p.coeffs()[k] != 0.0;
  os << "poly " << p.num_vars() << ' ' << p.basis_degree() << ' ' << count << '\n';
  for (std::size_t k = 0; k < basis.size(); ++k) {
    const double c = p.coeffs()[static_cast<Eigen::Index>(k)];
    if (c == 0.0) continue;
    for (std::size_t i = 0; i < basis[k].size(); ++i) os << (i ? " " : "") << basis[k][i];
    os << '\t' << num(c) << '\n';
  }
}

Polynomial read_polynomial(std::istream& is) {
  Reader rd(is);
  return read_poly(rd);
}

void write_model(std::ostream& os, const est::FittedModel& m, bool with_certificates) {
  const int n = m.num_vars();
  os << "shapesos-model " << kModelFormatVersion << '\n';
  os << "vars " << n << '\n';
  os << "degree " << m.degree << '\n';
  os << "r " << m.r << '\n';
  os << "gram_kind " << m.gram_kind << '\n';
  os << "train_sse " << num(m.train_sse) << '\n';
  write_box(os, m.box);
  write_vec(os, "center", m.scaling.center);
  write_vec(os, "half_width", m.scaling.half_width);
  os << "shape " << est::to_string(m.shape.kind) << '\n';
  for (const auto& k : m.shape.K) os << "K " << num(k.lo) << ' ' << num(k.hi) << '\n';
  if (m.shape.kind == est::ShapeKind::HessianBand) os << "band " << num(m.shape.ell) << ' ' << num(m.shape.L) << '\n';
  for (const auto& b : m.shape.blocks) {
    os << "block " << b.sign;
    for (int c : b.coords) os << ' ' << c;
    os << '\n';
  }
  os << "provenance\n";
  os << "created " << m.provenance.created << '\n';
  os << "seed " << m.provenance.seed << '\n';
  os << "backend " << m.provenance.backend << '\n';
  os << "status " << m.provenance.status << '\n';
  os << "iterations " << m.provenance.iterations << '\n';
  os << "solve_seconds " << num(m.provenance.solve_seconds) << '\n';
  for (const auto& [k, v] : m.provenance.extra) os << "extra " << k << '\t' << v << '\n';
  write_polynomial(os, m.poly);
  const auto& certs = with_certificates ? m.certificates : std::vector<sos::Certificate>{};
  os << "certificates " << certs.size() << '\n';
  for (const auto& c : certs) write_certificate(os, c);
  os << "end\n";
}

void save_model(const std::filesystem::path& path, const est::FittedModel& model, bool with_certificates) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  write_model(out, model, with_certificates);
  if (!out) throw ValidationError("failed writing " + path.string());
}

est::FittedModel read_model(std::istream& is) {
  Reader rd(is);
  est::FittedModel m;
  const auto head = rd.expect("shapesos-model", 2);
  const long version = rd.integer(head[1]);
  if (version < 1 || version > kModelFormatVersion)
    rd.fail("unsupported model format version " + std::to_string(version));
  const int n = static_cast<int>(rd.integer(rd.expect("vars", 2)[1]));
  if (n < 1) rd.fail("vars must be positive");
  m.degree = static_cast<int>(rd.integer(rd.expect("degree", 2)[1]));
  m.r = static_cast<int>(rd.integer(rd.expect("r", 2)[1]));
  m.gram_kind = rd.expect("gram_kind", 2)[1];
  m.train_sse = rd.real(rd.expect("train_sse", 2)[1]);
  m.box = read_box(rd, n);
  m.scaling.center = rd.reals(rd.expect("center"), 1, static_cast<std::size_t>(n));
  m.scaling.half_width = rd.reals(rd.expect("half_width"), 1, static_cast<std::size_t>(n));
  if ((m.scaling.half_width.array() <= 0.0).any()) rd.fail("half widths must be positive");
  m.shape.kind = shape_kind(rd, rd.expect("shape", 2)[1]);
  std::vector<std::string> tok;
  for (;;) {
    tok = rd.next();
    if (tok[0] == "K") {
      const VectorXd v = rd.reals(tok, 1, 2);
      m.shape.K.push_back({v[0], v[1]});
    } else if (tok[0] == "band") {
      const VectorXd v = rd.reals(tok, 1, 2);
      m.shape.ell = v[0];
      m.shape.L = v[1];
    } else if (tok[0] == "block") {
      if (tok.size() < 3) rd.fail("block needs a sign and coordinates");
      est::CurvatureBlock b;
      b.sign = static_cast<int>(rd.integer(tok[1]));
      for (std::size_t k = 2; k < tok.size(); ++k) b.coords.push_back(static_cast<int>(rd.integer(tok[k])));
      m.shape.blocks.push_back(b);
    } else {
      break;
    }
  }
  try {
    m.shape.validate(n);
  } catch (const ValidationError& e) {
    rd.fail(e.what());
  }
  if (tok[0] != "provenance") rd.fail("expected 'provenance'");
  m.provenance.created = rd.expect("created").size() > 1 ? rd.rest() : "";
  m.provenance.seed = std::stoull(rd.expect("seed", 2)[1]);
  m.provenance.backend = rd.expect("backend").size() > 1 ? rd.rest() : "";
  m.provenance.status = rd.expect("status").size() > 1 ? rd.rest() : "";
  m.provenance.iterations = static_cast<int>(rd.integer(rd.expect("iterations", 2)[1]));
  m.provenance.solve_seconds = rd.real(rd.expect("solve_seconds", 2)[1]);
  for (;;) {
    tok = rd.next();
    if (tok[0] != "extra") break;
    const std::string rest = rd.rest();
    const auto tab = rest.find('\t');
    if (tab == std::string::npos) rd.fail("extra needs '<key>\\t<value>'");
    m.provenance.extra[rest.substr(0, tab)] = rest.substr(tab + 1);
  }
  m.poly = read_poly(rd, tok);
  if (m.poly.num_vars() != n) rd.fail("polynomial has the wrong number of variables");
  const long ncert = rd.integer(rd.expect("certificates", 2)[1]);
  if (ncert < 0) rd.fail("bad certificate count");
  for (long k = 0; k < ncert; ++k) m.certificates.push_back(read_certificate(rd, n));
  rd.expect("end");
  return m;
}

est::FittedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return read_model(in);
}

}  // namespace shapesos::io

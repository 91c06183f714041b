#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <ostream>

#include <Eigen/Dense>

#include "shapesos/conic.hpp"
#include "shapesos/errors.hpp"

namespace shapesos::conic {

const char* to_string(ConeKind kind) {
  switch (kind) {
    case ConeKind::Free: return "free";
    case ConeKind::Nonneg: return "nonneg";
    case ConeKind::SecondOrder: return "soc";
    case ConeKind::PSD: return "psd";
  }
  return "?";
}

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::NearOptimal: return "near_optimal";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::Failed: return "failed";
  }
  return "?";
}

BlockId ConicProgram::add_block(ConeKind kind, int dim, std::string label) {
  if (dim < 0) throw DimensionMismatch("block dimension must be nonnegative");
  if (kind == ConeKind::SecondOrder && dim < 1) throw DimensionMismatch("second-order cone needs dimension >= 1");
  blocks_.push_back(Block{kind, dim, std::move(label)});
  return BlockId{static_cast<int>(blocks_.size()) - 1};
}

BlockId ConicProgram::add_free(int dim, std::string label) { return add_block(ConeKind::Free, dim, std::move(label)); }
BlockId ConicProgram::add_nonneg(int dim, std::string label) {
  return add_block(ConeKind::Nonneg, dim, std::move(label));
}
BlockId ConicProgram::add_soc(int dim, std::string label) {
  return add_block(ConeKind::SecondOrder, dim, std::move(label));
}
BlockId ConicProgram::add_psd(int side, std::string label) { return add_block(ConeKind::PSD, side, std::move(label)); }

VarRef ConicProgram::checked(VarRef v) const {
  if (v.block < 0 || v.block >= num_blocks()) throw DimensionMismatch("reference to unknown block");
  const Block& b = blocks_[static_cast<std::size_t>(v.block)];
  if (v.i < 0 || v.i >= b.dim) throw DimensionMismatch("variable index out of range in block '" + b.label + "'");
  if (b.kind == ConeKind::PSD) {
    if (v.j < 0 || v.j >= b.dim) throw DimensionMismatch("PSD column out of range in block '" + b.label + "'");
    if (v.i > v.j) std::swap(v.i, v.j);
  } else if (v.j != 0) {
    throw DimensionMismatch("column index given for a vector block");
  }
  return v;
}

VarRef ConicProgram::var(BlockId block, int i) const {
  if (block.valid() && block.index < num_blocks() && blocks_[static_cast<std::size_t>(block.index)].kind == ConeKind::PSD)
    throw DimensionMismatch("PSD entries need two indices");
  return checked(VarRef{block.index, i, 0});
}

VarRef ConicProgram::entry(BlockId block, int i, int j) const { return checked(VarRef{block.index, i, j}); }

int ConicProgram::add_equality(std::span<const Term> terms, double rhs, std::string label) {
  if (!std::isfinite(rhs)) throw ValidationError("non-finite right-hand side");
  const int row = num_rows();
  for (const auto& t : terms) {
    if (!std::isfinite(t.coef)) throw ValidationError("non-finite coefficient in row " + std::to_string(row));
    if (t.coef == 0.0) continue;
    triplets_.push_back(Triplet{row, checked(t.var), t.coef});
  }
  rhs_.push_back(rhs);
  row_labels_.push_back(std::move(label));
  return row;
}

int ConicProgram::add_equality(std::initializer_list<Term> terms, double rhs, std::string label) {
  return add_equality(std::span<const Term>(terms.begin(), terms.size()), rhs, std::move(label));
}

int ConicProgram::add_greater_equal(std::span<const Term> terms, double rhs, std::string label) {
  const BlockId slack = add_nonneg(1, label.empty() ? std::string("slack") : label + ".slack");
  std::vector<Term> all(terms.begin(), terms.end());
  all.push_back(Term{VarRef{slack.index, 0, 0}, -1.0});
  return add_equality(all, rhs, std::move(label));
}

int ConicProgram::add_less_equal(std::span<const Term> terms, double rhs, std::string label) {
  const BlockId slack = add_nonneg(1, label.empty() ? std::string("slack") : label + ".slack");
  std::vector<Term> all(terms.begin(), terms.end());
  all.push_back(Term{VarRef{slack.index, 0, 0}, 1.0});
  return add_equality(all, rhs, std::move(label));
}

void ConicProgram::set_objective(std::span<const Term> terms, double constant) {
  objective_.clear();
  for (const auto& t : terms) add_objective(t.var, t.coef);
  objective_constant_ = constant;
}

void ConicProgram::add_objective(VarRef var, double coef) {
  if (!std::isfinite(coef)) throw ValidationError("non-finite objective coefficient");
  if (coef == 0.0) return;
  objective_.push_back(Term{checked(var), coef});
}

void ConicProgram::dump(std::ostream& os) const {
  os << "conic-program v1\n";
  os << "blocks " << blocks_.size() << '\n';
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    os << b << ' ' << to_string(blocks_[b].kind) << ' ' << blocks_[b].dim << ' '
       << (blocks_[b].label.empty() ? "-" : blocks_[b].label) << '\n';
  os << "objective " << objective_.size() << " constant " << objective_constant_ << '\n';
  os.precision(17);
  for (const auto& t : objective_) os << t.var.block << ' ' << t.var.i << ' ' << t.var.j << ' ' << t.coef << '\n';
  os << "rows " << rhs_.size() << '\n';
  for (std::size_t r = 0; r < rhs_.size(); ++r)
    os << r << ' ' << rhs_[r] << ' ' << (row_labels_[r].empty() ? "-" : row_labels_[r]) << '\n';
  os << "triplets " << triplets_.size() << '\n';
  for (const auto& t : triplets_)
    os << t.row << ' ' << t.var.block << ' ' << t.var.i << ' ' << t.var.j << ' ' << t.coef << '\n';
}

// ---------------------------------------------------------------------------

double ConicSolution::value(VarRef v) const {
  const auto b = static_cast<std::size_t>(v.block);
  const auto& vec = values.at(b);
  const int side = b < psd_sides.size() ? psd_sides[b] : 0;
  if (side > 0) return vec[static_cast<Eigen::Index>(v.j) * side + v.i];
  return vec[v.i];
}

Eigen::MatrixXd ConicSolution::matrix(BlockId b) const {
  const auto& vec = values.at(static_cast<std::size_t>(b.index));
  const auto side = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(vec.size()))));
  if (side * side != vec.size()) throw DimensionMismatch("block is not square");
  return Eigen::Map<const Eigen::MatrixXd>(vec.data(), side, side);
}

// ---------------------------------------------------------------------------

namespace {

double term_value(const ConicProgram& program, const ConicSolution& sol, VarRef v) {
  const Block& b = program.block(v.block);
  const auto& vec = sol.values[static_cast<std::size_t>(v.block)];
  if (b.kind == ConeKind::PSD) return vec[static_cast<Eigen::Index>(v.j) * b.dim + v.i];
  return vec[v.i];
}

struct Registry {
  std::mutex mutex;
  std::map<std::string, std::shared_ptr<const Backend>> backends;
  Registry() {
    std::shared_ptr<const Backend> hsd = make_hsd_backend();
    backends[hsd->name()] = hsd;
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_backend(std::shared_ptr<const Backend> backend) {
  if (!backend) throw ValidationError("null backend");
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.backends[backend->name()] = std::move(backend);
}

std::vector<std::string> backend_names() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> out;
  for (const auto& [name, _] : r.backends) out.push_back(name);
  return out;
}

AuditResult audit(const ConicProgram& program, const ConicSolution& sol, const SolverSettings& settings) {
  AuditResult res;
  if (sol.values.size() != program.blocks().size()) {
    res.passed = false;
    res.max_row_violation = INFINITY;
    return res;
  }
  std::vector<double> lhs(static_cast<std::size_t>(program.num_rows()), 0.0);
  for (const auto& t : program.triplets()) lhs[static_cast<std::size_t>(t.row)] += t.coef * term_value(program, sol, t.var);
  double bnorm = 0.0;
  for (int r = 0; r < program.num_rows(); ++r) {
    res.max_row_violation = std::max(res.max_row_violation, std::abs(lhs[static_cast<std::size_t>(r)] - program.rhs()[static_cast<std::size_t>(r)]));
    bnorm = std::max(bnorm, std::abs(program.rhs()[static_cast<std::size_t>(r)]));
  }
  for (int b = 0; b < program.num_blocks(); ++b) {
    const Block& blk = program.block(b);
    const auto& v = sol.values[static_cast<std::size_t>(b)];
    double viol = 0.0;
    switch (blk.kind) {
      case ConeKind::Free: break;
      case ConeKind::Nonneg:
        if (v.size() > 0) viol = std::max(0.0, -v.minCoeff());
        break;
      case ConeKind::SecondOrder:
        viol = std::max(0.0, v.tail(v.size() - 1).norm() - v[0]);
        break;
      case ConeKind::PSD:
        if (blk.dim > 0) {
          Eigen::MatrixXd m = Eigen::Map<const Eigen::MatrixXd>(v.data(), blk.dim, blk.dim);
          m = 0.5 * (m + m.transpose()).eval();
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
          viol = std::max(0.0, -es.eigenvalues()[0]);
        }
        break;
    }
    res.max_cone_violation = std::max(res.max_cone_violation, viol);
  }
  double obj = program.objective_constant();
  for (const auto& t : program.objective()) obj += t.coef * term_value(program, sol, t.var);
  res.objective_mismatch = std::abs(obj - sol.objective) / std::max(1.0, std::abs(obj));
  res.passed = res.max_row_violation <= settings.audit_row_tol * (1.0 + bnorm) &&
               res.max_cone_violation <= settings.audit_cone_tol && res.objective_mismatch <= 1e-8;
  return res;
}

ConicSolution solve(const ConicProgram& program, const SolverSettings& settings) {
  std::shared_ptr<const Backend> backend;
  {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    auto it = r.backends.find(settings.backend);
    if (it == r.backends.end()) throw SolverFailed("unknown conic backend '" + settings.backend + "'");
    backend = it->second;
  }
  const auto start = std::chrono::steady_clock::now();
  ConicSolution sol = backend->solve(program, settings);
  sol.psd_sides.assign(program.blocks().size(), 0);
  for (int b = 0; b < program.num_blocks(); ++b)
    if (program.block(b).kind == ConeKind::PSD) sol.psd_sides[static_cast<std::size_t>(b)] = program.block(b).dim;
  sol.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  sol.backend = backend->name();
  if (sol.status == SolveStatus::Optimal || sol.status == SolveStatus::NearOptimal) {
    const AuditResult a = audit(program, sol, settings);
    if (!a.passed && sol.status == SolveStatus::Optimal) {
      sol.status = SolveStatus::NearOptimal;
      sol.message += (sol.message.empty() ? "" : "; ") + std::string("audit failed: row ") +
                     std::to_string(a.max_row_violation) + ", cone " + std::to_string(a.max_cone_violation);
    }
  }
  return sol;
}

VarRef quad_epigraph(ConicProgram& program, const Eigen::MatrixXd& A, const Eigen::VectorXd& y,
                     std::span<const VarRef> theta, const std::string& label) {
  if (A.rows() != y.size()) throw DimensionMismatch("quad_epigraph: A and y row counts differ");
  if (A.cols() != static_cast<Eigen::Index>(theta.size()))
    throw DimensionMismatch("quad_epigraph: A columns and theta length differ");
  const Eigen::Index m = A.rows();
  const Eigen::Index p = A.cols();
  Eigen::MatrixXd R;
  Eigen::VectorXd target;
  double tail = 0.0;
  if (m > p) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
    const Eigen::VectorXd qty = qr.householderQ().transpose() * y;
    R = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
    target = qty.head(p);
    tail = qty.tail(m - p).norm();
  } else {
    R = A;
    target = y;
  }
  const auto k = static_cast<int>(R.rows());
  // (t, u_1..u_k, w) with u = R theta - target and w = ||Q2^T y|| fixed.
  const BlockId cone = program.add_soc(k + 2, label);
  std::vector<Term> terms;
  for (int i = 0; i < k; ++i) {
    terms.clear();
    terms.push_back(Term{VarRef{cone.index, i + 1, 0}, 1.0});
    for (Eigen::Index j = 0; j < p; ++j)
      if (R(i, j) != 0.0) terms.push_back(Term{theta[static_cast<std::size_t>(j)], -R(i, j)});
    program.add_equality(terms, -target[i], label + ".row");
  }
  program.add_equality({Term{VarRef{cone.index, k + 1, 0}, 1.0}}, tail, label + ".tail");
  return VarRef{cone.index, 0, 0};
}

}  // namespace shapesos::conic

#pragma once

// Standard-form conic programs
//
//   minimize    c^T x + c0
//   subject to  A x = b,   x in K = K_1 x ... x K_p
//
// where each K_j is a free block, a nonnegative orthant, a second-order cone
// {(t, u) : t >= ||u||} or a cone of positive semidefinite matrices.
//
// Linear terms refer to variables through VarRef. For PSD blocks a term with
// coefficient a on entry (i, j), i != j, contributes a * X_ij (and X_ij ==
// X_ji), so <A, X> with the symmetric A carrying a/2 at (i, j) and (j, i).

#include <chrono>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace shapesos::conic {

enum class ConeKind { Free, Nonneg, SecondOrder, PSD };

const char* to_string(ConeKind kind);

struct BlockId {
  int index = -1;
  bool valid() const { return index >= 0; }
  friend bool operator==(BlockId, BlockId) = default;
};

struct VarRef {
  int block = -1;
  int i = 0;
  int j = 0;  // column for PSD entries, 0 otherwise
};

struct Term {
  VarRef var;
  double coef = 0.0;
};

struct Block {
  ConeKind kind = ConeKind::Free;
  int dim = 0;   // side length for PSD blocks
  std::string label;
  // Number of scalar coordinates in the flattened (full-storage) layout.
  int flat_size() const { return kind == ConeKind::PSD ? dim * dim : dim; }
};

struct Triplet {
  int row;
  VarRef var;
  double coef;
};

class ConicProgram {
 public:
  BlockId add_free(int dim, std::string label = {});
  BlockId add_nonneg(int dim, std::string label = {});
  BlockId add_soc(int dim, std::string label = {});
  BlockId add_psd(int side, std::string label = {});
  BlockId add_block(ConeKind kind, int dim, std::string label = {});

  // Handles. Checked against the block shape.
  VarRef var(BlockId block, int i) const;
  VarRef entry(BlockId block, int i, int j) const;

  // Adds sum(terms) == rhs and returns the row index.
  int add_equality(std::span<const Term> terms, double rhs, std::string label = {});
  int add_equality(std::initializer_list<Term> terms, double rhs, std::string label = {});

  // sum(terms) >= rhs (or <=) through a fresh nonnegative slack.
  int add_greater_equal(std::span<const Term> terms, double rhs, std::string label = {});
  int add_less_equal(std::span<const Term> terms, double rhs, std::string label = {});

  void set_objective(std::span<const Term> terms, double constant = 0.0);
  void add_objective(VarRef var, double coef);
  void set_objective_constant(double c) { objective_constant_ = c; }

  int num_blocks() const { return static_cast<int>(blocks_.size()); }
  int num_rows() const { return static_cast<int>(rhs_.size()); }
  const Block& block(int b) const { return blocks_[static_cast<std::size_t>(b)]; }
  const Block& block(BlockId b) const { return block(b.index); }
  const std::vector<Block>& blocks() const { return blocks_; }
  const std::vector<Triplet>& triplets() const { return triplets_; }
  const std::vector<double>& rhs() const { return rhs_; }
  const std::vector<std::string>& row_labels() const { return row_labels_; }
  const std::vector<Term>& objective() const { return objective_; }
  double objective_constant() const { return objective_constant_; }

  // Self-describing text dump: cone list, objective and row triplets.
  void dump(std::ostream& os) const;

 private:
  VarRef checked(VarRef v) const;

  std::vector<Block> blocks_;
  std::vector<Triplet> triplets_;
  std::vector<double> rhs_;
  std::vector<std::string> row_labels_;
  std::vector<Term> objective_;
  double objective_constant_ = 0.0;
};

enum class SolveStatus { Optimal, NearOptimal, Infeasible, Unbounded, Failed };

const char* to_string(SolveStatus status);

struct SolverSettings {
  std::string backend = "hsd";
  double feas_tol = 1e-8;
  double gap_tol = 1e-8;
  int max_iters = 200;
  // Relaxed tolerances that still qualify a stalled run as NearOptimal.
  double near_feas_tol = 1e-5;
  double near_gap_tol = 1e-5;
  bool equilibrate = true;
  bool verbose = false;
  // Audit thresholds applied to every Optimal answer.
  double audit_row_tol = 1e-6;
  double audit_cone_tol = 1e-7;
};

struct ConicSolution {
  SolveStatus status = SolveStatus::Failed;
  std::vector<Eigen::VectorXd> values;  // per block; PSD blocks column-major side x side
  std::vector<int> psd_sides;           // side per block, 0 for vector blocks
  Eigen::VectorXd duals;                // equality multipliers y
  double objective = 0.0;               // c^T x + c0
  double dual_objective = 0.0;
  double primal_residual = 0.0;         // ||Ax - b|| / (1 + ||b||)
  double dual_residual = 0.0;
  double gap = 0.0;                     // relative duality gap
  int iterations = 0;
  double solve_seconds = 0.0;
  std::string backend;
  std::string message;

  bool ok() const { return status == SolveStatus::Optimal || status == SolveStatus::NearOptimal; }
  double value(VarRef v) const;
  Eigen::VectorXd vector(BlockId b) const { return values.at(static_cast<std::size_t>(b.index)); }
  Eigen::MatrixXd matrix(BlockId b) const;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  virtual ConicSolution solve(const ConicProgram& program, const SolverSettings& settings) const = 0;
};

// Thread-safe registry. The in-tree interior-point backend "hsd" is always
// present.
void register_backend(std::shared_ptr<const Backend> backend);
std::vector<std::string> backend_names();

// Solves with the backend named in settings, then audits the answer
// independently of the backend and downgrades Optimal to NearOptimal when
// the audit fails.
ConicSolution solve(const ConicProgram& program, const SolverSettings& settings = {});

struct AuditResult {
  double max_row_violation = 0.0;   // max_i |a_i x - b_i|
  double max_cone_violation = 0.0;  // eigenvalue / norm slack
  double objective_mismatch = 0.0;  // relative
  bool passed = true;
};

AuditResult audit(const ConicProgram& program, const ConicSolution& solution, const SolverSettings& settings = {});

// Adds t >= ||A theta - y|| using a QR-compressed second-order cone and
// returns the handle of t. theta lists the variables multiplying the columns
// of A.
VarRef quad_epigraph(ConicProgram& program, const Eigen::MatrixXd& A, const Eigen::VectorXd& y,
                     std::span<const VarRef> theta, const std::string& label = "residual");

std::unique_ptr<Backend> make_hsd_backend();

}  // namespace shapesos::conic

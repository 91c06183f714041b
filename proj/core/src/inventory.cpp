#include "shapesos/inventory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <tuple>

#include "shapesos/errors.hpp"

namespace shapesos::inventory {

using conic::Term;
using conic::VarRef;
using Eigen::VectorXd;

const char* to_string(Uncertainty u) { return u == Uncertainty::Box ? "box" : "ellipsoid"; }

void InventoryInstance::validate() const {
  if (T < 1) throw ValidationError("horizon T must be at least 1");
  if (d_bar.size() != T || rho.size() != T) throw DimensionMismatch("demand table must have T rows");
  for (double v : {h, p, c, s})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("costs h, p, c, s must be finite and nonnegative");
  if (h + p < s) throw ValidationError("costs must satisfy h + p >= s");
  if (!d_bar.allFinite() || !rho.allFinite()) throw ValidationError("demand table must be finite");
  if ((rho.array() < 0.0).any()) throw ValidationError("demand spread must be nonnegative");
  if (((d_bar - rho).array() < 0.0).any()) throw ValidationError("demand must stay nonnegative: d_bar - rho >= 0");
}

InventoryInstance InventoryInstance::example(int T) {
  InventoryInstance inst;
  inst.T = T;
  inst.h = 0.2;
  inst.p = 2.0;
  inst.c = 1.0;
  inst.s = 0.5;
  inst.d_bar.resize(T);
  for (int t = 0; t < T; ++t) inst.d_bar[t] = 10.0 * (1.0 + 0.5 * std::sin(std::numbers::pi * t / 6.0));
  inst.rho = 0.2 * inst.d_bar;
  return inst;
}

InventoryInstance read_instance(std::istream& in) {
  InventoryInstance inst;
  std::string line;
  bool in_demand = false, have_T = false;
  std::vector<std::tuple<int, double, double>> rows;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    auto fail = [&](const std::string& what) {
      throw ValidationError("instance line " + std::to_string(lineno) + ": " + what);
    };
    if (in_demand) {
      int t;
      double db, r;
      std::istringstream row(line);
      if (!(row >> t >> db >> r)) fail("expected '<t> <d_bar> <rho>'");
      rows.emplace_back(t, db, r);
      continue;
    }
    if (key == "T") {
      if (!(ls >> inst.T)) fail("bad T");
      have_T = true;
    } else if (key == "h" || key == "p" || key == "c" || key == "s") {
      double v;
      if (!(ls >> v)) fail("bad value for " + key);
      (key == "h" ? inst.h : key == "p" ? inst.p : key == "c" ? inst.c : inst.s) = v;
    } else if (key == "set") {
      std::string v;
      ls >> v;
      if (v == "box") inst.set = Uncertainty::Box;
      else if (v == "ellipsoid") inst.set = Uncertainty::Ellipsoid;
      else fail("set must be box or ellipsoid");
    } else if (key == "demand") {
      in_demand = true;
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  if (!have_T) throw ValidationError("instance has no T");
  if (static_cast<int>(rows.size()) != inst.T) throw DimensionMismatch("demand table must have T rows");
  inst.d_bar.resize(inst.T);
  inst.rho.resize(inst.T);
  std::vector<bool> seen(static_cast<std::size_t>(inst.T), false);
  for (const auto& [t, db, r] : rows) {
    if (t < 1 || t > inst.T || seen[static_cast<std::size_t>(t - 1)])
      throw ValidationError("demand periods must be 1..T, each once");
    seen[static_cast<std::size_t>(t - 1)] = true;
    inst.d_bar[t - 1] = db;
    inst.rho[t - 1] = r;
  }
  inst.validate();
  return inst;
}

InventoryInstance read_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return read_instance(in);
}

void write_instance(std::ostream& out, const InventoryInstance& inst) {
  out << std::setprecision(17);
  out << "T " << inst.T << "\nh " << inst.h << "\np " << inst.p << "\nc " << inst.c << "\ns " << inst.s << "\nset "
      << to_string(inst.set) << "\ndemand\n";
  for (int t = 0; t < inst.T; ++t) out << t + 1 << ' ' << inst.d_bar[t] << ' ' << inst.rho[t] << '\n';
}

void ContractParams::validate() const {
  for (double v : {alpha_plus, alpha_minus, beta_plus, beta_minus, L})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("contract parameters must be finite and nonnegative");
}

VectorXd ContractParams::to_vector() const {
  VectorXd x(5);
  x << alpha_plus, alpha_minus, beta_plus, beta_minus, L;
  return x;
}

ContractParams ContractParams::from_vector(const Eigen::Ref<const VectorXd>& x) {
  if (x.size() != 5) throw DimensionMismatch("contract vectors have 5 entries");
  return {x[0], x[1], x[2], x[3], x[4]};
}

LinExpr& LinExpr::operator+=(const LinExpr& o) {
  terms.insert(terms.end(), o.terms.begin(), o.terms.end());
  constant += o.constant;
  return *this;
}

LinExpr& LinExpr::operator*=(double s) {
  for (auto& t : terms) t.coef *= s;
  constant *= s;
  return *this;
}

AffineInD& AffineInD::operator+=(const AffineInD& o) {
  if (o.a.size() > a.size()) a.resize(o.a.size());
  a0 += o.a0;
  for (std::size_t k = 0; k < o.a.size(); ++k) a[k] += o.a[k];
  return *this;
}

AffineInD& AffineInD::operator*=(double s) {
  a0 *= s;
  for (auto& e : a) e *= s;
  return *this;
}

namespace {

// merge repeated variables and drop zeros
LinExpr compact(const LinExpr& e) {
  std::map<std::tuple<int, int, int>, double> acc;
  for (const auto& t : e.terms) acc[{t.var.block, t.var.i, t.var.j}] += t.coef;
  LinExpr out(e.constant);
  for (const auto& [k, c] : acc)
    if (c != 0.0) out.terms.push_back({VarRef{std::get<0>(k), std::get<1>(k), std::get<2>(k)}, c});
  return out;
}

bool is_zero(const LinExpr& e) { return e.terms.empty() && e.constant == 0.0; }

void check_set(const AffineInD& g, const VectorXd& d_bar, const VectorXd& rho) {
  if (d_bar.size() != rho.size() || static_cast<Eigen::Index>(g.a.size()) > d_bar.size())
    throw DimensionMismatch("uncertainty set does not match the constraint");
}

}  // namespace

int robustify_box(conic::ConicProgram& prog, const AffineInD& g, const VectorXd& d_bar, const VectorXd& rho,
                  const std::string& label) {
  check_set(g, d_bar, rho);
  LinExpr lhs = g.a0;
  std::vector<std::pair<LinExpr, double>> split;  // (a_t, rho_t) needing gamma
  for (std::size_t k = 0; k < g.a.size(); ++k) {
    const LinExpr at = compact(g.a[k]);
    if (is_zero(at)) continue;
    const auto t = static_cast<Eigen::Index>(k);
    lhs += d_bar[t] * at;
    if (rho[t] == 0.0) continue;
    if (at.is_constant()) lhs.constant -= rho[t] * std::abs(at.constant);
    else split.emplace_back(at, rho[t]);
  }
  int rows = 0;
  if (!split.empty()) {
    const auto gamma = prog.add_nonneg(static_cast<int>(split.size()), label + ".gamma");
    for (std::size_t k = 0; k < split.size(); ++k) {
      const VarRef gk = prog.var(gamma, static_cast<int>(k));
      const auto& [at, r] = split[k];
      for (double sign : {1.0, -1.0}) {
        // gamma - sign * a_t >= 0
        LinExpr row = LinExpr(gk) - sign * at;
        prog.add_greater_equal(row.terms, -row.constant, label + ".gamma_bound");
        ++rows;
      }
      lhs += LinExpr(gk, -r);
    }
  }
  const LinExpr row = compact(lhs);
  prog.add_greater_equal(row.terms, -row.constant, label);
  return rows + 1;
}

int robustify_ellipsoid(conic::ConicProgram& prog, const AffineInD& g, const VectorXd& d_bar, const VectorXd& rho,
                        const std::string& label) {
  check_set(g, d_bar, rho);
  LinExpr lhs = g.a0;
  std::vector<LinExpr> axes;  // rho_t a_t
  for (std::size_t k = 0; k < g.a.size(); ++k) {
    const LinExpr at = compact(g.a[k]);
    if (is_zero(at)) continue;
    const auto t = static_cast<Eigen::Index>(k);
    lhs += d_bar[t] * at;
    if (rho[t] != 0.0) axes.push_back(rho[t] * at);
  }
  lhs = compact(lhs);
  if (axes.empty()) {
    prog.add_greater_equal(lhs.terms, -lhs.constant, label);
    return 1;
  }
  const auto cone = prog.add_soc(static_cast<int>(axes.size()) + 1, label + ".soc");
  auto tie = [&](int k, const LinExpr& e) {
    // cone_k - e = 0
    LinExpr row = LinExpr(prog.var(cone, k)) - e;
    prog.add_equality(row.terms, -row.constant, label);
  };
  tie(0, lhs);
  for (std::size_t k = 0; k < axes.size(); ++k) tie(static_cast<int>(k) + 1, axes[k]);
  return static_cast<int>(axes.size()) + 1;
}

AffineInD Rule::expr(int T) const {
  AffineInD e(T);
  e.a0 = LinExpr(base);
  for (std::size_t k = 0; k < coef.size(); ++k) e.a[k] = LinExpr(coef[k]);
  return e;
}

AarcModel build_aarc(const InventoryInstance& inst, const ContractParams& params) {
  inst.validate();
  params.validate();
  const int T = inst.T;
  AarcModel m;
  auto& prog = m.program;
  m.w = prog.add_free(T, "w");
  if (T > 1) {
    m.z_plus = prog.add_nonneg(T - 1, "z_plus");
    m.z_minus = prog.add_nonneg(T - 1, "z_minus");
  }
  m.C = prog.add_free(1, "C");

  auto rules = [&](const std::string& name) {
    std::vector<Rule> out(static_cast<std::size_t>(T));
    const auto base = prog.add_free(T, name + "0");
    conic::BlockId coef;
    if (T > 1) coef = prog.add_free(T * (T - 1) / 2, name + "_tau");
    int k = 0;
    for (int t = 0; t < T; ++t) {
      out[static_cast<std::size_t>(t)].base = prog.var(base, t);
      for (int tau = 0; tau < t; ++tau) out[static_cast<std::size_t>(t)].coef.push_back(prog.var(coef, k++));
    }
    return out;
  };
  m.q = rules("q");
  m.y = rules("y");
  m.u = rules("u");
  m.v = rules("v");

  for (int t = 1; t < T; ++t) {
    const VarRef wt = prog.var(m.w, t), wp = prog.var(m.w, t - 1);
    const Term up[] = {{prog.var(m.z_plus, t - 1), 1.0}, {wt, -1.0}, {wp, 1.0}};
    prog.add_greater_equal(up, 0.0, "z_plus");
    const Term down[] = {{prog.var(m.z_minus, t - 1), 1.0}, {wt, 1.0}, {wp, -1.0}};
    prog.add_greater_equal(down, 0.0, "z_minus");
  }

  auto robust = [&](const AffineInD& g, const std::string& label) {
    m.robust_rows += inst.set == Uncertainty::Box ? robustify_box(prog, g, inst.d_bar, inst.rho, label)
                                                  : robustify_ellipsoid(prog, g, inst.d_bar, inst.rho, label);
  };
  auto demand = [&](int tau) {
    AffineInD e(T);
    e.a[static_cast<std::size_t>(tau)] = LinExpr(1.0);
    return e;
  };
  const auto sz = [](int t) { return static_cast<std::size_t>(t); };

  // C >= sum_t y_t + c q_t + alpha+ u_t + alpha- v_t
  AffineInD cost(T);
  cost.a0 = LinExpr(prog.var(m.C, 0));
  for (int t = 0; t < T; ++t) {
    cost += -1.0 * m.y[sz(t)].expr(T);
    cost += -inst.c * m.q[sz(t)].expr(T);
    cost += -params.alpha_plus * m.u[sz(t)].expr(T);
    cost += -params.alpha_minus * m.v[sz(t)].expr(T);
  }
  robust(cost, "cost");

  // x_{t+1} = sum_{tau <= t} (q_tau - d_tau)
  AffineInD stock(T);
  AffineInD total(T);
  for (int t = 0; t < T; ++t) {
    const AffineInD qt = m.q[sz(t)].expr(T);
    stock += qt - demand(t);
    total += qt;
    const double hbar = t + 1 < T ? inst.h : inst.h - inst.s;
    const AffineInD yt = m.y[sz(t)].expr(T), ut = m.u[sz(t)].expr(T), vt = m.v[sz(t)].expr(T);
    AffineInD wt(T);
    wt.a0 = LinExpr(prog.var(m.w, t));
    robust(yt - hbar * stock, "holding");
    robust(yt + inst.p * stock, "backlog");
    robust(ut - qt + wt, "excess");
    robust(ut, "excess_pos");
    robust(vt - wt + qt, "recess");
    robust(vt, "recess_pos");
    robust(qt, "order_pos");
  }
  total.a0 += LinExpr(-params.L);
  robust(total, "minimum_order");

  std::vector<Term> obj{{prog.var(m.C, 0), 1.0}};
  for (int t = 0; t + 1 < T; ++t) {
    obj.push_back({prog.var(m.z_plus, t), params.beta_plus});
    obj.push_back({prog.var(m.z_minus, t), params.beta_minus});
  }
  prog.set_objective(obj);
  return m;
}

AarcSolution solve_aarc(const InventoryInstance& inst, const ContractParams& params,
                        const conic::SolverSettings& settings) {
  const AarcModel m = build_aarc(inst, params);
  const auto sol = conic::solve(m.program, settings);
  if (!sol.ok())
    throw SolveNotOptimal(std::string("inventory program not solved: ") + conic::to_string(sol.status) +
                          (sol.message.empty() ? "" : " (" + sol.message + ")"));
  AarcSolution out;
  out.value = sol.objective;
  out.status = sol.status;
  out.w = sol.vector(m.w);
  out.q0.resize(inst.T);
  for (int t = 0; t < inst.T; ++t) out.q0[t] = sol.value(m.q[static_cast<std::size_t>(t)].base);
  out.solve_seconds = sol.solve_seconds;
  return out;
}

double value(const InventoryInstance& inst, const ContractParams& params, const conic::SolverSettings& settings) {
  return solve_aarc(inst, params, settings).value;
}

est::ShapeSpec surrogate_shape() {
  std::vector<est::Interval> K(5, est::Interval{0.0, INFINITY});
  std::vector<est::CurvatureBlock> blocks{{{4}, +1}, {{2, 3}, -1}};
  return est::ShapeSpec::partial(std::move(blocks), std::move(K));
}

poly::Box default_sample_box(const InventoryInstance& inst) {
  inst.validate();
  VectorXd lo = VectorXd::Zero(5), hi(5);
  hi << 2 * inst.c, 2 * inst.c, 2 * inst.c, 2 * inst.c, inst.d_bar.sum();
  for (int k = 0; k < 4; ++k)
    if (hi[k] <= 0.0) hi[k] = 1.0;
  if (hi[4] <= 0.0) hi[4] = 1.0;
  return poly::Box(lo, hi);
}

est::Dataset sample_values(const InventoryInstance& inst, const poly::Box& box, int m, std::uint64_t seed,
                           const conic::SolverSettings& settings, int* resampled, int max_resamples) {
  inst.validate();
  if (box.dim() != 5) throw DimensionMismatch("the contract sample box has 5 coordinates");
  if ((box.lower().array() < 0.0).any()) throw ValidationError("contract parameters must be nonnegative");
  if (m < 1) throw ValidationError("need at least one sample");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  est::Dataset data;
  data.box = box;
  data.X.resize(m, 5);
  data.Y.resize(m);
  int skipped = 0;
  for (int i = 0; i < m;) {
    VectorXd x(5);
    for (int k = 0; k < 5; ++k) x[k] = box.lower()[k] + U(rng) * (box.upper()[k] - box.lower()[k]);
    try {
      data.Y[i] = value(inst, ContractParams::from_vector(x), settings);
      data.X.row(i) = x.transpose();
      ++i;
    } catch (const SolverFailed&) {
      if (++skipped > max_resamples) throw SolverFailed("too many unsolvable contract tuples");
    }
  }
  if (resampled) *resampled = skipped;
  return data;
}

SurrogateResult fit_surrogate(const InventoryInstance& inst, const poly::Box& box, const SurrogateOptions& options) {
  SurrogateResult res;
  res.samples = sample_values(inst, box, options.m, options.seed, options.solver, &res.resampled,
                              options.max_resamples);
  est::FitOptions fit = options.fit;
  fit.seed = options.seed;
  // values are in the hundreds, keep monotonicity audits clear of solver error
  if (fit.derivative_margin == 0.0) fit.derivative_margin = 1e-6 * (1.0 + res.samples.Y.cwiseAbs().maxCoeff());
  res.model = est::fit_sose(res.samples, options.d, options.r, surrogate_shape(), fit);
  res.model.provenance.extra["resampled"] = std::to_string(res.resampled);
  res.model.provenance.extra["samples"] = std::to_string(options.m);
  res.model.provenance.extra["horizon"] = std::to_string(inst.T);
  res.model.provenance.extra["uncertainty"] = to_string(inst.set);
  return res;
}

RelativeError relative_error(const est::FittedModel& model, const est::Dataset& data) {
  RelativeError e;
  if (data.m() == 0) return e;
  const VectorXd pred = est::predict_rows(model, data.X);
  for (int i = 0; i < data.m(); ++i) {
    const double r = std::abs(pred[i] - data.Y[i]) / std::max(1.0, std::abs(data.Y[i]));
    e.mean += r;
    e.max = std::max(e.max, r);
  }
  e.mean /= data.m();
  return e;
}

ShapeAudit audit_value_shape(const InventoryInstance& inst, const ContractParams& base, double tol,
                          const conic::SolverSettings& settings) {
  base.validate();
  ShapeAudit rep;
  const VectorXd b = base.to_vector();
  auto v = [&](const VectorXd& x) {
    ++rep.solves;
    return value(inst, ContractParams::from_vector(x), settings);
  };
  auto add = [&](const std::string& what, double worst) {
    ShapeCheck c{what, worst, worst <= tol};
    rep.passed = rep.passed && c.passed;
    rep.checks.push_back(c);
  };
  const double v0 = v(b);
  auto rel = [&](double x) { return x / (1.0 + std::abs(v0)); };
  VectorXd scale(5);
  scale << inst.c, inst.c, inst.c, inst.c, 0.5 * inst.d_bar.sum();
  for (int k = 0; k < 5; ++k) {
    if (scale[k] <= 0.0) scale[k] = 1.0;
    // grid {x/2, x, 2x}, or {0, s, 2s} from zero
    VectorXd lo = b, mid = b, hi = b;
    if (b[k] > 0.0) {
      lo[k] = 0.5 * b[k];
      hi[k] = 2.0 * b[k];
    } else {
      lo[k] = 0.0;
      mid[k] = scale[k];
      hi[k] = 2.0 * scale[k];
    }
    const double vl = v(lo), vm = (b[k] > 0.0 ? v0 : v(mid)), vh = v(hi);
    add("nondecreasing in " + param_names()[static_cast<std::size_t>(k)], rel(std::max(vl - vm, vm - vh)));
    if (k >= 2) {
      VectorXd c = b;
      c[k] = 0.5 * (lo[k] + hi[k]);
      const double vc = v(c), avg = 0.5 * (vl + vh);
      // convex in L, concave in each beta
      if (k == 4) add("midpoint convex in L", rel(vc - avg));
      else add("midpoint concave in " + param_names()[static_cast<std::size_t>(k)], rel(avg - vc));
    }
  }
  // jointly along (beta+, beta-)
  VectorXd p1 = b, p2 = b;
  p1[2] = b[2] > 0.0 ? 0.5 * b[2] : 0.0;
  p1[3] = b[3] > 0.0 ? 2.0 * b[3] : 2.0 * scale[3];
  p2[2] = b[2] > 0.0 ? 2.0 * b[2] : 2.0 * scale[2];
  p2[3] = b[3] > 0.0 ? 0.5 * b[3] : 0.0;
  const double v1 = v(p1), v2 = v(p2), vc = v(0.5 * (p1 + p2));
  add("midpoint concave in (beta_plus, beta_minus)", rel(0.5 * (v1 + v2) - vc));
  return rep;
}

void write_report(std::ostream& os, const ShapeAudit& report) {
  for (const auto& c : report.checks)
    os << (c.passed ? "PASS " : "FAIL ") << c.what << "  worst=" << c.worst << '\n';
  os << "solves=" << report.solves << "  verdict=" << (report.passed ? "PASS" : "FAIL") << '\n';
}

}  // namespace shapesos::inventory

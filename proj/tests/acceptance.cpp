// Acceptance run: one PASS/FAIL line per criterion, exit status = number of
// failures. `acceptance 4 8` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "shapesos/certify.hpp"
#include "shapesos/data.hpp"
#include "shapesos/errors.hpp"
#include "shapesos/estimators.hpp"
#include "shapesos/inventory.hpp"
#include "shapesos/online.hpp"
#include "shapesos/poly.hpp"
#include "shapesos/transport.hpp"

using namespace shapesos;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Detail text with a fixed numeric format.
class Detail {
 public:
  template <class T>
  Detail& operator<<(const T& v) {
    os_ << v;
    return *this;
  }
  std::string str() const { return os_.str(); }
  Detail() { os_.precision(4); }

 private:
  std::ostringstream os_;
};

// Every SOSE fit made during the run, for the nesting and certificate checks.
struct Recorded {
  std::string where;
  est::FittedModel model;
  est::Dataset data;  // empty for fits that are not plain regressions
};
std::vector<Recorded> g_fits;

const est::FittedModel& record(const std::string& where, const est::FittedModel& m, const est::Dataset& d) {
  g_fits.push_back({where, m, d});
  return g_fits.back().model;
}

est::FitOptions tight() {
  est::FitOptions o;
  o.solver.feas_tol = 1e-10;
  o.solver.gap_tol = 1e-10;
  return o;
}

// ---------------------------------------------------------------------------

Outcome c1_r_monotone() {
  const auto t0 = Clock::now();
  const auto d = data::synth_convex(200, 2, 1.0, 11);
  std::vector<double> sse;
  for (int r : {1, 2, 3}) {
    const auto& m = record("c1 r=" + std::to_string(r), est::fit_sose_convex(d, 4, r, tight()), d);
    sse.push_back(m.train_sse);
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = sse[1] <= sse[0] * (1 + 1e-9) && sse[2] <= sse[1] * (1 + 1e-9) && sse[2] / sse[1] >= 0.99 && secs < 120;
  o.detail = (Detail() << "SSE r=1,2,3: " << sse[0] << ", " << sse[1] << ", " << sse[2] << "; ratio(3/2) "
                       << sse[2] / sse[1] << "; " << secs << " s")
                 .str();
  return o;
}

Outcome c2_quadratic_exact() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto d = data::synth_convex(100, 2, 1.0, 200 + seed);
    const auto& a = record("c2 seed " + std::to_string(seed), est::fit_sose_convex(d, 2, 0, tight()), d);
    const auto b = est::fit_convex_quadratic(d, tight());
    worst = std::max(worst, std::abs(a.train_sse - b.train_sse) / std::abs(b.train_sse));
  }
  return {worst <= 1e-6, (Detail() << "worst relative objective difference " << worst << " over 5 datasets").str()};
}

Outcome c3_nesting() {
  int checked = 0, bad = 0;
  double worst = -INFINITY;
  for (const auto& f : g_fits) {
    if (f.data.m() == 0) continue;
    const auto upr = est::fit_upr(f.data, f.model.degree);
    const double sose = est::sse(f.model, f.data);
    // relative excess of UPR over SOSE; <= 0 is the claim, 1e-12 absorbs summation rounding
    const double excess = (upr.train_sse - sose) / std::max(1e-300, sose);
    worst = std::max(worst, excess);
    ++checked;
    if (excess > 1e-12) ++bad;
  }
  return {checked > 0 && bad == 0,
          (Detail() << checked << " fits, " << bad << " violations, max (UPR-SOSE)/SOSE " << worst).str()};
}

Outcome c4_consistency() {
  const auto t0 = Clock::now();
  std::vector<double> medians;
  for (int m : {100, 500, 2000}) {
    std::vector<double> te;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto train = data::synth_convex(m, 2, 1.0, seed);
      const auto test = data::synth_convex(1000, 2, 0.0, seed + 1000003ULL);
      const auto& model = record("c4 m=" + std::to_string(m), est::fit_sose_convex(train, 4, 2), train);
      te.push_back(est::rmse(model, test));
    }
    medians.push_back(data::median(te));
  }
  const double secs = seconds_since(t0);
  return {medians[1] < medians[0] && medians[2] < medians[1] && secs < 600,
          (Detail() << "median test RMSE m=100,500,2000: " << medians[0] << ", " << medians[1] << ", " << medians[2]
                    << "; " << secs << " s")
              .str()};
}

Outcome c5_certificates() {
  int models = 0, certs = 0, bad_identity = 0, bad_grid = 0;
  double worst_ratio = 0.0, worst_eig = INFINITY, worst_own = 0.0;
  std::string worst_where;
  std::uint64_t seed = 1;
  for (const auto& f : g_fits) {
    ++models;
    for (const auto& c : f.model.certificates) {
      ++certs;
      const double res = certify::identity_residual(c, 1000, seed++);
      const double lim = 1e-6 * (1.0 + certify::identity_scale(f.model, c));
      worst_own = std::max(worst_own, res / (1e-6 * (1.0 + certify::certificate_scale(c))));
      if (res / lim > worst_ratio) {
        worst_ratio = res / lim;
        worst_where = f.where + " " + c.label;
      }
      if (res > lim) ++bad_identity;
    }
    if (f.model.shape.kind == est::ShapeKind::Convex) {
      const auto g = certify::grid_audit_convexity(f.model.original_poly(), f.model.box,
                                                   certify::default_density(f.model.num_vars()));
      worst_eig = std::min(worst_eig, g.worst);
      if (g.worst < -1e-6) ++bad_grid;
    }
  }
  return {models > 0 && bad_identity == 0 && bad_grid == 0,
          (Detail() << models << " models, " << certs << " certificates; worst residual/limit " << worst_ratio << " ("
                    << worst_where << "; against the target scale alone " << worst_own << ")"
                    << "; min Hessian eigenvalue on grids " << worst_eig)
              .str()};
}

Outcome c6_online() {
  const auto base = data::synth_convex(500, 2, 1.0, 61);
  auto model = est::fit_sose_convex(base, 4, 1);
  record("c6 incumbent", model, base);
  auto all = base;
  bool never_worse = true, gap_ok = true, time_ok = true;
  double worst_gap = 0.0, worst_ratio = 0.0, refit_total = 0.0, full_total = 0.0;
  for (int b = 0; b < 10; ++b) {
    auto batch = data::synth_convex(10, 2, 1.0, 6100 + static_cast<std::uint64_t>(b));
    batch.box = all.box;
    all = all.concat(batch);
    const auto res = online::refit(online::factorize(model), all, sos::GramKind::DD);
    const auto full = est::fit_sose_convex(all, 4, 1);
    record("c6 refit " + std::to_string(b), res.model, all);
    record("c6 full " + std::to_string(b), full, all);
    const double refit_sse = est::sse(res.model, all);
    if (refit_sse > res.incumbent_sse) never_worse = false;
    const double gap = (refit_sse - full.train_sse) / full.train_sse;
    worst_gap = std::max(worst_gap, gap);
    if (gap > 0.05) gap_ok = false;
    const double ratio = res.solve_seconds / full.provenance.solve_seconds;
    worst_ratio = std::max(worst_ratio, ratio);
    if (ratio > 0.2) time_ok = false;
    refit_total += res.solve_seconds;
    full_total += full.provenance.solve_seconds;
    model = res.model;
  }
  Detail d;
  d << "SSE <= incumbent every batch: " << (never_worse ? "yes" : "NO") << "; max gap to full re-solve "
    << 100 * worst_gap << "%" << (gap_ok ? "" : " (over 5%)") << "; solve time refit/full: total "
    << refit_total << " s / " << full_total << " s, worst batch ratio " << worst_ratio
    << (time_ok ? "" : " (over 0.2)");
  return {never_worse && gap_ok && time_ok, d.str()};
}

Outcome c7_clse() {
  int train_ok = 0, test_wins = 0;
  std::vector<std::string> rows;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto train = data::synth_convex(100, 2, 1.0, 700 + seed);
    const auto test = data::synth_convex(1000, 2, 0.0, 7700 + seed);
    const auto clse = est::fit_clse(train);
    const auto& sose = record("c7 seed " + std::to_string(seed), est::fit_sose_convex(train, 4, 2), train);
    const double clse_train = est::rmse_clse(clse, train, false);
    const double sose_train = est::rmse(sose, train);
    const double clse_test = est::rmse_clse(clse, test, true);
    const double sose_test = est::rmse(sose, test);
    if (clse_train <= sose_train) ++train_ok;
    if (sose_test <= clse_test) ++test_wins;
  }
  bool hull = false;
  {
    const auto train = data::synth_convex(100, 2, 1.0, 701);
    const auto clse = est::fit_clse(train);
    try {
      est::predict_clse(clse, Eigen::Vector2d(1.5, 1.5));
    } catch (const OutsideHull&) {
      hull = true;
    }
  }
  return {train_ok == 5 && test_wins >= 4 && hull,
          (Detail() << "CLSE train RMSE <= SOSE in " << train_ok << "/5; SOSE test RMSE <= CLSE in " << test_wins
                    << "/5; OutsideHull raised: " << (hull ? "yes" : "no"))
              .str()};
}

Outcome c8_inventory() {
  const auto t0 = Clock::now();
  const auto inst = inventory::InventoryInstance::example(10);
  const auto box = inventory::default_sample_box(inst);
  inventory::SurrogateOptions opt;
  opt.m = 200;
  opt.d = 4;
  opt.r = 2;
  opt.seed = 81;
  const auto sur = inventory::fit_surrogate(inst, box, opt);
  record("c8 surrogate", sur.model, sur.samples);
  const auto held = inventory::sample_values(inst, box, 100, 8181);
  const auto err = inventory::relative_error(sur.model, held);
  std::vector<double> lat;
  for (int i = 0; i < held.m(); ++i) {
    const VectorXd x = held.X.row(i).transpose();
    const auto s = Clock::now();
    volatile double v = est::predict(sur.model, x);
    (void)v;
    lat.push_back(seconds_since(s));
  }
  const double worst_lat = *std::max_element(lat.begin(), lat.end());
  return {err.mean <= 0.05 && err.max <= 0.15 && worst_lat <= 0.010,
          (Detail() << "relative test error mean " << 100 * err.mean << "%, max " << 100 * err.max
                    << "% over 100 tuples; slowest prediction " << 1e3 * worst_lat << " ms; " << seconds_since(t0)
                    << " s")
              .str()};
}

Outcome c9_value_shapes() {
  const auto lp = certify::audit_value_function(20, 91);
  const auto inst = inventory::InventoryInstance::example(10);
  const double S = inst.d_bar.sum();
  const inventory::ContractParams base{1.0, 1.0, 1.0, 1.0, 0.5 * S};
  const auto inv = inventory::audit_value_shape(inst, base, 1e-6);
  double worst = -INFINITY;
  for (const auto& c : inv.checks) worst = std::max(worst, c.worst);
  return {lp.passed && lp.instances == 20 && inv.passed,
          (Detail() << "random LPs: " << lp.instances << " solved, worst b-convexity " << lp.worst_b_convexity
                    << ", c-concavity " << lp.worst_c_concavity << ", monotonicity " << lp.worst_monotonicity
                    << "; inventory: " << inv.checks.size() << " checks, " << inv.solves << " solves, worst " << worst)
              .str()};
}

// Smooth gradients with a tint and a little noise, 8-bit.
transport::Image scene(int w, int h, double tr, double tg, double tb, std::uint64_t seed) {
  transport::Image im;
  im.width = w;
  im.height = h;
  im.rgb.resize(im.pixels() * 3);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 6.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = static_cast<double>(x) / (w - 1), v = static_cast<double>(y) / (h - 1);
      const double base[3] = {tr * (0.3 + 0.6 * u), tg * (0.2 + 0.7 * v), tb * (0.5 + 0.4 * u * v)};
      for (int k = 0; k < 3; ++k)
        im.rgb[3 * (static_cast<std::size_t>(y) * w + x) + k] =
            static_cast<std::uint8_t>(std::clamp(std::round(255.0 * base[k] + N(rng)), 0.0, 255.0));
    }
  return im;
}

Outcome c10_transport() {
  const auto t0 = Clock::now();
  const auto a = scene(64, 64, 1.0, 0.8, 0.6, 1);
  const auto b = scene(64, 64, 0.5, 0.9, 1.0, 2);
  const auto mu = transport::measure_from_image(a, 16);
  const auto nu = transport::measure_from_image(b, 16);
  transport::TransferParams prm;  // d=4, r=3, ell=1, L=10, eps=0.01
  prm.max_outer = 3;
  prm.rel_tol = -1.0;
  const auto res = transport::alternate(mu, nu, prm);
  record("c10 potential", res.potential, {});

  double worst_rise = -INFINITY;
  for (std::size_t k = 1; k < res.objective.size(); ++k)
    worst_rise = std::max(worst_rise, res.objective[k] - res.objective[k - 1]);
  const bool monotone = res.outer >= 3 && worst_rise <= 1e-7;

  const auto H = poly::hessian(res.potential.original_poly());
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& x : certify::audit_points(poly::Box::unit(3), 20)) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(H(x));
    lo = std::min(lo, es.eigenvalues().minCoeff());
    hi = std::max(hi, es.eigenvalues().maxCoeff());
  }
  const double ell = prm.potential.ell, L = prm.potential.L;
  const bool band = lo >= ell - 1e-6 && hi <= L + 1e-6;

  const auto id = transport::initial_potential(3, 1.0, 1.0);  // |x|^2 / 2
  const auto mapped = transport::apply_map(id, a);
  const bool exact = mapped.image.rgb == a.rgb && mapped.clamped == 0;

  const bool marg = res.coupling.marginal_error <= 1e-6;
  Detail d;
  d << "support " << mu.size() << "x" << nu.size() << "; marginal L1 error " << res.coupling.marginal_error
    << "; objective over " << res.objective.size() << " half-steps, largest rise " << worst_rise
    << "; Hessian eigenvalues on 20^3 grid in [" << lo << ", " << hi << "]; identity round trip "
    << (exact ? "bit-exact" : "DIFFERS") << "; " << seconds_since(t0) << " s";
  return {marg && monotone && band && exact, d.str()};
}

Outcome c11_bernstein() {
  auto f = [](const VectorXd& x) { return std::exp(x[0] + x[1]); };
  std::vector<double> errs;
  const auto grid = certify::audit_points(poly::Box::unit(2), 41);
  for (int d : {4, 8, 16}) {
    const auto B = data::bernstein(f, 2, d);
    double e = 0.0;
    for (const auto& x : grid) e = std::max(e, std::abs(B(x) - f(x)));
    errs.push_back(e);
  }
  auto aff = [](const VectorXd& x) { return 1.5 - 2.0 * x[0] + 0.75 * x[1]; };
  double aff_err = 0.0;
  for (int d : {1, 2, 4, 8, 16}) {
    const auto B = data::bernstein(aff, 2, d);
    for (const auto& x : grid) aff_err = std::max(aff_err, std::abs(B(x) - aff(x)));
  }
  return {errs[1] < errs[0] && errs[2] < errs[1] && aff_err <= 1e-12,
          (Detail() << "sup error d=4,8,16: " << errs[0] << ", " << errs[1] << ", " << errs[2]
                    << "; affine reproduction error " << aff_err)
              .str()};
}

Outcome c12_calculus() {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::uniform_int_distribution<int> nv(1, 4), dg(2, 5);
  double worst_g = 0.0, worst_h = 0.0;
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = nv(rng), d = dg(rng);
    poly::Polynomial p(n, d);
    for (Eigen::Index k = 0; k < p.coeffs().size(); ++k) p.coeffs()[k] = U(rng);
    VectorXd x(n);
    for (int i = 0; i < n; ++i) x[i] = 0.8 * U(rng);
    const auto g = poly::gradient(p);
    const auto H = poly::hessian(p);
    const MatrixXd Hx = H(x);
    for (int i = 0; i < n; ++i) {
      const VectorXd e = VectorXd::Unit(n, i);
      const double fd = (p(x + h * e) - p(x - h * e)) / (2 * h);
      worst_g = std::max(worst_g, std::abs(g[static_cast<std::size_t>(i)](x) - fd) / std::max(1.0, std::abs(fd)));
      for (int j = 0; j < n; ++j) {
        // central difference of the analytic gradient; the first-derivative check above covers it
        const auto& gi = g[static_cast<std::size_t>(i)];
        const VectorXd ej = VectorXd::Unit(n, j);
        const double fd2 = (gi(x + h * ej) - gi(x - h * ej)) / (2 * h);
        worst_h = std::max(worst_h, std::abs(Hx(i, j) - fd2) / std::max(1.0, std::abs(fd2)));
      }
    }
  }
  return {worst_g <= 1e-6 && worst_h <= 1e-6,
          (Detail() << "100 random polynomials; worst relative error gradient " << worst_g << ", Hessian " << worst_h)
              .str()};
}

}  // namespace

int main(int argc, char** argv) {
  struct Entry {
    int id;
    const char* name;
    Outcome (*run)();
  };
  // 3 and 5 look at every fit made by the others, so they go last.
  const std::vector<Entry> order{
      {1, "r-monotonicity", c1_r_monotone},     {2, "d=2 exactness", c2_quadratic_exact},
      {4, "consistency trend", c4_consistency}, {6, "online update", c6_online},
      {7, "CLSE baseline", c7_clse},            {8, "inventory surrogate", c8_inventory},
      {9, "optimal-value shapes", c9_value_shapes}, {10, "transport", c10_transport},
      {11, "Bernstein oracle", c11_bernstein},  {12, "gradient/Hessian calculus", c12_calculus},
      {3, "feasible-set nesting", c3_nesting},  {5, "certificate soundness", c5_certificates},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  std::map<int, std::pair<const Entry*, Outcome>> results;
  for (const auto& e : order) {
    if (!only.empty() && !only.count(e.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = e.run();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    std::fprintf(stderr, "[%5.1f s] criterion %d done\n", seconds_since(t0), e.id);
    results[e.id] = {&e, o};
  }
  int failures = 0;
  for (const auto& [id, r] : results) {
    std::printf("criterion %2d %-4s %-27s %s\n", id, r.second.pass ? "PASS" : "FAIL", r.first->name,
                r.second.detail.c_str());
    if (!r.second.pass) ++failures;
  }
  std::printf("%zu criteria, %d failed\n", results.size(), failures);
  return failures;
}

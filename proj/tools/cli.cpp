#include "cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "service.hpp"
#include "shapesos/certify.hpp"
#include "shapesos/data.hpp"
#include "shapesos/errors.hpp"
#include "shapesos/estimators.hpp"
#include "shapesos/inventory.hpp"
#include "shapesos/model_io.hpp"
#include "shapesos/online.hpp"
#include "shapesos/transport.hpp"
#include "shapesos/version.hpp"

namespace shapesos::cli {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) parts.push_back(cur);
  return parts;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

double parse_real(const std::string& raw, const std::string& what) {
  const std::string s = trim(raw);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw ValidationError("bad number '" + raw + "' in " + what);
  return v;
}

Eigen::VectorXd parse_point(const std::string& s) {
  const auto parts = split(s, ',');
  Eigen::VectorXd x(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) x(static_cast<Eigen::Index>(i)) = parse_real(parts[i], "--point");
  return x;
}

template <class T>
std::vector<T> parse_ints(const std::string& s, const std::string& what) {
  std::vector<T> out;
  for (const auto& p : split(s, ',')) out.push_back(static_cast<T>(std::llround(parse_real(p, what))));
  return out;
}

// "lo:hi,lo:hi"; an empty side is unbounded.
std::vector<est::Interval> parse_K(const std::string& s) {
  std::vector<est::Interval> K;
  for (const auto& part : split(s, ',')) {
    const auto c = part.find(':');
    if (c == std::string::npos) throw ValidationError("--K entries look like lo:hi, got '" + part + "'");
    est::Interval iv;
    const auto lo = trim(part.substr(0, c)), hi = trim(part.substr(c + 1));
    if (!lo.empty()) iv.lo = parse_real(lo, "--K");
    if (!hi.empty()) iv.hi = parse_real(hi, "--K");
    K.push_back(iv);
  }
  return K;
}

// "convex:0,1" or "concave:2"
est::CurvatureBlock parse_block(const std::string& s) {
  const auto c = s.find(':');
  if (c == std::string::npos) throw ValidationError("--block looks like convex:0,1, got '" + s + "'");
  est::CurvatureBlock b;
  const auto kind = s.substr(0, c);
  if (kind == "convex") b.sign = 1;
  else if (kind == "concave") b.sign = -1;
  else throw ValidationError("--block kind must be convex or concave");
  b.coords = parse_ints<int>(s.substr(c + 1), "--block");
  return b;
}

sos::GramKind parse_gram(const std::string& s) {
  if (s == "psd") return sos::GramKind::PSD;
  if (s == "dd") return sos::GramKind::DD;
  if (s == "sdd") return sos::GramKind::SDD;
  throw ValidationError("unknown Gram kind '" + s + "'");
}

void write_box(const fs::path& path, const poly::Box& box) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.precision(17);
  out << "lower";
  for (Eigen::Index i = 0; i < box.lower().size(); ++i) out << " " << box.lower()(i);
  out << "\nupper";
  for (Eigen::Index i = 0; i < box.upper().size(); ++i) out << " " << box.upper()(i);
  out << "\n";
}

inventory::InventoryInstance load_instance(const std::string& path, int example_T, const std::string& set) {
  inventory::InventoryInstance inst;
  if (!path.empty()) inst = inventory::read_instance(fs::path(path));
  else if (example_T > 0) inst = inventory::InventoryInstance::example(example_T);
  else throw ValidationError("give --instance or --example");
  if (set == "box") inst.set = inventory::Uncertainty::Box;
  else if (set == "ellipsoid") inst.set = inventory::Uncertainty::Ellipsoid;
  else if (!set.empty()) throw ValidationError("--set must be box or ellipsoid");
  inst.validate();
  return inst;
}

struct Runner {
  std::ostream& out;
  std::ostream& err;
  std::uint64_t seed = 1;

  Runner(std::ostream& o, std::ostream& e) : out(o), err(e) {}

  // fit
  std::string data, box_file, model_out, shape = "convex", gram = "psd", K, model_in;
  int degree = 4, r = 2, max_iters = 0;
  double ell = 0.0, L = 0.0, margin = 0.0;
  std::vector<std::string> blocks;
  bool global = false, no_certs = false, skip_audit = false;

  int fit() {
    const auto ds = est::read_csv(data, box_file.empty() ? std::nullopt : std::optional<fs::path>(box_file));
    est::ShapeSpec spec;
    if (shape == "none") spec = est::ShapeSpec::none();
    else if (shape == "convex") spec = est::ShapeSpec::convex();
    else if (shape == "bounded") spec = est::ShapeSpec::bounded(parse_K(K));
    else if (shape == "band") spec = est::ShapeSpec::band(ell, L);
    else if (shape == "partial") {
      std::vector<est::CurvatureBlock> b;
      for (const auto& s : blocks) b.push_back(parse_block(s));
      spec = est::ShapeSpec::partial(b, K.empty() ? std::vector<est::Interval>{} : parse_K(K));
    } else throw ValidationError("unknown shape '" + shape + "'");
    est::FitOptions opt;
    opt.gram.kind = parse_gram(gram);
    opt.gram.global = global;
    opt.seed = seed;
    opt.derivative_margin = margin;
    if (max_iters > 0) opt.solver.max_iters = max_iters;
    auto model = est::fit_sose(ds, degree, r, spec, opt);
    model.provenance.extra["data"] = fs::absolute(data).string();
    if (!box_file.empty()) model.provenance.extra["box_file"] = fs::absolute(box_file).string();
    io::save_model(model_out, model, !no_certs);
    out << std::setprecision(10);
    out << "model " << model_out << "\n"
        << "shape " << est::to_string(spec.kind) << " degree " << degree << " r " << r << " gram " << gram << "\n"
        << "train_sse " << model.train_sse << " train_rmse " << est::rmse(model, ds) << "\n"
        << "solver " << model.provenance.status << " iterations " << model.provenance.iterations << " seconds "
        << model.provenance.solve_seconds << "\n";
    if (skip_audit) return kOk;
    const auto reports = certify::audit_model(model, certify::defaults(), seed);
    certify::write_report(out, reports);
    return certify::all_passed(reports) ? kOk : kAuditFailed;
  }

  // predict
  std::string point;
  int predict() {
    const auto model = io::load_model(model_in);
    const auto x = parse_point(point);
    if (x.size() != model.num_vars())
      throw DimensionMismatch("point has " + std::to_string(x.size()) + " coordinates, model takes " +
                              std::to_string(model.num_vars()));
    bool outside = false;
    const double v = est::predict(model, x, &outside);
    out << std::setprecision(17) << v << "\n";
    if (outside) err << "warning: point is outside the training box\n";
    return kOk;
  }

  // update
  std::string new_data, mode = "dd";
  int update() {
    const auto model = io::load_model(model_in);
    std::string old_path = data;
    if (old_path.empty()) {
      auto it = model.provenance.extra.find("data");
      if (it == model.provenance.extra.end()) throw ValidationError("model does not record its data; pass --data");
      old_path = it->second;
    }
    const sos::GramKind kind = parse_gram(mode);
    if (kind == sos::GramKind::PSD) throw ValidationError("--mode must be dd or sdd");
    auto old_ds = est::read_csv(old_path);
    auto new_ds = est::read_csv(new_data);
    old_ds.box = model.box;
    auto augmented = old_ds.concat(new_ds);
    augmented.validate();
    const auto basis = online::factorize(model);
    auto res = online::refit(basis, augmented, kind);
    out << std::setprecision(12) << "old_sse " << res.incumbent_sse << "\n"
        << "new_sse " << res.model.train_sse << "\n"
        << "rows " << augmented.m() << " seconds " << res.solve_seconds
        << (res.kept_incumbent ? " kept_incumbent" : "") << "\n";
    if (!model_out.empty()) {
      res.model.provenance.extra["data"] = fs::absolute(old_path).string();
      res.model.provenance.extra["update"] = fs::absolute(new_data).string();
      io::save_model(model_out, res.model, !no_certs);
      out << "model " << model_out << "\n";
    }
    return kOk;
  }

  // certify
  int density = 0, samples = -1, lp = 0;
  int certify() {
    const auto model = io::load_model(model_in);
    auto tol = certify::defaults();
    if (density > 0) tol.density_small = tol.density_medium = tol.density_large = density;
    if (samples >= 0) tol.random_samples = samples;
    const auto reports = certify::audit_model(model, tol, seed);
    certify::write_report(out, reports);
    bool ok = certify::all_passed(reports);
    if (lp > 0) {
      const auto vf = certify::audit_value_function(lp, seed, tol);
      certify::write_report(out, vf);
      ok = ok && vf.passed;
    }
    out << (ok ? "PASSED" : "FAILED") << "\n";
    return ok ? kOk : kAuditFailed;
  }

  // synth
  int m = 100, n = 2;
  double sigma = 1.0;
  std::string csv_out;
  int synth() {
    const auto ds = data::synth_convex(m, n, sigma, seed);
    est::write_csv(csv_out, ds);
    write_box(csv_out + ".box", ds.box);
    out << "wrote " << ds.m() << " rows to " << csv_out << "\n";
    return kOk;
  }

  // benchmark
  std::string grid_m = "100,500", grid_n = "2", grid_d = "2,4", grid_r = "1", runs_out;
  int seeds = 5, test_points = 1000;
  int benchmark() {
    data::BenchmarkConfig cfg;
    cfg.m = parse_ints<int>(grid_m, "--m");
    cfg.n = parse_ints<int>(grid_n, "--n");
    cfg.d = parse_ints<int>(grid_d, "--d");
    cfg.r = parse_ints<int>(grid_r, "--r");
    cfg.seeds = seeds;
    cfg.base_seed = seed;
    cfg.test_points = test_points;
    cfg.sigma = sigma;
    const auto res = data::benchmark(cfg);
    if (!csv_out.empty()) data::write_benchmark_csv(csv_out, res);
    if (!runs_out.empty()) data::write_benchmark_runs(runs_out, res);
    out << "m,n,d,r,train_rmse,test_rmse,solve_s\n" << std::setprecision(6);
    for (const auto& c : res.cells)
      out << c.m << "," << c.n << "," << c.d << "," << c.r << "," << c.train_rmse << "," << c.test_rmse << ","
          << c.solve_s << "\n";
    return kOk;
  }

  // transfer
  std::string input, target, image_out, trace_out, potential_out;
  double epsilon = 0.01, rel_tol = 1e-4, t_ell = 1.0, t_L = 10.0;
  int bins = 16, max_outer = 20, t_degree = 4, t_r = 3;
  bool force = false;
  int transfer() {
    const auto src = transport::read_png(input);
    const auto dst = transport::read_png(target);
    const auto mu = transport::measure_from_image(src, bins);
    const auto nu = transport::measure_from_image(dst, bins);
    transport::TransferParams p;
    p.potential.d = t_degree;
    p.potential.r = t_r;
    p.potential.ell = t_ell;
    p.potential.L = t_L;
    p.sinkhorn.epsilon = epsilon;
    p.max_outer = max_outer;
    p.rel_tol = rel_tol;
    p.force = force;
    est::FitOptions opt;
    opt.seed = seed;
    const auto res = transport::alternate(mu, nu, p, opt);
    const auto mapped = transport::apply_map(res.potential, src);
    transport::write_png(image_out, mapped.image);
    out << std::setprecision(10) << "support " << mu.size() << " x " << nu.size() << "\n"
        << "outer " << res.outer << (res.converged ? " converged" : " not converged") << "\n"
        << "objective " << res.objective.back() << " transport " << res.transport.back() << "\n"
        << "clamped " << mapped.clamped << " of " << src.pixels() << "\n";
    if (!trace_out.empty()) {
      std::ofstream t(trace_out);
      if (!t) throw ValidationError("cannot write " + trace_out);
      t << std::setprecision(17) << "step,objective,transport\n";
      for (std::size_t i = 0; i < res.objective.size(); ++i)
        t << i << "," << res.objective[i] << "," << res.transport[i] << "\n";
    }
    if (!potential_out.empty()) io::save_model(potential_out, res.potential, !no_certs);
    return kOk;
  }

  // inventory
  std::string instance, set;
  int example = 0;
  double ap = 0, am = 0, bp = 0, bm = 0, Lc = 0;
  int inventory_solve() {
    const auto inst = load_instance(instance, example, set);
    inventory::ContractParams params{ap, am, bp, bm, Lc};
    params.validate();
    const auto sol = inventory::solve_aarc(inst, params);
    out << std::setprecision(12) << sol.value << "\n";
    err << "status " << conic::to_string(sol.status) << " seconds " << sol.solve_seconds << "\n";
    return kOk;
  }

  int test = 0, inv_m = 200;
  int inventory_fit() {
    const auto inst = load_instance(instance, example, set);
    const auto box = inventory::default_sample_box(inst);
    inventory::SurrogateOptions opt;
    opt.m = inv_m;
    opt.d = degree;
    opt.r = r;
    opt.seed = seed;
    auto res = inventory::fit_surrogate(inst, box, opt);
    io::save_model(model_out, res.model, !no_certs);
    fs::path inv = fs::path(model_out).replace_extension(".inv");
    {
      std::ofstream o(inv);
      if (!o) throw ValidationError("cannot write " + inv.string());
      inventory::write_instance(o, inst);
    }
    out << std::setprecision(8) << "model " << model_out << "\ninstance " << inv.string() << "\n"
        << "samples " << res.samples.m() << " resampled " << res.resampled << "\n"
        << "train_rmse " << est::rmse(res.model, res.samples) << " seconds " << res.model.provenance.solve_seconds
        << "\n";
    if (test > 0) {
      const auto held = inventory::sample_values(inst, box, test, seed + 1);
      const auto e = inventory::relative_error(res.model, held);
      out << "test_relative_error mean " << e.mean << " max " << e.max << "\n";
    }
    return kOk;
  }

  // serve
  std::string model_dir, host = "127.0.0.1";
  int port = 8080, queue = 16;
  bool no_audit = false;
  int serve() {
    std::string dir = model_dir;
    if (dir.empty())
      if (const char* env = std::getenv("SHAPESOS_MODEL_DIR")) dir = env;
    if (dir.empty()) throw ValidationError("give --model-dir or set SHAPESOS_MODEL_DIR");
    service::ServiceConfig cfg;
    cfg.model_dir = dir;
    cfg.queue_capacity = static_cast<std::size_t>(std::max(1, queue));
    cfg.audit_on_load = !no_audit;
    service::Service svc(cfg);
    svc.load();
    out << "loaded " << svc.models().size() << " models from " << dir << "\n"
        << "listening on http://" << host << ":" << port << "\n";
    out.flush();
    if (!svc.listen(host, port)) throw Error("could not listen on " + host + ":" + std::to_string(port));
    return kOk;
  }
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Shape-constrained polynomial regression tools"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Runner R(out, err);
  auto seed_opt = [&](CLI::App* sc) { sc->add_option("--seed", R.seed, "Random seed")->capture_default_str(); };
  int (Runner::*action)() = nullptr;

  auto* fit = app.add_subcommand("fit", "Fit a shape-constrained polynomial to a CSV");
  fit->add_option("--data", R.data, "Training CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--box", R.box_file, "Box file (lower/upper lines)")->check(CLI::ExistingFile);
  fit->add_option("--out", R.model_out, "Model file to write")->required();
  fit->add_option("--shape", R.shape)->check(CLI::IsMember({"none", "convex", "bounded", "band", "partial"}))
      ->capture_default_str();
  fit->add_option("--degree", R.degree)->capture_default_str();
  fit->add_option("--r", R.r, "Multiplier half-degree")->capture_default_str();
  fit->add_option("--gram", R.gram)->check(CLI::IsMember({"psd", "dd", "sdd"}))->capture_default_str();
  fit->add_option("--K", R.K, "Derivative bounds lo:hi,... (empty side = unbounded)");
  fit->add_option("--margin", R.margin, "Certify derivative bounds shrunk by this much")->capture_default_str();
  fit->add_option("--ell", R.ell, "Hessian band lower");
  fit->add_option("--L", R.L, "Hessian band upper");
  fit->add_option("--block", R.blocks, "Curvature block, e.g. convex:0,1 or concave:2");
  fit->add_option("--max-iters", R.max_iters, "Interior-point iteration cap");
  fit->add_flag("--global", R.global, "Global certificate without box multipliers");
  fit->add_flag("--no-certificates", R.no_certs, "Do not store Gram certificates");
  fit->add_flag("--skip-audit", R.skip_audit);
  seed_opt(fit);
  fit->callback([&] { action = &Runner::fit; });

  auto* pred = app.add_subcommand("predict", "Evaluate a model at one point");
  pred->add_option("--model", R.model_in)->required()->check(CLI::ExistingFile);
  pred->add_option("--point", R.point, "Comma-separated coordinates")->required();
  seed_opt(pred);
  pred->callback([&] { action = &Runner::predict; });

  auto* upd = app.add_subcommand("update", "Refit a convex model around its certificate after new data");
  upd->add_option("--model", R.model_in)->required()->check(CLI::ExistingFile);
  upd->add_option("--new", R.new_data, "CSV with the new rows")->required()->check(CLI::ExistingFile);
  upd->add_option("--data", R.data, "Original training CSV (default: recorded in the model)");
  upd->add_option("--mode", R.mode)->check(CLI::IsMember({"dd", "sdd"}))->capture_default_str();
  upd->add_option("--out", R.model_out, "Write the refitted model here");
  upd->add_flag("--no-certificates", R.no_certs);
  seed_opt(upd);
  upd->callback([&] { action = &Runner::update; });

  auto* cert = app.add_subcommand("certify", "Replay certificates and grid-audit a model");
  cert->add_option("--model", R.model_in)->required()->check(CLI::ExistingFile);
  cert->add_option("--density", R.density, "Grid points per axis");
  cert->add_option("--samples", R.samples, "Random audit samples");
  cert->add_option("--lp", R.lp, "Also check optimal-value shapes on this many random LPs");
  seed_opt(cert);
  cert->callback([&] { action = &Runner::certify; });

  auto* syn = app.add_subcommand("synth", "Synthetic convex regression data");
  syn->add_option("--m", R.m)->capture_default_str();
  syn->add_option("--n", R.n)->capture_default_str();
  syn->add_option("--sigma", R.sigma)->capture_default_str();
  syn->add_option("--out", R.csv_out)->required();
  seed_opt(syn);
  syn->callback([&] { action = &Runner::synth; });

  auto* bench = app.add_subcommand("benchmark", "Train/test RMSE and solve time over a grid");
  bench->add_option("--m", R.grid_m)->capture_default_str();
  bench->add_option("--n", R.grid_n)->capture_default_str();
  bench->add_option("--d", R.grid_d)->capture_default_str();
  bench->add_option("--r", R.grid_r)->capture_default_str();
  bench->add_option("--seeds", R.seeds)->capture_default_str();
  bench->add_option("--test-points", R.test_points)->capture_default_str();
  bench->add_option("--sigma", R.sigma)->capture_default_str();
  bench->add_option("--out", R.csv_out, "Median table CSV");
  bench->add_option("--runs", R.runs_out, "Per-seed CSV");
  seed_opt(bench);
  bench->callback([&] { action = &Runner::benchmark; });

  auto* tr = app.add_subcommand("transfer", "Color transfer with a smooth strongly convex potential");
  tr->add_option("--input", R.input)->required()->check(CLI::ExistingFile);
  tr->add_option("--target", R.target)->required()->check(CLI::ExistingFile);
  tr->add_option("--out", R.image_out)->required();
  tr->add_option("--ell", R.t_ell)->capture_default_str();
  tr->add_option("--L", R.t_L)->capture_default_str();
  tr->add_option("--degree", R.t_degree)->capture_default_str();
  tr->add_option("--r", R.t_r)->capture_default_str();
  tr->add_option("--epsilon", R.epsilon)->capture_default_str();
  tr->add_option("--bins", R.bins, "Histogram bins per channel, 0 keeps every color")->capture_default_str();
  tr->add_option("--max-outer", R.max_outer)->capture_default_str();
  tr->add_option("--rel-tol", R.rel_tol)->capture_default_str();
  tr->add_option("--trace", R.trace_out, "Objective trace CSV");
  tr->add_option("--potential", R.potential_out, "Save the fitted potential");
  tr->add_flag("--force", R.force, "Allow very large couplings");
  tr->add_flag("--no-certificates", R.no_certs);
  seed_opt(tr);
  tr->callback([&] { action = &Runner::transfer; });

  auto inv_opts = [&](CLI::App* sc) {
    sc->add_option("--instance", R.instance, "Instance file")->check(CLI::ExistingFile);
    sc->add_option("--example", R.example, "Built-in seasonal instance with this horizon");
    sc->add_option("--set", R.set, "Override the uncertainty set (box|ellipsoid)");
  };
  auto* isolve = app.add_subcommand("inventory-solve", "Worst-case cost of one contract");
  inv_opts(isolve);
  isolve->add_option("--alpha-plus", R.ap)->required();
  isolve->add_option("--alpha-minus", R.am)->required();
  isolve->add_option("--beta-plus", R.bp)->required();
  isolve->add_option("--beta-minus", R.bm)->required();
  isolve->add_option("--L", R.Lc)->required();
  seed_opt(isolve);
  isolve->callback([&] { action = &Runner::inventory_solve; });

  auto* ifit = app.add_subcommand("inventory-fit", "Fit the contract surrogate");
  inv_opts(ifit);
  ifit->add_option("--m", R.inv_m, "Sampled contracts")->capture_default_str();
  ifit->add_option("--degree", R.degree)->capture_default_str();
  ifit->add_option("--r", R.r)->capture_default_str();
  ifit->add_option("--test", R.test, "Held-out contracts for the relative error");
  ifit->add_option("--out", R.model_out)->required();
  ifit->add_flag("--no-certificates", R.no_certs);
  seed_opt(ifit);
  ifit->callback([&] { action = &Runner::inventory_fit; });

  auto* srv = app.add_subcommand("serve", "HTTP prediction service");
  srv->add_option("--model-dir", R.model_dir, "Directory of .model/.inv files (default $SHAPESOS_MODEL_DIR)");
  srv->add_option("--host", R.host)->capture_default_str();
  srv->add_option("--port", R.port)->capture_default_str();
  srv->add_option("--queue", R.queue, "Exact-solve queue capacity")->capture_default_str();
  srv->add_flag("--no-audit", R.no_audit, "Skip the audit when loading models");
  seed_opt(srv);
  srv->callback([&] { action = &Runner::serve; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  try {
    return (R.*action)();
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const MissingCertificate& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const OutsideHull& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const SolverFailed& e) {
    err << "solver failure: " << e.what() << "\n";
    return kSolver;
  } catch (const NonConvergence& e) {
    err << "solver failure: " << e.what() << "\n";
    return kSolver;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kOther;
  }
}

}  // namespace shapesos::cli

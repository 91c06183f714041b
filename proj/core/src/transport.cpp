#include "shapesos/transport.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_map>

#include <png.h>

#include "shapesos/errors.hpp"

namespace shapesos::transport {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Image read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&img, path.c_str()) == 0)
    throw ValidationError("cannot read PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  Image out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  if (png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr) == 0) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ValidationError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.rgb.size() != 3 * image.pixels()) throw DimensionMismatch("image buffer does not match its size");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (png_image_write_to_file(&img, path.c_str(), 0, image.rgb.data(), 0, nullptr) == 0)
    throw ValidationError("cannot write PNG " + path.string() + ": " + img.message);
}

void DiscreteMeasure::validate() const {
  if (support.rows() == 0 || support.rows() != weights.size()) throw ValidationError("measure needs matching support and weights");
  if ((weights.array() <= 0.0).any()) throw ValidationError("measure weights must be positive");
  if (std::abs(weights.sum() - 1.0) > 1e-12) throw ValidationError("measure weights must sum to 1");
  if ((support.array() < 0.0).any() || (support.array() > 1.0).any())
    throw ValidationError("measure support must lie in the unit cube");
}

DiscreteMeasure measure_from_image(const Image& image, int bins) {
  if (image.pixels() == 0) throw ValidationError("empty image");
  if (image.rgb.size() != 3 * image.pixels()) throw DimensionMismatch("image buffer does not match its size");
  if (bins < 0 || bins > 256) throw ValidationError("bin resolution must lie in 0..256");
  struct Cell {
    double sum[3] = {0.0, 0.0, 0.0};
    std::size_t count = 0;
  };
  std::map<std::uint32_t, Cell> cells;
  for (std::size_t p = 0; p < image.pixels(); ++p) {
    const std::uint8_t* c = &image.rgb[3 * p];
    std::uint32_t key;
    if (bins == 0) {
      key = (static_cast<std::uint32_t>(c[0]) << 16) | (static_cast<std::uint32_t>(c[1]) << 8) | c[2];
    } else {
      const auto q = [&](std::uint8_t v) { return static_cast<std::uint32_t>(v) * static_cast<std::uint32_t>(bins) / 256; };
      key = (q(c[0]) * static_cast<std::uint32_t>(bins) + q(c[1])) * static_cast<std::uint32_t>(bins) + q(c[2]);
    }
    Cell& cell = cells[key];
    for (int k = 0; k < 3; ++k) cell.sum[k] += c[k];
    ++cell.count;
  }
  DiscreteMeasure mu;
  mu.support.resize(static_cast<Eigen::Index>(cells.size()), 3);
  mu.weights.resize(static_cast<Eigen::Index>(cells.size()));
  const double total = static_cast<double>(image.pixels());
  Eigen::Index i = 0;
  for (const auto& [key, cell] : cells) {
    for (int k = 0; k < 3; ++k) mu.support(i, k) = cell.sum[k] / static_cast<double>(cell.count) / 256.0;
    mu.weights[i] = static_cast<double>(cell.count) / total;
    ++i;
  }
  mu.weights /= mu.weights.sum();
  return mu;
}

Coupling sinkhorn(const VectorXd& a, const VectorXd& b, const MatrixXd& C, const SinkhornOptions& options) {
  const Eigen::Index N = a.size(), M = b.size();
  if (C.rows() != N || C.cols() != M) throw DimensionMismatch("cost matrix does not match the marginals");
  if (N == 0 || M == 0) throw ValidationError("empty marginals");
  if (!(options.epsilon > 0.0)) throw ValidationError("epsilon must be positive");
  if ((a.array() <= 0.0).any() || (b.array() <= 0.0).any()) throw ValidationError("marginals must be positive");
  if (std::abs(a.sum() - b.sum()) > 1e-9 * a.sum()) throw ValidationError("marginals must have equal mass");
  if (!C.allFinite()) throw ValidationError("cost matrix must be finite");

  double scale = 1.0;
  if (options.normalize_cost) {
    const double mx = C.maxCoeff();
    if (mx > 0.0) scale = mx;
  }
  const double eps = options.epsilon;
  const MatrixXd K = -C / (scale * eps);  // N x M, contiguous columns
  const MatrixXd Kt = K.transpose();      // M x N, contiguous rows of K
  const VectorXd loga = a.array().log(), logb = b.array().log();
  VectorXd u = VectorXd::Zero(N), v = VectorXd::Zero(M);

  // log sum_k exp(col_k + w_k) of every column of Z
  auto lse_cols = [](const MatrixXd& Z, const VectorXd& w, VectorXd& out) {
    for (Eigen::Index j = 0; j < Z.cols(); ++j) {
      const auto col = Z.col(j);
      double mx = -INFINITY;
      for (Eigen::Index k = 0; k < col.size(); ++k) mx = std::max(mx, col[k] + w[k]);
      double s = 0.0;
      for (Eigen::Index k = 0; k < col.size(); ++k) s += std::exp(col[k] + w[k] - mx);
      out[j] = mx + std::log(s);
    }
  };

  Coupling res;
  VectorXd lr(N), lc(M);
  int it = 0;
  for (; it < options.max_iters; ++it) {
    lse_cols(Kt, v, lr);  // row sums of the current plan are exp(u + lr)
    if (it > 0) {
      double err = 0.0;
      for (Eigen::Index i = 0; i < N; ++i) err += std::abs(std::exp(u[i] + lr[i]) - a[i]);
      if (err <= options.tol) {
        res.converged = true;
        break;
      }
    }
    u = loga - lr;
    lse_cols(K, u, lc);
    v = logb - lc;
  }
  res.iterations = it;
  res.P.resize(N, M);
  for (Eigen::Index j = 0; j < M; ++j)
    for (Eigen::Index i = 0; i < N; ++i) res.P(i, j) = std::exp(K(i, j) + u[i] + v[j]);
  res.row_sums = res.P.rowwise().sum();
  res.col_sums = res.P.colwise().sum().transpose();
  res.marginal_error = (res.row_sums - a).lpNorm<1>() + (res.col_sums - b).lpNorm<1>();
  res.epsilon = eps * scale;
  if (!res.converged && options.throw_on_failure)
    throw NonConvergence("Sinkhorn stopped after " + std::to_string(it) + " iterations with marginal error " +
                         std::to_string(res.marginal_error));
  return res;
}

MatrixXd squared_distances(const MatrixXd& G, const MatrixXd& Y) {
  if (G.cols() != Y.cols()) throw DimensionMismatch("point sets of different dimension");
  const VectorXd g2 = G.rowwise().squaredNorm(), y2 = Y.rowwise().squaredNorm();
  MatrixXd C = -2.0 * G * Y.transpose();
  C.colwise() += g2;
  C.rowwise() += y2.transpose();
  return C.cwiseMax(0.0);
}

double transport_cost(const MatrixXd& P, const MatrixXd& G, const MatrixXd& Y) {
  return P.cwiseProduct(squared_distances(G, Y)).sum();
}

double entropy_term(const MatrixXd& P) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < P.size(); ++k) {
    const double p = P.data()[k];
    if (p > 0.0) s += p * (std::log(p) - 1.0);
  }
  return s;
}

MatrixXd gradients(const est::FittedModel& f, const MatrixXd& X) {
  const auto grad = poly::gradient(f.original_poly());
  MatrixXd G(X.rows(), static_cast<Eigen::Index>(grad.size()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const VectorXd x = X.row(i).transpose();
    for (std::size_t k = 0; k < grad.size(); ++k) G(i, static_cast<Eigen::Index>(k)) = grad[k](x);
  }
  return G;
}

est::FittedModel fit_potential(const MatrixXd& P, const MatrixXd& X, const MatrixXd& Y, const PotentialParams& params,
                               const est::FitOptions& options) {
  const Eigen::Index N = X.rows();
  const int n = static_cast<int>(X.cols());
  if (P.rows() != N || P.cols() != Y.rows() || Y.cols() != n) throw DimensionMismatch("coupling does not match the point sets");
  if (!(params.ell > 0.0) || params.L < params.ell) throw ValidationError("potential band needs 0 < ell <= L");
  if (params.d < 2) throw ValidationError("potential degree must be at least 2");

  const poly::Box box = poly::Box::unit(n);
  est::FitOptions opt = options;
  opt.scaling = est::resolve_scaling(box, options);
  const est::Scaling& sc = *opt.scaling;
  const auto basis = poly::MonomialBasis::make(n, params.d);
  const auto nb = static_cast<Eigen::Index>(basis->size());

  // Column of d/dt_k of each monomial, or -1 when it vanishes.
  std::vector<std::vector<Eigen::Index>> lower(static_cast<std::size_t>(n), std::vector<Eigen::Index>(basis->size(), -1));
  for (int k = 0; k < n; ++k)
    for (std::size_t c = 0; c < basis->size(); ++c) {
      poly::Exponent e = (*basis)[c];
      if (e[static_cast<std::size_t>(k)] == 0) continue;
      --e[static_cast<std::size_t>(k)];
      lower[static_cast<std::size_t>(k)][c] = static_cast<Eigen::Index>(basis->index_of(e));
    }

  const VectorXd a = P.rowwise().sum();
  const MatrixXd Cm = P * Y;
  std::vector<Eigen::Index> used;
  for (Eigen::Index i = 0; i < N; ++i)
    if (a[i] > 0.0) used.push_back(i);
  const auto rows = static_cast<Eigen::Index>(used.size()) * n + 1;
  MatrixXd A = MatrixXd::Zero(rows, nb);
  VectorXd y = VectorXd::Zero(rows);
  double constant = P.cwiseProduct((VectorXd::Ones(N) * Y.rowwise().squaredNorm().transpose())).sum();
  Eigen::Index row = 0;
  for (Eigen::Index i : used) {
    const VectorXd t = sc.apply(X.row(i).transpose());
    const VectorXd z = basis->evaluate(t);
    const double w = std::sqrt(a[i]);
    for (int k = 0; k < n; ++k, ++row) {
      for (std::size_t c = 0; c < basis->size(); ++c) {
        const Eigen::Index lo = lower[static_cast<std::size_t>(k)][c];
        if (lo < 0) continue;
        A(row, static_cast<Eigen::Index>(c)) = w * (*basis)[c][static_cast<std::size_t>(k)] * z[lo] / sc.half_width[k];
      }
      y[row] = Cm(i, k) / w;
    }
    constant -= Cm.row(i).squaredNorm() / a[i];
  }
  A(row, 0) = 1.0;  // pins the constant coefficient

  est::FittedModel model =
      est::fit_shaped_lsq(A, y, box, params.d, params.r, est::ShapeSpec::band(params.ell, params.L), opt);
  auto exact = [](double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
  };
  model.provenance.extra["objective_constant"] = exact(constant);
  model.provenance.extra["transport_cost"] = exact(model.train_sse + constant);
  return model;
}

est::FittedModel initial_potential(int n, double ell, double L) {
  if (!(ell > 0.0) || L < ell) throw ValidationError("potential band needs 0 < ell <= L");
  est::FittedModel f;
  f.box = poly::Box::unit(n);
  f.scaling = est::Scaling::to_unit(f.box);
  f.shape = est::ShapeSpec::band(ell, L);
  f.degree = 2;
  poly::Polynomial q(n, 2);
  for (int i = 0; i < n; ++i) {
    const auto xi = poly::Polynomial::variable(n, i);
    q += xi * xi;
  }
  q *= 0.25 * (ell + L);
  f.poly = q.compose_affine(f.scaling.half_width, f.scaling.center);
  f.provenance.status = "initial";
  return f;
}

TransferResult alternate(const DiscreteMeasure& mu, const DiscreteMeasure& nu, const TransferParams& params,
                         const est::FitOptions& options) {
  mu.validate();
  nu.validate();
  if (mu.dim() != nu.dim()) throw DimensionMismatch("measures live in different dimensions");
  if (static_cast<double>(mu.size()) * nu.size() > kMaxCouplingEntries && !params.force)
    throw ValidationError("coupling would have more than 1e8 entries; bin the colors or force");
  if (params.max_outer < 1) throw ValidationError("at least one outer iteration is needed");

  const MatrixXd& X = mu.support;
  const MatrixXd& Y = nu.support;
  TransferResult res;
  res.potential = initial_potential(mu.dim(), params.potential.ell, params.potential.L);
  // eps is relative to the largest cost of the identity map
  const double id_max = squared_distances(X, Y).maxCoeff();
  const double scale = id_max > 0.0 ? id_max : 1.0;
  MatrixXd G = gradients(res.potential, X);
  MatrixXd C = squared_distances(G, Y);
  res.epsilon_abs = params.sinkhorn.epsilon * scale;
  SinkhornOptions so = params.sinkhorn;
  so.epsilon = res.epsilon_abs;
  so.normalize_cost = false;

  auto record = [&]() {
    const double tc = res.coupling.P.cwiseProduct(C).sum();
    res.transport.push_back(tc);
    res.objective.push_back(tc + res.epsilon_abs * entropy_term(res.coupling.P));
  };
  res.coupling = sinkhorn(mu.weights, nu.weights, C, so);
  record();
  double prev = res.objective.back();
  for (int outer = 1; outer <= params.max_outer; ++outer) {
    res.potential = fit_potential(res.coupling.P, X, Y, params.potential, options);
    G = gradients(res.potential, X);
    C = squared_distances(G, Y);
    record();
    res.coupling = sinkhorn(mu.weights, nu.weights, C, so);
    record();
    res.outer = outer;
    const double now = res.objective.back();
    if ((prev - now) <= params.rel_tol * std::max(std::abs(prev), 1e-12)) {
      res.converged = true;
      break;
    }
    prev = now;
  }
  return res;
}

MapResult apply_map(const est::FittedModel& f, const Image& image) {
  if (image.rgb.size() != 3 * image.pixels()) throw DimensionMismatch("image buffer does not match its size");
  if (f.num_vars() != 3) throw DimensionMismatch("color maps need a potential in three variables");
  const auto grad = poly::gradient(f.original_poly());
  MapResult out;
  out.image = image;
  std::unordered_map<std::uint32_t, std::pair<std::array<std::uint8_t, 3>, bool>> cache;
  for (std::size_t p = 0; p < image.pixels(); ++p) {
    const std::uint8_t* c = &image.rgb[3 * p];
    const std::uint32_t key = (static_cast<std::uint32_t>(c[0]) << 16) | (static_cast<std::uint32_t>(c[1]) << 8) | c[2];
    auto it = cache.find(key);
    if (it == cache.end()) {
      const Eigen::Vector3d x(c[0] / 256.0, c[1] / 256.0, c[2] / 256.0);
      std::array<std::uint8_t, 3> q{};
      bool clamped = false;
      for (int k = 0; k < 3; ++k) {
        double y = grad[static_cast<std::size_t>(k)](x);
        if (y < 0.0 || y > 1.0) clamped = true;
        y = std::clamp(y, 0.0, 1.0);
        q[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(std::min(255.0, std::round(256.0 * y)));
      }
      it = cache.emplace(key, std::make_pair(q, clamped)).first;
    }
    std::copy(it->second.first.begin(), it->second.first.end(), &out.image.rgb[3 * p]);
    if (it->second.second) ++out.clamped;
  }
  return out;
}

}  // namespace shapesos::transport

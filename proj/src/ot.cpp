// Copyright 2026 The PCD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pcd/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pcd::ot {
namespace {

std::vector<double> row_norms(const Matrix& m) {
  std::vector<double> n(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (double v : m.row(i)) s += v * v;
    n[i] = std::sqrt(s);
  }
  return n;
}

}  // namespace

void SinkhornConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("sinkhorn: epsilon must be positive");
  if (!(marginal_tol > 0.0)) throw std::invalid_argument("sinkhorn: marginal_tol must be positive");
  if (max_iters == 0) throw std::invalid_argument("sinkhorn: max_iters must be positive");
  if (!(min_marginal_clamp > 0.0)) throw std::invalid_argument("sinkhorn: min_marginal_clamp must be positive");
}

CostMatrix build_cost(const Matrix& features, const Matrix& prototypes) {
  if (features.cols() != prototypes.cols()) {
    throw std::invalid_argument("build_cost: feature width " + std::to_string(features.cols()) +
                                " != prototype width " + std::to_string(prototypes.cols()));
  }
  const auto fn = row_norms(features);
  const auto pn = row_norms(prototypes);
  Matrix dots = matmul_bt(features, prototypes);
  for (std::size_t j = 0; j < dots.rows(); ++j) {
    for (std::size_t k = 0; k < dots.cols(); ++k) {
      const double denom = std::max(fn[j], kNormClamp) * std::max(pn[k], kNormClamp);
      const double cosine = std::clamp(dots(j, k) / denom, -1.0, 1.0);
      dots(j, k) = 1.0 - cosine;
    }
  }
  return CostMatrix{std::move(dots)};
}

TransportPlan sinkhorn(const CostMatrix& cost, std::span<const double> u, std::span<const double> v,
                       const SinkhornConfig& cfg) {
  cfg.validate();
  const std::size_t m = cost.rows();
  const std::size_t k = cost.cols();
  if (u.size() != m) throw std::invalid_argument("sinkhorn: row marginal length mismatch");
  if (v.size() != k) throw std::invalid_argument("sinkhorn: column marginal length mismatch");
  if (m == 0 || k == 0) throw std::invalid_argument("sinkhorn: empty problem");
  if (!cost.values.all_finite()) throw std::invalid_argument("sinkhorn: non-finite cost");
  require_prob_vector(u, "sinkhorn row marginal");
  for (double x : u) {
    if (!(x > 0.0)) throw std::invalid_argument("sinkhorn: row marginal must be strictly positive");
  }

  std::vector<double> col(v.begin(), v.end());
  {
    double s = 0.0;
    for (double& x : col) {
      if (!std::isfinite(x) || x < 0.0) throw std::invalid_argument("sinkhorn: invalid column marginal");
      x = std::max(x, cfg.min_marginal_clamp);
      s += x;
    }
    for (double& x : col) x /= s;
  }

  const double eps = cfg.epsilon;
  std::vector<double> log_u(m), log_v(k);
  for (std::size_t j = 0; j < m; ++j) log_u[j] = std::log(u[j]);
  for (std::size_t c = 0; c < k; ++c) log_v[c] = std::log(col[c]);

  // Dual potentials scaled by 1/ε: log T_jk = a_j + b_k - C_jk / ε.
  std::vector<double> a(m, 0.0), b(k, 0.0);
  Matrix scaled(m, k);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t c = 0; c < k; ++c) scaled(j, c) = -cost.values(j, c) / eps;

  std::vector<double> buf(std::max(m, k));
  auto update_rows = [&] {
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t c = 0; c < k; ++c) buf[c] = scaled(j, c) + b[c];
      a[j] = log_u[j] - log_sum_exp(std::span<const double>(buf.data(), k));
    }
  };
  auto update_cols = [&] {
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t j = 0; j < m; ++j) buf[j] = scaled(j, c) + a[j];
      b[c] = log_v[c] - log_sum_exp(std::span<const double>(buf.data(), m));
    }
  };
  // Column marginals are exact after update_cols; only rows need checking.
  auto row_residual = [&] {
    double r = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += std::exp(scaled(j, c) + a[j] + b[c]);
      r = std::max(r, std::abs(s - u[j]));
    }
    return r;
  };

  TransportPlan out;
  double residual = std::numeric_limits<double>::infinity();
  std::size_t it = 0;
  while (it < cfg.max_iters) {
    update_rows();
    update_cols();
    ++it;
    residual = row_residual();
    if (cfg.record_trace && it % 10 == 0) out.residual_trace.push_back(residual);
    if (residual <= cfg.marginal_tol) break;
  }

  out.plan = Matrix(m, k);
  out.row_mass.assign(m, 0.0);
  out.col_mass.assign(k, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t c = 0; c < k; ++c) {
      // Strict positivity: exp can underflow for very small ε.
      const double t = std::max(std::exp(scaled(j, c) + a[j] + b[c]), std::numeric_limits<double>::min());
      out.plan(j, c) = t;
      out.row_mass[j] += t;
      out.col_mass[c] += t;
    }
  }
  double achieved = 0.0;
  for (std::size_t j = 0; j < m; ++j) achieved = std::max(achieved, std::abs(out.row_mass[j] - u[j]));
  for (std::size_t c = 0; c < k; ++c) achieved = std::max(achieved, std::abs(out.col_mass[c] - col[c]));
  out.row_target.assign(u.begin(), u.end());
  out.col_target = std::move(col);
  out.iterations = it;
  out.residual = achieved;
  out.converged = achieved <= cfg.marginal_tol;
  return out;
}

double transport_cost(const Matrix& plan, const CostMatrix& cost) {
  if (plan.rows() != cost.rows() || plan.cols() != cost.cols()) {
    throw std::invalid_argument("transport_cost: shape mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < plan.size(); ++i) s += plan.data()[i] * cost.values.data()[i];
  return s;
}

double transport_cost(const TransportPlan& plan, const CostMatrix& cost) {
  return transport_cost(plan.plan, cost);
}

double regularized_objective(const Matrix& plan, const CostMatrix& cost, double epsilon) {
  double neg_h = 0.0;
  for (double t : plan.data()) {
    if (t > 0.0) neg_h += t * std::log(t);
  }
  return transport_cost(plan, cost) + epsilon * neg_h;
}

void cost_gradient(const Matrix& features, const Matrix& prototypes, const Matrix& weights,
                   double scale, Matrix& grad_features, Matrix& grad_prototypes) {
  const std::size_t m = features.rows();
  const std::size_t k = prototypes.rows();
  const std::size_t dim = features.cols();
  if (prototypes.cols() != dim || weights.rows() != m || weights.cols() != k ||
      grad_features.rows() != m || grad_features.cols() != dim || grad_prototypes.rows() != k ||
      grad_prototypes.cols() != dim) {
    throw std::invalid_argument("cost_gradient: shape mismatch");
  }
  const auto fn = row_norms(features);
  const auto pn = row_norms(prototypes);
  const Matrix dots = matmul_bt(features, prototypes);

  // C_jk = 1 - <f_j, μ_k> / (|f_j| |μ_k|), with each norm clamped below.
  // When a norm is clamped the denominator is constant in that argument.
  for (std::size_t j = 0; j < m; ++j) {
    const double nf = std::max(fn[j], kNormClamp);
    const bool f_free = fn[j] > kNormClamp;
    auto f = features.row(j);
    auto gf = grad_features.row(j);
    for (std::size_t c = 0; c < k; ++c) {
      const double w = weights(j, c) * scale;
      if (w == 0.0) continue;
      const double np = std::max(pn[c], kNormClamp);
      const bool p_free = pn[c] > kNormClamp;
      const double denom = nf * np;
      const double cosine = dots(j, c) / denom;
      auto mu = prototypes.row(c);
      auto gp = grad_prototypes.row(c);
      for (std::size_t t = 0; t < dim; ++t) {
        double dcos_df = mu[t] / denom;
        if (f_free) dcos_df -= cosine * f[t] / (nf * nf);
        double dcos_dmu = f[t] / denom;
        if (p_free) dcos_dmu -= cosine * mu[t] / (np * np);
        gf[t] -= w * dcos_df;
        gp[t] -= w * dcos_dmu;
      }
    }
  }
}

}  // namespace pcd::ot

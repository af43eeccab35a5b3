// Copyright 2026 The FedVGCN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedvgcn/polyact.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fedvgcn/error.h"

namespace fedvgcn {
namespace {

constexpr double kScaleFloor = 1e-3;

double simpson(const RealFn& f, const RealFn& g, double lo, double hi,
               int panels) {
  const double h = (hi - lo) / panels;
  double acc = f(lo) * g(lo) + f(hi) * g(hi);
  for (int i = 1; i < panels; ++i) {
    const double x = lo + i * h;
    acc += (i % 2 == 1 ? 4.0 : 2.0) * f(x) * g(x);
  }
  return acc * h / 3.0;
}

void check_degree(int k) {
  if (k < 0 || k > kMaxPolyDegree) {
    throw ConfigError("polynomial degree " + std::to_string(k) +
                      " outside [0, " + std::to_string(kMaxPolyDegree) + "]");
  }
}

// Coefficients of q(alpha*x + beta) given coefficients of q.
std::vector<double> compose_affine(const std::vector<double>& q, double alpha,
                                   double beta) {
  std::vector<double> out(q.size(), 0.0);
  std::vector<double> power{1.0};  // (alpha x + beta)^k
  for (std::size_t k = 0; k < q.size(); ++k) {
    for (std::size_t j = 0; j < power.size(); ++j) out[j] += q[k] * power[j];
    std::vector<double> next(power.size() + 1, 0.0);
    for (std::size_t j = 0; j < power.size(); ++j) {
      next[j] += beta * power[j];
      next[j + 1] += alpha * power[j];
    }
    power = std::move(next);
  }
  return out;
}

}  // namespace

void Interval::validate() const {
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) {
    throw ConfigError("interval needs finite lo < hi");
  }
}

double PolyCoeffs::eval(double x) const {
  double acc = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
  return acc;
}

QuadActivation::QuadActivation(double a) : a_(a) {
  if (!std::isfinite(a) || a <= 0.0) {
    throw ConfigError("activation scale a must be positive and finite");
  }
  c2_ = 4.0 / (3.0 * std::numbers::pi * a);
  c0_ = a / (2.0 * std::numbers::pi);
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

double legendre(int k, double x) {
  check_degree(k);
  if (k == 0) return 1.0;
  double prev = 1.0;
  double cur = x;
  for (int n = 1; n < k; ++n) {
    const double next = ((2 * n + 1) * x * cur - n * prev) / (n + 1);
    prev = cur;
    cur = next;
  }
  return cur;
}

PolyCoeffs legendre_coeffs(int k) {
  check_degree(k);
  std::vector<double> prev{1.0};
  if (k == 0) return {prev};
  std::vector<double> cur{0.0, 1.0};
  for (int n = 1; n < k; ++n) {
    std::vector<double> next(n + 2, 0.0);
    for (int j = 0; j <= n; ++j) next[j + 1] += (2 * n + 1) * cur[j];
    for (int j = 0; j < n; ++j) next[j] -= n * prev[j];
    for (double& c : next) c /= (n + 1);
    prev = std::move(cur);
    cur = std::move(next);
  }
  return {cur};
}

double inner_product(const RealFn& f, const RealFn& g, Interval iv,
                     int n_quad) {
  iv.validate();
  if (n_quad <= 0 || n_quad % 2 != 0) {
    throw ConfigError("Simpson quadrature needs a positive even panel count");
  }
  if (iv.lo < 0.0 && iv.hi > 0.0 && n_quad >= 4) {
    // Share panels between the two halves, keeping both counts even.
    int left = static_cast<int>(std::lround(n_quad * (-iv.lo) /
                                            (iv.hi - iv.lo) / 2.0)) * 2;
    left = std::clamp(left, 2, n_quad - 2);
    return simpson(f, g, iv.lo, 0.0, left) +
           simpson(f, g, 0.0, iv.hi, n_quad - left);
  }
  return simpson(f, g, iv.lo, iv.hi, n_quad);
}

PolyCoeffs least_squares_fit(const RealFn& f, int degree, Interval iv,
                             int n_quad) {
  check_degree(degree);
  iv.validate();
  // x in [lo, hi] maps to t in [-1, 1]; Psi_i(x) = P_i(t(x)).
  const double alpha = 2.0 / (iv.hi - iv.lo);
  const double beta = -(iv.hi + iv.lo) / (iv.hi - iv.lo);
  std::vector<double> out(degree + 1, 0.0);
  for (int i = 0; i <= degree; ++i) {
    RealFn psi = [=](double x) { return legendre(i, alpha * x + beta); };
    const double num = inner_product(f, psi, iv, n_quad);
    const double den = inner_product(psi, psi, iv, n_quad);
    if (!std::isfinite(num) || !std::isfinite(den) || den == 0.0) {
      throw DataError("non-finite projection integral at basis index " +
                      std::to_string(i));
    }
    const double b = num / den;
    const auto mono = compose_affine(legendre_coeffs(i).coeffs, alpha, beta);
    for (std::size_t j = 0; j < mono.size(); ++j) out[j] += b * mono[j];
  }
  return {out};
}

double act(const QuadActivation& q, double x) {
  if (!std::isfinite(x)) throw DataError("activation input is not finite");
  return q.value(x);
}

double act_deriv(const QuadActivation& q, double x) {
  if (!std::isfinite(x)) throw DataError("activation input is not finite");
  return q.slope(x);
}

QuadActivation fit_scale_param(std::span<const double> samples) {
  if (samples.empty()) throw DataError("no samples to fit the scale from");
  double a = 0.0;
  for (double s : samples) {
    if (!std::isfinite(s)) throw DataError("non-finite activation sample");
    a = std::max(a, std::abs(s));
  }
  return QuadActivation(std::max(a, kScaleFloor));
}

}  // namespace fedvgcn

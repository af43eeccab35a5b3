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

// Legendre machinery, least-squares polynomial fits and the quadratic
// activation that stands in for ReLU under additive encryption.

#ifndef FEDVGCN_POLYACT_H_
#define FEDVGCN_POLYACT_H_

#include <functional>
#include <span>
#include <vector>

namespace fedvgcn {

inline constexpr int kMaxPolyDegree = 10;
inline constexpr int kDefaultQuadPanels = 2048;

using RealFn = std::function<double(double)>;

struct Interval {
  double lo;
  double hi;

  // Throws ConfigError unless lo < hi and both are finite.
  void validate() const;
};

// Monomial coefficients, index = degree.
struct PolyCoeffs {
  std::vector<double> coeffs;

  int degree() const { return static_cast<int>(coeffs.size()) - 1; }
  double eval(double x) const;
};

// p(x) = c2 x^2 + x/2 + c0 with c2 = 4/(3 pi a) and c0 = a/(2 pi).
class QuadActivation {
 public:
  explicit QuadActivation(double a);

  double a() const { return a_; }
  double c2() const { return c2_; }
  double c1() const { return 0.5; }
  double c0() const { return c0_; }

  // Unchecked evaluation for hot loops; see act() for the checked form.
  double value(double x) const { return (c2_ * x + 0.5) * x + c0_; }
  double slope(double x) const { return 2.0 * c2_ * x + 0.5; }

 private:
  double a_;
  double c2_;
  double c0_;
};

double relu(double x);

// P_k(x) by the three-term recurrence. k must be in [0, kMaxPolyDegree].
double legendre(int k, double x);

// Monomial coefficients of P_k.
PolyCoeffs legendre_coeffs(int k);

// Composite Simpson estimate of the integral of f*g over iv with n_quad
// panels. When iv straddles 0 the range is split there so a kink at the
// origin (relu) lands on a panel boundary.
double inner_product(const RealFn& f, const RealFn& g, Interval iv,
                     int n_quad = kDefaultQuadPanels);

// L2 projection of f onto polynomials of degree <= `degree` over iv, computed
// in the shifted Legendre basis and expanded to monomials.
PolyCoeffs least_squares_fit(const RealFn& f, int degree, Interval iv,
                             int n_quad = kDefaultQuadPanels);

// Checked evaluation: throws DataError on non-finite x.
double act(const QuadActivation& q, double x);
double act_deriv(const QuadActivation& q, double x);

// a = max |sample|, floored at 1e-3.
QuadActivation fit_scale_param(std::span<const double> samples);

}  // namespace fedvgcn

#endif  // FEDVGCN_POLYACT_H_

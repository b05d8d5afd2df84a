#pragma once

#include <cmath>
#include <functional>

namespace mdsaf::testing {

inline double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
                      double whole, double tol, int depth) {
  const double m = 0.5 * (a + b), lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) return left + right + (left + right - whole) / 15.0;
  return simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

// int_0^u exp(t^2/2) dt by adaptive Simpson.
inline double normalized_integral_oracle(double u) {
  auto f = [](double t) { return std::exp(0.5 * t * t); };
  if (u == 0.0) return 0.0;
  const double fa = f(0), fm = f(u / 2), fb = f(u);
  return simpson(f, 0.0, u, fa, fm, fb, u / 6.0 * (fa + 4 * fm + fb), 1e-13 * std::max(1.0, f(u)), 50);
}

// eta * int_0^{y/eta} exp(u^2/2) du.
inline double saturate_oracle(double y, double eta) {
  const double v = eta * normalized_integral_oracle(std::abs(y) / eta);
  return y < 0 ? -v : v;
}

}  // namespace mdsaf::testing

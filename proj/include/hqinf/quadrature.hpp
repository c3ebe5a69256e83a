#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace hqinf {

struct QuadratureOptions {
  double abs_tol = 1e-8;
  std::size_t max_subdivisions = 1'000'000;
  int max_depth = 60;
};

struct QuadratureResult {
  double value = 0.0;
  double error_estimate = 0.0;
  std::size_t subdivisions = 0;
  bool converged = true;
};

namespace detail {

struct SimpsonPanel {
  double a, m, b;
  double fa, fm, fb;
  double whole;
  double tol;
  int depth;
};

inline double simpson(double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

}  // namespace detail

/// Adaptive Simpson with Richardson correction on [a, b].
///
/// The interval is first cut into four panels so that narrow features are not
/// missed by the very first Simpson estimate. Integrands with known jumps or
/// kinks should go through integrate() with breakpoints instead.
template <class F>
QuadratureResult adaptive_simpson(F&& f, double a, double b, const QuadratureOptions& opts = {}) {
  QuadratureResult out;
  if (!(b > a)) return out;

  constexpr int kInitialPanels = 4;
  std::vector<detail::SimpsonPanel> stack;
  stack.reserve(128);
  const double width = (b - a) / kInitialPanels;
  for (int p = kInitialPanels - 1; p >= 0; --p) {
    const double lo = a + width * p;
    const double hi = (p == kInitialPanels - 1) ? b : a + width * (p + 1);
    const double mid = 0.5 * (lo + hi);
    const double flo = f(lo), fmid = f(mid), fhi = f(hi);
    stack.push_back({lo, mid, hi, flo, fmid, fhi, detail::simpson(lo, hi, flo, fmid, fhi),
                     opts.abs_tol / kInitialPanels, 0});
  }

  while (!stack.empty()) {
    const detail::SimpsonPanel p = stack.back();
    stack.pop_back();
    const double lm = 0.5 * (p.a + p.m);
    const double rm = 0.5 * (p.m + p.b);
    const double flm = f(lm), frm = f(rm);
    const double left = detail::simpson(p.a, p.m, p.fa, flm, p.fm);
    const double right = detail::simpson(p.m, p.b, p.fm, frm, p.fb);
    const double delta = left + right - p.whole;
    const bool exhausted = out.subdivisions >= opts.max_subdivisions || p.depth >= opts.max_depth ||
                           !(p.m > p.a && p.b > p.m);
    if (std::abs(delta) <= 15.0 * p.tol || exhausted) {
      if (exhausted && std::abs(delta) > 15.0 * p.tol) out.converged = false;
      out.value += left + right + delta / 15.0;
      out.error_estimate += std::abs(delta) / 15.0;
      continue;
    }
    ++out.subdivisions;
    stack.push_back({p.m, rm, p.b, p.fm, frm, p.fb, right, 0.5 * p.tol, p.depth + 1});
    stack.push_back({p.a, lm, p.m, p.fa, flm, p.fm, left, 0.5 * p.tol, p.depth + 1});
  }
  return out;
}

/// Integral of f over [a, b], split at the given breakpoints (those outside
/// (a, b) are ignored). The absolute tolerance is shared across pieces in
/// proportion to their length. Reversed limits flip the sign.
template <class F>
double integrate(F&& f, double a, double b, std::span<const double> breakpoints = {},
                 const QuadratureOptions& opts = {}) {
  if (a == b) return 0.0;
  if (a > b) return -integrate(f, b, a, breakpoints, opts);
  if (!std::isfinite(a) || !std::isfinite(b))
    throw std::invalid_argument("integrate: limits must be finite");

  std::vector<double> cuts{a};
  for (double c : breakpoints)
    if (c > a && c < b) cuts.push_back(c);
  cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    QuadratureOptions piece = opts;
    piece.abs_tol = opts.abs_tol * (cuts[i + 1] - cuts[i]) / (b - a);
    total += adaptive_simpson(f, cuts[i], cuts[i + 1], piece).value;
  }
  return total;
}

}  // namespace hqinf

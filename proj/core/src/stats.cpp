#include "cppap/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cppap/errors.hpp"

namespace cppap {

namespace {

// Regularized incomplete gamma functions P(a,x)/Q(a,x), series + continued
// fraction split at x = a+1 (Numerical Recipes style).
double gamma_p_series(double a, double x) {
  double ap = a, sum = 1.0 / a, del = sum;
  for (int i = 0; i < 500; ++i) {
    ap += 1;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1 - a, c = 1 / tiny, d = 1 / b, h = d;
  for (int i = 1; i < 500; ++i) {
    double an = -double(i) * (double(i) - a);
    b += 2;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double chi_square_sf(double x, double df) {
  if (x <= 0) return 1.0;
  double a = df / 2.0, xx = x / 2.0;
  if (xx < a + 1.0) return 1.0 - gamma_p_series(a, xx);
  return gamma_q_contfrac(a, xx);
}

KruskalWallisResult kruskal_wallis_bonferroni(
    const std::vector<std::vector<double>>& groups, std::size_t num_comparisons) {
  if (groups.size() < 2) throw ConfigError("kruskal_wallis needs >= 2 groups");
  for (const auto& g : groups) {
    if (g.empty()) throw ConfigError("kruskal_wallis: empty group");
  }

  struct Entry {
    double value;
    std::size_t group;
  };
  std::vector<Entry> pooled;
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    for (double v : groups[gi]) pooled.push_back({v, gi});
  std::size_t n = pooled.size();
  std::sort(pooled.begin(), pooled.end(),
            [](const Entry& a, const Entry& b) { return a.value < b.value; });

  // Midranks and the tie-correction sum of (t^3 - t).
  std::vector<double> rank_sum(groups.size(), 0.0);
  double tie_sum = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && pooled[j].value == pooled[i].value) ++j;
    double midrank = (double(i + 1) + double(j)) / 2.0;
    double t = double(j - i);
    tie_sum += t * t * t - t;
    for (std::size_t k = i; k < j; ++k) rank_sum[pooled[k].group] += midrank;
    i = j;
  }

  double nn = double(n);
  double h = 0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    h += rank_sum[gi] * rank_sum[gi] / double(groups[gi].size());
  h = 12.0 / (nn * (nn + 1.0)) * h - 3.0 * (nn + 1.0);

  double correction = 1.0 - tie_sum / (nn * nn * nn - nn);
  KruskalWallisResult res;
  if (correction <= 0) {
    // All pooled values identical.
    res.h = 0;
    res.p_raw = 1;
    res.p_adj = 1;
    return res;
  }
  res.h = h / correction;
  if (res.h < 0 && res.h > -1e-12) res.h = 0;  // rounding guard
  res.p_raw = chi_square_sf(res.h, double(groups.size() - 1));
  res.p_adj = std::min(1.0, res.p_raw * double(num_comparisons));
  return res;
}

}  // namespace cppap

#pragma once

#include <cstddef>
#include <vector>

namespace cppap {

struct KruskalWallisResult {
  double h = 0;      // tie-corrected H statistic
  double p_raw = 1;  // chi-square approximation, df = groups-1
  double p_adj = 1;  // Bonferroni: min(1, p_raw * num_comparisons)
};

// Midranks with tie correction. All-identical pooled data gives H=0, p=1.
KruskalWallisResult kruskal_wallis_bonferroni(
    const std::vector<std::vector<double>>& groups, std::size_t num_comparisons);

// Upper tail of the chi-square distribution with df degrees of freedom.
double chi_square_sf(double x, double df);

}  // namespace cppap

#include <doctest.h>

#include <cmath>
#include <random>

#include "cppap/stats.hpp"
#include "cppap/errors.hpp"

using namespace cppap;

TEST_CASE("chi-square survival function reference points") {
  // Classical critical values: P(X > 3.841; df=1) ~ 0.05, P(X > 5.991; df=2) ~ 0.05.
  CHECK(chi_square_sf(3.841, 1) == doctest::Approx(0.05).epsilon(2e-3));
  CHECK(chi_square_sf(5.991, 2) == doctest::Approx(0.05).epsilon(2e-3));
  CHECK(chi_square_sf(0.0, 1) == 1.0);
  CHECK(chi_square_sf(-1.0, 3) == 1.0);
  // df=2 has the closed form exp(-x/2).
  for (double x : {0.5, 1.0, 4.0, 10.0})
    CHECK(chi_square_sf(x, 2) == doctest::Approx(std::exp(-x / 2.0)).epsilon(1e-10));
}

TEST_CASE("kruskal-wallis oracle H([1,2,3],[4,5,6])") {
  auto res = kruskal_wallis_bonferroni({{1, 2, 3}, {4, 5, 6}}, 1);
  // Ranks 1..6, R1=6, R2=15: H = 12/(6*7) * (36/3 + 225/3) - 3*7 = 3.857...
  CHECK(std::abs(res.h - 3.857142857142857) < 0.001);
  CHECK(res.p_raw == doctest::Approx(chi_square_sf(res.h, 1)).epsilon(1e-12));
}

TEST_CASE("identical groups give H=0, p=1") {
  auto res = kruskal_wallis_bonferroni({{2, 2, 2}, {2, 2, 2}}, 9);
  CHECK(res.h == 0.0);
  CHECK(res.p_raw == 1.0);
  CHECK(res.p_adj == 1.0);
}

TEST_CASE("bonferroni clamps at 1") {
  // Pick groups whose raw p is about 0.2 territory and scale by 9.
  auto res = kruskal_wallis_bonferroni({{1, 3, 5}, {2, 4, 6}}, 9);
  CHECK(res.p_raw > 0.05);
  CHECK(res.p_adj == 1.0);

  auto strong = kruskal_wallis_bonferroni(
      {{1, 2, 3, 4, 5, 6, 7, 8}, {11, 12, 13, 14, 15, 16, 17, 18}}, 2);
  CHECK(strong.p_adj == doctest::Approx(std::min(1.0, strong.p_raw * 2)).epsilon(1e-15));
  CHECK(strong.p_adj < 1.0);
}

TEST_CASE("ties use midranks with tie correction") {
  auto res = kruskal_wallis_bonferroni({{1, 1, 2}, {2, 3, 3}}, 1);
  CHECK(res.h > 0.0);
  CHECK(res.p_raw > 0.0);
  CHECK(res.p_raw < 1.0);
}

TEST_CASE("H is invariant under strictly monotone transforms") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<std::vector<double>> groups(3);
  for (auto& g : groups)
    for (int i = 0; i < 7; ++i) g.push_back(u(rng));
  auto base = kruskal_wallis_bonferroni(groups, 1);
  auto transformed = groups;
  for (auto& g : transformed)
    for (auto& v : g) v = std::exp(3.0 * v) + 10.0;
  auto after = kruskal_wallis_bonferroni(transformed, 1);
  CHECK(base.h == doctest::Approx(after.h).epsilon(1e-12));
}

TEST_CASE("degenerate inputs are rejected") {
  CHECK_THROWS_AS(kruskal_wallis_bonferroni({{1.0, 2.0}}, 1), ConfigError);
  CHECK_THROWS_AS(kruskal_wallis_bonferroni({{1.0}, {}}, 1), ConfigError);
}

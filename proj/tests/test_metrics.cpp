#include "mto/metrics.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace mto;

namespace {

TrainingCurve make(std::vector<std::pair<double, double>> pts, std::string name = "c") {
  TrainingCurve c;
  c.method_name = std::move(name);
  for (auto [e, s] : pts) c.samples.push_back({e, s});
  return c;
}

TrainingCurve random_curve(std::mt19937_64& rng, int n, double e0, double e1) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TrainingCurve c;
  c.method_name = "random";
  for (int i = 0; i < n; ++i) {
    const double e = e0 + (e1 - e0) * i / (n - 1);
    c.samples.push_back({e, 50.0 + 30.0 * e / e1 + 3.0 * u(rng)});
  }
  return c;
}

}  // namespace

TEST(Interpolate, Examples) {
  const auto c = make({{100, 80}, {200, 82}});
  EXPECT_EQ(interpolate(c, 100), 80);
  EXPECT_EQ(interpolate(c, 200), 82);
  EXPECT_DOUBLE_EQ(interpolate(c, 150), 81);
  EXPECT_THROW(interpolate(c, 50), RangeError);
  EXPECT_THROW(interpolate(c, 200.5), RangeError);
}

TEST(TrainingCurve, Validation) {
  EXPECT_THROW(make({{1, 1}}).validate(), ArgumentError);
  EXPECT_THROW(make({{1, 1}, {1, 2}}).validate(), ArgumentError);
  EXPECT_THROW(make({{1, 1}, {2, NAN}}).validate(), ArgumentError);
}

TEST(Rauc, IdentityIsOne) {
  std::mt19937_64 rng(1);
  const auto c = random_curve(rng, 40, 0, 400);
  EXPECT_EQ(rauc(c, c, 100, 400), 1.0);
}

TEST(Rauc, DoubledImprovementIsTwo) {
  std::mt19937_64 rng(2);
  const auto s1 = random_curve(rng, 30, 0, 300);
  const double base = interpolate(s1, 60);
  TrainingCurve s2 = s1;
  for (auto& s : s2.samples) s.score = base + 2.0 * (s.score - base);
  EXPECT_NEAR(rauc(s1, s2, 60, 300), 2.0, 1e-9);
}

TEST(Rauc, RefinementStable) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto s1 = random_curve(rng, 25, 0, 100);
  const auto s2 = random_curve(rng, 17, 0, 100);
  const double ref = rauc(s1, s2, 13.3, 97.1);
  for (int t = 0; t < 50; ++t) {
    const double e = 100.0 * u(rng);
    for (int which = 0; which < 2; ++which) {
      TrainingCurve a = s1, b = s2;
      TrainingCurve& target = which == 0 ? a : b;
      const double v = interpolate(target, e);
      auto it = std::lower_bound(target.samples.begin(), target.samples.end(), e,
                                 [](const CurveSample& s, double x) { return s.epoch < x; });
      if (it != target.samples.end() && it->epoch == e) continue;
      target.samples.insert(it, {e, v});
      EXPECT_NEAR(rauc(a, b, 13.3, 97.1), ref, 1e-9);
    }
  }
}

TEST(Rauc, ShiftInvariant) {
  std::mt19937_64 rng(4);
  const auto s1 = random_curve(rng, 20, 0, 100);
  const auto s2 = random_curve(rng, 20, 0, 100);
  const double ref = rauc(s1, s2, 20, 100);
  for (double c : {-1000.0, -3.5, 0.25, 77.0}) {
    TrainingCurve a = s1, b = s2;
    for (auto& s : a.samples) s.score += c;
    for (auto& s : b.samples) s.score += c;
    EXPECT_NEAR(rauc(a, b, 20, 100), ref, 1e-9);
  }
}

TEST(Rauc, ScaleCovariantAboutBaselineStart) {
  std::mt19937_64 rng(5);
  const auto s1 = random_curve(rng, 20, 0, 100);
  const auto s2 = random_curve(rng, 20, 0, 100);
  const double ref = rauc(s1, s2, 20, 100);
  const double base = interpolate(s1, 20);
  for (double k : {0.1, 3.0}) {
    TrainingCurve a = s1, b = s2;
    for (auto& s : a.samples) s.score = base + k * (s.score - base);
    for (auto& s : b.samples) s.score = base + k * (s.score - base);
    EXPECT_NEAR(rauc(a, b, 20, 100), ref, 1e-9);
  }
}

TEST(Rauc, MisalignedKnotsIntegrateExactly) {
  // s1 linear from (0,0) to (10,10); s2 constant 5 on knots that do not match s1.
  const auto s1 = make({{0, 0}, {10, 10}});
  const auto s2 = make({{0, 5}, {3, 5}, {7, 5}, {10, 5}});
  // numerator: int_2^10 (5 - 2) = 24; denominator: int_2^10 (E - 2) = 32
  EXPECT_NEAR(rauc(s1, s2, 2, 10), 0.75, 1e-15);
}

TEST(Rauc, Errors) {
  const auto flat = make({{0, 1}, {10, 1}});
  const auto rising = make({{0, 0}, {10, 5}});
  EXPECT_THROW(rauc(flat, rising, 0, 10), DegenerateBaselineError);
  EXPECT_THROW(rauc(rising, rising, -1, 10), RangeError);
  EXPECT_THROW(rauc(rising, make({{2, 0}, {10, 5}}), 0, 10), RangeError);
  EXPECT_THROW(rauc(rising, rising, 5, 5), RangeError);
}

TEST(CurveCsv, RoundTripAndHeaderCheck) {
  const auto dir = std::filesystem::temp_directory_path() / "mto_metrics_test";
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(6);
  const auto c = random_curve(rng, 10, 0, 9);
  write_curve_csv(c, (dir / "c.csv").string());
  const auto back = read_curve_csv((dir / "c.csv").string(), "back");
  ASSERT_EQ(back.samples.size(), c.samples.size());
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].epoch, c.samples[i].epoch);
    EXPECT_EQ(back.samples[i].score, c.samples[i].score);
  }
  {
    std::ofstream bad(dir / "bad.csv");
    bad << "step,value\n0,1\n1,2\n";
  }
  EXPECT_THROW(read_curve_csv((dir / "bad.csv").string()), IoError);
  EXPECT_THROW(read_curve_csv((dir / "missing.csv").string()), IoError);
  std::filesystem::remove_all(dir);
}

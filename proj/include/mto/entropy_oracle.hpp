#pragma once

// Brute-force check of the row-entropy ordering that motivates the sparsity
// loss: within one affinity row whose first n entries (masked columns) are
// equal and each below 1/n, putting the row maximum on a visible column gives
// lower entropy than putting it on the masked block.
//
// The row is enumerated on a simplex grid with resolution 1/grid_steps. The
// masked block receives j grid units in total (j < grid_steps, so each entry
// stays strictly below 1/n); the remaining units are split over the visible
// block as an integer partition (entropy is permutation invariant, so
// partitions cover every composition). Zero entries are raised to the floor
// and the row is renormalised.

#include "mto/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace mto {

struct EntropyCaseReport {
  Index n = 0;
  Index N = 0;
  Index grid_steps = 0;
  double floor = 1e-4;

  std::size_t case1_count = 0;  // argmax in the masked block
  std::size_t case2_count = 0;  // argmax in the visible block

  double max_case1_entropy = 0;
  double min_case1_entropy = 0;
  double max_case2_entropy = 0;
  double min_case2_entropy = 0;

  // Entropies at the grid points closest to the limiting configurations:
  // masked block at its largest admissible mass, or one visible entry holding everything.
  double case1_near_limit_entropy = 0;
  double case2_near_limit_entropy = 0;

  // Limiting rows under the same floor-then-renormalise rule: all mass split
  // over the masked block, or all mass on one visible entry.
  double case1_limit_entropy = 0;
  double case2_limit_entropy = 0;

  bool case1_monotone = false;  // per-level minimum decreases toward the limit
  bool case2_monotone = false;  // per-level maximum decreases toward the limit
  bool inequality_holds = false;
};

namespace detail {

inline double entropy_of(const std::vector<double>& p) {
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

// Calls f(parts) for every non-increasing sequence of `slots` nonnegative integers summing to `total`.
inline void for_each_partition(int total, int slots, const std::function<void(const std::vector<int>&)>& f) {
  std::vector<int> parts(static_cast<std::size_t>(slots), 0);
  std::function<void(int, int, int)> rec = [&](int pos, int remaining, int cap) {
    if (pos == slots) {
      if (remaining == 0) f(parts);
      return;
    }
    const int left = slots - pos;
    for (int v = std::min(cap, remaining); v >= 0; --v) {
      if (static_cast<long>(v) * left < remaining) break;
      parts[static_cast<std::size_t>(pos)] = v;
      rec(pos + 1, remaining - v, v);
    }
    parts[static_cast<std::size_t>(pos)] = 0;
  };
  rec(0, total, total);
}

}  // namespace detail

inline EntropyCaseReport entropy_case_oracle(Index n, Index N, Index grid_steps, double floor = 1e-4) {
  if (n < 1) throw ArgumentError("entropy_case_oracle: n must be at least 1");
  if (n >= N) throw ArgumentError("entropy_case_oracle: n must be smaller than N");
  if (grid_steps < 10) throw ArgumentError("entropy_case_oracle: grid_steps must be at least 10");
  if (!(floor > 0) || floor * static_cast<double>(N) >= 1.0) throw ArgumentError("entropy_case_oracle: bad floor");

  EntropyCaseReport rep;
  rep.n = n;
  rep.N = N;
  rep.grid_steps = grid_steps;
  rep.floor = floor;

  const int steps = static_cast<int>(grid_steps);
  const int vis = static_cast<int>(N - n);
  const double inf = std::numeric_limits<double>::infinity();

  rep.max_case1_entropy = rep.max_case2_entropy = -inf;
  rep.min_case1_entropy = rep.min_case2_entropy = inf;

  // Per-level extremes: case 1 indexed by masked-block units j, case 2 by the largest visible part k.
  std::vector<double> case1_level_min(static_cast<std::size_t>(steps) + 1, inf);
  std::vector<double> case2_level_max(static_cast<std::size_t>(steps) + 1, -inf);

  std::vector<double> row(static_cast<std::size_t>(N));
  for (int j = 0; j < steps; ++j) {
    detail::for_each_partition(steps - j, vis, [&](const std::vector<int>& parts) {
      const double unit = 1.0 / steps;
      const double a = std::max(j * unit / static_cast<double>(n), floor);
      double sum = 0;
      for (Index i = 0; i < n; ++i) sum += row[static_cast<std::size_t>(i)] = a;
      for (int v = 0; v < vis; ++v) sum += row[static_cast<std::size_t>(n + v)] = std::max(parts[static_cast<std::size_t>(v)] * unit, floor);
      for (double& p : row) p /= sum;

      const double a_norm = row[0];
      const double b_max = row[static_cast<std::size_t>(n)];  // parts are non-increasing
      if (a_norm == b_max) return;                              // tie: neither case
      const double h = detail::entropy_of(row);
      if (a_norm > b_max) {
        ++rep.case1_count;
        rep.max_case1_entropy = std::max(rep.max_case1_entropy, h);
        rep.min_case1_entropy = std::min(rep.min_case1_entropy, h);
        auto& slot = case1_level_min[static_cast<std::size_t>(j)];
        slot = std::min(slot, h);
      } else {
        ++rep.case2_count;
        rep.max_case2_entropy = std::max(rep.max_case2_entropy, h);
        rep.min_case2_entropy = std::min(rep.min_case2_entropy, h);
        auto& slot = case2_level_max[static_cast<std::size_t>(parts[0])];
        slot = std::max(slot, h);
      }
    });
  }

  rep.case1_near_limit_entropy = case1_level_min[static_cast<std::size_t>(steps - 1)];
  rep.case2_near_limit_entropy = case2_level_max[static_cast<std::size_t>(steps)];

  {
    const double f = floor;
    std::vector<double> lim1(static_cast<std::size_t>(N), f);
    for (Index i = 0; i < n; ++i) lim1[static_cast<std::size_t>(i)] = 1.0 / static_cast<double>(n);
    std::vector<double> lim2(static_cast<std::size_t>(N), f);
    lim2[static_cast<std::size_t>(n)] = 1.0;
    for (auto* lim : {&lim1, &lim2}) {
      const double total = std::accumulate(lim->begin(), lim->end(), 0.0);
      for (double& p : *lim) p /= total;
    }
    rep.case1_limit_entropy = detail::entropy_of(lim1);
    rep.case2_limit_entropy = detail::entropy_of(lim2);
  }

  // Monotone approach: walking the levels toward the limit never increases the extreme.
  constexpr double slack = 1e-12;
  auto monotone_tail = [&](const std::vector<double>& levels, bool (*admissible)(double)) {
    double prev = inf;
    bool seen = false;
    for (double v : levels) {
      if (!admissible(v)) continue;
      if (seen && v > prev + slack) return false;
      prev = v;
      seen = true;
    }
    return seen;
  };
  auto finite = +[](double v) { return std::isfinite(v); };
  rep.case1_monotone = monotone_tail(case1_level_min, finite) &&
                       rep.case1_limit_entropy <= rep.case1_near_limit_entropy + slack;
  rep.case2_monotone = monotone_tail(case2_level_max, finite) &&
                       rep.case2_limit_entropy <= rep.case2_near_limit_entropy + slack;

  rep.inequality_holds = rep.case1_count > 0 && rep.case2_count > 0 &&
                         rep.case2_near_limit_entropy < rep.case1_near_limit_entropy &&
                         rep.min_case2_entropy < rep.min_case1_entropy;
  return rep;
}

}  // namespace mto

#pragma once

#include "mto/backbone.hpp"
#include "mto/core.hpp"
#include "mto/objectives.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace mto {

struct HeterogeneityProfile {
  std::vector<double> values;  // H per recorded depth
  std::vector<Index> depths;   // depth of each value; 0 is the initial embedding
  Routing routing = Routing::encoder_masked;
  std::string checkpoint_id;
  std::string batch_descriptor;
  std::vector<std::string> warnings;
};

// Fraction of adjacent pairs with H^l <= H^{l-1}. Profiles shorter than two
// entries are vacuously monotone.
inline double monotonicity_score(const std::vector<double>& values) {
  if (values.size() < 2) return 1.0;
  std::size_t ok = 0;
  for (std::size_t l = 1; l < values.size(); ++l)
    if (values[l] <= values[l - 1]) ++ok;
  return static_cast<double>(ok) / static_cast<double>(values.size() - 1);
}

inline double monotonicity_score(const HeterogeneityProfile& p) { return monotonicity_score(p.values); }

// Mean over traces of per-trace H at every depth. Layers whose mask lacks
// masked or visible tokens are skipped with a warning.
template <typename T>
HeterogeneityProfile profile(const std::vector<LayerTrace<T>>& traces, const AffinityOptions& opts = {}) {
  if (traces.empty()) throw ArgumentError("profile: no traces");
  HeterogeneityProfile out;
  out.routing = traces.front().routing;
  const std::size_t depth = traces.front().states().size();
  for (const auto& t : traces)
    if (t.states().size() != depth) throw DimensionError("profile: traces have different depths");
  for (std::size_t l = 0; l < depth; ++l) {
    double sum = 0;
    std::size_t used = 0;
    for (const auto& t : traces) {
      if (t.mask.masked.empty() || t.mask.visible.empty()) continue;
      sum += static_cast<double>(heterogeneity<T>(t.states()[l], t.mask, opts));
      ++used;
    }
    if (used == 0) {
      out.warnings.push_back("depth " + std::to_string(l) + " skipped: no masked/visible split");
      continue;
    }
    if (used < traces.size())
      out.warnings.push_back("depth " + std::to_string(l) + ": " + std::to_string(traces.size() - used) +
                             " trace(s) without masked/visible split ignored");
    out.values.push_back(sum / static_cast<double>(used));
    out.depths.push_back(static_cast<Index>(l));
  }
  return out;
}

template <typename T>
HeterogeneityProfile profile(const LayerTrace<T>& trace, const AffinityOptions& opts = {}) {
  return profile(std::vector<LayerTrace<T>>{trace}, opts);
}

struct QuadrantMap {
  Mat<double> matrix;             // min-max normalised, masked-first ordering
  std::vector<Index> ordering;    // ordering[k] = token index placed at row/col k
  Index masked_count = 0;
  // masked-masked, masked-visible, visible-masked, visible-visible (before normalisation)
  std::array<double, 4> quadrant_means{};
};

template <typename T>
QuadrantMap quadrant_map(const Mat<T>& states, const MaskSpec& mask, const AffinityOptions& opts = {}) {
  if (states.rows() != mask.n_patches) throw DimensionError("quadrant_map: state rows != mask size");
  if (mask.masked.empty() || mask.visible.empty()) throw ArgumentError("quadrant_map: degenerate mask");
  QuadrantMap q;
  q.ordering = mask.masked;
  q.ordering.insert(q.ordering.end(), mask.visible.begin(), mask.visible.end());
  q.masked_count = static_cast<Index>(mask.masked.size());
  const Mat<T> x = gather_rows(states, q.ordering);
  const Mat<double> a = softmax_affinity<T>(x, x, opts).values.template cast<double>();

  const Index m = q.masked_count;
  const Index v = a.rows() - m;
  q.quadrant_means = {a.topLeftCorner(m, m).mean(), a.topRightCorner(m, v).mean(), a.bottomLeftCorner(v, m).mean(),
                      a.bottomRightCorner(v, v).mean()};
  const double lo = a.minCoeff();
  const double hi = a.maxCoeff();
  if (hi > lo)
    q.matrix = (a.array() - lo) / (hi - lo);
  else
    q.matrix = Mat<double>::Constant(a.rows(), a.cols(), 0.5);
  return q;
}

struct CheckpointComparison {
  HeterogeneityProfile early;
  HeterogeneityProfile late;
  double early_score = 0;
  double late_score = 0;
  double score_difference = 0;  // late - early
};

template <typename T>
std::vector<LayerTrace<T>> trace_batch(const ModelParameters<T>& params, const std::vector<PatchGrid<T>>& batch,
                                       double ratio, std::uint64_t mask_seed) {
  std::vector<LayerTrace<T>> traces;
  traces.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const MaskSpec mask = sample_mask(batch[i].n_patches(), ratio, mix_seed(mask_seed, i));
    traces.push_back(forward_trace(batch[i], mask, params, params.config.routing));
  }
  return traces;
}

template <typename T>
CheckpointComparison compare_checkpoints(const ModelParameters<T>& early, const ModelParameters<T>& late,
                                         const std::vector<PatchGrid<T>>& batch, double ratio, std::uint64_t mask_seed,
                                         const AffinityOptions& opts = {}) {
  if (!(early.config == late.config)) throw ConfigError("compare_checkpoints: architecture mismatch");
  CheckpointComparison c;
  c.early = profile(trace_batch(early, batch, ratio, mask_seed), opts);
  c.late = profile(trace_batch(late, batch, ratio, mask_seed), opts);
  c.early_score = monotonicity_score(c.early);
  c.late_score = monotonicity_score(c.late);
  c.score_difference = c.late_score - c.early_score;
  return c;
}

}  // namespace mto

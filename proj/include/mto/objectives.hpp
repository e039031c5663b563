#pragma once

#include "mto/core.hpp"
#include "mto/patch_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace mto {

template <typename T = double>
struct AffinityMatrix {
  Mat<T> values;
  std::vector<Index> row_indices;
  std::vector<Index> col_indices;
};

// Affinities are raw dot products unless `scaled` divides the logits by sqrt(width).
struct AffinityOptions {
  bool scaled = false;
};

struct LossWeights {
  double lambda_spa = 0.01;
  double lambda_e = 0.01;
  double lambda_r = 0.01;
  double epsilon = 1e-6;

  void validate() const {
    if (lambda_spa < 0 || lambda_e < 0 || lambda_r < 0) throw ArgumentError("loss weights must be nonnegative");
    if (!(epsilon > 0)) throw ArgumentError("epsilon must be positive");
  }
};

enum class RankDirection { text_consistent, verbatim };

template <typename T>
struct ValueGrad {
  T value{};
  Mat<T> grad;
};

namespace detail {

template <typename T>
T logit_scale(Index width, const AffinityOptions& opts) {
  return opts.scaled ? T(1) / std::sqrt(static_cast<T>(width)) : T(1);
}

template <typename T>
void softmax_rows_inplace(Mat<T>& z) {
  for (Index r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    const T m = row.maxCoeff();
    row = (row.array() - m).exp();
    row /= row.sum();
  }
}

// -sum p log p for one row, with the log floor.
template <typename T>
T row_entropy(const Eigen::Ref<const RowVec<T>>& p) {
  T h = 0;
  for (Index j = 0; j < p.size(); ++j) h -= p[j] * safe_log(p[j]);
  return h;
}

// Backprop through row-wise softmax of a row block: given dL/dP returns dL/dZ.
template <typename T>
Mat<T> softmax_rows_backward(const Mat<T>& p, const Mat<T>& dp) {
  Mat<T> dz(p.rows(), p.cols());
  for (Index r = 0; r < p.rows(); ++r) {
    const T dot = p.row(r).dot(dp.row(r));
    dz.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
  }
  return dz;
}

// d(-p log p)/dp with the same floor as the forward pass.
template <typename T>
T neg_entropy_term_grad(T p) {
  return p < T(kLogFloor) ? -std::log(T(kLogFloor)) : -(std::log(p) + T(1));
}

}  // namespace detail

template <typename T>
AffinityMatrix<T> softmax_affinity(const Mat<T>& queries, const Mat<T>& keys, const AffinityOptions& opts = {}) {
  if (queries.cols() != keys.cols())
    throw DimensionError("softmax_affinity: query width " + std::to_string(queries.cols()) + " != key width " +
                         std::to_string(keys.cols()));
  AffinityMatrix<T> a;
  a.values = (queries * keys.transpose()) * detail::logit_scale<T>(queries.cols(), opts);
  detail::softmax_rows_inplace(a.values);
  a.row_indices.resize(static_cast<std::size_t>(queries.rows()));
  a.col_indices.resize(static_cast<std::size_t>(keys.rows()));
  for (std::size_t i = 0; i < a.row_indices.size(); ++i) a.row_indices[i] = static_cast<Index>(i);
  for (std::size_t i = 0; i < a.col_indices.size(); ++i) a.col_indices[i] = static_cast<Index>(i);
  return a;
}

template <typename T>
AffinityMatrix<T> masked_visible_affinity(const Mat<T>& states, const MaskSpec& mask, const AffinityOptions& opts = {}) {
  AffinityMatrix<T> a = softmax_affinity<T>(gather_rows(states, mask.masked), gather_rows(states, mask.visible), opts);
  a.row_indices = mask.masked;
  a.col_indices = mask.visible;
  return a;
}

namespace detail {

template <typename T>
void check_split(const Mat<T>& states, const MaskSpec& mask, const char* who) {
  if (states.rows() != mask.n_patches)
    throw DimensionError(std::string(who) + ": state rows " + std::to_string(states.rows()) + " != mask size " +
                         std::to_string(mask.n_patches));
  if (mask.masked.empty() || mask.visible.empty())
    throw ArgumentError(std::string(who) + ": needs at least one masked and one visible token");
}

}  // namespace detail

// Mean row entropy of softmax(X_M X_V^T).
template <typename T>
T heterogeneity(const Mat<T>& states, const MaskSpec& mask, const AffinityOptions& opts = {}) {
  detail::check_split(states, mask, "heterogeneity");
  const Mat<T> a = masked_visible_affinity(states, mask, opts).values;
  T h = 0;
  for (Index r = 0; r < a.rows(); ++r) h += detail::row_entropy<T>(a.row(r));
  return h / static_cast<T>(a.rows());
}

template <typename T>
ValueGrad<T> heterogeneity_with_grad(const Mat<T>& states, const MaskSpec& mask, const AffinityOptions& opts = {}) {
  detail::check_split(states, mask, "heterogeneity");
  const Mat<T> xm = gather_rows(states, mask.masked);
  const Mat<T> xv = gather_rows(states, mask.visible);
  const T scale = detail::logit_scale<T>(states.cols(), opts);
  Mat<T> a = (xm * xv.transpose()) * scale;
  detail::softmax_rows_inplace(a);

  const T inv_m = T(1) / static_cast<T>(a.rows());
  ValueGrad<T> out;
  Mat<T> da(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    out.value += detail::row_entropy<T>(a.row(r));
    for (Index c = 0; c < a.cols(); ++c) da(r, c) = inv_m * detail::neg_entropy_term_grad(a(r, c));
  }
  out.value *= inv_m;
  const Mat<T> dz = detail::softmax_rows_backward(a, da) * scale;
  out.grad = Mat<T>::Zero(states.rows(), states.cols());
  scatter_add_rows<T>(out.grad, dz * xv, mask.masked);
  scatter_add_rows<T>(out.grad, dz.transpose() * xm, mask.visible);
  return out;
}

// Mean over masked patches of the squared residual norm.
template <typename T>
T recon_loss(const Mat<T>& prediction, const Mat<T>& target, const MaskSpec& mask) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols())
    throw DimensionError("recon_loss: prediction and target shapes differ");
  if (mask.masked.empty()) throw ArgumentError("recon_loss: empty masked set");
  T sum = 0;
  for (Index i : mask.masked) {
    if (i < 0 || i >= prediction.rows()) throw IndexError("recon_loss: mask index out of range");
    sum += (prediction.row(i) - target.row(i)).squaredNorm();
  }
  return sum / static_cast<T>(mask.masked.size());
}

template <typename T>
ValueGrad<T> recon_loss_with_grad(const Mat<T>& prediction, const Mat<T>& target, const MaskSpec& mask) {
  ValueGrad<T> out;
  out.value = recon_loss(prediction, target, mask);
  out.grad = Mat<T>::Zero(prediction.rows(), prediction.cols());
  const T s = T(2) / static_cast<T>(mask.masked.size());
  for (Index i : mask.masked) out.grad.row(i) = s * (prediction.row(i) - target.row(i));
  return out;
}

template <typename T>
T recon_loss(const PatchGrid<T>& prediction, const PatchGrid<T>& target, const MaskSpec& mask) {
  return recon_loss(prediction.patches, target.patches, mask);
}

// Summed entropy of the visible rows of softmax(X X^T).
template <typename T>
T l_spa(const Mat<T>& initial_embedding, const MaskSpec& mask, const AffinityOptions& opts = {}) {
  if (initial_embedding.rows() != mask.n_patches) throw DimensionError("l_spa: state rows != mask size");
  if (mask.visible.empty()) throw ArgumentError("l_spa: no visible token");
  const Mat<T> xv = gather_rows(initial_embedding, mask.visible);
  Mat<T> p = (xv * initial_embedding.transpose()) * detail::logit_scale<T>(initial_embedding.cols(), opts);
  detail::softmax_rows_inplace(p);
  T loss = 0;
  for (Index r = 0; r < p.rows(); ++r) loss += detail::row_entropy<T>(p.row(r));
  return loss;
}

template <typename T>
ValueGrad<T> l_spa_with_grad(const Mat<T>& x, const MaskSpec& mask, const AffinityOptions& opts = {}) {
  if (x.rows() != mask.n_patches) throw DimensionError("l_spa: state rows != mask size");
  if (mask.visible.empty()) throw ArgumentError("l_spa: no visible token");
  const Mat<T> xv = gather_rows(x, mask.visible);
  const T scale = detail::logit_scale<T>(x.cols(), opts);
  Mat<T> p = (xv * x.transpose()) * scale;
  detail::softmax_rows_inplace(p);
  ValueGrad<T> out;
  Mat<T> dp(p.rows(), p.cols());
  for (Index r = 0; r < p.rows(); ++r) {
    out.value += detail::row_entropy<T>(p.row(r));
    for (Index c = 0; c < p.cols(); ++c) dp(r, c) = detail::neg_entropy_term_grad(p(r, c));
  }
  // Z = X_V X^T, so dX += dZ^T X_V over all rows and dX_V += dZ X.
  const Mat<T> dz = detail::softmax_rows_backward(p, dp) * scale;
  out.grad = dz.transpose() * xv;
  scatter_add_rows<T>(out.grad, dz * x, mask.visible);
  return out;
}

inline double l_e(double h0, double epsilon) {
  if (h0 < 0) throw ArgumentError("l_e: heterogeneity must be nonnegative");
  if (!(epsilon > 0)) throw ArgumentError("l_e: epsilon must be positive");
  return 1.0 / (h0 + epsilon);
}

inline double l_e_derivative(double h0, double epsilon) {
  const double s = h0 + epsilon;
  return -1.0 / (s * s);
}

namespace detail {

inline double softplus(double x) { return x > 30 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double rank_argument(std::span<const double> h, std::size_t l, RankDirection dir) {
  return dir == RankDirection::text_consistent ? h[l] - h[l - 1] : h[l - 1] - h[l];
}

}  // namespace detail

// text_consistent penalises any rise of H with depth; verbatim is the typeset sign.
inline double l_r(std::span<const double> profile, RankDirection dir = RankDirection::text_consistent) {
  if (profile.size() < 2) throw ArgumentError("l_r: profile needs at least two entries");
  double loss = 0;
  for (std::size_t l = 1; l < profile.size(); ++l) loss += detail::softplus(detail::rank_argument(profile, l, dir));
  return loss;
}

// dL_r / dH^l for every entry of the profile.
inline std::vector<double> l_r_gradient(std::span<const double> profile, RankDirection dir = RankDirection::text_consistent) {
  if (profile.size() < 2) throw ArgumentError("l_r: profile needs at least two entries");
  std::vector<double> g(profile.size(), 0.0);
  const double sign = dir == RankDirection::text_consistent ? 1.0 : -1.0;
  for (std::size_t l = 1; l < profile.size(); ++l) {
    const double s = detail::sigmoid(detail::rank_argument(profile, l, dir));
    g[l] += sign * s;
    g[l - 1] -= sign * s;
  }
  return g;
}

struct LossParts {
  double ss = 0;
  double spa = 0;
  double e = 0;
  double r = 0;
};

inline double total_loss(const LossParts& parts, const LossWeights& w) {
  const std::pair<const char*, double> named[] = {{"L_ss", parts.ss}, {"L_spa", parts.spa}, {"L_e", parts.e}, {"L_r", parts.r}};
  for (const auto& [name, v] : named)
    if (!std::isfinite(v)) throw NumericError(std::string("total_loss: non-finite part ") + name);
  return parts.ss + w.lambda_spa * parts.spa + w.lambda_e * parts.e + w.lambda_r * parts.r;
}

}  // namespace mto

#pragma once

// Small pre-norm transformer with two token-routing regimes:
//
//   encoder_masked  masked positions carry the shared mask token through every
//                   encoder layer (SimMIM style); the trace is the encoder.
//   decoder_masked  the encoder sees visible patches only; the decoder input
//                   re-inserts the mask token (MAE style); the trace is the decoder.
//
// Forward passes keep the activations needed by `backward`, which returns
// parameter gradients for an upstream gradient on the pixel predictions plus
// optional gradients injected at every recorded trace state.

#include "mto/core.hpp"
#include "mto/patch_pipeline.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace mto {

enum class Routing { encoder_masked, decoder_masked };

inline const char* to_string(Routing r) { return r == Routing::encoder_masked ? "encoder_masked" : "decoder_masked"; }

inline Routing routing_from_string(const std::string& s) {
  if (s == "encoder_masked" || s == "simmim") return Routing::encoder_masked;
  if (s == "decoder_masked" || s == "mae") return Routing::decoder_masked;
  throw ConfigError("unknown routing '" + s + "'");
}

struct ModelConfig {
  Routing routing = Routing::encoder_masked;
  Index image_size = 32;
  Index patch_size = 8;
  Index channels = 3;
  Index width = 64;
  Index heads = 4;
  Index encoder_layers = 4;
  Index decoder_layers = 2;  // used by decoder_masked only
  Index mlp_hidden = 128;
  double init_std = 0.02;

  Index n_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  Index patch_dim() const { return patch_size * patch_size * channels; }
  Index traced_layers() const { return routing == Routing::encoder_masked ? encoder_layers : decoder_layers; }

  void validate() const {
    if (patch_size <= 0 || image_size % patch_size != 0) throw ConfigError("image size must be divisible by patch size");
    if (width <= 0 || heads <= 0 || width % heads != 0) throw ConfigError("width must be divisible by heads");
    if (encoder_layers < 1) throw ConfigError("need at least one encoder layer");
    if (routing == Routing::decoder_masked && decoder_layers < 1) throw ConfigError("need at least one decoder layer");
    if (mlp_hidden <= 0) throw ConfigError("mlp_hidden must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct BlockParams {
  Mat<T> ln1_g, ln1_b;
  Mat<T> w_qkv, b_qkv;
  Mat<T> w_out, b_out;
  Mat<T> ln2_g, ln2_b;
  Mat<T> w_fc1, b_fc1;
  Mat<T> w_fc2, b_fc2;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "ln1.gamma", ln1_g);
    f(prefix + "ln1.beta", ln1_b);
    f(prefix + "attn.qkv.weight", w_qkv);
    f(prefix + "attn.qkv.bias", b_qkv);
    f(prefix + "attn.out.weight", w_out);
    f(prefix + "attn.out.bias", b_out);
    f(prefix + "ln2.gamma", ln2_g);
    f(prefix + "ln2.beta", ln2_b);
    f(prefix + "mlp.fc1.weight", w_fc1);
    f(prefix + "mlp.fc1.bias", b_fc1);
    f(prefix + "mlp.fc2.weight", w_fc2);
    f(prefix + "mlp.fc2.bias", b_fc2);
  }
};

// Vectors are stored as 1 x n matrices so every parameter has the same type.
template <typename T>
struct ModelParameters {
  ModelConfig config;
  Mat<T> patch_w, patch_b;
  Mat<T> pos;  // N x d, shared by encoder and decoder inputs
  Mat<T> mask_token;
  std::vector<BlockParams<T>> encoder;
  Mat<T> dec_embed_w, dec_embed_b;  // decoder_masked only
  std::vector<BlockParams<T>> decoder;
  Mat<T> head_w, head_b;

  // f(name, Mat<T>&) over every parameter in checkpoint order.
  template <typename F>
  void visit(F&& f) {
    f("patch_embed.weight", patch_w);
    f("patch_embed.bias", patch_b);
    f("pos_embed", pos);
    f("mask_token", mask_token);
    for (std::size_t l = 0; l < encoder.size(); ++l) encoder[l].visit("encoder." + std::to_string(l) + ".", f);
    if (config.routing == Routing::decoder_masked) {
      f("decoder_embed.weight", dec_embed_w);
      f("decoder_embed.bias", dec_embed_b);
      for (std::size_t l = 0; l < decoder.size(); ++l) decoder[l].visit("decoder." + std::to_string(l) + ".", f);
    }
    f("head.weight", head_w);
    f("head.bias", head_b);
  }

  template <typename F>
  void visit(F&& f) const {
    const_cast<ModelParameters*>(this)->visit([&](const std::string& name, Mat<T>& m) { f(name, static_cast<const Mat<T>&>(m)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  ModelParameters zeros_like() const {
    ModelParameters z = *this;
    z.visit([](const std::string&, Mat<T>& m) { m.setZero(); });
    return z;
  }
};

namespace detail {

template <typename T>
BlockParams<T> make_block(Index d, Index hidden) {
  BlockParams<T> b;
  b.ln1_g = Mat<T>::Ones(1, d);
  b.ln1_b = Mat<T>::Zero(1, d);
  b.w_qkv = Mat<T>::Zero(d, 3 * d);
  b.b_qkv = Mat<T>::Zero(1, 3 * d);
  b.w_out = Mat<T>::Zero(d, d);
  b.b_out = Mat<T>::Zero(1, d);
  b.ln2_g = Mat<T>::Ones(1, d);
  b.ln2_b = Mat<T>::Zero(1, d);
  b.w_fc1 = Mat<T>::Zero(d, hidden);
  b.b_fc1 = Mat<T>::Zero(1, hidden);
  b.w_fc2 = Mat<T>::Zero(hidden, d);
  b.b_fc2 = Mat<T>::Zero(1, d);
  return b;
}

}  // namespace detail

// Zero-filled parameters with the right shapes (LayerNorm gains at one).
template <typename T>
ModelParameters<T> shaped_parameters(const ModelConfig& cfg) {
  cfg.validate();
  const Index d = cfg.width;
  const Index D = cfg.patch_dim();
  const Index N = cfg.n_patches();
  ModelParameters<T> p;
  p.config = cfg;
  p.patch_w = Mat<T>::Zero(D, d);
  p.patch_b = Mat<T>::Zero(1, d);
  p.pos = Mat<T>::Zero(N, d);
  p.mask_token = Mat<T>::Zero(1, d);
  for (Index l = 0; l < cfg.encoder_layers; ++l) p.encoder.push_back(detail::make_block<T>(d, cfg.mlp_hidden));
  if (cfg.routing == Routing::decoder_masked) {
    p.dec_embed_w = Mat<T>::Zero(d, d);
    p.dec_embed_b = Mat<T>::Zero(1, d);
    for (Index l = 0; l < cfg.decoder_layers; ++l) p.decoder.push_back(detail::make_block<T>(d, cfg.mlp_hidden));
  }
  p.head_w = Mat<T>::Zero(d, D);
  p.head_b = Mat<T>::Zero(1, D);
  return p;
}

// 2-D sine-cosine table: the first half of the width encodes the grid row,
// the second half the column. Requires width % 4 == 0.
template <typename T>
Mat<T> sincos_positions(Index grid, Index width) {
  if (width % 4 != 0) throw ConfigError("sine-cosine positions need width divisible by 4");
  const Index quarter = width / 4;
  Mat<T> pos(grid * grid, width);
  for (Index y = 0; y < grid; ++y)
    for (Index x = 0; x < grid; ++x)
      for (Index k = 0; k < quarter; ++k) {
        const double omega = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(quarter));
        const Index row = y * grid + x;
        pos(row, k) = static_cast<T>(std::sin(y * omega));
        pos(row, quarter + k) = static_cast<T>(std::cos(y * omega));
        pos(row, 2 * quarter + k) = static_cast<T>(std::sin(x * omega));
        pos(row, 3 * quarter + k) = static_cast<T>(std::cos(x * omega));
      }
  return pos;
}

// Gaussian init (std = init_std) for projections and the mask token; biases
// zero, LayerNorm gains one. The patch projection uses 1/sqrt(D) so that
// visible embeddings start at unit scale. Positions start from the sine-cosine
// table (Gaussian when the width is not a multiple of 4) and are learnable.
template <typename T>
ModelParameters<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParameters<T> p = shaped_parameters<T>(cfg);
  std::mt19937_64 rng(seed);
  auto fill = [&](Mat<T>& m, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  };
  const double s = cfg.init_std;
  fill(p.patch_w, 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim())));
  if (cfg.width % 4 == 0)
    p.pos = sincos_positions<T>(cfg.image_size / cfg.patch_size, cfg.width);
  else
    fill(p.pos, s);
  fill(p.mask_token, s);
  auto init_block = [&](BlockParams<T>& b) {
    fill(b.w_qkv, s);
    fill(b.w_out, s);
    fill(b.w_fc1, s);
    fill(b.w_fc2, s);
  };
  for (auto& b : p.encoder) init_block(b);
  if (cfg.routing == Routing::decoder_masked) {
    fill(p.dec_embed_w, s);
    for (auto& b : p.decoder) init_block(b);
  }
  fill(p.head_w, s);
  return p;
}

// --- forward --------------------------------------------------------------

template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

template <typename T>
struct BlockCache {
  Mat<T> x_in;
  LayerNormCache<T> ln1;
  Mat<T> h1;
  Mat<T> qkv;
  std::vector<Mat<T>> probs;  // one softmax matrix per head
  Mat<T> attn_concat;
  Mat<T> x_mid;
  LayerNormCache<T> ln2;
  Mat<T> h2;
  Mat<T> fc1_pre;
  Mat<T> fc1_act;
};

namespace detail {

inline constexpr double kLayerNormEps = 1e-6;

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, LayerNormCache<T>& cache) {
  const Index d = x.cols();
  cache.xhat.resize(x.rows(), d);
  cache.rstd.resize(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const T mean = x.row(r).mean();
    const T var = (x.row(r).array() - mean).square().mean();
    const T rstd = T(1) / std::sqrt(var + T(kLayerNormEps));
    cache.rstd[r] = rstd;
    cache.xhat.row(r) = (x.row(r).array() - mean) * rstd;
  }
  Mat<T> y = cache.xhat.array().rowwise() * g.row(0).array();
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& g, const LayerNormCache<T>& cache, Mat<T>& dg, Mat<T>& db) {
  dg.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  db.row(0) += dy.colwise().sum();
  const Mat<T> dxhat = dy.array().rowwise() * g.row(0).array();
  const T inv_d = T(1) / static_cast<T>(dy.cols());
  Mat<T> dx(dy.rows(), dy.cols());
  for (Index r = 0; r < dy.rows(); ++r) {
    const T mean_dxhat = dxhat.row(r).mean();
    const T mean_dxhat_xhat = dxhat.row(r).dot(cache.xhat.row(r)) * inv_d;
    dx.row(r) = cache.rstd[r] * (dxhat.row(r).array() - mean_dxhat - cache.xhat.row(r).array() * mean_dxhat_xhat);
  }
  return dx;
}

// tanh approximation of GELU
template <typename T>
T gelu(T x) {
  const T c = T(0.7978845608028654);
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  const T c = T(0.7978845608028654);
  const T u = c * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(u);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3 * 0.044715) * x * x);
}

template <typename T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
  Mat<T> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
Mat<T> block_forward(const BlockParams<T>& p, Index heads, const Mat<T>& x, BlockCache<T>& c) {
  const Index n = x.rows();
  const Index d = x.cols();
  const Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  c.x_in = x;
  c.h1 = layer_norm(x, p.ln1_g, p.ln1_b, c.ln1);
  c.qkv = linear(c.h1, p.w_qkv, p.b_qkv);
  c.probs.resize(static_cast<std::size_t>(heads));
  c.attn_concat.resize(n, d);
  for (Index h = 0; h < heads; ++h) {
    const auto q = c.qkv.middleCols(h * dh, dh);
    const auto k = c.qkv.middleCols(d + h * dh, dh);
    const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
    Mat<T>& pr = c.probs[static_cast<std::size_t>(h)];
    pr = (q * k.transpose()) * scale;
    for (Index r = 0; r < n; ++r) {
      auto row = pr.row(r);
      const T m = row.maxCoeff();
      row = (row.array() - m).exp();
      row /= row.sum();
    }
    c.attn_concat.middleCols(h * dh, dh) = pr * v;
  }
  c.x_mid = x + linear(c.attn_concat, p.w_out, p.b_out);
  c.h2 = layer_norm(c.x_mid, p.ln2_g, p.ln2_b, c.ln2);
  c.fc1_pre = linear(c.h2, p.w_fc1, p.b_fc1);
  c.fc1_act = c.fc1_pre.unaryExpr([](T v) { return gelu(v); });
  return c.x_mid + linear(c.fc1_act, p.w_fc2, p.b_fc2);
}

template <typename T>
Mat<T> block_backward(const BlockParams<T>& p, Index heads, const BlockCache<T>& c, const Mat<T>& dy, BlockParams<T>& g) {
  const Index d = dy.cols();
  const Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  // MLP branch
  g.w_fc2.noalias() += c.fc1_act.transpose() * dy;
  g.b_fc2.row(0) += dy.colwise().sum();
  Mat<T> d_act = dy * p.w_fc2.transpose();
  Mat<T> d_pre = d_act.array() * c.fc1_pre.unaryExpr([](T v) { return gelu_grad(v); }).array();
  g.w_fc1.noalias() += c.h2.transpose() * d_pre;
  g.b_fc1.row(0) += d_pre.colwise().sum();
  const Mat<T> d_h2 = d_pre * p.w_fc1.transpose();
  Mat<T> d_mid = dy + layer_norm_backward(d_h2, p.ln2_g, c.ln2, g.ln2_g, g.ln2_b);

  // attention branch
  g.w_out.noalias() += c.attn_concat.transpose() * d_mid;
  g.b_out.row(0) += d_mid.colwise().sum();
  const Mat<T> d_concat = d_mid * p.w_out.transpose();
  Mat<T> d_qkv(c.qkv.rows(), c.qkv.cols());
  for (Index h = 0; h < heads; ++h) {
    const auto q = c.qkv.middleCols(h * dh, dh);
    const auto k = c.qkv.middleCols(d + h * dh, dh);
    const auto v = c.qkv.middleCols(2 * d + h * dh, dh);
    const Mat<T>& pr = c.probs[static_cast<std::size_t>(h)];
    const Mat<T> d_out = d_concat.middleCols(h * dh, dh);
    d_qkv.middleCols(2 * d + h * dh, dh) = pr.transpose() * d_out;
    const Mat<T> d_p = d_out * v.transpose();
    Mat<T> d_s(pr.rows(), pr.cols());
    for (Index r = 0; r < pr.rows(); ++r) d_s.row(r) = pr.row(r).array() * (d_p.row(r).array() - pr.row(r).dot(d_p.row(r)));
    d_s *= scale;
    d_qkv.middleCols(h * dh, dh) = d_s * k;
    d_qkv.middleCols(d + h * dh, dh) = d_s.transpose() * q;
  }
  g.w_qkv.noalias() += c.h1.transpose() * d_qkv;
  g.b_qkv.row(0) += d_qkv.colwise().sum();
  const Mat<T> d_h1 = d_qkv * p.w_qkv.transpose();
  return d_mid + layer_norm_backward(d_h1, p.ln1_g, c.ln1, g.ln1_g, g.ln1_b);
}

template <typename T>
void check_finite(const Mat<T>& m, const std::string& where) {
  if (!m.allFinite()) throw NumericError("non-finite activations at " + where);
}

template <typename T>
void check_inputs(const PatchGrid<T>& grid, const MaskSpec& mask, const ModelParameters<T>& params) {
  const ModelConfig& cfg = params.config;
  if (grid.n_patches() != cfg.n_patches() || grid.patch_dim() != cfg.patch_dim())
    throw DimensionError("patch grid " + std::to_string(grid.n_patches()) + "x" + std::to_string(grid.patch_dim()) +
                         " does not match model (" + std::to_string(cfg.n_patches()) + "x" +
                         std::to_string(cfg.patch_dim()) + ")");
  if (mask.n_patches != grid.n_patches()) throw DimensionError("mask size does not match patch count");
  for (Index i : mask.masked)
    if (i < 0 || i >= grid.n_patches()) throw IndexError("mask index " + std::to_string(i) + " >= N");
}

}  // namespace detail

// Token rows before positional addition. encoder_masked: N rows with every
// masked row equal to mask_token. decoder_masked: projected visible rows only,
// in ascending patch order.
template <typename T>
Mat<T> token_embedding(const PatchGrid<T>& grid, const MaskSpec& mask, const ModelParameters<T>& params, Routing routing) {
  detail::check_inputs(grid, mask, params);
  if (routing == Routing::encoder_masked) {
    Mat<T> x = detail::linear(grid.patches, params.patch_w, params.patch_b);
    for (Index i : mask.masked) x.row(i) = params.mask_token.row(0);
    return x;
  }
  return detail::linear(gather_rows(grid.patches, mask.visible), params.patch_w, params.patch_b);
}

// Token matrix entering the first encoder attention layer (token_embedding + positions).
template <typename T>
Mat<T> embed(const PatchGrid<T>& grid, const MaskSpec& mask, const ModelParameters<T>& params, Routing routing) {
  Mat<T> x = token_embedding(grid, mask, params, routing);
  if (routing == Routing::encoder_masked) return x + params.pos;
  return x + gather_rows(params.pos, mask.visible);
}

template <typename T>
struct LayerTrace {
  Routing routing = Routing::encoder_masked;
  MaskSpec mask;
  std::vector<Mat<T>> encoder_states;  // encoder input and each encoder layer output
  std::vector<Mat<T>> decoder_states;  // decoder input (after substitution) and each decoder layer output

  // X^0..X^L along the path that carries masked tokens.
  const std::vector<Mat<T>>& states() const {
    return routing == Routing::encoder_masked ? encoder_states : decoder_states;
  }
  Index depth() const { return static_cast<Index>(states().size()) - 1; }
};

template <typename T>
struct ForwardPass {
  LayerTrace<T> trace;
  std::vector<BlockCache<T>> encoder_caches;
  std::vector<BlockCache<T>> decoder_caches;
  Mat<T> visible_patches;  // decoder_masked: encoder input patches
  Mat<T> patches;
};

template <typename T>
ForwardPass<T> forward_pass(const PatchGrid<T>& grid, const MaskSpec& mask, const ModelParameters<T>& params, Routing routing) {
  if (routing != params.config.routing) throw ConfigError("routing does not match model parameters");
  ForwardPass<T> fp;
  fp.trace.routing = routing;
  fp.trace.mask = mask;
  fp.patches = grid.patches;
  const Index heads = params.config.heads;

  Mat<T> x = embed(grid, mask, params, routing);
  detail::check_finite(x, "layer 0 (embedding)");
  fp.trace.encoder_states.push_back(x);
  fp.encoder_caches.resize(params.encoder.size());
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    x = detail::block_forward(params.encoder[l], heads, x, fp.encoder_caches[l]);
    detail::check_finite(x, "encoder layer " + std::to_string(l + 1));
    fp.trace.encoder_states.push_back(x);
  }
  if (routing == Routing::encoder_masked) return fp;

  fp.visible_patches = gather_rows(grid.patches, mask.visible);
  const Mat<T> projected = detail::linear(x, params.dec_embed_w, params.dec_embed_b);
  Mat<T> y(mask.n_patches, params.config.width);
  for (Index i : mask.masked) y.row(i) = params.mask_token.row(0);
  for (std::size_t r = 0; r < mask.visible.size(); ++r) y.row(mask.visible[r]) = projected.row(static_cast<Index>(r));
  y += params.pos;
  detail::check_finite(y, "decoder layer 0 (input)");
  fp.trace.decoder_states.push_back(y);
  fp.decoder_caches.resize(params.decoder.size());
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    y = detail::block_forward(params.decoder[l], heads, y, fp.decoder_caches[l]);
    detail::check_finite(y, "decoder layer " + std::to_string(l + 1));
    fp.trace.decoder_states.push_back(y);
  }
  return fp;
}

template <typename T>
LayerTrace<T> forward_trace(const PatchGrid<T>& grid, const MaskSpec& mask, const ModelParameters<T>& params, Routing routing) {
  return forward_pass(grid, mask, params, routing).trace;
}

// Head applied to the final traced states; one row per patch in original order.
template <typename T>
PatchGrid<T> predict_pixels(const LayerTrace<T>& trace, const ModelParameters<T>& params) {
  const ModelConfig& cfg = params.config;
  PatchGrid<T> out;
  out.patches = detail::linear(trace.states().back(), params.head_w, params.head_b);
  out.patch_size = cfg.patch_size;
  out.grid_h = out.grid_w = cfg.image_size / cfg.patch_size;
  out.channels = cfg.channels;
  return out;
}

template <typename T>
void accumulate_backward(const ForwardPass<T>& fp, const ModelParameters<T>& params, const Mat<T>& d_pred,
                         const std::vector<Mat<T>>& d_states, ModelParameters<T>& g) {
  const Index heads = params.config.heads;
  const auto& traced = fp.trace.states();
  auto inject = [&](Mat<T>& dx, std::size_t level) {
    if (level < d_states.size() && d_states[level].size() > 0) dx += d_states[level];
  };

  g.head_w.noalias() += traced.back().transpose() * d_pred;
  g.head_b.row(0) += d_pred.colwise().sum();
  Mat<T> dx = d_pred * params.head_w.transpose();

  const MaskSpec& mask = fp.trace.mask;
  if (fp.trace.routing == Routing::decoder_masked) {
    for (std::size_t l = params.decoder.size(); l-- > 0;) {
      inject(dx, l + 1);
      dx = detail::block_backward(params.decoder[l], heads, fp.decoder_caches[l], dx, g.decoder[l]);
    }
    inject(dx, 0);
    g.pos += dx;
    for (Index i : mask.masked) g.mask_token.row(0) += dx.row(i);
    const Mat<T> d_proj = gather_rows(dx, mask.visible);
    const Mat<T>& enc_out = fp.trace.encoder_states.back();
    g.dec_embed_w.noalias() += enc_out.transpose() * d_proj;
    g.dec_embed_b.row(0) += d_proj.colwise().sum();
    dx = d_proj * params.dec_embed_w.transpose();
    for (std::size_t l = params.encoder.size(); l-- > 0;)
      dx = detail::block_backward(params.encoder[l], heads, fp.encoder_caches[l], dx, g.encoder[l]);
    scatter_add_rows<T>(g.pos, dx, mask.visible);
    g.patch_w.noalias() += fp.visible_patches.transpose() * dx;
    g.patch_b.row(0) += dx.colwise().sum();
    return;
  }

  for (std::size_t l = params.encoder.size(); l-- > 0;) {
    inject(dx, l + 1);
    dx = detail::block_backward(params.encoder[l], heads, fp.encoder_caches[l], dx, g.encoder[l]);
  }
  inject(dx, 0);
  g.pos += dx;
  for (Index i : mask.masked) {
    g.mask_token.row(0) += dx.row(i);
    dx.row(i).setZero();
  }
  g.patch_w.noalias() += fp.patches.transpose() * dx;
  g.patch_b.row(0) += dx.colwise().sum();
}

// d_pred: gradient w.r.t. predict_pixels output (N x D).
// d_states: empty, or one entry per traced state (empty matrices are skipped).
template <typename T>
ModelParameters<T> backward(const ForwardPass<T>& fp, const ModelParameters<T>& params, const Mat<T>& d_pred,
                            const std::vector<Mat<T>>& d_states) {
  ModelParameters<T> g = params.zeros_like();
  accumulate_backward(fp, params, d_pred, d_states, g);
  return g;
}

}  // namespace mto

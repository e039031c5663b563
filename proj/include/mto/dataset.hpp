#pragma once

// Image corpora: raw tensor files, procedurally generated scenes, and the
// train/held-out split used by the harness.
//
// Raw tensor layout (all little-endian):
//   int32 count, int32 height, int32 width, int32 channels
//   float32 values[count][height][width][channels]
// Values already in [0, 1] are kept; otherwise values in [0, 255] are divided by 255.

#include "mto/core.hpp"
#include "mto/patch_pipeline.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace mto {

using Image = ImageTensor<double>;

// Rescales a batch of images into [0, 1] in place.
inline void normalize_pixels(std::vector<Image>& images) {
  double lo = 0;
  double hi = 0;
  for (const auto& img : images)
    for (double v : img.values) {
      if (!std::isfinite(v)) throw ArgumentError("image contains non-finite pixel values");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (lo < 0) throw ArgumentError("image contains negative pixel values");
  if (hi <= 1.0) return;
  if (hi > 255.0) throw ArgumentError("pixel values exceed 255; cannot infer scale");
  for (auto& img : images)
    for (double& v : img.values) v /= 255.0;
}

namespace detail {

inline void write_le_i32(std::ostream& out, std::int32_t v) {
  std::array<unsigned char, 4> b{};
  const auto u = static_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline void write_le_u32(std::ostream& out, std::uint32_t v) { write_le_i32(out, static_cast<std::int32_t>(v)); }

inline void write_le_f32(std::ostream& out, float f) { write_le_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t read_le_u32(std::istream& in, const std::string& what) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw IoError("truncated file while reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::int32_t read_le_i32(std::istream& in, const std::string& what) {
  return static_cast<std::int32_t>(read_le_u32(in, what));
}

inline float read_le_f32(std::istream& in, const std::string& what) {
  return std::bit_cast<float>(read_le_u32(in, what));
}

}  // namespace detail

inline void write_raw_tensor(const std::vector<Image>& images, const std::string& path) {
  if (images.empty()) throw ArgumentError("write_raw_tensor: no images");
  const Image& first = images.front();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  detail::write_le_i32(out, static_cast<std::int32_t>(images.size()));
  detail::write_le_i32(out, static_cast<std::int32_t>(first.height));
  detail::write_le_i32(out, static_cast<std::int32_t>(first.width));
  detail::write_le_i32(out, static_cast<std::int32_t>(first.channels));
  for (const auto& img : images) {
    if (img.height != first.height || img.width != first.width || img.channels != first.channels)
      throw DimensionError("write_raw_tensor: images differ in shape");
    for (double v : img.values) detail::write_le_f32(out, static_cast<float>(v));
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::vector<Image> read_raw_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open raw tensor '" + path + "'");
  const auto count = detail::read_le_i32(in, "count");
  const auto h = detail::read_le_i32(in, "height");
  const auto w = detail::read_le_i32(in, "width");
  const auto c = detail::read_le_i32(in, "channels");
  if (count < 0 || h <= 0 || w <= 0 || c <= 0) throw IoError("raw tensor '" + path + "' has an invalid header");
  if (c != 3) throw DimensionError("raw tensor '" + path + "' must have 3 channels, found " + std::to_string(c));
  std::vector<Image> images;
  images.reserve(static_cast<std::size_t>(count));
  for (std::int32_t n = 0; n < count; ++n) {
    Image img(h, w, c);
    for (double& v : img.values) v = detail::read_le_f32(in, "pixel data");
    images.push_back(std::move(img));
  }
  normalize_pixels(images);
  return images;
}

// Procedural scenes: a two-colour gradient background, a few soft-edged
// discs/boxes/bars, and a faint low-frequency texture. Locally smooth with
// sharp object boundaries, which gives masked prediction real structure to learn.
inline Image synthetic_image(Index size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto color = [&] { return std::array<double, 3>{u01(rng), u01(rng), u01(rng)}; };

  Image img(size, size, 3);
  const auto c0 = color();
  const auto c1 = color();
  const double theta = u01(rng) * 2.0 * M_PI;
  const double dx = std::cos(theta);
  const double dy = std::sin(theta);

  struct Shape {
    int kind;
    double cx, cy, a, b, angle;
    std::array<double, 3> col;
  };
  std::vector<Shape> shapes;
  const int n_shapes = 1 + static_cast<int>(u01(rng) * 3.0);
  for (int s = 0; s < n_shapes; ++s) {
    Shape sh{};
    sh.kind = static_cast<int>(u01(rng) * 3.0);
    sh.cx = u01(rng) * static_cast<double>(size);
    sh.cy = u01(rng) * static_cast<double>(size);
    sh.a = (0.12 + 0.3 * u01(rng)) * static_cast<double>(size);
    sh.b = (0.08 + 0.25 * u01(rng)) * static_cast<double>(size);
    sh.angle = u01(rng) * M_PI;
    sh.col = color();
    shapes.push_back(sh);
  }
  const double fx = 1.0 + 3.0 * u01(rng);
  const double fy = 1.0 + 3.0 * u01(rng);
  const double phase = u01(rng) * 2.0 * M_PI;
  const double tex = 0.06 * u01(rng);

  auto smoothstep = [](double edge, double x) {
    const double t = std::clamp(0.5 - x / edge, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
  };
  const double inv = 1.0 / static_cast<double>(size);
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      const double t = std::clamp(0.5 + 0.5 * ((px * inv - 0.5) * dx + (py * inv - 0.5) * dy) * 1.6, 0.0, 1.0);
      std::array<double, 3> v{};
      for (int ch = 0; ch < 3; ++ch) v[static_cast<std::size_t>(ch)] = (1 - t) * c0[static_cast<std::size_t>(ch)] + t * c1[static_cast<std::size_t>(ch)];
      for (const auto& sh : shapes) {
        const double rx = px - sh.cx;
        const double ry = py - sh.cy;
        const double ux = rx * std::cos(sh.angle) + ry * std::sin(sh.angle);
        const double uy = -rx * std::sin(sh.angle) + ry * std::cos(sh.angle);
        double dist = 0;  // signed distance in pixels, negative inside
        if (sh.kind == 0) {
          dist = std::sqrt(rx * rx + ry * ry) - sh.a * 0.6;
        } else if (sh.kind == 1) {
          dist = std::max(std::abs(ux) - sh.a * 0.5, std::abs(uy) - sh.b * 0.5);
        } else {
          dist = std::abs(uy) - sh.b * 0.2;
        }
        const double cover = smoothstep(1.5, dist);
        for (std::size_t ch = 0; ch < 3; ++ch) v[ch] = (1 - cover) * v[ch] + cover * sh.col[ch];
      }
      const double wave = tex * std::sin(2.0 * M_PI * (fx * px * inv + fy * py * inv) + phase);
      for (Index ch = 0; ch < 3; ++ch) img.at(y, x, ch) = std::clamp(v[static_cast<std::size_t>(ch)] + wave, 0.0, 1.0);
    }
  }
  return img;
}

inline std::vector<Image> synthetic_corpus(std::size_t count, Index size, std::uint64_t seed) {
  std::vector<Image> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_image(size, mix_seed(seed, i)));
  return out;
}

struct Dataset {
  std::vector<PatchGrid<double>> train;
  std::vector<PatchGrid<double>> holdout;
  std::string descriptor;
};

inline std::vector<PatchGrid<double>> patchify_all(const std::vector<Image>& images, Index patch_size) {
  std::vector<PatchGrid<double>> grids;
  grids.reserve(images.size());
  for (const auto& img : images) grids.push_back(patchify(img, patch_size));
  return grids;
}

// Deterministic shuffle, then the last `holdout` images form the held-out split.
inline Dataset split_dataset(std::vector<Image> images, std::size_t holdout, Index patch_size, std::uint64_t seed,
                             std::string descriptor) {
  if (holdout >= images.size()) throw ArgumentError("dataset: held-out split leaves no training images");
  std::mt19937_64 rng(seed);
  std::shuffle(images.begin(), images.end(), rng);
  Dataset ds;
  ds.descriptor = std::move(descriptor);
  std::vector<Image> tail(images.end() - static_cast<std::ptrdiff_t>(holdout), images.end());
  images.resize(images.size() - holdout);
  ds.train = patchify_all(images, patch_size);
  ds.holdout = patchify_all(tail, patch_size);
  return ds;
}

}  // namespace mto

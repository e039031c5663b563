#pragma once

#include "mto/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

namespace mto {

// Pixels are stored height-major, then width, then channel (HWC).
template <typename T = double>
struct ImageTensor {
  Index height = 0;
  Index width = 0;
  Index channels = 3;
  std::vector<T> values;

  ImageTensor() = default;
  ImageTensor(Index h, Index w, Index c = 3) : height(h), width(w), channels(c), values(static_cast<std::size_t>(h * w * c), T(0)) {}

  T& at(Index y, Index x, Index c) { return values[static_cast<std::size_t>((y * width + x) * channels + c)]; }
  T at(Index y, Index x, Index c) const { return values[static_cast<std::size_t>((y * width + x) * channels + c)]; }

  bool operator==(const ImageTensor&) const = default;
};

// One flattened patch per row; patch i is at grid position (i / grid_w, i % grid_w).
// Within a patch values are ordered (row, col, channel).
template <typename T = double>
struct PatchGrid {
  Mat<T> patches;
  Index patch_size = 0;
  Index grid_h = 0;
  Index grid_w = 0;
  Index channels = 3;

  Index n_patches() const { return patches.rows(); }
  Index patch_dim() const { return patches.cols(); }
};

struct MaskSpec {
  std::vector<Index> masked;  // sorted ascending
  std::vector<Index> visible;  // sorted ascending, complement of masked
  Index n_patches = 0;
  double ratio = 0.0;
  std::uint64_t seed = 0;

  bool is_masked(Index i) const { return std::binary_search(masked.begin(), masked.end(), i); }
  bool operator==(const MaskSpec&) const = default;
};

template <typename T>
PatchGrid<T> patchify(const ImageTensor<T>& image, Index patch_size) {
  if (patch_size <= 0 || image.height % patch_size != 0 || image.width % patch_size != 0) {
    std::ostringstream os;
    os << "patchify: image " << image.height << "x" << image.width << " (H x W) is not divisible by patch size P="
       << patch_size;
    throw DimensionError(os.str());
  }
  PatchGrid<T> grid;
  grid.patch_size = patch_size;
  grid.grid_h = image.height / patch_size;
  grid.grid_w = image.width / patch_size;
  grid.channels = image.channels;
  const Index p = patch_size;
  const Index c = image.channels;
  grid.patches.resize(grid.grid_h * grid.grid_w, p * p * c);
  for (Index gy = 0; gy < grid.grid_h; ++gy) {
    for (Index gx = 0; gx < grid.grid_w; ++gx) {
      const Index row = gy * grid.grid_w + gx;
      Index k = 0;
      for (Index y = 0; y < p; ++y)
        for (Index x = 0; x < p; ++x)
          for (Index ch = 0; ch < c; ++ch) grid.patches(row, k++) = image.at(gy * p + y, gx * p + x, ch);
    }
  }
  return grid;
}

template <typename T>
ImageTensor<T> unpatchify(const PatchGrid<T>& grid, Index height, Index width) {
  const Index p = grid.patch_size;
  if (p <= 0 || height % p != 0 || width % p != 0 || (height / p) * (width / p) != grid.n_patches() ||
      grid.patch_dim() != p * p * grid.channels) {
    std::ostringstream os;
    os << "unpatchify: grid of " << grid.n_patches() << " patches (P=" << p << ") is inconsistent with "
       << height << "x" << width;
    throw DimensionError(os.str());
  }
  ImageTensor<T> image(height, width, grid.channels);
  const Index gw = width / p;
  for (Index row = 0; row < grid.n_patches(); ++row) {
    const Index gy = row / gw;
    const Index gx = row % gw;
    Index k = 0;
    for (Index y = 0; y < p; ++y)
      for (Index x = 0; x < p; ++x)
        for (Index ch = 0; ch < grid.channels; ++ch) image.at(gy * p + y, gx * p + x, ch) = grid.patches(row, k++);
  }
  return image;
}

// round(ratio * n), halves rounded up.
inline Index masked_count(Index n_patches, double ratio) {
  return static_cast<Index>(std::floor(ratio * static_cast<double>(n_patches) + 0.5));
}

inline MaskSpec mask_from_indices(Index n_patches, std::vector<Index> masked) {
  std::sort(masked.begin(), masked.end());
  if (std::adjacent_find(masked.begin(), masked.end()) != masked.end())
    throw ArgumentError("mask: duplicate patch index");
  for (Index i : masked)
    if (i < 0 || i >= n_patches) throw IndexError("mask: patch index " + std::to_string(i) + " out of range [0, " +
                                                  std::to_string(n_patches) + ")");
  MaskSpec spec;
  spec.n_patches = n_patches;
  spec.ratio = n_patches > 0 ? static_cast<double>(masked.size()) / static_cast<double>(n_patches) : 0.0;
  spec.masked = std::move(masked);
  spec.visible.reserve(static_cast<std::size_t>(n_patches) - spec.masked.size());
  for (Index i = 0; i < n_patches; ++i)
    if (!spec.is_masked(i)) spec.visible.push_back(i);
  return spec;
}

// Uniform selection without replacement, deterministic per seed.
inline MaskSpec sample_mask(Index n_patches, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ArgumentError("sample_mask: ratio must lie in [0, 1]");
  if (n_patches < 0) throw ArgumentError("sample_mask: negative patch count");
  std::vector<Index> all(static_cast<std::size_t>(n_patches));
  std::iota(all.begin(), all.end(), Index{0});
  std::vector<Index> picked;
  const Index count = masked_count(n_patches, ratio);
  std::mt19937_64 rng(seed);
  std::sample(all.begin(), all.end(), std::back_inserter(picked), count, rng);
  MaskSpec spec = mask_from_indices(n_patches, std::move(picked));
  spec.ratio = ratio;
  spec.seed = seed;
  return spec;
}

}  // namespace mto

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mto {

// Token matrices are row-major: one token per row.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using Index = std::ptrdiff_t;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct ArgumentError : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct RangeError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct DegenerateBaselineError : Error {
  using Error::Error;
};

// Floor applied to probabilities inside log() only.
inline constexpr double kLogFloor = 1e-12;

template <typename T>
inline T safe_log(T p) {
  return std::log(p < T(kLogFloor) ? T(kLogFloor) : p);
}

template <typename T>
Mat<T> gather_rows(const Mat<T>& x, const std::vector<Index>& rows) {
  Mat<T> out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = x.row(rows[r]);
  return out;
}

template <typename T>
void scatter_add_rows(Mat<T>& dst, const Mat<T>& src, const std::vector<Index>& rows) {
  for (std::size_t r = 0; r < rows.size(); ++r) dst.row(rows[r]) += src.row(static_cast<Index>(r));
}

// splitmix64 finaliser; derives independent stream seeds from (seed, a, b).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
bool all_finite(const Mat<T>& m) {
  return m.allFinite();
}

}  // namespace mto

#pragma once

#include <array>
#include <vector>

#include "lptn/autodiff.hpp"
#include "lptn/tensor.hpp"

namespace lptn {

// Band decomposition of one image batch: high-frequency residuals h_0 (finest)
// through h_{L-1}, plus the low-frequency remainder at 1/2^L resolution.
// original_size records the pre-padding extent used for the final crop.
template <typename T>
struct LaplacianPyramid {
  std::vector<Tensor<T>> highs;
  Tensor<T> low;
  i64 orig_h = 0;
  i64 orig_w = 0;

  i64 levels() const { return static_cast<i64>(highs.size()); }
};

template <typename T>
struct PyramidVars {
  std::vector<Var<T>> highs;
  Var<T> low;
  i64 orig_h = 0;
  i64 orig_w = 0;

  i64 levels() const { return static_cast<i64>(highs.size()); }
};

// Largest level count for which every intermediate stays divisible by two and
// the residual keeps at least 2x2 pixels.
i64 max_admissible_levels(i64 h, i64 w);
void check_levels(i64 h, i64 w, i64 levels);

template <typename T>
struct Padded {
  Tensor<T> img;
  i64 orig_h = 0;
  i64 orig_w = 0;
};

// Reflect-pads right/bottom up to the next multiple of m (a power of two).
template <typename T>
Padded<T> pad_to_multiple(const Tensor<T>& img, i64 m);

template <typename T>
LaplacianPyramid<T> decompose(const Tensor<T>& img, i64 levels);
template <typename T>
Tensor<T> reconstruct(const LaplacianPyramid<T>& pyr);

// Tape-recorded variants used inside the translation network.
template <typename T>
PyramidVars<T> decompose(Graph<T>& g, Var<T> img, i64 levels, i64 orig_h, i64 orig_w);
template <typename T>
Var<T> reconstruct(Graph<T>& g, const PyramidVars<T>& pyr);

// Per-level comparison: mean squared difference plus 64-bin intensity
// histograms over [-1, 1] for each side. Entry L is the low band.
struct BandStats {
  double mse = 0.0;
  std::array<i64, 64> hist_a{};
  std::array<i64, 64> hist_b{};
};

template <typename T>
std::vector<BandStats> band_stats(const LaplacianPyramid<T>& a, const LaplacianPyramid<T>& b);

}  // namespace lptn

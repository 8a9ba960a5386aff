#include "lptn/pyramid.hpp"

namespace lptn {

i64 max_admissible_levels(i64 h, i64 w) {
  i64 levels = 0;
  while (h % 2 == 0 && w % 2 == 0 && h / 2 >= 2 && w / 2 >= 2) {
    h /= 2;
    w /= 2;
    ++levels;
  }
  return levels;
}

void check_levels(i64 h, i64 w, i64 levels) {
  if (levels < 1) throw ValueError(cat("decompose: levels must be >= 1, got ", levels));
  const i64 max_l = max_admissible_levels(h, w);
  if (levels > max_l) {
    throw ValueError(cat("decompose: ", levels, " levels too deep for ", h, "x", w,
                         " input (max admissible L = ", max_l, ")"));
  }
}

template <typename T>
Padded<T> pad_to_multiple(const Tensor<T>& img, i64 m) {
  if (m < 1 || (m & (m - 1)) != 0) throw ValueError(cat("pad_to_multiple: m must be a power of two, got ", m));
  Padded<T> out;
  out.orig_h = img.shape.h;
  out.orig_w = img.shape.w;
  const i64 ph = (m - img.shape.h % m) % m;
  const i64 pw = (m - img.shape.w % m) % m;
  if (ph == 0 && pw == 0) {
    out.img = img;
  } else {
    out.img = kernels::pad2d(img, 0, ph, 0, pw, kernels::PadMode::Reflect);
  }
  return out;
}

template <typename T>
LaplacianPyramid<T> decompose(const Tensor<T>& img, i64 levels) {
  check_levels(img.shape.h, img.shape.w, levels);
  LaplacianPyramid<T> pyr;
  pyr.orig_h = img.shape.h;
  pyr.orig_w = img.shape.w;
  Tensor<T> cur = img;
  for (i64 l = 0; l < levels; ++l) {
    Tensor<T> down = kernels::pyr_down(cur);
    Tensor<T> up = kernels::pyr_up(down);
    Tensor<T> high(cur.shape);
    for (i64 i = 0; i < cur.numel(); ++i) {
      const auto s = static_cast<std::size_t>(i);
      high.data[s] = cur.data[s] - up.data[s];
    }
    pyr.highs.push_back(std::move(high));
    cur = std::move(down);
  }
  pyr.low = std::move(cur);
  return pyr;
}

template <typename T>
void check_pyramid_chain(const LaplacianPyramid<T>& pyr) {
  if (pyr.levels() < 1) throw ShapeError("reconstruct: pyramid has no levels");
  Shape expect = pyr.low.shape;
  for (i64 l = pyr.levels() - 1; l >= 0; --l) {
    const Shape hs = pyr.highs[static_cast<std::size_t>(l)].shape;
    if (hs.h != 2 * expect.h || hs.w != 2 * expect.w || hs.n != expect.n || hs.c != expect.c) {
      throw ShapeError(cat("reconstruct: level ", l, " has shape ", hs.str(),
                           " but expected ", expect.n, "x", expect.c, "x", 2 * expect.h, "x",
                           2 * expect.w));
    }
    expect = hs;
  }
}

template <typename T>
Tensor<T> reconstruct(const LaplacianPyramid<T>& pyr) {
  check_pyramid_chain(pyr);
  Tensor<T> cur = pyr.low;
  for (i64 l = pyr.levels() - 1; l >= 0; --l) {
    Tensor<T> up = kernels::pyr_up(cur);
    const Tensor<T>& high = pyr.highs[static_cast<std::size_t>(l)];
    for (i64 i = 0; i < up.numel(); ++i) {
      const auto s = static_cast<std::size_t>(i);
      up.data[s] += high.data[s];
    }
    cur = std::move(up);
  }
  const i64 oh = pyr.orig_h > 0 ? pyr.orig_h : cur.shape.h;
  const i64 ow = pyr.orig_w > 0 ? pyr.orig_w : cur.shape.w;
  if (oh == cur.shape.h && ow == cur.shape.w) return cur;
  if (oh > cur.shape.h || ow > cur.shape.w) {
    throw ShapeError(cat("reconstruct: original size ", oh, "x", ow, " exceeds padded ",
                         cur.shape.h, "x", cur.shape.w));
  }
  Tensor<T> out(Shape{cur.shape.n, cur.shape.c, oh, ow});
  for (i64 nc = 0; nc < cur.shape.n * cur.shape.c; ++nc) {
    const T* src = cur.ptr() + nc * cur.shape.h * cur.shape.w;
    T* dst = out.ptr() + nc * oh * ow;
    for (i64 y = 0; y < oh; ++y) std::copy(src + y * cur.shape.w, src + y * cur.shape.w + ow, dst + y * ow);
  }
  return out;
}

template <typename T>
PyramidVars<T> decompose(Graph<T>& g, Var<T> img, i64 levels, i64 orig_h, i64 orig_w) {
  const Shape s = g.value(img).shape;
  check_levels(s.h, s.w, levels);
  PyramidVars<T> pyr;
  pyr.orig_h = orig_h > 0 ? orig_h : s.h;
  pyr.orig_w = orig_w > 0 ? orig_w : s.w;
  Var<T> cur = img;
  for (i64 l = 0; l < levels; ++l) {
    Var<T> down = pyr_down(g, cur);
    pyr.highs.push_back(sub(g, cur, pyr_up(g, down)));
    cur = down;
  }
  pyr.low = cur;
  return pyr;
}

template <typename T>
Var<T> reconstruct(Graph<T>& g, const PyramidVars<T>& pyr) {
  if (pyr.levels() < 1) throw ShapeError("reconstruct: pyramid has no levels");
  Var<T> cur = pyr.low;
  for (i64 l = pyr.levels() - 1; l >= 0; --l) {
    cur = add(g, pyr_up(g, cur), pyr.highs[static_cast<std::size_t>(l)]);
  }
  const Shape s = g.value(cur).shape;
  const i64 oh = pyr.orig_h > 0 ? pyr.orig_h : s.h;
  const i64 ow = pyr.orig_w > 0 ? pyr.orig_w : s.w;
  if (oh != s.h || ow != s.w) cur = crop_tl(g, cur, oh, ow);
  return cur;
}

namespace {

template <typename T>
void accumulate_band_stats(const Tensor<T>& a, const Tensor<T>& b, BandStats& out) {
  if (!(a.shape == b.shape)) {
    throw ShapeError(cat("band_stats: shape mismatch ", a.shape.str(), " vs ", b.shape.str()));
  }
  double acc = 0.0;
  auto bin_of = [](double v) {
    i64 bin = static_cast<i64>(std::floor((v + 1.0) * 32.0));
    return std::min<i64>(63, std::max<i64>(0, bin));
  };
  for (i64 i = 0; i < a.numel(); ++i) {
    const double av = static_cast<double>(a.data[static_cast<std::size_t>(i)]);
    const double bv = static_cast<double>(b.data[static_cast<std::size_t>(i)]);
    const double d = av - bv;
    acc += d * d;
    ++out.hist_a[static_cast<std::size_t>(bin_of(av))];
    ++out.hist_b[static_cast<std::size_t>(bin_of(bv))];
  }
  out.mse = acc / static_cast<double>(a.numel());
}

}  // namespace

template <typename T>
std::vector<BandStats> band_stats(const LaplacianPyramid<T>& a, const LaplacianPyramid<T>& b) {
  if (a.levels() != b.levels()) {
    throw ShapeError(cat("band_stats: level count mismatch ", a.levels(), " vs ", b.levels()));
  }
  std::vector<BandStats> out(static_cast<std::size_t>(a.levels() + 1));
  for (i64 l = 0; l < a.levels(); ++l) {
    accumulate_band_stats(a.highs[static_cast<std::size_t>(l)], b.highs[static_cast<std::size_t>(l)],
                          out[static_cast<std::size_t>(l)]);
  }
  accumulate_band_stats(a.low, b.low, out[static_cast<std::size_t>(a.levels())]);
  return out;
}

#define LPTN_INSTANTIATE_PYRAMID(T)                                                         \
  template Padded<T> pad_to_multiple<T>(const Tensor<T>&, i64);                             \
  template LaplacianPyramid<T> decompose<T>(const Tensor<T>&, i64);                         \
  template Tensor<T> reconstruct<T>(const LaplacianPyramid<T>&);                            \
  template PyramidVars<T> decompose<T>(Graph<T>&, Var<T>, i64, i64, i64);                   \
  template Var<T> reconstruct<T>(Graph<T>&, const PyramidVars<T>&);                         \
  template std::vector<BandStats> band_stats<T>(const LaplacianPyramid<T>&,                 \
                                                const LaplacianPyramid<T>&);

LPTN_INSTANTIATE_PYRAMID(float)
LPTN_INSTANTIATE_PYRAMID(double)

#undef LPTN_INSTANTIATE_PYRAMID

}  // namespace lptn

#include "lptn/kernels.hpp"

#include <cstring>

#include "lptn/threading.hpp"

namespace lptn::kernels {

namespace {

i64 floor_div(i64 a, i64 b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// C[M,N] += A[M,K] * B[K,N], all row-major contiguous. Tiled so the C tile
// stays in L1; the k loop order is fixed, so every output element sees one
// deterministic accumulation order regardless of thread count.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, i64 m_dim, i64 k_dim, i64 n_dim) {
  constexpr i64 mt = 32;
  constexpr i64 nt = 128;
  const i64 mtiles = (m_dim + mt - 1) / mt;
  const i64 ntiles = (n_dim + nt - 1) / nt;
  parallel_for(0, mtiles * ntiles, 1, [&](i64 t0, i64 t1) {
    for (i64 t = t0; t < t1; ++t) {
      const i64 m0 = (t / ntiles) * mt;
      const i64 n0 = (t % ntiles) * nt;
      const i64 m1 = std::min(m_dim, m0 + mt);
      const i64 n1 = std::min(n_dim, n0 + nt);
      const i64 nn = n1 - n0;
      for (i64 k = 0; k < k_dim; ++k) {
        const T* brow = b + k * n_dim + n0;
        for (i64 m = m0; m < m1; ++m) {
          const T av = a[m * k_dim + k];
          T* crow = c + m * n_dim + n0;
          for (i64 j = 0; j < nn; ++j) crow[j] += av * brow[j];
        }
      }
    }
  });
}

// C[M,K2] += A[M,P] * B[K2,P]^T. The dot products run over eight independent
// lanes combined in a fixed order, which vectorizes without reassociating
// differently from run to run.
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, i64 m_dim, i64 p_dim, i64 k2_dim) {
  parallel_for(0, m_dim, 1, [&](i64 mlo, i64 mhi) {
    for (i64 m = mlo; m < mhi; ++m) {
      const T* arow = a + m * p_dim;
      for (i64 k = 0; k < k2_dim; ++k) {
        const T* brow = b + k * p_dim;
        T lanes[8] = {};
        i64 p = 0;
        for (; p + 8 <= p_dim; p += 8) {
          for (int j = 0; j < 8; ++j) lanes[j] += arow[p + j] * brow[p + j];
        }
        T acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
                ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
        for (; p < p_dim; ++p) acc += arow[p] * brow[p];
        c[m * k2_dim + k] += acc;
      }
    }
  });
}

// col[(c*KH+u)*KW+v, oy*OW+ox] = xp[c, oy*stride+u, ox*stride+v]
template <typename T>
void im2col(const T* xp, i64 cch, i64 hp, i64 wp, i64 kh, i64 kw, i64 stride, i64 oh, i64 ow,
            T* col) {
  (void)hp;
  parallel_for(0, cch * kh * kw, 1, [&](i64 r0, i64 r1) {
    for (i64 r = r0; r < r1; ++r) {
      const i64 ci = r / (kh * kw);
      const i64 u = (r / kw) % kh;
      const i64 v = r % kw;
      T* dst = col + r * (oh * ow);
      const T* src = xp + (ci * hp + u) * wp + v;
      for (i64 oy = 0; oy < oh; ++oy) {
        const T* row = src + oy * stride * wp;
        if (stride == 1) {
          std::memcpy(dst, row, sizeof(T) * static_cast<std::size_t>(ow));
          dst += ow;
        } else {
          for (i64 ox = 0; ox < ow; ++ox) dst[ox] = row[ox * stride];
          dst += ow;
        }
      }
    }
  });
}

// Adjoint of im2col: scatter column rows back into the padded image buffer.
// Rows of a single channel map into that channel only, so channels can run in
// parallel.
template <typename T>
void col2im_acc(const T* col, i64 cch, i64 hp, i64 wp, i64 kh, i64 kw, i64 stride, i64 oh, i64 ow,
                T* xp) {
  parallel_for(0, cch, 1, [&](i64 c0, i64 c1) {
    for (i64 ci = c0; ci < c1; ++ci) {
      for (i64 u = 0; u < kh; ++u) {
        for (i64 v = 0; v < kw; ++v) {
          const i64 r = (ci * kh + u) * kw + v;
          const T* src = col + r * (oh * ow);
          T* dst = xp + (ci * hp + u) * wp + v;
          for (i64 oy = 0; oy < oh; ++oy) {
            T* row = dst + oy * stride * wp;
            for (i64 ox = 0; ox < ow; ++ox) row[ox * stride] += src[oy * ow + ox];
          }
        }
      }
    }
  });
}

void check_conv_args(const Shape& x, const Shape& w, const ConvSpec& spec, const char* who) {
  if (x.c != w.c) {
    throw ShapeError(cat(who, ": input channels ", x.c, " do not match weight ", w.str(),
                         " (input ", x.str(), ")"));
  }
  if (spec.stride < 1) throw ValueError(cat(who, ": stride must be >= 1, got ", spec.stride));
  if (spec.pad < 0) throw ValueError(cat(who, ": padding must be >= 0, got ", spec.pad));
  if (w.h < 1 || w.w < 1) throw ShapeError(cat(who, ": empty kernel ", w.str()));
  if (spec.mode == PadMode::Reflect && spec.pad > 0 &&
      (spec.pad > x.h - 1 || spec.pad > x.w - 1)) {
    throw ValueError(cat(who, ": reflect padding ", spec.pad, " too large for input ", x.str()));
  }
}

}  // namespace

Shape conv2d_out_shape(const Shape& x, const Shape& w, const ConvSpec& spec) {
  const i64 oh = floor_div(x.h + 2 * spec.pad - w.h, spec.stride) + 1;
  const i64 ow = floor_div(x.w + 2 * spec.pad - w.w, spec.stride) + 1;
  if (oh < 1 || ow < 1) {
    throw ShapeError(cat("conv2d: kernel ", w.str(), " does not fit input ", x.str(), " with pad ",
                         spec.pad, " stride ", spec.stride));
  }
  return Shape{x.n, w.n, oh, ow};
}

template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, i64 pt, i64 pb, i64 pl, i64 pr, PadMode mode) {
  const Shape s = x.shape;
  if (mode == PadMode::Reflect &&
      (pt > s.h - 1 || pb > s.h - 1 || pl > s.w - 1 || pr > s.w - 1)) {
    throw ValueError(cat("pad2d: reflect padding (", pt, ",", pb, ",", pl, ",", pr,
                         ") too large for input ", s.str()));
  }
  Tensor<T> out(Shape{s.n, s.c, s.h + pt + pb, s.w + pl + pr});
  const i64 hp = out.shape.h, wp = out.shape.w;
  parallel_for(0, s.n * s.c, 1, [&](i64 lo, i64 hi) {
    for (i64 nc = lo; nc < hi; ++nc) {
      const T* src = x.ptr() + nc * s.h * s.w;
      T* dst = out.ptr() + nc * hp * wp;
      for (i64 y = 0; y < hp; ++y) {
        const i64 sy = y - pt;
        if (mode == PadMode::Zero && (sy < 0 || sy >= s.h)) continue;  // already zero
        const i64 ry = mode == PadMode::Zero ? sy : reflect_index(sy, s.h);
        for (i64 xo = 0; xo < wp; ++xo) {
          const i64 sx = xo - pl;
          if (mode == PadMode::Zero && (sx < 0 || sx >= s.w)) continue;
          const i64 rx = mode == PadMode::Zero ? sx : reflect_index(sx, s.w);
          dst[y * wp + xo] = src[ry * s.w + rx];
        }
      }
    }
  });
  return out;
}

template <typename T>
void pad2d_adjoint_acc(Tensor<T>& gx, const Tensor<T>& gp, i64 pt, i64 pb, i64 pl, i64 pr,
                       PadMode mode) {
  const Shape s = gx.shape;
  const i64 hp = gp.shape.h, wp = gp.shape.w;
  if (hp != s.h + pt + pb || wp != s.w + pl + pr || gp.shape.n != s.n || gp.shape.c != s.c) {
    throw ShapeError(cat("pad2d_adjoint: ", gp.shape.str(), " vs ", s.str()));
  }
  parallel_for(0, s.n * s.c, 1, [&](i64 lo, i64 hi) {
    for (i64 nc = lo; nc < hi; ++nc) {
      const T* src = gp.ptr() + nc * hp * wp;
      T* dst = gx.ptr() + nc * s.h * s.w;
      for (i64 y = 0; y < hp; ++y) {
        const i64 sy = y - pt;
        if (mode == PadMode::Zero && (sy < 0 || sy >= s.h)) continue;
        const i64 ry = mode == PadMode::Zero ? sy : reflect_index(sy, s.h);
        for (i64 xo = 0; xo < wp; ++xo) {
          const i64 sx = xo - pl;
          if (mode == PadMode::Zero && (sx < 0 || sx >= s.w)) continue;
          const i64 rx = mode == PadMode::Zero ? sx : reflect_index(sx, s.w);
          dst[ry * s.w + rx] += src[y * wp + xo];
        }
      }
    }
  });
}

// -------- convolution --------

template <typename T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const T* bias, const ConvSpec& spec) {
  check_conv_args(x.shape, w.shape, spec, "conv2d");
  const Shape os = conv2d_out_shape(x.shape, w.shape, spec);
  const Tensor<T>* xin = &x;
  Tensor<T> padded;
  if (spec.pad > 0) {
    padded = pad2d(x, spec.pad, spec.pad, spec.pad, spec.pad, spec.mode);
    xin = &padded;
  }
  const i64 cin = x.shape.c, kh = w.shape.h, kw = w.shape.w, m = w.shape.n;
  const i64 hp = xin->shape.h, wp = xin->shape.w;
  const i64 p = os.h * os.w;
  const i64 kdim = cin * kh * kw;

  Tensor<T> y(os);
  const bool direct = (kh == 1 && kw == 1 && spec.stride == 1);
  std::vector<T> col;
  if (!direct) col.resize(static_cast<std::size_t>(kdim * p));
  for (i64 n = 0; n < x.shape.n; ++n) {
    const T* xp = xin->ptr() + n * cin * hp * wp;
    const T* b = direct ? xp : col.data();
    if (!direct) im2col(xp, cin, hp, wp, kh, kw, spec.stride, os.h, os.w, col.data());
    gemm_acc(w.ptr(), b, y.ptr() + n * m * p, m, kdim, p);
  }
  if (bias != nullptr) {
    parallel_for(0, os.n * m, 1, [&](i64 lo, i64 hi) {
      for (i64 nc = lo; nc < hi; ++nc) {
        const T bv = bias[nc % m];
        T* row = y.ptr() + nc * p;
        for (i64 i = 0; i < p; ++i) row[i] += bv;
      }
    });
  }
  return y;
}

template <typename T>
void conv2d_bwd_input_acc(Tensor<T>& gx, const Tensor<T>& gy, const Tensor<T>& w,
                          const ConvSpec& spec) {
  check_conv_args(gx.shape, w.shape, spec, "conv2d_bwd_input");
  const Shape os = conv2d_out_shape(gx.shape, w.shape, spec);
  if (!(os == gy.shape)) {
    throw ShapeError(cat("conv2d_bwd_input: grad shape ", gy.shape.str(), " does not match ",
                         os.str()));
  }
  const i64 cin = gx.shape.c, kh = w.shape.h, kw = w.shape.w, m = w.shape.n;
  const i64 hp = gx.shape.h + 2 * spec.pad, wp = gx.shape.w + 2 * spec.pad;
  const i64 p = os.h * os.w;
  const i64 kdim = cin * kh * kw;

  // w^T as [kdim, m]
  std::vector<T> wt(static_cast<std::size_t>(kdim * m));
  for (i64 mm = 0; mm < m; ++mm) {
    for (i64 k = 0; k < kdim; ++k) wt[static_cast<std::size_t>(k * m + mm)] = w.data[static_cast<std::size_t>(mm * kdim + k)];
  }

  std::vector<T> colg(static_cast<std::size_t>(kdim * p));
  Tensor<T> gpad;
  const bool padded = spec.pad > 0;
  if (padded) gpad = Tensor<T>(Shape{1, cin, hp, wp});
  for (i64 n = 0; n < gx.shape.n; ++n) {
    std::fill(colg.begin(), colg.end(), T(0));
    gemm_acc(wt.data(), gy.ptr() + n * m * p, colg.data(), kdim, m, p);
    if (padded) {
      gpad.fill(T(0));
      col2im_acc(colg.data(), cin, hp, wp, kh, kw, spec.stride, os.h, os.w, gpad.ptr());
      Tensor<T> slice(Shape{1, cin, gx.shape.h, gx.shape.w});
      pad2d_adjoint_acc(slice, gpad, spec.pad, spec.pad, spec.pad, spec.pad, spec.mode);
      T* dst = gx.ptr() + n * cin * gx.shape.h * gx.shape.w;
      for (i64 i = 0; i < slice.numel(); ++i) dst[i] += slice.data[static_cast<std::size_t>(i)];
    } else {
      col2im_acc(colg.data(), cin, hp, wp, kh, kw, spec.stride, os.h, os.w,
                 gx.ptr() + n * cin * hp * wp);
    }
  }
}

template <typename T>
void conv2d_bwd_weight_acc(Tensor<T>& gw, const Tensor<T>& gy, const Tensor<T>& x,
                           const ConvSpec& spec) {
  check_conv_args(x.shape, gw.shape, spec, "conv2d_bwd_weight");
  const Shape os = conv2d_out_shape(x.shape, gw.shape, spec);
  if (!(os == gy.shape)) {
    throw ShapeError(cat("conv2d_bwd_weight: grad shape ", gy.shape.str(), " does not match ",
                         os.str()));
  }
  const Tensor<T>* xin = &x;
  Tensor<T> paddedx;
  if (spec.pad > 0) {
    paddedx = pad2d(x, spec.pad, spec.pad, spec.pad, spec.pad, spec.mode);
    xin = &paddedx;
  }
  const i64 cin = x.shape.c, kh = gw.shape.h, kw = gw.shape.w, m = gw.shape.n;
  const i64 hp = xin->shape.h, wp = xin->shape.w;
  const i64 p = os.h * os.w;
  const i64 kdim = cin * kh * kw;

  const bool direct = (kh == 1 && kw == 1 && spec.stride == 1);
  std::vector<T> col;
  if (!direct) col.resize(static_cast<std::size_t>(kdim * p));
  for (i64 n = 0; n < x.shape.n; ++n) {
    const T* xp = xin->ptr() + n * cin * hp * wp;
    const T* b = direct ? xp : col.data();
    if (!direct) im2col(xp, cin, hp, wp, kh, kw, spec.stride, os.h, os.w, col.data());
    gemm_nt_acc(gy.ptr() + n * m * p, b, gw.ptr(), m, p, kdim);
  }
}

template <typename T>
void conv2d_bwd_bias_acc(T* gb, const Tensor<T>& gy) {
  const i64 m = gy.shape.c;
  const i64 p = gy.shape.h * gy.shape.w;
  parallel_for(0, m, 1, [&](i64 c0, i64 c1) {
    for (i64 c = c0; c < c1; ++c) {
      double acc = 0.0;
      for (i64 n = 0; n < gy.shape.n; ++n) {
        const T* row = gy.ptr() + (n * m + c) * p;
        for (i64 i = 0; i < p; ++i) acc += static_cast<double>(row[i]);
      }
      gb[c] += static_cast<T>(acc);
    }
  });
}

template <typename T>
Tensor<T> conv2d_transpose_fwd(const Tensor<T>& y, const Tensor<T>& w, const ConvSpec& spec,
                               i64 out_h, i64 out_w) {
  if (y.shape.c != w.shape.n) {
    throw ShapeError(cat("conv2d_transpose: input channels ", y.shape.c,
                         " do not match weight ", w.shape.str(), " (input ", y.shape.str(), ")"));
  }
  if (spec.stride < 1) throw ValueError(cat("conv2d_transpose: stride must be >= 1, got ", spec.stride));
  if (out_h == 0) out_h = (y.shape.h - 1) * spec.stride + w.shape.h - 2 * spec.pad;
  if (out_w == 0) out_w = (y.shape.w - 1) * spec.stride + w.shape.w - 2 * spec.pad;
  if (out_h < 1 || out_w < 1) {
    throw ShapeError(cat("conv2d_transpose: output collapses for input ", y.shape.str(),
                         " weight ", w.shape.str(), " pad ", spec.pad));
  }
  Tensor<T> out(Shape{y.shape.n, w.shape.c, out_h, out_w});
  const Shape check = conv2d_out_shape(out.shape, w.shape, spec);
  if (check.h != y.shape.h || check.w != y.shape.w) {
    throw ShapeError(cat("conv2d_transpose: requested output ", out.shape.str(),
                         " is inconsistent with input ", y.shape.str()));
  }
  conv2d_bwd_input_acc(out, y, w, spec);
  return out;
}

// -------- resampling --------

namespace {

// Half-pixel-center source mapping for a x2 upscale: s = o/2 - 1/4.
inline void up2_tap(i64 o, i64 n, i64& i0, i64& i1, double& f) {
  const double s = 0.5 * static_cast<double>(o) - 0.25;
  const double fs = std::floor(s);
  f = s - fs;
  i0 = std::min(std::max<i64>(static_cast<i64>(fs), 0), n - 1);
  i1 = std::min(static_cast<i64>(fs) + 1, n - 1);
  if (i1 < 0) i1 = 0;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_up2(const Tensor<T>& x) {
  const Shape s = x.shape;
  Tensor<T> out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  std::vector<i64> x0(static_cast<std::size_t>(2 * s.w)), x1(static_cast<std::size_t>(2 * s.w));
  std::vector<double> fx(static_cast<std::size_t>(2 * s.w));
  for (i64 o = 0; o < 2 * s.w; ++o) up2_tap(o, s.w, x0[static_cast<std::size_t>(o)], x1[static_cast<std::size_t>(o)], fx[static_cast<std::size_t>(o)]);
  parallel_for(0, s.n * s.c, 1, [&](i64 lo, i64 hi) {
    for (i64 nc = lo; nc < hi; ++nc) {
      const T* src = x.ptr() + nc * s.h * s.w;
      T* dst = out.ptr() + nc * 4 * s.h * s.w;
      for (i64 oy = 0; oy < 2 * s.h; ++oy) {
        i64 y0, y1;
        double fy;
        up2_tap(oy, s.h, y0, y1, fy);
        const T* r0 = src + y0 * s.w;
        const T* r1 = src + y1 * s.w;
        T* orow = dst + oy * 2 * s.w;
        for (i64 ox = 0; ox < 2 * s.w; ++ox) {
          const double a = (1.0 - fy) * static_cast<double>(r0[x0[static_cast<std::size_t>(ox)]]) +
                           fy * static_cast<double>(r1[x0[static_cast<std::size_t>(ox)]]);
          const double b = (1.0 - fy) * static_cast<double>(r0[x1[static_cast<std::size_t>(ox)]]) +
                           fy * static_cast<double>(r1[x1[static_cast<std::size_t>(ox)]]);
          orow[ox] = static_cast<T>((1.0 - fx[static_cast<std::size_t>(ox)]) * a +
                                    fx[static_cast<std::size_t>(ox)] * b);
        }
      }
    }
  });
  return out;
}

template <typename T>
void bilinear_up2_adjoint_acc(Tensor<T>& gx, const Tensor<T>& gy) {
  const Shape s = gx.shape;
  if (gy.shape.h != 2 * s.h || gy.shape.w != 2 * s.w || gy.shape.n != s.n || gy.shape.c != s.c) {
    throw ShapeError(cat("bilinear_up2_adjoint: ", gy.shape.str(), " vs ", s.str()));
  }
  parallel_for(0, s.n * s.c, 1, [&](i64 lo, i64 hi) {
    for (i64 nc = lo; nc < hi; ++nc) {
      const T* src = gy.ptr() + nc * 4 * s.h * s.w;
      T* dst = gx.ptr() + nc * s.h * s.w;
      for (i64 oy = 0; oy < 2 * s.h; ++oy) {
        i64 y0, y1;
        double fy;
        up2_tap(oy, s.h, y0, y1, fy);
        for (i64 ox = 0; ox < 2 * s.w; ++ox) {
          i64 c0, c1;
          double fx;
          up2_tap(ox, s.w, c0, c1, fx);
          const double g = static_cast<double>(src[oy * 2 * s.w + ox]);
          dst[y0 * s.w + c0] += static_cast<T>((1.0 - fy) * (1.0 - fx) * g);
          dst[y0 * s.w + c1] += static_cast<T>((1.0 - fy) * fx * g);
          dst[y1 * s.w + c0] += static_cast<T>(fy * (1.0 - fx) * g);
          dst[y1 * s.w + c1] += static_cast<T>(fy * fx * g);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  const Shape s = x.shape;
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError(cat("avg_pool2: H and W must be even, got ", s.str()));
  }
  Tensor<T> out(Shape{s.n, s.c, s.h / 2, s.w / 2});
  parallel_for(0, s.n * s.c, 1, [&](i64 lo, i64 hi) {
    for (i64 nc = lo; nc < hi; ++nc) {
      const T* src = x.ptr() + nc * s.h * s.w;
      T* dst = out.ptr() + nc * (s.h / 2) * (s.w / 2);
      for (i64 oy = 0; oy < s.h / 2; ++oy) {
        const T* r0 = src + 2 * oy * s.w;
        const T* r1 = r0 + s.w;
        for (i64 ox = 0; ox < s.w / 2; ++ox) {
          const double sum = static_cast<double>(r0[2 * ox]) + static_cast<double>(r0[2 * ox + 1]) +
                             static_cast<double>(r1[2 * ox]) + static_cast<double>(r1[2 * ox + 1]);
          dst[oy * (s.w / 2) + ox] = static_cast<T>(0.25 * sum);
        }
      }
    }
  });
  return out;
}

template <typename T>
void avg_pool2_adjoint_acc(Tensor<T>& gx, const Tensor<T>& gy) {
  const Shape s = gx.shape;
  if (gy.shape.h != s.h / 2 || gy.shape.w != s.w / 2 || gy.shape.n != s.n || gy.shape.c != s.c) {
    throw ShapeError(cat("avg_pool2_adjoint: ", gy.shape.str(), " vs ", s.str()));
  }
  parallel_for(0, s.n * s.c, 1, [&](i64 lo, i64 hi) {
    for (i64 nc = lo; nc < hi; ++nc) {
      const T* src = gy.ptr() + nc * (s.h / 2) * (s.w / 2);
      T* dst = gx.ptr() + nc * s.h * s.w;
      for (i64 oy = 0; oy < s.h / 2; ++oy) {
        T* r0 = dst + 2 * oy * s.w;
        T* r1 = r0 + s.w;
        for (i64 ox = 0; ox < s.w / 2; ++ox) {
          const T q = static_cast<T>(0.25 * static_cast<double>(src[oy * (s.w / 2) + ox]));
          r0[2 * ox] += q;
          r0[2 * ox + 1] += q;
          r1[2 * ox] += q;
          r1[2 * ox + 1] += q;
        }
      }
    }
  });
}

// Half-pixel x2 downscale coincides with the 2x2 block mean.
template <typename T>
Tensor<T> bilinear_down2(const Tensor<T>& x) {
  return avg_pool2(x);
}

template <typename T>
void bilinear_down2_adjoint_acc(Tensor<T>& gx, const Tensor<T>& gy) {
  avg_pool2_adjoint_acc(gx, gy);
}

// -------- pyramid stencils --------

template <typename T>
Tensor<T> pyr_down(const Tensor<T>& x) {
  const Shape s = x.shape;
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError(cat("pyr_down: H and W must be even, got ", s.str()));
  }
  const i64 h2 = s.h / 2, w2 = s.w / 2;
  Tensor<T> out(Shape{s.n, s.c, h2, w2});
  parallel_for(0, s.n * s.c, 1, [&](i64 lo, i64 hi) {
    std::vector<double> hbuf;
    for (i64 nc = lo; nc < hi; ++nc) {
      const T* src = x.ptr() + nc * s.h * s.w;
      T* dst = out.ptr() + nc * h2 * w2;
      hbuf.assign(static_cast<std::size_t>(s.h * w2), 0.0);
      for (i64 y = 0; y < s.h; ++y) {
        const T* row = src + y * s.w;
        double* hrow = hbuf.data() + y * w2;
        for (i64 ox = 0; ox < w2; ++ox) {
          double acc = 0.0;
          for (int t = 0; t < 5; ++t) {
            acc += pyr_taps[static_cast<std::size_t>(t)] *
                   static_cast<double>(row[reflect_index(2 * ox + t - 2, s.w)]);
          }
          hrow[ox] = acc;
        }
      }
      for (i64 oy = 0; oy < h2; ++oy) {
        for (i64 ox = 0; ox < w2; ++ox) {
          double acc = 0.0;
          for (int t = 0; t < 5; ++t) {
            acc += pyr_taps[static_cast<std::size_t>(t)] *
                   hbuf[static_cast<std::size_t>(reflect_index(2 * oy + t - 2, s.h) * w2 + ox)];
          }
          dst[oy * w2 + ox] = static_cast<T>(acc);
        }
      }
    }
  });
  return out;
}

template <typename T>
void pyr_down_adjoint_acc(Tensor<T>& gx, const Tensor<T>& gy) {
  const Shape s = gx.shape;
  const i64 h2 = s.h / 2, w2 = s.w / 2;
  if (gy.shape.h != h2 || gy.shape.w != w2 || gy.shape.n != s.n || gy.shape.c != s.c) {
    throw ShapeError(cat("pyr_down_adjoint: ", gy.shape.str(), " vs ", s.str()));
  }
  parallel_for(0, s.n * s.c, 1, [&](i64 lo, i64 hi) {
    for (i64 nc = lo; nc < hi; ++nc) {
      const T* src = gy.ptr() + nc * h2 * w2;
      T* dst = gx.ptr() + nc * s.h * s.w;
      for (i64 oy = 0; oy < h2; ++oy) {
        for (i64 ox = 0; ox < w2; ++ox) {
          const double g = static_cast<double>(src[oy * w2 + ox]);
          for (int ty = 0; ty < 5; ++ty) {
            const i64 y = reflect_index(2 * oy + ty - 2, s.h);
            const double wy = pyr_taps[static_cast<std::size_t>(ty)] * g;
            for (int tx = 0; tx < 5; ++tx) {
              const i64 xx = reflect_index(2 * ox + tx - 2, s.w);
              dst[y * s.w + xx] += static_cast<T>(pyr_taps[static_cast<std::size_t>(tx)] * wy);
            }
          }
        }
      }
    }
  });
}

template <typename T>
Tensor<T> pyr_up(const Tensor<T>& x) {
  const Shape s = x.shape;
  const i64 h2 = 2 * s.h, w2 = 2 * s.w;
  Tensor<T> out(Shape{s.n, s.c, h2, w2});
  parallel_for(0, s.n * s.c, 1, [&](i64 lo, i64 hi) {
    std::vector<double> a;
    for (i64 nc = lo; nc < hi; ++nc) {
      const T* src = x.ptr() + nc * s.h * s.w;
      T* dst = out.ptr() + nc * h2 * w2;
      a.assign(static_cast<std::size_t>(s.h * w2), 0.0);
      // x axis: zero-insert + 2*taps, reflect on the upsampled grid
      for (i64 y = 0; y < s.h; ++y) {
        const T* row = src + y * s.w;
        double* arow = a.data() + y * w2;
        for (i64 ox = 0; ox < w2; ++ox) {
          double acc = 0.0;
          for (int t = 0; t < 5; ++t) {
            const i64 zr = reflect_index(ox + t - 2, w2);
            if (zr % 2 == 0) {
              acc += 2.0 * pyr_taps[static_cast<std::size_t>(t)] * static_cast<double>(row[zr / 2]);
            }
          }
          arow[ox] = acc;
        }
      }
      // y axis
      for (i64 oy = 0; oy < h2; ++oy) {
        T* orow = dst + oy * w2;
        for (i64 ox = 0; ox < w2; ++ox) {
          double acc = 0.0;
          for (int t = 0; t < 5; ++t) {
            const i64 zr = reflect_index(oy + t - 2, h2);
            if (zr % 2 == 0) acc += 2.0 * pyr_taps[static_cast<std::size_t>(t)] * a[static_cast<std::size_t>((zr / 2) * w2 + ox)];
          }
          orow[ox] = static_cast<T>(acc);
        }
      }
    }
  });
  return out;
}

template <typename T>
void pyr_up_adjoint_acc(Tensor<T>& gx, const Tensor<T>& gy) {
  const Shape s = gx.shape;
  const i64 h2 = 2 * s.h, w2 = 2 * s.w;
  if (gy.shape.h != h2 || gy.shape.w != w2 || gy.shape.n != s.n || gy.shape.c != s.c) {
    throw ShapeError(cat("pyr_up_adjoint: ", gy.shape.str(), " vs ", s.str()));
  }
  parallel_for(0, s.n * s.c, 1, [&](i64 lo, i64 hi) {
    for (i64 nc = lo; nc < hi; ++nc) {
      const T* src = gy.ptr() + nc * h2 * w2;
      T* dst = gx.ptr() + nc * s.h * s.w;
      for (i64 oy = 0; oy < h2; ++oy) {
        const T* grow = src + oy * w2;
        for (int ty = 0; ty < 5; ++ty) {
          const i64 zy = reflect_index(oy + ty - 2, h2);
          if (zy % 2 != 0) continue;
          const double wy = 2.0 * pyr_taps[static_cast<std::size_t>(ty)];
          T* drow = dst + (zy / 2) * s.w;
          for (i64 ox = 0; ox < w2; ++ox) {
            const double g = wy * static_cast<double>(grow[ox]);
            for (int tx = 0; tx < 5; ++tx) {
              const i64 zx = reflect_index(ox + tx - 2, w2);
              if (zx % 2 != 0) continue;
              drow[zx / 2] += static_cast<T>(2.0 * pyr_taps[static_cast<std::size_t>(tx)] * g);
            }
          }
        }
      }
    }
  });
}

// -------- normalization --------

template <typename T>
Tensor<T> instance_norm_fwd(const Tensor<T>& x, const T* gamma, const T* beta, T eps,
                            std::vector<double>& mean, std::vector<double>& inv_sd) {
  const Shape s = x.shape;
  const i64 hw = s.h * s.w;
  if (hw < 2) {
    throw ValueError(cat("instance_norm: H*W must be >= 2 (variance undefined), got ", s.str()));
  }
  if (eps < T(0)) throw ValueError("instance_norm: eps must be >= 0");
  Tensor<T> y(s);
  mean.assign(static_cast<std::size_t>(s.n * s.c), 0.0);
  inv_sd.assign(static_cast<std::size_t>(s.n * s.c), 0.0);
  parallel_for(0, s.n * s.c, 1, [&](i64 lo, i64 hi) {
    for (i64 nc = lo; nc < hi; ++nc) {
      const i64 c = nc % s.c;
      const T* src = x.ptr() + nc * hw;
      T* dst = y.ptr() + nc * hw;
      double mu = 0.0;
      for (i64 i = 0; i < hw; ++i) mu += static_cast<double>(src[i]);
      mu /= static_cast<double>(hw);
      double var = 0.0;
      for (i64 i = 0; i < hw; ++i) {
        const double d = static_cast<double>(src[i]) - mu;
        var += d * d;
      }
      var /= static_cast<double>(hw);
      const double isd = 1.0 / std::sqrt(var + static_cast<double>(eps));
      mean[static_cast<std::size_t>(nc)] = mu;
      inv_sd[static_cast<std::size_t>(nc)] = isd;
      const double g = static_cast<double>(gamma[c]);
      const double b = static_cast<double>(beta[c]);
      for (i64 i = 0; i < hw; ++i) {
        dst[i] = static_cast<T>((static_cast<double>(src[i]) - mu) * isd * g + b);
      }
    }
  });
  return y;
}

template <typename T>
void instance_norm_bwd_acc(Tensor<T>* gx, T* ggamma, T* gbeta, const Tensor<T>& gy,
                           const Tensor<T>& x, const T* gamma, const std::vector<double>& mean,
                           const std::vector<double>& inv_sd) {
  const Shape s = x.shape;
  const i64 hw = s.h * s.w;
  parallel_for(0, s.c, 1, [&](i64 c0, i64 c1) {
    for (i64 c = c0; c < c1; ++c) {
      double dg = 0.0, db = 0.0;
      for (i64 n = 0; n < s.n; ++n) {
        const i64 nc = n * s.c + c;
        const T* gyp = gy.ptr() + nc * hw;
        const T* xp = x.ptr() + nc * hw;
        const double mu = mean[static_cast<std::size_t>(nc)];
        const double isd = inv_sd[static_cast<std::size_t>(nc)];
        double s1 = 0.0, s2 = 0.0;
        for (i64 i = 0; i < hw; ++i) {
          const double g = static_cast<double>(gyp[i]);
          const double xh = (static_cast<double>(xp[i]) - mu) * isd;
          s1 += g;
          s2 += g * xh;
        }
        db += s1;
        dg += s2;
        if (gx != nullptr) {
          T* dst = gx->ptr() + nc * hw;
          const double gc = static_cast<double>(gamma[c]);
          const double inv_hw = 1.0 / static_cast<double>(hw);
          for (i64 i = 0; i < hw; ++i) {
            const double g = static_cast<double>(gyp[i]);
            const double xh = (static_cast<double>(xp[i]) - mu) * isd;
            dst[i] += static_cast<T>(gc * isd * (g - (s1 + xh * s2) * inv_hw));
          }
        }
      }
      if (ggamma != nullptr) ggamma[c] += static_cast<T>(dg);
      if (gbeta != nullptr) gbeta[c] += static_cast<T>(db);
    }
  });
}

// -------- explicit instantiations --------

#define LPTN_INSTANTIATE_KERNELS(T)                                                               \
  template Tensor<T> pad2d<T>(const Tensor<T>&, i64, i64, i64, i64, PadMode);                     \
  template void pad2d_adjoint_acc<T>(Tensor<T>&, const Tensor<T>&, i64, i64, i64, i64, PadMode);  \
  template Tensor<T> conv2d_fwd<T>(const Tensor<T>&, const Tensor<T>&, const T*, const ConvSpec&);\
  template void conv2d_bwd_input_acc<T>(Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                        const ConvSpec&);                                         \
  template void conv2d_bwd_weight_acc<T>(Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                         const ConvSpec&);                                        \
  template void conv2d_bwd_bias_acc<T>(T*, const Tensor<T>&);                                     \
  template Tensor<T> conv2d_transpose_fwd<T>(const Tensor<T>&, const Tensor<T>&, const ConvSpec&, \
                                             i64, i64);                                           \
  template Tensor<T> bilinear_up2<T>(const Tensor<T>&);                                           \
  template void bilinear_up2_adjoint_acc<T>(Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> bilinear_down2<T>(const Tensor<T>&);                                         \
  template void bilinear_down2_adjoint_acc<T>(Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> avg_pool2<T>(const Tensor<T>&);                                              \
  template void avg_pool2_adjoint_acc<T>(Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> pyr_down<T>(const Tensor<T>&);                                               \
  template void pyr_down_adjoint_acc<T>(Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> pyr_up<T>(const Tensor<T>&);                                                 \
  template void pyr_up_adjoint_acc<T>(Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> instance_norm_fwd<T>(const Tensor<T>&, const T*, const T*, T,                \
                                          std::vector<double>&, std::vector<double>&);            \
  template void instance_norm_bwd_acc<T>(Tensor<T>*, T*, T*, const Tensor<T>&, const Tensor<T>&,  \
                                         const T*, const std::vector<double>&,                    \
                                         const std::vector<double>&);

LPTN_INSTANTIATE_KERNELS(float)
LPTN_INSTANTIATE_KERNELS(double)

#undef LPTN_INSTANTIATE_KERNELS

}  // namespace lptn::kernels

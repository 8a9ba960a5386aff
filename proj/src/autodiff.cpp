#include "lptn/autodiff.hpp"

#include <cmath>

namespace lptn {

namespace {

template <typename T>
void check_same_shape(const char* who, const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape == b.shape)) {
    throw ShapeError(cat(who, ": shape mismatch ", a.shape.str(), " vs ", b.shape.str()));
  }
}

template <typename T>
void acc_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (i64 i = 0; i < dst.numel(); ++i) dst.data[static_cast<std::size_t>(i)] += src.data[static_cast<std::size_t>(i)];
}

template <typename T, class F, class DF>
Var<T> pointwise_unary(Graph<T>& g, const char* tag, Var<T> x, F f, DF df) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> y(xv.shape);
  for (i64 i = 0; i < xv.numel(); ++i) y.data[static_cast<std::size_t>(i)] = f(xv.data[static_cast<std::size_t>(i)]);
  return g.push(tag, {x.id}, std::move(y), [x, df](Graph<T>& gr, int self) {
    if (!gr.needs_grad(x)) return;
    const Tensor<T>& gy = gr.grad(Var<T>{self});
    const Tensor<T>& xv = gr.value(x);
    const Tensor<T>& yv = gr.value(Var<T>{self});
    Tensor<T>& gx = gr.grad_buffer(x.id);
    for (i64 i = 0; i < gx.numel(); ++i) {
      const auto s = static_cast<std::size_t>(i);
      gx.data[s] += gy.data[s] * df(xv.data[s], yv.data[s]);
    }
  });
}

}  // namespace

// -------- convolution --------

template <typename T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> w, Var<T> bias, const ConvSpec& spec) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  const T* bptr = nullptr;
  if (bias.valid()) {
    const Tensor<T>& bv = g.value(bias);
    if (bv.shape.c != wv.shape.n || bv.numel() != wv.shape.n) {
      throw ShapeError(cat("conv2d: bias ", bv.shape.str(), " does not match weight ",
                           wv.shape.str()));
    }
    bptr = bv.ptr();
  }
  Tensor<T> y = kernels::conv2d_fwd(xv, wv, bptr, spec);
  std::vector<int> inputs = {x.id, w.id};
  if (bias.valid()) inputs.push_back(bias.id);
  return g.push("conv2d", std::move(inputs), std::move(y), [x, w, bias, spec](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(Var<T>{self});
    if (gr.needs_grad(x)) {
      kernels::conv2d_bwd_input_acc(gr.grad_buffer(x.id), gy, gr.value(w), spec);
    }
    if (gr.needs_grad(w)) {
      kernels::conv2d_bwd_weight_acc(gr.grad_buffer(w.id), gy, gr.value(x), spec);
    }
    if (bias.valid() && gr.needs_grad(bias)) {
      kernels::conv2d_bwd_bias_acc(gr.grad_buffer(bias.id).ptr(), gy);
    }
  });
}

template <typename T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> w, const ConvSpec& spec) {
  return conv2d(g, x, w, Var<T>{}, spec);
}

template <typename T>
Var<T> conv2d_transpose(Graph<T>& g, Var<T> x, Var<T> w, const ConvSpec& spec, i64 out_h,
                        i64 out_w) {
  Tensor<T> y = kernels::conv2d_transpose_fwd(g.value(x), g.value(w), spec, out_h, out_w);
  return g.push("conv2d_transpose", {x.id, w.id}, std::move(y), [x, w, spec](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(Var<T>{self});
    if (gr.needs_grad(x)) {
      Tensor<T> gi = kernels::conv2d_fwd(gy, gr.value(w), static_cast<const T*>(nullptr), spec);
      acc_into(gr.grad_buffer(x.id), gi);
    }
    if (gr.needs_grad(w)) {
      // same bilinear pairing as conv2d with the roles of input/output swapped
      kernels::conv2d_bwd_weight_acc(gr.grad_buffer(w.id), gr.value(x), gy, spec);
    }
  });
}

// -------- resampling --------

template <typename T>
Var<T> bilinear_up2(Graph<T>& g, Var<T> x) {
  return g.push("bilinear_up2", {x.id}, kernels::bilinear_up2(g.value(x)),
                [x](Graph<T>& gr, int self) {
                  if (!gr.needs_grad(x)) return;
                  kernels::bilinear_up2_adjoint_acc(gr.grad_buffer(x.id), gr.grad(Var<T>{self}));
                });
}

template <typename T>
Var<T> bilinear_down2(Graph<T>& g, Var<T> x) {
  const Shape s = g.value(x).shape;
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError(cat("bilinear_down2: H and W must be even, got ", s.str()));
  }
  return g.push("bilinear_down2", {x.id}, kernels::bilinear_down2(g.value(x)),
                [x](Graph<T>& gr, int self) {
                  if (!gr.needs_grad(x)) return;
                  kernels::bilinear_down2_adjoint_acc(gr.grad_buffer(x.id), gr.grad(Var<T>{self}));
                });
}

template <typename T>
Var<T> avg_pool2(Graph<T>& g, Var<T> x) {
  return g.push("avg_pool2", {x.id}, kernels::avg_pool2(g.value(x)), [x](Graph<T>& gr, int self) {
    if (!gr.needs_grad(x)) return;
    kernels::avg_pool2_adjoint_acc(gr.grad_buffer(x.id), gr.grad(Var<T>{self}));
  });
}

template <typename T>
Var<T> pyr_down(Graph<T>& g, Var<T> x) {
  return g.push("pyr_down", {x.id}, kernels::pyr_down(g.value(x)), [x](Graph<T>& gr, int self) {
    if (!gr.needs_grad(x)) return;
    kernels::pyr_down_adjoint_acc(gr.grad_buffer(x.id), gr.grad(Var<T>{self}));
  });
}

template <typename T>
Var<T> pyr_up(Graph<T>& g, Var<T> x) {
  return g.push("pyr_up", {x.id}, kernels::pyr_up(g.value(x)), [x](Graph<T>& gr, int self) {
    if (!gr.needs_grad(x)) return;
    kernels::pyr_up_adjoint_acc(gr.grad_buffer(x.id), gr.grad(Var<T>{self}));
  });
}

// -------- pointwise --------

template <typename T>
Var<T> leaky_relu(Graph<T>& g, Var<T> x, T slope) {
  if (!(slope > T(0) && slope < T(1))) {
    throw ValueError(cat("leaky_relu: slope must be in (0, 1), got ", slope));
  }
  return pointwise_unary(
      g, "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> tanh(Graph<T>& g, Var<T> x) {
  return pointwise_unary(
      g, "tanh", x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> instance_norm(Graph<T>& g, Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& gv = g.value(gamma);
  const Tensor<T>& bv = g.value(beta);
  if (gv.numel() != xv.shape.c || bv.numel() != xv.shape.c) {
    throw ShapeError(cat("instance_norm: gamma ", gv.shape.str(), " / beta ", bv.shape.str(),
                         " do not match input ", xv.shape.str()));
  }
  std::vector<double> mean, inv_sd;
  Tensor<T> y = kernels::instance_norm_fwd(xv, gv.ptr(), bv.ptr(), eps, mean, inv_sd);
  return g.push("instance_norm", {x.id, gamma.id, beta.id}, std::move(y),
                [x, gamma, beta, mean = std::move(mean), inv_sd = std::move(inv_sd)](Graph<T>& gr,
                                                                                      int self) {
                  const Tensor<T>& gy = gr.grad(Var<T>{self});
                  Tensor<T>* gx = gr.needs_grad(x) ? &gr.grad_buffer(x.id) : nullptr;
                  T* gg = gr.needs_grad(gamma) ? gr.grad_buffer(gamma.id).ptr() : nullptr;
                  T* gb = gr.needs_grad(beta) ? gr.grad_buffer(beta.id).ptr() : nullptr;
                  kernels::instance_norm_bwd_acc(gx, gg, gb, gy, gr.value(x),
                                                 gr.value(gamma).ptr(), mean, inv_sd);
                });
}

// -------- elementwise --------

template <typename T>
Var<T> add(Graph<T>& g, Var<T> a, Var<T> b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  check_same_shape("add", av, bv);
  Tensor<T> y(av.shape);
  for (i64 i = 0; i < y.numel(); ++i) {
    const auto s = static_cast<std::size_t>(i);
    y.data[s] = av.data[s] + bv.data[s];
  }
  return g.push("add", {a.id, b.id}, std::move(y), [a, b](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(Var<T>{self});
    if (gr.needs_grad(a)) acc_into(gr.grad_buffer(a.id), gy);
    if (gr.needs_grad(b)) acc_into(gr.grad_buffer(b.id), gy);
  });
}

template <typename T>
Var<T> sub(Graph<T>& g, Var<T> a, Var<T> b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  check_same_shape("sub", av, bv);
  Tensor<T> y(av.shape);
  for (i64 i = 0; i < y.numel(); ++i) {
    const auto s = static_cast<std::size_t>(i);
    y.data[s] = av.data[s] - bv.data[s];
  }
  return g.push("sub", {a.id, b.id}, std::move(y), [a, b](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(Var<T>{self});
    if (gr.needs_grad(a)) acc_into(gr.grad_buffer(a.id), gy);
    if (gr.needs_grad(b)) {
      Tensor<T>& gb = gr.grad_buffer(b.id);
      for (i64 i = 0; i < gb.numel(); ++i) gb.data[static_cast<std::size_t>(i)] -= gy.data[static_cast<std::size_t>(i)];
    }
  });
}

template <typename T>
Var<T> mul(Graph<T>& g, Var<T> a, Var<T> b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  check_same_shape("mul", av, bv);
  Tensor<T> y(av.shape);
  for (i64 i = 0; i < y.numel(); ++i) {
    const auto s = static_cast<std::size_t>(i);
    y.data[s] = av.data[s] * bv.data[s];
  }
  return g.push("mul", {a.id, b.id}, std::move(y), [a, b](Graph<T>& gr, int self) {
    const Tensor<T>& gy = gr.grad(Var<T>{self});
    const Tensor<T>& av = gr.value(a);
    const Tensor<T>& bv = gr.value(b);
    if (gr.needs_grad(a)) {
      Tensor<T>& ga = gr.grad_buffer(a.id);
      for (i64 i = 0; i < ga.numel(); ++i) {
        const auto s = static_cast<std::size_t>(i);
        ga.data[s] += gy.data[s] * bv.data[s];
      }
    }
    if (gr.needs_grad(b)) {
      Tensor<T>& gb = gr.grad_buffer(b.id);
      for (i64 i = 0; i < gb.numel(); ++i) {
        const auto s = static_cast<std::size_t>(i);
        gb.data[s] += gy.data[s] * av.data[s];
      }
    }
  });
}

template <typename T>
Var<T> add_scalar(Graph<T>& g, Var<T> x, T s) {
  return pointwise_unary(
      g, "add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> mul_scalar(Graph<T>& g, Var<T> x, T s) {
  return pointwise_unary(
      g, "mul_scalar", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

// -------- shape ops --------

template <typename T>
Var<T> concat_channels(Graph<T>& g, const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ValueError("concat_channels: no inputs");
  const Shape first = g.value(parts[0]).shape;
  i64 ctotal = 0;
  for (const auto& p : parts) {
    const Shape s = g.value(p).shape;
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError(cat("concat_channels: shape mismatch ", s.str(), " vs ", first.str()));
    }
    ctotal += s.c;
  }
  Tensor<T> y(Shape{first.n, ctotal, first.h, first.w});
  const i64 hw = first.h * first.w;
  std::vector<int> inputs;
  for (i64 n = 0; n < first.n; ++n) {
    i64 coff = 0;
    for (const auto& p : parts) {
      const Tensor<T>& pv = g.value(p);
      const i64 pc = pv.shape.c;
      std::copy(pv.ptr() + n * pc * hw, pv.ptr() + (n + 1) * pc * hw,
                y.ptr() + (n * ctotal + coff) * hw);
      coff += pc;
    }
  }
  for (const auto& p : parts) inputs.push_back(p.id);
  auto parts_copy = parts;
  return g.push("concat_channels", std::move(inputs), std::move(y),
                [parts_copy, ctotal, hw](Graph<T>& gr, int self) {
                  const Tensor<T>& gy = gr.grad(Var<T>{self});
                  const i64 n_dim = gy.shape.n;
                  for (i64 n = 0; n < n_dim; ++n) {
                    i64 coff = 0;
                    for (const auto& p : parts_copy) {
                      const i64 pc = gr.value(p).shape.c;
                      if (gr.needs_grad(p)) {
                        Tensor<T>& gp = gr.grad_buffer(p.id);
                        const T* src = gy.ptr() + (n * ctotal + coff) * hw;
                        T* dst = gp.ptr() + n * pc * hw;
                        for (i64 i = 0; i < pc * hw; ++i) dst[i] += src[i];
                      }
                      coff += pc;
                    }
                  }
                });
}

template <typename T>
Var<T> broadcast_mul_mask(Graph<T>& g, Var<T> x, Var<T> mask) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& mv = g.value(mask);
  if (mv.shape.c != 1 || mv.shape.n != xv.shape.n || mv.shape.h != xv.shape.h ||
      mv.shape.w != xv.shape.w) {
    throw ShapeError(cat("broadcast_mul_mask: mask ", mv.shape.str(), " does not match input ",
                         xv.shape.str()));
  }
  Tensor<T> y(xv.shape);
  const i64 hw = xv.shape.h * xv.shape.w;
  for (i64 n = 0; n < xv.shape.n; ++n) {
    const T* mp = mv.ptr() + n * hw;
    for (i64 c = 0; c < xv.shape.c; ++c) {
      const T* xp = xv.ptr() + (n * xv.shape.c + c) * hw;
      T* yp = y.ptr() + (n * xv.shape.c + c) * hw;
      for (i64 i = 0; i < hw; ++i) yp[i] = xp[i] * mp[i];
    }
  }
  return g.push("broadcast_mul_mask", {x.id, mask.id}, std::move(y),
                [x, mask, hw](Graph<T>& gr, int self) {
                  const Tensor<T>& gy = gr.grad(Var<T>{self});
                  const Tensor<T>& xv = gr.value(x);
                  const Tensor<T>& mv = gr.value(mask);
                  if (gr.needs_grad(x)) {
                    Tensor<T>& gx = gr.grad_buffer(x.id);
                    for (i64 n = 0; n < xv.shape.n; ++n) {
                      const T* mp = mv.ptr() + n * hw;
                      for (i64 c = 0; c < xv.shape.c; ++c) {
                        const i64 off = (n * xv.shape.c + c) * hw;
                        for (i64 i = 0; i < hw; ++i) gx.data[static_cast<std::size_t>(off + i)] += gy.data[static_cast<std::size_t>(off + i)] * mp[i];
                      }
                    }
                  }
                  if (gr.needs_grad(mask)) {
                    Tensor<T>& gm = gr.grad_buffer(mask.id);
                    for (i64 n = 0; n < xv.shape.n; ++n) {
                      T* gmp = gm.ptr() + n * hw;
                      for (i64 c = 0; c < xv.shape.c; ++c) {
                        const i64 off = (n * xv.shape.c + c) * hw;
                        for (i64 i = 0; i < hw; ++i) gmp[i] += gy.data[static_cast<std::size_t>(off + i)] * xv.data[static_cast<std::size_t>(off + i)];
                      }
                    }
                  }
                });
}

// -------- reductions --------

template <typename T>
Var<T> mean_all(Graph<T>& g, Var<T> x) {
  const Tensor<T>& xv = g.value(x);
  if (xv.numel() == 0) throw ValueError("mean_all: empty tensor");
  double acc = 0.0;
  for (T v : xv.data) acc += static_cast<double>(v);
  Tensor<T> y(Shape{1, 1, 1, 1});
  y.data[0] = static_cast<T>(acc / static_cast<double>(xv.numel()));
  return g.push("mean_all", {x.id}, std::move(y), [x](Graph<T>& gr, int self) {
    if (!gr.needs_grad(x)) return;
    const T gy = gr.grad(Var<T>{self}).data[0];
    Tensor<T>& gx = gr.grad_buffer(x.id);
    const T q = gy / static_cast<T>(gx.numel());
    for (auto& v : gx.data) v += q;
  });
}

template <typename T>
Var<T> sum_all(Graph<T>& g, Var<T> x) {
  const Tensor<T>& xv = g.value(x);
  double acc = 0.0;
  for (T v : xv.data) acc += static_cast<double>(v);
  Tensor<T> y(Shape{1, 1, 1, 1});
  y.data[0] = static_cast<T>(acc);
  return g.push("sum_all", {x.id}, std::move(y), [x](Graph<T>& gr, int self) {
    if (!gr.needs_grad(x)) return;
    const T gy = gr.grad(Var<T>{self}).data[0];
    Tensor<T>& gx = gr.grad_buffer(x.id);
    for (auto& v : gx.data) v += gy;
  });
}

// -------- layout --------

template <typename T>
Var<T> crop_tl(Graph<T>& g, Var<T> x, i64 h, i64 w) {
  const Tensor<T>& xv = g.value(x);
  if (h < 1 || w < 1 || h > xv.shape.h || w > xv.shape.w) {
    throw ShapeError(cat("crop_tl: window ", h, "x", w, " does not fit ", xv.shape.str()));
  }
  Tensor<T> y(Shape{xv.shape.n, xv.shape.c, h, w});
  for (i64 nc = 0; nc < xv.shape.n * xv.shape.c; ++nc) {
    const T* src = xv.ptr() + nc * xv.shape.h * xv.shape.w;
    T* dst = y.ptr() + nc * h * w;
    for (i64 y0 = 0; y0 < h; ++y0) {
      std::copy(src + y0 * xv.shape.w, src + y0 * xv.shape.w + w, dst + y0 * w);
    }
  }
  return g.push("crop_tl", {x.id}, std::move(y), [x, h, w](Graph<T>& gr, int self) {
    if (!gr.needs_grad(x)) return;
    const Tensor<T>& gy = gr.grad(Var<T>{self});
    Tensor<T>& gx = gr.grad_buffer(x.id);
    for (i64 nc = 0; nc < gx.shape.n * gx.shape.c; ++nc) {
      const T* src = gy.ptr() + nc * h * w;
      T* dst = gx.ptr() + nc * gx.shape.h * gx.shape.w;
      for (i64 y0 = 0; y0 < h; ++y0) {
        for (i64 x0 = 0; x0 < w; ++x0) dst[y0 * gx.shape.w + x0] += src[y0 * w + x0];
      }
    }
  });
}

template <typename T>
Var<T> pad_reflect_br(Graph<T>& g, Var<T> x, i64 pb, i64 pr) {
  if (pb < 0 || pr < 0) throw ValueError("pad_reflect_br: negative padding");
  Tensor<T> y = kernels::pad2d(g.value(x), 0, pb, 0, pr, PadMode::Reflect);
  return g.push("pad_reflect_br", {x.id}, std::move(y), [x, pb, pr](Graph<T>& gr, int self) {
    if (!gr.needs_grad(x)) return;
    kernels::pad2d_adjoint_acc(gr.grad_buffer(x.id), gr.grad(Var<T>{self}), 0, pb, 0, pr,
                               PadMode::Reflect);
  });
}

// -------- explicit instantiations --------

#define LPTN_INSTANTIATE_OPS(T)                                                                  \
  template Var<T> conv2d<T>(Graph<T>&, Var<T>, Var<T>, Var<T>, const ConvSpec&);                 \
  template Var<T> conv2d<T>(Graph<T>&, Var<T>, Var<T>, const ConvSpec&);                        \
  template Var<T> conv2d_transpose<T>(Graph<T>&, Var<T>, Var<T>, const ConvSpec&, i64, i64);     \
  template Var<T> bilinear_up2<T>(Graph<T>&, Var<T>);                                            \
  template Var<T> bilinear_down2<T>(Graph<T>&, Var<T>);                                          \
  template Var<T> avg_pool2<T>(Graph<T>&, Var<T>);                                               \
  template Var<T> pyr_down<T>(Graph<T>&, Var<T>);                                                \
  template Var<T> pyr_up<T>(Graph<T>&, Var<T>);                                                  \
  template Var<T> leaky_relu<T>(Graph<T>&, Var<T>, T);                                           \
  template Var<T> tanh<T>(Graph<T>&, Var<T>);                                                    \
  template Var<T> instance_norm<T>(Graph<T>&, Var<T>, Var<T>, Var<T>, T);                        \
  template Var<T> add<T>(Graph<T>&, Var<T>, Var<T>);                                             \
  template Var<T> sub<T>(Graph<T>&, Var<T>, Var<T>);                                             \
  template Var<T> mul<T>(Graph<T>&, Var<T>, Var<T>);                                             \
  template Var<T> add_scalar<T>(Graph<T>&, Var<T>, T);                                           \
  template Var<T> mul_scalar<T>(Graph<T>&, Var<T>, T);                                           \
  template Var<T> concat_channels<T>(Graph<T>&, const std::vector<Var<T>>&);                     \
  template Var<T> broadcast_mul_mask<T>(Graph<T>&, Var<T>, Var<T>);                              \
  template Var<T> mean_all<T>(Graph<T>&, Var<T>);                                                \
  template Var<T> sum_all<T>(Graph<T>&, Var<T>);                                                 \
  template Var<T> crop_tl<T>(Graph<T>&, Var<T>, i64, i64);                                       \
  template Var<T> pad_reflect_br<T>(Graph<T>&, Var<T>, i64, i64);

LPTN_INSTANTIATE_OPS(float)
LPTN_INSTANTIATE_OPS(double)

#undef LPTN_INSTANTIATE_OPS

}  // namespace lptn

#include "lptn/net.hpp"

#include <chrono>

namespace lptn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename T>
Tensor<T> fan_in_uniform(Shape s, Rng& rng) {
  const i64 fan_in = s.c * s.h * s.w;
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  Tensor<T> t(s);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
ConvP<Tensor<T>> make_conv(i64 out_c, i64 in_c, i64 k, bool bias, Rng& rng) {
  ConvP<Tensor<T>> p;
  p.w = fan_in_uniform<T>(Shape{out_c, in_c, k, k}, rng);
  if (bias) p.b = Tensor<T>(Shape{1, out_c, 1, 1});
  return p;
}

template <typename T>
ConvP<Tensor<T>> make_zero_conv(i64 out_c, i64 in_c, i64 k, bool bias) {
  ConvP<Tensor<T>> p;
  p.w = Tensor<T>(Shape{out_c, in_c, k, k});
  if (bias) p.b = Tensor<T>(Shape{1, out_c, 1, 1});
  return p;
}

template <typename T>
NormP<Tensor<T>> make_norm(i64 c) {
  NormP<Tensor<T>> p{Tensor<T>(Shape{1, c, 1, 1}, T(1)), Tensor<T>(Shape{1, c, 1, 1})};
  return p;
}

// Residual translator body shared by the low-frequency net and the mask net:
// 1x1 expand, stacked residual blocks of two 3x3 convs (leaky ReLU after
// each, optional instance norm before the activation), 3x3 reduction.
template <typename T>
TransNetP<Tensor<T>> make_transnet(i64 in_c, i64 width, i64 out_c, i64 blocks, bool norm,
                                   Rng* rng) {
  TransNetP<Tensor<T>> net;
  auto conv = [&](i64 oc, i64 ic, i64 k, bool bias) {
    return rng ? make_conv<T>(oc, ic, k, bias, *rng) : make_zero_conv<T>(oc, ic, k, bias);
  };
  net.expand = conv(width, in_c, 1, true);
  for (i64 i = 0; i < blocks; ++i) {
    ResBlockP<Tensor<T>> blk;
    // bias is redundant (and gradient-dead) under a following instance norm
    blk.conv1 = conv(width, width, 3, !norm);
    blk.conv2 = conv(width, width, 3, !norm);
    if (norm) {
      blk.norm1 = make_norm<T>(width);
      blk.norm2 = make_norm<T>(width);
    }
    net.blocks.push_back(std::move(blk));
  }
  net.reduce = conv(out_c, width, 3, true);
  return net;
}

template <typename T>
GeneratorParams<T> build_generator(const GeneratorConfig& cfg, Rng* rng) {
  cfg.validate();
  GeneratorParams<T> p;
  const i64 c = cfg.image_channels;
  p.low_net = make_transnet<T>(c, cfg.low_channels, c, cfg.num_res_blocks,
                               cfg.use_instance_norm, rng);
  p.mask_net = make_transnet<T>(3 * c, cfg.mask_channels, 1, cfg.num_res_blocks, false, rng);
  p.mask_net.reduce.b.fill(T(1));  // identity refinement at the start
  for (i64 l = 0; l < cfg.levels - 1; ++l) {
    if (!cfg.finetune_on(l)) {
      p.finetune.push_back(std::nullopt);
      continue;
    }
    FinetuneP<Tensor<T>> ft;
    ft.conv1 = rng ? make_conv<T>(1, 1, 3, true, *rng) : make_zero_conv<T>(1, 1, 3, true);
    ft.conv2 = make_zero_conv<T>(1, 1, 3, true);  // block output equals its input at init
    p.finetune.push_back(std::move(ft));
  }
  return p;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (levels < 1) throw ValueError(cat("config: levels must be >= 1, got ", levels));
  if (image_channels < 1 || low_channels < 1 || mask_channels < 1) {
    throw ValueError("config: channel counts must be >= 1");
  }
  if (num_res_blocks < 1) throw ValueError("config: num_res_blocks must be >= 1");
  if (!(leaky_slope > 0.0f && leaky_slope < 1.0f)) {
    throw ValueError("config: leaky_slope must be in (0, 1)");
  }
  if (!finetune_enabled.empty() &&
      static_cast<i64>(finetune_enabled.size()) != levels - 1) {
    throw ValueError(cat("config: finetune_enabled has ", finetune_enabled.size(),
                         " entries, expected ", levels - 1));
  }
}

void DiscriminatorConfig::validate() const {
  if (base_channels < 1) throw ValueError("config: discriminator base_channels must be >= 1");
  if (scales < 1) throw ValueError("config: discriminator needs at least one scale");
}

template <typename T>
GeneratorParams<T> init_generator(const GeneratorConfig& cfg, Rng& rng) {
  return build_generator<T>(cfg, &rng);
}

template <typename T>
GeneratorParams<T> identity_generator(const GeneratorConfig& cfg) {
  return build_generator<T>(cfg, nullptr);
}

template <typename T>
DiscriminatorParams<T> init_discriminator(const DiscriminatorConfig& cfg, Rng& rng) {
  cfg.validate();
  DiscriminatorParams<T> p;
  const i64 b = cfg.base_channels;
  for (i64 s = 0; s < cfg.scales; ++s) {
    DiscScaleP<Tensor<T>> sc;
    sc.convs[0] = make_conv<T>(b, 3, 4, true, rng);
    sc.convs[1] = make_conv<T>(2 * b, b, 4, false, rng);
    sc.convs[2] = make_conv<T>(4 * b, 2 * b, 4, false, rng);
    sc.convs[3] = make_conv<T>(8 * b, 4 * b, 4, false, rng);
    sc.norms[1] = make_norm<T>(2 * b);
    sc.norms[2] = make_norm<T>(4 * b);
    sc.norms[3] = make_norm<T>(8 * b);
    sc.final = make_conv<T>(1, 8 * b, 4, true, rng);
    p.scales.push_back(std::move(sc));
  }
  return p;
}

i64 count_params(const GeneratorParams<float>& p) {
  i64 n = 0;
  visit_generator(p, [&](const std::string&, const Tensor<float>& t) { n += t.numel(); });
  return n;
}

i64 count_params(const DiscriminatorParams<float>& p) {
  i64 n = 0;
  visit_discriminator(p, [&](const std::string&, const Tensor<float>& t) { n += t.numel(); });
  return n;
}

// -------- forward passes --------

namespace {

template <typename T>
Var<T> run_transnet(Graph<T>& g, Var<T> x, const TransNetP<Var<T>>& net, float slope,
                    bool use_norm) {
  const ConvSpec one{1, 0, PadMode::Reflect};
  const ConvSpec three{1, 1, PadMode::Reflect};
  const T s = static_cast<T>(slope);
  Var<T> h = conv2d(g, x, net.expand.w, net.expand.b, one);
  for (const auto& blk : net.blocks) {
    Var<T> r = conv2d(g, h, blk.conv1.w, blk.conv1.b, three);
    if (use_norm && blk.norm1) r = instance_norm(g, r, blk.norm1->gamma, blk.norm1->beta, static_cast<T>(kInstanceNormEps));
    r = leaky_relu(g, r, s);
    r = conv2d(g, r, blk.conv2.w, blk.conv2.b, three);
    if (use_norm && blk.norm2) r = instance_norm(g, r, blk.norm2->gamma, blk.norm2->beta, static_cast<T>(kInstanceNormEps));
    r = leaky_relu(g, r, s);
    h = add(g, h, r);
  }
  return conv2d(g, h, net.reduce.w, net.reduce.b, three);
}

}  // namespace

template <typename T>
Var<T> translate_low(Graph<T>& g, Var<T> low, const BoundGenerator<T>& p,
                     const GeneratorConfig& cfg) {
  const Shape s = g.value(low).shape;
  const Shape ws = g.value(p.low_net.expand.w).shape;
  if (s.c != ws.c) {
    throw ShapeError(cat("translate_low: input has ", s.c, " channels but params expect ", ws.c));
  }
  Var<T> resid = run_transnet(g, low, p.low_net, cfg.leaky_slope, cfg.use_instance_norm);
  return tanh(g, add(g, resid, low));
}

template <typename T>
Var<T> compute_base_mask(Graph<T>& g, Var<T> h_top, Var<T> low, Var<T> low_translated,
                         const BoundGenerator<T>& p, const GeneratorConfig& cfg) {
  Var<T> up_low = bilinear_up2(g, low);
  Var<T> up_tr = bilinear_up2(g, low_translated);
  const Shape hs = g.value(h_top).shape;
  const Shape us = g.value(up_low).shape;
  if (hs.h != us.h || hs.w != us.w || hs.n != us.n) {
    throw ShapeError(cat("compute_base_mask: band ", hs.str(),
                         " does not match upsampled low ", us.str()));
  }
  Var<T> stack = concat_channels(g, std::vector<Var<T>>{up_low, up_tr, h_top});
  return run_transnet(g, stack, p.mask_net, cfg.leaky_slope, false);
}

template <typename T>
Var<T> propagate_mask(Graph<T>& g, Var<T> mask, i64 level, const BoundGenerator<T>& p,
                      const GeneratorConfig& cfg) {
  if (level < 0 || level > cfg.levels - 2) {
    throw ValueError(cat("propagate_mask: level ", level, " out of range for L = ", cfg.levels));
  }
  Var<T> up = bilinear_up2(g, mask);
  const auto& ft = p.finetune[static_cast<std::size_t>(level)];
  if (!cfg.finetune_on(level) || !ft) return up;
  const ConvSpec three{1, 1, PadMode::Reflect};
  Var<T> t = conv2d(g, up, ft->conv1.w, ft->conv1.b, three);
  t = leaky_relu(g, t, static_cast<T>(cfg.leaky_slope));
  t = conv2d(g, t, ft->conv2.w, ft->conv2.b, three);
  return add(g, up, t);
}

template <typename T>
Var<T> refine_level(Graph<T>& g, Var<T> high, Var<T> mask) {
  return broadcast_mul_mask(g, high, mask);
}

template <typename T>
GeneratorTrace<T> generator_forward(Graph<T>& g, Var<T> img, const BoundGenerator<T>& p,
                                    const GeneratorConfig& cfg, i64 orig_h, i64 orig_w,
                                    StageTimes* timing) {
  cfg.validate();
  const i64 levels = cfg.levels;
  GeneratorTrace<T> trace;

  auto t0 = Clock::now();
  trace.input_pyramid = decompose(g, img, levels, orig_h, orig_w);
  if (timing) timing->decompose_s += seconds_since(t0);

  t0 = Clock::now();
  trace.low_translated = translate_low(g, trace.input_pyramid.low, p, cfg);
  if (timing) timing->low_s += seconds_since(t0);

  t0 = Clock::now();
  trace.masks.assign(static_cast<std::size_t>(levels), Var<T>{});
  trace.refined_highs.assign(static_cast<std::size_t>(levels), Var<T>{});
  if (cfg.refine_high) {
    Var<T> mask = compute_base_mask(g, trace.input_pyramid.highs[static_cast<std::size_t>(levels - 1)],
                                    trace.input_pyramid.low, trace.low_translated, p, cfg);
    trace.masks[static_cast<std::size_t>(levels - 1)] = mask;
    trace.refined_highs[static_cast<std::size_t>(levels - 1)] =
        refine_level(g, trace.input_pyramid.highs[static_cast<std::size_t>(levels - 1)], mask);
    for (i64 l = levels - 2; l >= 0; --l) {
      mask = propagate_mask(g, mask, l, p, cfg);
      trace.masks[static_cast<std::size_t>(l)] = mask;
      trace.refined_highs[static_cast<std::size_t>(l)] =
          refine_level(g, trace.input_pyramid.highs[static_cast<std::size_t>(l)], mask);
    }
  } else {
    trace.refined_highs = trace.input_pyramid.highs;
  }
  if (timing) timing->mask_s += seconds_since(t0);

  t0 = Clock::now();
  PyramidVars<T> out_pyr;
  out_pyr.highs = trace.refined_highs;
  out_pyr.low = trace.low_translated;
  out_pyr.orig_h = trace.input_pyramid.orig_h;
  out_pyr.orig_w = trace.input_pyramid.orig_w;
  trace.out = reconstruct(g, out_pyr);
  if (timing) timing->reconstruct_s += seconds_since(t0);
  return trace;
}

template <typename T>
TranslateOutput<T> translate_image(const Tensor<T>& img, const GeneratorParams<T>& params,
                                   const GeneratorConfig& cfg, StageTimes* timing,
                                   bool keep_trace) {
  Padded<T> padded = pad_to_multiple(img, i64(1) << cfg.levels);
  Graph<T> g;
  Var<T> in = g.leaf(std::move(padded.img));
  BoundGenerator<T> bound = bind(g, params, false);
  GeneratorTrace<T> trace =
      generator_forward(g, in, bound, cfg, padded.orig_h, padded.orig_w, timing);
  TranslateOutput<T> out;
  out.image = g.value(trace.out);
  if (keep_trace) {
    out.low_translated = g.value(trace.low_translated);
    for (const auto& h : trace.input_pyramid.highs) out.input_pyramid.highs.push_back(g.value(h));
    out.input_pyramid.low = g.value(trace.input_pyramid.low);
    out.input_pyramid.orig_h = trace.input_pyramid.orig_h;
    out.input_pyramid.orig_w = trace.input_pyramid.orig_w;
    for (const auto& m : trace.masks) {
      if (m.valid()) out.masks.push_back(g.value(m));
    }
    for (const auto& r : trace.refined_highs) out.refined_highs.push_back(g.value(r));
  }
  return out;
}

// -------- discriminator --------

void check_discriminator_input(i64 h, i64 w, const DiscriminatorConfig& cfg) {
  const i64 pool = i64(1) << (cfg.scales - 1);
  if (h % pool != 0 || w % pool != 0) {
    throw ShapeError(cat("discriminator: input ", h, "x", w, " must be divisible by ", pool,
                         " for ", cfg.scales, " scales"));
  }
  // Four stride-2 convs; instance norm after layers 2-4 needs >= 2 pixels.
  auto chain_ok = [](i64 n) {
    for (int layer = 0; layer < 4; ++layer) n = (n - 2) / 2 + 1;
    return n >= 2;
  };
  const i64 hc = h / pool, wc = w / pool;
  if (!chain_ok(hc) || !chain_ok(wc)) {
    throw ShapeError(cat("discriminator: input ", h, "x", w, " too small; the coarsest of ",
                         cfg.scales, " scales sees ", hc, "x", wc,
                         " and needs at least 32x32 (input >= ", 32 * pool, "x", 32 * pool, ")"));
  }
}

template <typename T>
std::vector<Var<T>> discriminator_forward(Graph<T>& g, Var<T> img, const BoundDiscriminator<T>& p,
                                          const DiscriminatorConfig& cfg) {
  cfg.validate();
  if (static_cast<i64>(p.scales.size()) != cfg.scales) {
    throw ShapeError(cat("discriminator: params have ", p.scales.size(), " scales, config wants ",
                         cfg.scales));
  }
  const Shape s = g.value(img).shape;
  check_discriminator_input(s.h, s.w, cfg);

  const ConvSpec down{2, 1, PadMode::Reflect};
  const ConvSpec same{1, 1, PadMode::Reflect};
  const T slope = static_cast<T>(cfg.leaky_slope);

  std::vector<Var<T>> maps;
  Var<T> scale_in = img;
  for (i64 sc = 0; sc < cfg.scales; ++sc) {
    if (sc > 0) scale_in = avg_pool2(g, scale_in);
    const auto& sp = p.scales[static_cast<std::size_t>(sc)];
    Var<T> x = scale_in;
    for (int layer = 0; layer < 4; ++layer) {
      x = conv2d(g, x, sp.convs[static_cast<std::size_t>(layer)].w,
                 sp.convs[static_cast<std::size_t>(layer)].b, down);
      const auto& norm = sp.norms[static_cast<std::size_t>(layer)];
      if (norm) x = instance_norm(g, x, norm->gamma, norm->beta, static_cast<T>(kInstanceNormEps));
      x = leaky_relu(g, x, slope);
    }
    maps.push_back(conv2d(g, x, sp.final.w, sp.final.b, same));
  }
  return maps;
}

// -------- explicit instantiations --------

#define LPTN_INSTANTIATE_NET(T)                                                                  \
  template GeneratorParams<T> init_generator<T>(const GeneratorConfig&, Rng&);                   \
  template GeneratorParams<T> identity_generator<T>(const GeneratorConfig&);                     \
  template DiscriminatorParams<T> init_discriminator<T>(const DiscriminatorConfig&, Rng&);       \
  template Var<T> translate_low<T>(Graph<T>&, Var<T>, const BoundGenerator<T>&,                  \
                                   const GeneratorConfig&);                                      \
  template Var<T> compute_base_mask<T>(Graph<T>&, Var<T>, Var<T>, Var<T>,                        \
                                       const BoundGenerator<T>&, const GeneratorConfig&);        \
  template Var<T> propagate_mask<T>(Graph<T>&, Var<T>, i64, const BoundGenerator<T>&,            \
                                    const GeneratorConfig&);                                     \
  template Var<T> refine_level<T>(Graph<T>&, Var<T>, Var<T>);                                    \
  template GeneratorTrace<T> generator_forward<T>(Graph<T>&, Var<T>, const BoundGenerator<T>&,   \
                                                  const GeneratorConfig&, i64, i64, StageTimes*);\
  template TranslateOutput<T> translate_image<T>(const Tensor<T>&, const GeneratorParams<T>&,    \
                                                 const GeneratorConfig&, StageTimes*, bool);     \
  template std::vector<Var<T>> discriminator_forward<T>(Graph<T>&, Var<T>,                       \
                                                        const BoundDiscriminator<T>&,            \
                                                        const DiscriminatorConfig&);

LPTN_INSTANTIATE_NET(float)
LPTN_INSTANTIATE_NET(double)

#undef LPTN_INSTANTIATE_NET

template GeneratorParams<double> cast_params<double, float>(const GeneratorParams<float>&);
template GeneratorParams<float> cast_params<float, double>(const GeneratorParams<double>&);
template DiscriminatorParams<double> cast_params<double, float>(const DiscriminatorParams<float>&);
template DiscriminatorParams<float> cast_params<float, double>(const DiscriminatorParams<double>&);

}  // namespace lptn

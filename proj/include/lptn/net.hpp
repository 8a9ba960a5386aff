#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "lptn/pyramid.hpp"

namespace lptn {

inline constexpr float kInstanceNormEps = 1e-5f;

// -------- configuration --------

struct GeneratorConfig {
  i64 levels = 3;
  i64 image_channels = 3;
  i64 low_channels = 64;
  i64 mask_channels = 16;
  i64 num_res_blocks = 5;
  float leaky_slope = 0.2f;
  bool use_instance_norm = true;
  bool refine_high = true;
  std::vector<bool> finetune_enabled;  // per level l = 0 .. levels-2; empty means all on

  void validate() const;
  bool finetune_on(i64 level) const {
    if (finetune_enabled.empty()) return true;
    return finetune_enabled[static_cast<std::size_t>(level)];
  }
  bool operator==(const GeneratorConfig&) const = default;
};

struct DiscriminatorConfig {
  i64 base_channels = 64;  // channel ladder: base, 2x, 4x, 8x
  i64 scales = 3;
  float leaky_slope = 0.2f;

  void validate() const;
  bool operator==(const DiscriminatorConfig&) const = default;
};

// -------- parameter structures --------
//
// The slot type S is either Tensor<T> (stored weights) or Var<T> (weights
// bound into a graph for one forward pass). A missing optional slot (bias of
// a norm-followed conv, disabled finetune block) is an empty tensor / invalid
// var.

template <typename T>
inline bool slot_present(const Tensor<T>& t) {
  return !t.empty();
}
template <typename T>
inline bool slot_present(const Var<T>& v) {
  return v.valid();
}

template <class S>
struct ConvP {
  S w;
  S b;  // optional
};

template <class S>
struct NormP {
  S gamma;
  S beta;
};

template <class S>
struct ResBlockP {
  ConvP<S> conv1, conv2;
  std::optional<NormP<S>> norm1, norm2;
};

template <class S>
struct TransNetP {
  ConvP<S> expand;                 // 1x1, widens channels
  std::vector<ResBlockP<S>> blocks;
  ConvP<S> reduce;                 // 3x3, back to output channels
};

template <class S>
struct FinetuneP {
  ConvP<S> conv1, conv2;
};

template <class S>
struct GenP {
  TransNetP<S> low_net;
  TransNetP<S> mask_net;
  std::vector<std::optional<FinetuneP<S>>> finetune;  // index l = 0 .. levels-2
};

template <class S>
struct DiscScaleP {
  std::array<ConvP<S>, 4> convs;
  std::array<std::optional<NormP<S>>, 4> norms;  // norms[0] unused
  ConvP<S> final;
};

template <class S>
struct DiscP {
  std::vector<DiscScaleP<S>> scales;
};

template <typename T>
using GeneratorParams = GenP<Tensor<T>>;
template <typename T>
using BoundGenerator = GenP<Var<T>>;
template <typename T>
using DiscriminatorParams = DiscP<Tensor<T>>;
template <typename T>
using BoundDiscriminator = DiscP<Var<T>>;

// -------- structural visitors --------

template <class PS, class F>
void visit_conv(PS& p, const std::string& prefix, F&& f) {
  f(prefix + ".weight", p.w);
  if (slot_present(p.b)) f(prefix + ".bias", p.b);
}

template <class PS, class F>
void visit_norm(PS& p, const std::string& prefix, F&& f) {
  f(prefix + ".gamma", p.gamma);
  f(prefix + ".beta", p.beta);
}

template <class PS, class F>
void visit_transnet(PS& net, const std::string& prefix, const char* reduce_label, F&& f) {
  visit_conv(net.expand, prefix + ".expand", f);
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const std::string bp = cat(prefix, ".res_blocks.", i);
    visit_conv(net.blocks[i].conv1, bp + ".conv1", f);
    if (net.blocks[i].norm1) visit_norm(*net.blocks[i].norm1, bp + ".norm1", f);
    visit_conv(net.blocks[i].conv2, bp + ".conv2", f);
    if (net.blocks[i].norm2) visit_norm(*net.blocks[i].norm2, bp + ".norm2", f);
  }
  visit_conv(net.reduce, prefix + "." + reduce_label, f);
}

// Calls f(name, slot&) for every present slot, in a fixed order shared by
// checkpoints, Adam state and gradient collection.
template <class GP, class F>
void visit_generator(GP& p, F&& f) {
  visit_transnet(p.low_net, "low_net", "reduce", f);
  visit_transnet(p.mask_net, "mask_net", "to_mask", f);
  for (std::size_t l = 0; l < p.finetune.size(); ++l) {
    if (!p.finetune[l]) continue;
    visit_conv(p.finetune[l]->conv1, cat("finetune_blocks.", l, ".conv1"), f);
    visit_conv(p.finetune[l]->conv2, cat("finetune_blocks.", l, ".conv2"), f);
  }
}

template <class DP, class F>
void visit_discriminator(DP& p, F&& f) {
  for (std::size_t s = 0; s < p.scales.size(); ++s) {
    const std::string sp = cat("disc.scale", s);
    for (std::size_t i = 0; i < 4; ++i) {
      visit_conv(p.scales[s].convs[i], cat(sp, ".conv", i + 1), f);
      if (p.scales[s].norms[i]) visit_norm(*p.scales[s].norms[i], cat(sp, ".norm", i + 1), f);
    }
    visit_conv(p.scales[s].final, sp + ".final", f);
  }
}

// -------- structural map (rebinds slots, e.g. Tensor -> Var) --------

template <class B, class PS, class F>
auto map_conv(PS& p, F&& f) {
  ConvP<B> out;
  out.w = f(p.w);
  if (slot_present(p.b)) out.b = f(p.b);
  return out;
}

template <class B, class PS, class F>
auto map_norm(PS& p, F&& f) {
  return NormP<B>{f(p.gamma), f(p.beta)};
}

template <class B, class PS, class F>
auto map_transnet(PS& net, F&& f) {
  TransNetP<B> out;
  out.expand = map_conv<B>(net.expand, f);
  for (auto& blk : net.blocks) {
    ResBlockP<B> ob;
    ob.conv1 = map_conv<B>(blk.conv1, f);
    ob.conv2 = map_conv<B>(blk.conv2, f);
    if (blk.norm1) ob.norm1 = map_norm<B>(*blk.norm1, f);
    if (blk.norm2) ob.norm2 = map_norm<B>(*blk.norm2, f);
    out.blocks.push_back(std::move(ob));
  }
  out.reduce = map_conv<B>(net.reduce, f);
  return out;
}

template <class B, class GP, class F>
auto map_generator(GP& p, F&& f) {
  GenP<B> out;
  out.low_net = map_transnet<B>(p.low_net, f);
  out.mask_net = map_transnet<B>(p.mask_net, f);
  for (auto& ft : p.finetune) {
    if (ft) {
      out.finetune.push_back(FinetuneP<B>{map_conv<B>(ft->conv1, f), map_conv<B>(ft->conv2, f)});
    } else {
      out.finetune.push_back(std::nullopt);
    }
  }
  return out;
}

template <class B, class DP, class F>
auto map_discriminator(DP& p, F&& f) {
  DiscP<B> out;
  for (auto& sc : p.scales) {
    DiscScaleP<B> os;
    for (std::size_t i = 0; i < 4; ++i) {
      os.convs[i] = map_conv<B>(sc.convs[i], f);
      if (sc.norms[i]) os.norms[i] = map_norm<B>(*sc.norms[i], f);
    }
    os.final = map_conv<B>(sc.final, f);
    out.scales.push_back(std::move(os));
  }
  return out;
}

template <typename T>
BoundGenerator<T> bind(Graph<T>& g, const GeneratorParams<T>& p, bool requires_grad) {
  return map_generator<Var<T>>(p, [&](const Tensor<T>& t) { return g.leaf(t, requires_grad); });
}

template <typename T>
BoundDiscriminator<T> bind(Graph<T>& g, const DiscriminatorParams<T>& p, bool requires_grad) {
  return map_discriminator<Var<T>>(p, [&](const Tensor<T>& t) { return g.leaf(t, requires_grad); });
}

template <typename To, typename From>
GeneratorParams<To> cast_params(const GeneratorParams<From>& p) {
  return map_generator<Tensor<To>>(p, [](const Tensor<From>& t) { return cast<To>(t); });
}

template <typename To, typename From>
DiscriminatorParams<To> cast_params(const DiscriminatorParams<From>& p) {
  return map_discriminator<Tensor<To>>(p, [](const Tensor<From>& t) { return cast<To>(t); });
}

// -------- construction --------

template <typename T>
GeneratorParams<T> init_generator(const GeneratorConfig& cfg, Rng& rng);
// Exact identity map at the start: zero residual branches, unit masks,
// pass-through finetune blocks (modulo the tanh on the low band).
template <typename T>
GeneratorParams<T> identity_generator(const GeneratorConfig& cfg);
template <typename T>
DiscriminatorParams<T> init_discriminator(const DiscriminatorConfig& cfg, Rng& rng);

i64 count_params(const GeneratorParams<float>& p);
i64 count_params(const DiscriminatorParams<float>& p);

// -------- forward passes --------

struct StageTimes {
  double decompose_s = 0.0;
  double low_s = 0.0;
  double mask_s = 0.0;
  double reconstruct_s = 0.0;
  double total() const { return decompose_s + low_s + mask_s + reconstruct_s; }
};

template <typename T>
Var<T> translate_low(Graph<T>& g, Var<T> low, const BoundGenerator<T>& p,
                     const GeneratorConfig& cfg);
template <typename T>
Var<T> compute_base_mask(Graph<T>& g, Var<T> h_top, Var<T> low, Var<T> low_translated,
                         const BoundGenerator<T>& p, const GeneratorConfig& cfg);
template <typename T>
Var<T> propagate_mask(Graph<T>& g, Var<T> mask, i64 level, const BoundGenerator<T>& p,
                      const GeneratorConfig& cfg);
template <typename T>
Var<T> refine_level(Graph<T>& g, Var<T> high, Var<T> mask);

template <typename T>
struct GeneratorTrace {
  Var<T> out;                    // translated image, cropped to original size
  PyramidVars<T> input_pyramid;
  Var<T> low_translated;
  std::vector<Var<T>> masks;          // per level; invalid when refine_high is off
  std::vector<Var<T>> refined_highs;  // bands used in the reconstruction
};

// Full pipeline on an already padded image (H, W divisible by 2^levels).
// orig_h/orig_w give the crop applied after reconstruction (0 = no crop).
template <typename T>
GeneratorTrace<T> generator_forward(Graph<T>& g, Var<T> img, const BoundGenerator<T>& p,
                                    const GeneratorConfig& cfg, i64 orig_h = 0, i64 orig_w = 0,
                                    StageTimes* timing = nullptr);

// Convenience single-image inference: pads, runs the pipeline without
// gradients and returns the cropped result.
template <typename T>
struct TranslateOutput {
  Tensor<T> image;
  LaplacianPyramid<T> input_pyramid;
  Tensor<T> low_translated;
  std::vector<Tensor<T>> masks;
  std::vector<Tensor<T>> refined_highs;
};

template <typename T>
TranslateOutput<T> translate_image(const Tensor<T>& img, const GeneratorParams<T>& params,
                                   const GeneratorConfig& cfg, StageTimes* timing = nullptr,
                                   bool keep_trace = false);

// Requires H, W divisible by 2^(scales-1) and at least 32x32 at the coarsest
// scale (instance norm needs 2 pixels after the stride-2 ladder).
template <typename T>
std::vector<Var<T>> discriminator_forward(Graph<T>& g, Var<T> img, const BoundDiscriminator<T>& p,
                                          const DiscriminatorConfig& cfg);

void check_discriminator_input(i64 h, i64 w, const DiscriminatorConfig& cfg);

}  // namespace lptn

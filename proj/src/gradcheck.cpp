#include "lptn/gradcheck.hpp"

#include "lptn/net.hpp"
#include "lptn/train.hpp"

namespace lptn {

namespace {

Tensor<float> rand_t(Shape s, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  return uniform_tensor<float>(s, rng, lo, hi);
}

// uniform magnitude in [0.25, 1] with random sign, away from the leaky kink
Tensor<float> rand_off_zero(Shape s, Rng& rng) {
  Tensor<float> t(s);
  for (auto& v : t.data) {
    const float mag = rng.uniform(0.25f, 1.0f);
    v = rng.uniform(-1.0f, 1.0f) < 0.0f ? -mag : mag;
  }
  return t;
}

// Rebuilds a bound parameter set from a flat var list in visit order.
template <typename T, class Proto>
GenP<Var<T>> generator_from_vars(const Proto& proto, const std::vector<Var<T>>& vars,
                                 std::size_t start) {
  std::size_t idx = start;
  return map_generator<Var<T>>(proto, [&](const Tensor<float>&) { return vars[idx++]; });
}

template <typename T, class Proto>
DiscP<Var<T>> discriminator_from_vars(const Proto& proto, const std::vector<Var<T>>& vars,
                                      std::size_t start) {
  std::size_t idx = start;
  return map_discriminator<Var<T>>(proto, [&](const Tensor<float>&) { return vars[idx++]; });
}

template <class Params, class VisitF>
void push_param_leaves(std::vector<LeafSpec>& leaves, const Params& params, VisitF&& visit_fn) {
  visit_fn(const_cast<Params&>(params),
           [&](const std::string&, const Tensor<float>& t) { leaves.push_back({t, true}); });
}

}  // namespace

GradCheckReport run_gradcheck_suite(u64 seed, bool thorough) {
  GradCheckReport report;
  Rng rng(seed);
  CheckOpts op_opts;
  op_opts.max_coords = thorough ? 48 : 16;
  op_opts.seed = seed;
  CheckOpts model_opts;
  model_opts.max_coords = thorough ? 8 : 3;
  model_opts.seed = seed;

  auto run = [&](const std::string& name, std::vector<LeafSpec> leaves, auto&& builder,
                 const CheckOpts& opts) {
    report.cases.push_back(check_gradients(name, leaves, builder, opts));
  };

  // ---- convolution family ----
  {
    Rng r = rng.child(1);
    std::vector<LeafSpec> leaves{{rand_t(Shape{2, 3, 6, 7}, r), true},
                                 {rand_t(Shape{4, 3, 3, 3}, r), true},
                                 {rand_t(Shape{1, 4, 1, 1}, r), true}};
    run("conv2d_s1_zero", leaves,
        [](auto& g, const auto& v) {
          return mean_all(g, conv2d(g, v[0], v[1], v[2], ConvSpec{1, 1, PadMode::Zero}));
        },
        op_opts);
    run("conv2d_s1_reflect", leaves,
        [](auto& g, const auto& v) {
          return mean_all(g, conv2d(g, v[0], v[1], v[2], ConvSpec{1, 1, PadMode::Reflect}));
        },
        op_opts);
    run("conv2d_s2_zero", leaves,
        [](auto& g, const auto& v) {
          return mean_all(g, conv2d(g, v[0], v[1], v[2], ConvSpec{2, 1, PadMode::Zero}));
        },
        op_opts);
  }
  {
    Rng r = rng.child(2);
    std::vector<LeafSpec> leaves{{rand_t(Shape{1, 3, 12, 10}, r), true},
                                 {rand_t(Shape{5, 3, 4, 4}, r), true},
                                 {rand_t(Shape{1, 5, 1, 1}, r), true}};
    run("conv2d_k4_s2_reflect", leaves,
        [](auto& g, const auto& v) {
          return mean_all(g, conv2d(g, v[0], v[1], v[2], ConvSpec{2, 1, PadMode::Reflect}));
        },
        op_opts);
  }
  {
    Rng r = rng.child(3);
    std::vector<LeafSpec> leaves{{rand_t(Shape{2, 4, 5, 6}, r), true},
                                 {rand_t(Shape{4, 3, 3, 3}, r), true}};
    run("conv2d_transpose_s1", leaves,
        [](auto& g, const auto& v) {
          return mean_all(g, conv2d_transpose(g, v[0], v[1], ConvSpec{1, 0, PadMode::Zero}));
        },
        op_opts);
    run("conv2d_transpose_s2", leaves,
        [](auto& g, const auto& v) {
          return mean_all(g, conv2d_transpose(g, v[0], v[1], ConvSpec{2, 0, PadMode::Zero}));
        },
        op_opts);
  }

  // ---- resampling ----
  {
    Rng r = rng.child(4);
    std::vector<LeafSpec> leaves{{rand_t(Shape{2, 3, 6, 8}, r), true}};
    run("bilinear_up2", leaves,
        [](auto& g, const auto& v) { return mean_all(g, bilinear_up2(g, v[0])); }, op_opts);
    run("bilinear_down2", leaves,
        [](auto& g, const auto& v) { return mean_all(g, bilinear_down2(g, v[0])); }, op_opts);
    run("avg_pool2", leaves,
        [](auto& g, const auto& v) { return mean_all(g, avg_pool2(g, v[0])); }, op_opts);
    run("pyr_down", leaves,
        [](auto& g, const auto& v) { return mean_all(g, pyr_down(g, v[0])); }, op_opts);
    run("pyr_up", leaves,
        [](auto& g, const auto& v) { return mean_all(g, pyr_up(g, v[0])); }, op_opts);
  }

  // ---- pointwise and normalization ----
  {
    Rng r = rng.child(5);
    std::vector<LeafSpec> leaves{{rand_off_zero(Shape{2, 3, 5, 4}, r), true}};
    run("leaky_relu", leaves,
        [](auto& g, const auto& v) {
          using T = std::remove_cvref_t<decltype(g.value(v[0]).data[0])>;
          return mean_all(g, leaky_relu(g, v[0], T(0.2)));
        },
        op_opts);
    run("tanh", leaves, [](auto& g, const auto& v) { return mean_all(g, tanh(g, v[0])); },
        op_opts);
  }
  {
    Rng r = rng.child(6);
    std::vector<LeafSpec> leaves{{rand_t(Shape{2, 3, 5, 6}, r), true},
                                 {rand_off_zero(Shape{1, 3, 1, 1}, r), true},
                                 {rand_t(Shape{1, 3, 1, 1}, r), true}};
    run("instance_norm", leaves,
        [](auto& g, const auto& v) {
          using T = std::remove_cvref_t<decltype(g.value(v[0]).data[0])>;
          return mean_all(g, instance_norm(g, v[0], v[1], v[2], T(1e-5)));
        },
        op_opts);
  }

  // ---- elementwise and layout ----
  {
    Rng r = rng.child(7);
    std::vector<LeafSpec> leaves{{rand_t(Shape{2, 3, 4, 5}, r), true},
                                 {rand_t(Shape{2, 3, 4, 5}, r), true}};
    run("add", leaves,
        [](auto& g, const auto& v) { return mean_all(g, add(g, v[0], v[1])); }, op_opts);
    run("sub", leaves,
        [](auto& g, const auto& v) { return mean_all(g, sub(g, v[0], v[1])); }, op_opts);
    run("mul", leaves,
        [](auto& g, const auto& v) { return mean_all(g, mul(g, v[0], v[1])); }, op_opts);
    run("mul_self", leaves,
        [](auto& g, const auto& v) { return mean_all(g, mul(g, v[0], v[0])); }, op_opts);
    run("scalar_ops", leaves,
        [](auto& g, const auto& v) {
          using T = std::remove_cvref_t<decltype(g.value(v[0]).data[0])>;
          return sum_all(g, mul_scalar(g, add_scalar(g, v[0], T(0.5)), T(1.5)));
        },
        op_opts);
    run("concat_channels", leaves,
        [](auto& g, const auto& v) {
          using VarT = std::remove_cv_t<std::remove_reference_t<decltype(v[0])>>;
          return mean_all(g, concat_channels(g, std::vector<VarT>{v[0], v[1]}));
        },
        op_opts);
    run("crop_tl", leaves,
        [](auto& g, const auto& v) { return mean_all(g, crop_tl(g, v[0], 3, 3)); }, op_opts);
    run("pad_reflect_br", leaves,
        [](auto& g, const auto& v) { return mean_all(g, pad_reflect_br(g, v[0], 2, 3)); },
        op_opts);
  }
  {
    Rng r = rng.child(8);
    std::vector<LeafSpec> leaves{{rand_t(Shape{2, 3, 4, 5}, r), true},
                                 {rand_t(Shape{2, 1, 4, 5}, r), true}};
    run("broadcast_mul_mask", leaves,
        [](auto& g, const auto& v) { return mean_all(g, broadcast_mul_mask(g, v[0], v[1])); },
        op_opts);
  }

  // ---- pyramid round trip ----
  {
    Rng r = rng.child(9);
    std::vector<LeafSpec> leaves{{rand_t(Shape{1, 3, 16, 16}, r), true}};
    run("pyramid_reconstruct", leaves,
        [](auto& g, const auto& v) {
          auto pyr = decompose(g, v[0], 2, 0, 0);
          return mean_all(g, reconstruct(g, pyr));
        },
        op_opts);
  }

  // ---- full generator, reconstruction loss, 32x32 L=3 ----
  {
    GeneratorConfig cfg;  // default widths
    Rng r = rng.child(10);
    GeneratorParams<float> params = init_generator<float>(cfg, r);
    std::vector<LeafSpec> leaves{{rand_t(Shape{1, 3, 32, 32}, r, -0.9f, 0.9f), true}};
    push_param_leaves(leaves, params, [](auto& p, auto&& f) { visit_generator(p, f); });
    run("generator_recon_32x32_L3", leaves,
        [&params, &cfg](auto& g, const auto& v) {
          auto bound = generator_from_vars(params, v, 1);
          auto trace = generator_forward(g, v[0], bound, cfg);
          return recon_loss(g, trace.out, v[0]);
        },
        model_opts);
  }

  // ---- adversarial path; 128x128 is the smallest multiscale input, width-
  // reduced nets keep the finite-difference replay affordable ----
  {
    GeneratorConfig gcfg;
    gcfg.low_channels = 8;
    gcfg.mask_channels = 4;
    gcfg.num_res_blocks = 2;
    DiscriminatorConfig dcfg;
    dcfg.base_channels = 8;
    Rng r = rng.child(11);
    GeneratorParams<float> gparams = init_generator<float>(gcfg, r);
    DiscriminatorParams<float> dparams = init_discriminator<float>(dcfg, r);
    const std::size_t gcount = static_cast<std::size_t>([&] {
      i64 n = 0;
      visit_generator(gparams, [&](const std::string&, const Tensor<float>&) { ++n; });
      return n;
    }());

    std::vector<LeafSpec> leaves{{rand_t(Shape{1, 3, 128, 128}, r, -0.9f, 0.9f), false}};
    push_param_leaves(leaves, gparams, [](auto& p, auto&& f) { visit_generator(p, f); });
    push_param_leaves(leaves, dparams, [](auto& p, auto&& f) { visit_discriminator(p, f); });
    run("generator_total_loss_128", leaves,
        [&, gcount](auto& g, const auto& v) {
          using T = std::remove_cvref_t<decltype(g.value(v[0]).data[0])>;
          auto bg = generator_from_vars(gparams, v, 1);
          auto bd = discriminator_from_vars(dparams, v, 1 + gcount);
          auto trace = generator_forward(g, v[0], bg, gcfg);
          auto maps = discriminator_forward(g, trace.out, bd, dcfg);
          auto adv = g_adv_loss(g, maps);
          auto rec = recon_loss(g, trace.out, v[0]);
          return total_g_loss(g, rec, adv, T(10), T(1));
        },
        model_opts);

    std::vector<LeafSpec> dleaves{{rand_t(Shape{1, 3, 128, 128}, r, -0.9f, 0.9f), false},
                                  {rand_t(Shape{1, 3, 128, 128}, r, -0.9f, 0.9f), false}};
    push_param_leaves(dleaves, dparams, [](auto& p, auto&& f) { visit_discriminator(p, f); });
    run("discriminator_loss_128", dleaves,
        [&](auto& g, const auto& v) {
          auto bd = discriminator_from_vars(dparams, v, 2);
          auto rm = discriminator_forward(g, v[0], bd, dcfg);
          auto fm = discriminator_forward(g, v[1], bd, dcfg);
          return d_adv_loss(g, rm, fm);
        },
        model_opts);
  }

  return report;
}

std::string format_report(const GradCheckReport& report) {
  std::ostringstream os;
  os << "op                              max_rel_err   tolerance   status\n";
  for (const auto& c : report.cases) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-30s  %11.3e  %10.1e   %s\n", c.name.c_str(),
                  c.max_rel_err, c.tolerance, c.pass ? "ok" : "FAIL");
    os << line;
  }
  os << (report.all_pass() ? "all gradient checks passed\n" : "GRADIENT CHECK FAILURES\n");
  return os.str();
}

}  // namespace lptn

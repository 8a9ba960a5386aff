#include "lptn/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lptn/io.hpp"

namespace lptn {

// -------- losses --------

template <typename T>
Var<T> recon_loss(Graph<T>& g, Var<T> a, Var<T> b) {
  Var<T> d = sub(g, a, b);
  return mean_all(g, mul(g, d, d));
}

namespace {

template <typename T>
Var<T> mean_over_scales(Graph<T>& g, std::vector<Var<T>> terms) {
  Var<T> acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(g, acc, terms[i]);
  return mul_scalar(g, acc, T(1) / static_cast<T>(terms.size()));
}

}  // namespace

template <typename T>
Var<T> g_adv_loss(Graph<T>& g, const std::vector<Var<T>>& fake_maps) {
  if (fake_maps.empty()) throw ValueError("g_adv_loss: no patch maps");
  std::vector<Var<T>> terms;
  for (Var<T> m : fake_maps) {
    Var<T> e = add_scalar(g, m, T(-1));
    terms.push_back(mean_all(g, mul(g, e, e)));
  }
  return mean_over_scales(g, std::move(terms));
}

template <typename T>
Var<T> d_adv_loss(Graph<T>& g, const std::vector<Var<T>>& real_maps,
                  const std::vector<Var<T>>& fake_maps) {
  if (real_maps.empty() || real_maps.size() != fake_maps.size()) {
    throw ValueError("d_adv_loss: mismatched scale counts");
  }
  std::vector<Var<T>> real_terms, fake_terms;
  for (Var<T> m : real_maps) {
    Var<T> e = add_scalar(g, m, T(-1));
    real_terms.push_back(mean_all(g, mul(g, e, e)));
  }
  for (Var<T> m : fake_maps) fake_terms.push_back(mean_all(g, mul(g, m, m)));
  return add(g, mean_over_scales(g, std::move(real_terms)),
             mean_over_scales(g, std::move(fake_terms)));
}

template <typename T>
Var<T> total_g_loss(Graph<T>& g, Var<T> recon, Var<T> adv, T recon_weight, T adv_weight) {
  return add(g, mul_scalar(g, recon, recon_weight), mul_scalar(g, adv, adv_weight));
}

#define LPTN_INSTANTIATE_LOSSES(T)                                                        \
  template Var<T> recon_loss<T>(Graph<T>&, Var<T>, Var<T>);                               \
  template Var<T> g_adv_loss<T>(Graph<T>&, const std::vector<Var<T>>&);                   \
  template Var<T> d_adv_loss<T>(Graph<T>&, const std::vector<Var<T>>&,                    \
                                const std::vector<Var<T>>&);                              \
  template Var<T> total_g_loss<T>(Graph<T>&, Var<T>, Var<T>, T, T);

LPTN_INSTANTIATE_LOSSES(float)
LPTN_INSTANTIATE_LOSSES(double)

#undef LPTN_INSTANTIATE_LOSSES

// -------- optimizer --------

void adam_step(AdamState& state, const AdamConfig& cfg, std::vector<ParamGrad>& grads) {
  for (const auto& pg : grads) {
    if (!pg.grad.all_finite()) {
      throw ValueError(cat("adam_step: non-finite gradient for tensor '", pg.name, "'"));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), t);
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), t);
  for (auto& pg : grads) {
    Tensor<float>& p = *pg.param;
    Tensor<float>& m = state.m[pg.name];
    Tensor<float>& v = state.v[pg.name];
    if (m.empty()) m = Tensor<float>(p.shape);
    if (v.empty()) v = Tensor<float>(p.shape);
    if (!(m.shape == p.shape)) {
      throw ShapeError(cat("adam_step: moment shape ", m.shape.str(), " does not match parameter '",
                           pg.name, "' ", p.shape.str()));
    }
    for (i64 i = 0; i < p.numel(); ++i) {
      const auto s = static_cast<std::size_t>(i);
      const double gv = static_cast<double>(pg.grad.data[s]);
      const double mv = cfg.beta1 * static_cast<double>(m.data[s]) + (1.0 - cfg.beta1) * gv;
      const double vv = cfg.beta2 * static_cast<double>(v.data[s]) + (1.0 - cfg.beta2) * gv * gv;
      m.data[s] = static_cast<float>(mv);
      v.data[s] = static_cast<float>(vv);
      const double mhat = mv / bc1;
      const double vhat = vv / bc2;
      p.data[s] = static_cast<float>(static_cast<double>(p.data[s]) -
                                     cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

namespace {

template <class ParamsT, class BoundT, class VisitF>
std::vector<ParamGrad> collect_impl(ParamsT& params, const BoundT& bound, Graph<float>& g,
                                    VisitF&& visit_fn) {
  std::vector<std::pair<std::string, Tensor<float>*>> slots;
  visit_fn(params, [&](const std::string& name, Tensor<float>& t) { slots.emplace_back(name, &t); });
  std::vector<std::pair<std::string, Var<float>>> vars;
  visit_fn(const_cast<BoundT&>(bound),
           [&](const std::string& name, const Var<float>& v) { vars.emplace_back(name, v); });
  if (slots.size() != vars.size()) throw Error("collect_grads: structure mismatch");
  std::vector<ParamGrad> out;
  out.reserve(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].first != vars[i].first) throw Error("collect_grads: name order mismatch");
    out.push_back(ParamGrad{slots[i].first, slots[i].second, g.grad_or_zero(vars[i].second)});
  }
  return out;
}

}  // namespace

std::vector<ParamGrad> collect_grads(GeneratorParams<float>& params,
                                     const BoundGenerator<float>& bound, Graph<float>& g) {
  return collect_impl(params, bound, g,
                      [](auto& p, auto&& f) { visit_generator(p, f); });
}

std::vector<ParamGrad> collect_grads(DiscriminatorParams<float>& params,
                                     const BoundDiscriminator<float>& bound, Graph<float>& g) {
  return collect_impl(params, bound, g,
                      [](auto& p, auto&& f) { visit_discriminator(p, f); });
}

// -------- synthetic unpaired data --------

float ToneMap::apply(float v, int channel) const {
  const double v01 = (static_cast<double>(v) + 1.0) * 0.5;
  const double clipped = std::min(1.0, std::max(0.0, v01));
  const double mapped = static_cast<double>(gain[static_cast<std::size_t>(channel)]) *
                            std::pow(clipped, static_cast<double>(gamma[static_cast<std::size_t>(channel)])) +
                        static_cast<double>(offset[static_cast<std::size_t>(channel)]);
  return static_cast<float>(mapped * 2.0 - 1.0);
}

Tensor<float> toy_image(const ToyDomainSpec& spec, int domain, i64 index) {
  const i64 s = spec.image_size;
  Rng rng = Rng(spec.seed).child(mix64(static_cast<u64>(domain) * 0x10000000000ULL +
                                       static_cast<u64>(index)));
  Tensor<float> img(Shape{1, 3, s, s});

  std::array<float, 3> base;
  for (auto& b : base) b = rng.uniform(-0.18f, 0.18f);

  struct Wave {
    float fx, fy, phase, amp;
    std::array<float, 3> gain;
  };
  std::array<Wave, 4> waves;
  for (auto& wv : waves) {
    wv.fx = rng.uniform(-3.0f, 3.0f);
    wv.fy = rng.uniform(-3.0f, 3.0f);
    wv.phase = rng.uniform(0.0f, 6.2831853f);
    wv.amp = rng.uniform(0.05f, 0.20f);
    for (auto& gn : wv.gain) gn = rng.uniform(0.35f, 1.0f);
  }
  struct Blob {
    float cx, cy, sigma, amp;
    std::array<float, 3> gain;
  };
  std::array<Blob, 2> blobs;
  for (auto& bl : blobs) {
    bl.cx = rng.uniform(0.15f, 0.85f);
    bl.cy = rng.uniform(0.15f, 0.85f);
    bl.sigma = rng.uniform(0.08f, 0.25f);
    bl.amp = rng.uniform(-0.30f, 0.30f);
    for (auto& gn : bl.gain) gn = rng.uniform(0.4f, 1.0f);
  }

  const double tau = 6.283185307179586;
  for (i64 y = 0; y < s; ++y) {
    const double fy = static_cast<double>(y) / static_cast<double>(s);
    for (i64 x = 0; x < s; ++x) {
      const double fx = static_cast<double>(x) / static_cast<double>(s);
      double shared[4];
      for (std::size_t k = 0; k < waves.size(); ++k) {
        shared[k] = std::sin(tau * (waves[k].fx * fx + waves[k].fy * fy) + waves[k].phase);
      }
      double blob_v[2];
      for (std::size_t k = 0; k < blobs.size(); ++k) {
        const double dx = fx - blobs[k].cx;
        const double dy = fy - blobs[k].cy;
        blob_v[k] = std::exp(-(dx * dx + dy * dy) / (2.0 * blobs[k].sigma * blobs[k].sigma));
      }
      for (int c = 0; c < 3; ++c) {
        double v = base[static_cast<std::size_t>(c)];
        for (std::size_t k = 0; k < waves.size(); ++k) {
          v += waves[k].amp * waves[k].gain[static_cast<std::size_t>(c)] * shared[k];
        }
        for (std::size_t k = 0; k < blobs.size(); ++k) {
          v += blobs[k].amp * blobs[k].gain[static_cast<std::size_t>(c)] * blob_v[k];
        }
        v = std::min(0.8, std::max(-0.8, v));
        if (domain == 1) v = static_cast<double>(spec.tone.apply(static_cast<float>(v), c));
        img.at(0, c, y, x) = static_cast<float>(v);
      }
    }
  }
  return img;
}

std::array<double, 3> toy_domain_mean(const ToyDomainSpec& spec, int domain, i64 sample_count) {
  std::array<double, 3> acc{0.0, 0.0, 0.0};
  const i64 s = spec.image_size;
  for (i64 i = 0; i < sample_count; ++i) {
    Tensor<float> img = toy_image(spec, domain, i);
    for (int c = 0; c < 3; ++c) {
      double m = 0.0;
      const float* p = img.ptr() + c * s * s;
      for (i64 j = 0; j < s * s; ++j) m += static_cast<double>(p[j]);
      acc[static_cast<std::size_t>(c)] += m / static_cast<double>(s * s);
    }
  }
  for (auto& v : acc) v /= static_cast<double>(sample_count);
  return acc;
}

// -------- metrics --------

Metrics eval_metrics(const Tensor<float>& a, const Tensor<float>& b) {
  if (!(a.shape == b.shape)) {
    throw ShapeError(cat("eval_metrics: shape mismatch ", a.shape.str(), " vs ", b.shape.str()));
  }
  Metrics out;

  double se = 0.0;
  for (i64 i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.data[static_cast<std::size_t>(i)]) -
                     static_cast<double>(b.data[static_cast<std::size_t>(i)]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.numel());
  out.psnr = mse <= 0.0 ? 99.0 : std::min(99.0, 10.0 * std::log10(4.0 / mse));

  // SSIM, 11x11 Gaussian window (sigma 1.5), valid region, peak 2.0
  constexpr int win = 11;
  constexpr double sigma = 1.5;
  double kernel[win][win];
  double ksum = 0.0;
  for (int i = 0; i < win; ++i) {
    for (int j = 0; j < win; ++j) {
      const double dy = i - (win - 1) / 2.0;
      const double dx = j - (win - 1) / 2.0;
      kernel[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      ksum += kernel[i][j];
    }
  }
  for (int i = 0; i < win; ++i) {
    for (int j = 0; j < win; ++j) kernel[i][j] /= ksum;
  }
  const double c1 = (0.01 * 2.0) * (0.01 * 2.0);
  const double c2 = (0.03 * 2.0) * (0.03 * 2.0);
  const i64 oh = a.shape.h - win + 1;
  const i64 ow = a.shape.w - win + 1;
  if (oh < 1 || ow < 1) {
    throw ShapeError(cat("eval_metrics: image ", a.shape.str(), " smaller than the 11x11 window"));
  }
  double ssim_acc = 0.0;
  i64 ssim_count = 0;
  for (i64 n = 0; n < a.shape.n; ++n) {
    for (i64 c = 0; c < a.shape.c; ++c) {
      const float* pa = a.ptr() + (n * a.shape.c + c) * a.shape.h * a.shape.w;
      const float* pb = b.ptr() + (n * a.shape.c + c) * a.shape.h * a.shape.w;
      for (i64 y = 0; y < oh; ++y) {
        for (i64 x = 0; x < ow; ++x) {
          double ma = 0.0, mb = 0.0, va = 0.0, vb = 0.0, cov = 0.0;
          for (int i = 0; i < win; ++i) {
            for (int j = 0; j < win; ++j) {
              const double wa = static_cast<double>(pa[(y + i) * a.shape.w + (x + j)]);
              const double wb = static_cast<double>(pb[(y + i) * a.shape.w + (x + j)]);
              const double k = kernel[i][j];
              ma += k * wa;
              mb += k * wb;
              va += k * wa * wa;
              vb += k * wb * wb;
              cov += k * wa * wb;
            }
          }
          va -= ma * ma;
          vb -= mb * mb;
          cov -= ma * mb;
          const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
          const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
          ssim_acc += num / den;
          ++ssim_count;
        }
      }
    }
  }
  out.ssim = ssim_acc / static_cast<double>(ssim_count);
  return out;
}

// -------- training loop --------

namespace {

Tensor<float> stack_batch(const std::vector<Tensor<float>>& imgs) {
  const Shape s0 = imgs[0].shape;
  Tensor<float> out(Shape{static_cast<i64>(imgs.size()), s0.c, s0.h, s0.w});
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    std::copy(imgs[i].data.begin(), imgs[i].data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(i) * s0.numel());
  }
  return out;
}

Tensor<float> random_crop(const Tensor<float>& img, i64 crop, Rng& rng) {
  if (img.shape.h < crop || img.shape.w < crop) {
    throw ValueError(cat("train: image ", img.shape.str(), " smaller than crop ", crop));
  }
  const i64 oy = img.shape.h == crop ? 0 : rng.uniform_int(img.shape.h - crop + 1);
  const i64 ox = img.shape.w == crop ? 0 : rng.uniform_int(img.shape.w - crop + 1);
  Tensor<float> out(Shape{img.shape.n, img.shape.c, crop, crop});
  for (i64 nc = 0; nc < img.shape.n * img.shape.c; ++nc) {
    const float* src = img.ptr() + nc * img.shape.h * img.shape.w;
    float* dst = out.ptr() + nc * crop * crop;
    for (i64 y = 0; y < crop; ++y) {
      std::copy(src + (oy + y) * img.shape.w + ox, src + (oy + y) * img.shape.w + ox + crop,
                dst + y * crop);
    }
  }
  return out;
}

Tensor<float> sample_batch(const DataSource& data, int domain, i64 batch, i64 crop, Rng& rng) {
  std::vector<Tensor<float>> imgs;
  for (i64 i = 0; i < batch; ++i) {
    if (data.is_toy) {
      imgs.push_back(toy_image(data.toy, domain, rng.uniform_int(data.toy.count)));
    } else {
      const auto& pool = domain == 0 ? data.folder_a : data.folder_b;
      const auto& img = pool[static_cast<std::size_t>(rng.uniform_int(static_cast<i64>(pool.size())))];
      imgs.push_back(random_crop(img, crop, rng));
    }
  }
  return stack_batch(imgs);
}

double scalar_of(const Graph<float>& g, Var<float> v) {
  return static_cast<double>(g.value(v).data[0]);
}

}  // namespace

TrainState fresh_train_state(const TrainConfig& cfg) {
  cfg.gen.validate();
  cfg.disc.validate();
  TrainState state;
  state.gcfg = cfg.gen;
  state.dcfg = cfg.disc;
  state.hyper = cfg.hyper;
  Rng init_rng = Rng(cfg.hyper.seed).child(1);
  state.gen = init_generator<float>(cfg.gen, init_rng);
  state.disc = init_discriminator<float>(cfg.disc, init_rng);
  state.rng_state = Rng(cfg.hyper.seed).child(2).state();
  return state;
}

TrainResult train(const TrainConfig& cfg, const DataSource& data) {
  TrainState state = fresh_train_state(cfg);
  return train(cfg, data, state, /*append_csv=*/false);
}

TrainResult train(const TrainConfig& cfg, const DataSource& data, TrainState& state,
                  bool append_csv) {
  namespace fs = std::filesystem;
  const TrainHyper& hp = state.hyper;
  if (!data.is_toy && (data.folder_a.empty() || data.folder_b.empty())) {
    throw ValueError("train: need at least one image per domain");
  }
  const i64 crop = data.is_toy ? data.toy.image_size : hp.crop;
  const bool use_adv = hp.adv_weight != 0.0f;
  if (use_adv) check_discriminator_input(crop, crop, state.dcfg);
  check_levels(crop, crop, state.gcfg.levels);

  fs::create_directories(cfg.out_dir);
  const std::string csv_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
  std::ofstream csv(csv_path, append_csv ? std::ios::app : std::ios::trunc);
  if (!csv) throw IoError(cat("train: cannot open ", csv_path));
  if (!append_csv) csv << "step,loss_g,loss_d,loss_recon,loss_adv,psnr_val\n";

  Rng data_rng = Rng(hp.seed).child(2);
  if (!state.rng_state.empty()) data_rng.set_state(state.rng_state);

  const std::string ckpt_path = (fs::path(cfg.out_dir) / "checkpoint.lptn").string();
  TrainResult result;
  result.csv_path = csv_path;
  result.checkpoint_path = ckpt_path;

  double loss_g = 0.0;
  for (i64 step = state.step + 1; step <= hp.steps; ++step) {
    Tensor<float> batch_a = sample_batch(data, 0, hp.batch, crop, data_rng);
    Tensor<float> batch_b;
    if (use_adv) batch_b = sample_batch(data, 1, hp.batch, crop, data_rng);

    // generator forward (gradients recorded)
    Graphf g1;
    BoundGenerator<float> bg = bind(g1, state.gen, true);
    Varf a_var = g1.leaf(std::move(batch_a));
    GeneratorTrace<float> trace = generator_forward(g1, a_var, bg, state.gcfg);

    double loss_d = 0.0, loss_adv = 0.0;
    if (use_adv) {
      // discriminator step on a detached fake
      Graphf g2;
      BoundDiscriminator<float> bd = bind(g2, state.disc, true);
      Varf real = g2.leaf(std::move(batch_b));
      Varf fake = g2.leaf(g1.value(trace.out));
      auto rm = discriminator_forward(g2, real, bd, state.dcfg);
      auto fm = discriminator_forward(g2, fake, bd, state.dcfg);
      Varf dl = d_adv_loss(g2, rm, fm);
      g2.backward(dl);
      auto dgrads = collect_grads(state.disc, bd, g2);
      adam_step(state.adam_d, hp.adam, dgrads);
      loss_d = scalar_of(g2, dl);
    }

    // generator step against the updated discriminator
    Varf rec = recon_loss(g1, trace.out, a_var);
    Varf total;
    if (use_adv) {
      BoundDiscriminator<float> bd1 = bind(g1, state.disc, false);
      auto fm2 = discriminator_forward(g1, trace.out, bd1, state.dcfg);
      Varf adv = g_adv_loss(g1, fm2);
      total = total_g_loss(g1, rec, adv, hp.recon_weight, hp.adv_weight);
      loss_adv = scalar_of(g1, adv);
    } else {
      total = mul_scalar(g1, rec, hp.recon_weight);
    }
    g1.backward(total);
    auto ggrads = collect_grads(state.gen, bg, g1);
    adam_step(state.adam_g, hp.adam, ggrads);

    loss_g = scalar_of(g1, total);
    const double loss_rec = scalar_of(g1, rec);
    if (!std::isfinite(loss_g) || !std::isfinite(loss_d)) {
      throw ValueError(cat("train: non-finite loss at step ", step,
                           " (last-good checkpoint retained at ", ckpt_path, ")"));
    }

    std::string psnr_field;
    if (data.is_toy && cfg.eval_every > 0 &&
        (step % cfg.eval_every == 0 || step == hp.steps)) {
      double acc = 0.0;
      for (i64 j = 0; j < cfg.eval_count; ++j) {
        Tensor<float> src = toy_image(data.toy, 0, data.toy.count + j);
        Tensor<float> target(src.shape);
        for (i64 c = 0; c < 3; ++c) {
          for (i64 i = 0; i < src.shape.h * src.shape.w; ++i) {
            target.data[static_cast<std::size_t>(c * src.shape.h * src.shape.w + i)] =
                data.toy.tone.apply(src.data[static_cast<std::size_t>(c * src.shape.h * src.shape.w + i)],
                                    static_cast<int>(c));
          }
        }
        TranslateOutput<float> tr = translate_image(src, state.gen, state.gcfg);
        acc += eval_metrics(tr.image, target).psnr;
      }
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", acc / static_cast<double>(cfg.eval_count));
      psnr_field = buf;
    }

    char line[256];
    std::snprintf(line, sizeof(line), "%lld,%.6f,%.6f,%.6f,%.6f,%s\n",
                  static_cast<long long>(step), loss_g, loss_d, loss_rec, loss_adv,
                  psnr_field.c_str());
    csv << line;

    state.step = step;
    if ((cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) || step == hp.steps) {
      state.rng_state = data_rng.state();
      save_checkpoint(state, ckpt_path);
      csv.flush();
    }
    if (!cfg.quiet && step % 10 == 0) {
      std::fprintf(stderr, "step %lld  g %.4f  d %.4f\n", static_cast<long long>(step), loss_g,
                   loss_d);
    }
  }
  state.rng_state = data_rng.state();
  save_checkpoint(state, ckpt_path);
  result.steps = state.step;
  result.final_loss_g = loss_g;
  return result;
}

}  // namespace lptn

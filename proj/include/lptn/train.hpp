#pragma once

#include <map>
#include <string>
#include <vector>

#include "lptn/net.hpp"

namespace lptn {

// -------- losses --------

// Mean squared error over all elements. Mean (not sum) keeps the 10:1 loss
// ratio independent of resolution and batch size.
template <typename T>
Var<T> recon_loss(Graph<T>& g, Var<T> a, Var<T> b);

// Least-squares adversarial objectives, averaged over patches and scales.
// Targets: discriminator sees real as 1 and fake as 0; the generator drives
// its fakes toward 1. The discriminator loss is the sum of its two terms.
template <typename T>
Var<T> g_adv_loss(Graph<T>& g, const std::vector<Var<T>>& fake_maps);
template <typename T>
Var<T> d_adv_loss(Graph<T>& g, const std::vector<Var<T>>& real_maps,
                  const std::vector<Var<T>>& fake_maps);

template <typename T>
Var<T> total_g_loss(Graph<T>& g, Var<T> recon, Var<T> adv, T recon_weight, T adv_weight);

// -------- optimizer --------

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamState {
  std::map<std::string, Tensor<float>> m, v;
  i64 step = 0;
};

struct ParamGrad {
  std::string name;
  Tensor<float>* param = nullptr;
  Tensor<float> grad;
};

// Bias-corrected Adam update. Rejects non-finite gradients, naming the
// offending tensor; a zero gradient leaves the parameter unchanged on the
// first step and only decays the moments afterwards.
void adam_step(AdamState& state, const AdamConfig& cfg, std::vector<ParamGrad>& grads);

std::vector<ParamGrad> collect_grads(GeneratorParams<float>& params,
                                     const BoundGenerator<float>& bound, Graph<float>& g);
std::vector<ParamGrad> collect_grads(DiscriminatorParams<float>& params,
                                     const BoundDiscriminator<float>& bound, Graph<float>& g);

// -------- synthetic unpaired data --------

// Invertible global tone curve in [0,1] space: out = gain * v^gamma + offset.
struct ToneMap {
  std::array<float, 3> gain{0.74f, 0.70f, 0.66f};
  std::array<float, 3> gamma{1.10f, 1.05f, 1.15f};
  std::array<float, 3> offset{-0.02f, -0.04f, -0.03f};

  float apply(float v, int channel) const;  // [-1,1] -> [-1,1]
};

// Desk-scale unpaired domains: A draws smooth sinusoid-plus-blob images,
// B draws independently from the same family and pushes them through the
// tone map.
struct ToyDomainSpec {
  i64 image_size = 128;
  i64 count = 500;
  u64 seed = 77;
  ToneMap tone;
};

Tensor<float> toy_image(const ToyDomainSpec& spec, int domain, i64 index);  // 1x3xSxS
// Per-channel mean over the first sample_count images of a domain.
std::array<double, 3> toy_domain_mean(const ToyDomainSpec& spec, int domain, i64 sample_count);

// -------- metrics --------

struct Metrics {
  double psnr = 0.0;  // dB, peak 2.0 over [-1,1]; capped at 99 for identical inputs
  double ssim = 0.0;  // 11x11 Gaussian window, standard constants
};

Metrics eval_metrics(const Tensor<float>& a, const Tensor<float>& b);

// -------- training loop --------

struct TrainHyper {
  AdamConfig adam;
  float recon_weight = 10.0f;
  float adv_weight = 1.0f;
  i64 batch = 4;
  i64 crop = 256;
  i64 steps = 2000;
  u64 seed = 0;
};

struct TrainConfig {
  GeneratorConfig gen;
  DiscriminatorConfig disc;
  TrainHyper hyper;
  i64 checkpoint_every = 500;
  i64 eval_every = 50;
  i64 eval_count = 8;
  std::string out_dir = "train_out";
  bool quiet = true;
};

struct DataSource {
  bool is_toy = true;
  ToyDomainSpec toy;
  std::vector<Tensor<float>> folder_a, folder_b;  // used when is_toy is false
};

// Checkpointable training snapshot: both parameter sets, optimizer moments,
// step counter and the data-stream RNG state for exact resumption.
struct TrainState {
  GeneratorConfig gcfg;
  DiscriminatorConfig dcfg;
  TrainHyper hyper;
  GeneratorParams<float> gen;
  DiscriminatorParams<float> disc;
  AdamState adam_g, adam_d;
  i64 step = 0;
  std::string rng_state;
};

struct TrainResult {
  std::string checkpoint_path;
  std::string csv_path;
  i64 steps = 0;
  double final_loss_g = 0.0;
};

TrainState fresh_train_state(const TrainConfig& cfg);

// Alternates one discriminator and one generator step per batch, logs
// step,loss_g,loss_d,loss_recon,loss_adv,psnr_val to metrics.csv, and writes
// periodic checkpoints. Fully deterministic for a fixed seed and config.
TrainResult train(const TrainConfig& cfg, const DataSource& data);
TrainResult train(const TrainConfig& cfg, const DataSource& data, TrainState& state,
                  bool append_csv);

}  // namespace lptn

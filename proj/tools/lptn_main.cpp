#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "lptn/bench.hpp"
#include "lptn/gradcheck.hpp"
#include "lptn/io.hpp"
#include "lptn/threading.hpp"
#include "lptn/train.hpp"

namespace fs = std::filesystem;
using namespace lptn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::pair<float, float> parse_loss_ratio(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) {
    throw ValueError(cat("invalid loss ratio '", s, "', expected RECON:ADV like 10:1"));
  }
  try {
    const float r = std::stof(s.substr(0, colon));
    const float a = std::stof(s.substr(colon + 1));
    if (r < 0 || a < 0) throw std::invalid_argument("negative");
    return {r, a};
  } catch (const std::exception&) {
    throw ValueError(cat("invalid loss ratio '", s, "', expected RECON:ADV like 10:1"));
  }
}

std::vector<Tensor<float>> load_folder(const std::string& dir) {
  std::vector<std::string> files;
  if (!fs::is_directory(dir)) throw IoError(cat(dir, ": not a directory"));
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".ppm") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValueError(cat(dir, ": no .ppm images found"));
  std::vector<Tensor<float>> images;
  images.reserve(files.size());
  for (const auto& f : files) images.push_back(load_image(f));
  return images;
}

int cmd_decompose(const std::string& input, const std::string& outdir, i64 levels) {
  Tensor<float> img = load_image(input);
  Padded<float> padded = pad_to_multiple(img, i64(1) << levels);
  LaplacianPyramid<float> pyr = decompose(padded.img, levels);
  pyr.orig_h = padded.orig_h;
  pyr.orig_w = padded.orig_w;
  fs::create_directories(outdir);
  save_pyramid(pyr, (fs::path(outdir) / "pyramid.lptn").string());
  for (i64 l = 0; l < pyr.levels(); ++l) {
    save_image(pyr.highs[static_cast<std::size_t>(l)],
               (fs::path(outdir) / cat("h", l, ".ppm")).string());
  }
  save_image(pyr.low, (fs::path(outdir) / "low.ppm").string());
  std::printf("decomposed %s into %lld bands under %s\n", input.c_str(),
              static_cast<long long>(levels), outdir.c_str());
  return kExitOk;
}

int cmd_reconstruct(const std::string& indir, const std::string& output) {
  std::string file = indir;
  if (fs::is_directory(indir)) file = (fs::path(indir) / "pyramid.lptn").string();
  LaplacianPyramid<float> pyr = load_pyramid(file);
  Tensor<float> img = reconstruct(pyr);
  save_image(img, output);
  std::printf("reconstructed %lldx%lld image -> %s\n", static_cast<long long>(img.shape.w),
              static_cast<long long>(img.shape.h), output.c_str());
  return kExitOk;
}

int cmd_translate(const std::string& input, const std::string& output,
                  const std::string& checkpoint, i64 levels_flag, bool no_refine,
                  bool no_instance_norm) {
  auto [params, cfg] = load_generator_checkpoint(checkpoint);
  if (levels_flag > 0 && levels_flag != cfg.levels) {
    throw ValueError(cat("checkpoint was trained with L = ", cfg.levels,
                         " but --levels asked for ", levels_flag));
  }
  if (no_refine) cfg.refine_high = false;
  if (no_instance_norm) cfg.use_instance_norm = false;
  Tensor<float> img = load_image(input);
  TranslateOutput<float> out = translate_image(img, params, cfg);
  save_image(out.image, output);
  std::printf("translated %s -> %s (L=%lld%s%s)\n", input.c_str(), output.c_str(),
              static_cast<long long>(cfg.levels), no_refine ? ", no-refine-high" : "",
              no_instance_norm ? ", no-instance-norm" : "");
  return kExitOk;
}

int cmd_stats(const std::string& path_a, const std::string& path_b, i64 levels,
              const std::string& csv_path) {
  Tensor<float> a = load_image(path_a);
  Tensor<float> b = load_image(path_b);
  Padded<float> pa = pad_to_multiple(a, i64(1) << levels);
  Padded<float> pb = pad_to_multiple(b, i64(1) << levels);
  if (!(pa.img.shape == pb.img.shape)) {
    throw ShapeError(cat("stats: images disagree in size after padding: ", pa.img.shape.str(),
                         " vs ", pb.img.shape.str()));
  }
  LaplacianPyramid<float> pyr_a = decompose(pa.img, levels);
  LaplacianPyramid<float> pyr_b = decompose(pb.img, levels);
  std::vector<BandStats> stats = band_stats(pyr_a, pyr_b);

  auto band_name = [&](std::size_t i) {
    return i + 1 == stats.size() ? std::string("low") : cat("h", i);
  };
  std::printf("band     mse\n");
  for (std::size_t i = 0; i < stats.size(); ++i) {
    std::printf("%-6s   %.8e\n", band_name(i).c_str(), stats[i].mse);
  }
  double max_high = 0.0;
  for (std::size_t i = 0; i + 1 < stats.size(); ++i) max_high = std::max(max_high, stats[i].mse);
  if (max_high > 0.0) {
    std::printf("low/high mse ratio: %.2f\n", stats.back().mse / max_high);
  }
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    if (!csv) throw IoError(cat(csv_path, ": cannot open for writing"));
    csv << "band,mse,bin,count_a,count_b\n";
    for (std::size_t i = 0; i < stats.size(); ++i) {
      for (int bin = 0; bin < 64; ++bin) {
        csv << band_name(i) << "," << stats[i].mse << "," << bin << ","
            << stats[i].hist_a[static_cast<std::size_t>(bin)] << ","
            << stats[i].hist_b[static_cast<std::size_t>(bin)] << "\n";
      }
    }
  }
  return kExitOk;
}

int cmd_bench(const std::string& resolutions, const std::string& levels, i64 runs, i64 warmup,
              u64 seed, const std::string& csv_path) {
  BenchConfig cfg;
  cfg.runs = runs;
  cfg.warmup = warmup;
  cfg.seed = seed;
  for (const auto& r : split_list(resolutions)) cfg.resolutions.push_back(parse_resolution(r));
  cfg.levels.clear();
  for (const auto& l : split_list(levels)) {
    try {
      cfg.levels.push_back(std::stoll(l));
    } catch (const std::exception&) {
      throw ValueError(cat("bench: bad level count '", l, "'"));
    }
  }
  std::vector<BenchRow> rows = run_bench(cfg);
  std::fputs(bench_table(rows).c_str(), stdout);
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    if (!csv) throw IoError(cat(csv_path, ": cannot open for writing"));
    csv << bench_csv(rows);
  }
  return kExitOk;
}

int cmd_gradcheck(u64 seed, bool quick) {
  GradCheckReport report = run_gradcheck_suite(seed, !quick);
  std::fputs(format_report(report).c_str(), stdout);
  return report.all_pass() ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Laplacian-pyramid image translation engine"};
  app.require_subcommand(1);

  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: LPTN_THREADS or all cores)");

  // decompose
  auto* dec = app.add_subcommand("decompose", "split an image into pyramid bands");
  std::string dec_input, dec_outdir;
  i64 dec_levels = 3;
  dec->add_option("input", dec_input, "input .ppm")->required();
  dec->add_option("outdir", dec_outdir, "output directory")->required();
  dec->add_option("--levels", dec_levels, "pyramid levels");

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "rebuild an image from pyramid bands");
  std::string rec_indir, rec_output;
  rec->add_option("indir", rec_indir, "directory or pyramid.lptn file")->required();
  rec->add_option("output", rec_output, "output .ppm")->required();

  // translate
  auto* tr = app.add_subcommand("translate", "run the translation network on an image");
  std::string tr_input, tr_output, tr_ckpt;
  i64 tr_levels = 0;
  bool tr_no_refine = false, tr_no_in = false;
  tr->add_option("input", tr_input, "input .ppm")->required();
  tr->add_option("output", tr_output, "output .ppm")->required();
  tr->add_option("--checkpoint", tr_ckpt, "trained checkpoint (.lptn)")->required();
  tr->add_option("--levels", tr_levels, "expected pyramid levels (validated)");
  tr->add_flag("--no-refine-high", tr_no_refine, "pass high bands through unchanged");
  tr->add_flag("--no-instance-norm", tr_no_in, "skip instance norm in the low-band net");

  // stats
  auto* st = app.add_subcommand("stats", "per-band MSE and histograms for an image pair");
  std::string st_a, st_b, st_csv;
  i64 st_levels = 3;
  st->add_option("image_a", st_a, "first .ppm")->required();
  st->add_option("image_b", st_b, "second .ppm")->required();
  st->add_option("--levels", st_levels, "pyramid levels");
  st->add_option("--csv", st_csv, "write full histograms to a CSV file");

  // bench
  auto* be = app.add_subcommand("bench", "time the pipeline stage by stage");
  std::string be_res = "480p,1080p", be_levels = "3,4,5", be_csv;
  i64 be_runs = 50, be_warmup = 3;
  u64 be_seed = 7;
  be->add_option("--resolutions", be_res, "comma list: 480p,1080p,2K,4K or WxH");
  be->add_option("--levels", be_levels, "comma list of level counts");
  be->add_option("--runs", be_runs, "timed runs per point (min 5, median reported)");
  be->add_option("--warmup", be_warmup, "untimed warmup runs");
  be->add_option("--seed", be_seed, "rng seed for synthetic inputs");
  be->add_option("--csv", be_csv, "write rows to a CSV file");

  // train
  auto* tn = app.add_subcommand("train", "adversarial training");
  bool tn_toy = false, tn_no_in = false, tn_no_refine = false, tn_verbose = false;
  std::string tn_data_a, tn_data_b, tn_out = "train_out", tn_ratio, tn_resume;
  i64 tn_steps = 2000, tn_batch = 4, tn_crop = 256, tn_levels = 3, tn_low = 64, tn_mask = 16;
  i64 tn_blocks = 5, tn_ckpt_every = 500, tn_toy_count = 500, tn_toy_size = 128, tn_disc = 64;
  u64 tn_seed = 0;
  float tn_lr = 1e-4f;
  tn->add_flag("--toy", tn_toy, "train on the synthetic tone-mapped domains");
  tn->add_option("--data-a", tn_data_a, "directory of source-domain .ppm images");
  tn->add_option("--data-b", tn_data_b, "directory of target-domain .ppm images");
  tn->add_option("--out", tn_out, "output directory (checkpoints, metrics.csv)");
  tn->add_option("--steps", tn_steps, "training steps");
  tn->add_option("--batch", tn_batch, "batch size");
  tn->add_option("--crop", tn_crop, "training crop size");
  tn->add_option("--seed", tn_seed, "seed");
  tn->add_option("--levels", tn_levels, "pyramid levels");
  tn->add_option("--low-channels", tn_low, "low-band net width");
  tn->add_option("--mask-channels", tn_mask, "mask net width");
  tn->add_option("--blocks", tn_blocks, "residual blocks per net");
  tn->add_option("--disc-channels", tn_disc, "discriminator base width");
  tn->add_option("--loss-ratio", tn_ratio, "reconstruction:adversarial weights, e.g. 10:1");
  tn->add_option("--lr", tn_lr, "Adam learning rate");
  tn->add_option("--checkpoint-every", tn_ckpt_every, "steps between checkpoints");
  tn->add_option("--resume", tn_resume, "checkpoint to continue from");
  tn->add_option("--toy-count", tn_toy_count, "synthetic images per domain");
  tn->add_option("--toy-size", tn_toy_size, "synthetic image size");
  tn->add_flag("--no-instance-norm", tn_no_in, "train without instance norm");
  tn->add_flag("--no-refine-high", tn_no_refine, "train without high-band refinement");
  tn->add_flag("--verbose", tn_verbose, "log progress to stderr");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  u64 gc_seed = 1234;
  bool gc_quick = false;
  gc->add_option("--seed", gc_seed, "seed");
  gc->add_flag("--quick", gc_quick, "check fewer coordinates per tensor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (threads > 0) set_num_threads(threads);

  try {
    if (dec->parsed()) return cmd_decompose(dec_input, dec_outdir, dec_levels);
    if (rec->parsed()) return cmd_reconstruct(rec_indir, rec_output);
    if (tr->parsed()) {
      return cmd_translate(tr_input, tr_output, tr_ckpt, tr_levels, tr_no_refine, tr_no_in);
    }
    if (st->parsed()) return cmd_stats(st_a, st_b, st_levels, st_csv);
    if (be->parsed()) return cmd_bench(be_res, be_levels, be_runs, be_warmup, be_seed, be_csv);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_quick);
    if (tn->parsed()) {
      if (!tn_toy && (tn_data_a.empty() || tn_data_b.empty())) {
        throw ValueError("train: pass --toy or both --data-a and --data-b");
      }
      TrainConfig cfg;
      cfg.gen.levels = tn_levels;
      cfg.gen.low_channels = tn_low;
      cfg.gen.mask_channels = tn_mask;
      cfg.gen.num_res_blocks = tn_blocks;
      cfg.gen.use_instance_norm = !tn_no_in;
      cfg.gen.refine_high = !tn_no_refine;
      cfg.disc.base_channels = tn_disc;
      cfg.hyper.adam.lr = tn_lr;
      cfg.hyper.batch = tn_batch;
      cfg.hyper.crop = tn_crop;
      cfg.hyper.steps = tn_steps;
      cfg.hyper.seed = tn_seed;
      if (!tn_ratio.empty()) {
        auto [rw, aw] = parse_loss_ratio(tn_ratio);
        cfg.hyper.recon_weight = rw;
        cfg.hyper.adv_weight = aw;
      }
      cfg.checkpoint_every = tn_ckpt_every;
      cfg.out_dir = tn_out;
      cfg.quiet = !tn_verbose;

      DataSource data;
      if (tn_toy) {
        data.is_toy = true;
        data.toy.count = tn_toy_count;
        data.toy.image_size = tn_toy_size;
        data.toy.seed = tn_seed + 1;
      } else {
        data.is_toy = false;
        data.folder_a = load_folder(tn_data_a);
        data.folder_b = load_folder(tn_data_b);
      }

      TrainResult result;
      if (!tn_resume.empty()) {
        TrainState state = load_checkpoint(tn_resume);
        if (tn_steps > state.hyper.steps) state.hyper.steps = tn_steps;
        result = train(cfg, data, state, /*append_csv=*/true);
      } else {
        result = train(cfg, data);
      }
      std::printf("trained %lld steps; checkpoint: %s; metrics: %s\n",
                  static_cast<long long>(result.steps), result.checkpoint_path.c_str(),
                  result.csv_path.c_str());
      return kExitOk;
    }
  } catch (const ValueError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const ChecksumError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  } catch (const VersionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  } catch (const IoError& e) {
    const std::string msg = e.what();
    std::fprintf(stderr, "error: %s\n", msg.c_str());
    return msg.find("cannot open") != std::string::npos ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

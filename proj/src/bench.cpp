#include "lptn/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

namespace lptn {

BenchResolution parse_resolution(const std::string& name) {
  if (name == "480p") return {name, 480, 854};
  if (name == "1080p") return {name, 1080, 1920};
  if (name == "2K") return {name, 1440, 2560};
  if (name == "4K") return {name, 2160, 3840};
  const auto x = name.find('x');
  if (x != std::string::npos) {
    try {
      const i64 w = std::stoll(name.substr(0, x));
      const i64 h = std::stoll(name.substr(x + 1));
      if (w > 0 && h > 0) return {name, h, w};
    } catch (const std::exception&) {
    }
  }
  throw ValueError(cat("bench: unknown resolution '", name,
                       "' (use 480p, 1080p, 2K, 4K or WxH)"));
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchConfig& cfg) {
  if (cfg.runs < 5) {
    throw ValueError(cat("bench: at least 5 timed runs required, got ", cfg.runs));
  }
  if (cfg.resolutions.empty() || cfg.levels.empty()) {
    throw ValueError("bench: need at least one resolution and one level count");
  }
  std::vector<BenchRow> rows;
  Rng rng(cfg.seed);
  for (const auto& res : cfg.resolutions) {
    for (i64 levels : cfg.levels) {
      GeneratorConfig gcfg = cfg.base;
      gcfg.levels = levels;
      gcfg.finetune_enabled.clear();
      Rng prng = rng.child(static_cast<u64>(levels) * 1000 + static_cast<u64>(res.h));
      GeneratorParams<float> params = init_generator<float>(gcfg, prng);
      Tensor<float> img = uniform_tensor<float>(Shape{1, 3, res.h, res.w}, prng, -1.0f, 1.0f);

      std::vector<double> t_dec, t_low, t_mask, t_rec, t_total;
      for (i64 run = 0; run < cfg.warmup + cfg.runs; ++run) {
        StageTimes st;
        const auto t0 = std::chrono::steady_clock::now();
        TranslateOutput<float> out = translate_image(img, params, gcfg, &st);
        const double total =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        (void)out;
        if (run < cfg.warmup) continue;
        t_dec.push_back(st.decompose_s);
        t_low.push_back(st.low_s);
        t_mask.push_back(st.mask_s);
        t_rec.push_back(st.reconstruct_s);
        t_total.push_back(total);
      }
      const double px = static_cast<double>(res.h * res.w);
      auto push = [&](const char* stage, const std::vector<double>& times) {
        const double sec = median(times);
        rows.push_back(BenchRow{res.label, res.h, res.w, levels, stage, sec,
                                sec > 0.0 ? px / sec : 0.0});
      };
      push("decompose", t_dec);
      push("low_translate", t_low);
      push("mask", t_mask);
      push("reconstruct", t_rec);
      push("total", t_total);
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "label,height,width,levels,stage,seconds,pixels_per_second\n";
  for (const auto& r : rows) {
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%lld,%lld,%lld,%s,%.9f,%.1f\n", r.label.c_str(),
                  static_cast<long long>(r.h), static_cast<long long>(r.w),
                  static_cast<long long>(r.levels), r.stage.c_str(), r.seconds,
                  r.pixels_per_second);
    out += line;
  }
  return out;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
  std::string out = "resolution      L  stage          seconds      Mpx/s\n";
  for (const auto& r : rows) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-8s %5lldx%-5lld %lld  %-13s %9.5f  %9.2f\n",
                  r.label.c_str(), static_cast<long long>(r.w), static_cast<long long>(r.h),
                  static_cast<long long>(r.levels), r.stage.c_str(), r.seconds,
                  r.pixels_per_second / 1e6);
    out += line;
  }
  return out;
}

}  // namespace lptn

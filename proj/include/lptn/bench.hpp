#pragma once

#include <string>
#include <vector>

#include "lptn/net.hpp"

namespace lptn {

struct BenchResolution {
  std::string label;
  i64 h = 0;
  i64 w = 0;
};

// 480p/1080p/2K/4K by name, or "WxH" for custom sizes.
BenchResolution parse_resolution(const std::string& name);

struct BenchRow {
  std::string label;
  i64 h = 0;
  i64 w = 0;
  i64 levels = 0;
  std::string stage;  // decompose | low_translate | mask | reconstruct | total
  double seconds = 0.0;
  double pixels_per_second = 0.0;
};

struct BenchConfig {
  std::vector<BenchResolution> resolutions;
  std::vector<i64> levels{3, 4, 5};
  i64 runs = 50;    // timed runs per point, median reported; minimum 5
  i64 warmup = 3;   // untimed runs before measuring
  u64 seed = 7;
  GeneratorConfig base;  // levels overridden per point
};

// Times the translation pipeline stage by stage on synthetic random inputs.
std::vector<BenchRow> run_bench(const BenchConfig& cfg);

std::string bench_csv(const std::vector<BenchRow>& rows);
std::string bench_table(const std::vector<BenchRow>& rows);

}  // namespace lptn

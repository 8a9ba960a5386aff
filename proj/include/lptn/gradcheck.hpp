#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "lptn/autodiff.hpp"

namespace lptn {

struct LeafSpec {
  Tensor<float> value;
  bool requires_grad = true;
};

struct CheckOpts {
  double step = 1e-3;       // central-difference step
  double tolerance = 1e-3;  // max relative error allowed
  double rel_floor = 1e-2;  // denominators below this act as absolute scale
  i64 max_coords = 48;      // coordinates checked per tensor (all if fewer)
  u64 seed = 0x5eed;
};

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  bool all_pass() const {
    for (const auto& c : cases) {
      if (!c.pass) return false;
    }
    return true;
  }
};

// Compares the tape's 32-bit gradients of a scalar-valued builder against
// central finite differences of a 64-bit replay of the same program. The
// builder is invoked with both Graph<float> and Graph<double>, so it must be
// generic over the scalar type.
template <class Builder>
GradCheckCase check_gradients(const std::string& name, const std::vector<LeafSpec>& leaves,
                              Builder&& build, const CheckOpts& opts = {}) {
  GradCheckCase result;
  result.name = name;
  result.tolerance = opts.tolerance;

  Graph<float> gf;
  std::vector<Var<float>> vf;
  for (const auto& l : leaves) vf.push_back(gf.leaf(l.value, l.requires_grad));
  Var<float> outf = build(gf, vf);
  if (gf.value(outf).numel() != 1) {
    throw ValueError(cat("check_gradients(", name, "): builder must return a scalar"));
  }
  gf.backward(outf);

  std::vector<Tensor<double>> base;
  base.reserve(leaves.size());
  for (const auto& l : leaves) base.push_back(cast<double>(l.value));
  auto eval = [&](const std::vector<Tensor<double>>& vals) {
    Graph<double> gd;
    std::vector<Var<double>> vd;
    for (const auto& v : vals) vd.push_back(gd.leaf(v, false));
    Var<double> o = build(gd, vd);
    return static_cast<double>(gd.value(o).data[0]);
  };

  std::mt19937_64 pick(opts.seed);
  double max_rel = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    if (!leaves[li].requires_grad) continue;
    const Tensor<float> bp = gf.grad_or_zero(vf[li]);
    const i64 n = bp.numel();
    std::vector<i64> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), 0);
    if (n > opts.max_coords) {
      std::shuffle(coords.begin(), coords.end(), pick);
      coords.resize(static_cast<std::size_t>(opts.max_coords));
    }
    for (i64 ci : coords) {
      const auto s = static_cast<std::size_t>(ci);
      const double saved = base[li].data[s];
      base[li].data[s] = saved + opts.step;
      const double fp = eval(base);
      base[li].data[s] = saved - opts.step;
      const double fm = eval(base);
      base[li].data[s] = saved;
      const double fd = (fp - fm) / (2.0 * opts.step);
      const double got = static_cast<double>(bp.data[s]);
      const double denom = std::max({std::abs(fd), std::abs(got), opts.rel_floor});
      max_rel = std::max(max_rel, std::abs(fd - got) / denom);
    }
  }
  result.max_rel_err = max_rel;
  result.pass = max_rel < opts.tolerance;
  return result;
}

// Finite-difference suite over every differentiable op plus the composed
// generator/discriminator losses. thorough widens the coordinate sampling.
GradCheckReport run_gradcheck_suite(u64 seed, bool thorough);

std::string format_report(const GradCheckReport& report);

}  // namespace lptn

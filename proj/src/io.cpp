#include "lptn/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace lptn {

using nlohmann::json;

// -------- raster images --------

namespace {

constexpr const char* kMagic = "LPTNBIN\n";
constexpr std::uint32_t kFormatVersion = 1;

int ppm_skip_space(std::istream& in, i64& offset) {
  int ch = in.get();
  ++offset;
  while (in && (std::isspace(ch) || ch == '#')) {
    if (ch == '#') {
      while (in && ch != '\n') {
        ch = in.get();
        ++offset;
      }
    }
    ch = in.get();
    ++offset;
  }
  return ch;
}

i64 ppm_read_int(std::istream& in, i64& offset, const std::string& path, const char* field) {
  int ch = ppm_skip_space(in, offset);
  if (!in || !std::isdigit(ch)) {
    throw IoError(cat(path, ": malformed PPM header, expected ", field, " at byte offset ",
                      offset - 1));
  }
  i64 value = 0;
  while (in && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    ch = in.get();
    ++offset;
  }
  if (in) {
    in.unget();
    --offset;
  }
  return value;
}

std::uint64_t fnv1a64(const unsigned char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void floats_to_le(const float* src, i64 count, std::vector<unsigned char>& out) {
  const std::size_t base = out.size();
  out.resize(base + static_cast<std::size_t>(count) * 4);
  for (i64 i = 0; i < count; ++i) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(src[i]);
    unsigned char* dst = out.data() + base + static_cast<std::size_t>(i) * 4;
    dst[0] = static_cast<unsigned char>(bits & 0xff);
    dst[1] = static_cast<unsigned char>((bits >> 8) & 0xff);
    dst[2] = static_cast<unsigned char>((bits >> 16) & 0xff);
    dst[3] = static_cast<unsigned char>((bits >> 24) & 0xff);
  }
}

void le_to_floats(const unsigned char* src, i64 count, float* dst) {
  for (i64 i = 0; i < count; ++i) {
    const unsigned char* p = src + static_cast<std::size_t>(i) * 4;
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                               (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) |
                               (static_cast<std::uint32_t>(p[3]) << 24);
    dst[i] = std::bit_cast<float>(bits);
  }
}

}  // namespace

Tensor<float> load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat(path, ": cannot open file"));
  i64 offset = 0;
  char m0 = static_cast<char>(in.get());
  char m1 = static_cast<char>(in.get());
  offset += 2;
  if (!in || m0 != 'P' || m1 != '6') {
    throw IoError(cat(path, ": not a binary PPM (expected 'P6' at byte offset 0)"));
  }
  const i64 w = ppm_read_int(in, offset, path, "width");
  const i64 h = ppm_read_int(in, offset, path, "height");
  const i64 maxval_offset = offset;
  const i64 maxval = ppm_read_int(in, offset, path, "maxval");
  if (maxval != 255) {
    throw IoError(cat(path, ": unsupported maxval ", maxval, " at byte offset ", maxval_offset,
                      " (only 255 is supported)"));
  }
  in.get();  // single whitespace after maxval
  ++offset;
  if (w < 1 || h < 1) throw IoError(cat(path, ": invalid dimensions ", w, "x", h));

  std::vector<unsigned char> bytes(static_cast<std::size_t>(w * h * 3));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw IoError(cat(path, ": truncated payload at byte offset ", offset + in.gcount(),
                      " (expected ", bytes.size(), " pixel bytes)"));
  }

  Tensor<float> img(Shape{1, 3, h, w});
  for (i64 y = 0; y < h; ++y) {
    for (i64 x = 0; x < w; ++x) {
      for (i64 c = 0; c < 3; ++c) {
        const double b = static_cast<double>(bytes[static_cast<std::size_t>((y * w + x) * 3 + c)]);
        img.at(0, c, y, x) = static_cast<float>(b / 255.0 * 2.0 - 1.0);
      }
    }
  }
  return img;
}

void save_image(const Tensor<float>& img, const std::string& path) {
  if (img.shape.n != 1 || (img.shape.c != 1 && img.shape.c != 3)) {
    throw ShapeError(cat("save_image: expected 1x{1|3}xHxW, got ", img.shape.str()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(cat(path, ": cannot open file for writing"));
  const i64 h = img.shape.h, w = img.shape.w;
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w * h * 3));
  for (i64 y = 0; y < h; ++y) {
    for (i64 x = 0; x < w; ++x) {
      for (i64 c = 0; c < 3; ++c) {
        const i64 src_c = img.shape.c == 1 ? 0 : c;
        double v = static_cast<double>(img.at(0, src_c, y, x));
        v = std::min(1.0, std::max(-1.0, v));
        const long q = std::lround((v + 1.0) * 0.5 * 255.0);
        bytes[static_cast<std::size_t>((y * w + x) * 3 + c)] =
            static_cast<unsigned char>(std::min(255L, std::max(0L, q)));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(cat(path, ": write failed"));
}

// -------- tensor container --------

void save_tensor_file(const TensorFile& tf, const std::string& path) {
  std::vector<unsigned char> payload;
  json manifest;
  manifest["kind"] = tf.kind;
  manifest["meta"] = tf.meta;
  json tensors = json::array();
  for (const auto& [name, tensor] : tf.tensors) {
    json entry;
    entry["name"] = name;
    entry["shape"] = {tensor.shape.n, tensor.shape.c, tensor.shape.h, tensor.shape.w};
    entry["offset"] = payload.size();
    entry["nbytes"] = static_cast<std::uint64_t>(tensor.numel()) * 4;
    floats_to_le(tensor.ptr(), tensor.numel(), payload);
    tensors.push_back(std::move(entry));
  }
  manifest["tensors"] = std::move(tensors);
  manifest["payload_nbytes"] = payload.size();
  manifest["checksum_fnv1a64"] = hex64(fnv1a64(payload.data(), payload.size()));

  const std::string mstr = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(cat(path, ": cannot open file for writing"));
  out.write(kMagic, 8);
  put_u32(out, kFormatVersion);
  put_u64(out, mstr.size());
  out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError(cat(path, ": write failed"));
}

TensorFile load_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat(path, ": cannot open file"));
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError(cat(path, ": not a tensor container (bad magic)"));
  }
  const std::uint32_t version = get_u32(in);
  if (!in || version != kFormatVersion) {
    throw VersionError(cat(path, ": format version ", version, " unsupported (expected ",
                           kFormatVersion, ")"));
  }
  const std::uint64_t mlen = get_u64(in);
  std::string mstr(mlen, '\0');
  in.read(mstr.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw IoError(cat(path, ": truncated manifest"));
  json manifest;
  try {
    manifest = json::parse(mstr);
  } catch (const std::exception& e) {
    throw IoError(cat(path, ": malformed manifest: ", e.what()));
  }

  const std::uint64_t payload_nbytes = manifest.at("payload_nbytes").get<std::uint64_t>();
  std::vector<unsigned char> payload(payload_nbytes);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_nbytes));
  if (in.gcount() != static_cast<std::streamsize>(payload_nbytes)) {
    throw IoError(cat(path, ": truncated payload (expected ", payload_nbytes, " bytes, got ",
                      in.gcount(), ")"));
  }
  const std::string checksum = hex64(fnv1a64(payload.data(), payload.size()));
  if (checksum != manifest.at("checksum_fnv1a64").get<std::string>()) {
    throw ChecksumError(cat(path, ": payload checksum mismatch (file corrupt)"));
  }

  TensorFile tf;
  tf.kind = manifest.at("kind").get<std::string>();
  tf.meta = manifest.at("meta");
  std::uint64_t prev_end = 0;
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const auto shape_arr = entry.at("shape");
    const Shape shape{shape_arr.at(0).get<i64>(), shape_arr.at(1).get<i64>(),
                      shape_arr.at(2).get<i64>(), shape_arr.at(3).get<i64>()};
    const std::uint64_t off = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (off < prev_end || off + nbytes > payload_nbytes) {
      throw IoError(cat(path, ": tensor '", name, "' has out-of-bounds or overlapping extent"));
    }
    if (nbytes != static_cast<std::uint64_t>(shape.numel()) * 4) {
      throw IoError(cat(path, ": tensor '", name, "' length does not match shape ", shape.str()));
    }
    prev_end = off + nbytes;
    Tensor<float> t(shape);
    le_to_floats(payload.data() + off, t.numel(), t.ptr());
    tf.tensors.emplace_back(name, std::move(t));
  }
  return tf;
}

// -------- config serialization --------

json to_json(const GeneratorConfig& cfg) {
  json j;
  j["levels"] = cfg.levels;
  j["image_channels"] = cfg.image_channels;
  j["low_channels"] = cfg.low_channels;
  j["mask_channels"] = cfg.mask_channels;
  j["num_res_blocks"] = cfg.num_res_blocks;
  j["leaky_slope"] = cfg.leaky_slope;
  j["use_instance_norm"] = cfg.use_instance_norm;
  j["refine_high"] = cfg.refine_high;
  j["finetune_enabled"] = json::array();
  for (i64 l = 0; l < cfg.levels - 1; ++l) j["finetune_enabled"].push_back(cfg.finetune_on(l));
  return j;
}

json to_json(const DiscriminatorConfig& cfg) {
  return json{{"base_channels", cfg.base_channels},
              {"scales", cfg.scales},
              {"leaky_slope", cfg.leaky_slope}};
}

json to_json(const TrainHyper& hp) {
  return json{{"lr", hp.adam.lr},
              {"beta1", hp.adam.beta1},
              {"beta2", hp.adam.beta2},
              {"eps", hp.adam.eps},
              {"recon_weight", hp.recon_weight},
              {"adv_weight", hp.adv_weight},
              {"batch", hp.batch},
              {"crop", hp.crop},
              {"steps", hp.steps},
              {"seed", hp.seed}};
}

GeneratorConfig generator_config_from_json(const json& j) {
  GeneratorConfig cfg;
  cfg.levels = j.at("levels").get<i64>();
  cfg.image_channels = j.at("image_channels").get<i64>();
  cfg.low_channels = j.at("low_channels").get<i64>();
  cfg.mask_channels = j.at("mask_channels").get<i64>();
  cfg.num_res_blocks = j.at("num_res_blocks").get<i64>();
  cfg.leaky_slope = j.at("leaky_slope").get<float>();
  cfg.use_instance_norm = j.at("use_instance_norm").get<bool>();
  cfg.refine_high = j.at("refine_high").get<bool>();
  cfg.finetune_enabled.clear();
  for (const auto& b : j.at("finetune_enabled")) cfg.finetune_enabled.push_back(b.get<bool>());
  cfg.validate();
  return cfg;
}

DiscriminatorConfig discriminator_config_from_json(const json& j) {
  DiscriminatorConfig cfg;
  cfg.base_channels = j.at("base_channels").get<i64>();
  cfg.scales = j.at("scales").get<i64>();
  cfg.leaky_slope = j.at("leaky_slope").get<float>();
  cfg.validate();
  return cfg;
}

TrainHyper train_hyper_from_json(const json& j) {
  TrainHyper hp;
  hp.adam.lr = j.at("lr").get<float>();
  hp.adam.beta1 = j.at("beta1").get<float>();
  hp.adam.beta2 = j.at("beta2").get<float>();
  hp.adam.eps = j.at("eps").get<float>();
  hp.recon_weight = j.at("recon_weight").get<float>();
  hp.adv_weight = j.at("adv_weight").get<float>();
  hp.batch = j.at("batch").get<i64>();
  hp.crop = j.at("crop").get<i64>();
  hp.steps = j.at("steps").get<i64>();
  hp.seed = j.at("seed").get<u64>();
  return hp;
}

// -------- checkpoints --------

namespace {

template <class ParamsT, class VisitF>
void append_params(TensorFile& tf, const std::string& prefix, ParamsT& params, VisitF&& visit_fn) {
  visit_fn(params, [&](const std::string& name, const Tensor<float>& t) {
    tf.tensors.emplace_back(prefix + name, t);
  });
}

void append_adam(TensorFile& tf, const std::string& prefix, const AdamState& st) {
  for (const auto& [name, t] : st.m) tf.tensors.emplace_back(prefix + ".m." + name, t);
  for (const auto& [name, t] : st.v) tf.tensors.emplace_back(prefix + ".v." + name, t);
}

// Fills a freshly constructed parameter structure from named entries,
// consuming them; throws on shape mismatch or absence.
template <class ParamsT, class VisitF>
void fill_params(const std::string& path, std::map<std::string, Tensor<float>>& entries,
                 const std::string& prefix, ParamsT& params, VisitF&& visit_fn) {
  visit_fn(params, [&](const std::string& name, Tensor<float>& t) {
    auto it = entries.find(prefix + name);
    if (it == entries.end()) {
      throw ShapeError(cat(path, ": checkpoint is missing tensor '", prefix + name, "'"));
    }
    if (!(it->second.shape == t.shape)) {
      throw ShapeError(cat(path, ": tensor '", prefix + name, "' has shape ",
                           it->second.shape.str(), " but the configuration implies ",
                           t.shape.str()));
    }
    t = std::move(it->second);
    entries.erase(it);
  });
}

void fill_adam(std::map<std::string, Tensor<float>>& entries, const std::string& prefix,
               AdamState& st) {
  for (auto it = entries.begin(); it != entries.end();) {
    if (it->first.rfind(prefix + ".m.", 0) == 0) {
      st.m[it->first.substr(prefix.size() + 3)] = std::move(it->second);
      it = entries.erase(it);
    } else if (it->first.rfind(prefix + ".v.", 0) == 0) {
      st.v[it->first.substr(prefix.size() + 3)] = std::move(it->second);
      it = entries.erase(it);
    } else {
      ++it;
    }
  }
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  TensorFile tf;
  tf.kind = "train_state";
  tf.meta["generator"] = to_json(state.gcfg);
  tf.meta["discriminator"] = to_json(state.dcfg);
  tf.meta["hyper"] = to_json(state.hyper);
  tf.meta["step"] = state.step;
  tf.meta["adam_g_step"] = state.adam_g.step;
  tf.meta["adam_d_step"] = state.adam_d.step;
  tf.meta["rng_state"] = state.rng_state;
  append_params(tf, "gen.", state.gen, [](auto& p, auto&& f) { visit_generator(p, f); });
  append_params(tf, "disc.", state.disc, [](auto& p, auto&& f) { visit_discriminator(p, f); });
  append_adam(tf, "adam_g", state.adam_g);
  append_adam(tf, "adam_d", state.adam_d);
  save_tensor_file(tf, path);
}

TrainState load_checkpoint(const std::string& path) {
  TensorFile tf = load_tensor_file(path);
  if (tf.kind != "train_state") {
    throw IoError(cat(path, ": expected a train_state checkpoint, found kind '", tf.kind, "'"));
  }
  TrainState state;
  state.gcfg = generator_config_from_json(tf.meta.at("generator"));
  state.dcfg = discriminator_config_from_json(tf.meta.at("discriminator"));
  state.hyper = train_hyper_from_json(tf.meta.at("hyper"));
  state.step = tf.meta.at("step").get<i64>();
  state.adam_g.step = tf.meta.at("adam_g_step").get<i64>();
  state.adam_d.step = tf.meta.at("adam_d_step").get<i64>();
  state.rng_state = tf.meta.at("rng_state").get<std::string>();

  std::map<std::string, Tensor<float>> entries;
  for (auto& [name, t] : tf.tensors) {
    if (!entries.emplace(name, std::move(t)).second) {
      throw IoError(cat(path, ": duplicate tensor '", name, "'"));
    }
  }
  state.gen = identity_generator<float>(state.gcfg);
  Rng dummy(0);
  state.disc = init_discriminator<float>(state.dcfg, dummy);
  fill_params(path, entries, "gen.", state.gen, [](auto& p, auto&& f) { visit_generator(p, f); });
  fill_params(path, entries, "disc.", state.disc,
              [](auto& p, auto&& f) { visit_discriminator(p, f); });
  fill_adam(entries, "adam_g", state.adam_g);
  fill_adam(entries, "adam_d", state.adam_d);
  if (!entries.empty()) {
    throw IoError(cat(path, ": unknown tensor '", entries.begin()->first, "' in checkpoint"));
  }
  return state;
}

TrainState load_checkpoint(const std::string& path, const GeneratorConfig& expected) {
  TrainState state = load_checkpoint(path);
  if (!(state.gcfg == expected)) {
    // surface the first structural difference as a tensor-level report
    GeneratorParams<float> want = identity_generator<float>(expected);
    std::map<std::string, Shape> have;
    visit_generator(state.gen, [&](const std::string& name, const Tensor<float>& t) {
      have[name] = t.shape;
    });
    std::string detail = "configuration differs";
    visit_generator(want, [&](const std::string& name, const Tensor<float>& t) {
      if (detail != "configuration differs") return;
      auto it = have.find(name);
      if (it == have.end()) {
        detail = cat("tensor '", name, "' is missing from the checkpoint");
      } else if (!(it->second == t.shape)) {
        detail = cat("tensor '", name, "' has shape ", it->second.str(), ", expected ",
                     t.shape.str());
      }
    });
    throw ShapeError(cat(path, ": checkpoint does not match the expected configuration: ",
                         detail));
  }
  return state;
}

void save_generator_checkpoint(const GeneratorParams<float>& params, const GeneratorConfig& cfg,
                               const std::string& path) {
  TensorFile tf;
  tf.kind = "generator";
  tf.meta["generator"] = to_json(cfg);
  append_params(tf, "gen.", params, [](auto& p, auto&& f) { visit_generator(p, f); });
  save_tensor_file(tf, path);
}

std::pair<GeneratorParams<float>, GeneratorConfig> load_generator_checkpoint(
    const std::string& path) {
  TensorFile tf = load_tensor_file(path);
  if (tf.kind == "train_state") {
    TrainState state = load_checkpoint(path);
    return {std::move(state.gen), state.gcfg};
  }
  if (tf.kind != "generator") {
    throw IoError(cat(path, ": expected a generator or train_state checkpoint, found kind '",
                      tf.kind, "'"));
  }
  GeneratorConfig cfg = generator_config_from_json(tf.meta.at("generator"));
  std::map<std::string, Tensor<float>> entries;
  for (auto& [name, t] : tf.tensors) entries.emplace(name, std::move(t));
  GeneratorParams<float> params = identity_generator<float>(cfg);
  fill_params(path, entries, "gen.", params, [](auto& p, auto&& f) { visit_generator(p, f); });
  if (!entries.empty()) {
    throw IoError(cat(path, ": unknown tensor '", entries.begin()->first, "' in checkpoint"));
  }
  return {std::move(params), cfg};
}

// -------- pyramid containers --------

void save_pyramid(const LaplacianPyramid<float>& pyr, const std::string& path) {
  TensorFile tf;
  tf.kind = "pyramid";
  tf.meta["levels"] = pyr.levels();
  tf.meta["orig_h"] = pyr.orig_h;
  tf.meta["orig_w"] = pyr.orig_w;
  for (i64 l = 0; l < pyr.levels(); ++l) {
    tf.tensors.emplace_back(cat("h", l), pyr.highs[static_cast<std::size_t>(l)]);
  }
  tf.tensors.emplace_back("low", pyr.low);
  save_tensor_file(tf, path);
}

LaplacianPyramid<float> load_pyramid(const std::string& path) {
  TensorFile tf = load_tensor_file(path);
  if (tf.kind != "pyramid") {
    throw IoError(cat(path, ": expected a pyramid container, found kind '", tf.kind, "'"));
  }
  LaplacianPyramid<float> pyr;
  const i64 levels = tf.meta.at("levels").get<i64>();
  pyr.orig_h = tf.meta.at("orig_h").get<i64>();
  pyr.orig_w = tf.meta.at("orig_w").get<i64>();
  std::map<std::string, Tensor<float>> entries;
  for (auto& [name, t] : tf.tensors) entries.emplace(name, std::move(t));
  for (i64 l = 0; l < levels; ++l) {
    auto it = entries.find(cat("h", l));
    if (it == entries.end()) throw IoError(cat(path, ": missing band h", l));
    pyr.highs.push_back(std::move(it->second));
  }
  auto it = entries.find("low");
  if (it == entries.end()) throw IoError(cat(path, ": missing low band"));
  pyr.low = std::move(it->second);
  return pyr;
}

}  // namespace lptn

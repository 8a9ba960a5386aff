#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lptn/train.hpp"

namespace lptn {

class VersionError : public IoError {
 public:
  using IoError::IoError;
};
class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

// -------- raster images (binary PPM, P6, maxval 255) --------

// Bytes map linearly onto [-1, 1]: 0 -> -1, 255 -> +1. Always returns 3
// channels.
Tensor<float> load_image(const std::string& path);
// Clamps to [-1, 1] and quantizes with round-half-away-from-zero. Accepts 1
// (replicated to gray) or 3 channels, batch size 1.
void save_image(const Tensor<float>& img, const std::string& path);

// -------- tensor container (.lptn) --------
//
// Layout: 8-byte magic, u32 format version, u64 manifest length, JSON
// manifest, payload of raw little-endian f32 blobs. The manifest records the
// kind, free-form metadata and the name/shape/offset/length of every tensor;
// a FNV-1a 64 checksum guards the payload.

struct TensorFile {
  std::string kind;
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

void save_tensor_file(const TensorFile& tf, const std::string& path);
TensorFile load_tensor_file(const std::string& path);

// -------- config serialization --------

nlohmann::json to_json(const GeneratorConfig& cfg);
nlohmann::json to_json(const DiscriminatorConfig& cfg);
nlohmann::json to_json(const TrainHyper& hp);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);
TrainHyper train_hyper_from_json(const nlohmann::json& j);

// -------- checkpoints --------

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);
// Rejects a checkpoint whose configuration or tensor set does not match,
// naming the first offending tensor.
TrainState load_checkpoint(const std::string& path, const GeneratorConfig& expected);

// Generator-only checkpoint (enough to run inference).
void save_generator_checkpoint(const GeneratorParams<float>& params, const GeneratorConfig& cfg,
                               const std::string& path);
std::pair<GeneratorParams<float>, GeneratorConfig> load_generator_checkpoint(
    const std::string& path);

// -------- pyramid containers --------

void save_pyramid(const LaplacianPyramid<float>& pyr, const std::string& path);
LaplacianPyramid<float> load_pyramid(const std::string& path);

}  // namespace lptn

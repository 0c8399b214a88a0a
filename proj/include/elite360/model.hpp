#pragma once

// Full depth model, its JSON configuration, weight checkpoints and the
// single-scene overfit training loop.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "elite360/b2f.hpp"
#include "elite360/depth.hpp"
#include "elite360/encoders.hpp"
#include "elite360/icosap.hpp"
#include "elite360/scene.hpp"
#include "json.hpp"

namespace e360 {

struct ModelConfig {
  Index height = 64;
  Index width = 128;
  Index channels = 32;  // C, also the fused width d
  int level = 3;
  int blocks = 3;
  Index knn = 8;
  int stages = 4;
  std::vector<Index> encoder_widths;  // empty: default_encoder_widths(C, stages)
  std::uint64_t seed = 0;
  double max_depth = 10.0;
  FusionMode fusion = FusionMode::kB2F;

  std::vector<Index> resolved_widths() const;
  void validate() const;
};

struct TrainConfig {
  ModelConfig model;
  BoxScene scene;
  int steps = 5000;
  double lr = 1e-4;
  int log_every = 500;  // progress lines on stdout; 0 silences them
  std::filesystem::path out = "run";
};

// Unknown keys are rejected so typos do not silently fall back to defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json train_config_to_json(const TrainConfig& c);
TrainConfig load_train_config(const std::filesystem::path& path);

template <typename Scalar>
class Elite360Model {
 public:
  explicit Elite360Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  // erp is [3, H, W]; returns depth [H, W].
  Tensor<Scalar> operator()(const Tensor<Scalar>& erp, const IcosapPointSet<Scalar>& points) const;
  ParamList<Scalar> parameters() const;

  ErpEncoder<Scalar>& encoder() { return encoder_; }
  PointEncoder<Scalar>& point_encoder() { return point_encoder_; }
  FusionBlock<Scalar>& fusion() { return fusion_; }
  DepthDecoder<Scalar>& decoder() { return decoder_; }

 private:
  ModelConfig config_;
  ErpEncoder<Scalar> encoder_;
  PointEncoder<Scalar> point_encoder_;
  FusionBlock<Scalar> fusion_;
  DepthDecoder<Scalar> decoder_;
  PointCoords deep_dirs_;
};

// "E36W" | u32 count | per tensor: u32 name length, name, u32 rank, u32 dims,
// little-endian float32 values.
void save_checkpoint(const std::filesystem::path& path, const ParamList<float>& params);
// Loads into existing tensors by name; names and shapes must match exactly.
void load_checkpoint(const std::filesystem::path& path, const ParamList<float>& params);

struct TrainResult {
  MetricsReport metrics;
  double first_loss = 0, final_loss = 0;
  int steps = 0;
  DepthMap prediction;
};

// Runs the overfit loop and writes log.csv, weights.e36w, metrics.json and
// pred.pfm under config.out. Throws NumericError naming the step on a
// non-finite loss.
TrainResult train_overfit(const TrainConfig& config);

}  // namespace e360

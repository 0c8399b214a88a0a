#include "elite360/model.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "elite360/errors.hpp"
#include "elite360/image_io.hpp"
#include "elite360/sphere.hpp"

namespace e360 {

std::vector<Index> ModelConfig::resolved_widths() const {
  return encoder_widths.empty() ? default_encoder_widths(channels, stages) : encoder_widths;
}

void ModelConfig::validate() const {
  if (height < 1 || width != 2 * height) throw ConfigError("model input must satisfy width = 2 * height");
  if (channels < 1) throw ConfigError("C must be positive");
  if (level < 0 || level > 10) throw ConfigError("l must lie in [0, 10]");
  if (stages < 1 || stages > 4) throw ConfigError("stages must lie in [1, 4]");
  const auto widths = resolved_widths();
  if (widths.size() != static_cast<std::size_t>(stages) + 1)
    throw ConfigError("encoder_widths needs stages + 1 entries");
  if (widths.back() != channels) throw ConfigError("the last encoder width must equal C");
  const Index smax = Index{2} << stages;
  if (height % smax != 0 || width % smax != 0)
    throw ConfigError("input size must be divisible by " + std::to_string(smax));
  if (!(max_depth > 0)) throw ConfigError("max_depth must be positive");
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"height", "width",  "C",         "l",   "blocks",    "knn",
                                              "stages", "seed",   "max_depth", "fusion", "encoder_widths",
                                              "steps",  "lr",     "log_every", "out", "scene"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  TrainConfig c;
  try {
    auto& m = c.model;
    m.height = j.value("height", m.height);
    m.width = j.value("width", 2 * m.height);
    m.channels = j.value("C", m.channels);
    m.level = j.value("l", m.level);
    m.blocks = j.value("blocks", m.blocks);
    m.knn = j.value("knn", m.knn);
    m.stages = j.value("stages", m.stages);
    m.seed = j.value("seed", m.seed);
    m.max_depth = j.value("max_depth", m.max_depth);
    if (j.contains("fusion")) m.fusion = parse_fusion_mode(j.at("fusion").get<std::string>());
    if (j.contains("encoder_widths")) m.encoder_widths = j.at("encoder_widths").get<std::vector<Index>>();
    c.steps = j.value("steps", c.steps);
    c.lr = j.value("lr", c.lr);
    c.log_every = j.value("log_every", c.log_every);
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("scene")) c.scene = box_scene_from_json(j.at("scene"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  if (c.steps < 0) throw ConfigError("steps must be nonnegative");
  if (!(c.lr > 0)) throw ConfigError("lr must be positive");
  c.model.validate();
  return c;
}

nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  const auto& m = c.model;
  j["height"] = m.height;
  j["width"] = m.width;
  j["C"] = m.channels;
  j["l"] = m.level;
  j["blocks"] = m.blocks;
  j["knn"] = m.knn;
  j["stages"] = m.stages;
  j["encoder_widths"] = m.resolved_widths();
  j["seed"] = m.seed;
  j["max_depth"] = m.max_depth;
  j["fusion"] = fusion_mode_name(m.fusion);
  j["steps"] = c.steps;
  j["lr"] = c.lr;
  j["log_every"] = c.log_every;
  j["out"] = c.out.string();
  j["scene"] = box_scene_to_json(c.scene);
  return j;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return train_config_from_json(j);
}

template <typename Scalar>
Elite360Model<Scalar>::Elite360Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  ErpEncoderConfig ec;
  ec.widths = config_.resolved_widths();
  ec.stages = config_.stages;
  encoder_ = ErpEncoder<Scalar>(ec, rng);

  PointEncoderConfig pc;
  pc.channels = config_.channels;
  pc.blocks = config_.blocks;
  pc.knn = config_.knn;
  point_encoder_ = PointEncoder<Scalar>(pc, rng);
  point_encoder_.output_size(icosap_face_count(config_.level));

  fusion_ = FusionBlock<Scalar>(config_.fusion, config_.channels, config_.channels, rng);
  decoder_ = DepthDecoder<Scalar>(ec.widths, fusion_.out_channels(), config_.max_depth, rng);

  const Index smax = ec.deepest_scale();
  deep_dirs_ = erp_direction_grid(config_.height / smax, config_.width / smax);
}

template <typename Scalar>
Tensor<Scalar> Elite360Model<Scalar>::operator()(const Tensor<Scalar>& erp, const IcosapPointSet<Scalar>& points) const {
  if (erp.rank() != 3 || erp.dim(1) != config_.height || erp.dim(2) != config_.width)
    throw DimensionError("model expects [3, " + std::to_string(config_.height) + ", " +
                         std::to_string(config_.width) + "], got " + shape_string(erp.shape()));
  const auto pyramid = encoder_(erp);
  const auto& deep = pyramid.deepest();
  const Index c = deep.dim(0), h = deep.dim(1), w = deep.dim(2);
  const auto fe = transpose(reshape(deep, {c, h * w}));
  const auto pf = point_encoder_(points);
  const auto fused = fusion_(fe, pf, deep_dirs_);
  const Index d = fused.dim(1);
  return decoder_(reshape(transpose(fused), {d, h, w}), pyramid);
}

template <typename Scalar>
ParamList<Scalar> Elite360Model<Scalar>::parameters() const {
  ParamList<Scalar> out;
  encoder_.collect("erp", out);
  point_encoder_.collect("points", out);
  fusion_.collect("fusion", out);
  decoder_.collect("decoder", out);
  return out;
}

template class Elite360Model<float>;
template class Elite360Model<double>;

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamList<float>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  out.write("E36W", 4);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (Index d : p.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : p.tensor.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw IoError(path.string() + ": write failed");
}

void load_checkpoint(const std::filesystem::path& path, const ParamList<float>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "E36W") throw IoError(path.string() + ": not a checkpoint");
  const std::uint32_t count = get_u32(in);
  if (count != params.size())
    throw IoError(path.string() + ": holds " + std::to_string(count) + " tensors, model has " +
                  std::to_string(params.size()));
  for (const auto& p : params) {
    const std::uint32_t len = get_u32(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in || name != p.name) throw IoError(path.string() + ": expected tensor '" + p.name + "'");
    const std::uint32_t rank = get_u32(in);
    Shape shape(rank);
    for (auto& d : shape) d = get_u32(in);
    if (shape != p.tensor.shape())
      throw IoError(path.string() + ": shape mismatch for '" + p.name + "': " + shape_string(shape));
    auto values = Tensor<float>(p.tensor).mutable_values();
    for (auto& v : values) v = std::bit_cast<float>(get_u32(in));
  }
}

TrainResult train_overfit(const TrainConfig& config) {
  const auto& mc = config.model;
  std::filesystem::create_directories(config.out);
  const SynthFrame frame = synth_box_scene(config.scene, mc.height, mc.width);
  const IcosapMesh mesh = build_icosap_mesh(mc.level);
  const IcosapPointSet<float> points = face_center_point_set(mesh, frame.rgb);
  const TensorF input = frame.rgb.to_tensor<float>();

  Elite360Model<float> model(mc);
  const auto params = model.parameters();
  std::vector<TensorF> tensors;
  for (const auto& p : params) tensors.push_back(p.tensor);
  AdamOptions opts;
  opts.lr = config.lr;
  Adam<float> adam(tensors, opts);

  std::FILE* log = std::fopen((config.out / "log.csv").c_str(), "w");
  if (!log) throw IoError("cannot open " + (config.out / "log.csv").string());
  std::fprintf(log, "step,total_loss,berhu,grad_loss\n");

  TrainResult result;
  result.steps = config.steps;
  for (int step = 0; step < config.steps; ++step) {
    try {
      const auto pred = model(input, points);
      const auto loss = total_loss(pred, frame.depth, frame.mask);
      const double total = loss.total.item();
      std::fprintf(log, "%d,%.9g,%.9g,%.9g\n", step, total, static_cast<double>(loss.berhu.item()),
                   static_cast<double>(loss.grad.item()));
      if (step == 0) result.first_loss = total;
      result.final_loss = total;
      if (config.log_every > 0 && (step % config.log_every == 0 || step + 1 == config.steps))
        std::printf("step %5d  loss %.6f\n", step, total);
      backward(loss.total);
      adam.step();
    } catch (const NumericError& e) {
      std::fclose(log);
      throw NumericError("non-finite value at step " + std::to_string(step) + ": " + e.what());
    }
  }
  std::fclose(log);

  const auto final_pred = model(input, points);
  result.prediction = Eigen::Map<const DepthMap>(final_pred.values().data(), mc.height, mc.width);
  result.metrics = compute_metrics(result.prediction, frame.depth, frame.mask);

  save_checkpoint(config.out / "weights.e36w", params);
  ImageF pred_img(1, mc.height, mc.width);
  pred_img.plane(0) = result.prediction;
  write_pfm(config.out / "pred.pfm", pred_img);
  std::ofstream(config.out / "metrics.json") << metrics_to_json(result.metrics).dump(2) << "\n";
  return result;
}

}  // namespace e360

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "elite360/image_io.hpp"
#include "elite360/manifest.hpp"
#include "elite360/model.hpp"

using namespace e360;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("e360_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ImageF pattern(Index c, Index h, Index w) {
  ImageF img(c, h, w);
  for (Index k = 0; k < c; ++k)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) img(k, i, j) = static_cast<float>((k * 31 + i * 7 + j * 3) % 256) / 255.0f;
  return img;
}

}  // namespace

TEST_CASE("PNG round trip is exact on 8-bit levels") {
  const auto dir = temp_dir("png");
  for (Index c : {1, 3}) {
    const auto img = pattern(c, 5, 9);
    write_png(dir / "a.png", img);
    const auto back = read_png(dir / "a.png");
    REQUIRE(back.channels() == c);
    CHECK(back.height() == 5);
    CHECK(back.width() == 9);
    for (std::size_t k = 0; k < img.data().size(); ++k) CHECK(back.data()[k] == doctest::Approx(img.data()[k]));
  }
  CHECK_THROWS_AS(read_png(dir / "missing.png"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("PFM round trip and big-endian input") {
  const auto dir = temp_dir("pfm");
  ImageF img(3, 4, 6);
  for (std::size_t k = 0; k < img.data().size(); ++k) img.data()[k] = 0.125f * static_cast<float>(k) - 3.0f;
  write_pfm(dir / "a.pfm", img);
  CHECK(read_pfm(dir / "a.pfm").data() == img.data());

  // Hand-written big-endian 2x1 gray map, rows stored bottom-to-top.
  {
    std::ofstream f(dir / "be.pfm", std::ios::binary);
    f << "Pf\n2 2\n1.0\n";
    const float vals[] = {3.0f, 4.0f, 1.0f, 2.0f};  // bottom row first
    for (float v : vals) {
      std::uint32_t u;
      std::memcpy(&u, &v, 4);
      const unsigned char b[4] = {static_cast<unsigned char>(u >> 24), static_cast<unsigned char>(u >> 16),
                                  static_cast<unsigned char>(u >> 8), static_cast<unsigned char>(u)};
      f.write(reinterpret_cast<const char*>(b), 4);
    }
  }
  const auto be = read_pfm(dir / "be.pfm");
  REQUIRE(be.channels() == 1);
  CHECK(be(0, 0, 0) == 1.0f);
  CHECK(be(0, 0, 1) == 2.0f);
  CHECK(be(0, 1, 0) == 3.0f);
  CHECK(be(0, 1, 1) == 4.0f);

  std::ofstream(dir / "bad.pfm") << "P6\n1 1\n255\n";
  CHECK_THROWS_AS(read_pfm(dir / "bad.pfm"), IoError);

  ImageF m(1, 2, 2);
  m(0, 0, 1) = 1.0f;
  write_pfm(dir / "m.pfm", m);
  const auto mask = read_mask(dir / "m.pfm");
  CHECK(mask.count() == 1);
  CHECK(mask(0, 1));
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = temp_dir("ckpt");
  Rng rng(1);
  ParamList<float> a = {{"w", uniform_tensor<float>({3, 4}, 1.0, rng)}, {"b", uniform_tensor<float>({4}, 1.0, rng)}};
  save_checkpoint(dir / "w.e36w", a);
  ParamList<float> b = {{"w", TensorF::zeros({3, 4}, true)}, {"b", TensorF::zeros({4}, true)}};
  load_checkpoint(dir / "w.e36w", b);
  for (std::size_t k = 0; k < a.size(); ++k)
    for (Index i = 0; i < a[k].tensor.numel(); ++i) CHECK(b[k].tensor[i] == a[k].tensor[i]);

  ParamList<float> renamed = {{"x", TensorF::zeros({3, 4}, true)}, {"b", TensorF::zeros({4}, true)}};
  CHECK_THROWS_AS(load_checkpoint(dir / "w.e36w", renamed), IoError);
  ParamList<float> reshaped = {{"w", TensorF::zeros({4, 3}, true)}, {"b", TensorF::zeros({4}, true)}};
  CHECK_THROWS_AS(load_checkpoint(dir / "w.e36w", reshaped), IoError);
  ParamList<float> shorter = {{"w", TensorF::zeros({3, 4}, true)}};
  CHECK_THROWS_AS(load_checkpoint(dir / "w.e36w", shorter), IoError);
  fs::remove_all(dir);
}

TEST_CASE("git blob hashes") {
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  const auto dir = temp_dir("hash");
  std::ofstream(dir / "h.txt", std::ios::binary) << "hello\n";
  CHECK(git_blob_hash_file(dir / "h.txt") == "ce013625030ba8dba906f756967f9e9ca394464a");

  RunManifest m;
  m.command = "test";
  m.config = {{"k", 1}};
  m.inputs = {dir / "h.txt"};
  const auto h1 = m.content_hash();
  m.config["k"] = 2;
  CHECK(m.content_hash() != h1);
  const auto path = m.write(dir);
  std::ifstream in(path);
  const auto j = nlohmann::json::parse(in);
  CHECK(j["command"] == "test");
  CHECK(j["inputs"][0]["blob"] == "ce013625030ba8dba906f756967f9e9ca394464a");
  fs::remove_all(dir);
}

TEST_CASE("training config parsing") {
  const auto c = train_config_from_json(nlohmann::json::parse(R"({"height": 32, "C": 16, "l": 2, "blocks": 2})"));
  CHECK(c.model.width == 64);
  CHECK(c.model.channels == 16);
  CHECK(c.model.resolved_widths().back() == 16);
  const auto again = train_config_from_json(nlohmann::json::parse(train_config_to_json(c).dump()));
  CHECK(train_config_to_json(again) == train_config_to_json(c));
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::parse(R"({"hieght": 32})")), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::parse(R"({"fusion": "sum"})")), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::parse(R"({"height": 40})")), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::parse(R"({"C": "wide"})")), ConfigError);
}

#include "elite360/manifest.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iterator>
#include <memory>

#include "elite360/errors.hpp"

namespace e360 {

std::string git_blob_hash(std::string_view data) {
  const std::string header = "blob " + std::to_string(data.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw IoError("SHA-1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 15]);
  }
  return hex;
}

std::string git_blob_hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return git_blob_hash(data);
}

std::string RunManifest::content_hash() const {
  std::string text = config.dump();
  for (const auto& p : inputs) text += "\n" + git_blob_hash_file(p);
  return git_blob_hash(text);
}

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = config;
  auto in = nlohmann::ordered_json::array();
  for (const auto& p : inputs) in.push_back({{"path", p.string()}, {"blob", git_blob_hash_file(p)}});
  j["inputs"] = in;
  j["content_hash"] = content_hash();
  auto out = nlohmann::ordered_json::array();
  for (const auto& p : outputs) out.push_back(p.string());
  j["outputs"] = out;
  return j;
}

std::filesystem::path RunManifest::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const auto path = dir / "manifest.json";
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  f << to_json().dump(2) << "\n";
  return path;
}

}  // namespace e360

#pragma once

// Run manifests written next to every command's outputs.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace e360 {

// SHA-1 of "blob <size>\0" + data, hex encoded (what `git hash-object` prints).
std::string git_blob_hash(std::string_view data);
std::string git_blob_hash_file(const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::uint64_t seed = 0;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;

  // Blob hash over the config text and every input's blob hash, in order.
  std::string content_hash() const;
  nlohmann::ordered_json to_json() const;
  // Writes dir/manifest.json and returns its path.
  std::filesystem::path write(const std::filesystem::path& dir) const;
};

}  // namespace e360

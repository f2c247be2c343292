#pragma once

// Run manifests: config, seeds and content hashes of inputs and outputs.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "treetext/common.hpp"

namespace treetext {

inline constexpr const char* kToolVersion = "0.1.0";

inline std::string file_hash(const std::string& path) { return detail::hex64(detail::fnv1a(detail::read_file(path))); }

struct Manifest {
  std::string subcommand;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::vector<std::uint64_t> seeds;
  nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
  nlohmann::ordered_json outputs = nlohmann::ordered_json::object();
  std::vector<std::string> args;  // effective command line, replayable with a different work directory

  void add_input(const std::string& path) {
    inputs[std::filesystem::path(path).filename().string()] = file_hash(path);
  }
  void add_output(const std::string& path) {
    outputs[std::filesystem::path(path).filename().string()] = file_hash(path);
  }

  std::string config_hash() const { return detail::hex64(detail::fnv1a(config.dump())); }

  nlohmann::ordered_json to_json() const {
    return {{"tool", "treetext"},
            {"version", kToolVersion},
            {"subcommand", subcommand},
            {"config_hash", config_hash()},
            {"config", config},
            {"seeds", seeds},
            {"args", args},
            {"inputs", inputs},
            {"outputs", outputs}};
  }

  void save(const std::string& path) const { detail::write_file(path, to_json().dump(2) + "\n"); }
};

}  // namespace treetext

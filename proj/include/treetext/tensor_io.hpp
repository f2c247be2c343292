#pragma once

// Flat binary tensor dump with a JSON shape manifest.
//
// Layout: "TTCK" | u32 version | u64 manifest length | manifest JSON |
// little-endian float64 payload. The manifest lists each tensor's name,
// shape and element offset plus free-form metadata.

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "treetext/common.hpp"

namespace treetext {

inline constexpr std::uint32_t kTensorArchiveVersion = 1;

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;
};

struct TensorArchive {
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;  // insertion order is file order

  void put(std::string name, std::vector<std::int64_t> shape, std::vector<double> data) {
    tensors.emplace_back(std::move(name), Tensor{std::move(shape), std::move(data)});
  }

  const Tensor& get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw Error("checkpoint has no tensor '" + name + "'");
  }

  std::string serialize() const {
    nlohmann::ordered_json manifest;
    manifest["meta"] = meta;
    auto list = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& [n, t] : tensors) {
      list.push_back({{"name", n}, {"shape", t.shape}, {"offset", offset}, {"size", t.data.size()}});
      offset += t.data.size();
    }
    manifest["tensors"] = std::move(list);
    std::string header = manifest.dump();
    std::string out = "TTCK";
    auto put_raw = [&out](const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); };
    std::uint32_t version = kTensorArchiveVersion;
    std::uint64_t hlen = header.size();
    put_raw(&version, sizeof(version));
    put_raw(&hlen, sizeof(hlen));
    out += header;
    for (const auto& [n, t] : tensors) put_raw(t.data.data(), t.data.size() * sizeof(double));
    return out;
  }

  static TensorArchive deserialize(const std::string& bytes, const std::string& source = "<checkpoint>") {
    if (bytes.size() < 16 || bytes.compare(0, 4, "TTCK") != 0) throw Error(source + ": not a tensor archive");
    std::uint32_t version;
    std::uint64_t hlen;
    std::memcpy(&version, bytes.data() + 4, sizeof(version));
    std::memcpy(&hlen, bytes.data() + 8, sizeof(hlen));
    if (version != kTensorArchiveVersion) throw Error(source + ": unsupported archive version");
    if (16 + hlen > bytes.size()) throw Error(source + ": truncated manifest");
    auto manifest = nlohmann::ordered_json::parse(bytes.substr(16, hlen));
    TensorArchive a;
    a.meta = manifest.at("meta");
    const std::size_t base = 16 + hlen;
    for (const auto& e : manifest.at("tensors")) {
      Tensor t;
      t.shape = e.at("shape").get<std::vector<std::int64_t>>();
      auto off = e.at("offset").get<std::uint64_t>();
      auto size = e.at("size").get<std::uint64_t>();
      if (base + (off + size) * sizeof(double) > bytes.size()) throw Error(source + ": truncated payload");
      t.data.resize(size);
      std::memcpy(t.data.data(), bytes.data() + base + off * sizeof(double), size * sizeof(double));
      a.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    return a;
  }

  void save(const std::string& path) const { detail::write_file(path, serialize()); }
  static TensorArchive load(const std::string& path) { return deserialize(detail::read_file(path), path); }
};

}  // namespace treetext

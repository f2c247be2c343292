#pragma once

// Hashed character n-gram text features.

#include <algorithm>
#include <cstdint>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "treetext/common.hpp"
#include "treetext/nn.hpp"

namespace treetext {

// Calls fn(hash) for every character n-gram of `text` with min_n <= n <= max_n.
template <typename Fn>
void for_each_ngram_hash(std::string_view text, int min_n, int max_n, Fn&& fn) {
  for (int n = min_n; n <= max_n; ++n) {
    if (text.size() < static_cast<std::size_t>(n)) break;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= text.size(); ++i)
      fn(detail::fnv1a(text.substr(i, static_cast<std::size_t>(n))));
  }
}

// Signed feature hashing of 3..5-grams into `dim` coordinates, L2-normalized.
inline nn::Vec embed_text(std::string_view text, int dim = 256) {
  nn::Vec v = nn::Vec::Zero(dim);
  for_each_ngram_hash(text, 3, 5, [&](std::uint64_t h) {
    v[static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim))] += (h >> 63) ? -1.0 : 1.0;
  });
  double norm = v.norm();
  if (norm > 0) v /= norm;
  return v;
}

class EmbeddingCache {
 public:
  explicit EmbeddingCache(int dim = 256) : dim_(dim) {}

  const nn::Vec& get(const std::string& text) {
    std::lock_guard lock(mu_);
    auto it = cache_.find(text);
    if (it != cache_.end()) return it->second;
    ++computed_;
    return cache_.emplace(text, embed_text(text, dim_)).first->second;
  }

  int dim() const { return dim_; }
  std::size_t size() const { return cache_.size(); }
  std::size_t computed() const { return computed_; }

 private:
  int dim_;
  std::mutex mu_;
  std::unordered_map<std::string, nn::Vec> cache_;
  std::size_t computed_ = 0;
};

}  // namespace treetext

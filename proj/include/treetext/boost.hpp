#pragma once

// Second-order logistic gradient boosting with exact greedy splits.
//
// Trees are grown level-wise over presorted feature columns. Each round fits
// one tree on a Bernoulli row subsample and a per-tree column subsample; the
// left branch always takes `x <= threshold`. After fitting, every leaf gets its
// unweighted positive rate and support on the full training rows.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "treetext/common.hpp"
#include "treetext/windows.hpp"

namespace treetext {

struct BoostConfig {
  int max_depth = 5;
  int n_rounds = 30;
  double learning_rate = 0.1;
  double subsample = 0.8;
  double colsample_per_tree = 0.8;
  double min_child_weight = 5.0;
  double gamma = 0.0;
  double lambda = 1.0;
  // N_neg / N_pos of the training rows when unset.
  std::optional<double> scale_pos_weight;
  int early_stopping_patience = 10;
  std::uint64_t seed = 42;

  void validate() const {
    if (max_depth < 0) throw Error("max_depth must be >= 0");
    if (n_rounds < 0) throw Error("n_rounds must be >= 0");
    if (!(learning_rate > 0)) throw Error("learning_rate must be > 0");
    if (!(subsample > 0 && subsample <= 1)) throw Error("subsample must be in (0, 1]");
    if (!(colsample_per_tree > 0 && colsample_per_tree <= 1)) throw Error("colsample_per_tree must be in (0, 1]");
    if (min_child_weight < 0 || gamma < 0 || lambda < 0) throw Error("regularizers must be >= 0");
    if (scale_pos_weight && !(*scale_pos_weight > 0)) throw Error("scale_pos_weight must be > 0");
  }
};

struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int parent = -1;
  // Never exercised: summaries encode missingness explicitly. Kept for the file format.
  bool default_left = true;
  double weight = 0.0;  // log-odds increment, learning rate applied
  double p_leaf = 0.0;
  std::size_t n_leaf = 0;
  std::size_t n_pos = 0;

  bool is_leaf() const { return left < 0; }
};

struct PathStep {
  int feature;
  double threshold;
  bool went_left;  // true: x <= threshold
};

struct Tree {
  std::vector<TreeNode> nodes;  // node 0 is the root; leaf ids are node indices

  int route(const double* x) const {
    int n = 0;
    while (!nodes[n].is_leaf()) {
      const auto& node = nodes[n];
      double v = x[node.feature];
      bool left = std::isnan(v) ? node.default_left : v <= node.threshold;
      n = left ? node.left : node.right;
    }
    return n;
  }

  bool is_leaf_id(int leaf) const {
    return leaf >= 0 && static_cast<std::size_t>(leaf) < nodes.size() && nodes[leaf].is_leaf();
  }

  std::vector<int> leaves() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].is_leaf()) out.push_back(static_cast<int>(i));
    return out;
  }

  // Split conditions from the root down to `leaf`.
  std::vector<PathStep> path_to(int leaf) const {
    if (!is_leaf_id(leaf)) throw Error("unknown leaf id " + std::to_string(leaf));
    std::vector<PathStep> rev;
    int child = leaf;
    for (int p = nodes[leaf].parent; p >= 0; child = p, p = nodes[p].parent)
      rev.push_back({nodes[p].feature, nodes[p].threshold, nodes[p].left == child});
    return {rev.rbegin(), rev.rend()};
  }
};

struct LeafHit {
  int tree;
  int leaf;
  bool operator==(const LeafHit&) const = default;
};

struct TreeEnsemble {
  double window = 0.0;
  double base_score = 0.0;
  BoostConfig config;
  std::vector<std::string> feature_names;
  std::vector<Tree> trees;

  std::size_t num_features() const { return feature_names.size(); }
  const TreeNode& leaf(int tree, int leaf_id) const {
    if (tree < 0 || static_cast<std::size_t>(tree) >= trees.size())
      throw Error("unknown tree index " + std::to_string(tree));
    if (!trees[tree].is_leaf_id(leaf_id)) throw Error("unknown leaf id " + std::to_string(leaf_id));
    return trees[tree].nodes[leaf_id];
  }
};

// Row-major feature matrix with binary labels.
struct Dataset {
  std::size_t num_features = 0;
  std::vector<double> x;
  std::vector<int> y;
  std::vector<std::string> row_names;  // optional, used in error messages

  std::size_t rows() const { return y.size(); }
  const double* row(std::size_t i) const { return x.data() + i * num_features; }

  void push(std::span<const double> features, int label, std::string name = {}) {
    if (num_features == 0 && x.empty()) num_features = features.size();
    if (features.size() != num_features) throw Error("feature dimension mismatch");
    x.insert(x.end(), features.begin(), features.end());
    y.push_back(label);
    if (!name.empty() || !row_names.empty()) {
      row_names.resize(y.size() - 1);
      row_names.push_back(std::move(name));
    }
  }
};

inline Dataset make_dataset(const SummaryBank& bank, double window, Split split) {
  Dataset d;
  d.num_features = bank.num_features();
  for (const auto* r : bank.rows_for(window, split))
    d.push(r->stats, r->label,
           r->patient_id + "@t=" + detail::format_shortest(r->window.end) + ",W=" + detail::format_shortest(window));
  return d;
}

inline std::vector<LeafHit> route(const TreeEnsemble& ens, std::span<const double> row) {
  if (row.size() != ens.num_features()) throw Error("row dimension does not match the ensemble");
  std::vector<LeafHit> out;
  out.reserve(ens.trees.size());
  for (std::size_t b = 0; b < ens.trees.size(); ++b)
    out.push_back({static_cast<int>(b), ens.trees[b].route(row.data())});
  return out;
}

inline double predict_margin(const TreeEnsemble& ens, const double* x) {
  double m = ens.base_score;
  for (const auto& t : ens.trees) m += t.nodes[t.route(x)].weight;
  return m;
}

inline double predict_proba(const TreeEnsemble& ens, std::span<const double> row) {
  if (row.size() != ens.num_features()) throw Error("row dimension does not match the ensemble");
  return detail::sigmoid(predict_margin(ens, row.data()));
}

struct BoostLog {
  std::vector<double> train_logloss;  // weighted, full train rows, after each round
  std::vector<double> val_logloss;
  int best_round = -1;
  int rounds_fit = 0;
};

namespace detail {

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

inline double leaf_objective(double g, double h, double lambda) { return g * g / (h + lambda); }

inline double weighted_logloss(const std::vector<double>& margin, const std::vector<int>& y,
                               const std::vector<double>& w) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    num += w[i] * bce_with_logit(margin[i], y[i]);
    den += w[i];
  }
  return den > 0 ? num / den : 0.0;
}

// Grows one tree on the sampled rows. `presorted[f]` lists all row indices by ascending x[f].
inline Tree grow_tree(const Dataset& data, const std::vector<std::vector<std::uint32_t>>& presorted,
                      const std::vector<double>& grad, const std::vector<double>& hess,
                      const std::vector<char>& in_sample, const std::vector<int>& features,
                      const BoostConfig& cfg) {
  constexpr double kMinGain = 1e-12;
  const std::size_t n = data.rows();
  Tree tree;
  tree.nodes.emplace_back();
  std::vector<int> pos(n, -1);
  double g0 = 0, h0 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!in_sample[i]) continue;
    pos[i] = 0;
    g0 += grad[i];
    h0 += hess[i];
  }
  std::vector<double> node_g{g0}, node_h{h0};
  std::vector<int> frontier{0};

  for (int depth = 0; depth < cfg.max_depth && !frontier.empty(); ++depth) {
    const std::size_t nn = tree.nodes.size();
    std::vector<SplitCandidate> best(nn);
    std::vector<char> active(nn, 0);
    for (int id : frontier) active[id] = 1;

    std::vector<double> gl(nn), hl(nn), last(nn);
    std::vector<char> seen(nn);
    for (int f : features) {
      std::fill(gl.begin(), gl.end(), 0.0);
      std::fill(hl.begin(), hl.end(), 0.0);
      std::fill(seen.begin(), seen.end(), 0);
      for (std::uint32_t i : presorted[f]) {
        int node = pos[i];
        if (node < 0 || !active[node]) continue;
        double v = data.row(i)[f];
        if (seen[node] && v != last[node]) {
          double gr = node_g[node] - gl[node], hr = node_h[node] - hl[node];
          if (hl[node] >= cfg.min_child_weight && hr >= cfg.min_child_weight) {
            double gain = 0.5 * (leaf_objective(gl[node], hl[node], cfg.lambda) +
                                 leaf_objective(gr, hr, cfg.lambda) -
                                 leaf_objective(node_g[node], node_h[node], cfg.lambda)) -
                          cfg.gamma;
            if (gain > best[node].gain) {
              double thr = last[node] + (v - last[node]) / 2;
              if (!(thr < v)) thr = last[node];
              best[node] = {gain, f, thr};
            }
          }
        }
        gl[node] += grad[i];
        hl[node] += hess[i];
        last[node] = v;
        seen[node] = 1;
      }
    }

    std::vector<int> next;
    std::vector<int> remap(nn, -1);  // split node -> its left child id
    for (int id : frontier) {
      if (best[id].feature < 0 || best[id].gain <= kMinGain) continue;
      int l = static_cast<int>(tree.nodes.size());
      tree.nodes[id].feature = best[id].feature;
      tree.nodes[id].threshold = best[id].threshold;
      tree.nodes[id].left = l;
      tree.nodes[id].right = l + 1;
      TreeNode child;
      child.parent = id;
      tree.nodes.push_back(child);
      tree.nodes.push_back(child);
      node_g.push_back(0);
      node_g.push_back(0);
      node_h.push_back(0);
      node_h.push_back(0);
      remap[id] = l;
      next.push_back(l);
      next.push_back(l + 1);
    }
    for (std::size_t i = 0; i < n; ++i) {
      int node = pos[i];
      if (node < 0 || static_cast<std::size_t>(node) >= nn || remap[node] < 0) continue;
      const auto& sn = tree.nodes[node];
      int child = data.row(i)[sn.feature] <= sn.threshold ? sn.left : sn.right;
      pos[i] = child;
      node_g[child] += grad[i];
      node_h[child] += hess[i];
    }
    frontier = std::move(next);
  }

  for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
    if (!tree.nodes[id].is_leaf()) continue;
    tree.nodes[id].weight = -node_g[id] / (node_h[id] + cfg.lambda) * cfg.learning_rate;
  }
  return tree;
}

inline void check_finite(const Dataset& d, const char* which) {
  for (std::size_t i = 0; i < d.rows(); ++i)
    for (std::size_t f = 0; f < d.num_features; ++f)
      if (!std::isfinite(d.row(i)[f])) {
        std::string name = i < d.row_names.size() ? d.row_names[i] : "#" + std::to_string(i);
        throw Error(std::string("non-finite feature ") + std::to_string(f) + " in " + which + " row " + name);
      }
}

}  // namespace detail

// Recomputes (p_leaf, n_leaf) of every leaf from unweighted rows.
inline void attach_leaf_stats(TreeEnsemble& ens, const Dataset& train) {
  for (auto& tree : ens.trees) {
    for (auto& node : tree.nodes) {
      node.n_leaf = 0;
      node.n_pos = 0;
    }
    for (std::size_t i = 0; i < train.rows(); ++i) {
      auto& leaf = tree.nodes[tree.route(train.row(i))];
      ++leaf.n_leaf;
      leaf.n_pos += train.y[i] == 1;
    }
    for (auto& node : tree.nodes)
      if (node.is_leaf())
        node.p_leaf = node.n_leaf ? static_cast<double>(node.n_pos) / static_cast<double>(node.n_leaf) : 0.0;
  }
}

inline TreeEnsemble train_ensemble(const Dataset& train, const Dataset* val, const BoostConfig& cfg,
                                   BoostLog* log = nullptr, double window = 0.0,
                                   std::vector<std::string> feature_names = {}) {
  cfg.validate();
  const std::size_t n = train.rows();
  if (n == 0) throw Error("no training rows");
  const std::size_t npos = static_cast<std::size_t>(std::count(train.y.begin(), train.y.end(), 1));
  if (npos == 0 || npos == n) throw Error("training rows contain a single class");
  detail::check_finite(train, "train");
  if (val) {
    if (val->num_features != train.num_features) throw Error("validation feature dimension mismatch");
    detail::check_finite(*val, "validation");
  }
  const std::size_t nf = train.num_features;
  if (feature_names.empty())
    for (std::size_t f = 0; f < nf; ++f) feature_names.push_back("f" + std::to_string(f));
  if (feature_names.size() != nf) throw Error("feature name count mismatch");

  const double spw = cfg.scale_pos_weight.value_or(static_cast<double>(n - npos) / static_cast<double>(npos));
  std::vector<double> w(n);
  double wsum = 0, wpos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = train.y[i] == 1 ? spw : 1.0;
    wsum += w[i];
    wpos += train.y[i] == 1 ? w[i] : 0.0;
  }

  TreeEnsemble ens;
  ens.window = window;
  ens.config = cfg;
  ens.config.scale_pos_weight = spw;
  ens.feature_names = std::move(feature_names);
  ens.base_score = std::log(wpos / (wsum - wpos));

  std::vector<std::vector<std::uint32_t>> presorted(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    auto& idx = presorted[f];
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), 0u);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return train.row(a)[f] < train.row(b)[f]; });
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<double> margin(n, ens.base_score), grad(n), hess(n);
  std::vector<double> val_margin(val ? val->rows() : 0, ens.base_score);
  std::vector<char> in_sample(n);
  std::vector<int> all_features(nf);
  std::iota(all_features.begin(), all_features.end(), 0);
  const std::size_t ncol = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.colsample_per_tree * nf)));

  BoostLog local;
  double best_val = std::numeric_limits<double>::infinity();
  int best_round = -1;

  for (int round = 0; round < cfg.n_rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      double p = detail::sigmoid(margin[i]);
      grad[i] = (p - train.y[i]) * w[i];
      hess[i] = std::max(p * (1 - p), 1e-16) * w[i];
    }
    for (std::size_t i = 0; i < n; ++i)
      in_sample[i] = cfg.subsample >= 1.0 || detail::unit_interval(rng()) < cfg.subsample;

    // Partial Fisher-Yates, then sorted so ties in gain resolve to the lower feature index.
    std::vector<int> feats = all_features;
    for (std::size_t k = 0; k < ncol; ++k) {
      std::size_t j = k + static_cast<std::size_t>(rng() % (nf - k));
      std::swap(feats[k], feats[j]);
    }
    feats.resize(ncol);
    std::sort(feats.begin(), feats.end());

    Tree tree = detail::grow_tree(train, presorted, grad, hess, in_sample, feats, cfg);
    for (std::size_t i = 0; i < n; ++i) margin[i] += tree.nodes[tree.route(train.row(i))].weight;
    local.train_logloss.push_back(detail::weighted_logloss(margin, train.y, w));
    ens.trees.push_back(std::move(tree));

    if (val && val->rows() > 0) {
      const auto& t = ens.trees.back();
      double loss = 0;
      for (std::size_t i = 0; i < val->rows(); ++i) {
        val_margin[i] += t.nodes[t.route(val->row(i))].weight;
        loss += detail::bce_with_logit(val_margin[i], val->y[i]);
      }
      loss /= static_cast<double>(val->rows());
      local.val_logloss.push_back(loss);
      if (loss < best_val) {
        best_val = loss;
        best_round = round;
      } else if (round - best_round >= cfg.early_stopping_patience) {
        break;
      }
    }
  }
  local.rounds_fit = static_cast<int>(ens.trees.size());
  if (best_round >= 0) ens.trees.resize(static_cast<std::size_t>(best_round) + 1);
  local.best_round = best_round >= 0 ? best_round : static_cast<int>(ens.trees.size()) - 1;

  attach_leaf_stats(ens, train);
  if (log) *log = std::move(local);
  return ens;
}

// ---- serialization -------------------------------------------------------

inline constexpr int kEnsembleFormatVersion = 1;

namespace detail {

inline nlohmann::ordered_json node_to_json(const Tree& t, int id) {
  const auto& n = t.nodes[id];
  nlohmann::ordered_json j;
  j["nodeid"] = id;
  if (n.is_leaf()) {
    j["leaf"] = n.weight;
    j["p_leaf"] = n.p_leaf;
    j["n_leaf"] = n.n_leaf;
    j["n_pos"] = n.n_pos;
  } else {
    j["split"] = n.feature;
    j["threshold"] = n.threshold;
    j["default_left"] = n.default_left;
    j["children"] = {node_to_json(t, n.left), node_to_json(t, n.right)};
  }
  return j;
}

inline void node_from_json(const nlohmann::json& j, Tree& t, int parent) {
  int id = j.at("nodeid").get<int>();
  if (id < 0) throw Error("negative node id");
  if (static_cast<std::size_t>(id) >= t.nodes.size()) t.nodes.resize(static_cast<std::size_t>(id) + 1);
  auto& n = t.nodes[id];
  n.parent = parent;
  if (j.contains("leaf")) {
    n.weight = j.at("leaf").get<double>();
    n.p_leaf = j.at("p_leaf").get<double>();
    n.n_leaf = j.at("n_leaf").get<std::size_t>();
    n.n_pos = j.value("n_pos", static_cast<std::size_t>(std::llround(n.p_leaf * static_cast<double>(n.n_leaf))));
    if (!std::isfinite(n.weight)) throw Error("non-finite leaf weight");
    return;
  }
  n.feature = j.at("split").get<int>();
  n.threshold = j.at("threshold").get<double>();
  n.default_left = j.value("default_left", true);
  const auto& ch = j.at("children");
  if (!ch.is_array() || ch.size() != 2) throw Error("internal node needs two children");
  int l = ch[0].at("nodeid").get<int>(), r = ch[1].at("nodeid").get<int>();
  t.nodes[id].left = l;
  t.nodes[id].right = r;
  node_from_json(ch[0], t, id);
  node_from_json(ch[1], t, id);
}

}  // namespace detail

inline nlohmann::ordered_json ensemble_to_json(const TreeEnsemble& ens) {
  nlohmann::ordered_json j;
  j["format"] = "treetext-ensemble";
  j["version"] = kEnsembleFormatVersion;
  j["window"] = ens.window;
  j["base_score"] = ens.base_score;
  const auto& c = ens.config;
  j["config"] = {{"max_depth", c.max_depth},
                 {"n_rounds", c.n_rounds},
                 {"learning_rate", c.learning_rate},
                 {"subsample", c.subsample},
                 {"colsample_per_tree", c.colsample_per_tree},
                 {"min_child_weight", c.min_child_weight},
                 {"gamma", c.gamma},
                 {"lambda", c.lambda},
                 {"scale_pos_weight", c.scale_pos_weight.value_or(0.0)},
                 {"early_stopping_patience", c.early_stopping_patience},
                 {"seed", c.seed}};
  j["feature_names"] = ens.feature_names;
  auto trees = nlohmann::ordered_json::array();
  for (const auto& t : ens.trees) trees.push_back(detail::node_to_json(t, 0));
  j["trees"] = std::move(trees);
  return j;
}

inline TreeEnsemble ensemble_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "treetext-ensemble") throw Error("not a treetext ensemble file");
  if (j.value("version", 0) != kEnsembleFormatVersion)
    throw Error("unsupported ensemble format version " + std::to_string(j.value("version", 0)));
  TreeEnsemble ens;
  ens.window = j.at("window").get<double>();
  ens.base_score = j.at("base_score").get<double>();
  const auto& c = j.at("config");
  ens.config.max_depth = c.at("max_depth").get<int>();
  ens.config.n_rounds = c.at("n_rounds").get<int>();
  ens.config.learning_rate = c.at("learning_rate").get<double>();
  ens.config.subsample = c.at("subsample").get<double>();
  ens.config.colsample_per_tree = c.at("colsample_per_tree").get<double>();
  ens.config.min_child_weight = c.at("min_child_weight").get<double>();
  ens.config.gamma = c.at("gamma").get<double>();
  ens.config.lambda = c.at("lambda").get<double>();
  double spw = c.at("scale_pos_weight").get<double>();
  if (spw > 0) ens.config.scale_pos_weight = spw;
  ens.config.early_stopping_patience = c.at("early_stopping_patience").get<int>();
  ens.config.seed = c.at("seed").get<std::uint64_t>();
  ens.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  for (const auto& tj : j.at("trees")) {
    Tree t;
    detail::node_from_json(tj, t, -1);
    for (const auto& n : t.nodes)
      if (!n.is_leaf() && (n.feature < 0 || static_cast<std::size_t>(n.feature) >= ens.feature_names.size()))
        throw Error("split feature out of range");
    ens.trees.push_back(std::move(t));
  }
  return ens;
}

}  // namespace treetext

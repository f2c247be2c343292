#pragma once

// Minimal dense layers with hand-written backward passes, plus AdamW.
// Activations are row-per-token matrices (N x d). Layers hold parameters
// only; per-call intermediates live in caller-owned cache structs so one
// layer can serve many independent forward passes before a backward.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "treetext/common.hpp"

namespace treetext::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(); }
};

// Box-Muller over mt19937_64 so initialization is identical across standard libraries.
class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : rng_(seed) {}
  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0;
    while (u1 <= 0) u1 = detail::unit_interval(rng_());
    double u2 = detail::unit_interval(rng_());
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2 * M_PI * u2);
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0;
  bool has_spare_ = false;
};

inline Mat gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Gaussian& g) {
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = g() * stddev;
  return m;
}

struct Linear {
  Param weight;  // out x in
  Param bias;    // 1 x out
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, Gaussian& g, bool with_bias = true)
      : weight(name + ".weight", gaussian_matrix(out, in, 1.0 / std::sqrt(static_cast<double>(in)), g)),
        bias(name + ".bias", Mat::Zero(1, out)),
        has_bias(with_bias) {}

  Mat forward(const Mat& x) const {
    Mat y = x * weight.value.transpose();
    if (has_bias) y.rowwise() += bias.value.row(0);
    return y;
  }

  Mat backward(const Mat& dy, const Mat& x) {
    weight.grad.noalias() += dy.transpose() * x;
    if (has_bias) bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value;
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
  }
};

struct LayerNorm {
  Param gamma, beta;
  double eps = 1e-5;

  struct Cache {
    Mat xhat;
    Vec rstd;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, Eigen::Index dim)
      : gamma(name + ".gamma", Mat::Ones(1, dim)), beta(name + ".beta", Mat::Zero(1, dim)) {}

  Mat forward(const Mat& x, Cache& c) const {
    const double d = static_cast<double>(x.cols());
    Vec mean = x.rowwise().sum() / d;
    Mat centered = x.colwise() - mean;
    Vec var = centered.array().square().rowwise().sum() / d;
    c.rstd = (var.array() + eps).rsqrt();
    c.xhat = centered.array().colwise() * c.rstd.array();
    Mat y = c.xhat.array().rowwise() * gamma.value.row(0).array();
    y.rowwise() += beta.value.row(0);
    return y;
  }

  Mat backward(const Mat& dy, const Cache& c) {
    gamma.grad.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    beta.grad.row(0) += dy.colwise().sum();
    const double d = static_cast<double>(dy.cols());
    Mat dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    Vec s1 = dxhat.rowwise().sum();
    Vec s2 = (dxhat.array() * c.xhat.array()).rowwise().sum();
    Mat dx = (d * dxhat.array() - c.xhat.array().colwise() * s2.array()).colwise() - s1.array();
    dx.array().colwise() *= c.rstd.array() / d;
    return dx;
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

inline Mat gelu(const Mat& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v))); });
}

inline Mat gelu_grad(const Mat& x) {
  return x.unaryExpr([](double v) {
    double t = std::tanh(kGeluC * (v + 0.044715 * v * v * v));
    return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
  });
}

// Multi-head self-attention without masking or positional terms.
struct SelfAttention {
  Linear q, k, v, o;
  int heads = 1;

  struct Cache {
    Mat x, qm, km, vm, concat;
    std::vector<Mat> attn;  // per head, N x N
  };

  SelfAttention() = default;
  SelfAttention(const std::string& name, Eigen::Index dim, int num_heads, Gaussian& g)
      : q(name + ".q", dim, dim, g), k(name + ".k", dim, dim, g), v(name + ".v", dim, dim, g),
        o(name + ".o", dim, dim, g), heads(num_heads) {
    if (dim % num_heads != 0) throw Error("model width must be divisible by the head count");
  }

  Mat forward(const Mat& x, Cache& c) const {
    const Eigen::Index n = x.rows(), dim = x.cols(), dh = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    c.x = x;
    c.qm = q.forward(x);
    c.km = k.forward(x);
    c.vm = v.forward(x);
    c.concat.resize(n, dim);
    c.attn.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Mat s = (c.qm.middleCols(h * dh, dh) * c.km.middleCols(h * dh, dh).transpose()) * scale;
      Vec mx = s.rowwise().maxCoeff();
      s = (s.colwise() - mx).array().exp();
      Vec sum = s.rowwise().sum();
      s.array().colwise() /= sum.array();
      c.concat.middleCols(h * dh, dh).noalias() = s * c.vm.middleCols(h * dh, dh);
      c.attn[static_cast<std::size_t>(h)] = std::move(s);
    }
    return o.forward(c.concat);
  }

  Mat backward(const Mat& dy, const Cache& c) {
    const Eigen::Index n = c.x.rows(), dim = c.x.cols(), dh = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat dconcat = o.backward(dy, c.concat);
    Mat dq(n, dim), dk(n, dim), dv(n, dim);
    for (int h = 0; h < heads; ++h) {
      const Mat& a = c.attn[static_cast<std::size_t>(h)];
      auto doh = dconcat.middleCols(h * dh, dh);
      Mat da = doh * c.vm.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = a.transpose() * doh;
      Vec rs = (da.array() * a.array()).rowwise().sum();
      Mat ds = (a.array() * (da.colwise() - rs).array()) * scale;
      dq.middleCols(h * dh, dh).noalias() = ds * c.km.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.qm.middleCols(h * dh, dh);
    }
    Mat dx = q.backward(dq, c.x);
    dx += k.backward(dk, c.x);
    dx += v.backward(dv, c.x);
    return dx;
  }

  void collect(std::vector<Param*>& out) {
    q.collect(out);
    k.collect(out);
    v.collect(out);
    o.collect(out);
  }
};

// Pre-norm encoder block: x + Attn(LN(x)), then + FF(LN(.)).
struct EncoderLayer {
  LayerNorm ln1, ln2;
  SelfAttention attn;
  Linear ff1, ff2;

  struct Cache {
    LayerNorm::Cache ln1, ln2;
    SelfAttention::Cache attn;
    Mat h1, x1, h2, pre, act;
  };

  EncoderLayer() = default;
  EncoderLayer(const std::string& name, Eigen::Index dim, int heads, Eigen::Index ff_dim, Gaussian& g)
      : ln1(name + ".ln1", dim), ln2(name + ".ln2", dim), attn(name + ".attn", dim, heads, g),
        ff1(name + ".ff1", dim, ff_dim, g), ff2(name + ".ff2", ff_dim, dim, g) {}

  Mat forward(const Mat& x, Cache& c) const {
    c.h1 = ln1.forward(x, c.ln1);
    c.x1 = x + attn.forward(c.h1, c.attn);
    c.h2 = ln2.forward(c.x1, c.ln2);
    c.pre = ff1.forward(c.h2);
    c.act = gelu(c.pre);
    return c.x1 + ff2.forward(c.act);
  }

  Mat backward(const Mat& dy, const Cache& c) {
    Mat dact = ff2.backward(dy, c.act);
    Mat dpre = dact.cwiseProduct(gelu_grad(c.pre));
    Mat dx1 = dy + ln2.backward(ff1.backward(dpre, c.h2), c.ln2);
    return dx1 + ln1.backward(attn.backward(dx1, c.attn), c.ln1);
  }

  void collect(std::vector<Param*>& out) {
    ln1.collect(out);
    attn.collect(out);
    ln2.collect(out);
    ff1.collect(out);
    ff2.collect(out);
  }
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Decoupled weight decay Adam over one parameter group.
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<Param*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      m_[i] = cfg_.beta1 * m_[i] + (1 - cfg_.beta1) * p.grad;
      v_[i] = cfg_.beta2 * v_[i] + (1 - cfg_.beta2) * p.grad.cwiseAbs2();
      p.value *= 1.0 - cfg_.lr * cfg_.weight_decay;
      p.value.array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  std::int64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<Param*> params_;
  AdamWConfig cfg_;
  std::vector<Mat> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace treetext::nn

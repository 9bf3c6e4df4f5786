#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "phrasebreak/error.hpp"
#include "phrasebreak/neural/tensor.hpp"

namespace phrasebreak::neural {

// Layers own their parameters but keep no per-call state: forward() fills a
// caller-owned cache that backward() consumes, so one layer can serve many
// sequences of a batch. backward() accumulates into parameter gradients and
// returns the gradient with respect to the layer input.

template <typename T>
class Embedding {
 public:
  Embedding() = default;
  Embedding(const std::string& name, std::size_t vocab, std::size_t dim) : table(name + ".weight", {vocab, dim}) {}

  Parameter<T> table;

  std::size_t vocab_size() const { return table.value.rows(); }
  std::size_t dim() const { return table.value.cols(); }

  Tensor<T> forward(std::span<const int> ids) const {
    Tensor<T> out(ids.size(), dim());
    for (std::size_t t = 0; t < ids.size(); ++t) {
      check_id(ids[t]);
      auto src = table.value.row(static_cast<std::size_t>(ids[t]));
      std::copy(src.begin(), src.end(), out.row(t).begin());
    }
    return out;
  }

  void backward(std::span<const int> ids, const Tensor<T>& dy) {
    for (std::size_t t = 0; t < ids.size(); ++t) {
      auto dst = table.grad.row(static_cast<std::size_t>(ids[t]));
      auto src = dy.row(t);
      for (std::size_t d = 0; d < dst.size(); ++d) dst[d] += src[d];
    }
  }

  ParameterRefs<T> parameters() { return {&table}; }

 private:
  void check_id(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size()) {
      fail(ErrorKind::out_of_range, table.name + ": id " + std::to_string(id) + " outside [0, " +
                                        std::to_string(vocab_size()) + ")");
    }
  }
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, bool with_bias = true)
      : weight(name + ".weight", {in, out}), bias(name + ".bias", {with_bias ? out : 0}), has_bias_(with_bias) {}

  Parameter<T> weight;  // [in x out]
  Parameter<T> bias;    // [out], empty when the layer has no bias

  std::size_t in_features() const { return weight.value.rows(); }
  std::size_t out_features() const { return weight.value.cols(); }
  bool has_bias() const { return has_bias_; }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.cols() != in_features()) {
      fail(ErrorKind::shape_mismatch, weight.name + ": input width " + std::to_string(x.cols()) + ", expected " +
                                          std::to_string(in_features()));
    }
    Tensor<T> y(x.rows(), out_features());
    if (has_bias_) {
      for (std::size_t r = 0; r < y.rows(); ++r) std::copy(bias.value.data(), bias.value.data() + out_features(), y.row(r).begin());
    }
    kernels::gemm_nn(x.rows(), in_features(), out_features(), x.data(), weight.value.data(), y.data());
    return y;
  }

  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy) {
    kernels::gemm_tn(x.rows(), in_features(), out_features(), x.data(), dy.data(), weight.grad.data());
    if (has_bias_) {
      for (std::size_t r = 0; r < dy.rows(); ++r) {
        auto src = dy.row(r);
        for (std::size_t j = 0; j < src.size(); ++j) bias.grad[j] += src[j];
      }
    }
    Tensor<T> dx(x.rows(), in_features());
    kernels::gemm_nt(dy.rows(), out_features(), in_features(), dy.data(), weight.value.data(), dx.data());
    return dx;
  }

  void init_xavier(std::mt19937_64& rng) {
    init_xavier_uniform(weight.value, in_features(), out_features(), rng);
    bias.value.zero();
  }

  void init_normal_weights(double stddev, std::mt19937_64& rng) {
    init_normal(weight.value, stddev, rng);
    bias.value.zero();
  }

  ParameterRefs<T> parameters() {
    if (has_bias_) return {&weight, &bias};
    return {&weight};
  }

 private:
  bool has_bias_ = true;
};

// ---------------------------------------------------------------------------
// LSTM. Gate blocks in the 4H axis are ordered input, forget, cell, output.

template <typename T>
class LstmDirection {
 public:
  struct Cache {
    Tensor<T> x;
    Tensor<T> gates;  // post-activation [T x 4H]
    Tensor<T> cells;  // [T x H]
    Tensor<T> tanh_cells;
    Tensor<T> hidden;
  };

  LstmDirection() = default;
  LstmDirection(const std::string& name, std::size_t input, std::size_t hidden, bool reverse)
      : w_input(name + ".w_input", {input, 4 * hidden}),
        w_hidden(name + ".w_hidden", {hidden, 4 * hidden}),
        bias(name + ".bias", {4 * hidden}),
        reverse_(reverse) {}

  Parameter<T> w_input;
  Parameter<T> w_hidden;
  Parameter<T> bias;

  std::size_t input_size() const { return w_input.value.rows(); }
  std::size_t hidden_size() const { return w_hidden.value.rows(); }
  bool reverse() const { return reverse_; }

  Tensor<T> forward(const Tensor<T>& x, Cache& cache) const {
    const std::size_t steps = x.rows();
    const std::size_t H = hidden_size();
    const std::size_t G = 4 * H;
    if (x.cols() != input_size() && steps > 0) {
      fail(ErrorKind::shape_mismatch, w_input.name + ": input width " + std::to_string(x.cols()) + ", expected " +
                                          std::to_string(input_size()));
    }
    cache.x = x;
    cache.gates = Tensor<T>(steps, G);
    cache.cells = Tensor<T>(steps, H);
    cache.tanh_cells = Tensor<T>(steps, H);
    cache.hidden = Tensor<T>(steps, H);
    for (std::size_t t = 0; t < steps; ++t) std::copy(bias.value.data(), bias.value.data() + G, cache.gates.row(t).begin());
    kernels::gemm_nn(steps, input_size(), G, x.data(), w_input.value.data(), cache.gates.data());

    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t t = reverse_ ? steps - 1 - s : s;
      T* z = cache.gates.data() + t * G;
      const T* c_prev = nullptr;
      if (s > 0) {
        const std::size_t tp = reverse_ ? t + 1 : t - 1;
        kernels::gemm_nn(1, H, G, cache.hidden.data() + tp * H, w_hidden.value.data(), z);
        c_prev = cache.cells.data() + tp * H;
      }
      for (std::size_t j = 0; j < H; ++j) {
        const T i = sigmoid(z[j]);
        const T f = sigmoid(z[H + j]);
        const T g = std::tanh(z[2 * H + j]);
        const T o = sigmoid(z[3 * H + j]);
        z[j] = i;
        z[H + j] = f;
        z[2 * H + j] = g;
        z[3 * H + j] = o;
        const T c = (c_prev ? f * c_prev[j] : T{0}) + i * g;
        const T tc = std::tanh(c);
        cache.cells(t, j) = c;
        cache.tanh_cells(t, j) = tc;
        cache.hidden(t, j) = o * tc;
      }
    }
    return cache.hidden;
  }

  Tensor<T> backward(const Cache& cache, const Tensor<T>& dh_out) {
    const std::size_t steps = cache.x.rows();
    const std::size_t H = hidden_size();
    const std::size_t G = 4 * H;
    Tensor<T> dz(steps, G);
    std::vector<T> dh_next(H, T{0});
    std::vector<T> dc_next(H, T{0});
    for (std::size_t s = steps; s-- > 0;) {
      const std::size_t t = reverse_ ? steps - 1 - s : s;
      const bool has_prev = s > 0;
      const std::size_t tp = has_prev ? (reverse_ ? t + 1 : t - 1) : 0;
      const T* gates = cache.gates.data() + t * G;
      T* d = dz.data() + t * G;
      for (std::size_t j = 0; j < H; ++j) {
        const T i = gates[j], f = gates[H + j], g = gates[2 * H + j], o = gates[3 * H + j];
        const T tc = cache.tanh_cells(t, j);
        const T dh = dh_out(t, j) + dh_next[j];
        const T d_o = dh * tc;
        const T dc = dh * o * (T{1} - tc * tc) + dc_next[j];
        const T c_prev = has_prev ? cache.cells(tp, j) : T{0};
        d[j] = dc * g * i * (T{1} - i);
        d[H + j] = dc * c_prev * f * (T{1} - f);
        d[2 * H + j] = dc * i * (T{1} - g * g);
        d[3 * H + j] = d_o * o * (T{1} - o);
        dc_next[j] = dc * f;
      }
      std::fill(dh_next.begin(), dh_next.end(), T{0});
      kernels::gemm_nt(1, G, H, d, w_hidden.value.data(), dh_next.data());
      if (has_prev) kernels::gemm_tn(1, H, G, cache.hidden.data() + tp * H, d, w_hidden.grad.data());
    }
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t j = 0; j < G; ++j) bias.grad[j] += dz(t, j);
    }
    kernels::gemm_tn(steps, input_size(), G, cache.x.data(), dz.data(), w_input.grad.data());
    Tensor<T> dx(steps, input_size());
    kernels::gemm_nt(steps, G, input_size(), dz.data(), w_input.value.data(), dx.data());
    return dx;
  }

  // Xavier-uniform weights, zero bias except forget gate +1.
  void init(std::mt19937_64& rng) {
    const std::size_t H = hidden_size();
    init_xavier_uniform(w_input.value, input_size(), 4 * H, rng);
    init_xavier_uniform(w_hidden.value, H, 4 * H, rng);
    bias.value.zero();
    for (std::size_t j = H; j < 2 * H; ++j) bias.value[j] = T{1};
  }

  ParameterRefs<T> parameters() { return {&w_input, &w_hidden, &bias}; }

 private:
  bool reverse_ = false;
};

template <typename T>
class BiLstmLayer {
 public:
  struct Cache {
    typename LstmDirection<T>::Cache forward_dir;
    typename LstmDirection<T>::Cache backward_dir;
  };

  BiLstmLayer() = default;
  BiLstmLayer(const std::string& name, std::size_t input, std::size_t hidden)
      : forward_dir(name + ".fwd", input, hidden, false), backward_dir(name + ".bwd", input, hidden, true) {}

  LstmDirection<T> forward_dir;
  LstmDirection<T> backward_dir;

  std::size_t hidden_size() const { return forward_dir.hidden_size(); }

  // [T x D] -> [T x 2H], forward states in the first H columns.
  Tensor<T> forward(const Tensor<T>& x, Cache& cache) const {
    const auto hf = forward_dir.forward(x, cache.forward_dir);
    const auto hb = backward_dir.forward(x, cache.backward_dir);
    const std::size_t H = hidden_size();
    Tensor<T> out(x.rows(), 2 * H);
    for (std::size_t t = 0; t < x.rows(); ++t) {
      std::copy(hf.row(t).begin(), hf.row(t).end(), out.row(t).begin());
      std::copy(hb.row(t).begin(), hb.row(t).end(), out.row(t).begin() + static_cast<std::ptrdiff_t>(H));
    }
    return out;
  }

  Tensor<T> backward(const Cache& cache, const Tensor<T>& dy) {
    const std::size_t H = hidden_size();
    const std::size_t steps = dy.rows();
    Tensor<T> df(steps, H), db(steps, H);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t j = 0; j < H; ++j) {
        df(t, j) = dy(t, j);
        db(t, j) = dy(t, H + j);
      }
    }
    auto dx = forward_dir.backward(cache.forward_dir, df);
    add_in_place(dx, backward_dir.backward(cache.backward_dir, db));
    return dx;
  }

  void init(std::mt19937_64& rng) {
    forward_dir.init(rng);
    backward_dir.init(rng);
  }

  ParameterRefs<T> parameters() {
    auto p = forward_dir.parameters();
    for (auto* q : backward_dir.parameters()) p.push_back(q);
    return p;
  }
};

// Stacked bidirectional LSTM; layer k consumes layer k-1's [T x 2H] output.
template <typename T>
class BiLstm {
 public:
  using Cache = std::vector<typename BiLstmLayer<T>::Cache>;

  BiLstm() = default;
  BiLstm(const std::string& name, std::size_t input, std::size_t hidden, std::size_t num_layers) {
    for (std::size_t l = 0; l < num_layers; ++l) {
      layers.emplace_back(name + "." + std::to_string(l), l == 0 ? input : 2 * hidden, hidden);
    }
  }

  std::vector<BiLstmLayer<T>> layers;

  Tensor<T> forward(const Tensor<T>& x, Cache& cache) const {
    cache.resize(layers.size());
    Tensor<T> h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) h = layers[l].forward(h, cache[l]);
    return h;
  }

  Tensor<T> backward(const Cache& cache, const Tensor<T>& dy) {
    Tensor<T> d = dy;
    for (std::size_t l = layers.size(); l-- > 0;) d = layers[l].backward(cache[l], d);
    return d;
  }

  void init(std::mt19937_64& rng) {
    for (auto& l : layers) l.init(rng);
  }

  ParameterRefs<T> parameters() {
    ParameterRefs<T> p;
    for (auto& l : layers) {
      for (auto* q : l.parameters()) p.push_back(q);
    }
    return p;
  }
};

// ---------------------------------------------------------------------------
// Layer normalisation over the last axis.

template <typename T>
class LayerNorm {
 public:
  static constexpr double kEpsilon = 1e-12;

  struct Cache {
    Tensor<T> normalized;
    std::vector<T> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t dim) : gamma(name + ".gamma", {dim}), beta(name + ".beta", {dim}) {
    gamma.value.fill(T{1});
  }

  Parameter<T> gamma;
  Parameter<T> beta;

  Tensor<T> forward(const Tensor<T>& x, Cache& cache) const {
    const std::size_t n = x.cols();
    Tensor<T> y(x.rows(), n);
    cache.normalized = Tensor<T>(x.rows(), n);
    cache.inv_std.assign(x.rows(), T{});
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto row = x.row(r);
      T mean{};
      for (T v : row) mean += v;
      mean /= static_cast<T>(n);
      T var{};
      for (T v : row) var += (v - mean) * (v - mean);
      var /= static_cast<T>(n);
      const T inv = T{1} / std::sqrt(var + static_cast<T>(kEpsilon));
      cache.inv_std[r] = inv;
      for (std::size_t j = 0; j < n; ++j) {
        const T xhat = (row[j] - mean) * inv;
        cache.normalized(r, j) = xhat;
        y(r, j) = gamma.value[j] * xhat + beta.value[j];
      }
    }
    return y;
  }

  Tensor<T> backward(const Cache& cache, const Tensor<T>& dy) {
    const std::size_t n = dy.cols();
    Tensor<T> dx(dy.rows(), n);
    std::vector<T> dxhat(n);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      T sum{}, sum_xhat{};
      for (std::size_t j = 0; j < n; ++j) {
        const T xhat = cache.normalized(r, j);
        gamma.grad[j] += dy(r, j) * xhat;
        beta.grad[j] += dy(r, j);
        dxhat[j] = dy(r, j) * gamma.value[j];
        sum += dxhat[j];
        sum_xhat += dxhat[j] * xhat;
      }
      const T scale = cache.inv_std[r] / static_cast<T>(n);
      for (std::size_t j = 0; j < n; ++j) {
        dx(r, j) = scale * (static_cast<T>(n) * dxhat[j] - sum - cache.normalized(r, j) * sum_xhat);
      }
    }
    return dx;
  }

  ParameterRefs<T> parameters() { return {&gamma, &beta}; }
};

// ---------------------------------------------------------------------------
// Exact (erf) GELU.

template <typename T>
Tensor<T> gelu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = T{0.5} * x[i] * (T{1} + std::erf(x[i] / std::sqrt(T{2})));
  }
  return y;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  const T inv_sqrt_2pi = static_cast<T>(0.3989422804014327);
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T cdf = T{0.5} * (T{1} + std::erf(x[i] / std::sqrt(T{2})));
    const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * x[i] * x[i]);
    dx[i] = dy[i] * (cdf + x[i] * pdf);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Inverted dropout: survivors are scaled by 1/(1-p); identity outside training.

template <typename T>
struct DropoutMask {
  Tensor<T> scale;
  bool active = false;
};

template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& x, double p, bool training, std::mt19937_64* rng, DropoutMask<T>& mask) {
  if (!(p >= 0.0 && p < 1.0)) fail(ErrorKind::invalid_argument, "dropout probability must be in [0, 1)");
  mask.active = training && p > 0.0;
  if (!mask.active) return x;
  if (!rng) fail(ErrorKind::invalid_argument, "dropout in training mode needs a random generator");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  mask.scale = Tensor<T>(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask.scale[i] = u(*rng) < p ? T{0} : keep_scale;
    y[i] = x[i] * mask.scale[i];
  }
  return y;
}

template <typename T>
Tensor<T> dropout_backward(const DropoutMask<T>& mask, const Tensor<T>& dy) {
  if (!mask.active) return dy;
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask.scale[i];
  return dx;
}

// Per-call options shared by the encoder layers.
struct ForwardMode {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
};

// ---------------------------------------------------------------------------
// Multi-head self-attention with a key/query validity mask. Invalid (padding)
// rows attend to nothing and are never attended to. Keys carry no bias: a key
// bias shifts every logit of a row equally and cannot change the softmax.

template <typename T>
class MultiHeadSelfAttention {
 public:
  struct Cache {
    Tensor<T> x, q, k, v, ctx;
    std::vector<Tensor<T>> probs;  // per head [T x T], before dropout
    std::vector<DropoutMask<T>> prob_dropout;
    std::vector<bool> valid;
  };

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(const std::string& name, std::size_t dim, std::size_t heads)
      : query(name + ".query", dim, dim),
        key(name + ".key", dim, dim, false),
        value(name + ".value", dim, dim),
        output(name + ".output", dim, dim),
        heads_(heads) {
    if (heads == 0 || dim % heads != 0) {
      fail(ErrorKind::invalid_argument, name + ": " + std::to_string(heads) + " heads do not divide width " +
                                            std::to_string(dim));
    }
  }

  Linear<T> query, key, value, output;

  std::size_t heads() const { return heads_; }
  std::size_t dim() const { return query.in_features(); }

  Tensor<T> forward(const Tensor<T>& x, const std::vector<bool>& valid, const ForwardMode& mode, Cache& cache) const {
    const std::size_t steps = x.rows();
    const std::size_t D = dim();
    const std::size_t dh = D / heads_;
    const T scale = T{1} / std::sqrt(static_cast<T>(dh));
    cache.valid = valid.empty() ? std::vector<bool>(steps, true) : valid;
    if (cache.valid.size() != steps) fail(ErrorKind::shape_mismatch, "attention mask length differs from sequence length");
    cache.x = x;
    cache.q = query.forward(x);
    cache.k = key.forward(x);
    cache.v = value.forward(x);
    cache.ctx = Tensor<T>(steps, D);
    cache.probs.assign(heads_, Tensor<T>(steps, steps));
    cache.prob_dropout.assign(heads_, DropoutMask<T>{});
    std::vector<T> logits(steps);
    for (std::size_t h = 0; h < heads_; ++h) {
      Tensor<T>& p = cache.probs[h];
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < steps; ++i) {
        if (!cache.valid[i]) continue;
        T max_logit = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < steps; ++j) {
          if (!cache.valid[j]) continue;
          T s{};
          for (std::size_t d = 0; d < dh; ++d) s += cache.q(i, off + d) * cache.k(j, off + d);
          logits[j] = s * scale;
          max_logit = std::max(max_logit, logits[j]);
        }
        T total{};
        for (std::size_t j = 0; j < steps; ++j) {
          if (!cache.valid[j]) continue;
          p(i, j) = std::exp(logits[j] - max_logit);
          total += p(i, j);
        }
        for (std::size_t j = 0; j < steps; ++j) p(i, j) /= total;
      }
      const Tensor<T> used = dropout_forward(p, mode.dropout, mode.training, mode.rng, cache.prob_dropout[h]);
      for (std::size_t i = 0; i < steps; ++i) {
        for (std::size_t j = 0; j < steps; ++j) {
          const T w = used(i, j);
          if (w == T{0}) continue;
          for (std::size_t d = 0; d < dh; ++d) cache.ctx(i, off + d) += w * cache.v(j, off + d);
        }
      }
    }
    return output.forward(cache.ctx);
  }

  Tensor<T> backward(const Cache& cache, const Tensor<T>& dy) {
    const std::size_t steps = cache.x.rows();
    const std::size_t D = dim();
    const std::size_t dh = D / heads_;
    const T scale = T{1} / std::sqrt(static_cast<T>(dh));
    const Tensor<T> dctx = output.backward(cache.ctx, dy);
    Tensor<T> dq(steps, D), dk(steps, D), dv(steps, D);
    for (std::size_t h = 0; h < heads_; ++h) {
      const std::size_t off = h * dh;
      const Tensor<T>& p = cache.probs[h];
      const auto& mask = cache.prob_dropout[h];
      Tensor<T> dused(steps, steps);
      for (std::size_t i = 0; i < steps; ++i) {
        for (std::size_t j = 0; j < steps; ++j) {
          const T w = mask.active ? p(i, j) * mask.scale(i, j) : p(i, j);
          T acc{};
          for (std::size_t d = 0; d < dh; ++d) {
            acc += dctx(i, off + d) * cache.v(j, off + d);
            dv(j, off + d) += w * dctx(i, off + d);
          }
          dused(i, j) = acc;
        }
      }
      const Tensor<T> dp = dropout_backward(mask, dused);
      for (std::size_t i = 0; i < steps; ++i) {
        if (!cache.valid[i]) continue;
        T row_dot{};
        for (std::size_t j = 0; j < steps; ++j) row_dot += dp(i, j) * p(i, j);
        for (std::size_t j = 0; j < steps; ++j) {
          if (!cache.valid[j]) continue;
          const T ds = p(i, j) * (dp(i, j) - row_dot) * scale;
          for (std::size_t d = 0; d < dh; ++d) {
            dq(i, off + d) += ds * cache.k(j, off + d);
            dk(j, off + d) += ds * cache.q(i, off + d);
          }
        }
      }
    }
    auto dx = query.backward(cache.x, dq);
    add_in_place(dx, key.backward(cache.x, dk));
    add_in_place(dx, value.backward(cache.x, dv));
    return dx;
  }

  void init(double stddev, std::mt19937_64& rng) {
    for (auto* l : {&query, &key, &value, &output}) l->init_normal_weights(stddev, rng);
  }

  ParameterRefs<T> parameters() {
    ParameterRefs<T> p;
    for (auto* l : {&query, &key, &value, &output}) {
      for (auto* q : l->parameters()) p.push_back(q);
    }
    return p;
  }

 private:
  std::size_t heads_ = 1;
};

// ---------------------------------------------------------------------------
// Post-norm encoder block:
//   h = LN1(x + Dropout(Attention(x)));  y = LN2(h + Dropout(W2 GELU(W1 h)))

template <typename T>
class EncoderBlock {
 public:
  struct Cache {
    typename MultiHeadSelfAttention<T>::Cache attention;
    DropoutMask<T> attention_dropout;
    typename LayerNorm<T>::Cache norm1;
    Tensor<T> hidden;     // LN1 output
    Tensor<T> ffn_pre;    // W1 h + b1
    Tensor<T> ffn_act;    // GELU(ffn_pre)
    DropoutMask<T> ffn_dropout;
    typename LayerNorm<T>::Cache norm2;
  };

  EncoderBlock() = default;
  EncoderBlock(const std::string& name, std::size_t dim, std::size_t heads, std::size_t ffn)
      : attention(name + ".attention", dim, heads),
        norm1(name + ".norm1", dim),
        ffn_in(name + ".ffn_in", dim, ffn),
        ffn_out(name + ".ffn_out", ffn, dim),
        norm2(name + ".norm2", dim) {}

  MultiHeadSelfAttention<T> attention;
  LayerNorm<T> norm1;
  Linear<T> ffn_in;
  Linear<T> ffn_out;
  LayerNorm<T> norm2;

  Tensor<T> forward(const Tensor<T>& x, const std::vector<bool>& valid, const ForwardMode& mode, Cache& cache) const {
    auto a = attention.forward(x, valid, mode, cache.attention);
    a = dropout_forward(a, mode.dropout, mode.training, mode.rng, cache.attention_dropout);
    add_in_place(a, x);
    cache.hidden = norm1.forward(a, cache.norm1);
    cache.ffn_pre = ffn_in.forward(cache.hidden);
    cache.ffn_act = gelu_forward(cache.ffn_pre);
    auto f = ffn_out.forward(cache.ffn_act);
    f = dropout_forward(f, mode.dropout, mode.training, mode.rng, cache.ffn_dropout);
    add_in_place(f, cache.hidden);
    return norm2.forward(f, cache.norm2);
  }

  Tensor<T> backward(const Cache& cache, const Tensor<T>& dy) {
    const auto dr2 = norm2.backward(cache.norm2, dy);
    auto dh = dr2;
    const auto df = dropout_backward(cache.ffn_dropout, dr2);
    const auto dact = ffn_out.backward(cache.ffn_act, df);
    const auto dpre = gelu_backward(cache.ffn_pre, dact);
    add_in_place(dh, ffn_in.backward(cache.hidden, dpre));
    auto dx = norm1.backward(cache.norm1, dh);
    const auto da = dropout_backward(cache.attention_dropout, dx);
    add_in_place(dx, attention.backward(cache.attention, da));
    return dx;
  }

  void init(double stddev, std::mt19937_64& rng) {
    attention.init(stddev, rng);
    ffn_in.init_normal_weights(stddev, rng);
    ffn_out.init_normal_weights(stddev, rng);
  }

  ParameterRefs<T> parameters() {
    ParameterRefs<T> p = attention.parameters();
    for (auto* q : norm1.parameters()) p.push_back(q);
    for (auto* q : ffn_in.parameters()) p.push_back(q);
    for (auto* q : ffn_out.parameters()) p.push_back(q);
    for (auto* q : norm2.parameters()) p.push_back(q);
    return p;
  }
};

}  // namespace phrasebreak::neural

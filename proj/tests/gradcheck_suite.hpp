// Finite-difference checks for every neural primitive and both end-to-end
// models, in double precision. Each case returns its worst relative error.
#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "phrasebreak/phrasebreak.hpp"

namespace pbtest {

using phrasebreak::neural::Parameter;
using phrasebreak::neural::ParameterRefs;
using phrasebreak::neural::Tensor;

struct GradCase {
  std::string name;
  phrasebreak::neural::GradCheckReport report;
};

inline Tensor<double> random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<double> t(rows, cols);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

inline void randomize(const ParameterRefs<double>& params, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto* p : params) {
    for (auto& v : p->value.values()) v = u(rng);
  }
}

inline double weighted_sum(const Tensor<double>& y, const Tensor<double>& w) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

// Loss = sum(R * f(x)) for a fixed random R, so the upstream gradient is R.
// The input is treated as one more parameter to check dx.
template <typename Forward, typename Backward>
phrasebreak::neural::GradCheckReport check_map(Parameter<double>& input, ParameterRefs<double> params, Forward forward,
                                               Backward backward, std::mt19937_64& rng) {
  const auto y0 = forward(input.value);
  const auto r = random_tensor(y0.rows(), y0.cols(), rng);
  for (auto* p : params) p->zero_grad();
  input.zero_grad();
  const auto dx = backward(r);
  if (dx.size() == input.value.size()) phrasebreak::neural::add_in_place(input.grad, dx);
  params.push_back(&input);
  return phrasebreak::neural::finite_difference_check([&] { return weighted_sum(forward(input.value), r); }, params);
}

inline std::vector<GradCase> run_gradcheck_suite(std::uint64_t seed) {
  using namespace phrasebreak;
  using namespace phrasebreak::neural;
  std::vector<GradCase> out;
  std::mt19937_64 rng(seed);

  {  // embedding lookup (ids repeat so rows accumulate)
    Embedding<double> emb("emb", 5, 3);
    randomize(emb.parameters(), rng, 1.0);
    const std::vector<int> ids{1, 4, 1, 0};
    const auto r = random_tensor(ids.size(), 3, rng);
    emb.table.zero_grad();
    emb.backward(ids, r);
    out.push_back({"embedding", finite_difference_check([&] { return weighted_sum(emb.forward(ids), r); },
                                                        emb.parameters())});
  }
  {
    Linear<double> lin("lin", 4, 3);
    randomize(lin.parameters(), rng, 1.0);
    Parameter<double> x("input", {3, 4});
    x.value = random_tensor(3, 4, rng);
    out.push_back({"linear", check_map(
                                 x, lin.parameters(), [&](const Tensor<double>& in) { return lin.forward(in); },
                                 [&](const Tensor<double>& dy) { return lin.backward(x.value, dy); }, rng)});
  }
  for (bool reverse : {false, true}) {
    LstmDirection<double> dir("lstm", 2, 2, reverse);
    dir.init(rng);
    randomize(dir.parameters(), rng, 0.8);
    Parameter<double> x("input", {3, 2});
    x.value = random_tensor(3, 2, rng);
    typename LstmDirection<double>::Cache cache;
    out.push_back({reverse ? "lstm_reverse" : "lstm_forward",
                   check_map(
                       x, dir.parameters(), [&](const Tensor<double>& in) { return dir.forward(in, cache); },
                       [&](const Tensor<double>& dy) {
                         dir.forward(x.value, cache);
                         return dir.backward(cache, dy);
                       },
                       rng)});
  }
  {
    BiLstm<double> net("blstm", 2, 2, 2);
    net.init(rng);
    randomize(net.parameters(), rng, 0.8);
    Parameter<double> x("input", {3, 2});
    x.value = random_tensor(3, 2, rng);
    typename BiLstm<double>::Cache cache;
    out.push_back({"bilstm_stacked", check_map(
                                         x, net.parameters(), [&](const Tensor<double>& in) { return net.forward(in, cache); },
                                         [&](const Tensor<double>& dy) {
                                           net.forward(x.value, cache);
                                           return net.backward(cache, dy);
                                         },
                                         rng)});
  }
  {
    LayerNorm<double> ln("ln", 5);
    randomize(ln.parameters(), rng, 1.0);
    Parameter<double> x("input", {3, 5});
    x.value = random_tensor(3, 5, rng);
    typename LayerNorm<double>::Cache cache;
    out.push_back({"layer_norm", check_map(
                                     x, ln.parameters(), [&](const Tensor<double>& in) { return ln.forward(in, cache); },
                                     [&](const Tensor<double>& dy) {
                                       ln.forward(x.value, cache);
                                       return ln.backward(cache, dy);
                                     },
                                     rng)});
  }
  {
    Parameter<double> x("input", {3, 4});
    x.value = random_tensor(3, 4, rng, 2.0);
    out.push_back({"gelu", check_map(
                               x, {}, [&](const Tensor<double>& in) { return gelu_forward(in); },
                               [&](const Tensor<double>& dy) { return gelu_backward(x.value, dy); }, rng)});
  }
  {  // dropout with a fixed mask: re-seeded on every forward
    Parameter<double> x("input", {3, 4});
    x.value = random_tensor(3, 4, rng);
    const std::uint64_t mask_seed = rng();
    DropoutMask<double> mask;
    auto fwd = [&](const Tensor<double>& in) {
      std::mt19937_64 g(mask_seed);
      return dropout_forward(in, 0.3, true, &g, mask);
    };
    out.push_back({"dropout", check_map(
                                  x, {}, fwd,
                                  [&](const Tensor<double>& dy) {
                                    fwd(x.value);
                                    return dropout_backward(mask, dy);
                                  },
                                  rng)});
  }
  {
    MultiHeadSelfAttention<double> att("att", 8, 2);
    randomize(att.parameters(), rng, 0.5);
    Parameter<double> x("input", {4, 8});
    x.value = random_tensor(4, 8, rng);
    const std::vector<bool> valid{true, true, true, false};
    typename MultiHeadSelfAttention<double>::Cache cache;
    const ForwardMode mode{};
    out.push_back({"self_attention_masked",
                   check_map(
                       x, att.parameters(), [&](const Tensor<double>& in) { return att.forward(in, valid, mode, cache); },
                       [&](const Tensor<double>& dy) {
                         att.forward(x.value, valid, mode, cache);
                         return att.backward(cache, dy);
                       },
                       rng)});
  }
  {
    EncoderBlock<double> block("block", 8, 2, 12);
    randomize(block.parameters(), rng, 0.5);
    Parameter<double> x("input", {3, 8});
    x.value = random_tensor(3, 8, rng);
    typename EncoderBlock<double>::Cache cache;
    const std::uint64_t drop_seed = rng();
    auto fwd = [&](const Tensor<double>& in) {
      std::mt19937_64 g(drop_seed);
      return block.forward(in, {}, ForwardMode{true, 0.1, &g}, cache);
    };
    out.push_back({"encoder_block", check_map(
                                        x, block.parameters(), fwd,
                                        [&](const Tensor<double>& dy) {
                                          fwd(x.value);
                                          return block.backward(cache, dy);
                                        },
                                        rng)});
  }
  {  // softmax cross entropy with an ignored row
    Parameter<double> logits("logits", {5, 3});
    logits.value = random_tensor(5, 3, rng, 3.0);
    const std::vector<int> targets{0, 2, kIgnoreIndex, 1, 1};
    logits.grad = softmax_cross_entropy(logits.value, targets).grad;
    out.push_back({"softmax_cross_entropy", finite_difference_check(
                                                [&] { return softmax_cross_entropy(logits.value, targets).loss; },
                                                {&logits})});
  }
  {  // embedding -> linear -> cross entropy composite
    Embedding<double> emb("emb", 6, 4);
    Linear<double> lin("lin", 4, 2);
    randomize(emb.parameters(), rng, 1.0);
    randomize(lin.parameters(), rng, 1.0);
    const std::vector<int> ids{2, 5, 2, 0};
    const std::vector<int> targets{1, 0, 0, 1};
    auto loss = [&] { return softmax_cross_entropy(lin.forward(emb.forward(ids)), targets).loss; };
    emb.table.zero_grad();
    lin.weight.zero_grad();
    lin.bias.zero_grad();
    const auto h = emb.forward(ids);
    emb.backward(ids, lin.backward(h, softmax_cross_entropy(lin.forward(h), targets).grad));
    auto params = emb.parameters();
    for (auto* p : lin.parameters()) params.push_back(p);
    out.push_back({"embedding_linear_ce", finite_difference_check(loss, params)});
  }
  {  // tiny BLSTM tagger end to end
    models::ModelConfig cfg = models::ModelConfig::published_blstm(7);
    cfg.embedding_dim = 3;
    cfg.hidden_size = 2;
    models::BlstmTagger<double> model(cfg);
    model.init(rng());
    randomize(model.parameters(), rng, 1.2);
    const std::vector<int> ids{3, 1, 6, 3};
    const std::vector<int> targets{0, 1, 0, 1};
    for (auto* p : model.parameters()) p->zero_grad();
    typename models::BlstmTagger<double>::Cache cache;
    const auto logits = model.forward(ids, cache);
    model.backward(cache, softmax_cross_entropy(logits, targets).grad);
    out.push_back({"blstm_tagger", finite_difference_check(
                                       [&] { return softmax_cross_entropy(model.logits(ids), targets).loss; },
                                       model.parameters())});
  }
  for (bool mlm : {false, true}) {  // tiny encoder, padded, dropout with a fixed mask
    models::ModelConfig cfg = models::ModelConfig::desk_encoder(9);
    cfg.embedding_dim = cfg.hidden_size = 4;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.ffn_size = 6;
    cfg.max_len = 6;
    cfg.dropout_p = 0.1;
    models::EncoderWithHead<double> model(cfg, mlm ? 9 : 2, mlm ? "mlm_head" : "classifier");
    model.init(rng());
    // Gammas stay near one: a gamma near zero starves everything upstream, and
    // query/key gradients then sink below central-difference round-off.
    randomize(model.parameters(), rng, 0.85);
    for (auto* p : model.parameters()) {
      if (p->name.ends_with("gamma")) {
        for (auto& v : p->value.values()) v = 1.0 + 0.5 * v / 0.85;
      }
    }
    const std::vector<int> ids{2, 7, 5, 3, 0};
    const std::vector<bool> valid{true, true, true, true, false};
    const std::vector<int> targets = mlm ? std::vector<int>{kIgnoreIndex, 7, kIgnoreIndex, 4, kIgnoreIndex}
                                         : std::vector<int>{0, 1, 0, 1, kIgnoreIndex};
    const std::uint64_t drop_seed = rng();
    typename models::EncoderWithHead<double>::Cache cache;
    auto logits = [&] {
      std::mt19937_64 g(drop_seed);
      return model.forward(ids, valid, neural::ForwardMode{true, cfg.dropout_p, &g}, cache);
    };
    for (auto* p : model.parameters()) p->zero_grad();
    model.backward(cache, softmax_cross_entropy(logits(), targets).grad);
    out.push_back({mlm ? "encoder_mlm" : "encoder_tagger",
                   finite_difference_check([&] { return softmax_cross_entropy(logits(), targets).loss; },
                                           model.parameters())});
  }
  return out;
}

}  // namespace pbtest

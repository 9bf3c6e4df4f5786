#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "phrasebreak/models/config.hpp"
#include "phrasebreak/neural/layers.hpp"

namespace phrasebreak::models {

// Token + learned absolute position embeddings, embedding LayerNorm and
// dropout, then a stack of post-norm encoder blocks.
template <typename T>
class EncoderBody {
 public:
  struct Cache {
    std::vector<int> ids;
    typename neural::LayerNorm<T>::Cache embedding_norm;
    neural::DropoutMask<T> embedding_dropout;
    std::vector<typename neural::EncoderBlock<T>::Cache> blocks;
  };

  explicit EncoderBody(const ModelConfig& config)
      : token_embedding("encoder.token_embedding", config.vocab_size, config.hidden_size),
        position_embedding("encoder.position_embedding", config.max_len, config.hidden_size),
        embedding_norm("encoder.embedding_norm", config.hidden_size),
        dropout_p_(config.dropout_p) {
    for (std::size_t l = 0; l < config.num_layers; ++l) {
      blocks.emplace_back("encoder.layer." + std::to_string(l), config.hidden_size, config.num_heads, config.ffn_size);
    }
  }

  neural::Embedding<T> token_embedding;
  neural::Embedding<T> position_embedding;
  neural::LayerNorm<T> embedding_norm;
  std::vector<neural::EncoderBlock<T>> blocks;

  std::size_t max_len() const { return position_embedding.vocab_size(); }
  double dropout() const { return dropout_p_; }

  /// All weights normal(0, 0.02), LayerNorm gamma 1 / beta 0.
  void init(std::mt19937_64& rng) {
    neural::init_normal(token_embedding.table.value, 0.02, rng);
    neural::init_normal(position_embedding.table.value, 0.02, rng);
    for (auto& b : blocks) b.init(0.02, rng);
  }

  // ids [T] (T <= max_len), valid marks non-padding positions (empty = all valid).
  neural::Tensor<T> forward(std::span<const int> ids, const std::vector<bool>& valid, const neural::ForwardMode& mode,
                            Cache& cache) const {
    if (ids.empty()) fail(ErrorKind::empty_input, "encoder: empty input");
    if (ids.size() > max_len()) {
      fail(ErrorKind::invalid_argument, "encoder: " + std::to_string(ids.size()) + " pieces exceed max_len " +
                                            std::to_string(max_len()));
    }
    cache.ids.assign(ids.begin(), ids.end());
    auto x = token_embedding.forward(ids);
    std::vector<int> positions(ids.size());
    for (std::size_t t = 0; t < positions.size(); ++t) positions[t] = static_cast<int>(t);
    add_in_place(x, position_embedding.forward(positions));
    x = embedding_norm.forward(x, cache.embedding_norm);
    x = neural::dropout_forward(x, mode.dropout, mode.training, mode.rng, cache.embedding_dropout);
    cache.blocks.resize(blocks.size());
    for (std::size_t l = 0; l < blocks.size(); ++l) x = blocks[l].forward(x, valid, mode, cache.blocks[l]);
    return x;
  }

  void backward(const Cache& cache, const neural::Tensor<T>& dy) {
    neural::Tensor<T> d = dy;
    for (std::size_t l = blocks.size(); l-- > 0;) d = blocks[l].backward(cache.blocks[l], d);
    d = neural::dropout_backward(cache.embedding_dropout, d);
    d = embedding_norm.backward(cache.embedding_norm, d);
    token_embedding.backward(cache.ids, d);
    std::vector<int> positions(cache.ids.size());
    for (std::size_t t = 0; t < positions.size(); ++t) positions[t] = static_cast<int>(t);
    position_embedding.backward(positions, d);
  }

  neural::ParameterRefs<T> parameters() {
    neural::ParameterRefs<T> p{&token_embedding.table, &position_embedding.table};
    for (auto* q : embedding_norm.parameters()) p.push_back(q);
    for (auto& b : blocks) {
      for (auto* q : b.parameters()) p.push_back(q);
    }
    return p;
  }

 private:
  double dropout_p_ = 0.0;
};

// Encoder body plus a linear head. With `classes` = 2 it is the phrase-break
// token classifier; with `classes` = subword vocabulary size it is the MLM model.
template <typename T>
class EncoderWithHead {
 public:
  struct Cache {
    typename EncoderBody<T>::Cache body;
    neural::Tensor<T> hidden;
  };

  EncoderWithHead(const ModelConfig& config, std::size_t classes, const std::string& head_name)
      : config_(config), body(config), head(head_name, config.hidden_size, classes) {
    config.validate();
    if (config.variant != Variant::encoder) fail(ErrorKind::invalid_argument, "encoder model needs an encoder config");
  }

  const ModelConfig& config() const { return config_; }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    body.init(rng);
    head.init_normal_weights(0.02, rng);
  }

  void init_head(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    head.init_normal_weights(0.02, rng);
  }

  neural::Tensor<T> forward(std::span<const int> ids, const std::vector<bool>& valid, const neural::ForwardMode& mode,
                            Cache& cache) const {
    cache.hidden = body.forward(ids, valid, mode, cache.body);
    return head.forward(cache.hidden);
  }

  neural::Tensor<T> logits(std::span<const int> ids) const {
    Cache cache;
    return forward(ids, {}, neural::ForwardMode{}, cache);
  }

  void backward(const Cache& cache, const neural::Tensor<T>& dlogits) {
    body.backward(cache.body, head.backward(cache.hidden, dlogits));
  }

  neural::ParameterRefs<T> parameters() {
    auto p = body.parameters();
    for (auto* q : head.parameters()) p.push_back(q);
    return p;
  }

  neural::ParameterRefs<T> head_parameters() { return head.parameters(); }

 private:
  ModelConfig config_;

 public:
  EncoderBody<T> body;
  neural::Linear<T> head;
};

template <typename T>
class EncoderTagger : public EncoderWithHead<T> {
 public:
  explicit EncoderTagger(const ModelConfig& config) : EncoderWithHead<T>(config, config.num_labels, "classifier") {}
};

template <typename T>
class EncoderMlm : public EncoderWithHead<T> {
 public:
  explicit EncoderMlm(const ModelConfig& config) : EncoderWithHead<T>(config, config.vocab_size, "mlm_head") {}
};

}  // namespace phrasebreak::models

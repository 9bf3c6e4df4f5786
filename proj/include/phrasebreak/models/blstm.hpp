#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "phrasebreak/models/config.hpp"
#include "phrasebreak/neural/layers.hpp"

namespace phrasebreak::models {

// Word embeddings -> stacked BLSTM -> dense layer over {NB, B}.
template <typename T>
class BlstmTagger {
 public:
  struct Cache {
    std::vector<int> ids;
    typename neural::BiLstm<T>::Cache lstm;
    neural::Tensor<T> hidden;
  };

  explicit BlstmTagger(const ModelConfig& config)
      : config_(config),
        embedding("embedding", config.vocab_size, config.embedding_dim),
        lstm("blstm", config.embedding_dim, config.hidden_size, config.num_layers),
        classifier("classifier", 2 * config.hidden_size, config.num_labels) {
    config.validate();
    if (config.variant != Variant::blstm) fail(ErrorKind::invalid_argument, "BlstmTagger needs a blstm config");
  }

  const ModelConfig& config() const { return config_; }

  /// Embeddings uniform(-0.05, 0.05); LSTM and classifier Xavier-uniform.
  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    neural::init_uniform(embedding.table.value, -0.05, 0.05, rng);
    lstm.init(rng);
    classifier.init_xavier(rng);
  }

  // [T] word ids -> [T x 2] logits.
  neural::Tensor<T> forward(std::span<const int> ids, Cache& cache) const {
    if (ids.empty()) fail(ErrorKind::empty_input, "BlstmTagger: empty input");
    cache.ids.assign(ids.begin(), ids.end());
    const auto emb = embedding.forward(ids);
    cache.hidden = lstm.forward(emb, cache.lstm);
    return classifier.forward(cache.hidden);
  }

  neural::Tensor<T> logits(std::span<const int> ids) const {
    Cache cache;
    return forward(ids, cache);
  }

  void backward(const Cache& cache, const neural::Tensor<T>& dlogits) {
    const auto dh = classifier.backward(cache.hidden, dlogits);
    const auto demb = lstm.backward(cache.lstm, dh);
    embedding.backward(cache.ids, demb);
  }

  neural::ParameterRefs<T> parameters() {
    neural::ParameterRefs<T> p = embedding.parameters();
    for (auto* q : lstm.parameters()) p.push_back(q);
    for (auto* q : classifier.parameters()) p.push_back(q);
    return p;
  }

 private:
  ModelConfig config_;

 public:
  neural::Embedding<T> embedding;
  neural::BiLstm<T> lstm;
  neural::Linear<T> classifier;
};

}  // namespace phrasebreak::models

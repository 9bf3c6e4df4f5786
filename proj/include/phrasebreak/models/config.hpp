#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"
#include "phrasebreak/error.hpp"
#include "phrasebreak/labels.hpp"

namespace phrasebreak::models {

enum class Variant { blstm, encoder };

inline std::string to_string(Variant v) { return v == Variant::blstm ? "blstm" : "encoder"; }

inline Variant variant_from_string(const std::string& s) {
  if (s == "blstm") return Variant::blstm;
  if (s == "encoder") return Variant::encoder;
  fail(ErrorKind::parse, "unknown model variant '" + s + "'");
}

struct ModelConfig {
  Variant variant = Variant::blstm;
  std::size_t embedding_dim = 300;
  std::size_t hidden_size = 512;  // per direction (blstm) or model width (encoder)
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;      // encoder only
  std::size_t ffn_size = 1024;    // encoder only
  double dropout_p = 0.0;
  std::size_t max_len = 512;      // encoder positional limit, in subword pieces
  std::size_t vocab_size = 2;
  std::size_t num_labels = kNumLabels;

  // Embedding 300, two BLSTM layers of 512 units per direction, no dropout.
  static ModelConfig published_blstm(std::size_t vocab_size) {
    ModelConfig c;
    c.variant = Variant::blstm;
    c.embedding_dim = 300;
    c.hidden_size = 512;
    c.num_layers = 2;
    c.dropout_p = 0.0;
    c.vocab_size = vocab_size;
    return c;
  }

  // CPU-trainable encoder: 4 layers, 4 heads, width 256, FFN 1024, 128 positions.
  static ModelConfig desk_encoder(std::size_t vocab_size) {
    ModelConfig c;
    c.variant = Variant::encoder;
    c.embedding_dim = 256;
    c.hidden_size = 256;
    c.num_layers = 4;
    c.num_heads = 4;
    c.ffn_size = 1024;
    c.dropout_p = 0.1;
    c.max_len = 128;
    c.vocab_size = vocab_size;
    return c;
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* what) {
      if (v < 1) fail(ErrorKind::invalid_argument, std::string("model config: ") + what + " must be >= 1");
    };
    positive(embedding_dim, "embedding_dim");
    positive(hidden_size, "hidden_size");
    positive(num_layers, "num_layers");
    positive(vocab_size, "vocab_size");
    if (num_labels != static_cast<std::size_t>(kNumLabels)) {
      fail(ErrorKind::invalid_argument, "model config: label set size must be 2");
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail(ErrorKind::invalid_argument, "model config: dropout_p must be in [0,1)");
    if (variant == Variant::encoder) {
      positive(num_heads, "num_heads");
      positive(ffn_size, "ffn_size");
      if (max_len < 3) fail(ErrorKind::invalid_argument, "model config: max_len must be >= 3");
      if (embedding_dim != hidden_size) {
        fail(ErrorKind::invalid_argument, "model config: encoder embedding_dim must equal hidden_size");
      }
      if (hidden_size % num_heads != 0) {
        fail(ErrorKind::invalid_argument, "model config: num_heads must divide hidden_size");
      }
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["variant"] = to_string(c.variant);
  j["embedding_dim"] = c.embedding_dim;
  j["hidden_size"] = c.hidden_size;
  j["num_layers"] = c.num_layers;
  if (c.variant == Variant::encoder) {
    j["num_heads"] = c.num_heads;
    j["ffn_size"] = c.ffn_size;
    j["max_len"] = c.max_len;
  }
  j["dropout_p"] = c.dropout_p;
  j["vocab_size"] = c.vocab_size;
  j["num_labels"] = c.num_labels;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.variant = variant_from_string(j.at("variant").get<std::string>());
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.hidden_size = j.at("hidden_size").get<std::size_t>();
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.num_heads = j.value("num_heads", c.num_heads);
    c.ffn_size = j.value("ffn_size", c.ffn_size);
    c.max_len = j.value("max_len", c.max_len);
    c.dropout_p = j.at("dropout_p").get<double>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.num_labels = j.value("num_labels", c.num_labels);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 0.001;
  std::size_t num_epochs = 10;
  std::optional<double> grad_clip_norm;
  std::uint64_t seed = 1;
  std::string lr_schedule = "constant";

  // BLSTM: batch 64, Adam lr 0.001, 10 epochs.
  static TrainConfig published_blstm() { return {64, 0.001, 10, std::nullopt, 1, "constant"}; }

  // Encoder fine-tuning: batch 64, lr 1e-5, clip norm 10, 10 epochs.
  static TrainConfig published_finetune() { return {64, 1e-5, 10, 10.0, 1, "constant"}; }

  // Desk-scale masked-LM pre-training; no published counterpart.
  static TrainConfig desk_pretrain() { return {32, 3e-4, 10, 1.0, 1, "constant"}; }

  // The library accepts a zero learning rate (a no-op update); command-line
  // configs are held to learning_rate > 0 by the CLI.
  void validate() const {
    if (batch_size < 1) fail(ErrorKind::invalid_argument, "train config: batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) fail(ErrorKind::invalid_argument, "train config: learning_rate must be >= 0");
    if (num_epochs < 1) fail(ErrorKind::invalid_argument, "train config: num_epochs must be >= 1");
    if (grad_clip_norm && !(*grad_clip_norm > 0.0)) {
      fail(ErrorKind::invalid_argument, "train config: grad_clip_norm must be > 0");
    }
    if (lr_schedule != "constant") fail(ErrorKind::invalid_argument, "train config: only the constant schedule exists");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["num_epochs"] = c.num_epochs;
  j["grad_clip_norm"] = c.grad_clip_norm ? nlohmann::ordered_json(*c.grad_clip_norm) : nlohmann::ordered_json(nullptr);
  j["seed"] = c.seed;
  j["lr_schedule"] = c.lr_schedule;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  try {
    base.batch_size = j.value("batch_size", base.batch_size);
    base.learning_rate = j.value("learning_rate", base.learning_rate);
    base.num_epochs = j.value("num_epochs", base.num_epochs);
    if (j.contains("grad_clip_norm")) {
      base.grad_clip_norm = j["grad_clip_norm"].is_null() ? std::nullopt : std::optional<double>(j["grad_clip_norm"].get<double>());
    }
    base.seed = j.value("seed", base.seed);
    base.lr_schedule = j.value("lr_schedule", base.lr_schedule);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("train config: ") + e.what());
  }
  base.validate();
  return base;
}

}  // namespace phrasebreak::models

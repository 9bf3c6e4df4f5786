#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "phrasebreak/error.hpp"
#include "phrasebreak/models/blstm.hpp"
#include "phrasebreak/models/config.hpp"
#include "phrasebreak/models/encoder.hpp"
#include "phrasebreak/neural/archive.hpp"
#include "phrasebreak/textproc.hpp"

namespace phrasebreak::models {

// A checkpoint is a directory:
//   config.json   {"format_version": 1, "kind": ..., "model": ModelConfig, "train": TrainConfig|null}
//   tensors.bin   tensor archive (see neural/archive.hpp)
//   vocab.txt     word vocabulary (blstm) or WordPiece vocabulary (encoder), one entry per line

inline constexpr int kFormatVersion = 1;

enum class CheckpointKind { blstm_tagger, encoder_tagger, encoder_mlm };

inline std::string to_string(CheckpointKind k) {
  switch (k) {
    case CheckpointKind::blstm_tagger: return "blstm_tagger";
    case CheckpointKind::encoder_tagger: return "encoder_tagger";
    case CheckpointKind::encoder_mlm: return "encoder_mlm";
  }
  return "blstm_tagger";
}

inline CheckpointKind checkpoint_kind_from_string(const std::string& s) {
  if (s == "blstm_tagger") return CheckpointKind::blstm_tagger;
  if (s == "encoder_tagger") return CheckpointKind::encoder_tagger;
  if (s == "encoder_mlm") return CheckpointKind::encoder_mlm;
  fail(ErrorKind::parse, "unknown checkpoint kind '" + s + "'");
}

struct Checkpoint {
  CheckpointKind kind = CheckpointKind::blstm_tagger;
  ModelConfig model;
  std::optional<TrainConfig> train;
  std::vector<neural::NamedTensor> tensors;
  std::optional<Vocabulary> words;
  std::optional<SubwordVocabulary> subwords;

  const neural::NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

template <typename T>
std::vector<neural::NamedTensor> named_tensors(const neural::ParameterRefs<T>& params) {
  std::vector<neural::NamedTensor> out;
  out.reserve(params.size());
  for (const auto* p : params) out.push_back({p->name, neural::tensor_cast<float>(p->value)});
  return out;
}

/// Copies archive tensors into params by name. Every parameter must be present
/// with its exact shape; all offenders are listed in one shape_mismatch error.
/// With `strict`, archive tensors that match no parameter are offenders too.
template <typename T>
void assign_tensors(const neural::ParameterRefs<T>& params, const std::vector<neural::NamedTensor>& tensors,
                    bool strict = true, const std::string& prefix = {}) {
  std::map<std::string, const neural::NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  std::vector<std::string> offenders;
  std::set<std::string> used;
  for (const auto* p : params) {
    if (!prefix.empty() && p->name.rfind(prefix, 0) != 0) continue;
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      offenders.push_back(p->name + " (missing, expected " + neural::shape_string(p->value.shape()) + ")");
      continue;
    }
    used.insert(p->name);
    if (it->second->tensor.shape() != p->value.shape()) {
      offenders.push_back(p->name + " (archive " + neural::shape_string(it->second->tensor.shape()) + ", expected " +
                          neural::shape_string(p->value.shape()) + ")");
    }
  }
  if (strict) {
    for (const auto& [name, t] : by_name) {
      if (!used.count(name) && (prefix.empty() || name.rfind(prefix, 0) == 0)) offenders.push_back(name + " (unexpected)");
    }
  }
  if (!offenders.empty()) {
    std::string msg = "checkpoint does not match model configuration:";
    for (const auto& o : offenders) msg += "\n  " + o;
    fail(ErrorKind::shape_mismatch, msg);
  }
  for (auto* p : params) {
    if (!prefix.empty() && p->name.rfind(prefix, 0) != 0) continue;
    const auto& src = by_name.at(p->name)->tensor;
    for (std::size_t i = 0; i < src.size(); ++i) p->value[i] = static_cast<T>(src[i]);
  }
}

namespace detail {

inline void write_config(const std::filesystem::path& dir, CheckpointKind kind, const ModelConfig& model,
                         const std::optional<TrainConfig>& train) {
  nlohmann::ordered_json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = to_string(kind);
  j["model"] = to_json(model);
  j["train"] = train ? to_json(*train) : nlohmann::ordered_json(nullptr);
  std::ofstream out(dir / "config.json", std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + (dir / "config.json").string());
  out << j.dump(2) << '\n';
}

inline void prepare_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create checkpoint directory " + dir.string() + ": " + ec.message());
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, BlstmTagger<T>& model, const Vocabulary& vocab,
                     const std::optional<TrainConfig>& train = std::nullopt) {
  detail::prepare_dir(dir);
  detail::write_config(dir, CheckpointKind::blstm_tagger, model.config(), train);
  neural::write_archive(dir / "tensors.bin", named_tensors(model.parameters()));
  vocab.save(dir / "vocab.txt");
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, EncoderTagger<T>& model, const SubwordVocabulary& vocab,
                     const std::optional<TrainConfig>& train = std::nullopt) {
  detail::prepare_dir(dir);
  detail::write_config(dir, CheckpointKind::encoder_tagger, model.config(), train);
  neural::write_archive(dir / "tensors.bin", named_tensors(model.parameters()));
  vocab.save(dir / "vocab.txt");
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, EncoderMlm<T>& model, const SubwordVocabulary& vocab,
                     const std::optional<TrainConfig>& train = std::nullopt) {
  detail::prepare_dir(dir);
  detail::write_config(dir, CheckpointKind::encoder_mlm, model.config(), train);
  neural::write_archive(dir / "tensors.bin", named_tensors(model.parameters()));
  vocab.save(dir / "vocab.txt");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto config_path = dir / "config.json";
  std::ifstream in(config_path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + config_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, config_path.string() + ": " + e.what());
  }
  Checkpoint ck;
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kFormatVersion) {
      fail(ErrorKind::parse, config_path.string() + ": unsupported format_version " + std::to_string(version));
    }
    ck.kind = checkpoint_kind_from_string(j.at("kind").get<std::string>());
    ck.model = model_config_from_json(j.at("model"));
    if (j.contains("train") && !j["train"].is_null()) ck.train = train_config_from_json(j["train"]);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, config_path.string() + ": " + e.what());
  }
  ck.tensors = neural::read_archive(dir / "tensors.bin");
  if (ck.kind == CheckpointKind::blstm_tagger) {
    ck.words = Vocabulary::load(dir / "vocab.txt");
    if (ck.words->size() != ck.model.vocab_size) {
      fail(ErrorKind::shape_mismatch, "vocabulary has " + std::to_string(ck.words->size()) + " entries, config says " +
                                          std::to_string(ck.model.vocab_size));
    }
  } else {
    ck.subwords = SubwordVocabulary::load(dir / "vocab.txt");
    if (ck.subwords->size() != ck.model.vocab_size) {
      fail(ErrorKind::shape_mismatch, "subword vocabulary has " + std::to_string(ck.subwords->size()) +
                                          " entries, config says " + std::to_string(ck.model.vocab_size));
    }
  }
  return ck;
}

template <typename T = float>
BlstmTagger<T> restore_blstm(const Checkpoint& ck) {
  if (ck.kind != CheckpointKind::blstm_tagger) fail(ErrorKind::invalid_argument, "checkpoint is not a BLSTM tagger");
  BlstmTagger<T> model(ck.model);
  assign_tensors(model.parameters(), ck.tensors);
  return model;
}

template <typename T = float>
EncoderTagger<T> restore_encoder_tagger(const Checkpoint& ck) {
  if (ck.kind != CheckpointKind::encoder_tagger) fail(ErrorKind::invalid_argument, "checkpoint is not an encoder tagger");
  EncoderTagger<T> model(ck.model);
  assign_tensors(model.parameters(), ck.tensors);
  return model;
}

template <typename T = float>
EncoderMlm<T> restore_encoder_mlm(const Checkpoint& ck) {
  if (ck.kind != CheckpointKind::encoder_mlm) fail(ErrorKind::invalid_argument, "checkpoint is not an MLM encoder");
  EncoderMlm<T> model(ck.model);
  assign_tensors(model.parameters(), ck.tensors);
  return model;
}

}  // namespace phrasebreak::models

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "phrasebreak/labels.hpp"
#include "phrasebreak/models/blstm.hpp"
#include "phrasebreak/models/checkpoint.hpp"
#include "phrasebreak/models/encoder.hpp"
#include "phrasebreak/textproc.hpp"

namespace phrasebreak::models {

/// Per-row argmax over [NB, B] logits. Equal logits resolve to NB.
template <typename T>
std::vector<BreakLabel> argmax_labels(const neural::Tensor<T>& logits) {
  if (logits.cols() != static_cast<std::size_t>(kNumLabels)) {
    fail(ErrorKind::shape_mismatch, "expected two logit columns, got " + std::to_string(logits.cols()));
  }
  std::vector<BreakLabel> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    out[r] = logits(r, 1) > logits(r, 0) ? BreakLabel::B : BreakLabel::NB;
  }
  return out;
}

template <typename T>
neural::Tensor<T> blstm_word_logits(const BlstmTagger<T>& model, const Vocabulary& vocab,
                                    const std::vector<std::string>& words) {
  if (words.empty()) fail(ErrorKind::empty_input, "no words to decode");
  const auto ids = vocab.encode(words);
  return model.logits(ids);
}

/// Runs each max_len chunk separately and reads the logits at every word's last piece.
template <typename T>
neural::Tensor<T> encoder_word_logits(const EncoderWithHead<T>& model, const SubwordVocabulary& vocab,
                                      const std::vector<std::string>& words) {
  if (words.empty()) fail(ErrorKind::empty_input, "no words to decode");
  LabeledSequence seq{{}, words, std::vector<BreakLabel>(words.size(), BreakLabel::NB)};
  const auto chunks = align_labels_to_subwords(seq, vocab, model.config().max_len);
  neural::Tensor<T> out(words.size(), static_cast<std::size_t>(kNumLabels));
  std::size_t w = 0;
  for (const auto& chunk : chunks) {
    const auto logits = model.logits(chunk.piece_ids);
    for (std::size_t t = 0; t < chunk.piece_ids.size(); ++t) {
      if (!chunk.word_boundary_mask[t]) continue;
      for (std::size_t c = 0; c < out.cols(); ++c) out(w, c) = logits(t, c);
      ++w;
    }
  }
  return out;
}

// An inference-ready phrasing model of either variant. Immutable after
// construction; concurrent decode calls are safe.
class PhraseBreakModel {
 public:
  PhraseBreakModel(BlstmTagger<float> model, Vocabulary vocab) : impl_(Blstm{std::move(model), std::move(vocab)}) {}
  PhraseBreakModel(EncoderTagger<float> model, SubwordVocabulary vocab)
      : impl_(Encoder{std::move(model), std::move(vocab)}) {}

  static PhraseBreakModel from_checkpoint(const Checkpoint& ck) {
    switch (ck.kind) {
      case CheckpointKind::blstm_tagger: return PhraseBreakModel(restore_blstm<float>(ck), *ck.words);
      case CheckpointKind::encoder_tagger: return PhraseBreakModel(restore_encoder_tagger<float>(ck), *ck.subwords);
      case CheckpointKind::encoder_mlm: break;
    }
    fail(ErrorKind::invalid_argument, "an MLM checkpoint has no phrase-break head; fine-tune it first");
  }

  static PhraseBreakModel load(const std::filesystem::path& dir) { return from_checkpoint(load_checkpoint(dir)); }

  Variant variant() const { return std::holds_alternative<Blstm>(impl_) ? Variant::blstm : Variant::encoder; }

  neural::Tensor<float> word_logits(const std::vector<std::string>& words) const {
    if (const auto* b = std::get_if<Blstm>(&impl_)) return blstm_word_logits(b->model, b->vocab, words);
    const auto& e = std::get<Encoder>(impl_);
    return encoder_word_logits(e.model, e.vocab, words);
  }

 private:
  struct Blstm {
    BlstmTagger<float> model;
    Vocabulary vocab;
  };
  struct Encoder {
    EncoderTagger<float> model;
    SubwordVocabulary vocab;
  };
  std::variant<Blstm, Encoder> impl_;
};

inline std::vector<BreakLabel> greedy_decode(const PhraseBreakModel& model, const std::vector<std::string>& words) {
  return argmax_labels(model.word_logits(words));
}

/// strip_punctuation -> greedy_decode -> insert_breaks_as_commas. Without a
/// model the text is only normalised (no commas, terminal period).
inline std::string punctuate_text(const PhraseBreakModel* model, std::string_view raw) {
  const auto stripped = strip_punctuation(raw);
  std::vector<BreakLabel> labels(stripped.words.size(), BreakLabel::NB);
  if (model) labels = greedy_decode(*model, stripped.words);
  return insert_breaks_as_commas(stripped.words, labels);
}

}  // namespace phrasebreak::models

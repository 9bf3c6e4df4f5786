#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "phrasebreak/error.hpp"
#include "phrasebreak/eval.hpp"
#include "phrasebreak/labels.hpp"
#include "phrasebreak/models/blstm.hpp"
#include "phrasebreak/models/checkpoint.hpp"
#include "phrasebreak/models/config.hpp"
#include "phrasebreak/models/encoder.hpp"
#include "phrasebreak/models/phraser.hpp"
#include "phrasebreak/neural/loss.hpp"
#include "phrasebreak/neural/optim.hpp"
#include "phrasebreak/textproc.hpp"

namespace phrasebreak::models {

// One model input row: token ids and per-token targets (kIgnoreIndex = no loss).
struct TaggingExample {
  std::vector<int> ids;
  std::vector<int> targets;
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;     // before clipping
  double applied_norm = 0.0;  // after clipping
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::size_t steps = 0;
  std::optional<eval::BreakMetrics> dev;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  std::size_t best_epoch = 0;
  std::optional<double> best_dev_f1;
};

struct TrainOptions {
  std::function<void(const StepRecord&)> on_step;
  // Return false to stop after this epoch.
  std::function<bool(const EpochRecord&)> on_epoch;
};

/// Length-bucketed batches: indices are shuffled, sorted by length inside pools
/// of 50 batches, cut into batches, and the batch order is shuffled again.
inline std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> lengths, std::size_t batch_size,
                                                          std::mt19937_64& rng) {
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t pool = batch_size * 50;
  for (std::size_t start = 0; start < order.size(); start += pool) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(start);
    const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + pool));
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

namespace detail {

inline std::string where(std::size_t epoch, std::size_t step) {
  return "epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
}

// Shared epoch loop. `step` accumulates gradients for one batch and returns its
// loss (nullopt = nothing to learn from, skip the update); `evaluate` scores the
// dev split. The parameters of the best dev-F1 epoch (last epoch without a dev
// split) are restored before returning.
template <typename T>
TrainHistory run_epochs(const neural::ParameterRefs<T>& params, std::span<const std::size_t> lengths,
                        const TrainConfig& cfg, const TrainOptions& options,
                        const std::function<std::optional<double>(const std::vector<std::size_t>&)>& step,
                        const std::function<std::optional<eval::BreakMetrics>()>& evaluate) {
  neural::Adam<T> optimizer(params);
  std::mt19937_64 shuffle_rng(cfg.seed);
  TrainHistory history;
  std::vector<neural::Tensor<T>> best;
  std::size_t global_step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.num_epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    double loss_sum = 0.0;
    for (const auto& batch : make_batches(lengths, cfg.batch_size, shuffle_rng)) {
      ++global_step;
      optimizer.zero_grad();
      const auto loss = step(batch);
      if (!loss) continue;
      if (!std::isfinite(*loss)) fail(ErrorKind::divergence, "non-finite loss at " + where(epoch, global_step));
      StepRecord sr{epoch, global_step, *loss, neural::global_grad_norm(params), 0.0};
      sr.applied_norm = sr.grad_norm;
      if (cfg.grad_clip_norm) sr.applied_norm = sr.grad_norm * neural::clip_gradients(params, *cfg.grad_clip_norm);
      try {
        optimizer.step(cfg.learning_rate);
      } catch (const Error& e) {
        fail(ErrorKind::divergence, std::string(e.what()) + " at " + where(epoch, global_step));
      }
      if (options.on_step) options.on_step(sr);
      history.step_losses.push_back(*loss);
      loss_sum += *loss;
      ++record.steps;
    }
    record.train_loss = record.steps ? loss_sum / static_cast<double>(record.steps) : 0.0;
    record.dev = evaluate ? evaluate() : std::nullopt;
    const bool improved = !record.dev || !history.best_dev_f1 || record.dev->f1_break > *history.best_dev_f1;
    if (improved) {
      history.best_epoch = epoch;
      if (record.dev) history.best_dev_f1 = record.dev->f1_break;
      best.clear();
      for (const auto* p : params) best.push_back(p->value);
    }
    history.epochs.push_back(record);
    if (options.on_epoch && !options.on_epoch(record)) break;
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  return history;
}

template <typename T>
std::vector<std::size_t> example_lengths(const std::vector<TaggingExample>& examples) {
  std::vector<std::size_t> lengths;
  lengths.reserve(examples.size());
  for (const auto& e : examples) lengths.push_back(e.ids.size());
  return lengths;
}

template <typename Decode>
eval::BreakMetrics score_with(const std::vector<LabeledSequence>& dev, Decode&& decode) {
  std::vector<LabeledSequence> hyp;
  hyp.reserve(dev.size());
  for (const auto& seq : dev) hyp.push_back({seq.id, seq.words, decode(seq.words)});
  return eval::score_predictions(dev, hyp);
}

// Runs `rows` through `forward`, concatenates their logits, applies one mean
// cross entropy and hands each row its slice of the gradient.
template <typename T, typename Forward, typename Backward>
std::optional<double> batch_cross_entropy(std::size_t rows, std::size_t classes, Forward&& forward, Backward&& backward) {
  std::vector<neural::Tensor<T>> logits(rows);
  std::vector<int> targets;
  std::size_t total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    logits[r] = forward(r, targets);
    total += logits[r].rows();
  }
  if (std::none_of(targets.begin(), targets.end(), [](int t) { return t != kIgnoreIndex; })) return std::nullopt;
  neural::Tensor<T> stacked(total, classes);
  std::size_t offset = 0;
  for (const auto& l : logits) {
    std::copy(l.data(), l.data() + l.size(), stacked.data() + offset * classes);
    offset += l.rows();
  }
  const auto result = neural::softmax_cross_entropy(stacked, targets);
  offset = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    neural::Tensor<T> g(logits[r].rows(), classes);
    std::copy(result.grad.data() + offset * classes, result.grad.data() + (offset + logits[r].rows()) * classes, g.data());
    offset += logits[r].rows();
    backward(r, g);
  }
  return result.loss;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BLSTM

inline std::vector<TaggingExample> blstm_examples(const std::vector<LabeledSequence>& data, const Vocabulary& vocab) {
  std::vector<TaggingExample> out;
  out.reserve(data.size());
  for (const auto& seq : data) {
    seq.validate();
    if (seq.words.empty()) continue;
    TaggingExample e;
    e.ids = vocab.encode(seq.words);
    for (auto l : seq.labels) e.targets.push_back(to_index(l));
    out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
std::optional<double> blstm_batch_step(BlstmTagger<T>& model, const std::vector<TaggingExample>& examples,
                                       const std::vector<std::size_t>& batch) {
  std::vector<typename BlstmTagger<T>::Cache> caches(batch.size());
  return detail::batch_cross_entropy<T>(
      batch.size(), model.config().num_labels,
      [&](std::size_t r, std::vector<int>& targets) {
        const auto& e = examples[batch[r]];
        targets.insert(targets.end(), e.targets.begin(), e.targets.end());
        return model.forward(e.ids, caches[r]);
      },
      [&](std::size_t r, const neural::Tensor<T>& g) { model.backward(caches[r], g); });
}

struct BlstmTrainResult {
  BlstmTagger<float> model;
  Vocabulary vocab;
  TrainHistory history;
};

/// Builds the word vocabulary from `train` (min_freq), trains with Adam on
/// shuffled length-bucketed batches and keeps the best dev break-F1 epoch.
inline BlstmTrainResult train_blstm(const std::vector<LabeledSequence>& train, const std::vector<LabeledSequence>& dev,
                                    const TrainConfig& cfg, ModelConfig mcfg, std::size_t min_freq = 2,
                                    const TrainOptions& options = {}) {
  if (train.empty()) fail(ErrorKind::empty_input, "train_blstm: empty training split");
  cfg.validate();
  Vocabulary vocab = build_vocab(train, min_freq);
  mcfg.variant = Variant::blstm;
  mcfg.vocab_size = vocab.size();
  BlstmTagger<float> model(mcfg);
  model.init(cfg.seed);
  const auto examples = blstm_examples(train, vocab);
  const auto lengths = detail::example_lengths<float>(examples);
  std::function<std::optional<eval::BreakMetrics>()> evaluate;
  if (!dev.empty()) {
    evaluate = [&] {
      return std::optional(detail::score_with(dev, [&](const std::vector<std::string>& w) {
        return argmax_labels(blstm_word_logits(model, vocab, w));
      }));
    };
  }
  auto history = detail::run_epochs<float>(
      model.parameters(), lengths, cfg, options, [&](const auto& batch) { return blstm_batch_step(model, examples, batch); },
      evaluate);
  return {std::move(model), std::move(vocab), std::move(history)};
}

// ---------------------------------------------------------------------------
// Encoder token classification

inline std::vector<TaggingExample> encoder_examples(const std::vector<LabeledSequence>& data,
                                                    const SubwordVocabulary& vocab, std::size_t max_len) {
  std::vector<TaggingExample> out;
  for (const auto& seq : data) {
    if (seq.words.empty()) continue;
    for (auto& chunk : align_labels_to_subwords(seq, vocab, max_len)) {
      out.push_back({std::move(chunk.piece_ids), std::move(chunk.labels_on_pieces)});
    }
  }
  return out;
}

// Pads every row of the batch to the longest row; padding is masked out of
// attention and carries kIgnoreIndex targets.
template <typename T, typename Model>
std::optional<double> encoder_batch_step(Model& model, const std::vector<TaggingExample>& examples,
                                         const std::vector<std::size_t>& batch, int pad_id, std::size_t classes,
                                         const neural::ForwardMode& mode) {
  std::size_t width = 0;
  for (auto i : batch) width = std::max(width, examples[i].ids.size());
  std::vector<typename Model::Cache> caches(batch.size());
  return detail::batch_cross_entropy<T>(
      batch.size(), classes,
      [&](std::size_t r, std::vector<int>& targets) {
        const auto& e = examples[batch[r]];
        std::vector<int> ids(width, pad_id);
        std::vector<bool> valid(width, false);
        std::copy(e.ids.begin(), e.ids.end(), ids.begin());
        std::fill(valid.begin(), valid.begin() + static_cast<std::ptrdiff_t>(e.ids.size()), true);
        targets.insert(targets.end(), e.targets.begin(), e.targets.end());
        targets.insert(targets.end(), width - e.ids.size(), kIgnoreIndex);
        return model.forward(ids, valid, mode, caches[r]);
      },
      [&](std::size_t r, const neural::Tensor<T>& g) { model.backward(caches[r], g); });
}

struct EncoderTrainResult {
  EncoderTagger<float> model;
  SubwordVocabulary vocab;
  TrainHistory history;
};

/// Copies the encoder body from `init` (an MLM or tagger checkpoint), draws a
/// fresh classification head and fine-tunes every parameter.
inline EncoderTrainResult finetune_encoder(const std::vector<LabeledSequence>& train,
                                           const std::vector<LabeledSequence>& dev, const Checkpoint& init,
                                           const TrainConfig& cfg, const TrainOptions& options = {}) {
  if (train.empty()) fail(ErrorKind::empty_input, "finetune_encoder: empty training split");
  cfg.validate();
  if (init.kind == CheckpointKind::blstm_tagger || !init.subwords) {
    fail(ErrorKind::invalid_argument, "finetune_encoder: initial checkpoint is not an encoder");
  }
  const SubwordVocabulary& vocab = *init.subwords;
  EncoderTagger<float> model(init.model);
  assign_tensors(model.parameters(), init.tensors, true, "encoder.");
  model.init_head(cfg.seed);

  const auto examples = encoder_examples(train, vocab, init.model.max_len);
  const auto lengths = detail::example_lengths<float>(examples);
  std::mt19937_64 dropout_rng(cfg.seed + 1);
  const neural::ForwardMode mode{true, init.model.dropout_p, &dropout_rng};
  std::function<std::optional<eval::BreakMetrics>()> evaluate;
  if (!dev.empty()) {
    evaluate = [&] {
      return std::optional(detail::score_with(dev, [&](const std::vector<std::string>& w) {
        return argmax_labels(encoder_word_logits(model, vocab, w));
      }));
    };
  }
  auto history = detail::run_epochs<float>(
      model.parameters(), lengths, cfg, options,
      [&](const auto& batch) {
        return encoder_batch_step<float>(model, examples, batch, vocab.pad_id(), init.model.num_labels, mode);
      },
      evaluate);
  return {std::move(model), vocab, std::move(history)};
}

// ---------------------------------------------------------------------------
// Masked-language-model pre-training

struct MaskedSequence {
  std::vector<int> inputs;
  std::vector<int> targets;  // original id at selected positions, kIgnoreIndex elsewhere
  std::size_t selected = 0, masked = 0, randomized = 0, kept = 0;
};

/// Selects each non-special piece with probability `rate`; a selected piece is
/// replaced by [MASK] 80% of the time, by a random non-special piece 10%, and
/// left unchanged 10%.
inline MaskedSequence mask_for_mlm(std::span<const int> pieces, const SubwordVocabulary& vocab, std::mt19937_64& rng,
                                   double rate = 0.15) {
  const auto mask_id = vocab.mask_id();
  if (!mask_id) fail(ErrorKind::invalid_argument, "subword vocabulary lacks [MASK]");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> any_piece(0, static_cast<int>(vocab.size()) - 1);
  MaskedSequence out;
  out.inputs.assign(pieces.begin(), pieces.end());
  out.targets.assign(pieces.size(), kIgnoreIndex);
  for (std::size_t t = 0; t < pieces.size(); ++t) {
    if (vocab.is_special(pieces[t]) || u(rng) >= rate) continue;
    ++out.selected;
    out.targets[t] = pieces[t];
    const double action = u(rng);
    if (action < 0.8) {
      out.inputs[t] = *mask_id;
      ++out.masked;
    } else if (action < 0.9) {
      int replacement = any_piece(rng);
      while (vocab.is_special(replacement)) replacement = any_piece(rng);
      out.inputs[t] = replacement;
      ++out.randomized;
    } else {
      ++out.kept;
    }
  }
  return out;
}

struct MlmTrainResult {
  EncoderMlm<float> model;
  TrainHistory history;
};

/// Trains an encoder from scratch on masked-piece prediction. Sequences are
/// WordPiece-encoded and chunked to max_len; masks are redrawn every epoch.
inline MlmTrainResult pretrain_encoder_mlm(const std::vector<std::vector<std::string>>& corpus,
                                           const SubwordVocabulary& vocab, const TrainConfig& cfg, ModelConfig mcfg,
                                           const TrainOptions& options = {}) {
  if (!vocab.mask_id()) fail(ErrorKind::invalid_argument, "pretrain_encoder_mlm: subword vocabulary lacks [MASK]");
  if (corpus.empty()) fail(ErrorKind::empty_input, "pretrain_encoder_mlm: empty corpus");
  cfg.validate();
  mcfg.variant = Variant::encoder;
  mcfg.vocab_size = vocab.size();
  EncoderMlm<float> model(mcfg);
  model.init(cfg.seed);

  std::vector<TaggingExample> examples;
  for (const auto& words : corpus) {
    if (words.empty()) continue;
    LabeledSequence seq{{}, words, std::vector<BreakLabel>(words.size(), BreakLabel::NB)};
    for (auto& chunk : align_labels_to_subwords(seq, vocab, mcfg.max_len)) {
      examples.push_back({std::move(chunk.piece_ids), {}});
    }
  }
  const auto lengths = detail::example_lengths<float>(examples);
  std::mt19937_64 dropout_rng(cfg.seed + 1);
  std::mt19937_64 mask_rng(cfg.seed + 2);
  const neural::ForwardMode mode{true, mcfg.dropout_p, &dropout_rng};
  std::vector<TaggingExample> masked;
  auto history = detail::run_epochs<float>(
      model.parameters(), lengths, cfg, options,
      [&](const std::vector<std::size_t>& batch) {
        masked.clear();
        std::vector<std::size_t> local(batch.size());
        for (std::size_t r = 0; r < batch.size(); ++r) {
          auto m = mask_for_mlm(examples[batch[r]].ids, vocab, mask_rng);
          masked.push_back({std::move(m.inputs), std::move(m.targets)});
          local[r] = r;
        }
        return encoder_batch_step<float>(model, masked, local, vocab.pad_id(), vocab.size(), mode);
      },
      {});
  return {std::move(model), std::move(history)};
}

}  // namespace phrasebreak::models

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "support.hpp"

using namespace phrasebreak;
using namespace phrasebreak::models;
using pbtest::TempDir;

namespace {

template <typename Fn>
ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::parse;
}

std::vector<std::vector<std::string>> words_of(const std::vector<LabeledSequence>& data) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : data) out.push_back(s.words);
  return out;
}

neural::Tensor<float> logits_from(std::initializer_list<std::pair<float, float>> rows) {
  neural::Tensor<float> t(rows.size(), 2);
  std::size_t r = 0;
  for (auto [nb, b] : rows) {
    t(r, 0) = nb;
    t(r, 1) = b;
    ++r;
  }
  return t;
}

// An untrained MLM encoder saved and reloaded: the usual fine-tuning starting point.
Checkpoint tiny_mlm_checkpoint(const TempDir& dir, const std::vector<std::vector<std::string>>& corpus,
                               std::uint64_t seed = 3) {
  auto vocab = build_subword_vocab(corpus, 1);
  auto cfg = pbtest::tiny_encoder_config(vocab.size());
  EncoderMlm<float> mlm(cfg);
  mlm.init(seed);
  save_checkpoint(dir / "mlm", mlm, vocab);
  return load_checkpoint(dir / "mlm");
}

std::vector<neural::Tensor<float>> snapshot(const neural::ParameterRefs<float>& params) {
  std::vector<neural::Tensor<float>> out;
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

bool bit_identical(const neural::Tensor<float>& a, const neural::Tensor<float>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST(Config, PublishedDefaults) {
  const auto m = ModelConfig::published_blstm(100);
  EXPECT_EQ(m.embedding_dim, 300u);
  EXPECT_EQ(m.hidden_size, 512u);
  EXPECT_EQ(m.num_layers, 2u);
  const auto t = TrainConfig::published_blstm();
  EXPECT_EQ(t.batch_size, 64u);
  EXPECT_DOUBLE_EQ(t.learning_rate, 0.001);
  EXPECT_EQ(t.num_epochs, 10u);
  const auto f = TrainConfig::published_finetune();
  EXPECT_EQ(f.batch_size, 64u);
  EXPECT_DOUBLE_EQ(f.learning_rate, 1e-5);
  ASSERT_TRUE(f.grad_clip_norm);
  EXPECT_DOUBLE_EQ(*f.grad_clip_norm, 10.0);
  EXPECT_EQ(f.num_epochs, 10u);
}

TEST(Config, JsonRoundTripAndValidation) {
  auto m = ModelConfig::desk_encoder(321);
  EXPECT_EQ(model_config_from_json(to_json(m)), m);
  auto t = TrainConfig::published_finetune();
  t.seed = 99;
  EXPECT_EQ(train_config_from_json(to_json(t)), t);
  m.num_heads = 3;
  EXPECT_EQ(kind_of([&] { m.validate(); }), ErrorKind::invalid_argument);
  t.batch_size = 0;
  EXPECT_EQ(kind_of([&] { t.validate(); }), ErrorKind::invalid_argument);
}

TEST(Models, BlstmShapes) {
  auto cfg = pbtest::tiny_blstm_config(11);
  BlstmTagger<float> model(cfg);
  model.init(1);
  const std::vector<int> ids{1, 5, 9, 2};
  const auto logits = model.logits(ids);
  EXPECT_EQ(logits.rows(), 4u);
  EXPECT_EQ(logits.cols(), 2u);
  EXPECT_EQ(model.classifier.weight.value.rows() * model.classifier.weight.value.cols(), 2 * cfg.hidden_size * 2);
}

TEST(Models, MlmHeadWidthIsVocabulary) {
  auto cfg = pbtest::tiny_encoder_config(57);
  EncoderMlm<float> mlm(cfg);
  mlm.init(2);
  const std::vector<int> ids{2, 8, 9, 3};
  EXPECT_EQ(mlm.logits(ids).cols(), 57u);
  EncoderTagger<float> tagger(cfg);
  tagger.init(2);
  EXPECT_EQ(tagger.logits(ids).cols(), 2u);
}

TEST(Decode, ArgmaxExamplesAndTie) {
  EXPECT_EQ(argmax_labels(logits_from({{2.0f, 0.1f}, {0.0f, 3.0f}})),
            (std::vector<BreakLabel>{BreakLabel::NB, BreakLabel::B}));
  EXPECT_EQ(argmax_labels(logits_from({{0.0f, 0.0f}})), (std::vector<BreakLabel>{BreakLabel::NB}));
}

TEST(Decode, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<std::size_t> len(1, 10);
  std::normal_distribution<float> z(0.0f, 2.0f);
  for (int c = 0; c < 100; ++c) {
    neural::Tensor<float> logits(len(rng), 2);
    for (auto& v : logits.values()) v = z(rng);
    if (c % 10 == 0) logits(0, 1) = logits(0, 0);  // keep ties in the mix
    EXPECT_EQ(argmax_labels(logits), pbtest::exhaustive_decode(logits)) << "case " << c;
  }
}

TEST(Decode, EmptyInputIsAnError) {
  auto cfg = pbtest::tiny_blstm_config(4);
  BlstmTagger<float> model(cfg);
  model.init(1);
  PhraseBreakModel pm(std::move(model), Vocabulary(std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(kind_of([&] { greedy_decode(pm, {}); }), ErrorKind::empty_input);
}

TEST(Decode, EvalModeLeavesParametersUntouched) {
  std::mt19937_64 rng(5);
  const auto data = pbtest::make_rule_sequences(pbtest::make_rule_lexicon(), 20, rng);
  const auto vocab = build_subword_vocab(words_of(data), 1);
  EncoderTagger<float> model(pbtest::tiny_encoder_config(vocab.size()));
  model.init(7);
  const auto before = snapshot(model.parameters());
  const auto first = encoder_word_logits(model, vocab, data[0].words);
  for (int i = 0; i < 5; ++i) {
    const auto again = encoder_word_logits(model, vocab, data[0].words);
    EXPECT_TRUE(bit_identical(first, again));
  }
  const auto after = snapshot(model.parameters());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(bit_identical(before[i], after[i]));
}

TEST(Decode, LongInputsAreChunked) {
  std::vector<std::vector<std::string>> corpus{{"alpha", "beta", "gamma"}};
  const auto vocab = build_subword_vocab(corpus, 1);
  auto cfg = pbtest::tiny_encoder_config(vocab.size());
  cfg.max_len = 6;
  EncoderTagger<float> model(cfg);
  model.init(4);
  std::vector<std::string> words;
  for (int i = 0; i < 30; ++i) words.push_back(corpus[0][i % 3]);
  const auto logits = encoder_word_logits(model, vocab, words);
  EXPECT_EQ(logits.rows(), words.size());
  // Chunks are decoded independently: the first chunk's rows match decoding its words alone.
  const LabeledSequence seq{{}, words, std::vector<BreakLabel>(words.size(), BreakLabel::NB)};
  const auto chunks = align_labels_to_subwords(seq, vocab, cfg.max_len);
  ASSERT_GT(chunks.size(), 1u);
  const std::vector<std::string> head(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(chunks[0].word_count));
  const auto alone = encoder_word_logits(model, vocab, head);
  for (std::size_t r = 0; r < head.size(); ++r) {
    EXPECT_EQ(alone(r, 0), logits(r, 0));
    EXPECT_EQ(alone(r, 1), logits(r, 1));
  }
}

TEST(Punctuate, PassthroughWithoutModel) {
  EXPECT_EQ(punctuate_text(nullptr, "Hello, World! How are you"), "hello world how are you.");
}

TEST(Punctuate, AllNbModelGivesNormalizedText) {
  auto cfg = pbtest::tiny_blstm_config(4);
  BlstmTagger<float> model(cfg);
  model.init(1);
  for (auto& v : model.classifier.weight.value.values()) v = 0.0f;
  model.classifier.bias.value[0] = 5.0f;
  model.classifier.bias.value[1] = -5.0f;
  PhraseBreakModel pm(std::move(model), Vocabulary(std::vector<std::string>{"hello", "world"}));
  const std::string raw = "Hello, there; world: again";
  EXPECT_EQ(punctuate_text(&pm, raw), punctuate_text(nullptr, raw));
  EXPECT_EQ(punctuate_text(&pm, raw), "hello there world again.");
}

TEST(Punctuate, CommasMatchDecodedBreaks) {
  std::mt19937_64 rng(17);
  const auto lex = pbtest::make_rule_lexicon();
  const auto data = pbtest::make_rule_sequences(lex, 50, rng);
  const auto vocab = build_vocab(data, 1);
  auto cfg = pbtest::tiny_blstm_config(vocab.size());
  BlstmTagger<float> model(cfg);
  model.init(9);
  for (auto& v : model.classifier.bias.value.values()) v = 0.0f;
  PhraseBreakModel pm(std::move(model), vocab);
  std::size_t with_commas = 0;
  for (const auto& seq : data) {
    std::string raw;
    for (const auto& w : seq.words) raw += w + " ";
    const auto labels = greedy_decode(pm, seq.words);
    const auto out = punctuate_text(&pm, raw);
    std::set<std::size_t> expected;
    for (std::size_t i = 0; i + 1 < labels.size(); ++i) {
      if (labels[i] == BreakLabel::B) expected.insert(i);
    }
    const auto reparsed = strip_punctuation(out);
    EXPECT_EQ(reparsed.words, seq.words);
    EXPECT_EQ(reparsed.comma_boundaries, expected);
    with_commas += !expected.empty();
  }
  EXPECT_GT(with_commas, 0u);
}

TEST(TrainBlstm, EmptySplitIsAnError) {
  EXPECT_EQ(kind_of([] { train_blstm({}, {}, TrainConfig::published_blstm(), pbtest::tiny_blstm_config(2)); }),
            ErrorKind::empty_input);
}

TEST(TrainBlstm, FixedSeedGivesIdenticalLossCurves) {
  std::mt19937_64 rng(3);
  const auto data = pbtest::make_rule_sequences(pbtest::make_rule_lexicon(), 40, rng);
  TrainConfig cfg = TrainConfig::published_blstm();
  cfg.batch_size = 8;
  cfg.num_epochs = 3;
  cfg.seed = 12;
  const auto a = train_blstm(data, data, cfg, pbtest::tiny_blstm_config(0), 1);
  const auto b = train_blstm(data, data, cfg, pbtest::tiny_blstm_config(0), 1);
  ASSERT_EQ(a.history.step_losses.size(), 15u);
  EXPECT_EQ(a.history.step_losses, b.history.step_losses);
  cfg.seed = 13;
  const auto c = train_blstm(data, data, cfg, pbtest::tiny_blstm_config(0), 1);
  EXPECT_NE(a.history.step_losses, c.history.step_losses);
}

TEST(TrainBlstm, RecordsDevF1AndKeepsBestEpoch) {
  std::mt19937_64 rng(8);
  const auto lex = pbtest::make_rule_lexicon();
  const auto train = pbtest::make_rule_sequences(lex, 64, rng);
  const auto dev = pbtest::make_rule_sequences(lex, 16, rng);
  TrainConfig cfg = TrainConfig::published_blstm();
  cfg.batch_size = 16;
  cfg.num_epochs = 4;
  cfg.learning_rate = 0.01;
  std::vector<std::size_t> seen;
  TrainOptions opts;
  opts.on_epoch = [&](const EpochRecord& r) {
    seen.push_back(r.epoch);
    return true;
  };
  const auto res = train_blstm(train, dev, cfg, pbtest::tiny_blstm_config(0), 1, opts);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3, 4}));
  ASSERT_TRUE(res.history.best_dev_f1);
  double best = -1;
  for (const auto& e : res.history.epochs) {
    ASSERT_TRUE(e.dev);
    best = std::max(best, e.dev->f1_break);
  }
  EXPECT_DOUBLE_EQ(*res.history.best_dev_f1, best);
  // The returned weights are the best epoch's weights.
  const auto again = models::detail::score_with(dev, [&](const std::vector<std::string>& w) {
    return argmax_labels(blstm_word_logits(res.model, res.vocab, w));
  });
  EXPECT_DOUBLE_EQ(again.f1_break, best);
}

TEST(TrainBlstm, OnEpochCanStopEarly) {
  std::mt19937_64 rng(3);
  const auto data = pbtest::make_rule_sequences(pbtest::make_rule_lexicon(), 16, rng);
  TrainConfig cfg = TrainConfig::published_blstm();
  cfg.num_epochs = 10;
  TrainOptions opts;
  opts.on_epoch = [](const EpochRecord& r) { return r.epoch < 2; };
  const auto res = train_blstm(data, {}, cfg, pbtest::tiny_blstm_config(0), 1, opts);
  EXPECT_EQ(res.history.epochs.size(), 2u);
}

TEST(Training, DivergenceNamesEpochAndStep) {
  neural::Parameter<float> p("w", {2});
  const std::vector<std::size_t> lengths(10, 3);
  TrainConfig cfg;
  cfg.batch_size = 4;  // 3 batches per epoch
  cfg.num_epochs = 3;
  int calls = 0;
  try {
    models::detail::run_epochs<float>({&p}, lengths, cfg, {},
                              [&](const std::vector<std::size_t>&) -> std::optional<double> {
                                return ++calls == 5 ? std::nan("") : 1.0;
                              },
                              {});
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::divergence);
    EXPECT_NE(std::string(e.what()).find("epoch 2, step 5"), std::string::npos) << e.what();
  }
}

TEST(Training, LengthBucketedBatchesCoverEveryExampleOnce) {
  std::mt19937_64 rng(1);
  std::vector<std::size_t> lengths;
  std::uniform_int_distribution<std::size_t> len(1, 40);
  for (int i = 0; i < 1000; ++i) lengths.push_back(len(rng));
  const auto batches = make_batches(lengths, 64, rng);
  std::vector<int> hits(lengths.size(), 0);
  for (const auto& b : batches) {
    EXPECT_LE(b.size(), 64u);
    for (auto i : b) ++hits[i];
  }
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(Mlm, MaskingFractionsFollowPolicy) {
  std::vector<std::vector<std::string>> corpus{{"a", "b", "c", "d", "e", "f", "g", "h"}};
  const auto vocab = build_subword_vocab(corpus, 1);
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> piece(5, static_cast<int>(vocab.size()) - 1);
  std::vector<int> tokens(100000);
  for (auto& t : tokens) t = piece(rng);
  const auto m = mask_for_mlm(tokens, vocab, rng);
  const double sel = double(m.selected);
  EXPECT_NEAR(sel / tokens.size(), 0.15, 0.01);
  EXPECT_NEAR(m.masked / sel, 0.80, 0.01);
  EXPECT_NEAR(m.randomized / sel, 0.10, 0.01);
  EXPECT_NEAR(m.kept / sel, 0.10, 0.01);
  std::size_t loss_positions = 0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (m.targets[t] == kIgnoreIndex) {
      EXPECT_EQ(m.inputs[t], tokens[t]);
    } else {
      ++loss_positions;
      EXPECT_EQ(m.targets[t], tokens[t]);
      EXPECT_FALSE(vocab.is_special(m.inputs[t]) && m.inputs[t] != *vocab.mask_id());
    }
  }
  EXPECT_EQ(loss_positions, m.selected);
}

TEST(Mlm, SpecialPiecesAreNeverSelected) {
  std::vector<std::vector<std::string>> corpus{{"a"}};
  const auto vocab = build_subword_vocab(corpus, 1);
  std::vector<int> specials(1000, vocab.cls_id());
  std::mt19937_64 rng(1);
  EXPECT_EQ(mask_for_mlm(specials, vocab, rng, 1.0).selected, 0u);
}

TEST(Mlm, ZeroSelectionsContributeNoLoss) {
  std::vector<std::vector<std::string>> corpus{{"one", "two", "three"}};
  const auto vocab = build_subword_vocab(corpus, 1);
  EncoderMlm<float> model(pbtest::tiny_encoder_config(vocab.size()));
  model.init(1);
  std::mt19937_64 rng(1);
  const std::vector<int> pieces{vocab.cls_id(), 5, 6, 7, vocab.sep_id()};
  const auto m = mask_for_mlm(pieces, vocab, rng, 0.0);
  EXPECT_EQ(m.selected, 0u);
  std::vector<TaggingExample> ex{{m.inputs, m.targets}};
  const auto loss = encoder_batch_step<float>(model, ex, {0}, vocab.pad_id(), vocab.size(), neural::ForwardMode{});
  EXPECT_FALSE(loss.has_value());
  for (auto* p : model.parameters()) {
    for (float g : p->grad.values()) ASSERT_EQ(g, 0.0f);
  }
}

TEST(Mlm, MissingMaskTokenIsAnError) {
  SubwordVocabulary vocab(std::vector<std::string>{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "a"});
  std::mt19937_64 rng(1);
  const std::vector<int> pieces{4, 4};
  EXPECT_EQ(kind_of([&] { mask_for_mlm(pieces, vocab, rng); }), ErrorKind::invalid_argument);
  EXPECT_EQ(kind_of([&] { pretrain_encoder_mlm({{"a"}}, vocab, TrainConfig::desk_pretrain(), ModelConfig::desk_encoder(5)); }),
            ErrorKind::invalid_argument);
}

TEST(Mlm, LossDecreasesOverFirstFiveEpochs) {
  std::mt19937_64 rng(77);
  const auto data = pbtest::make_rule_sequences(pbtest::make_rule_lexicon(), 1000, rng);
  const auto corpus = words_of(data);
  const auto vocab = build_subword_vocab(corpus, 2);
  auto mcfg = ModelConfig::desk_encoder(vocab.size());
  mcfg.embedding_dim = mcfg.hidden_size = 128;
  mcfg.num_layers = 4;
  mcfg.num_heads = 4;
  mcfg.ffn_size = 256;
  mcfg.max_len = 32;
  auto cfg = TrainConfig::desk_pretrain();
  cfg.num_epochs = 5;
  const auto res = pretrain_encoder_mlm(corpus, vocab, cfg, mcfg);
  ASSERT_EQ(res.history.epochs.size(), 5u);
  for (std::size_t e = 1; e < 5; ++e) {
    EXPECT_LT(res.history.epochs[e].train_loss, res.history.epochs[e - 1].train_loss) << "epoch " << e + 1;
  }
}

TEST(Finetune, ZeroLearningRateOnlyChangesTheHead) {
  TempDir dir;
  std::mt19937_64 rng(4);
  const auto data = pbtest::make_rule_sequences(pbtest::make_rule_lexicon(), 24, rng);
  const auto init = tiny_mlm_checkpoint(dir, words_of(data));
  auto cfg = TrainConfig::published_finetune();
  cfg.learning_rate = 0.0;
  cfg.batch_size = 8;
  cfg.num_epochs = 2;
  auto res = finetune_encoder(data, data, init, cfg);
  std::size_t body = 0;
  for (auto* p : res.model.parameters()) {
    if (p->name.rfind("encoder.", 0) != 0) continue;
    const auto* src = init.find(p->name);
    ASSERT_NE(src, nullptr) << p->name;
    EXPECT_TRUE(bit_identical(p->value, src->tensor)) << p->name;
    ++body;
  }
  EXPECT_GT(body, 10u);
  // The head is fresh and seeded.
  EncoderTagger<float> fresh(init.model);
  fresh.init_head(cfg.seed);
  EXPECT_TRUE(bit_identical(res.model.head.weight.value, fresh.head.weight.value));
}

TEST(Finetune, NonZeroLearningRateUpdatesBody) {
  TempDir dir;
  std::mt19937_64 rng(4);
  const auto data = pbtest::make_rule_sequences(pbtest::make_rule_lexicon(), 16, rng);
  const auto init = tiny_mlm_checkpoint(dir, words_of(data));
  auto cfg = TrainConfig::published_finetune();
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 8;
  cfg.num_epochs = 1;
  auto res = finetune_encoder(data, {}, init, cfg);
  std::size_t changed = 0;
  for (auto* p : res.model.parameters()) {
    if (const auto* src = init.find(p->name)) changed += !bit_identical(p->value, src->tensor);
  }
  EXPECT_GT(changed, 10u);
}

TEST(Finetune, ClipNormTenOnExplodingBatch) {
  TempDir dir;
  std::mt19937_64 rng(6);
  const auto data = pbtest::make_rule_sequences(pbtest::make_rule_lexicon(), 8, rng);
  const auto init = tiny_mlm_checkpoint(dir, words_of(data));
  EncoderTagger<float> model(init.model);
  assign_tensors(model.parameters(), init.tensors, true, "encoder.");
  model.init_head(1);
  const auto examples = encoder_examples(data, *init.subwords, init.model.max_len);
  const auto lengths = models::detail::example_lengths<float>(examples);
  const auto params = model.parameters();
  auto cfg = TrainConfig::published_finetune();
  cfg.batch_size = 8;
  cfg.num_epochs = 1;
  std::size_t steps = 0;
  TrainOptions opts;
  opts.on_step = [&](const StepRecord& s) {
    ++steps;
    EXPECT_GT(s.grad_norm, 1e3);
    EXPECT_NEAR(s.applied_norm, 10.0, 1e-9);
    // Gradients are still in place after the update: measure them directly.
    EXPECT_NEAR(neural::global_grad_norm(params), 10.0, 1e-4);
  };
  models::detail::run_epochs<float>(
      params, lengths, cfg, opts,
      [&](const std::vector<std::size_t>& batch) {
        auto loss = encoder_batch_step<float>(model, examples, batch, init.subwords->pad_id(), 2, neural::ForwardMode{});
        for (auto* p : params) {
          for (auto& g : p->grad.values()) g *= 1e6f;
        }
        return loss;
      },
      {});
  EXPECT_EQ(steps, 1u);
}

TEST(Finetune, RejectsBlstmAndMismatchedCheckpoints) {
  TempDir dir;
  std::mt19937_64 rng(2);
  const auto data = pbtest::make_rule_sequences(pbtest::make_rule_lexicon(), 8, rng);
  const auto vocab = build_vocab(data, 1);
  BlstmTagger<float> blstm(pbtest::tiny_blstm_config(vocab.size()));
  blstm.init(1);
  save_checkpoint(dir / "blstm", blstm, vocab);
  const auto bck = load_checkpoint(dir / "blstm");
  EXPECT_EQ(kind_of([&] { finetune_encoder(data, {}, bck, TrainConfig::published_finetune()); }),
            ErrorKind::invalid_argument);

  auto enc = tiny_mlm_checkpoint(dir, words_of(data));
  enc.model.embedding_dim = enc.model.hidden_size = 16;
  enc.model.num_heads = 2;
  try {
    finetune_encoder(data, {}, enc, TrainConfig::published_finetune());
    FAIL() << "expected shape mismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape_mismatch);
    EXPECT_NE(std::string(e.what()).find("encoder.token_embedding.weight"), std::string::npos) << e.what();
  }
}

TEST(Finetune, EmptySplitIsAnError) {
  TempDir dir;
  const auto init = tiny_mlm_checkpoint(dir, {{"x", "y"}});
  EXPECT_EQ(kind_of([&] { finetune_encoder({}, {}, init, TrainConfig::published_finetune()); }), ErrorKind::empty_input);
}

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "support.hpp"

using namespace phrasebreak;
using namespace phrasebreak::models;
using neural::NamedTensor;
using neural::Shape;
using neural::Tensor;
using pbtest::TempDir;

namespace {

template <typename Fn>
Error error_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "expected an error";
  return Error(ErrorKind::parse, "none");
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

float random_finite(std::mt19937_64& rng) {
  for (;;) {
    const auto bits = static_cast<std::uint32_t>(rng());
    float f;
    std::memcpy(&f, &bits, sizeof f);
    if (std::isfinite(f)) return f;
  }
}

}  // namespace

TEST(Archive, ByteLayoutIsLittleEndianWithJsonManifest) {
  Tensor<float> t(Shape{2});
  t[0] = 1.0f;   // 0x3F800000
  t[1] = -2.0f;  // 0xC0000000
  const auto bytes = neural::encode_archive({{"w", t}});
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 8), "PBCKPT01");
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[8 + i]);
  const auto manifest = nlohmann::json::parse(bytes.substr(16, len));
  ASSERT_EQ(manifest.size(), 1u);
  EXPECT_EQ(manifest[0]["name"], "w");
  EXPECT_EQ(manifest[0]["dtype"], "f32");
  EXPECT_EQ(manifest[0]["shape"], nlohmann::json::array({2}));
  EXPECT_EQ(manifest[0]["offset"], 0);
  EXPECT_EQ(manifest[0]["nbytes"], 8);
  const std::string data = bytes.substr(16 + len);
  const std::string expected{'\x00', '\x00', '\x80', '\x3F', '\x00', '\x00', '\x00', '\xC0'};
  EXPECT_EQ(data, expected);
}

TEST(Archive, RoundTripIsBitExact) {
  std::mt19937_64 rng(1234);
  std::uniform_int_distribution<std::size_t> count(1, 4), extent(1, 5), rank(1, 3);
  for (int c = 0; c < 1000; ++c) {
    std::vector<NamedTensor> tensors;
    const auto n = count(rng);
    for (std::size_t k = 0; k < n; ++k) {
      Shape shape(rank(rng));
      for (auto& e : shape) e = extent(rng);
      Tensor<float> t(shape);
      for (auto& v : t.values()) v = random_finite(rng);
      if (c == 0) {
        t[0] = -0.0f;
        t[t.size() - 1] = std::numeric_limits<float>::denorm_min();
      }
      tensors.push_back({"t" + std::to_string(k) + ".weight", std::move(t)});
    }
    const auto back = neural::decode_archive(neural::encode_archive(tensors));
    ASSERT_EQ(back.size(), tensors.size());
    for (std::size_t k = 0; k < n; ++k) {
      EXPECT_EQ(back[k].name, tensors[k].name);
      EXPECT_TRUE(same_bits(back[k].tensor, tensors[k].tensor)) << "case " << c << " tensor " << k;
    }
  }
}

TEST(Archive, CorruptMagicIsBadMagic) {
  auto bytes = neural::encode_archive({{"w", Tensor<float>(Shape{3})}});
  bytes[0] = 'X';
  EXPECT_EQ(error_of([&] { neural::decode_archive(bytes); }).kind(), ErrorKind::bad_magic);
  EXPECT_EQ(error_of([] { neural::decode_archive("PBC"); }).kind(), ErrorKind::bad_magic);
}

TEST(Archive, TruncationIsDetectedEverywhere) {
  const auto bytes = neural::encode_archive({{"a", Tensor<float>(Shape{4, 3})}, {"b", Tensor<float>(Shape{5})}});
  for (std::size_t cut = 8; cut < bytes.size(); ++cut) {
    const auto e = error_of([&] { neural::decode_archive(bytes.substr(0, cut)); });
    EXPECT_TRUE(e.kind() == ErrorKind::truncated || e.kind() == ErrorKind::parse) << "cut " << cut << ": " << e.what();
  }
  // Cutting inside the data section is always "truncated".
  EXPECT_EQ(error_of([&] { neural::decode_archive(bytes.substr(0, bytes.size() - 1)); }).kind(), ErrorKind::truncated);
}

TEST(Archive, ManifestShapeDisagreementIsShapeMismatch) {
  nlohmann::json manifest = nlohmann::json::array();
  manifest.push_back({{"name", "w"}, {"dtype", "f32"}, {"shape", {2, 3}}, {"offset", 0}, {"nbytes", 16}});
  const std::string text = manifest.dump();
  std::string bytes = "PBCKPT01";
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xFF));
  bytes += text + std::string(24, '\0');
  EXPECT_EQ(error_of([&] { neural::decode_archive(bytes); }).kind(), ErrorKind::shape_mismatch);
}

TEST(Checkpoint, BlstmRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(3);
  const auto data = pbtest::make_rule_sequences(pbtest::make_rule_lexicon(), 30, rng);
  const auto vocab = build_vocab(data, 1);
  BlstmTagger<float> model(pbtest::tiny_blstm_config(vocab.size()));
  model.init(5);
  save_checkpoint(dir / "ck", model, vocab, TrainConfig::published_blstm());
  EXPECT_TRUE(std::filesystem::exists(dir / "ck" / "config.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "ck" / "tensors.bin"));
  EXPECT_TRUE(std::filesystem::exists(dir / "ck" / "vocab.txt"));
  const auto ck = load_checkpoint(dir / "ck");
  EXPECT_EQ(ck.kind, CheckpointKind::blstm_tagger);
  EXPECT_EQ(ck.model, model.config());
  ASSERT_TRUE(ck.train);
  EXPECT_EQ(*ck.train, TrainConfig::published_blstm());
  auto restored = restore_blstm<float>(ck);
  auto a = model.parameters();
  auto b = restored.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(same_bits(a[i]->value, b[i]->value)) << a[i]->name;
  const auto cfg_json = nlohmann::json::parse(slurp(dir / "ck" / "config.json"));
  EXPECT_EQ(cfg_json["format_version"], 1);
  // Same decisions after reload.
  const auto pm = PhraseBreakModel::load(dir / "ck");
  const PhraseBreakModel original(std::move(model), vocab);
  for (const auto& seq : data) EXPECT_EQ(greedy_decode(pm, seq.words), greedy_decode(original, seq.words));
}

TEST(Checkpoint, EncoderRoundTripKeepsKindAndVocab) {
  TempDir dir;
  const std::vector<std::vector<std::string>> corpus{{"the", "cat", "sat"}, {"the", "dog"}};
  const auto vocab = build_subword_vocab(corpus, 1);
  EncoderMlm<float> mlm(pbtest::tiny_encoder_config(vocab.size()));
  mlm.init(8);
  save_checkpoint(dir / "mlm", mlm, vocab);
  const auto ck = load_checkpoint(dir / "mlm");
  EXPECT_EQ(ck.kind, CheckpointKind::encoder_mlm);
  ASSERT_TRUE(ck.subwords);
  EXPECT_EQ(ck.subwords->size(), vocab.size());
  EXPECT_FALSE(ck.train);
  auto back = restore_encoder_mlm<float>(ck);
  auto a = mlm.parameters();
  auto b = back.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(same_bits(a[i]->value, b[i]->value)) << a[i]->name;
  EXPECT_EQ(error_of([&] { PhraseBreakModel::from_checkpoint(ck); }).kind(), ErrorKind::invalid_argument);
  EXPECT_EQ(error_of([&] { restore_blstm<float>(ck); }).kind(), ErrorKind::invalid_argument);
}

TEST(Checkpoint, WrongHiddenSizeIsAnError) {
  TempDir dir;
  const std::vector<std::vector<std::string>> corpus{{"a", "b", "c"}};
  const auto vocab = build_subword_vocab(corpus, 1);
  EncoderTagger<float> model(pbtest::tiny_encoder_config(vocab.size()));
  model.init(1);
  save_checkpoint(dir / "ck", model, vocab);
  auto cfg = nlohmann::json::parse(slurp(dir / "ck" / "config.json"));
  cfg["model"]["hidden_size"] = 16;
  cfg["model"]["embedding_dim"] = 16;
  dump(dir / "ck" / "config.json", cfg.dump());
  const auto ck = load_checkpoint(dir / "ck");
  const auto e = error_of([&] { restore_encoder_tagger<float>(ck); });
  EXPECT_EQ(e.kind(), ErrorKind::shape_mismatch);
  const std::string msg = e.what();
  EXPECT_NE(msg.find("encoder.token_embedding.weight"), std::string::npos) << msg;
  EXPECT_NE(msg.find("classifier.weight"), std::string::npos) << msg;
}

TEST(Checkpoint, MissingOrExtraTensorsAreListed) {
  auto cfg = pbtest::tiny_blstm_config(5);
  BlstmTagger<float> model(cfg);
  model.init(1);
  auto tensors = named_tensors(model.parameters());
  tensors.erase(tensors.begin());
  tensors.push_back({"stray", Tensor<float>(Shape{1})});
  const auto e = error_of([&] { assign_tensors(model.parameters(), tensors); });
  EXPECT_EQ(e.kind(), ErrorKind::shape_mismatch);
  EXPECT_NE(std::string(e.what()).find("embedding.weight (missing"), std::string::npos) << e.what();
  EXPECT_NE(std::string(e.what()).find("stray (unexpected)"), std::string::npos) << e.what();
}

TEST(Checkpoint, FileLevelErrors) {
  TempDir dir;
  EXPECT_EQ(error_of([&] { load_checkpoint(dir / "nope"); }).kind(), ErrorKind::io);
  BlstmTagger<float> model(pbtest::tiny_blstm_config(3));
  model.init(1);
  save_checkpoint(dir / "ck", model, Vocabulary(std::vector<std::string>{"x"}));
  auto bytes = slurp(dir / "ck" / "tensors.bin");
  bytes[3] = '?';
  dump(dir / "ck" / "tensors.bin", bytes);
  EXPECT_EQ(error_of([&] { load_checkpoint(dir / "ck"); }).kind(), ErrorKind::bad_magic);
  bytes[3] = 'K';
  dump(dir / "ck" / "tensors.bin", bytes.substr(0, bytes.size() - 5));
  EXPECT_EQ(error_of([&] { load_checkpoint(dir / "ck"); }).kind(), ErrorKind::truncated);
  dump(dir / "ck" / "tensors.bin", bytes);
  auto cfg = nlohmann::json::parse(slurp(dir / "ck" / "config.json"));
  cfg["format_version"] = 2;
  dump(dir / "ck" / "config.json", cfg.dump());
  EXPECT_EQ(error_of([&] { load_checkpoint(dir / "ck"); }).kind(), ErrorKind::parse);
}

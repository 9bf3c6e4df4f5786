// Shared helpers for the test binaries: random fixtures and independent oracles.
#pragma once

#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "phrasebreak/phrasebreak.hpp"

namespace pbtest {

using namespace phrasebreak;

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "pbtest-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string random_word(std::mt19937_64& rng, std::size_t max_len = 7) {
  static const std::string letters = "abcdefghijklmnopqrstuvwxyz";
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, letters.size() - 1);
  std::string w;
  const auto n = len(rng);
  for (std::size_t i = 0; i < n; ++i) w.push_back(letters[pick(rng)]);
  return w;
}

inline std::vector<BreakLabel> random_labels(std::mt19937_64& rng, std::size_t n, double p_break = 0.3) {
  std::bernoulli_distribution coin(p_break);
  std::vector<BreakLabel> out(n);
  for (auto& l : out) l = coin(rng) ? BreakLabel::B : BreakLabel::NB;
  return out;
}

inline LabeledSequence random_sequence(std::mt19937_64& rng, std::size_t min_words = 1, std::size_t max_words = 12) {
  std::uniform_int_distribution<std::size_t> len(min_words, max_words);
  LabeledSequence s;
  s.id = "r" + std::to_string(rng() % 1000000);
  const auto n = len(rng);
  for (std::size_t i = 0; i < n; ++i) s.words.push_back(random_word(rng));
  s.labels = random_labels(rng, n);
  return s;
}

// Brute-force recount: a 2x2 table indexed by (ref, hyp) over every scored
// boundary, then the textbook formulas.
struct OracleMetrics {
  long table[2][2] = {{0, 0}, {0, 0}};
  double precision = 0, recall = 0, f1 = 0, accuracy = 0;
};

inline OracleMetrics oracle_metrics(const std::vector<LabeledSequence>& ref, const std::vector<LabeledSequence>& hyp) {
  OracleMetrics m;
  for (std::size_t s = 0; s < ref.size(); ++s) {
    const auto n = ref[s].labels.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (i == n - 1) continue;  // final boundary is not scored
      const int r = ref[s].labels[i] == BreakLabel::B ? 1 : 0;
      const int h = hyp[s].labels[i] == BreakLabel::B ? 1 : 0;
      m.table[r][h] += 1;
    }
  }
  const long tp = m.table[1][1], fp = m.table[0][1], fn = m.table[1][0], tn = m.table[0][0];
  m.precision = (tp + fp) > 0 ? double(tp) / double(tp + fp) : 0.0;
  m.recall = (tp + fn) > 0 ? double(tp) / double(tp + fn) : 0.0;
  m.f1 = (m.precision + m.recall) > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  const long all = tp + fp + fn + tn;
  m.accuracy = all > 0 ? double(tp + tn) / double(all) : 0.0;
  return m;
}

// Exhaustive joint maximisation over all 2^T labelings of the product of the
// per-row softmax probabilities. Ties keep the first labeling in enumeration
// order, where bit t set means B at position t; mask 0 (all NB) comes first.
inline std::vector<BreakLabel> exhaustive_decode(const neural::Tensor<float>& logits) {
  const std::size_t T = logits.rows();
  std::vector<std::array<double, 2>> logp(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double a = logits(t, 0), b = logits(t, 1);
    const double m = std::max(a, b);
    const double z = m + std::log(std::exp(a - m) + std::exp(b - m));
    logp[t] = {a - z, b - z};
  }
  double best = -INFINITY;
  std::size_t best_mask = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << T); ++mask) {
    double score = 0;
    for (std::size_t t = 0; t < T; ++t) score += logp[t][(mask >> t) & 1];
    if (score > best) {
      best = score;
      best_mask = mask;
    }
  }
  std::vector<BreakLabel> out(T);
  for (std::size_t t = 0; t < T; ++t) out[t] = ((best_mask >> t) & 1) ? BreakLabel::B : BreakLabel::NB;
  return out;
}

// Pearson statistic written out term by term, kept separate from eval::chi_squared.
inline double three_way_by_hand(double a, double b, double none) {
  const double e = (a + b + none) / 3.0;
  return ((a - e) * (a - e) + (b - e) * (b - e) + (none - e) * (none - e)) / e;
}

inline double two_way_by_hand(double a, double b) {
  const double e = (a + b) / 2.0;
  return ((a - e) * (a - e) + (b - e) * (b - e)) / e;
}

// Rule corpus: every trigger word is followed by a break (B); other non-final
// words are NB; the final word is B by convention.
struct RuleCorpus {
  std::vector<std::string> triggers;
  std::vector<std::string> fillers;
};

inline RuleCorpus make_rule_lexicon() {
  return {{"however", "because", "therefore", "meanwhile", "although"},
          {"the", "cat", "sat", "on", "a", "mat", "dog", "ran", "far", "away", "old", "king", "lived", "in",
           "castle", "small", "house", "by", "river", "green", "hill", "quiet", "town", "many", "years"}};
}

inline std::vector<LabeledSequence> make_rule_sequences(const RuleCorpus& lex, std::size_t count, std::mt19937_64& rng,
                                                        std::size_t min_words = 4, std::size_t max_words = 14) {
  std::uniform_int_distribution<std::size_t> len(min_words, max_words);
  std::uniform_int_distribution<std::size_t> filler(0, lex.fillers.size() - 1);
  std::uniform_int_distribution<std::size_t> trigger(0, lex.triggers.size() - 1);
  std::bernoulli_distribution use_trigger(0.2);
  std::vector<LabeledSequence> out;
  for (std::size_t s = 0; s < count; ++s) {
    LabeledSequence seq;
    seq.id = "rule" + std::to_string(s);
    const auto n = len(rng);
    for (std::size_t i = 0; i < n; ++i) {
      const bool trig = use_trigger(rng);
      seq.words.push_back(trig ? lex.triggers[trigger(rng)] : lex.fillers[filler(rng)]);
      seq.labels.push_back(trig ? BreakLabel::B : BreakLabel::NB);
    }
    seq.labels.back() = BreakLabel::B;
    out.push_back(std::move(seq));
  }
  return out;
}

inline double token_accuracy(const std::vector<LabeledSequence>& ref, const std::vector<std::vector<BreakLabel>>& hyp) {
  std::size_t right = 0, total = 0;
  for (std::size_t s = 0; s < ref.size(); ++s) {
    for (std::size_t i = 0; i < ref[s].labels.size(); ++i) {
      right += ref[s].labels[i] == hyp[s][i];
      ++total;
    }
  }
  return total ? double(right) / double(total) : 0.0;
}

inline models::ModelConfig tiny_blstm_config(std::size_t vocab) {
  auto c = models::ModelConfig::published_blstm(vocab);
  c.embedding_dim = 16;
  c.hidden_size = 16;
  c.num_layers = 2;
  return c;
}

inline models::ModelConfig tiny_encoder_config(std::size_t vocab) {
  auto c = models::ModelConfig::desk_encoder(vocab);
  c.embedding_dim = c.hidden_size = 32;
  c.num_layers = 2;
  c.num_heads = 2;
  c.ffn_size = 64;
  c.dropout_p = 0.0;
  c.max_len = 64;
  return c;
}

}  // namespace pbtest

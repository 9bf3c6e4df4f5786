#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "phrasebreak/error.hpp"
#include "phrasebreak/labels.hpp"

namespace phrasebreak {

namespace detail {

enum class CharClass { word, apostrophe, comma, separator };

// Classifies the code point starting at text[pos] and reports its byte length.
// ASCII letters/digits and unrecognised non-ASCII code points are word characters;
// common Unicode punctuation (general punctuation block, guillemets, inverted marks)
// separates words. U+2019 is treated as an apostrophe.
inline CharClass classify(std::string_view text, std::size_t pos, std::size_t& length) {
  const auto c = static_cast<unsigned char>(text[pos]);
  length = 1;
  if (c < 0x80) {
    if (std::isalnum(c)) return CharClass::word;
    if (c == '\'') return CharClass::apostrophe;
    if (c == ',') return CharClass::comma;
    return CharClass::separator;
  }
  if ((c & 0xE0) == 0xC0) length = 2;
  else if ((c & 0xF0) == 0xE0) length = 3;
  else if ((c & 0xF8) == 0xF0) length = 4;
  if (pos + length > text.size()) {
    length = text.size() - pos;
    return CharClass::separator;
  }
  const auto b1 = static_cast<unsigned char>(text[pos + 1]);
  if (length == 2 && c == 0xC2 && (b1 == 0xAB || b1 == 0xBB || b1 == 0xA1 || b1 == 0xBF || b1 == 0xA0)) {
    return CharClass::separator;
  }
  if (length == 3 && c == 0xE2 && (b1 == 0x80 || b1 == 0x81)) {
    const auto b2 = static_cast<unsigned char>(text[pos + 2]);
    if (b1 == 0x80 && (b2 == 0x98 || b2 == 0x99)) return CharClass::apostrophe;
    return CharClass::separator;
  }
  if (length == 3 && c == 0xEF && b1 == 0xBC && static_cast<unsigned char>(text[pos + 2]) == 0x8C) {
    return CharClass::comma;  // fullwidth comma
  }
  return CharClass::word;
}

struct ScannedWord {
  std::string text;
  bool comma_after = false;
};

inline std::string trim_apostrophes(const std::string& token) {
  std::size_t begin = 0;
  std::size_t end = token.size();
  while (begin < end && token[begin] == '\'') ++begin;
  while (end > begin && token[end - 1] == '\'') --end;
  return token.substr(begin, end - begin);
}

inline std::vector<ScannedWord> scan_words(std::string_view text) {
  std::vector<ScannedWord> out;
  std::string current;
  auto flush = [&] {
    auto word = trim_apostrophes(current);
    current.clear();
    if (!word.empty()) out.push_back({std::move(word), false});
  };
  for (std::size_t pos = 0; pos < text.size();) {
    std::size_t length = 1;
    const auto cls = classify(text, pos, length);
    switch (cls) {
      case CharClass::word:
        for (std::size_t k = 0; k < length; ++k) {
          const char ch = text[pos + k];
          current.push_back(length == 1 ? static_cast<char>(std::tolower(static_cast<unsigned char>(ch))) : ch);
        }
        break;
      case CharClass::apostrophe:
        current.push_back('\'');
        break;
      case CharClass::comma:
        flush();
        if (!out.empty()) out.back().comma_after = true;
        break;
      case CharClass::separator:
        flush();
        break;
    }
    pos += length;
  }
  flush();
  return out;
}

inline bool has_terminal_punctuation(std::string_view word) {
  if (word.empty()) return false;
  const char last = word.back();
  return last == '.' || last == '!' || last == '?';
}

}  // namespace detail

/// Lowercases, strips punctuation (apostrophes inside words survive) and splits on
/// whitespace. Throws ErrorKind::empty_input when no word characters are present.
inline std::vector<std::string> normalize_and_tokenize(std::string_view text) {
  std::vector<std::string> words;
  for (auto& w : detail::scan_words(text)) words.push_back(std::move(w.text));
  if (words.empty()) fail(ErrorKind::empty_input, "text contains no word characters");
  return words;
}

struct StrippedText {
  std::vector<std::string> words;
  // Boundary i means "a comma followed word i"; only boundaries i < words.size()-1.
  std::set<std::size_t> comma_boundaries;
};

inline StrippedText strip_punctuation(std::string_view text) {
  auto scanned = detail::scan_words(text);
  if (scanned.empty()) fail(ErrorKind::empty_input, "text contains no word characters");
  StrippedText out;
  for (std::size_t i = 0; i < scanned.size(); ++i) {
    if (scanned[i].comma_after && i + 1 < scanned.size()) out.comma_boundaries.insert(i);
    out.words.push_back(std::move(scanned[i].text));
  }
  return out;
}

/// Joins words with single spaces, appends "," to every non-final word labelled B
/// and a terminal "." unless the last word already ends in terminal punctuation.
inline std::string insert_breaks_as_commas(std::span<const std::string> words,
                                           std::span<const BreakLabel> labels) {
  if (words.size() != labels.size()) {
    fail(ErrorKind::invalid_argument, "insert_breaks_as_commas: " + std::to_string(words.size()) +
                                          " words vs " + std::to_string(labels.size()) + " labels");
  }
  if (words.empty()) fail(ErrorKind::empty_input, "insert_breaks_as_commas: no words");
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += words[i];
    if (i + 1 < words.size() && labels[i] == BreakLabel::B) out.push_back(',');
  }
  if (!detail::has_terminal_punctuation(words.back())) out.push_back('.');
  return out;
}

// ---------------------------------------------------------------------------
// Word vocabulary

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary() : id_to_word_{std::string(kPadToken), std::string(kUnkToken)} {
    word_to_id_.emplace(kPadToken, kPad);
    word_to_id_.emplace(kUnkToken, kUnk);
  }

  // Entries after the two specials; the list must not repeat words.
  explicit Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
    for (const auto& w : words) add(w);
  }

  int id(const std::string& word) const {
    auto it = word_to_id_.find(word);
    return it == word_to_id_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& word) const { return word_to_id_.count(word) != 0; }

  const std::string& word(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_word_.size()) {
      fail(ErrorKind::out_of_range, "vocabulary id " + std::to_string(id) + " out of range");
    }
    return id_to_word_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return id_to_word_.size(); }

  std::vector<int> encode(std::span<const std::string> words) const {
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(id(w));
    return ids;
  }

  const std::vector<std::string>& entries() const { return id_to_word_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write vocabulary " + path.string());
    for (const auto& w : id_to_word_) out << w << '\n';
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot read vocabulary " + path.string());
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    if (lines.size() < 2 || lines[0] != kPadToken || lines[1] != kUnkToken) {
      fail(ErrorKind::parse, "vocabulary " + path.string() + " does not start with <pad>, <unk>");
    }
    return Vocabulary(std::vector<std::string>(lines.begin() + 2, lines.end()));
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.id_to_word_ == b.id_to_word_; }

 private:
  void add(const std::string& w) {
    if (w.empty()) fail(ErrorKind::invalid_argument, "empty vocabulary entry");
    if (!word_to_id_.emplace(w, static_cast<int>(id_to_word_.size())).second) {
      fail(ErrorKind::duplicate, "duplicate vocabulary entry '" + w + "'");
    }
    id_to_word_.push_back(w);
  }

  std::unordered_map<std::string, int> word_to_id_;
  std::vector<std::string> id_to_word_;
};

namespace detail {

inline std::vector<std::string> frequent_words(std::span<const LabeledSequence> sequences,
                                               std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  for (const auto& seq : sequences) {
    for (const auto& w : seq.words) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, n] : counts) {
    if (n >= min_freq) kept.emplace_back(w, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  out.reserve(kept.size());
  for (auto& [w, n] : kept) out.push_back(w);
  return out;
}

}  // namespace detail

/// Words with frequency >= min_freq, ordered by frequency desc then lexicographically.
inline Vocabulary build_vocab(std::span<const LabeledSequence> train, std::size_t min_freq = 2) {
  if (train.empty()) fail(ErrorKind::empty_input, "build_vocab: empty training split");
  if (min_freq < 1) fail(ErrorKind::invalid_argument, "build_vocab: min_freq must be >= 1");
  return Vocabulary(detail::frequent_words(train, min_freq));
}

// ---------------------------------------------------------------------------
// WordPiece vocabulary

class SubwordVocabulary {
 public:
  static constexpr std::string_view kContinuation = "##";
  static constexpr std::size_t kMaxCharsPerWord = 100;

  explicit SubwordVocabulary(std::vector<std::string> pieces) : id_to_piece_(std::move(pieces)) {
    for (std::size_t i = 0; i < id_to_piece_.size(); ++i) {
      if (!piece_to_id_.emplace(id_to_piece_[i], static_cast<int>(i)).second) {
        fail(ErrorKind::duplicate, "duplicate subword piece '" + id_to_piece_[i] + "' at line " +
                                       std::to_string(i + 1));
      }
    }
    pad_ = required("[PAD]");
    unk_ = required("[UNK]");
    cls_ = required("[CLS]");
    sep_ = required("[SEP]");
    if (auto it = piece_to_id_.find("[MASK]"); it != piece_to_id_.end()) mask_ = it->second;
  }

  /// One piece per line; id is the zero-based line number.
  static SubwordVocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot read subword vocabulary " + path.string());
    std::vector<std::string> pieces;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      pieces.push_back(line);
    }
    return SubwordVocabulary(std::move(pieces));
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::io, "cannot write subword vocabulary " + path.string());
    for (const auto& p : id_to_piece_) out << p << '\n';
  }

  std::optional<int> find(const std::string& piece) const {
    auto it = piece_to_id_.find(piece);
    if (it == piece_to_id_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& piece(int id) const { return id_to_piece_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return id_to_piece_.size(); }
  const std::vector<std::string>& pieces() const { return id_to_piece_; }

  int pad_id() const { return pad_; }
  int unk_id() const { return unk_; }
  int cls_id() const { return cls_; }
  int sep_id() const { return sep_; }
  std::optional<int> mask_id() const { return mask_; }

  bool is_special(int id) const {
    return id == pad_ || id == unk_ || id == cls_ || id == sep_ || (mask_ && id == *mask_);
  }

  friend bool operator==(const SubwordVocabulary& a, const SubwordVocabulary& b) {
    return a.id_to_piece_ == b.id_to_piece_;
  }

 private:
  int required(const std::string& token) const {
    auto it = piece_to_id_.find(token);
    if (it == piece_to_id_.end()) fail(ErrorKind::invalid_argument, "subword vocabulary lacks " + token);
    return it->second;
  }

  std::vector<std::string> id_to_piece_;
  std::unordered_map<std::string, int> piece_to_id_;
  int pad_ = 0, unk_ = 0, cls_ = 0, sep_ = 0;
  std::optional<int> mask_;
};

/// Greedy longest-match-first segmentation. A word with any unmatched position
/// (or longer than kMaxCharsPerWord bytes) becomes a single [UNK].
inline std::vector<int> wordpiece_tokenize(const std::string& word, const SubwordVocabulary& vocab) {
  if (word.empty() || word.size() > SubwordVocabulary::kMaxCharsPerWord) return {vocab.unk_id()};
  std::vector<int> pieces;
  std::size_t start = 0;
  while (start < word.size()) {
    std::size_t end = word.size();
    std::optional<int> match;
    while (start < end) {
      std::string candidate = word.substr(start, end - start);
      if (start > 0) candidate.insert(0, SubwordVocabulary::kContinuation);
      if ((match = vocab.find(candidate))) break;
      --end;
      // Never split inside a UTF-8 sequence.
      while (end > start && (static_cast<unsigned char>(word[end]) & 0xC0) == 0x80) --end;
    }
    if (!match) return {vocab.unk_id()};
    pieces.push_back(*match);
    start = end;
  }
  return pieces;
}

/// Desk-scale WordPiece vocabulary: specials, every word seen >= min_freq times,
/// then every observed character as an initial and as a "##" continuation piece.
/// Any word built from observed characters therefore segments without [UNK].
inline SubwordVocabulary build_subword_vocab(std::span<const std::vector<std::string>> corpus,
                                             std::size_t min_freq = 2) {
  std::vector<std::string> pieces{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  std::map<std::string, std::size_t> counts;
  std::set<std::string> chars;
  for (const auto& words : corpus) {
    for (const auto& w : words) {
      ++counts[w];
      for (std::size_t pos = 0; pos < w.size();) {
        std::size_t len = 1;
        const auto c = static_cast<unsigned char>(w[pos]);
        if ((c & 0xE0) == 0xC0) len = 2;
        else if ((c & 0xF0) == 0xE0) len = 3;
        else if ((c & 0xF8) == 0xF0) len = 4;
        chars.insert(w.substr(pos, len));
        pos += len;
      }
    }
  }
  std::vector<std::pair<std::string, std::size_t>> words(counts.begin(), counts.end());
  std::stable_sort(words.begin(), words.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::set<std::string> seen(pieces.begin(), pieces.end());
  auto add = [&](const std::string& p) {
    if (seen.insert(p).second) pieces.push_back(p);
  };
  for (const auto& [w, n] : words) {
    if (n >= min_freq) add(w);
  }
  for (const auto& c : chars) add(c);
  for (const auto& c : chars) add(std::string(SubwordVocabulary::kContinuation) + c);
  return SubwordVocabulary(std::move(pieces));
}

// ---------------------------------------------------------------------------
// Word -> subword label alignment

struct SubwordSequence {
  std::vector<int> piece_ids;
  std::vector<bool> word_boundary_mask;  // true on the last piece of each word
  std::vector<int> labels_on_pieces;     // label index, or kIgnoreIndex
  std::size_t first_word = 0;            // index of the chunk's first word in the source sequence
  std::size_t word_count = 0;
};

/// CLS + pieces + SEP per chunk; each word's label sits on its last piece. Inputs
/// longer than max_len pieces are chunked at word boundaries without overlap.
inline std::vector<SubwordSequence> align_labels_to_subwords(const LabeledSequence& seq,
                                                             const SubwordVocabulary& vocab,
                                                             std::size_t max_len = 512) {
  seq.validate();
  if (max_len < 3) fail(ErrorKind::invalid_argument, "max_len must be >= 3");
  const std::size_t budget = max_len - 2;
  std::vector<SubwordSequence> chunks;
  SubwordSequence current;
  auto open = [&](std::size_t first_word) {
    current = SubwordSequence{};
    current.first_word = first_word;
    current.piece_ids.push_back(vocab.cls_id());
    current.word_boundary_mask.push_back(false);
    current.labels_on_pieces.push_back(kIgnoreIndex);
  };
  auto close = [&] {
    current.piece_ids.push_back(vocab.sep_id());
    current.word_boundary_mask.push_back(false);
    current.labels_on_pieces.push_back(kIgnoreIndex);
    chunks.push_back(std::move(current));
  };
  open(0);
  for (std::size_t i = 0; i < seq.words.size(); ++i) {
    const auto pieces = wordpiece_tokenize(seq.words[i], vocab);
    if (pieces.size() > budget) {
      fail(ErrorKind::invalid_argument, "word '" + seq.words[i] + "' needs " + std::to_string(pieces.size()) +
                                            " pieces, more than max_len-2 = " + std::to_string(budget));
    }
    if (current.piece_ids.size() - 1 + pieces.size() > budget) {
      close();
      open(i);
    }
    for (std::size_t k = 0; k < pieces.size(); ++k) {
      const bool last = k + 1 == pieces.size();
      current.piece_ids.push_back(pieces[k]);
      current.word_boundary_mask.push_back(last);
      current.labels_on_pieces.push_back(last ? to_index(seq.labels[i]) : kIgnoreIndex);
    }
    ++current.word_count;
  }
  close();
  return chunks;
}

}  // namespace phrasebreak

#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "phrasebreak/error.hpp"
#include "phrasebreak/labels.hpp"
#include "phrasebreak/textproc.hpp"

namespace phrasebreak {

inline constexpr double kDefaultMinPause = 0.030;

struct AlignmentSegment {
  double start = 0.0;
  double end = 0.0;
  std::string token;  // empty for silence

  bool is_silence() const { return token.empty(); }
  double duration() const { return end - start; }
};

struct Utterance {
  std::string id;
  std::vector<AlignmentSegment> segments;
  std::string transcript;
};

struct AlignmentFormatConfig {
  // Tokens (compared case-insensitively) that denote silence; the empty token always does.
  std::vector<std::string> silence_sentinels{"", "sil", "sp", "spn", "<sil>"};
};

namespace detail {

inline std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline bool parse_seconds(std::string_view field, double& value) {
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  return ec == std::errc{} && ptr == last && std::isfinite(value);
}

}  // namespace detail

/// Parses `start end token` lines. Silence sentinels become segments with an empty
/// token; a line with only two fields is silence as well.
inline Utterance parse_alignment(std::string_view raw, const AlignmentFormatConfig& format = {},
                                 std::string id = {}) {
  Utterance utt;
  utt.id = std::move(id);
  std::set<std::string> sentinels;
  for (const auto& s : format.silence_sentinels) sentinels.insert(detail::lower_ascii(s));

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < raw.size()) {
    std::size_t eol = raw.find('\n', pos);
    if (eol == std::string_view::npos) eol = raw.size();
    std::string line(raw.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::istringstream fields(line);
    std::vector<std::string> parts;
    for (std::string f; fields >> f;) parts.push_back(f);
    if (parts.empty()) continue;
    const std::string where = " at line " + std::to_string(line_no);
    if (parts.size() < 2) fail(ErrorKind::parse, "expected 'start end token'" + where);

    AlignmentSegment seg;
    if (!detail::parse_seconds(parts[0], seg.start) || !detail::parse_seconds(parts[1], seg.end)) {
      fail(ErrorKind::parse, "non-numeric time" + where);
    }
    if (seg.start < 0.0) fail(ErrorKind::parse, "negative start time" + where);
    if (seg.end <= seg.start) fail(ErrorKind::parse, "end <= start" + where);
    if (!utt.segments.empty() && seg.start < utt.segments.back().end) {
      fail(ErrorKind::parse, "segment overlaps or precedes previous segment" + where);
    }
    std::string token;
    for (std::size_t i = 2; i < parts.size(); ++i) {
      if (i > 2) token.push_back(' ');
      token += parts[i];
    }
    if (!sentinels.count(detail::lower_ascii(token))) seg.token = std::move(token);
    utt.segments.push_back(std::move(seg));
  }
  if (utt.segments.empty()) fail(ErrorKind::empty_input, "empty alignment file");
  const bool any_word = std::any_of(utt.segments.begin(), utt.segments.end(),
                                    [](const AlignmentSegment& s) { return !s.is_silence(); });
  if (!any_word) fail(ErrorKind::empty_input, "alignment contains only silence");
  return utt;
}

inline Utterance read_alignment_file(const std::filesystem::path& path, const AlignmentFormatConfig& format = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read alignment file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_alignment(buffer.str(), format, path.stem().string());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

/// Word i is B when a silence segment or an untranscribed gap of at least
/// min_pause separates it from word i+1. The final word is always B.
inline LabeledSequence derive_break_labels(const Utterance& utt, double min_pause = kDefaultMinPause) {
  if (!(min_pause >= 0.0)) fail(ErrorKind::invalid_argument, "min_pause must be >= 0");
  LabeledSequence seq;
  seq.id = utt.id;
  // Times come from decimal text; a pause equal to the threshold must count.
  constexpr double kTimeTolerance = 1e-9;
  auto long_enough = [&](double pause) { return pause > 0.0 && pause + kTimeTolerance >= min_pause; };
  bool have_word = false;
  bool pause_seen = false;
  double prev_end = 0.0;
  for (const auto& seg : utt.segments) {
    if (have_word && long_enough(seg.start - prev_end)) pause_seen = true;
    prev_end = seg.end;
    if (seg.is_silence()) {
      if (have_word && long_enough(seg.duration())) pause_seen = true;
      continue;
    }
    // Tokens whose normalisation is empty (stray punctuation) act like silence.
    auto pieces = detail::scan_words(seg.token);
    if (pieces.empty()) {
      if (have_word && long_enough(seg.duration())) pause_seen = true;
      continue;
    }
    if (have_word) seq.labels.back() = pause_seen ? BreakLabel::B : BreakLabel::NB;
    for (auto& p : pieces) {
      seq.words.push_back(std::move(p.text));
      seq.labels.push_back(BreakLabel::NB);
    }
    have_word = true;
    pause_seen = false;
  }
  if (seq.words.empty()) fail(ErrorKind::empty_input, "utterance '" + utt.id + "' has no words");
  seq.labels.back() = BreakLabel::B;
  return seq;
}

/// Same formatting contract as insert_breaks_as_commas.
inline std::string augment_text_with_commas(const LabeledSequence& seq) {
  seq.validate();
  return insert_breaks_as_commas(seq.words, seq.labels);
}

// ---------------------------------------------------------------------------
// Dataset splits

enum class SplitName { train, dev, test };

inline std::string_view to_string(SplitName name) {
  switch (name) {
    case SplitName::train: return "train";
    case SplitName::dev: return "dev";
    case SplitName::test: return "test";
  }
  return "train";
}

struct DatasetSplit {
  SplitName name = SplitName::train;
  std::vector<LabeledSequence> sequences;
};

// Either explicit id lists or a ratio assignment; explicit lists win when non-empty.
struct SplitSpec {
  std::map<SplitName, std::vector<std::string>> explicit_ids;
  std::array<double, 3> ratio{8.0, 1.0, 1.0};
  std::uint64_t seed = 7;

  bool is_explicit() const { return !explicit_ids.empty(); }
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ull ^ (seed * 0x9E3779B97F4A7C15ull);
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  // splitmix finaliser so similar ids spread evenly
  h ^= h >> 30;
  h *= 0xBF58476D1CE4E5B9ull;
  h ^= h >> 27;
  h *= 0x94D049BB133111EBull;
  h ^= h >> 31;
  return h;
}

// Largest-remainder apportionment of n items over the three ratios.
inline std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratio) {
  double total = 0.0;
  for (double r : ratio) {
    if (!(r >= 0.0)) fail(ErrorKind::invalid_argument, "split ratios must be non-negative");
    total += r;
  }
  if (total <= 0.0) fail(ErrorKind::invalid_argument, "split ratios sum to zero");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = static_cast<double>(n) * ratio[k] / total;
    sizes[k] = static_cast<std::size_t>(std::floor(exact));
    remainder[k] = exact - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k) {
      if (remainder[k] > remainder[best]) best = k;
    }
    ++sizes[best];
    remainder[best] = -1.0;
    ++assigned;
  }
  return sizes;
}

}  // namespace detail

/// Labels every utterance and distributes them over train/dev/test. Ratio mode
/// orders ids by a seeded hash, so membership does not depend on input order.
inline std::vector<DatasetSplit> build_dataset(const std::vector<Utterance>& utterances, const SplitSpec& spec,
                                               double min_pause = kDefaultMinPause) {
  std::map<std::string, const Utterance*> by_id;
  for (const auto& u : utterances) {
    if (!by_id.emplace(u.id, &u).second) fail(ErrorKind::duplicate, "duplicate utterance id '" + u.id + "'");
  }

  std::map<std::string, SplitName> assignment;
  if (spec.is_explicit()) {
    for (const auto& [name, ids] : spec.explicit_ids) {
      for (const auto& id : ids) {
        auto [it, inserted] = assignment.emplace(id, name);
        if (!inserted && it->second != name) {
          fail(ErrorKind::duplicate, "utterance '" + id + "' assigned to both " + std::string(to_string(it->second)) +
                                         " and " + std::string(to_string(name)));
        }
      }
    }
    for (const auto& [id, u] : by_id) {
      if (!assignment.count(id)) fail(ErrorKind::invalid_argument, "utterance '" + id + "' is not assigned to a split");
    }
  } else {
    std::vector<std::pair<std::uint64_t, std::string>> keyed;
    for (const auto& [id, u] : by_id) keyed.emplace_back(detail::fnv1a(id, spec.seed), id);
    std::sort(keyed.begin(), keyed.end());
    const auto sizes = detail::apportion(keyed.size(), spec.ratio);
    std::size_t k = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t n = 0; n < sizes[s]; ++n, ++k) assignment[keyed[k].second] = static_cast<SplitName>(s);
    }
  }

  std::vector<DatasetSplit> splits{{SplitName::train, {}}, {SplitName::dev, {}}, {SplitName::test, {}}};
  for (const auto& [id, u] : by_id) {
    auto it = assignment.find(id);
    if (it == assignment.end()) continue;
    splits[static_cast<std::size_t>(it->second)].sequences.push_back(derive_break_labels(*u, min_pause));
  }
  return splits;
}

// ---------------------------------------------------------------------------
// JSON Lines dataset files: {"id": str, "words": [str], "labels": ["B"|"NB"]}

inline nlohmann::ordered_json to_json(const LabeledSequence& seq) {
  nlohmann::ordered_json j;
  j["id"] = seq.id;
  j["words"] = seq.words;
  auto labels = nlohmann::ordered_json::array();
  for (auto l : seq.labels) labels.push_back(std::string(to_string(l)));
  j["labels"] = std::move(labels);
  return j;
}

inline LabeledSequence sequence_from_json(const nlohmann::json& j) {
  LabeledSequence seq;
  seq.id = j.at("id").get<std::string>();
  seq.words = j.at("words").get<std::vector<std::string>>();
  for (const auto& l : j.at("labels")) seq.labels.push_back(label_from_string(l.get<std::string>()));
  seq.validate();
  return seq;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<LabeledSequence>& sequences) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  for (const auto& seq : sequences) out << to_json(seq).dump() << '\n';
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

inline std::vector<LabeledSequence> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read dataset " + path.string());
  std::vector<LabeledSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(sequence_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::parse, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      fail(e.kind(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct CorpusStats {
  std::size_t utterances = 0;
  std::size_t words = 0;
  std::size_t breaks = 0;          // non-final B labels
  std::size_t scored_boundaries = 0;  // non-final positions

  double break_rate() const {
    return scored_boundaries == 0 ? 0.0 : static_cast<double>(breaks) / static_cast<double>(scored_boundaries);
  }
};

inline CorpusStats corpus_stats(const std::vector<LabeledSequence>& sequences) {
  CorpusStats s;
  for (const auto& seq : sequences) {
    ++s.utterances;
    s.words += seq.words.size();
    for (std::size_t i = 0; i + 1 < seq.labels.size(); ++i) {
      ++s.scored_boundaries;
      if (seq.labels[i] == BreakLabel::B) ++s.breaks;
    }
  }
  return s;
}

}  // namespace phrasebreak

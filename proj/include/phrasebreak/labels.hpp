#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "phrasebreak/error.hpp"

namespace phrasebreak {

// Class index order is fixed: NB = 0, B = 1. Logit columns follow it.
enum class BreakLabel : int { NB = 0, B = 1 };

inline constexpr int kNumLabels = 2;

// Target index excluded from loss and metrics (padding, CLS/SEP, non-final pieces).
inline constexpr int kIgnoreIndex = -1;

inline std::string_view to_string(BreakLabel label) {
  return label == BreakLabel::B ? "B" : "NB";
}

inline BreakLabel label_from_string(std::string_view text) {
  if (text == "B") return BreakLabel::B;
  if (text == "NB") return BreakLabel::NB;
  fail(ErrorKind::parse, "unknown break label '" + std::string(text) + "'");
}

inline int to_index(BreakLabel label) { return static_cast<int>(label); }

// Words plus one break label per word; label i describes the boundary after word i.
struct LabeledSequence {
  std::string id;
  std::vector<std::string> words;
  std::vector<BreakLabel> labels;

  std::size_t size() const { return words.size(); }

  void validate() const {
    if (words.size() != labels.size()) {
      fail(ErrorKind::invalid_argument,
           "sequence '" + id + "': " + std::to_string(words.size()) + " words but " +
               std::to_string(labels.size()) + " labels");
    }
    for (const auto& w : words) {
      if (w.empty()) fail(ErrorKind::invalid_argument, "sequence '" + id + "' contains an empty word");
    }
  }

  friend bool operator==(const LabeledSequence&, const LabeledSequence&) = default;
};

}  // namespace phrasebreak

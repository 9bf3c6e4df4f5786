#pragma once

#include <cmath>
#include <cstddef>
#include <iomanip>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "phrasebreak/error.hpp"
#include "phrasebreak/labels.hpp"

namespace phrasebreak::eval {

// B is the positive class. Utterance-final positions are never scored.
struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct BreakMetrics {
  ConfusionCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1_break = 0.0;
  double f1_micro = 0.0;  // accuracy over scored boundaries
};

inline BreakMetrics metrics_from_counts(const ConfusionCounts& c) {
  BreakMetrics m;
  m.counts = c;
  auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.f1_break = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  m.f1_micro = ratio(c.tp + c.tn, c.total());
  return m;
}

inline ConfusionCounts count_boundaries(std::span<const BreakLabel> ref, std::span<const BreakLabel> hyp,
                                        const std::string& id = {}) {
  if (ref.size() != hyp.size()) {
    fail(ErrorKind::invalid_argument, "sequence '" + id + "': reference has " + std::to_string(ref.size()) +
                                          " labels, hypothesis " + std::to_string(hyp.size()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i + 1 < ref.size(); ++i) {
    const bool r = ref[i] == BreakLabel::B;
    const bool h = hyp[i] == BreakLabel::B;
    if (r && h) ++c.tp;
    else if (!r && h) ++c.fp;
    else if (r && !h) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline BreakMetrics score_predictions(std::span<const LabeledSequence> ref, std::span<const LabeledSequence> hyp) {
  if (ref.size() != hyp.size()) {
    fail(ErrorKind::invalid_argument, "score_predictions: " + std::to_string(ref.size()) + " reference vs " +
                                          std::to_string(hyp.size()) + " hypothesis sequences");
  }
  ConfusionCounts total;
  for (std::size_t s = 0; s < ref.size(); ++s) total += count_boundaries(ref[s].labels, hyp[s].labels, ref[s].id);
  return metrics_from_counts(total);
}

// ---------------------------------------------------------------------------
// Chi-squared analysis of ABX preference counts

struct AbxComparison {
  std::string name_a, name_b;
  std::size_t count_a = 0, count_b = 0, count_none = 0;

  std::size_t total() const { return count_a + count_b + count_none; }

  friend bool operator==(const AbxComparison&, const AbxComparison&) = default;
};

enum class ChiSquaredVariant { three_way_uniform, two_way_excl_none };

inline std::string to_string(ChiSquaredVariant v) {
  return v == ChiSquaredVariant::three_way_uniform ? "three_way_uniform" : "two_way_excl_none";
}

// Upper 1% points of the chi-squared distribution.
inline constexpr double kCritical1PctDf1 = 6.635;
inline constexpr double kCritical1PctDf2 = 9.210;

struct ChiSquaredResult {
  double statistic = 0.0;
  int df = 0;
  double critical_value_at_1pct = 0.0;
  bool significant = false;
  ChiSquaredVariant variant = ChiSquaredVariant::three_way_uniform;
};

/// three_way_uniform: A/B/none against total/3 each, df 2.
/// two_way_excl_none: A/B against (A+B)/2 each, df 1.
inline ChiSquaredResult chi_squared(const AbxComparison& c, ChiSquaredVariant variant) {
  ChiSquaredResult r;
  r.variant = variant;
  std::vector<double> observed;
  if (variant == ChiSquaredVariant::three_way_uniform) {
    observed = {double(c.count_a), double(c.count_b), double(c.count_none)};
    r.df = 2;
    r.critical_value_at_1pct = kCritical1PctDf2;
  } else {
    observed = {double(c.count_a), double(c.count_b)};
    r.df = 1;
    r.critical_value_at_1pct = kCritical1PctDf1;
  }
  double total = 0.0;
  for (double o : observed) total += o;
  const double expected = total / static_cast<double>(observed.size());
  if (expected <= 0.0) {
    fail(ErrorKind::invalid_argument, "chi-squared (" + to_string(variant) + ") for " + c.name_a + " vs " + c.name_b +
                                          ": zero expected count");
  }
  for (double o : observed) r.statistic += (o - expected) * (o - expected) / expected;
  r.significant = r.statistic > r.critical_value_at_1pct;
  return r;
}

// ---------------------------------------------------------------------------
// Reports

struct Report {
  nlohmann::ordered_json json;
  std::string text;
};

inline nlohmann::ordered_json metrics_json(const BreakMetrics& m) {
  nlohmann::ordered_json j;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1_break"] = m.f1_break;
  j["f1_micro"] = m.f1_micro;
  j["tp"] = m.counts.tp;
  j["fp"] = m.counts.fp;
  j["fn"] = m.counts.fn;
  j["tn"] = m.counts.tn;
  return j;
}

/// JSON {"f1": {...}, "abx": [{counts, "variants": [...]}]} plus a plain-text table.
inline Report emit_report(const std::optional<BreakMetrics>& metrics, std::span<const AbxComparison> comparisons,
                          const std::string& model_name = "model") {
  if (!metrics && comparisons.empty()) fail(ErrorKind::empty_input, "report has neither metrics nor comparisons");
  Report report;
  std::ostringstream text;
  text << std::fixed;
  if (metrics) {
    report.json["model"] = model_name;
    report.json["f1"] = metrics_json(*metrics);
    text << "Phrase break prediction (F1, %)\n";
    text << std::left << std::setw(16) << "Model" << std::right << std::setw(10) << "P" << std::setw(10) << "R"
         << std::setw(10) << "F1(B)" << std::setw(10) << "Acc" << '\n';
    text << std::left << std::setw(16) << model_name << std::right << std::setprecision(2) << std::setw(10)
         << 100.0 * metrics->precision << std::setw(10) << 100.0 * metrics->recall << std::setw(10)
         << 100.0 * metrics->f1_break << std::setw(10) << 100.0 * metrics->f1_micro << "\n";
  }
  if (!comparisons.empty()) {
    auto abx = nlohmann::ordered_json::array();
    if (metrics) text << '\n';
    text << "ABX preferences (*** = significant at 1%, three-way / two-way)\n";
    text << std::left << std::setw(14) << "Model A" << std::setw(14) << "Model B" << std::right << std::setw(8) << "Pref A"
         << std::setw(8) << "Pref B" << std::setw(8) << "None" << std::setw(12) << "chi2(3way)" << std::setw(12)
         << "chi2(2way)" << "  sig\n";
    for (const auto& c : comparisons) {
      nlohmann::ordered_json entry;
      entry["name_a"] = c.name_a;
      entry["name_b"] = c.name_b;
      entry["count_a"] = c.count_a;
      entry["count_b"] = c.count_b;
      entry["count_none"] = c.count_none;
      auto variants = nlohmann::ordered_json::array();
      std::vector<ChiSquaredResult> results;
      for (auto v : {ChiSquaredVariant::three_way_uniform, ChiSquaredVariant::two_way_excl_none}) {
        const auto r = chi_squared(c, v);
        results.push_back(r);
        nlohmann::ordered_json vj;
        vj["variant"] = to_string(v);
        vj["statistic"] = r.statistic;
        vj["df"] = r.df;
        vj["critical_value_at_1pct"] = r.critical_value_at_1pct;
        vj["significant"] = r.significant;
        variants.push_back(std::move(vj));
      }
      entry["variants"] = std::move(variants);
      abx.push_back(std::move(entry));
      text << std::left << std::setw(14) << c.name_a << std::setw(14) << c.name_b << std::right << std::setw(8)
           << c.count_a << std::setw(8) << c.count_b << std::setw(8) << c.count_none << std::setprecision(3)
           << std::setw(12) << results[0].statistic << std::setw(12) << results[1].statistic << "  "
           << (results[0].significant ? "***" : "n.s.") << " / " << (results[1].significant ? "***" : "n.s.") << '\n';
    }
    report.json["abx"] = std::move(abx);
  }
  report.text = text.str();
  return report;
}

}  // namespace phrasebreak::eval

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "phrasebreak/error.hpp"

namespace phrasebreak::abx {

// {"stories": [{"story_id": "s1", "condition_audio": {"none": "s1_none.wav", ...}}, ...],
//  "comparisons": [["none", "blstm"], ...]}
// Relative audio paths resolve against the manifest's directory.

struct Story {
  std::string story_id;
  std::map<std::string, std::filesystem::path> condition_audio;
};

using ConditionPair = std::pair<std::string, std::string>;

struct StimulusManifest {
  std::vector<Story> stories;
  std::vector<ConditionPair> comparisons;

  std::size_t trial_count() const { return stories.size() * comparisons.size(); }

  const Story& story(const std::string& id) const {
    for (const auto& s : stories) {
      if (s.story_id == id) return s;
    }
    fail(ErrorKind::not_found, "unknown story '" + id + "'");
  }
};

inline std::string media_type_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".wav") return "audio/wav";
  if (ext == ".ogg") return "audio/ogg";
  if (ext == ".mp3") return "audio/mpeg";
  return {};
}

/// Checks the structural invariants and that every audio file opens. Every
/// unreadable path is reported in the same error.
inline void validate_manifest(const StimulusManifest& m) {
  if (m.stories.empty()) fail(ErrorKind::invalid_argument, "manifest has no stories");
  if (m.comparisons.empty()) fail(ErrorKind::invalid_argument, "manifest has no comparisons");
  std::set<std::string> ids;
  for (const auto& s : m.stories) {
    if (s.story_id.empty()) fail(ErrorKind::invalid_argument, "manifest story with empty story_id");
    if (!ids.insert(s.story_id).second) fail(ErrorKind::duplicate, "duplicate story_id '" + s.story_id + "'");
  }
  std::set<ConditionPair> seen;
  std::vector<std::string> missing;
  for (const auto& [a, b] : m.comparisons) {
    if (a == b) fail(ErrorKind::invalid_argument, "comparison of '" + a + "' with itself");
    if (seen.count({a, b}) || seen.count({b, a})) fail(ErrorKind::duplicate, "comparison " + a + "/" + b + " listed twice");
    seen.insert({a, b});
    for (const auto& s : m.stories) {
      for (const auto& cond : {a, b}) {
        if (!s.condition_audio.count(cond)) missing.push_back(s.story_id + ": no audio for condition '" + cond + "'");
      }
    }
  }
  if (!missing.empty()) {
    std::string msg = "incomplete stimulus manifest:";
    for (const auto& p : missing) msg += "\n  " + p;
    fail(ErrorKind::invalid_argument, msg);
  }
  std::vector<std::string> problems;
  std::set<std::filesystem::path> checked;
  for (const auto& s : m.stories) {
    for (const auto& [cond, path] : s.condition_audio) {
      if (!checked.insert(path).second) continue;
      if (media_type_for(path).empty()) {
        problems.push_back(path.string() + " (unsupported extension; use .wav, .ogg or .mp3)");
        continue;
      }
      std::ifstream probe(path, std::ios::binary);
      if (!probe || !std::filesystem::is_regular_file(path)) problems.push_back(path.string() + " (unreadable)");
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid stimulus manifest:";
    for (const auto& p : problems) msg += "\n  " + p;
    fail(ErrorKind::io, msg);
  }
}

inline StimulusManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  StimulusManifest m;
  try {
    for (const auto& s : j.at("stories")) {
      Story story;
      story.story_id = s.at("story_id").get<std::string>();
      for (const auto& [cond, path] : s.at("condition_audio").items()) {
        std::filesystem::path p = path.get<std::string>();
        story.condition_audio[cond] = p.is_absolute() ? p : base_dir / p;
      }
      m.stories.push_back(std::move(story));
    }
    for (const auto& c : j.at("comparisons")) {
      if (!c.is_array() || c.size() != 2) fail(ErrorKind::parse, "manifest comparison must be a pair of conditions");
      m.comparisons.emplace_back(c[0].get<std::string>(), c[1].get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("manifest: ") + e.what());
  }
  validate_manifest(m);
  return m;
}

inline StimulusManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, path.string() + ": " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

}  // namespace phrasebreak::abx

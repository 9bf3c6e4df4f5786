#pragma once

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "phrasebreak/abx/manifest.hpp"
#include "phrasebreak/error.hpp"
#include "phrasebreak/eval.hpp"

namespace phrasebreak::abx {

enum class Choice { A, B, none };

inline std::string to_string(Choice c) {
  switch (c) {
    case Choice::A: return "A";
    case Choice::B: return "B";
    case Choice::none: return "none";
  }
  return "none";
}

inline Choice choice_from_string(const std::string& s) {
  if (s == "A") return Choice::A;
  if (s == "B") return Choice::B;
  if (s == "none") return Choice::none;
  fail(ErrorKind::invalid_argument, "choice must be \"A\", \"B\" or \"none\", got '" + s + "'");
}

struct Trial {
  std::size_t index = 0;
  std::string story_id;
  ConditionPair comparison;  // canonical (manifest) order
  std::string condition_a;   // condition presented as "Sample A"
  std::string condition_b;
  std::string audio_a_token;
  std::string audio_b_token;
};

struct Session {
  std::string session_id;
  std::string created_at;
  std::vector<Trial> trials;
};

// One answered trial. `preferred` is a condition name from `comparison`, or
// empty for no preference (JSON null, so a condition may itself be called "none").
// Analysis reads only `preferred`; `choice` and `condition_a` are kept for audit.
struct ResponseRecord {
  std::string session_id;
  std::size_t trial = 0;
  std::string story_id;
  ConditionPair comparison;
  std::string condition_a;
  Choice choice = Choice::none;
  std::optional<std::string> preferred;
  std::string responded_at;

  friend bool operator==(const ResponseRecord&, const ResponseRecord&) = default;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

/// The canonical preference implied by a choice on a presented trial.
inline std::optional<std::string> resolve_preference(const std::string& condition_a, const std::string& condition_b,
                                                     Choice c) {
  switch (c) {
    case Choice::A: return condition_a;
    case Choice::B: return condition_b;
    case Choice::none: break;
  }
  return std::nullopt;
}

inline nlohmann::ordered_json to_json(const ResponseRecord& r) {
  nlohmann::ordered_json j;
  j["session_id"] = r.session_id;
  j["trial"] = r.trial;
  j["story_id"] = r.story_id;
  j["comparison"] = {r.comparison.first, r.comparison.second};
  j["condition_a"] = r.condition_a;
  j["choice"] = to_string(r.choice);
  j["preferred"] = r.preferred ? nlohmann::ordered_json(*r.preferred) : nlohmann::ordered_json(nullptr);
  j["responded_at"] = r.responded_at;
  return j;
}

inline ResponseRecord response_from_json(const nlohmann::json& j) {
  ResponseRecord r;
  r.session_id = j.at("session_id").get<std::string>();
  r.trial = j.at("trial").get<std::size_t>();
  r.story_id = j.at("story_id").get<std::string>();
  const auto& c = j.at("comparison");
  if (!c.is_array() || c.size() != 2) fail(ErrorKind::parse, "comparison must be a pair");
  r.comparison = {c[0].get<std::string>(), c[1].get<std::string>()};
  r.condition_a = j.value("condition_a", std::string{});
  r.choice = choice_from_string(j.at("choice").get<std::string>());
  const auto& pref = j.at("preferred");
  if (!pref.is_null()) r.preferred = pref.get<std::string>();
  r.responded_at = j.value("responded_at", std::string{});
  if (r.preferred && *r.preferred != r.comparison.first && *r.preferred != r.comparison.second) {
    fail(ErrorKind::parse, "preferred '" + *r.preferred + "' is not part of the comparison");
  }
  if ((r.choice == Choice::none) != !r.preferred) {
    fail(ErrorKind::parse, "choice and preferred disagree");
  }
  return r;
}

/// Parses JSON Lines of response records; blank lines are skipped, anything
/// else that does not parse fails with its 1-based line number.
inline std::vector<ResponseRecord> parse_response_lines(std::istream& in, const std::string& source = "responses") {
  std::vector<ResponseRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(response_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::parse, source + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorKind::parse, source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<ResponseRecord> read_responses(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  return parse_response_lines(in, path.string());
}

/// Pure fold of records into per-comparison counts. Comparisons come out in
/// `order` first (those with at least one record), then in order of first
/// appearance.
inline std::vector<eval::AbxComparison> aggregate_responses(const std::vector<ResponseRecord>& records,
                                                            const std::vector<ConditionPair>& order = {}) {
  std::vector<ConditionPair> keys;
  std::map<ConditionPair, eval::AbxComparison> by_pair;
  for (const auto& r : records) {
    auto [it, inserted] = by_pair.try_emplace(r.comparison);
    if (inserted) {
      it->second.name_a = r.comparison.first;
      it->second.name_b = r.comparison.second;
      keys.push_back(r.comparison);
    }
    auto& c = it->second;
    if (!r.preferred) ++c.count_none;
    else if (*r.preferred == r.comparison.first) ++c.count_a;
    else if (*r.preferred == r.comparison.second) ++c.count_b;
    else fail(ErrorKind::invalid_argument, "preferred '" + *r.preferred + "' is not part of the comparison");
  }
  std::vector<eval::AbxComparison> out;
  std::set<ConditionPair> emitted;
  for (const auto& k : order) {
    if (by_pair.count(k) && emitted.insert(k).second) out.push_back(by_pair[k]);
  }
  for (const auto& k : keys) {
    if (emitted.insert(k).second) out.push_back(by_pair[k]);
  }
  return out;
}

namespace detail {

inline std::string random_hex128(std::mt19937_64& rng) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (int w = 0; w < 2; ++w) {
    std::uint64_t v = rng();
    for (int i = 0; i < 16; ++i) {
      out.push_back(kDigits[v & 0xF]);
      v >>= 4;
    }
  }
  return out;
}

inline std::uint64_t entropy_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

// Appends whole lines to a file; each append is followed by fsync.
class DurableLog {
 public:
  explicit DurableLog(const std::filesystem::path& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) fail(ErrorKind::io, "cannot open " + path.string() + ": " + std::strerror(errno));
  }
  DurableLog(const DurableLog&) = delete;
  DurableLog& operator=(const DurableLog&) = delete;
  ~DurableLog() {
    if (fd_ >= 0) ::close(fd_);
  }

  void append_line(const std::string& line) {
    std::string buf = line + '\n';
    const char* p = buf.data();
    std::size_t left = buf.size();
    while (left > 0) {
      const ssize_t n = ::write(fd_, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(ErrorKind::io, "write to " + path_.string() + " failed: " + std::strerror(errno));
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) fail(ErrorKind::io, "fsync of " + path_.string() + " failed: " + std::strerror(errno));
  }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

// Reads complete lines. A final line without a newline is a write torn by a
// crash before it was acknowledged: it is dropped and the file truncated.
inline std::vector<std::string> read_log_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  if (!std::filesystem::exists(path)) return lines;
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t start = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    if (nl == std::string::npos) {
      std::filesystem::resize_file(path, start);
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const Session& s) {
  nlohmann::ordered_json j;
  j["session_id"] = s.session_id;
  j["created_at"] = s.created_at;
  auto& trials = j["trials"] = nlohmann::ordered_json::array();
  for (const auto& t : s.trials) {
    trials.push_back({{"index", t.index},
                      {"story_id", t.story_id},
                      {"comparison", {t.comparison.first, t.comparison.second}},
                      {"condition_a", t.condition_a},
                      {"condition_b", t.condition_b},
                      {"audio_a_token", t.audio_a_token},
                      {"audio_b_token", t.audio_b_token}});
  }
  return j;
}

inline Session session_from_json(const nlohmann::json& j) {
  Session s;
  s.session_id = j.at("session_id").get<std::string>();
  s.created_at = j.at("created_at").get<std::string>();
  for (const auto& t : j.at("trials")) {
    Trial trial;
    trial.index = t.at("index").get<std::size_t>();
    trial.story_id = t.at("story_id").get<std::string>();
    trial.comparison = {t.at("comparison")[0].get<std::string>(), t.at("comparison")[1].get<std::string>()};
    trial.condition_a = t.at("condition_a").get<std::string>();
    trial.condition_b = t.at("condition_b").get<std::string>();
    trial.audio_a_token = t.at("audio_a_token").get<std::string>();
    trial.audio_b_token = t.at("audio_b_token").get<std::string>();
    s.trials.push_back(std::move(trial));
  }
  return s;
}

struct StoreOptions {
  bool enforce_order = true;
  std::optional<std::uint64_t> seed;  // fixed seed for reproducible tests; default draws from random_device
};

struct SessionState {
  Session session;
  std::vector<bool> answered;
  std::size_t answered_count = 0;

  bool completed() const { return answered_count == session.trials.size(); }
  std::optional<std::size_t> next_trial() const {
    for (std::size_t i = 0; i < answered.size(); ++i) {
      if (!answered[i]) return i;
    }
    return std::nullopt;
  }
};

struct AudioRef {
  std::filesystem::path path;
  std::string media_type;
};

// Session table plus response log. Sessions live in `<responses stem>.sessions.jsonl`
// next to the response log; both are append-only and replayed on construction,
// so a restarted store resumes every session.
class AbxStore {
 public:
  AbxStore(StimulusManifest manifest, std::filesystem::path responses_path, StoreOptions options = {})
      : manifest_(std::move(manifest)),
        responses_path_(std::move(responses_path)),
        sessions_path_(sessions_path_for(responses_path_)),
        options_(options),
        rng_(options.seed.value_or(detail::entropy_seed())) {
    validate_manifest(manifest_);
    if (responses_path_.has_parent_path()) std::filesystem::create_directories(responses_path_.parent_path());
    replay();
    sessions_log_ = std::make_unique<detail::DurableLog>(sessions_path_);
    responses_log_ = std::make_unique<detail::DurableLog>(responses_path_);
  }

  static std::filesystem::path sessions_path_for(const std::filesystem::path& responses) {
    auto p = responses;
    p.replace_extension(".sessions.jsonl");
    return p;
  }

  const StimulusManifest& manifest() const { return manifest_; }
  const std::filesystem::path& responses_path() const { return responses_path_; }
  bool enforce_order() const { return options_.enforce_order; }

  /// Shuffles every (story, comparison) pair with a session-specific seed and
  /// draws the A/B side of each trial independently. Persisted before return.
  Session create_session() {
    std::unique_lock lock(mutex_);
    Session s;
    s.session_id = detail::random_hex128(rng_);
    s.created_at = utc_timestamp();
    std::mt19937_64 session_rng(rng_());
    for (const auto& story : manifest_.stories) {
      for (const auto& cmp : manifest_.comparisons) {
        Trial t;
        t.story_id = story.story_id;
        t.comparison = cmp;
        s.trials.push_back(std::move(t));
      }
    }
    std::shuffle(s.trials.begin(), s.trials.end(), session_rng);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < s.trials.size(); ++i) {
      auto& t = s.trials[i];
      t.index = i;
      const bool swap = coin(session_rng);
      t.condition_a = swap ? t.comparison.second : t.comparison.first;
      t.condition_b = swap ? t.comparison.first : t.comparison.second;
      t.audio_a_token = detail::random_hex128(session_rng);
      t.audio_b_token = detail::random_hex128(session_rng);
    }
    sessions_log_->append_line(to_json(s).dump());
    install(s);
    return s;
  }

  SessionState session(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) fail(ErrorKind::not_found, "unknown session '" + id + "'");
    return it->second;
  }

  std::size_t session_count() const {
    std::shared_lock lock(mutex_);
    return sessions_.size();
  }

  AudioRef audio(const std::string& token) const {
    std::shared_lock lock(mutex_);
    auto it = audio_.find(token);
    if (it == audio_.end()) fail(ErrorKind::not_found, "unknown audio token");
    return it->second;
  }

  /// Appends and fsyncs the record before returning it.
  ResponseRecord record_response(const std::string& session_id, long long trial, Choice choice) {
    std::unique_lock lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) fail(ErrorKind::not_found, "unknown session '" + session_id + "'");
    auto& state = it->second;
    if (trial < 0 || static_cast<std::size_t>(trial) >= state.session.trials.size()) {
      fail(ErrorKind::out_of_range, "trial " + std::to_string(trial) + " outside 0.." +
                                        std::to_string(state.session.trials.size() - 1));
    }
    const auto index = static_cast<std::size_t>(trial);
    if (state.answered[index]) fail(ErrorKind::duplicate, "trial " + std::to_string(index) + " already answered");
    if (options_.enforce_order && index != *state.next_trial()) {
      fail(ErrorKind::out_of_order, "trial " + std::to_string(index) + " answered before trial " +
                                        std::to_string(*state.next_trial()));
    }
    const auto& t = state.session.trials[index];
    ResponseRecord r{session_id, index, t.story_id, t.comparison, t.condition_a, choice,
                     resolve_preference(t.condition_a, t.condition_b, choice), utc_timestamp()};
    responses_log_->append_line(to_json(r).dump());
    state.answered[index] = true;
    ++state.answered_count;
    return r;
  }

  /// Raw JSON Lines of every acknowledged record.
  std::string export_raw() const {
    std::unique_lock lock(mutex_);
    std::ifstream in(responses_path_, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot read " + responses_path_.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }

  std::vector<eval::AbxComparison> export_comparisons() const {
    std::istringstream in(export_raw());
    return aggregate_responses(parse_response_lines(in, responses_path_.string()), manifest_.comparisons);
  }

 private:
  void install(const Session& s) {
    for (const auto& t : s.trials) {
      const auto& story = manifest_.story(t.story_id);
      for (const auto& [token, cond] : {std::pair{t.audio_a_token, t.condition_a}, std::pair{t.audio_b_token, t.condition_b}}) {
        auto path_it = story.condition_audio.find(cond);
        if (path_it == story.condition_audio.end()) {
          fail(ErrorKind::not_found, "session " + s.session_id + " uses condition '" + cond + "' absent from manifest");
        }
        audio_[token] = {path_it->second, media_type_for(path_it->second)};
      }
    }
    SessionState state{s, std::vector<bool>(s.trials.size(), false), 0};
    sessions_[s.session_id] = std::move(state);
  }

  void replay() {
    std::size_t lineno = 0;
    for (const auto& line : detail::read_log_lines(sessions_path_)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        install(session_from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::parse, sessions_path_.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    std::string text;
    for (const auto& line : detail::read_log_lines(responses_path_)) text += line + '\n';
    std::istringstream in(text);
    for (const auto& r : parse_response_lines(in, responses_path_.string())) {
      auto it = sessions_.find(r.session_id);
      if (it == sessions_.end() || r.trial >= it->second.answered.size() || it->second.answered[r.trial]) {
        fail(ErrorKind::parse, responses_path_.string() + ": record for session " + r.session_id + " trial " +
                                   std::to_string(r.trial) + " does not match the session table");
      }
      it->second.answered[r.trial] = true;
      ++it->second.answered_count;
    }
  }

  StimulusManifest manifest_;
  std::filesystem::path responses_path_;
  std::filesystem::path sessions_path_;
  StoreOptions options_;
  mutable std::shared_mutex mutex_;
  std::mt19937_64 rng_;
  std::map<std::string, SessionState> sessions_;
  std::map<std::string, AudioRef> audio_;
  std::unique_ptr<detail::DurableLog> sessions_log_;
  std::unique_ptr<detail::DurableLog> responses_log_;
};

}  // namespace phrasebreak::abx

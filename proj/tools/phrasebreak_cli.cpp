// phrasebreak_cli: data preparation, training, punctuation, evaluation and the
// ABX listening-test service behind one binary.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include "phrasebreak/abx/server.hpp"
#include "phrasebreak/phrasebreak.hpp"

namespace pb = phrasebreak;
namespace fs = std::filesystem;
using nlohmann::ordered_json;
using pb::ErrorKind;
using pb::fail;

namespace {

enum class Level { debug, info, warn, error };

Level g_level = Level::info;

void log(Level level, const std::string& msg) {
  if (level < g_level) return;
  static const char* names[] = {"debug", "info", "warn", "error"};
  std::cerr << '[' << names[static_cast<int>(level)] << "] " << msg << '\n';
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
}

nlohmann::json parse_json_file(const fs::path& path) {
  const auto text = slurp(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, path.string() + ": " + e.what());
  }
}

std::vector<pb::LabeledSequence> read_split(const fs::path& path, const char* what) {
  if (!fs::exists(path)) fail(ErrorKind::io, std::string(what) + " split not found: " + path.string());
  return pb::read_jsonl(path);
}

ordered_json stats_json(const pb::CorpusStats& s) {
  ordered_json j;
  j["utterances"] = s.utterances;
  j["words"] = s.words;
  j["breaks"] = s.breaks;
  j["scored_boundaries"] = s.scored_boundaries;
  j["break_rate"] = s.break_rate();
  return j;
}

// --config holds {"model": {...}, "train": {...}}; each section is a partial
// override of the defaults, and keys the defaults lack are rejected.
nlohmann::json merge_section(const nlohmann::json& file, const std::string& section, ordered_json defaults) {
  if (!file.contains(section)) return defaults;
  const auto& patch = file[section];
  if (!patch.is_object()) fail(ErrorKind::parse, "config: '" + section + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    if (!defaults.contains(key)) fail(ErrorKind::invalid_argument, "config: unknown key '" + section + "." + key + "'");
    defaults[key] = value;
  }
  return defaults;
}

void check_config_keys(const nlohmann::json& file) {
  if (!file.is_object()) fail(ErrorKind::parse, "config: top level must be an object");
  for (const auto& [key, value] : file.items()) {
    if (key != "model" && key != "train") fail(ErrorKind::invalid_argument, "config: unknown key '" + key + "'");
  }
}

// Model and optimisation knobs shared by the three training commands. A flag
// only overrides the default when it was given on the command line.
struct HyperFlags {
  std::size_t embedding_dim = 0, hidden_size = 0, num_layers = 0, num_heads = 0, ffn_size = 0, max_len = 0;
  double dropout = 0.0;
  std::size_t batch_size = 0, epochs = 0;
  double lr = 0.0, clip = 0.0;
  bool no_clip = false;
  std::vector<CLI::Option*> options;
  CLI::Option* config_opt = nullptr;
  std::string config_path;
  std::uint64_t seed = 1;
  CLI::Option* seed_opt = nullptr;
  bool print_config = false;

  void add(CLI::App& app, const pb::models::ModelConfig& m, const pb::models::TrainConfig& t, bool encoder) {
    auto opt = [&](const std::string& name, auto& target, auto def, const std::string& help) {
      target = def;
      options.push_back(app.add_option(name, target, help)->capture_default_str());
    };
    if (!encoder) opt("--embedding-dim", embedding_dim, m.embedding_dim, "word embedding size");
    opt("--hidden-size", hidden_size, m.hidden_size, encoder ? "model width" : "LSTM units per direction");
    opt("--num-layers", num_layers, m.num_layers, "stacked layers");
    if (encoder) {
      opt("--num-heads", num_heads, m.num_heads, "attention heads");
      opt("--ffn-size", ffn_size, m.ffn_size, "feed-forward inner size");
      opt("--max-len", max_len, m.max_len, "positional limit in subword pieces");
    }
    opt("--dropout", dropout, m.dropout_p, "dropout probability");
    add_train(app, t);
  }

  void add_train(CLI::App& app, const pb::models::TrainConfig& t) {
    auto opt = [&](const std::string& name, auto& target, auto def, const std::string& help) {
      target = def;
      options.push_back(app.add_option(name, target, help)->capture_default_str());
    };
    opt("--batch-size", batch_size, t.batch_size, "sequences per batch");
    opt("--lr", lr, t.learning_rate, "Adam learning rate (> 0)");
    opt("--epochs", epochs, t.num_epochs, "training epochs");
    opt("--clip-norm", clip, t.grad_clip_norm.value_or(0.0), "global gradient-norm clip (0 in the default means none)");
    options.push_back(app.add_flag("--no-clip", no_clip, "disable gradient clipping")->excludes(options.back()));
    seed_opt = app.add_option("--seed", seed, "random seed")->capture_default_str();
    config_opt = app.add_option("--config", config_path, "JSON file {\"model\": {...}, \"train\": {...}}")
                     ->check(CLI::ExistingFile);
    for (auto* o : options) config_opt->excludes(o);
    app.add_flag("--print-config", print_config, "print the defaults and the resolved config as JSON, then exit");
  }

  bool given(const std::string& name) const {
    for (auto* o : options) {
      if (o->check_lname(name.substr(2)) && o->count() > 0) return true;
    }
    return false;
  }

  pb::models::ModelConfig resolve_model(pb::models::ModelConfig m) const {
    if (config_opt->count()) {
      const auto file = parse_json_file(config_path);
      check_config_keys(file);
      const auto [variant, vocab] = std::pair(m.variant, m.vocab_size);
      auto j = merge_section(file, "model", pb::models::to_json(m));
      if (j["variant"] != pb::models::to_string(variant)) fail(ErrorKind::invalid_argument, "config: model.variant must be '" + pb::models::to_string(variant) + "'");
      if (variant == pb::models::Variant::encoder && !(file.contains("model") && file["model"].contains("embedding_dim"))) {
        j["embedding_dim"] = j["hidden_size"];
      }
      m = pb::models::model_config_from_json(j);
      m.vocab_size = vocab;
      return m;
    }
    if (given("--embedding-dim")) m.embedding_dim = embedding_dim;
    if (given("--hidden-size")) m.hidden_size = hidden_size;
    if (given("--num-layers")) m.num_layers = num_layers;
    if (given("--num-heads")) m.num_heads = num_heads;
    if (given("--ffn-size")) m.ffn_size = ffn_size;
    if (given("--max-len")) m.max_len = max_len;
    if (given("--dropout")) m.dropout_p = dropout;
    if (m.variant == pb::models::Variant::encoder) m.embedding_dim = m.hidden_size;
    m.validate();
    return m;
  }

  pb::models::TrainConfig resolve_train(pb::models::TrainConfig t) const {
    if (config_opt->count()) {
      const auto file = parse_json_file(config_path);
      check_config_keys(file);
      t = pb::models::train_config_from_json(merge_section(file, "train", pb::models::to_json(t)), t);
    } else {
      if (given("--batch-size")) t.batch_size = batch_size;
      if (given("--lr")) t.learning_rate = lr;
      if (given("--epochs")) t.num_epochs = epochs;
      if (given("--clip-norm")) t.grad_clip_norm = clip;
      if (no_clip) t.grad_clip_norm.reset();
    }
    if (seed_opt->count()) t.seed = seed;
    if (!(t.learning_rate > 0.0)) fail(ErrorKind::invalid_argument, "learning rate must be > 0");
    t.validate();
    return t;
  }
};

// Streams one JSON object per epoch to the metrics file as training runs.
class MetricsWriter {
 public:
  explicit MetricsWriter(const fs::path& path) : path_(path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) fail(ErrorKind::io, "cannot write " + path.string());
  }

  pb::models::TrainOptions options() {
    pb::models::TrainOptions o;
    o.on_step = [](const pb::models::StepRecord& s) {
      if (g_level <= Level::debug) {
        log(Level::debug, "epoch " + std::to_string(s.epoch) + " step " + std::to_string(s.step) +
                              " loss " + std::to_string(s.loss));
      }
    };
    o.on_epoch = [this](const pb::models::EpochRecord& e) {
      ordered_json j;
      j["epoch"] = e.epoch;
      j["train_loss"] = e.train_loss;
      j["steps"] = e.steps;
      j["dev"] = e.dev ? pb::eval::metrics_json(*e.dev) : ordered_json(nullptr);
      out_ << j.dump() << '\n';
      out_.flush();
      std::string msg = "epoch " + std::to_string(e.epoch) + " train_loss " + std::to_string(e.train_loss);
      if (e.dev) msg += " dev_f1_break " + std::to_string(e.dev->f1_break);
      log(Level::info, msg);
      return true;
    };
    return o;
  }

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  std::ofstream out_;
};

void log_history(const pb::models::TrainHistory& h) {
  std::string msg = "finished " + std::to_string(h.epochs.size()) + " epochs";
  if (h.best_dev_f1) msg += "; kept epoch " + std::to_string(h.best_epoch) + " (dev f1_break " + std::to_string(*h.best_dev_f1) + ")";
  log(Level::info, msg);
}

// vocab_size is a placeholder until the vocabulary is built, so it is left out.
ordered_json without_vocab(ordered_json j) {
  if (j.contains("model")) j["model"].erase("vocab_size");
  return j;
}

// Returns true when the command should stop after printing.
bool log_config(const std::string& what, const ordered_json& defaults, const ordered_json& resolved, bool print) {
  if (print) {
    std::cout << ordered_json{{"defaults", without_vocab(defaults)}, {"resolved", without_vocab(resolved)}}.dump(2) << '\n';
    return true;
  }
  log(Level::info, what + " defaults: " + without_vocab(defaults).dump());
  log(Level::info, "resolved config: " + without_vocab(resolved).dump());
  return false;
}

// Words of one line, or nothing when the line has no word characters.
std::vector<std::string> line_words(const std::string& line) {
  try {
    return pb::normalize_and_tokenize(line);
  } catch (const pb::Error& e) {
    if (e.kind() != ErrorKind::empty_input) throw;
    return {};
  }
}

std::vector<std::vector<std::string>> read_pretrain_corpus(const fs::path& path) {
  std::vector<std::vector<std::string>> corpus;
  if (path.extension() == ".jsonl") {
    for (auto& seq : pb::read_jsonl(path)) corpus.push_back(std::move(seq.words));
  } else {
    std::istringstream in(slurp(path));
    for (std::string line; std::getline(in, line);) {
      auto words = line_words(line);
      if (!words.empty()) corpus.push_back(std::move(words));
    }
  }
  if (corpus.empty()) fail(ErrorKind::empty_input, "pre-training corpus is empty: " + path.string());
  return corpus;
}

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

std::string defaults_banner() {
  using namespace pb::models;
  auto model = [](ModelConfig m) {
    auto j = to_json(m);
    j.erase("vocab_size");
    return j.dump();
  };
  std::ostringstream s;
  s << "Defaults:\n"
    << "  train-blstm       model " << model(ModelConfig::published_blstm(1)) << "\n"
    << "                    train " << to_json(TrainConfig::published_blstm()).dump() << "\n"
    << "  pretrain-encoder  model " << model(ModelConfig::desk_encoder(1)) << "\n"
    << "                    train " << to_json(TrainConfig::desk_pretrain()).dump() << "\n"
    << "  finetune-encoder  train " << to_json(TrainConfig::published_finetune()).dump() << "\n";
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace pb::models;
  CLI::App app{"Phrase break prediction: corpus preparation, BLSTM and encoder taggers, punctuation and ABX tests."};
  app.require_subcommand(1);
  app.footer(defaults_banner());
  std::string level = "info";
  app.add_option("--log-level", level, "debug, info, warn or error")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}))
      ->capture_default_str();

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "Label alignment files and write train/dev/test JSONL splits");
  fs::path prep_alignments, prep_out, prep_split_ids;
  double min_pause = pb::kDefaultMinPause;
  std::vector<double> ratio{8.0, 1.0, 1.0};
  std::uint64_t split_seed = 7;
  prep->add_option("--alignments", prep_alignments, "directory of 'start end token' alignment files")->required();
  prep->add_option("--out", prep_out, "output directory")->required();
  prep->add_option("--min-pause", min_pause, "shortest pause (seconds) that counts as a break")->capture_default_str();
  auto* ratio_opt = prep->add_option("--split-ratio", ratio, "train dev test proportions")->expected(3)->capture_default_str();
  prep->add_option("--split-ids", prep_split_ids, "JSON {\"train\": [ids], \"dev\": [...], \"test\": [...]}")
      ->check(CLI::ExistingFile)
      ->excludes(ratio_opt);
  prep->add_option("--seed", split_seed, "seed of the hash split")->capture_default_str();

  // train-blstm
  auto* tb = app.add_subcommand("train-blstm", "Train the BLSTM tagger from scratch");
  fs::path tb_train, tb_dev, tb_out, tb_metrics;
  std::size_t tb_min_freq = 2;
  HyperFlags tb_flags;
  tb->add_option("--train", tb_train, "training split (JSONL)")->required();
  tb->add_option("--dev", tb_dev, "dev split for best-epoch selection (JSONL)");
  tb->add_option("--out", tb_out, "checkpoint directory")->required();
  tb->add_option("--metrics", tb_metrics, "per-epoch JSONL (default <out>/metrics.jsonl)");
  tb->add_option("--min-freq", tb_min_freq, "minimum word count for the vocabulary")->capture_default_str();
  tb_flags.add(*tb, ModelConfig::published_blstm(1), TrainConfig::published_blstm(), false);

  // pretrain-encoder
  auto* pe = app.add_subcommand("pretrain-encoder", "Pre-train a transformer encoder by masked-piece prediction");
  fs::path pe_corpus, pe_out, pe_metrics;
  std::size_t pe_min_freq = 2;
  HyperFlags pe_flags;
  pe->add_option("--corpus", pe_corpus, "plain text (one utterance per line) or a JSONL split")->required();
  pe->add_option("--out", pe_out, "checkpoint directory")->required();
  pe->add_option("--metrics", pe_metrics, "per-epoch JSONL (default <out>/metrics.jsonl)");
  pe->add_option("--vocab-min-freq", pe_min_freq, "minimum word count for whole-word pieces")->capture_default_str();
  pe_flags.add(*pe, ModelConfig::desk_encoder(1), TrainConfig::desk_pretrain(), true);

  // finetune-encoder
  auto* fe = app.add_subcommand("finetune-encoder", "Fine-tune a pre-trained encoder as a phrase break tagger");
  fs::path fe_init, fe_train, fe_dev, fe_out, fe_metrics;
  HyperFlags fe_flags;
  fe->add_option("--init", fe_init, "encoder checkpoint directory (MLM or tagger)")->required();
  fe->add_option("--train", fe_train, "training split (JSONL)")->required();
  fe->add_option("--dev", fe_dev, "dev split for best-epoch selection (JSONL)");
  fe->add_option("--out", fe_out, "checkpoint directory")->required();
  fe->add_option("--metrics", fe_metrics, "per-epoch JSONL (default <out>/metrics.jsonl)");
  fe_flags.add_train(*fe, TrainConfig::published_finetune());

  // punctuate
  auto* pu = app.add_subcommand("punctuate", "Insert predicted commas, one utterance per input line");
  fs::path pu_model, pu_input, pu_output;
  pu->add_option("--model", pu_model, "tagger checkpoint; omit to normalise only");
  pu->add_option("--input", pu_input, "text file, '-' for stdin")->required();
  pu->add_option("--output", pu_output, "output file (default stdout)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score a tagger on a labelled split");
  fs::path ev_model, ev_test, ev_out;
  std::string ev_format = "json", ev_name;
  ev->add_option("--model", ev_model, "tagger checkpoint")->required();
  ev->add_option("--test", ev_test, "labelled split (JSONL)")->required();
  ev->add_option("--out", ev_out, "also write the JSON report here");
  ev->add_option("--name", ev_name, "model name in the report (default: variant)");
  ev->add_option("--format", ev_format, "stdout format")->check(CLI::IsMember({"json", "text"}))->capture_default_str();

  // abx
  auto* abx = app.add_subcommand("abx", "ABX listening test");
  abx->require_subcommand(1);
  auto* serve = abx->add_subcommand("serve", "Run the HTTP service until SIGINT/SIGTERM");
  fs::path sv_manifest, sv_responses, sv_static;
  int sv_port = 8080;
  std::string sv_host = "127.0.0.1", sv_secret_env;
  bool sv_any_order = false;
  serve->add_option("--manifest", sv_manifest, "stimulus manifest (JSON)")->required();
  serve->add_option("--port", sv_port, "TCP port")->capture_default_str()->check(CLI::Range(1, 65535));
  serve->add_option("--host", sv_host, "bind address")->capture_default_str();
  serve->add_option("--responses", sv_responses, "append-only response log (JSONL)")->required();
  serve->add_option("--admin-secret", sv_secret_env, "name of the environment variable holding the export secret");
  serve->add_option("--static", sv_static, "frontend bundle served at /")->check(CLI::ExistingDirectory);
  serve->add_flag("--any-order", sv_any_order, "allow trials to be answered out of order");

  auto* an = abx->add_subcommand("analyze", "Aggregate exported responses and run the chi-squared tests");
  fs::path an_responses, an_manifest, an_out;
  std::string an_format = "json";
  an->add_option("--responses", an_responses, "response log or export (JSONL)")->required();
  an->add_option("--manifest", an_manifest, "manifest giving the comparison order");
  an->add_option("--out", an_out, "also write the JSON report here");
  an->add_option("--format", an_format, "stdout format")->check(CLI::IsMember({"json", "text"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << ordered_json{{"error", "usage"}, {"message", e.what()}}.dump() << '\n';
    return 2;
  }
  g_level = level == "debug" ? Level::debug : level == "warn" ? Level::warn : level == "error" ? Level::error : Level::info;

  try {
    if (*prep) {
      if (!fs::is_directory(prep_alignments)) fail(ErrorKind::io, "not a directory: " + prep_alignments.string());
      std::vector<fs::path> files;
      for (const auto& entry : fs::directory_iterator(prep_alignments)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
      }
      std::sort(files.begin(), files.end());
      if (files.empty()) fail(ErrorKind::empty_input, "no alignment files in " + prep_alignments.string());
      pb::SplitSpec spec;
      spec.seed = split_seed;
      if (!prep_split_ids.empty()) {
        const auto j = parse_json_file(prep_split_ids);
        for (auto name : {pb::SplitName::train, pb::SplitName::dev, pb::SplitName::test}) {
          const std::string key(pb::to_string(name));
          if (j.contains(key)) spec.explicit_ids[name] = j[key].get<std::vector<std::string>>();
        }
      } else {
        std::copy(ratio.begin(), ratio.end(), spec.ratio.begin());
      }
      ordered_json resolved{{"alignments", prep_alignments.string()}, {"out", prep_out.string()},
                            {"min_pause", min_pause},                 {"split_seed", split_seed}};
      if (spec.is_explicit()) resolved["split_ids"] = prep_split_ids.string();
      else resolved["split_ratio"] = ratio;
      log(Level::info, "resolved config: " + resolved.dump());

      fs::create_directories(prep_out);
      std::vector<pb::Utterance> utterances;
      for (const auto& f : files) utterances.push_back(pb::read_alignment_file(f));
      const auto splits = pb::build_dataset(utterances, spec, min_pause);
      ordered_json stats;
      stats["min_pause"] = min_pause;
      std::vector<pb::LabeledSequence> all;
      for (const auto& s : splits) {
        const std::string name(pb::to_string(s.name));
        pb::write_jsonl(prep_out / (name + ".jsonl"), s.sequences);
        stats["splits"][name] = stats_json(pb::corpus_stats(s.sequences));
        all.insert(all.end(), s.sequences.begin(), s.sequences.end());
        log(Level::info, name + ": " + std::to_string(s.sequences.size()) + " utterances");
      }
      stats["total"] = stats_json(pb::corpus_stats(all));
      write_text(prep_out / "stats.json", stats.dump(2) + "\n");
      return 0;
    }

    if (*tb) {
      const auto defaults_m = ModelConfig::published_blstm(1);
      const auto defaults_t = TrainConfig::published_blstm();
      auto mcfg = tb_flags.resolve_model(defaults_m);
      const auto tcfg = tb_flags.resolve_train(defaults_t);
      if (log_config("train-blstm", {{"model", to_json(defaults_m)}, {"train", to_json(defaults_t)}},
                 {{"train_path", tb_train.string()}, {"dev_path", tb_dev.string()}, {"out", tb_out.string()},
                  {"min_freq", tb_min_freq}, {"model", to_json(mcfg)}, {"train", to_json(tcfg)}},
                 tb_flags.print_config)) {
        return 0;
      }
      const auto train = read_split(tb_train, "train");
      const auto dev = tb_dev.empty() ? std::vector<pb::LabeledSequence>{} : read_split(tb_dev, "dev");
      MetricsWriter metrics(tb_metrics.empty() ? tb_out / "metrics.jsonl" : tb_metrics);
      auto result = train_blstm(train, dev, tcfg, mcfg, tb_min_freq, metrics.options());
      log_history(result.history);
      save_checkpoint(tb_out, result.model, result.vocab, tcfg);
      log(Level::info, "checkpoint written to " + tb_out.string());
      return 0;
    }

    if (*pe) {
      const auto defaults_m = ModelConfig::desk_encoder(1);
      const auto defaults_t = TrainConfig::desk_pretrain();
      auto mcfg = pe_flags.resolve_model(defaults_m);
      const auto tcfg = pe_flags.resolve_train(defaults_t);
      if (log_config("pretrain-encoder", {{"model", to_json(defaults_m)}, {"train", to_json(defaults_t)}},
                 {{"corpus", pe_corpus.string()}, {"out", pe_out.string()}, {"vocab_min_freq", pe_min_freq},
                  {"model", to_json(mcfg)}, {"train", to_json(tcfg)}},
                     pe_flags.print_config)) {
        return 0;
      }
      const auto corpus = read_pretrain_corpus(pe_corpus);
      const auto vocab = pb::build_subword_vocab(corpus, pe_min_freq);
      log(Level::info, "subword vocabulary: " + std::to_string(vocab.size()) + " pieces");
      MetricsWriter metrics(pe_metrics.empty() ? pe_out / "metrics.jsonl" : pe_metrics);
      auto result = pretrain_encoder_mlm(corpus, vocab, tcfg, mcfg, metrics.options());
      log_history(result.history);
      save_checkpoint(pe_out, result.model, vocab, tcfg);
      log(Level::info, "checkpoint written to " + pe_out.string());
      return 0;
    }

    if (*fe) {
      const auto defaults_t = TrainConfig::published_finetune();
      const auto tcfg = fe_flags.resolve_train(defaults_t);
      ordered_json resolved{{"init", fe_init.string()}, {"train_path", fe_train.string()}, {"dev_path", fe_dev.string()},
                            {"out", fe_out.string()}, {"train", to_json(tcfg)}};
      if (log_config("finetune-encoder", {{"train", to_json(defaults_t)}}, resolved, fe_flags.print_config)) return 0;
      const auto init = load_checkpoint(fe_init);
      log(Level::info, "initial model: " + without_vocab({{"model", to_json(init.model)}}).dump());
      const auto train = read_split(fe_train, "train");
      const auto dev = fe_dev.empty() ? std::vector<pb::LabeledSequence>{} : read_split(fe_dev, "dev");
      MetricsWriter metrics(fe_metrics.empty() ? fe_out / "metrics.jsonl" : fe_metrics);
      auto result = finetune_encoder(train, dev, init, tcfg, metrics.options());
      log_history(result.history);
      save_checkpoint(fe_out, result.model, result.vocab, tcfg);
      log(Level::info, "checkpoint written to " + fe_out.string());
      return 0;
    }

    if (*pu) {
      log(Level::info, "resolved config: " + ordered_json{{"model", pu_model.empty() ? ordered_json(nullptr)
                                                                                     : ordered_json(pu_model.string())},
                                                          {"input", pu_input.string()},
                                                          {"output", pu_output.string()}}
                                                 .dump());
      std::optional<PhraseBreakModel> model;
      if (!pu_model.empty()) model.emplace(PhraseBreakModel::load(pu_model));
      std::string text;
      if (pu_input == "-") {
        text.assign(std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>());
      } else {
        text = slurp(pu_input);
      }
      std::ostringstream out;
      std::istringstream in(text);
      for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_words(line).empty()) {
          out << '\n';
          continue;
        }
        out << punctuate_text(model ? &*model : nullptr, line) << '\n';
      }
      if (pu_output.empty()) std::cout << out.str();
      else write_text(pu_output, out.str());
      return 0;
    }

    if (*ev) {
      log(Level::info, "resolved config: " + ordered_json{{"model", ev_model.string()}, {"test", ev_test.string()},
                                                          {"format", ev_format}}
                                                 .dump());
      const auto test = read_split(ev_test, "test");
      if (test.empty()) fail(ErrorKind::empty_input, "test split is empty: " + ev_test.string());
      const auto model = PhraseBreakModel::load(ev_model);
      std::vector<pb::LabeledSequence> hyp;
      hyp.reserve(test.size());
      for (const auto& seq : test) hyp.push_back({seq.id, seq.words, greedy_decode(model, seq.words)});
      const auto metrics = pb::eval::score_predictions(test, hyp);
      const auto report = pb::eval::emit_report(metrics, {}, ev_name.empty() ? to_string(model.variant()) : ev_name);
      if (!ev_out.empty()) write_text(ev_out, report.json.dump(2) + "\n");
      std::cout << (ev_format == "json" ? report.json.dump(2) + "\n" : report.text);
      return 0;
    }

    if (*serve) {
      std::string secret;
      if (!sv_secret_env.empty()) {
        const char* v = std::getenv(sv_secret_env.c_str());
        if (!v || !*v) fail(ErrorKind::invalid_argument, "environment variable " + sv_secret_env + " is unset or empty");
        secret = v;
      }
      log(Level::info, "resolved config: " + ordered_json{{"manifest", sv_manifest.string()},
                                                          {"host", sv_host},
                                                          {"port", sv_port},
                                                          {"responses", sv_responses.string()},
                                                          {"admin_secret_env", sv_secret_env},
                                                          {"static", sv_static.string()},
                                                          {"enforce_order", !sv_any_order}}
                                                 .dump());
      auto manifest = pb::abx::load_manifest(sv_manifest);
      pb::abx::StoreOptions store_opts;
      store_opts.enforce_order = !sv_any_order;
      pb::abx::AbxStore store(std::move(manifest), sv_responses, store_opts);
      pb::abx::ServerOptions server_opts;
      server_opts.admin_secret = secret;
      if (!sv_static.empty()) server_opts.static_dir = sv_static;
      pb::abx::AbxServer server(store, server_opts);
      if (!server.http().bind_to_port(sv_host, sv_port)) {
        fail(ErrorKind::io, "cannot bind " + sv_host + ":" + std::to_string(sv_port));
      }
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::thread loop([&] { server.listen_after_bind(); });
      server.wait_until_ready();
      log(Level::info, "listening on http://" + sv_host + ":" + std::to_string(sv_port) + " (" +
                           std::to_string(store.session_count()) + " sessions restored)");
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      log(Level::info, "shutting down");
      server.stop();
      loop.join();
      return 0;
    }

    if (*an) {
      log(Level::info, "resolved config: " + ordered_json{{"responses", an_responses.string()},
                                                          {"manifest", an_manifest.string()},
                                                          {"format", an_format}}
                                                 .dump());
      const auto records = pb::abx::read_responses(an_responses);
      std::vector<pb::abx::ConditionPair> order;
      if (!an_manifest.empty()) order = pb::abx::load_manifest(an_manifest).comparisons;
      const auto comparisons = pb::abx::aggregate_responses(records, order);
      if (comparisons.empty()) fail(ErrorKind::empty_input, "no responses in " + an_responses.string());
      const auto report = pb::eval::emit_report(std::nullopt, comparisons);
      if (!an_out.empty()) write_text(an_out, report.json.dump(2) + "\n");
      std::cout << (an_format == "json" ? report.json.dump(2) + "\n" : report.text);
      return 0;
    }
  } catch (const pb::Error& e) {
    std::cerr << ordered_json{{"error", pb::to_string(e.kind())}, {"message", e.what()}}.dump() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << ordered_json{{"error", "parse_error"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << ordered_json{{"error", "internal_error"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}

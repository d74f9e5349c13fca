#include "qan/cli.hpp"

#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "qan/corpus.hpp"
#include "qan/encoder.hpp"
#include "qan/error.hpp"
#include "qan/llm.hpp"
#include "qan/metrics.hpp"
#include "qan/random.hpp"
#include "qan/train.hpp"

namespace qan::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::map<std::string, std::string> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

namespace {

// ---------------------------------------------------------------------------
// Helpers

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw IoError(what + " not found: " + path);
}

data::Vocabulary read_vocab(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return data::Vocabulary::from_tokens(tokens);
}

std::string vocab_text(const data::Vocabulary& v) {
  std::string out;
  for (const auto& t : v.tokens()) out += t + "\n";
  return out;
}

void write_run_manifest(const fs::path& dir, const std::string& command, std::uint64_t seed,
                        const ordered_json& extra = ordered_json::object()) {
  ordered_json j;
  j["command"] = command;
  j["seed"] = seed;
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_text(dir / "run.json", j.dump(2) + "\n");
}

ordered_json hp_json(const train::HyperParams& hp) {
  ordered_json j;
  j["lr"] = hp.learning_rate;
  j["l2"] = hp.l2;
  j["batch"] = hp.batch_size;
  j["dropout"] = hp.dropout;
  j["max-subject"] = hp.caps.subject;
  j["max-body"] = hp.caps.body;
  j["max-answer"] = hp.caps.answer;
  j["attention-dim"] = hp.attention_dim;
  j["embed-dim"] = hp.embed_dim;
  j["hidden-dim"] = hp.hidden_dim;
  j["epochs"] = hp.epochs;
  j["patience"] = hp.patience;
  return j;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Options

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;

  // ingest
  std::string input;
  std::string year;
  std::string stats;

  // data
  std::string format = "canonical-jsonl";
  std::string train_path;
  std::string dev_path;
  std::string test_path;
  std::string corpus_path;
  std::string vocab_path;
  std::string vectors_path;

  // model
  train::HyperParams hp;
  std::string variant = "full";
  std::string checkpoint;
  std::string name;
  std::string report_format = "json";
  bool macro_f1 = false;
  bool binary_acc = false;
  std::size_t threads = 1;

  // report
  std::string predictions;
  std::vector<std::string> reports;

  // synthetic
  train::SyntheticOptions synth;
  std::size_t dev_threads = 30;
  std::size_t test_threads = 60;

  // llm
  std::string templates = "data/templates";
  std::string knowledge;
  bool no_knowledge = false;
  std::string mock;
  std::string url;
  std::string token;
  std::string cache;
  bool no_cache = false;
  int retries = 3;
  int retry_delay_ms = 500;
  int max_tokens = 256;
  double temperature = 0.0;
  std::size_t parallel = 4;
  bool resume = false;
  std::string corpus_name;
};

void add_hp_options(CLI::App* sub, Options& o) {
  sub->add_option("--lr", o.hp.learning_rate, "Adam learning rate")->capture_default_str();
  sub->add_option("--l2", o.hp.l2, "L2 coefficient")->capture_default_str();
  sub->add_option("--batch", o.hp.batch_size, "Mini-batch size")->capture_default_str();
  sub->add_option("--dropout", o.hp.dropout, "Dropout rate")->capture_default_str();
  sub->add_option("--max-subject", o.hp.caps.subject, "Subject length cap")->capture_default_str();
  sub->add_option("--max-body", o.hp.caps.body, "Body length cap")->capture_default_str();
  sub->add_option("--max-answer", o.hp.caps.answer, "Answer length cap")->capture_default_str();
  sub->add_option("--attention-dim", o.hp.attention_dim, "Cross-attention width p")->capture_default_str();
  sub->add_option("--embed-dim", o.hp.embed_dim, "Trainable lookup width d")->capture_default_str();
  sub->add_option("--hidden-dim", o.hp.hidden_dim, "Bi-GRU hidden width")->capture_default_str();
  sub->add_option("--epochs", o.hp.epochs, "Maximum epochs")->capture_default_str();
  sub->add_option("--patience", o.hp.patience, "Early-stopping patience")->capture_default_str();
}

void add_embedding_options(CLI::App* sub, Options& o) {
  sub->add_option("--vocab", o.vocab_path, "Vocabulary file, one token per line (ids from 2)");
  sub->add_option("--vectors", o.vectors_path, "Precomputed vector store (QANV1), keyed by vocabulary id");
}

void add_client_options(CLI::App* sub, Options& o) {
  sub->add_option("--mock", o.mock, "Scripted completions JSONL {prompt_sha256, text}");
  sub->add_option("--url", o.url, "Completion endpoint (default $QAN_LLM_URL)");
  sub->add_option("--token", o.token, "Bearer token (default $QAN_LLM_TOKEN)");
  sub->add_option("--cache", o.cache, "Completion cache directory (default <out>/cache)");
  sub->add_flag("--no-cache", o.no_cache, "Disable the completion cache");
  sub->add_option("--retries", o.retries, "Attempts per request")->capture_default_str();
  sub->add_option("--retry-delay-ms", o.retry_delay_ms, "Initial backoff delay")->capture_default_str();
  sub->add_option("--max-tokens", o.max_tokens, "Completion token limit")->capture_default_str();
  sub->add_option("--temperature", o.temperature, "Sampling temperature")->capture_default_str();
  sub->add_option("--templates", o.templates, "Directory holding prompt1..5.txt and knowledge.txt")
      ->capture_default_str();
  sub->add_flag("--resume", o.resume, "Reuse earlier outputs and rerun only unfinished questions");
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "key = value file; flags override it");
  sub->add_option("--seed", o.seed, "Run seed")->capture_default_str();
}

void apply_config(CLI::App* sub, const Options& o, std::ostream& err) {
  if (o.config.empty()) return;
  for (const auto& [key, value] : read_config(o.config)) {
    if (key == "config") continue;
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr) {
      err << "note: config key '" << key << "' does not apply to " << sub->get_name() << "\n";
      continue;
    }
    if (opt->count() > 0) continue;  // the command line wins
    try {
      opt->add_result(value);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Embeddings

struct Embeddings {
  std::optional<data::Vocabulary> vocab;
  std::optional<encoder::VectorStore> store;
};

Embeddings load_embeddings(const Options& o) {
  Embeddings e;
  if (!o.vectors_path.empty() && o.vocab_path.empty())
    throw ConfigError("--vectors is keyed by vocabulary id and needs --vocab");
  if (!o.vocab_path.empty()) {
    require_file(o.vocab_path, "vocabulary");
    e.vocab = read_vocab(o.vocab_path);
  }
  if (!o.vectors_path.empty()) {
    require_file(o.vectors_path, "vector store");
    e.store = encoder::load_precomputed(o.vectors_path);
  }
  return e;
}

std::vector<data::QAThread> load_corpus(const std::string& path, const Options& o, const char* what) {
  if (path.empty()) throw ConfigError(std::string("missing ") + what + " corpus path");
  require_file(path, what + std::string(" corpus"));
  return data::parse_corpus(path, data::parse_format(o.format));
}

metrics::ClassificationOptions class_options(const Options& o) {
  metrics::ClassificationOptions c;
  c.f1 = o.macro_f1 ? metrics::F1Mode::kMacro : metrics::F1Mode::kGood;
  c.binary = o.binary_acc;
  return c;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_ingest(const Options& o, std::ostream& out) {
  require_file(o.input, "input");
  const auto format = o.year == "2015" ? data::CorpusFormat::kSemEval2015Xml
                                        : data::CorpusFormat::kSemEval2017Xml;
  const auto threads = data::parse_corpus(o.input, format);
  const fs::path out_path(o.out);
  data::write_jsonl(out_path, threads);
  const auto s = data::corpus_stats(threads);
  ordered_json j;
  j["source"] = fs::path(o.input).filename().string();
  j["year"] = o.year;
  j["questions"] = s.questions;
  j["answers"] = s.answers;
  j["mean_subject_length"] = s.mean_subject_length;
  j["mean_body_length"] = s.mean_body_length;
  j["mean_answer_length"] = s.mean_answer_length;
  fs::path stats_path = o.stats.empty() ? fs::path(o.out + ".stats.json") : fs::path(o.stats);
  write_text(stats_path, j.dump(2) + "\n");
  out << "questions " << s.questions << "\nanswers " << s.answers << "\nmean subject length "
      << fmt4(s.mean_subject_length) << "\nmean body length " << fmt4(s.mean_body_length)
      << "\nmean answer length " << fmt4(s.mean_answer_length) << "\n";
  return kOk;
}

int cmd_synth(const Options& o, std::ostream& out) {
  const fs::path dir(o.out);
  fs::create_directories(dir);
  auto opts = o.synth;
  opts.seed = o.seed;
  const auto vocab = train::synthetic_vocabulary(opts);
  encoder::save_precomputed(dir / "vectors.qanv", train::synthetic_vectors(opts, vocab));
  write_text(dir / "vocab.txt", vocab_text(vocab));
  data::write_jsonl(dir / "train.jsonl", train::make_synthetic(opts).threads);
  auto dev = opts;
  dev.test_words = true;
  dev.threads = o.dev_threads;
  dev.seed = mix_seed(o.seed, 1);
  data::write_jsonl(dir / "dev.jsonl", train::make_synthetic(dev).threads);
  auto test = opts;
  test.test_words = true;
  test.threads = o.test_threads;
  test.seed = mix_seed(o.seed, 2);
  data::write_jsonl(dir / "test.jsonl", train::make_synthetic(test).threads);
  write_run_manifest(dir, "synth", o.seed);
  out << "wrote synthetic splits to " << dir.string() << "\n";
  return kOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  auto hp = o.hp;
  hp.seed = o.seed;
  hp.validate();
  const auto variant = train::parse_variant(o.variant);
  const auto train_threads = load_corpus(o.train_path, o, "training");
  const auto dev_threads = load_corpus(o.dev_path, o, "development");
  auto emb = load_embeddings(o);
  const auto vocab = emb.vocab ? *emb.vocab : data::Vocabulary::build(train_threads);
  const auto train_set = train::make_instances(train_threads, vocab, hp.caps);
  const auto dev_set = train::make_instances(dev_threads, vocab, hp.caps);
  const encoder::VectorStore* store = emb.store ? &*emb.store : nullptr;

  auto result = train::train(train_set, dev_set, hp, variant, vocab.size(), store);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  train::save_checkpoint(dir / "checkpoint.qanc", result.model, hp, variant, vocab);
  write_text(dir / "history.json", result.history.to_json());
  const auto preds = train::predict_all(result.model, dev_set, o.threads);
  const auto report = metrics::evaluate(preds, o.name.empty() ? o.variant : o.name, class_options(o));
  metrics::write_predictions(dir / "dev_predictions.jsonl", preds);
  metrics::emit_report(report, dir / "dev_report.json", metrics::ReportFormat::kJson);
  ordered_json extra;
  extra["variant"] = o.variant;
  extra["hp"] = hp_json(hp);
  write_run_manifest(dir, "train", o.seed, extra);
  out << "epochs " << result.history.epochs.size() << ", best " << result.history.best_epoch
      << ", dev acc " << fmt4(report.accuracy) << ", dev map "
      << (report.map ? fmt4(*report.map) : "NA") << "\n";
  return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  require_file(o.checkpoint, "checkpoint");
  auto ckpt = train::load_checkpoint(o.checkpoint);
  const auto variant = o.variant.empty() ? ckpt.variant : train::parse_variant(o.variant);
  std::optional<encoder::VectorStore> store;
  if (!o.vectors_path.empty()) {
    require_file(o.vectors_path, "vector store");
    store = encoder::load_precomputed(o.vectors_path);
  }
  const auto hp = ckpt.hp;
  const auto vocab = ckpt.vocab;
  auto m = train::restore_model(ckpt, variant, store ? &*store : nullptr);
  const auto threads = load_corpus(o.corpus_path, o, "evaluation");
  const auto set = train::make_instances(threads, vocab, hp.caps);
  const auto preds = train::predict_all(m, set, o.threads);
  const std::string name = o.name.empty() ? std::string(train::variant_name(variant)) : o.name;
  const auto report = metrics::evaluate(preds, name, class_options(o));
  const fs::path dir(o.out);
  fs::create_directories(dir);
  const auto format = metrics::parse_report_format(o.report_format);
  metrics::emit_report(report, dir / (format == metrics::ReportFormat::kJson ? "report.json" : "report.csv"),
                       format);
  metrics::write_predictions(dir / "predictions.jsonl", preds);
  write_run_manifest(dir, "eval", hp.seed);
  out << "map " << (report.map ? fmt4(*report.map) : "NA") << ", f1 " << fmt4(report.f1) << ", acc "
      << fmt4(report.accuracy) << "\n";
  return kOk;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  auto hp = o.hp;
  hp.seed = o.seed;
  hp.validate();
  const auto train_threads = load_corpus(o.train_path, o, "training");
  const auto dev_threads = load_corpus(o.dev_path, o, "development");
  const auto test_threads = load_corpus(o.test_path, o, "test");
  auto emb = load_embeddings(o);
  const auto vocab = emb.vocab ? *emb.vocab : data::Vocabulary::build(train_threads);
  const auto rows = train::run_ablation(train::make_instances(train_threads, vocab, hp.caps),
                                        train::make_instances(dev_threads, vocab, hp.caps),
                                        train::make_instances(test_threads, vocab, hp.caps), hp,
                                        vocab.size(), emb.store ? &*emb.store : nullptr);
  std::vector<metrics::MetricsReport> reports;
  ordered_json histories = ordered_json::object();
  for (const auto& r : rows) {
    reports.push_back(r.report);
    histories[std::string(train::variant_name(r.variant))] = ordered_json::parse(r.history.to_json());
  }
  const fs::path dir(o.out);
  fs::create_directories(dir);
  const auto csv = metrics::reports_to_csv(reports);
  write_text(dir / "ablation.csv", csv);
  write_text(dir / "histories.json", histories.dump(2) + "\n");
  ordered_json extra;
  extra["hp"] = hp_json(hp);
  write_run_manifest(dir, "ablate", o.seed, extra);
  out << csv;
  return kOk;
}

int cmd_report(const Options& o, std::ostream& out) {
  if (!o.predictions.empty() == !o.reports.empty())
    throw ConfigError("report needs exactly one of --predictions or --reports");
  if (!o.predictions.empty()) {
    require_file(o.predictions, "predictions");
    const auto preds = metrics::read_predictions(o.predictions);
    const auto report = metrics::evaluate(preds, o.name.empty() ? "model" : o.name, class_options(o));
    const auto format = metrics::parse_report_format(o.report_format);
    const auto text = format == metrics::ReportFormat::kJson
                          ? metrics::report_to_json(report)
                          : metrics::reports_to_csv(std::span(&report, 1));
    if (o.out.empty()) {
      out << text;
    } else {
      write_text(o.out, text);
    }
    return kOk;
  }
  std::vector<metrics::MetricsReport> reports;
  for (const auto& path : o.reports) {
    require_file(path, "report");
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    reports.push_back(metrics::report_from_json(ss.str()));
  }
  const auto csv = metrics::reports_to_csv(reports);
  if (o.out.empty()) {
    out << csv;
  } else {
    write_text(o.out, csv);
  }
  return kOk;
}

// LLM client stack: base (scripted or HTTP) -> retries -> optional cache.
struct ClientStack {
  std::unique_ptr<llm::CompletionClient> base;
  std::unique_ptr<llm::RetryingClient> retrying;
  std::unique_ptr<llm::CachingClient> caching;

  llm::CompletionClient& top() {
    if (caching) return *caching;
    return *retrying;
  }
};

ClientStack make_clients(const Options& o, const fs::path& out_dir) {
  ClientStack s;
  if (!o.mock.empty()) {
    require_file(o.mock, "mock responses");
    s.base = std::make_unique<llm::ScriptedClient>(llm::ScriptedClient::from_jsonl(o.mock));
  } else {
    auto cfg = llm::HttpConfig::from_env();
    if (!o.url.empty()) cfg.url = o.url;
    if (!o.token.empty()) cfg.token = o.token;
    s.base = std::make_unique<llm::HttpClient>(cfg);
  }
  s.retrying = std::make_unique<llm::RetryingClient>(*s.base, o.retries,
                                                     std::chrono::milliseconds(o.retry_delay_ms));
  if (!o.no_cache) {
    s.caching = std::make_unique<llm::CachingClient>(*s.retrying,
                                                     o.cache.empty() ? out_dir / "cache" : fs::path(o.cache));
  }
  return s;
}

llm::DecodingParams decoding(const Options& o) {
  llm::DecodingParams p;
  p.temperature = o.temperature;
  p.max_tokens = o.max_tokens;
  p.seed = o.seed;
  return p;
}

int cmd_llm_knowledge(const Options& o, std::ostream& out, std::ostream& err) {
  const auto threads = load_corpus(o.corpus_path, o, "question");
  const auto tpl = llm::load_knowledge_template(o.templates);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  const fs::path target = dir / "knowledge.jsonl";
  std::map<std::string, llm::KnowledgeRecord> previous;
  if (o.resume && fs::exists(target))
    for (auto& r : llm::read_knowledge(target)) previous[r.question_id] = r;

  auto clients = make_clients(o, dir);
  const auto params = decoding(o);
  std::vector<llm::KnowledgeRecord> records;
  std::size_t skipped = 0, failed = 0;
  for (const auto& t : threads) {
    if (auto it = previous.find(t.id); it != previous.end()) {
      records.push_back(it->second);
      continue;
    }
    try {
      records.push_back(llm::generate_knowledge(t, tpl, clients.top(), params));
    } catch (const NoGoldError& e) {
      ++skipped;
      err << "skip " << t.id << ": " << e.what() << "\n";
    } catch (const TransportError& e) {
      ++failed;
      err << "failed " << t.id << ": " << e.what() << "\n";
    }
  }
  write_text(target, llm::knowledge_to_jsonl(records));
  write_run_manifest(dir, "llm-knowledge", o.seed);
  out << "knowledge records " << records.size() << ", skipped " << skipped << ", failed " << failed
      << "\n";
  return failed > 0 ? kTransport : kOk;
}

int cmd_llm_select(const Options& o, std::ostream& out) {
  const auto threads = load_corpus(o.corpus_path, o, "question");
  const auto templates = llm::load_templates(o.templates);
  llm::EvaluateOptions eo;
  eo.mode = o.no_knowledge ? llm::KnowledgeMode::kWithout : llm::KnowledgeMode::kWith;
  eo.decoding = decoding(o);
  eo.parallelism = o.parallel;
  eo.corpus_name = o.corpus_name.empty() ? fs::path(o.corpus_path).stem().string() : o.corpus_name;
  if (eo.mode == llm::KnowledgeMode::kWith) {
    if (o.knowledge.empty()) throw ConfigError("llm-select needs --knowledge or --no-knowledge");
    require_file(o.knowledge, "knowledge file");
    for (const auto& r : llm::read_knowledge(o.knowledge)) eo.knowledge[r.question_id] = r.text;
  }
  const fs::path dir(o.out);
  fs::create_directories(dir);
  const std::string stem(llm::mode_name(eo.mode));
  const fs::path traces_path = dir / (stem + ".traces.jsonl");
  if (o.resume && fs::exists(traces_path)) eo.previous = llm::read_traces(traces_path);

  auto clients = make_clients(o, dir);
  const auto report = llm::evaluate_llm(threads, templates, clients.top(), eo);
  write_text(traces_path, llm::traces_to_jsonl(report.traces));
  write_text(dir / (stem + ".report.json"), llm::report_to_json(report));
  write_text(dir / (stem + ".prompts.csv"), llm::prompt_histogram_csv(report));
  out << stem << " accuracy " << fmt4(report.accuracy) << " (" << report.correct << "/"
      << report.evaluated << "), skipped " << report.skipped << ", aborted " << report.aborted << "\n";
  if (report.aborted > 0) {
    out << "rerun with --resume to retry aborted questions\n";
    return kTransport;
  }
  return kOk;
}

int exit_code_for(const std::exception_ptr& p, std::ostream& err) {
  try {
    std::rethrow_exception(p);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const TransportError& e) {
    err << "transport error: " << e.what() << "\n";
    return kTransport;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kData;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kOther;
  } catch (...) {
    err << "error: unknown failure\n";
    return kOther;
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Answer-selection workbench: QAN training and evaluation, LLM prompt cascade"};
  app.name("qan");
  app.require_subcommand(1);

  auto* ingest = app.add_subcommand("ingest", "Convert a SemEval XML file into canonical JSONL");
  add_common(ingest, o);
  ingest->add_option("--input", o.input, "SemEval XML file")->required();
  ingest->add_option("--year", o.year, "2015 or 2017")->required()->check(CLI::IsMember({"2015", "2017"}));
  ingest->add_option("--out", o.out, "Output JSONL path")->required();
  ingest->add_option("--stats", o.stats, "Stats JSON path (default <out>.stats.json)");

  auto* synth = app.add_subcommand("synth", "Write a synthetic topic corpus with vocabulary and vectors");
  add_common(synth, o);
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--threads", o.synth.threads, "Training questions")->capture_default_str();
  synth->add_option("--dev-threads", o.dev_threads, "Development questions")->capture_default_str();
  synth->add_option("--test-threads", o.test_threads, "Test questions")->capture_default_str();
  synth->add_option("--answers", o.synth.answers_per_thread, "Answers per question")->capture_default_str();
  synth->add_option("--topics", o.synth.topics, "Topic count")->capture_default_str();
  synth->add_option("--vector-dim", o.synth.vector_dim, "Vector width")->capture_default_str();
  synth->add_option("--distractors", o.synth.distractors, "Off-topic word rate in answers")
      ->capture_default_str();

  auto* trn = app.add_subcommand("train", "Train one model variant");
  add_common(trn, o);
  trn->add_option("--train", o.train_path, "Training corpus")->required();
  trn->add_option("--dev", o.dev_path, "Development corpus")->required();
  trn->add_option("--out", o.out, "Output directory")->required();
  trn->add_option("--variant", o.variant, "Ablation variant")->capture_default_str();
  trn->add_option("--format", o.format, "Corpus format")->capture_default_str();
  trn->add_option("--name", o.name, "Model name in reports (default: variant)");
  trn->add_option("--threads", o.threads, "Evaluation threads")->capture_default_str();
  trn->add_flag("--macro-f1", o.macro_f1, "Report macro F1 instead of Good-class F1");
  trn->add_flag("--binary-acc", o.binary_acc, "Report Good vs. rest accuracy");
  add_hp_options(trn, o);
  add_embedding_options(trn, o);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
  add_common(ev, o);
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  ev->add_option("--corpus", o.corpus_path, "Corpus to score")->required();
  ev->add_option("--out", o.out, "Output directory")->required();
  ev->add_option("--variant", o.variant, "Expected variant (default: the checkpoint's)");
  ev->add_option("--vectors", o.vectors_path, "Vector store for precomputed encoders");
  ev->add_option("--format", o.format, "Corpus format")->capture_default_str();
  ev->add_option("--report-format", o.report_format, "json or csv")
      ->capture_default_str()
      ->check(CLI::IsMember({"json", "csv"}));
  ev->add_option("--name", o.name, "Model name in reports (default: variant)");
  ev->add_option("--threads", o.threads, "Evaluation threads")->capture_default_str();
  ev->add_flag("--macro-f1", o.macro_f1, "Report macro F1 instead of Good-class F1");
  ev->add_flag("--binary-acc", o.binary_acc, "Report Good vs. rest accuracy");

  auto* abl = app.add_subcommand("ablate", "Train and test all seven variants");
  add_common(abl, o);
  abl->add_option("--train", o.train_path, "Training corpus")->required();
  abl->add_option("--dev", o.dev_path, "Development corpus")->required();
  abl->add_option("--test", o.test_path, "Test corpus")->required();
  abl->add_option("--out", o.out, "Output directory")->required();
  abl->add_option("--format", o.format, "Corpus format")->capture_default_str();
  add_hp_options(abl, o);
  add_embedding_options(abl, o);

  auto* know = app.add_subcommand("llm-knowledge", "Generate knowledge from each question and its Good answer");
  add_common(know, o);
  know->add_option("--corpus", o.corpus_path, "Corpus")->required();
  know->add_option("--out", o.out, "Output directory")->required();
  know->add_option("--format", o.format, "Corpus format")->capture_default_str();
  add_client_options(know, o);

  auto* sel = app.add_subcommand("llm-select", "Run the five-prompt selection cascade");
  add_common(sel, o);
  sel->add_option("--corpus", o.corpus_path, "Corpus")->required();
  sel->add_option("--out", o.out, "Output directory")->required();
  sel->add_option("--format", o.format, "Corpus format")->capture_default_str();
  sel->add_option("--knowledge", o.knowledge, "Knowledge JSONL from llm-knowledge");
  sel->add_flag("--no-knowledge", o.no_knowledge, "Leave the hint slot empty");
  sel->add_option("--parallel", o.parallel, "Concurrent questions")->capture_default_str();
  sel->add_option("--corpus-name", o.corpus_name, "Corpus label in reports (default: file stem)");
  add_client_options(sel, o);

  auto* rep = app.add_subcommand("report", "Score predictions or tabulate saved reports");
  add_common(rep, o);
  rep->add_option("--predictions", o.predictions, "Predictions JSONL");
  rep->add_option("--reports", o.reports, "Report JSON files to tabulate as CSV");
  rep->add_option("--name", o.name, "Model name");
  rep->add_option("--report-format", o.report_format, "json or csv")
      ->capture_default_str()
      ->check(CLI::IsMember({"json", "csv"}));
  rep->add_option("--out", o.out, "Output file (default stdout)");
  rep->add_flag("--macro-f1", o.macro_f1, "Report macro F1 instead of Good-class F1");
  rep->add_flag("--binary-acc", o.binary_acc, "Report Good vs. rest accuracy");

  // eval defaults to the checkpoint's variant.
  ev->preparse_callback([&o](std::size_t) { o.variant.clear(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    // Subcommand help requests surface as ParseError with exit code 0.
    if (e.get_exit_code() == 0) {
      out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
      return kOk;
    }
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    apply_config(sub, o, err);
    const std::string name = sub->get_name();
    if (name == "ingest") return cmd_ingest(o, out);
    if (name == "synth") return cmd_synth(o, out);
    if (name == "train") return cmd_train(o, out);
    if (name == "eval") return cmd_eval(o, out);
    if (name == "ablate") return cmd_ablate(o, out);
    if (name == "llm-knowledge") return cmd_llm_knowledge(o, out, err);
    if (name == "llm-select") return cmd_llm_select(o, out);
    if (name == "report") return cmd_report(o, out);
    err << "usage error: unknown subcommand\n";
    return kUsage;
  } catch (...) {
    return exit_code_for(std::current_exception(), err);
  }
}

}  // namespace qan::cli

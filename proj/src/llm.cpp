#include "qan/llm.hpp"

#include <openssl/evp.h>

#include <cctype>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "qan/error.hpp"

namespace qan::llm {

using ordered_json = nlohmann::ordered_json;

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool has_good(const data::QAThread& t) {
  for (const auto& a : t.answers)
    if (a.gold == data::Label::kGood) return true;
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// Templates

std::string_view placeholder_token(Placeholder p) {
  switch (p) {
    case Placeholder::kQuestion:
      return "[QUESTION]";
    case Placeholder::kAnswer:
      return "[ANSWER]";
    case Placeholder::kKnowledge:
      return "[KNOWLEDGE]";
    case Placeholder::kSubject:
      return "[SUBJECT]";
  }
  return "";
}

std::vector<Placeholder> PromptTemplate::required_for(int id) {
  if (id < 1 || id > static_cast<int>(kNumTemplates))
    throw ConfigError("template id " + std::to_string(id) + " outside 1..5");
  std::vector<Placeholder> req = {Placeholder::kQuestion, Placeholder::kAnswer, Placeholder::kKnowledge};
  if (id >= 4) req.push_back(Placeholder::kSubject);
  return req;
}

void PromptTemplate::validate() const {
  for (auto p : manifest) {
    if (text.find(placeholder_token(p)) == std::string::npos) {
      throw PlaceholderError("Prompt" + std::to_string(id) + " lacks " +
                             std::string(placeholder_token(p)));
    }
  }
}

PromptTemplate load_template(const std::filesystem::path& dir, int id) {
  PromptTemplate t;
  t.id = id;
  t.manifest = PromptTemplate::required_for(id);
  t.text = read_file(dir / ("prompt" + std::to_string(id) + ".txt"));
  if (!t.text.empty() && t.text.back() == '\n') t.text.pop_back();
  t.validate();
  return t;
}

std::vector<PromptTemplate> load_templates(const std::filesystem::path& dir) {
  std::vector<PromptTemplate> out;
  for (int id = 1; id <= static_cast<int>(kNumTemplates); ++id) out.push_back(load_template(dir, id));
  return out;
}

std::string render_options(const data::QAThread& thread) {
  std::string out;
  for (std::size_t i = 0; i < thread.answers.size(); ++i) {
    if (i > 0) out += ' ';
    out += "C" + std::to_string(i + 1) + ": " + thread.answers[i].text;
  }
  return out;
}

namespace {

std::string substitute(std::string_view text, const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    bool replaced = false;
    if (text[i] == '[') {
      for (const auto& [token, value] : values) {
        if (text.substr(i, token.size()) == token) {
          out += value;
          i += token.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += text[i++];
  }
  return out;
}

}  // namespace

std::string build_prompt(const PromptTemplate& tpl, const data::QAThread& thread,
                         const std::optional<std::string>& knowledge) {
  tpl.validate();
  std::vector<std::pair<std::string, std::string>> values;
  for (auto p : tpl.manifest) {
    std::string value;
    switch (p) {
      case Placeholder::kQuestion:
        value = thread.body;
        break;
      case Placeholder::kAnswer:
        if (thread.answers.empty()) throw PlaceholderError("thread " + thread.id + " has no answers");
        value = render_options(thread);
        break;
      case Placeholder::kKnowledge:
        value = knowledge.value_or("");
        break;
      case Placeholder::kSubject:
        if (thread.subject.empty()) {
          throw PlaceholderError("Prompt" + std::to_string(tpl.id) + " needs a subject; thread " +
                                 thread.id + " has none");
        }
        value = thread.subject;
        break;
    }
    values.emplace_back(std::string(placeholder_token(p)), std::move(value));
  }
  return substitute(tpl.text, values);
}

std::optional<std::size_t> parse_selection(std::string_view completion, std::size_t n_options) {
  if (n_options == 0) throw ConfigError("parse_selection needs at least one option");
  static const std::regex kPattern(R"(\b[cC]([0-9]+))");
  const std::string text(completion);
  for (auto it = std::sregex_iterator(text.begin(), text.end(), kPattern); it != std::sregex_iterator();
       ++it) {
    const std::string digits = (*it)[1].str();
    if (digits.size() > 9) continue;
    const auto v = std::stoul(digits);
    if (v >= 1 && v <= n_options) return v;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Clients

std::string DecodingParams::canonical() const {
  char buf[128];
  std::snprintf(buf, sizeof buf, "temperature=%.17g;max_tokens=%d;seed=%llu", temperature, max_tokens,
                static_cast<unsigned long long>(seed));
  return buf;
}

HttpConfig HttpConfig::from_env() {
  HttpConfig c;
  if (const char* u = std::getenv("QAN_LLM_URL")) c.url = u;
  if (const char* t = std::getenv("QAN_LLM_TOKEN")) c.token = t;
  return c;
}

ScriptedClient ScriptedClient::from_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open scripted responses " + path.string());
  ScriptedClient c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = ordered_json::parse(line);
      c.add_hash(j.at("prompt_sha256").get<std::string>(), j.at("text").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

void ScriptedClient::add(const std::string& prompt, std::string text) {
  add_hash(sha256_hex(prompt), std::move(text));
}

void ScriptedClient::add_hash(std::string prompt_sha256, std::string text) {
  table_[std::move(prompt_sha256)] = std::move(text);
}

std::string ScriptedClient::complete(const std::string& prompt, const DecodingParams&) {
  ++calls_;
  const auto h = sha256_hex(prompt);
  auto it = table_.find(h);
  if (it == table_.end()) throw TransportError("no scripted completion for prompt " + h);
  return it->second;
}

std::string FunctionClient::complete(const std::string& prompt, const DecodingParams&) {
  ++calls_;
  return fn_(prompt);
}

CachingClient::CachingClient(CompletionClient& inner, std::filesystem::path dir)
    : inner_(inner), dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::string CachingClient::key(const std::string& prompt, const DecodingParams& params) {
  return sha256_hex(prompt + "\n" + params.canonical());
}

std::string CachingClient::complete(const std::string& prompt, const DecodingParams& params) {
  const auto k = key(prompt, params);
  const auto path = dir_ / (k + ".json");
  if (std::filesystem::exists(path)) {
    try {
      return ordered_json::parse(read_file(path)).at("text").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      // A damaged entry is refetched and overwritten.
    }
  }
  ++remote_calls_;
  std::string text = inner_.complete(prompt, params);
  ordered_json j;
  j["key"] = k;
  j["text"] = text;
  std::lock_guard lock(write_mutex_);
  const auto tmp = dir_ / (k + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write cache entry " + tmp.string());
    out << j.dump() << "\n";
  }
  std::filesystem::rename(tmp, path);
  return text;
}

RetryingClient::RetryingClient(CompletionClient& inner, int attempts,
                               std::chrono::milliseconds base_delay)
    : inner_(inner), attempts_(attempts), base_delay_(base_delay) {
  if (attempts_ < 1) throw ConfigError("retry attempts must be at least 1");
}

std::string RetryingClient::complete(const std::string& prompt, const DecodingParams& params) {
  auto delay = base_delay_;
  for (int i = 1;; ++i) {
    try {
      return inner_.complete(prompt, params);
    } catch (const TransportError& e) {
      if (i >= attempts_) {
        throw TransportError(std::string(e.what()) + " (after " + std::to_string(attempts_) + " attempts)");
      }
    }
    std::this_thread::sleep_for(delay);
    delay *= 2;
  }
}

// ---------------------------------------------------------------------------
// Knowledge

std::string build_knowledge_prompt(std::string_view tpl, const data::QAThread& thread,
                                   const data::Answer& good) {
  return substitute(tpl, {{"[QUESTION]", thread.subject + thread.body}, {"[GOOD ANSWER]", good.text}});
}

std::string load_knowledge_template(const std::filesystem::path& dir) {
  std::string t = read_file(dir / "knowledge.txt");
  if (!t.empty() && t.back() == '\n') t.pop_back();
  for (const char* p : {"[QUESTION]", "[GOOD ANSWER]"})
    if (t.find(p) == std::string::npos) throw PlaceholderError(std::string("knowledge template lacks ") + p);
  return t;
}

KnowledgeRecord generate_knowledge(const data::QAThread& thread, std::string_view tpl,
                                   CompletionClient& client, const DecodingParams& params) {
  const data::Answer* good = nullptr;
  for (const auto& a : thread.answers) {
    if (a.gold == data::Label::kGood) {
      good = &a;
      break;
    }
  }
  if (good == nullptr) throw NoGoldError("question " + thread.id + " has no Good answer");
  const auto prompt = build_knowledge_prompt(tpl, thread, *good);
  KnowledgeRecord r;
  r.question_id = thread.id;
  r.prompt_sha256 = sha256_hex(prompt);
  r.source_answer_id = good->id;
  r.text = client.complete(prompt, params);
  if (r.text.empty()) throw TransportError("empty knowledge completion for question " + thread.id);
  return r;
}

std::string knowledge_to_jsonl(const std::vector<KnowledgeRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    ordered_json j;
    j["qid"] = r.question_id;
    j["text"] = r.text;
    j["prompt_sha256"] = r.prompt_sha256;
    j["source_aid"] = r.source_answer_id;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<KnowledgeRecord> read_knowledge(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open knowledge file " + path.string());
  std::vector<KnowledgeRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = ordered_json::parse(line);
      out.push_back({j.at("qid").get<std::string>(), j.at("text").get<std::string>(),
                     j.at("prompt_sha256").get<std::string>(), j.at("source_aid").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cascade

std::string_view outcome_name(Outcome o) {
  switch (o) {
    case Outcome::kCorrect:
      return "correct";
    case Outcome::kFailed:
      return "failed";
    case Outcome::kSkipped:
      return "skipped";
    case Outcome::kAborted:
      return "aborted";
  }
  return "failed";
}

Outcome parse_outcome(std::string_view name) {
  for (auto o : {Outcome::kCorrect, Outcome::kFailed, Outcome::kSkipped, Outcome::kAborted})
    if (outcome_name(o) == name) return o;
  throw ParseError("unknown trace outcome '" + std::string(name) + "'");
}

std::optional<int> CascadeTrace::first_correct() const {
  for (const auto& a : attempts)
    if (a.correct) return a.template_id;
  return std::nullopt;
}

CascadeTrace cascade_select(const data::QAThread& thread, const std::vector<PromptTemplate>& templates,
                            const std::optional<std::string>& knowledge, CompletionClient& client,
                            const DecodingParams& params) {
  if (!has_good(thread)) throw NoGoldError("question " + thread.id + " has no Good answer");
  for (std::size_t i = 0; i < templates.size(); ++i) {
    if (templates[i].id != static_cast<int>(i + 1))
      throw ConfigError("templates must be ordered 1..n without gaps");
  }
  CascadeTrace trace;
  trace.question_id = thread.id;
  trace.knowledge_used = knowledge.has_value();
  for (const auto& tpl : templates) {
    const auto prompt = build_prompt(tpl, thread, knowledge);
    Attempt a;
    a.template_id = tpl.id;
    try {
      a.completion = client.complete(prompt, params);
    } catch (const TransportError& e) {
      trace.outcome = Outcome::kAborted;
      trace.note = e.what();
      return trace;
    }
    a.selection = parse_selection(a.completion, thread.answers.size());
    a.correct = a.selection && thread.answers[*a.selection - 1].gold == data::Label::kGood;
    trace.attempts.push_back(a);
    if (a.correct) {
      trace.outcome = Outcome::kCorrect;
      return trace;
    }
  }
  trace.outcome = Outcome::kFailed;
  return trace;
}

std::string_view mode_name(KnowledgeMode m) {
  return m == KnowledgeMode::kWith ? "with-knowledge" : "without-knowledge";
}

LlmReport evaluate_llm(const std::vector<data::QAThread>& corpus,
                       const std::vector<PromptTemplate>& templates, CompletionClient& client,
                       const EvaluateOptions& options) {
  if (templates.size() != kNumTemplates) throw ConfigError("the cascade needs all five templates");
  std::map<std::string, const CascadeTrace*> previous;
  for (const auto& t : options.previous)
    if (t.outcome != Outcome::kAborted) previous[t.question_id] = &t;

  std::vector<CascadeTrace> traces(corpus.size());
  auto run_one = [&](std::size_t i) {
    const auto& thread = corpus[i];
    if (auto it = previous.find(thread.id); it != previous.end()) {
      traces[i] = *it->second;
      return;
    }
    CascadeTrace skip;
    skip.question_id = thread.id;
    skip.outcome = Outcome::kSkipped;
    if (!has_good(thread)) {
      skip.note = "no Good answer";
      traces[i] = std::move(skip);
      return;
    }
    std::optional<std::string> knowledge;
    if (options.mode == KnowledgeMode::kWith) {
      auto k = options.knowledge.find(thread.id);
      if (k == options.knowledge.end()) {
        skip.note = "no knowledge for this question";
        skip.knowledge_used = true;
        traces[i] = std::move(skip);
        return;
      }
      knowledge = k->second;
    }
    traces[i] = cascade_select(thread, templates, knowledge, client, options.decoding);
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(options.parallelism, corpus.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < corpus.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < corpus.size(); i = next++) {
            try {
              run_one(i);
            } catch (...) {
              std::lock_guard lock(error_mutex);
              if (!error) error = std::current_exception();
            }
          }
        });
      }
    }
    if (error) std::rethrow_exception(error);
  }

  LlmReport r;
  r.corpus = options.corpus_name;
  r.mode = options.mode;
  r.seed = options.decoding.seed;
  r.total = corpus.size();
  for (const auto& t : traces) {
    switch (t.outcome) {
      case Outcome::kCorrect:
        ++r.correct;
        ++r.per_prompt[static_cast<std::size_t>(*t.first_correct() - 1)];
        break;
      case Outcome::kFailed:
        ++r.failed;
        break;
      case Outcome::kSkipped:
        ++r.skipped;
        break;
      case Outcome::kAborted:
        ++r.aborted;
        break;
    }
  }
  std::size_t running = 0;
  for (std::size_t i = 0; i < kNumTemplates; ++i) {
    running += r.per_prompt[i];
    r.cumulative[i] = running;
  }
  r.evaluated = r.total - r.skipped - r.aborted;
  r.accuracy = r.evaluated == 0 ? 0.0 : static_cast<double>(r.correct) / static_cast<double>(r.evaluated);
  r.traces = std::move(traces);
  return r;
}

// ---------------------------------------------------------------------------
// Serialization

std::string trace_to_json(const CascadeTrace& t) {
  ordered_json j;
  j["qid"] = t.question_id;
  j["outcome"] = std::string(outcome_name(t.outcome));
  j["knowledge_used"] = t.knowledge_used;
  j["attempts"] = ordered_json::array();
  for (const auto& a : t.attempts) {
    ordered_json aj;
    aj["template"] = a.template_id;
    aj["completion"] = a.completion;
    aj["selection"] = a.selection ? ordered_json(*a.selection) : ordered_json("invalid");
    aj["correct"] = a.correct;
    j["attempts"].push_back(std::move(aj));
  }
  j["note"] = t.note;
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

CascadeTrace trace_from_json(std::string_view line) {
  try {
    const auto j = ordered_json::parse(line);
    CascadeTrace t;
    t.question_id = j.at("qid").get<std::string>();
    t.outcome = parse_outcome(j.at("outcome").get<std::string>());
    t.knowledge_used = j.at("knowledge_used").get<bool>();
    for (const auto& aj : j.at("attempts")) {
      Attempt a;
      a.template_id = aj.at("template").get<int>();
      a.completion = aj.at("completion").get<std::string>();
      if (aj.at("selection").is_number()) a.selection = aj.at("selection").get<std::size_t>();
      a.correct = aj.at("correct").get<bool>();
      t.attempts.push_back(std::move(a));
    }
    t.note = j.at("note").get<std::string>();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("trace: ") + e.what());
  }
}

std::string traces_to_jsonl(const std::vector<CascadeTrace>& traces) {
  std::string out;
  for (const auto& t : traces) out += trace_to_json(t) + "\n";
  return out;
}

std::vector<CascadeTrace> read_traces(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open traces " + path.string());
  std::vector<CascadeTrace> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(trace_from_json(line));
  }
  return out;
}

std::string prompt_histogram_csv(const LlmReport& r) {
  std::string out = "prompt_id,count,cumulative\n";
  for (std::size_t i = 0; i < kNumTemplates; ++i) {
    out += std::to_string(i + 1) + "," + std::to_string(r.per_prompt[i]) + "," +
           std::to_string(r.cumulative[i]) + "\n";
  }
  return out;
}

std::string report_to_json(const LlmReport& r) {
  ordered_json j;
  j["corpus"] = r.corpus;
  j["mode"] = std::string(mode_name(r.mode));
  j["seed"] = r.seed;
  j["total"] = r.total;
  j["evaluated"] = r.evaluated;
  j["correct"] = r.correct;
  j["failed"] = r.failed;
  j["skipped"] = r.skipped;
  j["aborted"] = r.aborted;
  j["accuracy"] = r.accuracy;
  j["per_prompt"] = r.per_prompt;
  j["cumulative"] = r.cumulative;
  if (r.mode == KnowledgeMode::kWith) {
    j["knowledge_from_gold_answer"] = true;
  }
  std::vector<std::string> aborted;
  for (const auto& t : r.traces)
    if (t.outcome == Outcome::kAborted) aborted.push_back(t.question_id);
  j["aborted_questions"] = aborted;
  return j.dump(2) + "\n";
}

}  // namespace qan::llm

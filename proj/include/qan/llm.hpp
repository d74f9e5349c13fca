#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qan/corpus.hpp"

namespace qan::llm {

std::string sha256_hex(std::string_view data);

// ---------------------------------------------------------------------------
// Templates

enum class Placeholder { kQuestion, kAnswer, kKnowledge, kSubject };
std::string_view placeholder_token(Placeholder p);  // e.g. "[QUESTION]"

inline constexpr std::size_t kNumTemplates = 5;

struct PromptTemplate {
  int id = 0;  // 1..5
  std::string text;
  std::vector<Placeholder> manifest;

  // Prompt1-3 need QUESTION, ANSWER, KNOWLEDGE; Prompt4-5 also SUBJECT.
  static std::vector<Placeholder> required_for(int id);
  // Throws PlaceholderError if a manifest entry is missing from the text.
  void validate() const;
};

// Reads prompt<id>.txt from `dir`; one trailing newline is dropped.
PromptTemplate load_template(const std::filesystem::path& dir, int id);
std::vector<PromptTemplate> load_templates(const std::filesystem::path& dir);

// "C1: first C2: second" in file order.
std::string render_options(const data::QAThread& thread);

// Single-pass substitution: inserted text is never rescanned. With no
// knowledge the [KNOWLEDGE] slot is left empty. Throws PlaceholderError when
// a required value is unavailable (e.g. an empty subject for Prompt4/5).
std::string build_prompt(const PromptTemplate& tpl, const data::QAThread& thread,
                         const std::optional<std::string>& knowledge);

// 1-based index of the first C<digits> (case-insensitive) within 1..n.
std::optional<std::size_t> parse_selection(std::string_view completion, std::size_t n_options);

// ---------------------------------------------------------------------------
// Completion clients

struct DecodingParams {
  double temperature = 0.0;
  int max_tokens = 256;
  std::uint64_t seed = 0;

  std::string canonical() const;
};

class CompletionClient {
 public:
  virtual ~CompletionClient() = default;
  // Throws TransportError when the service cannot produce a completion.
  virtual std::string complete(const std::string& prompt, const DecodingParams& params) = 0;
};

struct HttpConfig {
  std::string url;    // e.g. http://localhost:8080/v1/complete
  std::string token;  // sent as a Bearer token when nonempty
  std::chrono::milliseconds timeout{60000};

  // QAN_LLM_URL and QAN_LLM_TOKEN.
  static HttpConfig from_env();
};

// POST {prompt, max_tokens, temperature, seed} -> {text}.
class HttpClient : public CompletionClient {
 public:
  explicit HttpClient(HttpConfig config);
  std::string complete(const std::string& prompt, const DecodingParams& params) override;

 private:
  HttpConfig config_;
  std::string scheme_host_port_;
  std::string path_;
};

// Replays completions keyed by sha256(prompt); a missing entry is a
// TransportError so scripted runs surface gaps like a failing service.
class ScriptedClient : public CompletionClient {
 public:
  ScriptedClient() = default;
  ScriptedClient(ScriptedClient&& other) noexcept
      : table_(std::move(other.table_)), calls_(other.calls_.load()) {}
  static ScriptedClient from_jsonl(const std::filesystem::path& path);

  void add(const std::string& prompt, std::string text);
  void add_hash(std::string prompt_sha256, std::string text);
  std::string complete(const std::string& prompt, const DecodingParams& params) override;
  std::size_t calls() const { return calls_.load(); }

 private:
  std::unordered_map<std::string, std::string> table_;
  std::atomic<std::size_t> calls_{0};
};

class FunctionClient : public CompletionClient {
 public:
  using Fn = std::function<std::string(const std::string& prompt)>;
  explicit FunctionClient(Fn fn) : fn_(std::move(fn)) {}
  std::string complete(const std::string& prompt, const DecodingParams&) override;
  std::size_t calls() const { return calls_.load(); }

 private:
  Fn fn_;
  std::atomic<std::size_t> calls_{0};
};

// Content-addressed file cache in front of another client. Reads may run
// concurrently; writes are serialized.
class CachingClient : public CompletionClient {
 public:
  CachingClient(CompletionClient& inner, std::filesystem::path dir);
  std::string complete(const std::string& prompt, const DecodingParams& params) override;

  static std::string key(const std::string& prompt, const DecodingParams& params);
  std::size_t remote_calls() const { return remote_calls_.load(); }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  CompletionClient& inner_;
  std::filesystem::path dir_;
  std::mutex write_mutex_;
  std::atomic<std::size_t> remote_calls_{0};
};

// Retries TransportError with exponential backoff: delay, 2·delay, ...
class RetryingClient : public CompletionClient {
 public:
  RetryingClient(CompletionClient& inner, int attempts = 3,
                 std::chrono::milliseconds base_delay = std::chrono::milliseconds(500));
  std::string complete(const std::string& prompt, const DecodingParams& params) override;

 private:
  CompletionClient& inner_;
  int attempts_;
  std::chrono::milliseconds base_delay_;
};

// ---------------------------------------------------------------------------
// Knowledge

struct KnowledgeRecord {
  std::string question_id;
  std::string text;
  std::string prompt_sha256;
  std::string source_answer_id;

  friend bool operator==(const KnowledgeRecord&, const KnowledgeRecord&) = default;
};

// [QUESTION] is the subject immediately followed by the body.
std::string build_knowledge_prompt(std::string_view tpl, const data::QAThread& thread,
                                   const data::Answer& good);
std::string load_knowledge_template(const std::filesystem::path& dir);

// Uses the first Good answer in file order; throws NoGoldError without one.
KnowledgeRecord generate_knowledge(const data::QAThread& thread, std::string_view tpl,
                                   CompletionClient& client, const DecodingParams& params = {});

std::string knowledge_to_jsonl(const std::vector<KnowledgeRecord>& records);
std::vector<KnowledgeRecord> read_knowledge(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Cascade

struct Attempt {
  int template_id = 0;
  std::string completion;
  std::optional<std::size_t> selection;
  bool correct = false;

  friend bool operator==(const Attempt&, const Attempt&) = default;
};

enum class Outcome { kCorrect, kFailed, kSkipped, kAborted };
std::string_view outcome_name(Outcome o);
Outcome parse_outcome(std::string_view name);

struct CascadeTrace {
  std::string question_id;
  std::vector<Attempt> attempts;
  Outcome outcome = Outcome::kFailed;
  bool knowledge_used = false;
  std::string note;  // skip reason or transport error; empty otherwise

  // Template id of the correct attempt, if any.
  std::optional<int> first_correct() const;
  friend bool operator==(const CascadeTrace&, const CascadeTrace&) = default;
};

// Runs the templates in order and stops at the first correct selection. A
// TransportError ends the trace with Outcome::kAborted so it can be resumed.
CascadeTrace cascade_select(const data::QAThread& thread, const std::vector<PromptTemplate>& templates,
                            const std::optional<std::string>& knowledge, CompletionClient& client,
                            const DecodingParams& params = {});

enum class KnowledgeMode { kWith, kWithout };
std::string_view mode_name(KnowledgeMode m);

struct LlmReport {
  std::string corpus;
  KnowledgeMode mode = KnowledgeMode::kWithout;
  std::uint64_t seed = 0;
  std::size_t total = 0;
  std::size_t evaluated = 0;  // total - skipped - aborted
  std::size_t correct = 0;
  std::size_t failed = 0;
  std::size_t skipped = 0;
  std::size_t aborted = 0;
  double accuracy = 0.0;  // correct / evaluated, 0 when nothing was evaluated
  std::array<std::size_t, kNumTemplates> per_prompt{};
  std::array<std::size_t, kNumTemplates> cumulative{};
  std::vector<CascadeTrace> traces;  // corpus order
};

struct EvaluateOptions {
  KnowledgeMode mode = KnowledgeMode::kWithout;
  DecodingParams decoding;
  std::size_t parallelism = 4;
  std::string corpus_name;
  // question id -> knowledge text, used in kWith mode.
  std::map<std::string, std::string> knowledge;
  // Finished (non-aborted) traces from an earlier run are reused verbatim.
  std::vector<CascadeTrace> previous;
};

LlmReport evaluate_llm(const std::vector<data::QAThread>& corpus,
                       const std::vector<PromptTemplate>& templates, CompletionClient& client,
                       const EvaluateOptions& options);

std::string trace_to_json(const CascadeTrace& trace);
CascadeTrace trace_from_json(std::string_view line);
std::string traces_to_jsonl(const std::vector<CascadeTrace>& traces);
std::vector<CascadeTrace> read_traces(const std::filesystem::path& path);

// "prompt_id,count,cumulative" plus one row per template.
std::string prompt_histogram_csv(const LlmReport& report);
// Summary without traces; with-knowledge reports flag that K was generated
// from the gold answer.
std::string report_to_json(const LlmReport& report);

}  // namespace qan::llm

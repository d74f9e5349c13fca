#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace qan::data {

enum class Label : std::uint8_t { kGood = 0, kPotential = 1, kBad = 2 };
inline constexpr std::size_t kNumLabels = 3;

std::string_view label_name(Label label);
// Accepts exactly "Good", "Potential", "Bad"; throws LabelError otherwise.
Label parse_label(std::string_view name);

struct Answer {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;  // preprocessed, untruncated
  Label gold = Label::kBad;

  friend bool operator==(const Answer&, const Answer&) = default;
};

struct QAThread {
  std::string id;
  std::string subject;
  std::string body;
  std::vector<std::string> subject_tokens;
  std::vector<std::string> body_tokens;
  std::vector<Answer> answers;

  friend bool operator==(const QAThread&, const QAThread&) = default;
};

// Builds a thread from raw text, running preprocess() on every field and
// checking the thread invariants (>= 1 answer, unique answer ids).
QAThread make_thread(std::string id, std::string subject, std::string body,
                     std::vector<std::pair<std::string, std::string>> answer_texts,
                     const std::vector<Label>& golds);

enum class CorpusFormat { kSemEval2015Xml, kSemEval2017Xml, kCanonicalJsonl };

// "semeval2015-xml" | "semeval2017-xml" | "canonical-jsonl"
CorpusFormat parse_format(std::string_view name);

std::vector<QAThread> parse_corpus(const std::filesystem::path& path, CorpusFormat format);
std::vector<QAThread> parse_jsonl(std::istream& in, const std::string& source_name = "<stream>");
std::vector<QAThread> parse_semeval_xml(std::istream& in, CorpusFormat format,
                                        const std::string& source_name = "<stream>");

// One compact JSON object per line, keys in the order id, subject, body,
// answers[{id, text, gold}], each line terminated by '\n'.
std::string to_jsonl_line(const QAThread& thread);
std::string to_jsonl(const std::vector<QAThread>& threads);
void write_jsonl(const std::filesystem::path& path, const std::vector<QAThread>& threads);

struct CorpusStats {
  std::size_t questions = 0;
  std::size_t answers = 0;
  double mean_subject_length = 0.0;
  double mean_body_length = 0.0;
  double mean_answer_length = 0.0;

  friend bool operator==(const CorpusStats&, const CorpusStats&) = default;
};

// Lengths count tokenize() output on the raw text, before stopword removal,
// stemming, or truncation.
CorpusStats corpus_stats(const std::vector<QAThread>& threads);

class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kUnk = 1;

  Vocabulary() = default;
  // Tokens enter in first-occurrence order: subject, body, then answers.
  static Vocabulary build(const std::vector<QAThread>& threads);
  // Tokens for ids 2, 3, ... in order.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  std::int64_t add(const std::string& token);
  std::int64_t index(const std::string& token) const;
  const std::string& token(std::int64_t id) const;
  std::size_t size() const { return tokens_.size() + 2; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> index_;
};

struct IndexedSequence {
  std::vector<std::int64_t> ids;
  std::vector<unsigned char> mask;  // 1 = real token

  std::size_t length() const { return ids.size(); }
  // Appends PAD positions (mask 0) until the sequence has `length` entries.
  void pad_to(std::size_t length);

  friend bool operator==(const IndexedSequence&, const IndexedSequence&) = default;
};

struct IndexedAnswer {
  std::string id;
  IndexedSequence tokens;
  Label gold = Label::kBad;
};

struct IndexedThread {
  std::string id;
  IndexedSequence subject;
  IndexedSequence body;
  std::vector<IndexedAnswer> answers;
};

struct LengthCaps {
  std::size_t subject = 20;
  std::size_t body = 110;
  std::size_t answer = 100;
};

IndexedSequence index_tokens(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                             std::size_t cap);
// Keeps the first cap tokens of each field; unknown tokens map to UNK.
IndexedThread truncate_and_index(const QAThread& thread, const Vocabulary& vocab,
                                 const LengthCaps& caps = {});

}  // namespace qan::data

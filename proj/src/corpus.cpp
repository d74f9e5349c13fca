#include "qan/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include "json.hpp"

#include "qan/error.hpp"
#include "qan/text.hpp"

namespace qan::data {

namespace pt = boost::property_tree;
using ordered_json = nlohmann::ordered_json;

std::string_view label_name(Label label) {
  switch (label) {
    case Label::kGood:
      return "Good";
    case Label::kPotential:
      return "Potential";
    case Label::kBad:
      return "Bad";
  }
  return "Bad";
}

Label parse_label(std::string_view name) {
  if (name == "Good") return Label::kGood;
  if (name == "Potential") return Label::kPotential;
  if (name == "Bad") return Label::kBad;
  throw LabelError("unknown gold label '" + std::string(name) + "'");
}

namespace {

// SemEval 2015 CGOLD values. Dialogue / Not English / Other are folded into
// Bad, as in the official three-class scorer.
Label parse_label_2015(const std::string& v) {
  if (v == "Good") return Label::kGood;
  if (v == "Potential") return Label::kPotential;
  if (v == "Bad" || v == "Dialogue" || v == "Not English" || v == "Other") return Label::kBad;
  throw LabelError("unknown CGOLD value '" + v + "'");
}

Label parse_label_2017(const std::string& v) {
  if (v == "Good") return Label::kGood;
  if (v == "PotentiallyUseful" || v == "Potential") return Label::kPotential;
  if (v == "Bad") return Label::kBad;
  throw LabelError("unknown RELC_RELEVANCE2RELQ value '" + v + "'");
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::string clean_text(const std::string& raw) { return trim(strip_tags(raw)); }

std::string attr(const pt::ptree& node, const std::string& name, const std::string& where) {
  auto v = node.get_optional<std::string>("<xmlattr>." + name);
  if (!v) throw ParseError(where + ": missing attribute " + name);
  return *v;
}

std::string child_text(const pt::ptree& node, const std::string& name) {
  auto v = node.get_child_optional(name);
  return v ? clean_text(v->data()) : std::string();
}

void collect(const pt::ptree& node, const std::string& tag, std::vector<const pt::ptree*>& out) {
  for (const auto& [key, child] : node) {
    if (key == tag) {
      out.push_back(&child);
    } else if (key != "<xmlattr>" && key != "<xmlcomment>") {
      collect(child, tag, out);
    }
  }
}

QAThread thread_2015(const pt::ptree& q, const std::string& source) {
  const std::string qid = attr(q, "QID", source + ": <Question>");
  std::vector<std::pair<std::string, std::string>> answers;
  std::vector<Label> golds;
  for (const auto& [key, c] : q) {
    if (key != "Comment") continue;
    const std::string where = source + ": question " + qid + " <Comment>";
    answers.emplace_back(attr(c, "CID", where), child_text(c, "CBody"));
    golds.push_back(parse_label_2015(attr(c, "CGOLD", where)));
  }
  return make_thread(qid, child_text(q, "QSubject"), child_text(q, "QBody"), std::move(answers),
                     golds);
}

QAThread thread_2017(const pt::ptree& t, const std::string& source) {
  const auto rq = t.get_child_optional("RelQuestion");
  if (!rq) throw ParseError(source + ": <Thread> without <RelQuestion>");
  const std::string qid = attr(*rq, "RELQ_ID", source + ": <RelQuestion>");
  std::vector<std::pair<std::string, std::string>> answers;
  std::vector<Label> golds;
  for (const auto& [key, c] : t) {
    if (key != "RelComment") continue;
    const std::string where = source + ": question " + qid + " <RelComment>";
    answers.emplace_back(attr(c, "RELC_ID", where), child_text(c, "RelCText"));
    golds.push_back(parse_label_2017(attr(c, "RELC_RELEVANCE2RELQ", where)));
  }
  return make_thread(qid, child_text(*rq, "RelQSubject"), child_text(*rq, "RelQBody"),
                     std::move(answers), golds);
}

std::string require_string(const ordered_json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw ParseError(where + ": missing or non-string field '" + key + "'");
  }
  return it->get<std::string>();
}

}  // namespace

QAThread make_thread(std::string id, std::string subject, std::string body,
                     std::vector<std::pair<std::string, std::string>> answer_texts,
                     const std::vector<Label>& golds) {
  if (answer_texts.empty()) throw DataError("question " + id + " has no answers");
  if (answer_texts.size() != golds.size()) throw DataError("question " + id + ": label count mismatch");
  QAThread t;
  t.id = std::move(id);
  t.subject_tokens = preprocess(subject);
  t.body_tokens = preprocess(body);
  t.subject = std::move(subject);
  t.body = std::move(body);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < answer_texts.size(); ++i) {
    auto& [aid, text] = answer_texts[i];
    if (!seen.insert(aid).second) {
      throw DataError("question " + t.id + ": duplicate answer id " + aid);
    }
    Answer a;
    a.tokens = preprocess(text);
    a.id = std::move(aid);
    a.text = std::move(text);
    a.gold = golds[i];
    t.answers.push_back(std::move(a));
  }
  return t;
}

CorpusFormat parse_format(std::string_view name) {
  if (name == "semeval2015-xml") return CorpusFormat::kSemEval2015Xml;
  if (name == "semeval2017-xml") return CorpusFormat::kSemEval2017Xml;
  if (name == "canonical-jsonl") return CorpusFormat::kCanonicalJsonl;
  throw ConfigError("unknown corpus format '" + std::string(name) + "'");
}

std::vector<QAThread> parse_corpus(const std::filesystem::path& path, CorpusFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file " + path.string());
  if (format == CorpusFormat::kCanonicalJsonl) return parse_jsonl(in, path.string());
  return parse_semeval_xml(in, format, path.string());
}

std::vector<QAThread> parse_jsonl(std::istream& in, const std::string& source_name) {
  std::vector<QAThread> threads;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source_name + ":" + std::to_string(line_no);
    ordered_json obj;
    try {
      obj = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!obj.is_object()) throw ParseError(where + ": expected a JSON object");
    auto answers_it = obj.find("answers");
    if (answers_it == obj.end() || !answers_it->is_array()) {
      throw ParseError(where + ": missing or non-array field 'answers'");
    }
    std::vector<std::pair<std::string, std::string>> answers;
    std::vector<Label> golds;
    for (const auto& a : *answers_it) {
      if (!a.is_object()) throw ParseError(where + ": answer entries must be objects");
      answers.emplace_back(require_string(a, "id", where), require_string(a, "text", where));
      const std::string gold = require_string(a, "gold", where);
      try {
        golds.push_back(parse_label(gold));
      } catch (const LabelError& e) {
        throw LabelError(where + ": " + e.what());
      }
    }
    try {
      threads.push_back(make_thread(require_string(obj, "id", where),
                                    require_string(obj, "subject", where),
                                    require_string(obj, "body", where), std::move(answers), golds));
    } catch (const DataError& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  if (threads.empty()) throw ParseError(source_name + ": corpus contains no threads");
  return threads;
}

std::vector<QAThread> parse_semeval_xml(std::istream& in, CorpusFormat format,
                                        const std::string& source_name) {
  pt::ptree tree;
  try {
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError(source_name + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  std::vector<const pt::ptree*> nodes;
  collect(tree, format == CorpusFormat::kSemEval2015Xml ? "Question" : "Thread", nodes);
  std::vector<QAThread> threads;
  threads.reserve(nodes.size());
  for (const auto* n : nodes) {
    threads.push_back(format == CorpusFormat::kSemEval2015Xml ? thread_2015(*n, source_name)
                                                              : thread_2017(*n, source_name));
  }
  if (threads.empty()) throw ParseError(source_name + ": no questions found");
  return threads;
}

std::string to_jsonl_line(const QAThread& t) {
  ordered_json obj;
  obj["id"] = t.id;
  obj["subject"] = t.subject;
  obj["body"] = t.body;
  obj["answers"] = ordered_json::array();
  for (const auto& a : t.answers) {
    ordered_json ja;
    ja["id"] = a.id;
    ja["text"] = a.text;
    ja["gold"] = std::string(label_name(a.gold));
    obj["answers"].push_back(std::move(ja));
  }
  return obj.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

std::string to_jsonl(const std::vector<QAThread>& threads) {
  std::string out;
  for (const auto& t : threads) out += to_jsonl_line(t);
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<QAThread>& threads) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_jsonl(threads);
  if (!out) throw IoError("write failed for " + path.string());
}

CorpusStats corpus_stats(const std::vector<QAThread>& threads) {
  CorpusStats s;
  s.questions = threads.size();
  double subj = 0, body = 0, ans = 0;
  for (const auto& t : threads) {
    subj += static_cast<double>(tokenize(t.subject).size());
    body += static_cast<double>(tokenize(t.body).size());
    for (const auto& a : t.answers) ans += static_cast<double>(tokenize(a.text).size());
    s.answers += t.answers.size();
  }
  if (s.questions > 0) {
    s.mean_subject_length = subj / static_cast<double>(s.questions);
    s.mean_body_length = body / static_cast<double>(s.questions);
  }
  if (s.answers > 0) s.mean_answer_length = ans / static_cast<double>(s.answers);
  return s;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary Vocabulary::build(const std::vector<QAThread>& threads) {
  Vocabulary v;
  for (const auto& t : threads) {
    for (const auto& tok : t.subject_tokens) v.add(tok);
    for (const auto& tok : t.body_tokens) v.add(tok);
    for (const auto& a : t.answers)
      for (const auto& tok : a.tokens) v.add(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const auto& tok : tokens) {
    const auto before = v.size();
    v.add(tok);
    if (v.size() == before) throw FormatError("duplicate vocabulary token '" + tok + "'");
  }
  return v;
}

std::int64_t Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const auto id = static_cast<std::int64_t>(tokens_.size()) + 2;
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::int64_t Vocabulary::index(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::int64_t id) const {
  static const std::string kPadToken = "<pad>";
  static const std::string kUnkToken = "<unk>";
  if (id == kPad) return kPadToken;
  if (id == kUnk) return kUnkToken;
  if (id < 2 || static_cast<std::size_t>(id - 2) >= tokens_.size()) {
    throw LookupError("vocabulary id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id - 2)];
}

void IndexedSequence::pad_to(std::size_t length) {
  while (ids.size() < length) {
    ids.push_back(Vocabulary::kPad);
    mask.push_back(0);
  }
}

IndexedSequence index_tokens(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                             std::size_t cap) {
  IndexedSequence s;
  const std::size_t n = std::min(cap, tokens.size());
  s.ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) s.ids.push_back(vocab.index(tokens[i]));
  s.mask.assign(n, 1);
  return s;
}

IndexedThread truncate_and_index(const QAThread& thread, const Vocabulary& vocab,
                                 const LengthCaps& caps) {
  IndexedThread out;
  out.id = thread.id;
  out.subject = index_tokens(thread.subject_tokens, vocab, caps.subject);
  out.body = index_tokens(thread.body_tokens, vocab, caps.body);
  for (const auto& a : thread.answers)
    out.answers.push_back({a.id, index_tokens(a.tokens, vocab, caps.answer), a.gold});
  return out;
}

}  // namespace qan::data

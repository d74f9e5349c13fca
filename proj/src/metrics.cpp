#include "qan/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <unordered_map>

#include "json.hpp"

#include "qan/error.hpp"

namespace qan::metrics {

using ordered_json = nlohmann::ordered_json;

Label ClassDistribution::argmax() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return static_cast<Label>(best);
}

std::optional<double> average_precision(std::span<const Label> ranked) {
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (ranked[k] != Label::kGood) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(k + 1);
  }
  if (hits == 0.0) return std::nullopt;
  return sum / hits;
}

std::vector<const PredictionRecord*> rank_answers(std::vector<const PredictionRecord*> records) {
  std::sort(records.begin(), records.end(), [](const PredictionRecord* a, const PredictionRecord* b) {
    if (a->score() != b->score()) return a->score() > b->score();
    return a->answer_id < b->answer_id;
  });
  return records;
}

std::vector<QuestionAp> per_question_ap(std::span<const PredictionRecord> records) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<const PredictionRecord*>> groups;
  for (const auto& r : records) {
    auto [it, inserted] = groups.try_emplace(r.question_id);
    if (inserted) order.push_back(r.question_id);
    it->second.push_back(&r);
  }
  std::vector<QuestionAp> out;
  out.reserve(order.size());
  for (const auto& qid : order) {
    const auto ranked = rank_answers(groups[qid]);
    std::vector<Label> golds;
    golds.reserve(ranked.size());
    for (const auto* r : ranked) golds.push_back(r->gold);
    out.push_back({qid, average_precision(golds)});
  }
  return out;
}

std::optional<double> map_score(std::span<const PredictionRecord> records) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& q : per_question_ap(records)) {
    if (!q.ap) continue;
    sum += *q.ap;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

namespace {

double f1_for(const ConfusionMatrix& c, std::size_t cls) {
  std::size_t tp = c[cls][cls];
  std::size_t predicted = 0, actual = 0;
  for (std::size_t i = 0; i < data::kNumLabels; ++i) {
    predicted += c[i][cls];
    actual += c[cls][i];
  }
  const double precision = predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
  const double recall = actual == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(actual);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

ordered_json maybe_number(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json("NA");
}

std::optional<double> read_maybe_number(const ordered_json& v) {
  if (v.is_string() && v.get<std::string>() == "NA") return std::nullopt;
  if (!v.is_number()) throw FormatError("report field must be a number or \"NA\"");
  return v.get<double>();
}

std::string fixed4(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

}  // namespace

ClassificationResult classification_metrics(std::span<const PredictionRecord> records,
                                            const ClassificationOptions& options) {
  if (records.empty()) throw DataError("classification metrics need at least one prediction");
  ClassificationResult r;
  for (const auto& rec : records) {
    r.confusion[static_cast<std::size_t>(rec.gold)]
               [static_cast<std::size_t>(rec.distribution.argmax())]++;
  }
  std::size_t correct = 0;
  if (options.binary) {
    const std::size_t good = static_cast<std::size_t>(Label::kGood);
    for (std::size_t g = 0; g < data::kNumLabels; ++g)
      for (std::size_t p = 0; p < data::kNumLabels; ++p)
        if ((g == good) == (p == good)) correct += r.confusion[g][p];
  } else {
    for (std::size_t i = 0; i < data::kNumLabels; ++i) correct += r.confusion[i][i];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
  if (options.f1 == F1Mode::kGood) {
    r.f1 = f1_for(r.confusion, static_cast<std::size_t>(Label::kGood));
  } else {
    double s = 0.0;
    for (std::size_t i = 0; i < data::kNumLabels; ++i) s += f1_for(r.confusion, i);
    r.f1 = s / static_cast<double>(data::kNumLabels);
  }
  return r;
}

MetricsReport evaluate(std::span<const PredictionRecord> records, std::string model,
                       const ClassificationOptions& options) {
  MetricsReport rep;
  rep.model = std::move(model);
  rep.per_question = per_question_ap(records);
  rep.map = map_score(records);
  const auto cls = classification_metrics(records, options);
  rep.f1 = cls.f1;
  rep.accuracy = cls.accuracy;
  rep.confusion = cls.confusion;
  return rep;
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "json") return ReportFormat::kJson;
  if (name == "csv") return ReportFormat::kCsv;
  throw ConfigError("unknown report format '" + std::string(name) + "'");
}

std::string report_to_json(const MetricsReport& r) {
  ordered_json j;
  j["model"] = r.model;
  j["map"] = maybe_number(r.map);
  j["f1"] = r.f1;
  j["acc"] = r.accuracy;
  j["per_question_ap"] = ordered_json::array();
  for (const auto& q : r.per_question)
    j["per_question_ap"].push_back(ordered_json{{"qid", q.question_id}, {"ap", maybe_number(q.ap)}});
  j["confusion"] = r.confusion;
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("metrics report: ") + e.what());
  }
  try {
    MetricsReport r;
    r.model = j.at("model").get<std::string>();
    r.map = read_maybe_number(j.at("map"));
    r.f1 = j.at("f1").get<double>();
    r.accuracy = j.at("acc").get<double>();
    for (const auto& q : j.at("per_question_ap"))
      r.per_question.push_back({q.at("qid").get<std::string>(), read_maybe_number(q.at("ap"))});
    r.confusion = j.at("confusion").get<ConfusionMatrix>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics report: ") + e.what());
  }
}

std::string reports_to_csv(std::span<const MetricsReport> reports) {
  std::string out(kCsvHeader);
  out += "\n";
  for (const auto& r : reports) {
    out += r.model + "," + fixed4(r.map) + "," + fixed4(r.f1) + "," + fixed4(r.accuracy) + "\n";
  }
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void emit_report(const MetricsReport& report, const std::filesystem::path& path, ReportFormat format) {
  if (format == ReportFormat::kJson) {
    write_text(path, report_to_json(report));
  } else {
    write_text(path, reports_to_csv(std::span(&report, 1)));
  }
}

void emit_reports_csv(std::span<const MetricsReport> reports, const std::filesystem::path& path) {
  write_text(path, reports_to_csv(reports));
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open predictions file " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto j = ordered_json::parse(line);
      PredictionRecord r;
      r.question_id = j.at("qid").get<std::string>();
      r.answer_id = j.at("aid").get<std::string>();
      r.distribution.p = {j.at("p_good").get<double>(), j.at("p_potential").get<double>(),
                          j.at("p_bad").get<double>()};
      r.gold = data::parse_label(j.at("gold").get<std::string>());
      for (double v : r.distribution.p)
        if (!(v >= 0.0 && v <= 1.0)) throw DataError(where + ": probability outside [0, 1]");
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    } catch (const LabelError& e) {
      throw LabelError(where + ": " + e.what());
    }
  }
  return out;
}

void write_predictions(const std::filesystem::path& path, std::span<const PredictionRecord> records) {
  std::string text;
  for (const auto& r : records) {
    ordered_json j;
    j["qid"] = r.question_id;
    j["aid"] = r.answer_id;
    j["p_good"] = r.distribution.p[0];
    j["p_potential"] = r.distribution.p[1];
    j["p_bad"] = r.distribution.p[2];
    j["gold"] = std::string(data::label_name(r.gold));
    text += j.dump() + "\n";
  }
  write_text(path, text);
}

}  // namespace qan::metrics

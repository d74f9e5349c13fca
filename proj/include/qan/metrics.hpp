#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qan/corpus.hpp"

namespace qan::metrics {

using data::Label;

// Probabilities over {Good, Potential, Bad} in that order.
struct ClassDistribution {
  std::array<double, data::kNumLabels> p{};

  double operator[](Label l) const { return p[static_cast<std::size_t>(l)]; }
  // Ties resolve toward the earlier class (Good < Potential < Bad).
  Label argmax() const;

  friend bool operator==(const ClassDistribution&, const ClassDistribution&) = default;
};

struct PredictionRecord {
  std::string question_id;
  std::string answer_id;
  ClassDistribution distribution;
  Label gold = Label::kBad;

  double score() const { return distribution[Label::kGood]; }
};

// AP over a ranking of gold labels; relevant <=> Good. nullopt when the
// ranking holds no Good answer.
std::optional<double> average_precision(std::span<const Label> ranked);

// Descending score, ties by ascending answer id.
std::vector<const PredictionRecord*> rank_answers(std::vector<const PredictionRecord*> records);

struct QuestionAp {
  std::string question_id;
  std::optional<double> ap;

  friend bool operator==(const QuestionAp&, const QuestionAp&) = default;
};

// Per-question APs in order of first appearance of each question id.
std::vector<QuestionAp> per_question_ap(std::span<const PredictionRecord> records);
// Mean over questions with a defined AP; nullopt if there are none.
std::optional<double> map_score(std::span<const PredictionRecord> records);

enum class F1Mode { kGood, kMacro };

struct ClassificationOptions {
  F1Mode f1 = F1Mode::kGood;
  // Good vs. not-Good accuracy instead of three-class accuracy.
  bool binary = false;
};

using ConfusionMatrix = std::array<std::array<std::size_t, data::kNumLabels>, data::kNumLabels>;

struct ClassificationResult {
  double f1 = 0.0;
  double accuracy = 0.0;
  ConfusionMatrix confusion{};  // [gold][predicted]
};

// Throws DataError on empty input.
ClassificationResult classification_metrics(std::span<const PredictionRecord> records,
                                            const ClassificationOptions& options = {});

struct MetricsReport {
  std::string model;
  std::optional<double> map;
  double f1 = 0.0;
  double accuracy = 0.0;
  std::vector<QuestionAp> per_question;
  ConfusionMatrix confusion{};

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

MetricsReport evaluate(std::span<const PredictionRecord> records, std::string model,
                       const ClassificationOptions& options = {});

enum class ReportFormat { kJson, kCsv };
ReportFormat parse_report_format(std::string_view name);

// Undefined values render as "NA".
std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(std::string_view text);
inline constexpr std::string_view kCsvHeader = "model,map,f1,acc";
// Header line plus one row per report, four decimals per metric.
std::string reports_to_csv(std::span<const MetricsReport> reports);
void emit_report(const MetricsReport& report, const std::filesystem::path& path, ReportFormat format);
void emit_reports_csv(std::span<const MetricsReport> reports, const std::filesystem::path& path);

// JSONL {qid, aid, p_good, p_potential, p_bad, gold}.
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);
void write_predictions(const std::filesystem::path& path, std::span<const PredictionRecord> records);

}  // namespace qan::metrics

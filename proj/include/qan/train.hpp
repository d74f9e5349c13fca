#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qan/corpus.hpp"
#include "qan/encoder.hpp"
#include "qan/metrics.hpp"
#include "qan/model.hpp"

namespace qan::train {

struct HyperParams {
  double learning_rate = 0.001;
  double l2 = 1e-5;
  std::size_t batch_size = 100;
  double dropout = 0.3;
  data::LengthCaps caps;
  std::size_t attention_dim = 300;  // p
  std::size_t embed_dim = 64;       // d for the trainable lookup
  std::size_t hidden_dim = 64;      // d_h
  std::size_t epochs = 50;
  std::size_t patience = 5;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const HyperParams& a, const HyperParams& b);
};

enum class AblationVariant {
  kNoPretrainWordEmb,
  kNoPretrainCharEmb,
  kNoCrossAttention,
  kSimpleCombination,
  kNoAttnAndSimpleCombination,
  kMergedSubjectBody,
  kFull,
};

inline constexpr std::array<AblationVariant, 7> kAllVariants = {
    AblationVariant::kNoPretrainWordEmb,   AblationVariant::kNoPretrainCharEmb,
    AblationVariant::kNoCrossAttention,    AblationVariant::kSimpleCombination,
    AblationVariant::kNoAttnAndSimpleCombination, AblationVariant::kMergedSubjectBody,
    AblationVariant::kFull,
};

std::string_view variant_name(AblationVariant v);
AblationVariant parse_variant(std::string_view name);

// Trainable lookup widths standing in for the pretrained word and character
// embeddings that the no-pretrain variants drop.
inline constexpr std::size_t kWordLookupDim = 300;
inline constexpr std::size_t kCharLookupDim = 600;

// With a vector store the base encoder is precomputed (dim from the store);
// without one it is a trainable lookup of hp.embed_dim.
model::ModelConfig base_config(const HyperParams& hp, const encoder::VectorStore* store);
model::ModelConfig apply_variant(AblationVariant v, const HyperParams& hp,
                                 const encoder::VectorStore* store);
// The store a variant actually reads (nullptr for the no-pretrain ones).
const encoder::VectorStore* store_for(AblationVariant v, const encoder::VectorStore* store);

std::vector<model::Instance> make_instances(const std::vector<data::QAThread>& threads,
                                            const data::Vocabulary& vocab,
                                            const data::LengthCaps& caps);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> dev_map;
  double dev_f1 = 0.0;
  double dev_accuracy = 0.0;
  double wall_seconds = 0.0;  // not part of equality
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based

  std::size_t size() const { return epochs.size(); }
  const EpochRecord& best() const { return epochs.at(best_epoch - 1); }
  // Compares everything except wall time.
  friend bool operator==(const TrainHistory& a, const TrainHistory& b);
  // Deterministic JSON (no wall time).
  std::string to_json() const;
};

struct TrainResult {
  model::QanModel model;  // best-dev parameters
  TrainHistory history;
};

// Throws DataError on an empty split.
TrainResult train(const std::vector<model::Instance>& train_set,
                  const std::vector<model::Instance>& dev_set, const HyperParams& hp,
                  AblationVariant variant, std::size_t vocab_size,
                  const encoder::VectorStore* store = nullptr);

// Mean cross-entropy and accuracy over a set, eval mode.
struct SetScore {
  double loss = 0.0;
  double accuracy = 0.0;
};
SetScore score(const model::QanModel& m, const std::vector<model::Instance>& set);

std::vector<metrics::PredictionRecord> predict_all(const model::QanModel& m,
                                                   const std::vector<model::Instance>& set,
                                                   std::size_t threads = 1);

// ---------------------------------------------------------------------------
// Checkpoints: "QANC1", u64 LE manifest length, JSON manifest, then each
// parameter as little-endian f64 in manifest order.

struct Checkpoint {
  HyperParams hp;
  AblationVariant variant = AblationVariant::kFull;
  model::ModelConfig config;
  model::Layout layout;
  data::Vocabulary vocab;
  ParameterSet params;
};

void save_checkpoint(const std::filesystem::path& path, const model::QanModel& m,
                     const HyperParams& hp, AblationVariant variant, const data::Vocabulary& vocab);
// Throws CheckpointError on bad magic, truncation, trailing bytes or a
// malformed manifest.
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Binds the checkpoint to the configuration of `variant`; a mismatch in
// structure or shapes raises CheckpointError.
model::QanModel restore_model(Checkpoint& ckpt, AblationVariant variant,
                              const encoder::VectorStore* store);

// ---------------------------------------------------------------------------
// Synthetic topic data. Each thread gets a subject topic, a different body
// topic and a third unrelated one; Good answers are drawn from the subject
// topic, Potential from the body topic, Bad from the unrelated one. Train and
// test splits use disjoint word sets per topic, so only an encoder that knows
// which words belong together (the supplied vector store, built from noisy
// topic centroids) can generalise.

struct SyntheticOptions {
  std::size_t topics = 4;
  std::size_t words_per_topic = 24;  // split evenly between train and test
  std::size_t threads = 20;
  std::size_t answers_per_thread = 3;
  std::size_t subject_length = 4;
  std::size_t body_length = 8;
  std::size_t answer_length = 6;
  std::size_t vector_dim = 16;
  double vector_noise = 0.3;
  double distractors = 0.0;  // per-word chance an answer word is off-topic
  bool test_words = false;  // draw from the held-out half of each topic
  std::uint64_t seed = 0;
};

struct SyntheticCorpus {
  std::vector<data::QAThread> threads;
};

SyntheticCorpus make_synthetic(const SyntheticOptions& options);
// Vocabulary covering every word of every topic (train and test halves).
data::Vocabulary synthetic_vocabulary(const SyntheticOptions& options);
// One vector per vocabulary id, UNK included.
encoder::VectorStore synthetic_vectors(const SyntheticOptions& options,
                                       const data::Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Ablation sweep

struct AblationRow {
  AblationVariant variant;
  metrics::MetricsReport report;
  TrainHistory history;
};

std::vector<AblationRow> run_ablation(const std::vector<model::Instance>& train_set,
                                      const std::vector<model::Instance>& dev_set,
                                      const std::vector<model::Instance>& test_set,
                                      const HyperParams& hp, std::size_t vocab_size,
                                      const encoder::VectorStore* store);

}  // namespace qan::train

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qan/autodiff.hpp"
#include "qan/corpus.hpp"
#include "qan/encoder.hpp"
#include "qan/layers.hpp"
#include "qan/metrics.hpp"

namespace qan {
class Rng;
}

namespace qan::model {

using encoder::EncodedSequence;
using metrics::ClassDistribution;

// E = q·aᵀ/√p with -inf wherever either position is masked.
Var similarity_matrix(const EncodedSequence& q, const EncodedSequence& a);

struct AttentionPair {
  Var similarity;          // E, m×n
  Var question_to_answer;  // row-softmax of E, m×n
  Var answer_to_question;  // column-softmax of E, m×n
  Var attended_question;   // m×p, row i summarizes the answer for question word i
  Var attended_answer;     // n×p
};

// Throws EmptyInputError when every position of either side is masked.
AttentionPair cross_attend(const EncodedSequence& q, const EncodedSequence& a);

// [x, x̃, x − x̃, x ⊙ x̃] column-wise, L×4p.
Var enrich(Var x, Var x_tilde);

struct LayoutSegment {
  std::string name;
  std::size_t offset = 0;
  std::size_t dim = 0;

  friend bool operator==(const LayoutSegment&, const LayoutSegment&) = default;
};

// Which slice of r holds which pooled piece.
class Layout {
 public:
  void append(std::string name, std::size_t dim);
  const std::vector<LayoutSegment>& segments() const { return segments_; }
  std::size_t total() const { return total_; }
  const LayoutSegment* find(std::string_view name) const;
  // Distinct branch names in order ("subject", "body" or "question").
  std::vector<std::string> branches() const;

  friend bool operator==(const Layout&, const Layout&) = default;

 private:
  std::vector<LayoutSegment> segments_;
  std::size_t total_ = 0;
};

struct ModelConfig {
  encoder::EncoderConfig encoder;
  std::size_t hidden_dim = 64;  // d_h
  double dropout = 0.3;
  // Off: x̃ is the unmasked mean of the opposing sequence, broadcast.
  bool cross_attention = true;
  // Off: r is the row mean of each enriched sequence, no Bi-GRU.
  bool contextualize = true;
  // One "question" branch over subject followed by body.
  bool merged_question = false;

  void validate() const;
  Layout layout() const;

  friend bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.encoder.kind == b.encoder.kind && a.encoder.embed_dim == b.encoder.embed_dim &&
           a.encoder.projection_dim == b.encoder.projection_dim && a.hidden_dim == b.hidden_dim &&
           a.dropout == b.dropout && a.cross_attention == b.cross_attention &&
           a.contextualize == b.contextualize && a.merged_question == b.merged_question;
  }
};

// One (question, answer) pair; the model scores answers independently.
struct Instance {
  std::string question_id;
  std::string answer_id;
  data::IndexedSequence subject;
  data::IndexedSequence body;
  data::IndexedSequence answer;
  data::Label gold = data::Label::kBad;
};

std::vector<Instance> flatten(const std::vector<data::IndexedThread>& threads);

// A sequence with no real token becomes a single UNK so every branch has
// something to attend over.
data::IndexedSequence ensure_nonempty(const data::IndexedSequence& seq);

struct ForwardResult {
  Var probs;  // 1×3
  Var r;      // 1×layout().total()
  ClassDistribution distribution;
};

class QanModel {
 public:
  QanModel() = default;
  // Fresh parameters drawn from Rng(seed).
  static QanModel create(const ModelConfig& config, std::size_t vocab_size, std::uint64_t seed,
                         const encoder::VectorStore* store = nullptr);
  // Adopts existing parameters (e.g. from a checkpoint); throws LookupError
  // or DimensionError when they do not fit the configuration.
  static QanModel bind(const ModelConfig& config, ParameterSet params, std::size_t vocab_size,
                       const encoder::VectorStore* store = nullptr);

  QanModel(QanModel&&) = default;
  QanModel& operator=(QanModel&&) = default;

  ForwardResult forward(Graph& g, const Instance& instance, Mode mode, Rng& rng) const;
  // Eval-mode forward on a private graph. Safe to call concurrently.
  ClassDistribution predict(const Instance& instance) const;

  const ModelConfig& config() const { return config_; }
  const Layout& layout() const { return layout_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  std::size_t vocab_size() const { return vocab_size_; }

 private:
  struct Branch {
    std::string name;
    encoder::FieldEncoder question;
    BiGruParams gru;
  };

  void wire(const encoder::VectorStore* store);
  void check_shapes() const;

  ModelConfig config_;
  Layout layout_;
  ParameterSet params_;
  std::size_t vocab_size_ = 0;
  std::vector<Branch> branches_;
  encoder::FieldEncoder answer_;
  Parameter* w1_ = nullptr;
  Parameter* b1_ = nullptr;
  Parameter* w2_ = nullptr;
  Parameter* b2_ = nullptr;
};

// -log(max(p[gold], 1e-12)).
double loss(const ClassDistribution& dist, data::Label gold);
Var loss(Var probs, data::Label gold);

}  // namespace qan::model

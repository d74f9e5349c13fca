#include "qan/model.hpp"

#include <cmath>
#include <limits>

#include "qan/error.hpp"
#include "qan/random.hpp"

namespace qan::model {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool any_masked(const std::vector<unsigned char>& mask) {
  for (auto m : mask)
    if (!m) return true;
  return false;
}

void require_some_valid(const EncodedSequence& s, const char* side) {
  for (auto m : s.mask)
    if (m) return;
  throw EmptyInputError(std::string("cross attention: every ") + side + " position is masked");
}

}  // namespace

Var similarity_matrix(const EncodedSequence& q, const EncodedSequence& a) {
  if (q.dim() != a.dim()) {
    throw DimensionError("similarity: question width " + std::to_string(q.dim()) +
                         " vs answer width " + std::to_string(a.dim()));
  }
  if (q.mask.size() != q.values.rows() || a.mask.size() != a.values.rows()) {
    throw DimensionError("similarity: mask length does not match sequence length");
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim()));
  Var e = scale(matmul(q.values, transpose(a.values)), inv);
  if (!any_masked(q.mask) && !any_masked(a.mask)) return e;
  Matrix keep(q.length(), a.length());
  for (std::size_t i = 0; i < q.length(); ++i)
    for (std::size_t j = 0; j < a.length(); ++j) keep(i, j) = (q.mask[i] && a.mask[j]) ? 1.0 : 0.0;
  return mask_fill(e, keep, kNegInf);
}

AttentionPair cross_attend(const EncodedSequence& q, const EncodedSequence& a) {
  require_some_valid(a, "answer");
  require_some_valid(q, "question");
  AttentionPair out;
  out.similarity = similarity_matrix(q, a);
  out.question_to_answer = softmax_rows(out.similarity);
  Var by_answer = softmax_rows(transpose(out.similarity));  // n×m
  out.answer_to_question = transpose(by_answer);
  out.attended_question = matmul(out.question_to_answer, a.values);
  out.attended_answer = matmul(by_answer, q.values);
  return out;
}

Var enrich(Var x, Var x_tilde) {
  if (x.rows() != x_tilde.rows() || x.cols() != x_tilde.cols()) {
    throw DimensionError("enrich: " + x.value().shape_string() + " vs " +
                         x_tilde.value().shape_string());
  }
  const Var parts[] = {x, x_tilde, sub(x, x_tilde), mul(x, x_tilde)};
  return concat_cols(parts);
}

// ---------------------------------------------------------------------------
// Layout

void Layout::append(std::string name, std::size_t dim) {
  if (find(name) != nullptr) throw ConfigError("duplicate layout segment " + name);
  segments_.push_back({std::move(name), total_, dim});
  total_ += dim;
}

const LayoutSegment* Layout::find(std::string_view name) const {
  for (const auto& s : segments_)
    if (s.name == name) return &s;
  return nullptr;
}

std::vector<std::string> Layout::branches() const {
  std::vector<std::string> out;
  for (const auto& s : segments_) {
    std::string b = s.name.substr(0, s.name.find('.'));
    if (out.empty() || out.back() != b) out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// ModelConfig

namespace {

std::vector<std::string> branch_names(const ModelConfig& c) {
  if (c.merged_question) return {"question"};
  return {"subject", "body"};
}

encoder::Field branch_field(const std::string& name) {
  if (name == "subject") return encoder::Field::kSubject;
  if (name == "body") return encoder::Field::kBody;
  return encoder::Field::kQuestion;
}

}  // namespace

void ModelConfig::validate() const {
  encoder.validate();
  if (hidden_dim == 0) throw ConfigError("hidden dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

Layout ModelConfig::layout() const {
  Layout l;
  for (const auto& b : branch_names(*this)) {
    for (const char* side : {"question", "answer"}) {
      const std::string base = b + "." + side;
      if (contextualize) {
        l.append(base + ".max", 2 * hidden_dim);
        l.append(base + ".mean", 2 * hidden_dim);
      } else {
        l.append(base + ".mean", 4 * encoder.projection_dim);
      }
    }
  }
  return l;
}

// ---------------------------------------------------------------------------
// Instances

std::vector<Instance> flatten(const std::vector<data::IndexedThread>& threads) {
  std::vector<Instance> out;
  for (const auto& t : threads) {
    for (const auto& a : t.answers) {
      out.push_back({t.id, a.id, t.subject, t.body, a.tokens, a.gold});
    }
  }
  return out;
}

data::IndexedSequence ensure_nonempty(const data::IndexedSequence& seq) {
  for (auto m : seq.mask)
    if (m) return seq;
  return {{data::Vocabulary::kUnk}, {1}};
}

// ---------------------------------------------------------------------------
// QanModel

namespace {

std::string gru_prefix(const std::string& branch) { return "branch." + branch + ".gru"; }

void expect_shape(const Parameter& p, std::size_t rows, std::size_t cols) {
  if (p.value.rows() != rows || p.value.cols() != cols) {
    throw DimensionError("parameter " + p.name + " has shape " + p.value.shape_string() +
                         ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

void expect_gru(const GruParams& g, std::size_t in, std::size_t hidden) {
  for (auto* w : {g.w_z, g.w_r, g.w_h}) expect_shape(*w, in, hidden);
  for (auto* u : {g.u_z, g.u_r, g.u_h}) expect_shape(*u, hidden, hidden);
  for (auto* b : {g.b_z, g.b_r, g.b_h}) expect_shape(*b, 1, hidden);
}

}  // namespace

QanModel QanModel::create(const ModelConfig& config, std::size_t vocab_size, std::uint64_t seed,
                          const encoder::VectorStore* store) {
  config.validate();
  Rng rng(seed);
  ParameterSet params;
  const std::size_t p = config.encoder.projection_dim;
  const std::size_t h = config.hidden_dim;
  for (const auto& b : branch_names(config)) {
    encoder::FieldEncoder::create(params, branch_field(b), config.encoder, vocab_size, rng, store);
  }
  encoder::FieldEncoder::create(params, encoder::Field::kAnswer, config.encoder, vocab_size, rng,
                                store);
  if (config.contextualize) {
    for (const auto& b : branch_names(config)) BiGruParams::create(params, gru_prefix(b), 4 * p, h, rng);
  }
  const std::size_t r_dim = config.layout().total();
  params.add("mlp.W1", xavier_uniform(r_dim, 2 * h, rng));
  params.add("mlp.b1", Matrix(1, 2 * h));
  params.add("mlp.W2", xavier_uniform(2 * h, data::kNumLabels, rng));
  params.add("mlp.b2", Matrix(1, data::kNumLabels));
  return bind(config, std::move(params), vocab_size, store);
}

QanModel QanModel::bind(const ModelConfig& config, ParameterSet params, std::size_t vocab_size,
                        const encoder::VectorStore* store) {
  config.validate();
  QanModel m;
  m.config_ = config;
  m.layout_ = config.layout();
  m.params_ = std::move(params);
  m.vocab_size_ = vocab_size;
  m.wire(store);
  m.check_shapes();
  return m;
}

void QanModel::wire(const encoder::VectorStore* store) {
  branches_.clear();
  for (const auto& b : branch_names(config_)) {
    Branch br;
    br.name = b;
    br.question = encoder::FieldEncoder::bind(params_, branch_field(b), config_.encoder, store);
    if (config_.contextualize) br.gru = BiGruParams::bind(params_, gru_prefix(b));
    branches_.push_back(std::move(br));
  }
  answer_ = encoder::FieldEncoder::bind(params_, encoder::Field::kAnswer, config_.encoder, store);
  w1_ = &params_.at("mlp.W1");
  b1_ = &params_.at("mlp.b1");
  w2_ = &params_.at("mlp.W2");
  b2_ = &params_.at("mlp.b2");
}

void QanModel::check_shapes() const {
  const std::size_t d = config_.encoder.embed_dim;
  const std::size_t p = config_.encoder.projection_dim;
  const std::size_t h = config_.hidden_dim;
  const bool lookup = config_.encoder.kind == encoder::EncoderKind::kTrainableLookup;
  std::size_t expected = 0;
  auto check_encoder = [&](const encoder::FieldEncoder& e) {
    if (lookup) {
      expect_shape(*e.embedding(), vocab_size_, d);
      ++expected;
    }
    expect_shape(*e.projection(), d, p);
    ++expected;
  };
  for (const auto& b : branches_) {
    check_encoder(b.question);
    if (config_.contextualize) {
      expect_gru(b.gru.forward, 4 * p, h);
      expect_gru(b.gru.backward, 4 * p, h);
      expected += 18;
    }
  }
  check_encoder(answer_);
  expect_shape(*w1_, layout_.total(), 2 * h);
  expect_shape(*b1_, 1, 2 * h);
  expect_shape(*w2_, 2 * h, data::kNumLabels);
  expect_shape(*b2_, 1, data::kNumLabels);
  expected += 4;
  if (params_.size() != expected) {
    throw ConfigError("parameter set holds " + std::to_string(params_.size()) +
                      " tensors, configuration expects " + std::to_string(expected));
  }
}

ForwardResult QanModel::forward(Graph& g, const Instance& instance, Mode mode, Rng& rng) const {
  if (w1_ == nullptr) throw ConfigError("model not initialised");
  const auto answer_tokens = ensure_nonempty(instance.answer);
  const auto a = answer_.encode(g, answer_tokens);

  std::vector<Var> pooled;
  for (const auto& br : branches_) {
    data::IndexedSequence question_tokens;
    if (br.name == "subject") {
      question_tokens = ensure_nonempty(instance.subject);
    } else if (br.name == "body") {
      question_tokens = ensure_nonempty(instance.body);
    } else {
      question_tokens = instance.subject;
      question_tokens.ids.insert(question_tokens.ids.end(), instance.body.ids.begin(),
                                 instance.body.ids.end());
      question_tokens.mask.insert(question_tokens.mask.end(), instance.body.mask.begin(),
                                  instance.body.mask.end());
      question_tokens = ensure_nonempty(question_tokens);
    }
    const auto q = br.question.encode(g, question_tokens);

    Var q_tilde, a_tilde;
    if (config_.cross_attention) {
      const auto att = cross_attend(q, a);
      q_tilde = att.attended_question;
      a_tilde = att.attended_answer;
    } else {
      q_tilde = repeat_row(mean_rows(a.values, valid_rows(a.mask, a.length())), q.length());
      a_tilde = repeat_row(mean_rows(q.values, valid_rows(q.mask, q.length())), a.length());
    }
    const Var q_rich = enrich(q.values, q_tilde);
    const Var a_rich = enrich(a.values, a_tilde);

    if (config_.contextualize) {
      pooled.push_back(pool_max_mean(bigru(q_rich, q.mask, br.gru), q.mask));
      pooled.push_back(pool_max_mean(bigru(a_rich, a.mask, br.gru), a.mask));
    } else {
      pooled.push_back(mean_rows(q_rich, valid_rows(q.mask, q.length())));
      pooled.push_back(mean_rows(a_rich, valid_rows(a.mask, a.length())));
    }
  }

  ForwardResult out;
  out.r = concat_cols(pooled);
  Var hidden = dropout(out.r, config_.dropout, mode, rng);
  hidden = tanh(add_row(matmul(hidden, g.parameter(*w1_)), g.parameter(*b1_)));
  hidden = dropout(hidden, config_.dropout, mode, rng);
  const Var logits = add_row(matmul(hidden, g.parameter(*w2_)), g.parameter(*b2_));
  out.probs = softmax_rows(logits);
  for (std::size_t k = 0; k < data::kNumLabels; ++k) out.distribution.p[k] = out.probs.value()(0, k);
  return out;
}

ClassDistribution QanModel::predict(const Instance& instance) const {
  Graph g;
  Rng unused(0);
  return forward(g, instance, Mode::kEval, unused).distribution;
}

double loss(const ClassDistribution& dist, data::Label gold) {
  return -std::log(std::max(dist[gold], 1e-12));
}

Var loss(Var probs, data::Label gold) { return cross_entropy(probs, static_cast<std::size_t>(gold)); }

}  // namespace qan::model

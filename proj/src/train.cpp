#include "qan/train.hpp"

#include <chrono>
#include <thread>

#include "json.hpp"

#include "qan/adam.hpp"
#include "qan/error.hpp"
#include "qan/random.hpp"

namespace qan::train {

void HyperParams::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(l2 >= 0.0)) throw ConfigError("l2 must be non-negative");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (caps.subject == 0 || caps.body == 0 || caps.answer == 0)
    throw ConfigError("length caps must be positive");
  if (attention_dim == 0 || embed_dim == 0 || hidden_dim == 0)
    throw ConfigError("model dimensions must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (patience == 0) throw ConfigError("patience must be positive");
}

bool operator==(const HyperParams& a, const HyperParams& b) {
  return a.learning_rate == b.learning_rate && a.l2 == b.l2 && a.batch_size == b.batch_size &&
         a.dropout == b.dropout && a.caps.subject == b.caps.subject &&
         a.caps.body == b.caps.body && a.caps.answer == b.caps.answer &&
         a.attention_dim == b.attention_dim && a.embed_dim == b.embed_dim &&
         a.hidden_dim == b.hidden_dim && a.epochs == b.epochs && a.patience == b.patience &&
         a.seed == b.seed;
}

std::string_view variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::kNoPretrainWordEmb:
      return "no-pretrain-word-emb";
    case AblationVariant::kNoPretrainCharEmb:
      return "no-pretrain-char-emb";
    case AblationVariant::kNoCrossAttention:
      return "no-cross-attention";
    case AblationVariant::kSimpleCombination:
      return "simple-combination";
    case AblationVariant::kNoAttnAndSimpleCombination:
      return "no-attn-and-simple-combination";
    case AblationVariant::kMergedSubjectBody:
      return "merged-subject-body";
    case AblationVariant::kFull:
      return "full";
  }
  return "full";
}

AblationVariant parse_variant(std::string_view name) {
  for (auto v : kAllVariants)
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown ablation variant '" + std::string(name) + "'");
}

model::ModelConfig base_config(const HyperParams& hp, const encoder::VectorStore* store) {
  model::ModelConfig c;
  c.hidden_dim = hp.hidden_dim;
  c.dropout = hp.dropout;
  c.encoder.projection_dim = hp.attention_dim;
  if (store != nullptr) {
    c.encoder.kind = encoder::EncoderKind::kPrecomputed;
    c.encoder.embed_dim = store->dim();
  } else {
    c.encoder.kind = encoder::EncoderKind::kTrainableLookup;
    c.encoder.embed_dim = hp.embed_dim;
  }
  return c;
}

model::ModelConfig apply_variant(AblationVariant v, const HyperParams& hp,
                                 const encoder::VectorStore* store) {
  auto c = base_config(hp, store);
  switch (v) {
    case AblationVariant::kFull:
      break;
    case AblationVariant::kNoPretrainWordEmb:
      c.encoder.kind = encoder::EncoderKind::kTrainableLookup;
      c.encoder.embed_dim = kWordLookupDim;
      break;
    case AblationVariant::kNoPretrainCharEmb:
      c.encoder.kind = encoder::EncoderKind::kTrainableLookup;
      c.encoder.embed_dim = kCharLookupDim;
      break;
    case AblationVariant::kNoCrossAttention:
      c.cross_attention = false;
      break;
    case AblationVariant::kSimpleCombination:
      c.contextualize = false;
      break;
    case AblationVariant::kNoAttnAndSimpleCombination:
      c.cross_attention = false;
      c.contextualize = false;
      break;
    case AblationVariant::kMergedSubjectBody:
      c.merged_question = true;
      break;
  }
  return c;
}

const encoder::VectorStore* store_for(AblationVariant v, const encoder::VectorStore* store) {
  if (v == AblationVariant::kNoPretrainWordEmb || v == AblationVariant::kNoPretrainCharEmb)
    return nullptr;
  return store;
}

std::vector<model::Instance> make_instances(const std::vector<data::QAThread>& threads,
                                            const data::Vocabulary& vocab,
                                            const data::LengthCaps& caps) {
  std::vector<data::IndexedThread> indexed;
  indexed.reserve(threads.size());
  for (const auto& t : threads) indexed.push_back(data::truncate_and_index(t, vocab, caps));
  return model::flatten(indexed);
}

// ---------------------------------------------------------------------------
// History

bool operator==(const TrainHistory& a, const TrainHistory& b) {
  if (a.best_epoch != b.best_epoch || a.epochs.size() != b.epochs.size()) return false;
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    const auto& x = a.epochs[i];
    const auto& y = b.epochs[i];
    if (x.epoch != y.epoch || x.train_loss != y.train_loss || x.dev_map != y.dev_map ||
        x.dev_f1 != y.dev_f1 || x.dev_accuracy != y.dev_accuracy)
      return false;
  }
  return true;
}

std::string TrainHistory::to_json() const {
  nlohmann::ordered_json j;
  j["best_epoch"] = best_epoch;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : epochs) {
    nlohmann::ordered_json row;
    row["epoch"] = e.epoch;
    row["train_loss"] = e.train_loss;
    row["dev_map"] = e.dev_map ? nlohmann::ordered_json(*e.dev_map) : nlohmann::ordered_json("NA");
    row["dev_f1"] = e.dev_f1;
    row["dev_acc"] = e.dev_accuracy;
    j["epochs"].push_back(std::move(row));
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<metrics::PredictionRecord> predict_all(const model::QanModel& m,
                                                   const std::vector<model::Instance>& set,
                                                   std::size_t threads) {
  std::vector<metrics::PredictionRecord> out(set.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < set.size(); i += step) {
      const auto& inst = set[i];
      out[i] = {inst.question_id, inst.answer_id, m.predict(inst), inst.gold};
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, set.size()));
  if (threads == 1) {
    work(0, 1);
    return out;
  }
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  return out;
}

SetScore score(const model::QanModel& m, const std::vector<model::Instance>& set) {
  SetScore s;
  if (set.empty()) return s;
  std::size_t correct = 0;
  for (const auto& inst : set) {
    const auto d = m.predict(inst);
    s.loss += model::loss(d, inst.gold);
    if (d.argmax() == inst.gold) ++correct;
  }
  s.loss /= static_cast<double>(set.size());
  s.accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
  return s;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::vector<Matrix> snapshot(const ParameterSet& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) out.push_back(params[i].value);
  return out;
}

void restore(ParameterSet& params, std::vector<Matrix>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = std::move(values[i]);
}

}  // namespace

TrainResult train(const std::vector<model::Instance>& train_set,
                  const std::vector<model::Instance>& dev_set, const HyperParams& hp,
                  AblationVariant variant, std::size_t vocab_size,
                  const encoder::VectorStore* store) {
  hp.validate();
  if (train_set.empty()) throw DataError("training split is empty");
  if (dev_set.empty()) throw DataError("development split is empty");

  const auto* used_store = store_for(variant, store);
  const auto config = apply_variant(variant, hp, used_store);
  auto m = model::QanModel::create(config, vocab_size, mix_seed(hp.seed, 0), used_store);
  auto& params = m.params();

  AdamConfig adam_config;
  adam_config.learning_rate = hp.learning_rate;
  adam_config.weight_decay = hp.l2;
  Adam adam(adam_config);

  TrainResult result;
  std::vector<Matrix> best_values = snapshot(params);
  double best_accuracy = -1.0;
  std::size_t stale = 0;
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 1; epoch <= hp.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng order_rng(mix_seed(hp.seed, epoch));
    shuffle(order.begin(), order.end(), order_rng);
    Rng dropout_rng(mix_seed(mix_seed(hp.seed, epoch), 1));

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += hp.batch_size) {
      const std::size_t end = std::min(order.size(), begin + hp.batch_size);
      params.zero_grad();
      for (std::size_t k = begin; k < end; ++k) {
        const auto& inst = train_set[order[k]];
        Graph g;
        const auto fwd = m.forward(g, inst, Mode::kTrain, dropout_rng);
        const Var l = model::loss(fwd.probs, inst.gold);
        loss_sum += l.value()(0, 0);
        g.backward(l);
      }
      params.scale_grad(1.0 / static_cast<double>(end - begin));
      adam.step(params);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    const auto preds = predict_all(m, dev_set);
    const auto report = metrics::evaluate(preds, std::string(variant_name(variant)));
    rec.dev_map = report.map;
    rec.dev_f1 = report.f1;
    rec.dev_accuracy = report.accuracy;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.epochs.push_back(rec);

    if (rec.dev_accuracy > best_accuracy) {
      best_accuracy = rec.dev_accuracy;
      best_values = snapshot(params);
      result.history.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= hp.patience) {
      break;
    }
  }

  restore(params, best_values);
  result.model = std::move(m);
  return result;
}

// ---------------------------------------------------------------------------
// Ablation sweep

std::vector<AblationRow> run_ablation(const std::vector<model::Instance>& train_set,
                                      const std::vector<model::Instance>& dev_set,
                                      const std::vector<model::Instance>& test_set,
                                      const HyperParams& hp, std::size_t vocab_size,
                                      const encoder::VectorStore* store) {
  if (test_set.empty()) throw DataError("test split is empty");
  std::vector<AblationRow> rows;
  for (auto v : kAllVariants) {
    auto trained = train(train_set, dev_set, hp, v, vocab_size, store);
    const auto preds = predict_all(trained.model, test_set);
    rows.push_back({v, metrics::evaluate(preds, std::string(variant_name(v))),
                    std::move(trained.history)});
  }
  return rows;
}

}  // namespace qan::train

#include <string>
#include <vector>

#include "qan/error.hpp"
#include "qan/random.hpp"
#include "qan/train.hpp"

namespace qan::train {

namespace {

std::string word(std::size_t topic, std::size_t index) {
  return "t" + std::to_string(topic) + "w" + std::to_string(index);
}

void check(const SyntheticOptions& o) {
  if (o.topics < 3) throw ConfigError("synthetic data needs at least three topics");
  if (o.words_per_topic < 2 || o.words_per_topic % 2 != 0)
    throw ConfigError("words per topic must be even and at least 2");
  if (o.threads == 0 || o.answers_per_thread == 0) throw ConfigError("empty synthetic corpus");
  if (o.vector_dim == 0) throw ConfigError("vector dim must be positive");
  if (!(o.distractors >= 0.0 && o.distractors < 1.0))
    throw ConfigError("distractor rate must lie in [0, 1)");
}

// Words of `topic` from the requested half.
std::string draw(std::size_t topic, const SyntheticOptions& o, Rng& rng) {
  const std::size_t half = o.words_per_topic / 2;
  const std::size_t base = o.test_words ? half : 0;
  return word(topic, base + rng.below(half));
}

// Each word comes from `topic`, except that with probability `distractors`
// it comes from a uniformly drawn topic instead.
std::string sentence(std::size_t length, std::size_t topic, double distractors,
                     const SyntheticOptions& o, Rng& rng) {
  std::string s;
  for (std::size_t i = 0; i < length; ++i) {
    if (!s.empty()) s += ' ';
    const std::size_t t = rng.uniform() < distractors ? rng.below(o.topics) : topic;
    s += draw(t, o, rng);
  }
  return s;
}

}  // namespace

SyntheticCorpus make_synthetic(const SyntheticOptions& o) {
  check(o);
  Rng rng(mix_seed(o.seed, o.test_words ? 2 : 1));
  SyntheticCorpus corpus;
  const std::string prefix = o.test_words ? "S" : "Q";
  for (std::size_t t = 0; t < o.threads; ++t) {
    // Three distinct topics: subject, body, and an unrelated one.
    std::vector<std::size_t> topics(o.topics);
    for (std::size_t i = 0; i < topics.size(); ++i) topics[i] = i;
    shuffle(topics.begin(), topics.end(), rng);
    const std::size_t subject_topic = topics[0];
    const std::size_t body_topic = topics[1];
    const std::size_t other_topic = topics[2];

    const std::string id = prefix + std::to_string(t);
    std::vector<std::pair<std::string, std::string>> answers;
    std::vector<data::Label> golds;
    for (std::size_t a = 0; a < o.answers_per_thread; ++a) {
      // Guarantee one Good per thread so every question has a defined AP.
      const auto label = a == 0 ? data::Label::kGood : static_cast<data::Label>(rng.below(3));
      const std::size_t topic = label == data::Label::kGood        ? subject_topic
                                : label == data::Label::kPotential ? body_topic
                                                                   : other_topic;
      answers.emplace_back(id + "_C" + std::to_string(a + 1), sentence(o.answer_length, topic, o.distractors, o, rng));
      golds.push_back(label);
    }
    // Shuffle answer order so the Good one is not always first.
    std::vector<std::size_t> perm(answers.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::pair<std::string, std::string>> shuffled;
    std::vector<data::Label> shuffled_golds;
    for (auto i : perm) {
      shuffled.push_back(answers[i]);
      shuffled_golds.push_back(golds[i]);
    }
    corpus.threads.push_back(data::make_thread(id, sentence(o.subject_length, subject_topic, 0.0, o, rng),
                                               sentence(o.body_length, body_topic, 0.0, o, rng),
                                               std::move(shuffled), shuffled_golds));
  }
  return corpus;
}

data::Vocabulary synthetic_vocabulary(const SyntheticOptions& o) {
  check(o);
  data::Vocabulary v;
  for (std::size_t t = 0; t < o.topics; ++t)
    for (std::size_t w = 0; w < o.words_per_topic; ++w) v.add(word(t, w));
  return v;
}

encoder::VectorStore synthetic_vectors(const SyntheticOptions& o, const data::Vocabulary& vocab) {
  check(o);
  Rng rng(mix_seed(o.seed, 3));
  std::vector<std::vector<float>> centroids(o.topics, std::vector<float>(o.vector_dim));
  for (auto& c : centroids)
    for (auto& x : c) x = static_cast<float>(rng.uniform(-1.0, 1.0));

  encoder::VectorStore store(static_cast<std::uint32_t>(o.vector_dim));
  std::vector<float> unk(o.vector_dim);
  for (auto& x : unk) x = static_cast<float>(rng.uniform(-o.vector_noise, o.vector_noise));
  store.insert(static_cast<std::uint64_t>(data::Vocabulary::kUnk), unk);
  for (std::size_t t = 0; t < o.topics; ++t) {
    for (std::size_t w = 0; w < o.words_per_topic; ++w) {
      const auto id = vocab.index(word(t, w));
      if (id == data::Vocabulary::kUnk) continue;
      std::vector<float> v(centroids[t]);
      for (auto& x : v) x += static_cast<float>(rng.uniform(-o.vector_noise, o.vector_noise));
      store.insert(static_cast<std::uint64_t>(id), std::move(v));
    }
  }
  return store;
}

}  // namespace qan::train

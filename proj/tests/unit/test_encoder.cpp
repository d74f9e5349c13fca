#include "doctest.h"
#include "support.hpp"

#include "qan/encoder.hpp"
#include "qan/error.hpp"

using namespace qan;
using namespace qan::encoder;
using qan::test::TempDir;

namespace {

data::IndexedSequence seq(std::vector<std::int64_t> ids, std::vector<unsigned char> mask = {}) {
  data::IndexedSequence s;
  s.ids = std::move(ids);
  s.mask = mask.empty() ? std::vector<unsigned char>(s.ids.size(), 1) : std::move(mask);
  return s;
}

EncoderConfig lookup(std::size_t d, std::size_t p) {
  EncoderConfig c;
  c.kind = EncoderKind::kTrainableLookup;
  c.embed_dim = d;
  c.projection_dim = p;
  return c;
}

VectorStore small_store(std::uint32_t dim, std::uint64_t n) {
  VectorStore s(dim);
  Rng rng(3);
  for (std::uint64_t id = 0; id < n; ++id) {
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    s.insert(id, v);
  }
  return s;
}

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("lookup encoder preserves length, is deterministic and zeroes PAD rows") {
  ParameterSet ps;
  Rng rng(1);
  auto enc = FieldEncoder::create(ps, Field::kAnswer, lookup(6, 5), 10, rng, nullptr);
  CHECK(ps.find("encoder.answer.embedding") != nullptr);
  CHECK(ps.find("encoder.answer.projection") != nullptr);
  Graph g;
  const auto input = seq({4, 7, 0, 0}, {1, 1, 0, 0});
  auto a = enc.encode(g, input);
  auto b = enc.encode(g, input);
  CHECK(a.length() == 4);
  CHECK(a.dim() == 5);
  CHECK(a.values.value() == b.values.value());
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(a.values.value()(2, j) == 0.0);
    CHECK(a.values.value()(3, j) == 0.0);
  }
  CHECK(a.values.value()(0, 0) != 0.0);
  Graph g2;
  CHECK_THROWS_AS(enc.encode(g2, seq({99})), LookupError);
}

TEST_CASE("precomputed store round-trips through its file format") {
  TempDir dir("enc");
  const auto store = small_store(7, 12);
  save_precomputed(dir / "v.qanv", store);
  CHECK(load_precomputed(dir / "v.qanv") == store);
  // magic + u32 dim + u64 count + 12 × (u64 + 7 × f32)
  CHECK(std::filesystem::file_size(dir / "v.qanv") == 5 + 4 + 8 + 12 * (8 + 7 * 4));

  std::string bytes = qan::test::slurp(dir / "v.qanv");
  qan::test::spit(dir / "short.qanv", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_precomputed(dir / "short.qanv"), FormatError);
  qan::test::spit(dir / "long.qanv", bytes + "x");
  CHECK_THROWS_AS(load_precomputed(dir / "long.qanv"), FormatError);
  bytes[0] = 'X';
  qan::test::spit(dir / "magic.qanv", bytes);
  CHECK_THROWS_AS(load_precomputed(dir / "magic.qanv"), FormatError);
  CHECK_THROWS_AS(load_precomputed(dir / "absent.qanv"), IoError);
}

TEST_CASE("precomputed encoder checks the store") {
  ParameterSet ps;
  Rng rng(2);
  EncoderConfig cfg;
  cfg.kind = EncoderKind::kPrecomputed;
  cfg.embed_dim = 300;
  cfg.projection_dim = 8;
  const auto wide = small_store(768, 2);
  CHECK_THROWS_AS(FieldEncoder::create(ps, Field::kSubject, cfg, 10, rng, &wide), FormatError);
  CHECK_THROWS_AS(FieldEncoder::create(ps, Field::kSubject, cfg, 10, rng, nullptr), ConfigError);

  cfg.embed_dim = 4;
  const VectorStore empty(4);
  auto enc = FieldEncoder::create(ps, Field::kBody, cfg, 10, rng, &empty);
  CHECK(enc.embedding() == nullptr);
  Graph g;
  CHECK_THROWS_AS(enc.encode(g, seq({3})), LookupError);
}

TEST_CASE("precomputed encoder replays the stored vectors through the projection") {
  ParameterSet ps;
  Rng rng(4);
  EncoderConfig cfg;
  cfg.kind = EncoderKind::kPrecomputed;
  cfg.embed_dim = 3;
  cfg.projection_dim = 2;
  VectorStore store(3);
  store.insert(5, {1.0f, 0.5f, -2.0f});
  auto enc = FieldEncoder::create(ps, Field::kAnswer, cfg, 10, rng, &store);
  enc.projection()->value = Matrix::from_rows({{1, 0}, {0, 1}, {1, 1}});
  Graph g;
  auto out = enc.encode(g, seq({5, 0}, {1, 0}));
  CHECK(out.values.value() == Matrix::from_rows({{-1.0, -1.5}, {0.0, 0.0}}));
}

TEST_CASE("field encoders own disjoint parameters") {
  ParameterSet ps;
  Rng rng(6);
  const auto cfg = lookup(4, 3);
  auto subject = FieldEncoder::create(ps, Field::kSubject, cfg, 8, rng, nullptr);
  auto body = FieldEncoder::create(ps, Field::kBody, cfg, 8, rng, nullptr);
  auto answer = FieldEncoder::create(ps, Field::kAnswer, cfg, 8, rng, nullptr);
  CHECK(subject.embedding() != body.embedding());
  CHECK(subject.projection() != answer.projection());
  CHECK(ps.size() == 6);

  const auto input = seq({2, 3, 4});
  Graph g0;
  const Matrix body_before = body.encode(g0, input).values.value();
  const Matrix answer_before = answer.encode(g0, input).values.value();
  const Matrix subject_before = subject.encode(g0, input).values.value();
  subject.embedding()->value.fill(0.7);
  subject.projection()->value.fill(-0.2);
  Graph g1;
  CHECK(body.encode(g1, input).values.value() == body_before);
  CHECK(answer.encode(g1, input).values.value() == answer_before);
  CHECK(subject.encode(g1, input).values.value() != subject_before);
}

TEST_CASE("output scales linearly with the frozen lookup") {
  ParameterSet ps;
  Rng rng(9);
  auto enc = FieldEncoder::create(ps, Field::kAnswer, lookup(5, 4), 6, rng, nullptr);
  const auto input = seq({2, 5, 3});
  Graph g;
  const Matrix base = enc.encode(g, input).values.value();
  for (auto& v : enc.embedding()->value.values()) v *= -2.5;
  const Matrix scaled = enc.encode(g, input).values.value();
  for (std::size_t k = 0; k < base.size(); ++k) CHECK(scaled[k] == doctest::Approx(-2.5 * base[k]).epsilon(1e-12));
}

TEST_CASE("masked rows are exactly zero on random inputs") {
  ParameterSet ps;
  Rng rng(12);
  auto enc = FieldEncoder::create(ps, Field::kSubject, lookup(4, 3), 20, rng, nullptr);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t L = 1 + rng.below(8);
    data::IndexedSequence s;
    for (std::size_t i = 0; i < L; ++i) {
      const bool real = rng.below(3) != 0;
      s.ids.push_back(real ? static_cast<std::int64_t>(rng.below(20)) : 0);
      s.mask.push_back(real ? 1 : 0);
    }
    Graph g;
    const auto out = enc.encode(g, s);
    CHECK(out.mask == s.mask);
    for (std::size_t i = 0; i < L; ++i)
      if (!s.mask[i])
        for (double v : out.values.value().row(i)) CHECK(v == 0.0);
  }
}

TEST_CASE("configuration validation") {
  CHECK_THROWS_AS(lookup(0, 3).validate(), ConfigError);
  CHECK_THROWS_AS(lookup(3, 0).validate(), ConfigError);
  CHECK(parse_kind(kind_name(EncoderKind::kPrecomputed)) == EncoderKind::kPrecomputed);
  CHECK_THROWS_AS(parse_kind("bert"), ConfigError);
  VectorStore s(2);
  s.insert(1, {1.0f, 2.0f});
  CHECK_THROWS_AS(s.insert(1, {1.0f, 2.0f}), FormatError);
  CHECK_THROWS_AS(s.insert(2, {1.0f}), FormatError);
}

}  // TEST_SUITE

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qan/autodiff.hpp"
#include "qan/corpus.hpp"

namespace qan {
class Rng;
}

namespace qan::encoder {

enum class EncoderKind { kTrainableLookup, kPrecomputed };

std::string_view kind_name(EncoderKind kind);
EncoderKind parse_kind(std::string_view name);

// Which input a per-field encoder serves. kQuestion is the merged
// subject+body sequence used when the two are not kept apart.
enum class Field { kSubject, kBody, kAnswer, kQuestion };

std::string_view field_name(Field field);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::kTrainableLookup;
  std::size_t embed_dim = 64;         // d
  std::size_t projection_dim = 300;   // p, the cross-attention width

  void validate() const;
};

// Fixed vectors keyed by token id, e.g. contextual embeddings exported
// offline.
class VectorStore {
 public:
  VectorStore() = default;
  explicit VectorStore(std::uint32_t dim) : dim_(dim) {}

  std::uint32_t dim() const { return dim_; }
  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }

  // Throws FormatError on a duplicate id or wrong vector length.
  void insert(std::uint64_t id, std::vector<float> vec);
  const std::vector<float>* find(std::uint64_t id) const;
  // Ids in insertion order.
  const std::vector<std::uint64_t>& ids() const { return order_; }

  friend bool operator==(const VectorStore& a, const VectorStore& b) {
    return a.dim_ == b.dim_ && a.order_ == b.order_ && a.vectors_ == b.vectors_;
  }

 private:
  std::uint32_t dim_ = 0;
  std::vector<std::uint64_t> order_;
  std::unordered_map<std::uint64_t, std::vector<float>> vectors_;
};

// Little-endian: "QANV1", u32 dim, u64 count, count × (u64 id, dim × f32).
VectorStore load_precomputed(const std::filesystem::path& path);
void save_precomputed(const std::filesystem::path& path, const VectorStore& store);

struct EncodedSequence {
  Var values;                        // L×p
  std::vector<unsigned char> mask;   // L entries, 1 = real token

  std::size_t length() const { return mask.size(); }
  std::size_t dim() const { return values.cols(); }
};

// Embedding (trainable table or fixed store) followed by a bias-free
// trainable projection to p. Masked positions produce zero rows.
class FieldEncoder {
 public:
  FieldEncoder() = default;
  // Registers "encoder.<field>.embedding" (lookup kind only) and
  // "encoder.<field>.projection". A precomputed encoder requires `store`
  // with store->dim() == config.embed_dim.
  static FieldEncoder create(ParameterSet& params, Field field, const EncoderConfig& config,
                             std::size_t vocab_size, Rng& rng, const VectorStore* store);
  static FieldEncoder bind(ParameterSet& params, Field field, const EncoderConfig& config,
                           const VectorStore* store);

  EncodedSequence encode(Graph& g, const data::IndexedSequence& tokens) const;

  Field field() const { return field_; }
  Parameter* embedding() const { return embedding_; }
  Parameter* projection() const { return projection_; }

 private:
  Field field_ = Field::kAnswer;
  EncoderConfig config_;
  Parameter* embedding_ = nullptr;
  Parameter* projection_ = nullptr;
  const VectorStore* store_ = nullptr;
};

}  // namespace qan::encoder

#include "qan/encoder.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "qan/error.hpp"
#include "qan/layers.hpp"
#include "qan/random.hpp"

namespace qan::encoder {

static_assert(std::endian::native == std::endian::little,
              "vector store I/O assumes a little-endian host");

namespace {

constexpr char kMagic[5] = {'Q', 'A', 'N', 'V', '1'};

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw FormatError("vector store truncated while reading " + what);
  }
  return v;
}

}  // namespace

std::string_view kind_name(EncoderKind kind) {
  return kind == EncoderKind::kPrecomputed ? "precomputed-file" : "trainable-lookup";
}

EncoderKind parse_kind(std::string_view name) {
  if (name == "trainable-lookup") return EncoderKind::kTrainableLookup;
  if (name == "precomputed-file") return EncoderKind::kPrecomputed;
  throw ConfigError("unknown encoder kind '" + std::string(name) + "'");
}

std::string_view field_name(Field field) {
  switch (field) {
    case Field::kSubject:
      return "subject";
    case Field::kBody:
      return "body";
    case Field::kAnswer:
      return "answer";
    case Field::kQuestion:
      return "question";
  }
  return "answer";
}

void EncoderConfig::validate() const {
  if (embed_dim == 0) throw ConfigError("encoder embedding dim must be positive");
  if (projection_dim == 0) throw ConfigError("encoder projection dim must be positive");
}

// ---------------------------------------------------------------------------
// VectorStore

void VectorStore::insert(std::uint64_t id, std::vector<float> vec) {
  if (vec.size() != dim_) {
    throw FormatError("vector for id " + std::to_string(id) + " has length " +
                      std::to_string(vec.size()) + ", store dim is " + std::to_string(dim_));
  }
  if (!vectors_.emplace(id, std::move(vec)).second) {
    throw FormatError("duplicate vector id " + std::to_string(id));
  }
  order_.push_back(id);
}

const std::vector<float>* VectorStore::find(std::uint64_t id) const {
  auto it = vectors_.find(id);
  return it == vectors_.end() ? nullptr : &it->second;
}

VectorStore load_precomputed(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vector store " + path.string());
  char magic[5];
  if (!in.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0) {
    throw FormatError(path.string() + ": bad vector store magic (expected QANV1)");
  }
  const auto dim = read_pod<std::uint32_t>(in, "dim");
  const auto count = read_pod<std::uint64_t>(in, "count");
  if (dim == 0) throw FormatError(path.string() + ": vector store dim is zero");
  VectorStore store(dim);
  std::vector<float> buf(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto id = read_pod<std::uint64_t>(in, "entry id");
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim * sizeof(float)))) {
      throw FormatError(path.string() + ": truncated vector for id " + std::to_string(id));
    }
    store.insert(id, buf);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after " + std::to_string(count) + " entries");
  }
  return store;
}

void save_precomputed(const std::filesystem::path& path, const VectorStore& store) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write vector store " + path.string());
  out.write(kMagic, 5);
  write_pod<std::uint32_t>(out, store.dim());
  write_pod<std::uint64_t>(out, store.size());
  for (auto id : store.ids()) {
    write_pod<std::uint64_t>(out, id);
    const auto* v = store.find(id);
    out.write(reinterpret_cast<const char*>(v->data()),
              static_cast<std::streamsize>(v->size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// FieldEncoder

namespace {

std::string prefix_for(Field field) { return "encoder." + std::string(field_name(field)); }

void check_store(const EncoderConfig& config, const VectorStore* store) {
  if (config.kind != EncoderKind::kPrecomputed) return;
  if (store == nullptr) throw ConfigError("precomputed encoder requires a vector store");
  if (store->dim() != config.embed_dim) {
    throw FormatError("vector store dim " + std::to_string(store->dim()) +
                      " does not match encoder embedding dim " + std::to_string(config.embed_dim));
  }
}

}  // namespace

FieldEncoder FieldEncoder::create(ParameterSet& params, Field field, const EncoderConfig& config,
                                  std::size_t vocab_size, Rng& rng, const VectorStore* store) {
  config.validate();
  check_store(config, store);
  FieldEncoder e;
  e.field_ = field;
  e.config_ = config;
  const std::string prefix = prefix_for(field);
  if (config.kind == EncoderKind::kTrainableLookup) {
    Matrix table(vocab_size, config.embed_dim);
    for (double& v : table.values()) v = rng.uniform(-0.1, 0.1);
    e.embedding_ = &params.add(prefix + ".embedding", std::move(table));
  } else {
    e.store_ = store;
  }
  e.projection_ = &params.add(prefix + ".projection",
                              xavier_uniform(config.embed_dim, config.projection_dim, rng));
  return e;
}

FieldEncoder FieldEncoder::bind(ParameterSet& params, Field field, const EncoderConfig& config,
                                const VectorStore* store) {
  config.validate();
  check_store(config, store);
  FieldEncoder e;
  e.field_ = field;
  e.config_ = config;
  const std::string prefix = prefix_for(field);
  if (config.kind == EncoderKind::kTrainableLookup) {
    e.embedding_ = &params.at(prefix + ".embedding");
  } else {
    e.store_ = store;
  }
  e.projection_ = &params.at(prefix + ".projection");
  return e;
}

EncodedSequence FieldEncoder::encode(Graph& g, const data::IndexedSequence& tokens) const {
  if (projection_ == nullptr) throw ConfigError("encoder not initialised");
  const std::size_t length = tokens.ids.size();
  EncodedSequence out;
  out.mask = tokens.mask;
  if (out.mask.size() != length) throw DimensionError("token mask length does not match ids");
  const std::size_t p = config_.projection_dim;
  if (length == 0) {
    out.values = g.constant(Matrix(0, p));
    return out;
  }

  Var embedded;
  if (config_.kind == EncoderKind::kTrainableLookup) {
    std::vector<std::int64_t> ids(tokens.ids);
    for (std::size_t i = 0; i < length; ++i)
      if (!out.mask[i]) ids[i] = data::Vocabulary::kPad;
    embedded = gather(g, *embedding_, ids);
  } else {
    Matrix m(length, config_.embed_dim);
    for (std::size_t i = 0; i < length; ++i) {
      if (!out.mask[i]) continue;
      const auto id = tokens.ids[i];
      const auto* v = id < 0 ? nullptr : store_->find(static_cast<std::uint64_t>(id));
      if (v == nullptr) {
        throw LookupError("no precomputed vector for token id " + std::to_string(id));
      }
      for (std::size_t j = 0; j < v->size(); ++j) m(i, j) = (*v)[j];
    }
    embedded = g.constant(std::move(m));
  }

  Var projected = matmul(embedded, g.parameter(*projection_));
  bool any_masked = false;
  for (auto m : out.mask) any_masked |= (m == 0);
  if (any_masked) {
    Matrix keep(length, p);
    for (std::size_t i = 0; i < length; ++i)
      if (out.mask[i])
        for (std::size_t j = 0; j < p; ++j) keep(i, j) = 1.0;
    projected = mask_fill(projected, keep, 0.0);
  }
  out.values = projected;
  return out;
}

}  // namespace qan::encoder

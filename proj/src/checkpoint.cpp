#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "qan/error.hpp"
#include "qan/train.hpp"

namespace qan::train {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr char kMagic[5] = {'Q', 'A', 'N', 'C', '1'};
constexpr int kFormatVersion = 1;

ordered_json hp_to_json(const HyperParams& hp) {
  ordered_json j;
  j["learning_rate"] = hp.learning_rate;
  j["l2"] = hp.l2;
  j["batch_size"] = hp.batch_size;
  j["dropout"] = hp.dropout;
  j["max_subject"] = hp.caps.subject;
  j["max_body"] = hp.caps.body;
  j["max_answer"] = hp.caps.answer;
  j["attention_dim"] = hp.attention_dim;
  j["embed_dim"] = hp.embed_dim;
  j["hidden_dim"] = hp.hidden_dim;
  j["epochs"] = hp.epochs;
  j["patience"] = hp.patience;
  j["seed"] = hp.seed;
  return j;
}

HyperParams hp_from_json(const ordered_json& j) {
  HyperParams hp;
  hp.learning_rate = j.at("learning_rate").get<double>();
  hp.l2 = j.at("l2").get<double>();
  hp.batch_size = j.at("batch_size").get<std::size_t>();
  hp.dropout = j.at("dropout").get<double>();
  hp.caps.subject = j.at("max_subject").get<std::size_t>();
  hp.caps.body = j.at("max_body").get<std::size_t>();
  hp.caps.answer = j.at("max_answer").get<std::size_t>();
  hp.attention_dim = j.at("attention_dim").get<std::size_t>();
  hp.embed_dim = j.at("embed_dim").get<std::size_t>();
  hp.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  hp.epochs = j.at("epochs").get<std::size_t>();
  hp.patience = j.at("patience").get<std::size_t>();
  hp.seed = j.at("seed").get<std::uint64_t>();
  return hp;
}

ordered_json config_to_json(const model::ModelConfig& c) {
  ordered_json j;
  j["encoder_kind"] = std::string(encoder::kind_name(c.encoder.kind));
  j["embed_dim"] = c.encoder.embed_dim;
  j["projection_dim"] = c.encoder.projection_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["dropout"] = c.dropout;
  j["cross_attention"] = c.cross_attention;
  j["contextualize"] = c.contextualize;
  j["merged_question"] = c.merged_question;
  return j;
}

model::ModelConfig config_from_json(const ordered_json& j) {
  model::ModelConfig c;
  c.encoder.kind = encoder::parse_kind(j.at("encoder_kind").get<std::string>());
  c.encoder.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.encoder.projection_dim = j.at("projection_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.cross_attention = j.at("cross_attention").get<bool>();
  c.contextualize = j.at("contextualize").get<bool>();
  c.merged_question = j.at("merged_question").get<bool>();
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const model::QanModel& m,
                     const HyperParams& hp, AblationVariant variant, const data::Vocabulary& vocab) {
  ordered_json manifest;
  manifest["version"] = kFormatVersion;
  manifest["variant"] = std::string(variant_name(variant));
  manifest["hp"] = hp_to_json(hp);
  manifest["model"] = config_to_json(m.config());
  manifest["layout"] = ordered_json::array();
  for (const auto& s : m.layout().segments())
    manifest["layout"].push_back(ordered_json{{"name", s.name}, {"offset", s.offset}, {"dim", s.dim}});
  manifest["vocab"] = vocab.tokens();
  manifest["params"] = ordered_json::array();
  const auto& params = m.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    manifest["params"].push_back(ordered_json{{"name", params[i].name},
                                              {"rows", params[i].value.rows()},
                                              {"cols", params[i].value.cols()}});
  }
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, 5);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto values = params[i].value.values();
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string where = path.string() + ": ";
  char magic[5];
  if (!in.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0)
    throw CheckpointError(where + "bad magic (expected QANC1)");
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len))
    throw CheckpointError(where + "truncated manifest length");
  const auto file_size = std::filesystem::file_size(path);
  if (len > file_size) throw CheckpointError(where + "manifest length exceeds file size");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len)))
    throw CheckpointError(where + "truncated manifest");

  Checkpoint ck;
  std::vector<std::tuple<std::string, std::size_t, std::size_t>> shapes;
  try {
    const auto manifest = ordered_json::parse(text);
    const int version = manifest.at("version").get<int>();
    if (version != kFormatVersion)
      throw CheckpointError(where + "unsupported checkpoint version " + std::to_string(version));
    ck.variant = parse_variant(manifest.at("variant").get<std::string>());
    ck.hp = hp_from_json(manifest.at("hp"));
    ck.config = config_from_json(manifest.at("model"));
    for (const auto& s : manifest.at("layout"))
      ck.layout.append(s.at("name").get<std::string>(), s.at("dim").get<std::size_t>());
    ck.vocab = data::Vocabulary::from_tokens(manifest.at("vocab").get<std::vector<std::string>>());
    for (const auto& p : manifest.at("params"))
      shapes.emplace_back(p.at("name").get<std::string>(), p.at("rows").get<std::size_t>(),
                          p.at("cols").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + "malformed manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(where + e.what());
  }

  for (const auto& [name, rows, cols] : shapes) {
    Matrix value(rows, cols);
    auto span = value.values();
    if (!in.read(reinterpret_cast<char*>(span.data()),
                 static_cast<std::streamsize>(span.size() * sizeof(double)))) {
      throw CheckpointError(where + "truncated data for parameter " + name);
    }
    ck.params.add(name, std::move(value));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw CheckpointError(where + "trailing bytes after the last parameter");
  return ck;
}

model::QanModel restore_model(Checkpoint& ckpt, AblationVariant variant,
                              const encoder::VectorStore* store) {
  if (variant != ckpt.variant) {
    throw CheckpointError("checkpoint holds variant " + std::string(variant_name(ckpt.variant)) +
                          ", not " + std::string(variant_name(variant)));
  }
  if (ckpt.config.layout() != ckpt.layout)
    throw CheckpointError("checkpoint layout does not match its model configuration");
  try {
    return model::QanModel::bind(ckpt.config, std::move(ckpt.params), ckpt.vocab.size(),
                                 store_for(variant, store));
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(std::string("checkpoint does not fit its configuration: ") + e.what());
  }
}

}  // namespace qan::train

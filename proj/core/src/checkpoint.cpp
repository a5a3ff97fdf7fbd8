#include "prism/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prism/corpus.hpp"
#include "prism/error.hpp"

namespace prism {

namespace {

using json = nlohmann::ordered_json;

json tensors_to_json(const ModelParams& p) {
  json out = json::object();
  const auto names = ModelParams::tensor_names();
  const auto tensors = p.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    out[names[i]] = std::vector<double>(tensors[i].begin(), tensors[i].end());
  }
  return out;
}

void tensors_from_json(const json& in, ModelParams& p) {
  const auto names = ModelParams::tensor_names();
  auto tensors = p.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto values = in.at(names[i]).get<std::vector<double>>();
    if (values.size() != tensors[i].size()) {
      throw IoError(std::string("checkpoint tensor '") + names[i] + "' has " +
                    std::to_string(values.size()) + " entries, expected " +
                    std::to_string(tensors[i].size()));
    }
    std::copy(values.begin(), values.end(), tensors[i].begin());
  }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  const auto& s = c.params.shape;
  json doc = json::object();
  doc["format"] = "prism-checkpoint";
  doc["version"] = kCheckpointVersion;
  doc["shape"] = {{"vocab", s.vocab},
                  {"embed_dim", s.embed_dim},
                  {"hidden_dim", s.hidden_dim},
                  {"window", s.window},
                  {"begin_token", s.begin_token}};
  doc["params"] = tensors_to_json(c.params);
  const auto& o = c.optimizer;
  doc["optimizer"] = {{"learning_rate", o.config.learning_rate},
                      {"beta1", o.config.beta1},
                      {"beta2", o.config.beta2},
                      {"epsilon", o.config.epsilon},
                      {"weight_decay", o.config.weight_decay},
                      {"step", o.step},
                      {"first_moment", tensors_to_json(o.first_moment)},
                      {"second_moment", tensors_to_json(o.second_moment)}};
  doc["seed"] = c.seed;
  doc["config_hash"] = c.config_hash;
  json config = json::object();
  for (const auto& [k, v] : c.config) config[k] = v;
  doc["config"] = std::move(config);
  return doc.dump() + "\n";
}

Checkpoint parse_checkpoint(const std::string& text) {
  try {
    const auto doc = json::parse(text);
    if (doc.at("format").get<std::string>() != "prism-checkpoint") {
      throw IoError("not a prism checkpoint");
    }
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw IoError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto& sh = doc.at("shape");
    ModelShape shape{sh.at("vocab").get<std::size_t>(), sh.at("embed_dim").get<std::size_t>(),
                     sh.at("hidden_dim").get<std::size_t>(), sh.at("window").get<std::size_t>(),
                     sh.at("begin_token").get<TokenId>()};

    Checkpoint c;
    c.params = ModelParams::zeros(shape);
    tensors_from_json(doc.at("params"), c.params);
    const auto& o = doc.at("optimizer");
    AdamWConfig adamw{o.at("learning_rate").get<double>(), o.at("beta1").get<double>(),
                      o.at("beta2").get<double>(), o.at("epsilon").get<double>(),
                      o.at("weight_decay").get<double>()};
    c.optimizer = OptimizerState::create(shape, adamw);
    c.optimizer.step = o.at("step").get<std::uint64_t>();
    tensors_from_json(o.at("first_moment"), c.optimizer.first_moment);
    tensors_from_json(o.at("second_moment"), c.optimizer.second_moment);
    c.seed = doc.at("seed").get<std::uint64_t>();
    c.config_hash = doc.at("config_hash").get<std::string>();
    for (const auto& [k, v] : doc.at("config").items()) c.config.emplace_back(k, v.get<std::string>());
    return c;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  } catch (const InputError& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_checkpoint(buffer.str());
}

}  // namespace prism

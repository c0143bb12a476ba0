#include "exlm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "exlm/io.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint files are little-endian; big-endian hosts are unsupported");

namespace exlm {

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& prefix) {
  nlohmann::ordered_json manifest;
  manifest["format"] = "exlm-checkpoint-v1";
  manifest["dtype"] = "f64_le";
  manifest["layout"] = "col_major";
  manifest["meta"] = ckpt.meta;
  manifest["tensors"] = nlohmann::ordered_json::array();

  std::string blob;
  std::int64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    const auto expected = static_cast<std::size_t>(t.shape[0]) *
                          static_cast<std::size_t>(t.shape[1]);
    if (t.data.size() != expected) {
      throw std::invalid_argument("tensor size mismatch for " + t.name);
    }
    manifest["tensors"].push_back(
        {{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    const std::size_t bytes = t.data.size() * sizeof(double);
    const std::size_t old = blob.size();
    blob.resize(old + bytes);
    std::memcpy(blob.data() + old, t.data.data(), bytes);
    offset += static_cast<std::int64_t>(bytes);
  }

  std::filesystem::path json_path = prefix;
  json_path += ".json";
  std::filesystem::path bin_path = prefix;
  bin_path += ".bin";
  write_file_atomic(bin_path, blob);
  write_file_atomic(json_path, manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& prefix) {
  std::filesystem::path json_path = prefix;
  json_path += ".json";
  std::filesystem::path bin_path = prefix;
  bin_path += ".bin";

  const auto manifest = nlohmann::json::parse(read_file(json_path));
  if (manifest.value("format", "") != "exlm-checkpoint-v1") {
    throw std::runtime_error("unrecognized checkpoint format in " + json_path.string());
  }
  const std::string blob = read_file(bin_path);

  Checkpoint ckpt;
  if (manifest.contains("meta")) {
    ckpt.meta = manifest.at("meta").get<std::map<std::string, std::string>>();
  }
  for (const auto& jt : manifest.at("tensors")) {
    CheckpointTensor t;
    t.name = jt.at("name").get<std::string>();
    const auto shape = jt.at("shape").get<std::vector<std::int64_t>>();
    if (shape.size() != 2) {
      throw std::runtime_error("tensor " + t.name + ": expected rank-2 shape");
    }
    t.shape = {shape[0], shape[1]};
    const auto offset = jt.at("offset").get<std::int64_t>();
    const std::size_t count =
        static_cast<std::size_t>(shape[0]) * static_cast<std::size_t>(shape[1]);
    const std::size_t bytes = count * sizeof(double);
    if (offset < 0 || static_cast<std::size_t>(offset) + bytes > blob.size()) {
      throw std::runtime_error("tensor " + t.name + ": offset outside data file");
    }
    t.data.resize(count);
    std::memcpy(t.data.data(), blob.data() + offset, bytes);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

Checkpoint weights_to_checkpoint(const ModelWeights& w) {
  Checkpoint ckpt;
  const auto& cfg = w.config;
  ckpt.meta["layers"] = std::to_string(cfg.layers);
  ckpt.meta["heads"] = std::to_string(cfg.heads);
  ckpt.meta["model_dim"] = std::to_string(cfg.model_dim);
  ckpt.meta["ffn_dim"] = std::to_string(cfg.ffn_dim);
  ckpt.meta["vocab_size"] = std::to_string(cfg.vocab_size);
  ckpt.meta["rope_base"] = std::to_string(cfg.rope_base);
  visit_params(const_cast<ModelWeights&>(w), [&](const std::string& name, auto& tensor) {
    CheckpointTensor t;
    t.name = name;
    t.shape = {tensor.rows(), tensor.cols()};
    t.data.assign(tensor.data(), tensor.data() + tensor.size());
    ckpt.tensors.push_back(std::move(t));
  });
  return ckpt;
}

ModelWeights weights_from_checkpoint(const Checkpoint& ckpt) {
  EncoderConfig cfg;
  cfg.layers = std::stoi(ckpt.meta.at("layers"));
  cfg.heads = std::stoi(ckpt.meta.at("heads"));
  cfg.model_dim = std::stoi(ckpt.meta.at("model_dim"));
  cfg.ffn_dim = std::stoi(ckpt.meta.at("ffn_dim"));
  cfg.vocab_size = std::stoi(ckpt.meta.at("vocab_size"));
  cfg.rope_base = std::stod(ckpt.meta.at("rope_base"));

  ModelWeights w = ModelWeights::init(cfg, 0);
  visit_params(w, [&](const std::string& name, auto& tensor) {
    const CheckpointTensor* t = ckpt.find(name);
    if (!t) throw std::runtime_error("checkpoint missing tensor " + name);
    if (t->shape[0] != tensor.rows() || t->shape[1] != tensor.cols()) {
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    }
    std::memcpy(tensor.data(), t->data.data(), t->data.size() * sizeof(double));
  });
  return w;
}

}  // namespace exlm

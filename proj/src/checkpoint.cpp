#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "wav2pix/check.hpp"
#include "wav2pix/trainer.hpp"

namespace wav2pix::training {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'W', '2', 'P', 'X', 'C', 'K', 'P', 'T'};

void append_array_meta(json& arrays, const std::string& name, const Tensor<float>& t,
                       const char* kind, bool trainable, uint64_t& offset) {
  json meta;
  meta["name"] = name;
  meta["kind"] = kind;
  meta["trainable"] = trainable;
  meta["shape"] = t.shape();
  meta["offset"] = offset;
  arrays.push_back(std::move(meta));
  offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
}

}  // namespace

void save_checkpoint(const TrainState& state, const TrainConfig& cfg,
                     const std::filesystem::path& path) {
  json header;
  header["format_version"] = kCheckpointVersion;
  header["step"] = state.step;
  header["rng_state"] = state.rng.state();
  header["num_identities"] = state.model.num_identities;
  header["train_config"] = json::parse(train_config_to_json(cfg));

  json arrays = json::array();
  uint64_t offset = 0;
  for (const auto& [name, entry] : state.params)
    append_array_meta(arrays, name, entry.value, "param", entry.trainable, offset);
  for (const auto& [name, mom] : state.moments) {
    append_array_meta(arrays, name, mom.m, "adam_m", false, offset);
    append_array_meta(arrays, name, mom.v, "adam_v", false, offset);
  }
  header["arrays"] = std::move(arrays);

  std::string header_text = header.dump();
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), "save_checkpoint: cannot open " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    uint32_t len = static_cast<uint32_t>(header_text.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    auto write_tensor = [&](const Tensor<float>& t) {
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    };
    for (const auto& [name, entry] : state.params) write_tensor(entry.value);
    for (const auto& [name, mom] : state.moments) {
      write_tensor(mom.m);
      write_tensor(mom.v);
    }
    require(out.good(), "save_checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);  // atomic replace
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "load_checkpoint: cannot open " + path.string());

  char magic[8];
  in.read(magic, sizeof(magic));
  require(in.good() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
          "load_checkpoint: not a checkpoint file: " + path.string());
  uint32_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  require(in.good(), "load_checkpoint: truncated header");
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), header_len);
  require(in.good(), "load_checkpoint: truncated header");

  json header = json::parse(header_text);
  uint32_t version = header.at("format_version").get<uint32_t>();
  require(version == kCheckpointVersion,
          "load_checkpoint: format version " + std::to_string(version) +
              " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");

  Checkpoint ckpt;
  ckpt.config = train_config_from_json(header.at("train_config").dump());
  int num_identities = header.at("num_identities").get<int>();
  ckpt.state.step = header.at("step").get<int64_t>();
  ckpt.state.rng.set_state(header.at("rng_state").get<uint64_t>());
  ckpt.state.model = nets::make_model_config(ckpt.config.image_size,
                                             static_cast<int>(ckpt.config.padded_chunk()),
                                             num_identities);

  const std::streampos payload_start = in.tellg();
  auto read_tensor = [&](const json& meta) {
    std::vector<int64_t> shape = meta.at("shape").get<std::vector<int64_t>>();
    Tensor<float> t(shape);
    in.seekg(payload_start + static_cast<std::streamoff>(meta.at("offset").get<uint64_t>()));
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    require(in.good(), "load_checkpoint: truncated array payload");
    return t;
  };

  std::map<std::string, Tensor<float>> adam_m, adam_v;
  for (const json& meta : header.at("arrays")) {
    std::string name = meta.at("name").get<std::string>();
    std::string kind = meta.at("kind").get<std::string>();
    if (kind == "param")
      ckpt.state.params.add(name, read_tensor(meta), meta.at("trainable").get<bool>());
    else if (kind == "adam_m")
      adam_m.emplace(name, read_tensor(meta));
    else if (kind == "adam_v")
      adam_v.emplace(name, read_tensor(meta));
    else
      require(false, "load_checkpoint: unknown array kind '" + kind + "'");
  }
  require(adam_m.size() == adam_v.size(), "load_checkpoint: moment arrays disagree");
  for (auto& [name, m] : adam_m) {
    auto itv = adam_v.find(name);
    require(itv != adam_v.end(), "load_checkpoint: missing second moment for " + name);
    ckpt.state.moments.emplace(name, AdamMoments{std::move(m), std::move(itv->second)});
  }

  // Cross-check against a freshly initialized set: same names, same shapes.
  ParameterSet<float> expected = nets::init_parameters<float>(ckpt.state.model, 0);
  require(expected.size() == ckpt.state.params.size(),
          "load_checkpoint: parameter count does not match the configuration");
  for (const auto& [name, entry] : expected) {
    require(ckpt.state.params.contains(name), "load_checkpoint: missing parameter " + name);
    require(ckpt.state.params.at(name).shape() == entry.value.shape(),
            "load_checkpoint: shape mismatch for " + name);
    if (entry.trainable)
      require(ckpt.state.moments.contains(name),
              "load_checkpoint: missing optimizer moments for " + name);
  }
  return ckpt;
}

}  // namespace wav2pix::training

#include "ta3n/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <stdexcept>

namespace ta3n {

using json = nlohmann::ordered_json;

void save_checkpoint(Ta3nModel& model, const std::filesystem::path& path) {
  const ModelConfig& cfg = model.config();
  json manifest;
  manifest["format"] = "ta3n-checkpoint";
  manifest["version"] = 1;
  json jc;
  jc["num_frames"] = cfg.num_frames;
  jc["input_dim"] = cfg.input_dim;
  jc["feature_dim"] = cfg.feature_dim;
  jc["num_classes"] = cfg.num_classes;
  jc["variant"] = to_string(cfg.variant);
  jc["attention"] = to_string(cfg.attention);
  jc["max_subsets_per_scale"] = cfg.max_subsets_per_scale;
  jc["seed"] = cfg.seed;
  manifest["config"] = std::move(jc);

  json params = json::array();
  std::uint64_t offset = 0;
  for (ad::Parameter* p : model.parameters()) {
    json jp;
    jp["key"] = p->name;
    jp["rows"] = p->value.rows();
    jp["cols"] = p->value.cols();
    jp["offset"] = offset;
    offset += static_cast<std::uint64_t>(p->value.size()) * sizeof(double);
    params.push_back(std::move(jp));
  }
  manifest["params"] = std::move(params);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  out << manifest.dump() << '\n';
  for (ad::Parameter* p : model.parameters())
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        const double v = p->value(i, j);
        out.write(reinterpret_cast<const char*>(&v), sizeof(double));
      }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

std::unique_ptr<Ta3nModel> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error("load_checkpoint: missing manifest in " + path.string());
  json manifest;
  try {
    manifest = json::parse(header);
  } catch (const json::exception& e) {
    throw std::runtime_error("load_checkpoint: malformed manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "ta3n-checkpoint")
    throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path.string());

  const json& jc = manifest.at("config");
  ModelConfig cfg;
  cfg.num_frames = jc.at("num_frames").get<int>();
  cfg.input_dim = jc.at("input_dim").get<int>();
  cfg.feature_dim = jc.at("feature_dim").get<int>();
  cfg.num_classes = jc.at("num_classes").get<int>();
  cfg.variant = variant_from_string(jc.at("variant").get<std::string>());
  cfg.attention = attention_from_string(jc.at("attention").get<std::string>());
  cfg.max_subsets_per_scale = jc.at("max_subsets_per_scale").get<int>();
  cfg.seed = jc.at("seed").get<std::uint64_t>();

  auto model = std::make_unique<Ta3nModel>(cfg);
  const auto payload_start = in.tellg();
  auto params = model->parameters();
  const json& jps = manifest.at("params");
  if (jps.size() != params.size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  for (size_t k = 0; k < params.size(); ++k) {
    const json& jp = jps[k];
    ad::Parameter* p = params[k];
    if (jp.at("key").get<std::string>() != p->name)
      throw std::runtime_error("load_checkpoint: parameter key mismatch at '" +
                               p->name + "'");
    if (jp.at("rows").get<Eigen::Index>() != p->value.rows() ||
        jp.at("cols").get<Eigen::Index>() != p->value.cols())
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + p->name + "'");
    in.seekg(payload_start +
             static_cast<std::streamoff>(jp.at("offset").get<std::uint64_t>()));
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        double v;
        in.read(reinterpret_cast<char*>(&v), sizeof(double));
        if (!in)
          throw std::runtime_error("load_checkpoint: truncated payload for '" +
                                   p->name + "'");
        p->value(i, j) = v;
      }
  }
  return model;
}

}  // namespace ta3n

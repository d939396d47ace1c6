#include "sgf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace sgf {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

json to_json(const ModelConfig& c) {
  return json{{"encoder_dims", c.encoder_dims}, {"input_channels", c.input_channels},
              {"node_dim", c.node_dim},         {"edge_dim", c.edge_dim},
              {"query_dim", c.query_dim},       {"target_dim", c.target_dim},
              {"heads", c.heads},               {"layers", c.layers},
              {"num_classes", c.num_classes},   {"num_predicates", c.num_predicates}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.encoder_dims = j.value("encoder_dims", c.encoder_dims);
    c.input_channels = j.value("input_channels", c.input_channels);
    c.node_dim = j.value("node_dim", c.node_dim);
    c.edge_dim = j.value("edge_dim", c.edge_dim);
    c.query_dim = j.value("query_dim", c.query_dim);
    c.target_dim = j.value("target_dim", c.target_dim);
    c.heads = j.value("heads", c.heads);
    c.layers = j.value("layers", c.layers);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.num_predicates = j.value("num_predicates", c.num_predicates);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

void write_tensor_set(const std::string& prefix, const std::vector<std::pair<std::string, const Mat*>>& tensors,
                      const json& meta) {
  std::string blob;
  json entries = json::array();
  for (const auto& [name, t] : tensors) {
    entries.push_back({{"name", name},
                       {"shape", {t->rows(), t->cols()}},
                       {"dtype", "float64"},
                       {"offset", blob.size()}});
    for (Eigen::Index i = 0; i < t->size(); ++i) put_le(blob, t->data()[i]);
  }
  const std::string bin_path = prefix + ".bin";
  json manifest{{"format", "sgf-tensors"},
                {"version", 1},
                {"byte_order", "little"},
                {"blob", std::filesystem::path(bin_path).filename().string()},
                {"blob_size", blob.size()},
                {"meta", meta},
                {"tensors", entries}};
  {
    std::ofstream out(bin_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + bin_path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  std::ofstream out(prefix + ".json");
  if (!out) throw DataError("cannot write " + prefix + ".json");
  out << manifest.dump(2) << '\n';
}

TensorSet read_tensor_set(const std::string& prefix) {
  std::ifstream in(prefix + ".json");
  if (!in) throw DataError("cannot open manifest " + prefix + ".json");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + prefix + ".json: " + e.what());
  }
  const auto bin_path = std::filesystem::path(prefix + ".json").parent_path() /
                        manifest.value("blob", std::filesystem::path(prefix + ".bin").filename().string());
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw DataError("cannot open blob " + bin_path.string());
  std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  TensorSet set;
  set.meta = manifest.value("meta", json::object());
  try {
    for (const auto& e : manifest.at("tensors")) {
      if (e.at("dtype") != "float64") throw DataError("unsupported dtype in " + prefix);
      const auto rows = e.at("shape").at(0).get<Eigen::Index>();
      const auto cols = e.at("shape").at(1).get<Eigen::Index>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto bytes = static_cast<std::size_t>(rows * cols) * 8;
      if (offset + bytes > blob.size()) throw DataError("tensor " + e.at("name").get<std::string>() + " overruns blob");
      Mat t(rows, cols);
      const auto* p = reinterpret_cast<const unsigned char*>(blob.data() + offset);
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = get_le(p + 8 * i);
      set.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + prefix + ".json: " + e.what());
  }
  return set;
}

void save_checkpoint(const std::string& prefix, const SpnParameters& params) {
  write_tensor_set(prefix, params.tensors(), json{{"kind", "spn-parameters"}, {"config", to_json(params.config)}});
}

SpnParameters load_checkpoint(const std::string& prefix) {
  TensorSet set = read_tensor_set(prefix);
  if (!set.meta.contains("config")) throw DataError("checkpoint " + prefix + " has no model config");
  SpnParameters params = SpnParameters::zeros(model_config_from_json(set.meta["config"]));
  auto slots = params.tensors();
  if (slots.size() != set.tensors.size())
    throw DataError("checkpoint " + prefix + " has " + std::to_string(set.tensors.size()) + " tensors, expected " +
                    std::to_string(slots.size()));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& [name, t] = set.tensors[i];
    if (name != slots[i].first || t.rows() != slots[i].second->rows() || t.cols() != slots[i].second->cols())
      throw DataError("checkpoint tensor " + name + " does not match expected " + slots[i].first);
    *slots[i].second = t;
  }
  params.validate();
  return params;
}

}  // namespace sgf

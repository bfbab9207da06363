#include "detbench/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace detbench {

namespace {

using nlohmann::json;

static_assert(sizeof(double) == 8, "float64 archive requires 8-byte doubles");

}  // namespace

void save_checkpoint(const WeightStore& weights, const std::string& path) {
  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: cannot open " + path);

  json manifest;
  manifest["schema_version"] = 1;
  manifest["dtype"] = "float64";
  manifest["byte_order"] = "little";
  manifest["tensors"] = json::array();

  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : weights) {
    json entry;
    entry["name"] = name;
    entry["shape"] = tensor.shape;
    entry["offset"] = offset;
    entry["count"] = tensor.values.size();
    manifest["tensors"].push_back(entry);
    bin.write(reinterpret_cast<const char*>(tensor.values.data()),
              static_cast<std::streamsize>(tensor.values.size() * sizeof(double)));
    offset += tensor.values.size() * sizeof(double);
  }
  if (!bin) throw std::runtime_error("checkpoint: write failed for " + path);
  bin.close();

  std::ofstream mf(path + ".json", std::ios::binary);
  if (!mf) throw std::runtime_error("checkpoint: cannot open " + path + ".json");
  mf << manifest.dump(2) << "\n";
}

WeightStore load_checkpoint(const std::string& path) {
  std::ifstream mf(path + ".json");
  if (!mf) throw std::runtime_error("checkpoint: cannot open " + path + ".json");
  json manifest;
  mf >> manifest;
  if (!manifest.contains("tensors") || manifest.value("dtype", "") != "float64") {
    throw std::runtime_error("checkpoint: bad manifest " + path + ".json");
  }

  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: cannot open " + path);

  WeightStore store;
  for (const auto& entry : manifest["tensors"]) {
    const std::string name = entry.at("name").get<std::string>();
    TensorData t;
    t.shape = entry.at("shape").get<std::vector<int>>();
    const std::uint64_t count = entry.at("count").get<std::uint64_t>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    t.values.resize(count);
    bin.seekg(static_cast<std::streamoff>(offset));
    bin.read(reinterpret_cast<char*>(t.values.data()),
             static_cast<std::streamsize>(count * sizeof(double)));
    if (!bin) throw std::runtime_error("checkpoint: truncated archive " + path);
    store[name] = std::move(t);
  }
  return store;
}

}  // namespace detbench

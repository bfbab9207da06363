#pragma once

#include <string>

#include "detbench/model.hpp"

namespace detbench {

// Weight checkpoints are a flat little-endian float64 archive at `path` with a
// JSON manifest at `path` + ".json" listing tensor names, shapes, and byte
// offsets in archive order.
void save_checkpoint(const WeightStore& weights, const std::string& path);
WeightStore load_checkpoint(const std::string& path);

}  // namespace detbench

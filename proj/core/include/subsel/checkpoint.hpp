#pragma once

#include <string>

#include "subsel/model.hpp"

namespace subsel {

/// Checkpoint directory layout: manifest.json (format version, layer
/// specs, input shape, per-tensor shape/byte counts) plus one raw
/// little-endian f64 blob per parameter tensor. Round-trip is bit-exact.
void save_checkpoint(const LayeredModel& model, const std::string& dir);
LayeredModel load_checkpoint(const std::string& dir);

}  // namespace subsel

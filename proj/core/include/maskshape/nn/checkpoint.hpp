#pragma once

#include "maskshape/nn/layers.hpp"

#include <filesystem>
#include <string>

namespace maskshape::nn {

/**
 * Writes checkpoint.json plus one f32 SFMT blob per parameter and buffer,
 * keyed by the layer's stable tensor names. `architecture_json` must be a
 * JSON document; it is embedded verbatim under "architecture".
 */
void save_checkpoint(const std::filesystem::path& dir, Layer<float>& net, const std::string& architecture_json);

/// Loads tensors into an already-built `net`; names and shapes must match. Returns the architecture JSON.
std::string load_checkpoint(const std::filesystem::path& dir, Layer<float>& net);

/// Reads only the embedded architecture JSON.
std::string read_checkpoint_architecture(const std::filesystem::path& dir);

} // namespace maskshape::nn

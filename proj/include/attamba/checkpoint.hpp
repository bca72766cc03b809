#pragma once

#include <string>

#include "attamba/model.hpp"

namespace attamba {

// Binary container for model weights plus the config needed to rebuild the
// model. Fixed little-endian layout, f32 payloads, bit-exact round trip.
void save_checkpoint(const std::string& path, ModelParams<float>& params);
ModelParams<float> load_checkpoint(const std::string& path);

}  // namespace attamba

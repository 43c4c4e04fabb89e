#pragma once

#include <string>
#include <vector>

#include "form/nn/network.hpp"

namespace form::nn {

std::uint32_t crc32(const unsigned char* data, std::size_t n,
                    std::uint32_t seed = 0);

// Versioned binary model file: header, per-sample input dims, layer specs,
// parameter tensors in FGRID encoding, CRC32 footer.
void save_model(const std::string& path, Sequential<float>& net,
                const std::vector<int>& input_dims);

struct LoadedModel {
  Sequential<float> net;
  std::vector<int> input_dims;
};
LoadedModel load_model(const std::string& path);

}  // namespace form::nn

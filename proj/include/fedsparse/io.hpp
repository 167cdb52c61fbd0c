#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedsparse/nn.hpp"
#include "fedsparse/series.hpp"

namespace fedsparse::io {

// FSNN1 weight blob, little-endian:
//   magic "FSNN1" | u32 layer_count |
//   per layer: u32 out | u32 in | u8 activation | f64 W[out*in] row-major | f64 b[out]
std::vector<uint8_t> encode_weights(const nn::MlpWeights& net);
nn::MlpWeights decode_weights(std::span<const uint8_t> blob);

void save_weights(const std::string& path, const nn::MlpWeights& net);
nn::MlpWeights load_weights(const std::string& path);

// FSTS1 dataset file, little-endian:
//   magic "FSTS1" | u32 nf | u32 w | u32 window_count |
//   per window: f64 dense[nf*w] | f64 sparse[nf*w] | u8 mask[nf*w] |
//               f64 label | u32 t_index
void save_dataset(const std::string& path, const ts::Dataset& ds);
ts::Dataset load_dataset(const std::string& path);

std::string base64_encode(std::span<const uint8_t> data);
std::vector<uint8_t> base64_decode(const std::string& text);

}  // namespace fedsparse::io

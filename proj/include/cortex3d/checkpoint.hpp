#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cortex3d/cae.hpp"
#include "cortex3d/nn.hpp"

namespace cortex3d {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// ACNN1 container, little-endian: magic "ACNN1", u32 tensor count, then per
/// tensor u32 name length, UTF-8 name, u32 rank, u32 dims, float32 payload.
void write_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

/// layer{l}.kernels, layer{l}.bias, layer{l}.decoder_bias.
std::vector<NamedTensor> stack_tensors(const CaeStack<float>& stack);
/// layer{i}.weights, layer{i}.bias for every layer with parameters.
std::vector<NamedTensor> network_tensors(const Network<float>& network);

/// Copies checkpoint tensors into an already built architecture. Throws
/// FormatError on a missing, unexpected or wrongly shaped tensor and leaves
/// the target untouched in that case.
void load_parameters(CaeStack<float>& stack, std::span<const NamedTensor> tensors);
void load_parameters(Network<float>& network, std::span<const NamedTensor> tensors);

}  // namespace cortex3d

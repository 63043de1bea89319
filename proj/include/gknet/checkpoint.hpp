#pragma once

// Checkpoint file:
//   GKNET-CHECKPOINT\n
//   <header byte count>\n
//   <JSON header: format_version, kind, network, tensors[{name, shape, offset}], state>\n
//   raw little-endian float32 tensor data, row-major, names sorted.

#include <filesystem>
#include <map>
#include <string>

#include "gknet/config.hpp"
#include "gknet/model.hpp"

namespace gknet {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointData {
  std::string kind = "model";  // "model" or "train"
  NetworkConfig network;
  std::map<std::string, Tensor<float>> tensors;
  json state;  // kind-specific extras; null for plain models
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

// Throws ConfigError listing the differing fields.
void require_same_network(const NetworkConfig& expected, const NetworkConfig& found);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const GKNet<T>& model);
// Accepts model and train checkpoints. With `expected`, a differing network
// configuration is a ConfigError.
template <typename T>
GKNet<T> load_checkpoint(const std::filesystem::path& path, const NetworkConfig* expected = nullptr);

template <typename T>
std::map<std::string, Tensor<float>> export_parameters(const GKNet<T>& model);
template <typename T>
void import_parameters(GKNet<T>& model, const std::map<std::string, Tensor<float>>& tensors,
                       const std::string& prefix = "");

// Single-tensor dump: "GKTENSOR", uint32 version, uint32 rank, uint32 dims[rank], float32 data.
void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_tensor_file(const std::filesystem::path& path);

}  // namespace gknet

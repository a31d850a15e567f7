#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "harmon/numerics/optim.hpp"
#include "harmon/numerics/param_store.hpp"

namespace harmon::num {

// On-disk layout: "HRM1" magic, u32 version, u64 manifest length, JSON manifest,
// then a little-endian float32 payload addressed by per-blob offsets.
inline constexpr char kCheckpointMagic[4] = {'H', 'R', 'M', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  struct Blob {
    Shape shape;
    std::vector<float> data;
    std::string group;
    bool trainable = false;
  };
  // Insertion-ordered blob list; lookup by name.
  std::vector<std::pair<std::string, Blob>> blobs;
  nlohmann::json meta = nlohmann::json::object();

  Blob& add(const std::string& name, Shape shape, std::vector<float> data);
  const Blob* find(const std::string& name) const;
};

// Writes to a temp file in the same directory, then renames into place.
void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

// Store <-> blob conversion. unpack_* requires the store to declare exactly the
// blob's name and shape; values and trainable flags come from the checkpoint.
template <typename T>
void pack_params(const ParamStore<T>& store, CheckpointData& out);
template <typename T>
void unpack_params(const CheckpointData& in, ParamStore<T>& store);

// Optimizer moments ride along as "opt.m.<param>" / "opt.v.<param>" blobs plus
// hyperparameters under meta["optim"].
template <typename T>
void pack_optim(const OptimizerState<T>& state, CheckpointData& out);
template <typename T>
void unpack_optim(const CheckpointData& in, OptimizerState<T>& state);

}  // namespace harmon::num

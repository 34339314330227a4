#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "r2mw/network.hpp"
#include "r2mw/tensor.hpp"

namespace r2mw {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VersionMismatchError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct TruncatedError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct ChecksumError : CheckpointError {
  using CheckpointError::CheckpointError;
};
/// Checkpoint contents do not fit the requested network configuration.
struct MismatchError : CheckpointError {
  using CheckpointError::CheckpointError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named-tensor archive: magic "R2MW", u32 version, u64 tensor count, then
/// per tensor u32 name length + UTF-8 name, u32 rank (always 4), four u64
/// dims and the raw little-endian 64-bit floats; a CRC32 of everything
/// before it closes the file. save -> load -> save is byte identical.
void save_named_tensors(const std::filesystem::path& path,
                        const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_named_tensors(const std::filesystem::path& path);

struct AdamState;      // training.hpp
struct PlateauSchedule;

/// Full training snapshot: weights, optimizer moments, schedule state and
/// the network configuration needed to rebuild the model.
struct Checkpoint {
  NetworkConfig net;
  ModelParams params;
  // Optimizer scalars/moments and schedule state are stored flat so this
  // header does not depend on training.hpp; training.cpp provides the
  // conversion helpers.
  double opt_lr = 2e-4;
  double opt_beta1 = 0.9;
  double opt_beta2 = 0.999;
  double opt_eps = 1e-8;
  std::int64_t opt_t = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> opt_moments;
  double sched_best = 0.0;
  int sched_wait = 0;
  int sched_patience = 10;
  double sched_factor = 0.2;
  double sched_min_lr = 0.0;
  int epoch = 0;
  std::uint64_t seed = 0;
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws MismatchError naming the first offending tensor when the
/// checkpoint's parameters cannot drive a network with this configuration.
void validate_checkpoint(const Checkpoint& ck, const NetworkConfig& cfg);

}  // namespace r2mw

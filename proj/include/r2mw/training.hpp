#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "r2mw/checkpoint.hpp"
#include "r2mw/dataio.hpp"
#include "r2mw/losses.hpp"
#include "r2mw/network.hpp"
#include "r2mw/tensor.hpp"

namespace r2mw {

struct AdamState {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  // First/second moment buffers per parameter, allocated on first use.
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
};

/// One bias-corrected update over every parameter; each must carry a
/// gradient or the step throws naming the offender. t increments once per
/// call.
void adam_step(ModelParams& params, AdamState& st);

struct PlateauSchedule {
  int patience = 10;
  double factor = 0.2;
  double min_lr = 0.0;
  double best = std::numeric_limits<double>::infinity();
  int wait = 0;
};

/// Plateau decay: a strict improvement resets the wait counter; once wait
/// exceeds patience the rate drops to max(lr*factor, min_lr) and the counter
/// resets. Never increases the rate; NaN loss throws.
double schedule_update(PlateauSchedule& s, double epoch_loss, double current_lr);

/// One of the eight axis-aligned symmetries (quarter-turn rotations times an
/// optional horizontal flip), index 0 is the identity.
Tensor dihedral(const Tensor& x, int k);
int dihedral_inverse(int k);

/// Applies one uniformly drawn symmetry to both images.
std::pair<Tensor, Tensor> augment(const Tensor& low, const Tensor& ref, std::mt19937_64& rng);

struct TrainOptions {
  int epochs = 300;
  int batch = 2;
  int patch = 128;
  double lr = 2e-4;
  std::uint64_t seed = 0;
  bool deterministic = false;
  bool augment = true;
  double grad_clip = 0.0;      // 0 disables clipping
  double val_fraction = 0.0;   // >0 monitors a held-out tail instead of train loss
  int patience = 10;
  double lr_factor = 0.2;
  double min_lr = 0.0;
  std::filesystem::path out_dir;        // empty: keep everything in memory
  std::filesystem::path resume;         // checkpoint to continue from
  std::filesystem::path perc_weights;   // optional perceptual weight file
};

struct StepRecord {
  int epoch = 0;
  long step = 0;
  double total = 0.0;
  double pixel = 0.0;
  double global_part = 0.0;
  double edge = 0.0;
  double channel = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepRecord> history;
  std::filesystem::path last_path;
  std::filesystem::path best_path;
  std::filesystem::path csv_path;
  bool aborted = false;
  std::string abort_reason;
};

/// Full optimization loop: seeded shuffling, aligned random crops, optional
/// augmentation, forward/loss/backward/Adam per batch, plateau scheduling on
/// the epoch-mean loss, a checkpoint per epoch plus a best-loss checkpoint,
/// and a per-step loss CSV (header epoch,step,total,pixel,global,edge,
/// channel,lr). A non-finite loss aborts, keeping the last finished
/// checkpoint.
TrainResult train(const std::vector<ImagePair>& dataset, const NetworkConfig& net,
                  const LossConfig& loss_cfg, const TrainOptions& opts);

}  // namespace r2mw

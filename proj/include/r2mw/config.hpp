#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "r2mw/losses.hpp"
#include "r2mw/network.hpp"
#include "r2mw/training.hpp"

namespace r2mw {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat run configuration: every tunable of the pipeline with its built-in
/// default. CLI flags override config-file entries, which override defaults.
struct RunConfig {
  std::string data;
  std::string out = "out";
  std::string input;
  std::string reference;
  std::string enhanced;
  std::string checkpoint;
  std::string low_subdir = "low";
  std::string high_subdir = "high";
  std::string perc_weights;
  int epochs = 300;
  double lr = 2e-4;
  int batch = 2;
  int patch = 128;
  int levels = 3;
  int base_channels = 16;
  int msc_depth = 3;
  std::uint64_t seed = 0;
  bool deterministic = false;
  bool global_residual = true;
  double w1 = 1.0;
  double w2 = 1.5;
  double w3 = 1.0;
  double w4 = 1.0;
  double bright_fraction = 0.3;
  double smooth_l1_beta = 1.0;
  bool edge_loss = true;
  bool channel_loss = true;
  double edge_weight = 1.0;
  double channel_weight = 1.0;
  double gauss_a = 0.2;
  double gauss_sigma_x = 3.0;
  double gauss_sigma_y = 3.0;
  int gauss_ksize = 11;
  double ssim_c1 = 1e-4;
  double ssim_c2 = 9e-4;
  int patience = 10;
  double lr_factor = 0.2;
  double min_lr = 0.0;
  double grad_clip = 0.0;
  double val_fraction = 0.0;
  bool augment = true;
  bool roundtrip = false;

  /// Keys pinned explicitly on the command line (filled by the CLI layer).
  std::set<std::string> provided;
};

// Subcommands a field applies to.
enum : unsigned {
  kCmdTrain = 1u,
  kCmdEnhance = 2u,
  kCmdEval = 4u,
  kCmdInspect = 8u,
};

struct ConfigField {
  std::string key;         // config-file key
  std::string flag;        // CLI spelling, e.g. "--base-channels"
  std::string def;         // default rendered as text
  std::string desc;
  bool is_flag = false;    // presence-only CLI toggle
  std::string flag_value;  // value a toggle assigns ("true" or "false")
  unsigned commands = kCmdTrain;
  std::function<void(RunConfig&, const std::string&)> set;
};

/// The full schema; single source of truth for CLI registration, config-file
/// validation and the help/parity contract.
const std::vector<ConfigField>& config_fields();

/// Applies `key = value` lines ('#' comments, blank lines allowed). Unknown
/// keys and malformed lines raise ConfigError naming the line. Keys in
/// `skip` (already pinned by CLI flags) are ignored.
void apply_config_file(RunConfig& rc, const std::filesystem::path& path,
                       const std::set<std::string>& skip);

NetworkConfig network_config(const RunConfig& rc);
LossConfig loss_config(const RunConfig& rc);
TrainOptions train_options(const RunConfig& rc);

}  // namespace r2mw

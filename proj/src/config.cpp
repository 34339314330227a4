#include "r2mw/config.hpp"

#include <algorithm>
#include <fstream>

namespace r2mw {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw ConfigError("invalid value '" + value + "' for key '" + key + "'");
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) bad_value(key, v);
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    bad_value(key, v);
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) bad_value(key, v);
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    bad_value(key, v);
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) bad_value(key, v);
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    bad_value(key, v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  bad_value(key, v);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

ConfigField str_field(const char* key, const char* flag, std::string RunConfig::* member,
                      const char* def, const char* desc, unsigned commands) {
  return ConfigField{key, flag, def, desc, false, "", commands,
                     [member](RunConfig& rc, const std::string& v) { rc.*member = v; }};
}

ConfigField int_field(const char* key, const char* flag, int RunConfig::* member, const char* def,
                      const char* desc, unsigned commands) {
  return ConfigField{key, flag, def, desc, false, "", commands,
                     [member, key](RunConfig& rc, const std::string& v) {
                       rc.*member = parse_int(key, v);
                     }};
}

ConfigField dbl_field(const char* key, const char* flag, double RunConfig::* member,
                      const char* def, const char* desc, unsigned commands) {
  return ConfigField{key, flag, def, desc, false, "", commands,
                     [member, key](RunConfig& rc, const std::string& v) {
                       rc.*member = parse_double(key, v);
                     }};
}

// Boolean field surfaced as a presence-only CLI toggle; flag_value is what
// the toggle assigns, the config file accepts true/false spellings.
ConfigField flag_field(const char* key, const char* flag, bool RunConfig::* member,
                       const char* def, const char* flag_value, const char* desc,
                       unsigned commands) {
  return ConfigField{key, flag, def, desc, true, flag_value, commands,
                     [member, key](RunConfig& rc, const std::string& v) {
                       rc.*member = parse_bool(key, v);
                     }};
}

std::vector<ConfigField> build_fields() {
  const unsigned io_all = kCmdTrain | kCmdEnhance | kCmdEval | kCmdInspect;
  std::vector<ConfigField> f;
  f.push_back(str_field("data", "--data", &RunConfig::data, "",
                        "dataset root holding the paired image directories", kCmdTrain));
  f.push_back(str_field("out", "--out", &RunConfig::out, "out",
                        "output directory (checkpoints, CSVs, images)", io_all));
  f.push_back(str_field("input", "--input", &RunConfig::input, "",
                        "input image file or directory", kCmdEnhance | kCmdInspect));
  f.push_back(str_field("reference", "--reference", &RunConfig::reference, "",
                        "reference (ground-truth) image directory", kCmdEval));
  f.push_back(str_field("enhanced", "--enhanced", &RunConfig::enhanced, "",
                        "enhanced image directory to score", kCmdEval));
  f.push_back(str_field("checkpoint", "--checkpoint", &RunConfig::checkpoint, "",
                        "checkpoint file (enhance: weights; train: resume)",
                        kCmdTrain | kCmdEnhance));
  f.push_back(str_field("low_subdir", "--low-subdir", &RunConfig::low_subdir, "low",
                        "low-light subdirectory name under the dataset root", kCmdTrain));
  f.push_back(str_field("high_subdir", "--high-subdir", &RunConfig::high_subdir, "high",
                        "normal-light subdirectory name under the dataset root", kCmdTrain));
  f.push_back(str_field("perc_weights", "--perc-weights", &RunConfig::perc_weights, "",
                        "optional checkpoint with perceptual extractor weights", kCmdTrain));
  f.push_back(int_field("epochs", "--epochs", &RunConfig::epochs, "300",
                        "training epochs", kCmdTrain));
  f.push_back(dbl_field("lr", "--lr", &RunConfig::lr, "0.0002",
                        "initial Adam learning rate", kCmdTrain));
  f.push_back(int_field("batch", "--batch", &RunConfig::batch, "2", "batch size", kCmdTrain));
  f.push_back(int_field("patch", "--patch", &RunConfig::patch, "128",
                        "square crop size for training patches", kCmdTrain));
  f.push_back(int_field("levels", "--levels", &RunConfig::levels, "3",
                        "wavelet decomposition levels", kCmdTrain | kCmdEnhance));
  f.push_back(int_field("base_channels", "--base-channels", &RunConfig::base_channels, "16",
                        "feature width at the first level (doubles per level)",
                        kCmdTrain | kCmdEnhance));
  f.push_back(int_field("msc_depth", "--msc-depth", &RunConfig::msc_depth, "3",
                        "stacked convs per MSC block", kCmdTrain | kCmdEnhance));
  f.push_back(ConfigField{"seed", "--seed", "0", "run seed for all randomness", false, "",
                          kCmdTrain | kCmdEnhance,
                          [](RunConfig& rc, const std::string& v) {
                            rc.seed = parse_u64("seed", v);
                          }});
  f.push_back(flag_field("deterministic", "--deterministic", &RunConfig::deterministic, "false",
                         "true", "pin the bitwise-reproducibility contract (execution is "
                         "single-threaded and seeded either way)",
                         io_all));
  f.push_back(flag_field("global_residual", "--no-global-residual", &RunConfig::global_residual,
                         "true", "false", "disable the input-to-output residual connection",
                         kCmdTrain));
  f.push_back(dbl_field("w1", "--w1", &RunConfig::w1, "1", "dark-region pixel loss weight",
                        kCmdTrain));
  f.push_back(dbl_field("w2", "--w2", &RunConfig::w2, "1.5", "bright-region pixel loss weight",
                        kCmdTrain));
  f.push_back(dbl_field("w3", "--w3", &RunConfig::w3, "1", "perceptual loss weight", kCmdTrain));
  f.push_back(dbl_field("w4", "--w4", &RunConfig::w4, "1",
                        "structural similarity reward weight", kCmdTrain));
  f.push_back(dbl_field("bright_fraction", "--bright-fraction", &RunConfig::bright_fraction,
                        "0.3", "area fraction treated as the bright region", kCmdTrain));
  f.push_back(dbl_field("smooth_l1_beta", "--smooth-l1-beta", &RunConfig::smooth_l1_beta, "1",
                        "quadratic-to-linear threshold of the pixel loss", kCmdTrain));
  f.push_back(flag_field("edge_loss", "--no-edge-loss", &RunConfig::edge_loss, "true", "false",
                         "disable the Sobel edge loss term", kCmdTrain));
  f.push_back(flag_field("channel_loss", "--no-channel-loss", &RunConfig::channel_loss, "true",
                         "false", "disable the blurred per-channel color loss term", kCmdTrain));
  f.push_back(dbl_field("edge_weight", "--edge-weight", &RunConfig::edge_weight, "1",
                        "scale on the edge loss term", kCmdTrain));
  f.push_back(dbl_field("channel_weight", "--channel-weight", &RunConfig::channel_weight, "1",
                        "scale on the channel loss term", kCmdTrain));
  f.push_back(dbl_field("gauss_a", "--gauss-a", &RunConfig::gauss_a, "0.2",
                        "peak amplitude of the (unnormalized) blur kernel", kCmdTrain));
  f.push_back(dbl_field("gauss_sigma_x", "--gauss-sigma-x", &RunConfig::gauss_sigma_x, "3",
                        "vertical falloff of the blur kernel", kCmdTrain));
  f.push_back(dbl_field("gauss_sigma_y", "--gauss-sigma-y", &RunConfig::gauss_sigma_y, "3",
                        "horizontal falloff of the blur kernel", kCmdTrain));
  f.push_back(int_field("gauss_ksize", "--gauss-ksize", &RunConfig::gauss_ksize, "11",
                        "blur kernel size (odd)", kCmdTrain));
  f.push_back(dbl_field("ssim_c1", "--ssim-c1", &RunConfig::ssim_c1, "0.0001",
                        "SSIM luminance stability constant", kCmdTrain));
  f.push_back(dbl_field("ssim_c2", "--ssim-c2", &RunConfig::ssim_c2, "0.0009",
                        "SSIM contrast stability constant", kCmdTrain));
  f.push_back(int_field("patience", "--patience", &RunConfig::patience, "10",
                        "epochs without improvement before the rate decays", kCmdTrain));
  f.push_back(dbl_field("lr_factor", "--lr-factor", &RunConfig::lr_factor, "0.2",
                        "learning-rate decay factor on plateau", kCmdTrain));
  f.push_back(dbl_field("min_lr", "--min-lr", &RunConfig::min_lr, "0",
                        "lower bound for the decayed learning rate", kCmdTrain));
  f.push_back(dbl_field("grad_clip", "--grad-clip", &RunConfig::grad_clip, "0",
                        "global gradient-norm clip (0 disables)", kCmdTrain));
  f.push_back(dbl_field("val_fraction", "--val-fraction", &RunConfig::val_fraction, "0",
                        "fraction of pairs held out; the schedule then monitors them",
                        kCmdTrain));
  f.push_back(flag_field("augment", "--no-augment", &RunConfig::augment, "true", "false",
                         "disable rotation/flip augmentation", kCmdTrain));
  f.push_back(flag_field("roundtrip", "--roundtrip", &RunConfig::roundtrip, "false", "true",
                         "verify that the inverse transform of the emitted sub-bands "
                         "reproduces the input",
                         kCmdInspect));
  return f;
}

}  // namespace

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = build_fields();
  return fields;
}

void apply_config_file(RunConfig& rc, const std::filesystem::path& path,
                       const std::set<std::string>& skip) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const auto& fields = config_fields();
    auto it = std::find_if(fields.begin(), fields.end(),
                           [&](const ConfigField& f) { return f.key == key; });
    if (it == fields.end())
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": unknown key '" + key +
                        "'");
    if (skip.count(key)) continue;  // CLI flag wins
    try {
      it->set(rc, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

NetworkConfig network_config(const RunConfig& rc) {
  NetworkConfig cfg;
  cfg.levels = rc.levels;
  cfg.base_channels = rc.base_channels;
  cfg.msc_depth = rc.msc_depth;
  cfg.global_residual = rc.global_residual;
  return cfg;
}

LossConfig loss_config(const RunConfig& rc) {
  LossConfig cfg;
  cfg.w1 = rc.w1;
  cfg.w2 = rc.w2;
  cfg.w3 = rc.w3;
  cfg.w4 = rc.w4;
  cfg.bright_fraction = rc.bright_fraction;
  cfg.smooth_l1_beta = rc.smooth_l1_beta;
  cfg.gauss_a = rc.gauss_a;
  cfg.gauss_sigma_x = rc.gauss_sigma_x;
  cfg.gauss_sigma_y = rc.gauss_sigma_y;
  cfg.gauss_ksize = rc.gauss_ksize;
  cfg.ssim_c1 = rc.ssim_c1;
  cfg.ssim_c2 = rc.ssim_c2;
  cfg.use_edge = rc.edge_loss;
  cfg.use_channel = rc.channel_loss;
  cfg.edge_weight = rc.edge_weight;
  cfg.channel_weight = rc.channel_weight;
  return cfg;
}

TrainOptions train_options(const RunConfig& rc) {
  TrainOptions opts;
  opts.epochs = rc.epochs;
  opts.batch = rc.batch;
  opts.patch = rc.patch;
  opts.lr = rc.lr;
  opts.seed = rc.seed;
  opts.deterministic = rc.deterministic;
  opts.augment = rc.augment;
  opts.grad_clip = rc.grad_clip;
  opts.val_fraction = rc.val_fraction;
  opts.patience = rc.patience;
  opts.lr_factor = rc.lr_factor;
  opts.min_lr = rc.min_lr;
  opts.out_dir = rc.out;
  if (!rc.checkpoint.empty()) opts.resume = rc.checkpoint;
  if (!rc.perc_weights.empty()) opts.perc_weights = rc.perc_weights;
  return opts;
}

}  // namespace r2mw

#include "r2mw/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "r2mw/checkpoint.hpp"
#include "r2mw/config.hpp"
#include "r2mw/dataio.hpp"
#include "r2mw/metrics.hpp"
#include "r2mw/training.hpp"
#include "r2mw/wavelet.hpp"

namespace r2mw {

namespace {

namespace fs = std::filesystem;

struct CliState {
  RunConfig rc;
  std::string config_path;
  struct Bound {
    CLI::Option* opt;
    const ConfigField* field;
  };
  std::vector<Bound> bound;
  CLI::App* active = nullptr;
};

void register_fields(CLI::App* cmd, unsigned mask, CliState& st) {
  cmd->add_option("--config", st.config_path, "flat key = value config file")
      ->option_text("FILE");
  for (const auto& field : config_fields()) {
    if (!(field.commands & mask)) continue;
    const std::string desc =
        field.desc + " [" + field.key + ", default " + (field.def.empty() ? "''" : field.def) +
        "]";
    CLI::Option* opt;
    if (field.is_flag) {
      opt = cmd->add_flag_callback(
          field.flag, [&st, &field]() { field.set(st.rc, field.flag_value); }, desc);
    } else {
      opt = cmd->add_option_function<std::string>(
          field.flag, [&st, &field](const std::string& v) { field.set(st.rc, v); }, desc);
      opt->option_text("VALUE");
    }
    st.bound.push_back({opt, &field});
  }
}

void finish_config(CliState& st) {
  std::set<std::string> from_cli;
  for (const auto& b : st.bound)
    if (b.opt->count() > 0) from_cli.insert(b.field->key);
  st.rc.provided = from_cli;
  if (!st.config_path.empty()) apply_config_file(st.rc, st.config_path, from_cli);
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + " is required");
}

int pad_to_multiple(int v, int m) { return (v % m == 0) ? 0 : m - (v % m); }

Tensor enhance_one(const Tensor& image, const Checkpoint& ck) {
  NoGradGuard no_grad;
  const int divisor = 1 << ck.net.levels;
  const Shape s = image.shape();
  const int pb = pad_to_multiple(s.h, divisor);
  const int pr = pad_to_multiple(s.w, divisor);
  Tensor padded = (pb || pr) ? pad2d(image, 0, pb, 0, pr, PadMode::kReflect) : image;
  Tensor out = forward(padded, ck.params, ck.net);
  if (pb || pr) out = crop2d(out, 0, s.h, 0, s.w);
  return out;
}

std::vector<fs::path> collect_inputs(const fs::path& input) {
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& entry : fs::directory_iterator(input))
      if (entry.is_regular_file() && entry.path().extension() == ".png")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw ImageIoError("no .png files in directory '" + input.string() + "'");
  } else if (fs::is_regular_file(input)) {
    files.push_back(input);
  } else {
    throw ImageIoError("input '" + input.string() + "' does not exist");
  }
  return files;
}

int run_train(CliState& st) {
  RunConfig& rc = st.rc;
  require(rc.data, "--data");
  const ScanResult scan = scan_pairs(fs::path(rc.data) / rc.low_subdir,
                                     fs::path(rc.data) / rc.high_subdir);
  for (const auto& w : scan.warnings) std::cerr << "warning: " << w << "\n";
  const std::vector<ImagePair> dataset = load_pairs(scan);
  std::cout << "training on " << dataset.size() << " pair(s)\n";

  TrainResult result = train(dataset, network_config(rc), loss_config(rc), train_options(rc));
  if (!result.history.empty()) {
    const auto& last = result.history.back();
    std::cout << "final loss " << last.total << " after " << last.step << " step(s)\n";
  }
  if (!result.csv_path.empty()) std::cout << "loss history: " << result.csv_path.string() << "\n";
  if (!result.last_path.empty()) std::cout << "checkpoint:   " << result.last_path.string() << "\n";
  if (result.aborted) {
    std::cerr << "training aborted: " << result.abort_reason << "\n";
    return 1;
  }
  return 0;
}

int run_enhance(CliState& st) {
  RunConfig& rc = st.rc;
  require(rc.checkpoint, "--checkpoint");
  require(rc.input, "--input");
  Checkpoint ck = load_checkpoint(rc.checkpoint);
  validate_checkpoint(ck, ck.net);
  // Explicit architecture flags must agree with the stored model.
  auto check_override = [&](const char* key, int cli_value, int ck_value) {
    if (rc.provided.count(key) && cli_value != ck_value)
      throw MismatchError(std::string("--") + key + " " + std::to_string(cli_value) +
                          " does not match checkpoint (" + std::to_string(ck_value) + ")");
  };
  check_override("levels", rc.levels, ck.net.levels);
  check_override("base_channels", rc.base_channels, ck.net.base_channels);
  check_override("msc_depth", rc.msc_depth, ck.net.msc_depth);

  fs::create_directories(rc.out);
  for (const fs::path& file : collect_inputs(rc.input)) {
    Tensor image = load_image(file);
    Tensor out = enhance_one(image, ck);
    const fs::path dest = fs::path(rc.out) / file.filename();
    save_image(out, dest);
    std::cout << dest.string() << "\n";
  }
  return 0;
}

int run_eval(CliState& st) {
  RunConfig& rc = st.rc;
  require(rc.enhanced, "--enhanced");
  require(rc.reference, "--reference");
  ScanResult scan;
  try {
    scan = scan_pairs(rc.enhanced, rc.reference);
  } catch (const ImageIoError& e) {
    throw ConfigError(e.what());  // zero pairs is a usage error
  }
  for (const auto& w : scan.warnings) std::cerr << "warning: " << w << "\n";

  std::vector<EvalPair> pairs;
  for (const auto& entry : scan.pairs) {
    EvalPair p;
    p.name = entry.name;
    try {
      p.enhanced = load_image(entry.low);
      p.reference = load_image(entry.ref);
    } catch (const ImageIoError& e) {
      std::cerr << "error: " << entry.name << ": " << e.what() << "\n";
    }
    pairs.push_back(std::move(p));
  }
  MetricReport report = evaluate_pairs(pairs);
  for (const auto& err : report.errors) std::cerr << "error: " << err << "\n";

  fs::create_directories(rc.out);
  const fs::path csv_path = fs::path(rc.out) / "metrics.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw ImageIoError("cannot write '" + csv_path.string() + "'");
  write_metrics_csv(report, csv);
  std::cout << "mean psnr " << report.mean_psnr << " dB, mean ssim " << report.mean_ssim << " ("
            << report.per_image.size() << " pair(s), " << csv_path.string() << ")\n";
  return report.per_image.empty() ? 1 : 0;
}

int run_inspect(CliState& st) {
  RunConfig& rc = st.rc;
  require(rc.input, "--input");
  Tensor image = load_image(rc.input);
  const Shape s = image.shape();
  const int pb = s.h % 2, pr = s.w % 2;
  if (pb || pr) {
    std::cerr << "note: reflect-padding " << s.str() << " to even extents\n";
    image = pad2d(image, 0, pb, 0, pr, PadMode::kReflect);
  }
  SubBands bands = dwt(image);

  fs::create_directories(rc.out);
  const std::string stem = fs::path(rc.input).stem().string();
  const SubBands display = normalize_subbands(bands, 1.0);
  const std::pair<const char*, const Tensor*> outputs[4] = {
      {"ll", &display.ll}, {"lh", &display.lh}, {"hl", &display.hl}, {"hh", &display.hh}};
  for (const auto& [suffix, band] : outputs) {
    const fs::path dest = fs::path(rc.out) / (stem + "." + suffix + ".png");
    save_image(clamp(*band, 0.0, 1.0), dest);
    std::cout << dest.string() << "\n";
  }

  if (rc.roundtrip) {
    Tensor rebuilt = idwt(bands);
    double worst = 0.0;
    const auto& a = rebuilt.data();
    const auto& b = image.data();
    for (std::size_t i = 0; i < a.size(); ++i)
      worst = std::max(worst, std::fabs(a[i] - b[i]));
    std::cout << "roundtrip max abs error " << worst << "\n";
    if (worst > 1e-10) {
      std::cerr << "roundtrip failed: error above 1e-10\n";
      return 1;
    }
  }
  return 0;
}

std::unique_ptr<CLI::App> build_app(CliState& st) {
  auto app = std::make_unique<CLI::App>("low-light image enhancement in the wavelet domain");
  app->require_subcommand(0, 1);

  CLI::App* train_cmd =
      app->add_subcommand("train", "train a model on a paired low/normal-light dataset");
  register_fields(train_cmd, kCmdTrain, st);
  CLI::App* enhance_cmd =
      app->add_subcommand("enhance", "run a checkpoint over images and write PNGs");
  register_fields(enhance_cmd, kCmdEnhance, st);
  CLI::App* eval_cmd =
      app->add_subcommand("eval", "score an enhanced directory against references (PSNR/SSIM)");
  register_fields(eval_cmd, kCmdEval, st);
  CLI::App* inspect_cmd =
      app->add_subcommand("inspect", "emit the four wavelet sub-bands of an image");
  register_fields(inspect_cmd, kCmdInspect, st);
  return app;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CliState st;
  auto app = build_app(st);
  try {
    app->parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app->exit(e);
  } catch (const CLI::ParseError& e) {
    app->exit(e);
    return 2;
  }

  CLI::App* active = nullptr;
  for (CLI::App* sub : app->get_subcommands()) active = sub;
  if (!active) {
    std::cout << app->help();
    return 2;
  }

  try {
    finish_config(st);
    const std::string name = active->get_name();
    if (name == "train") return run_train(st);
    if (name == "enhance") return run_enhance(st);
    if (name == "eval") return run_eval(st);
    return run_inspect(st);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

std::string cli_help_text() {
  CliState st;
  auto app = build_app(st);
  std::string text = app->help();
  for (const CLI::App* sub :
       app->get_subcommands([](const CLI::App*) { return true; }))
    text += "\n" + sub->help();
  return text;
}

}  // namespace r2mw

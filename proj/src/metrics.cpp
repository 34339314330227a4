#include "r2mw/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace r2mw {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_pair(const Tensor& e, const Tensor& g, const char* who) {
  if (!e.defined() || !g.defined()) fail(std::string(who) + ": undefined tensor");
  if (!(e.shape() == g.shape()))
    fail(std::string(who) + ": shape mismatch " + e.shape().str() + " vs " + g.shape().str());
}

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

// 11x11 Gaussian window normalized to sum 1.
const std::vector<double>& ssim_window() {
  static const std::vector<double> win = [] {
    std::vector<double> w(kWindow * kWindow);
    const double mu = (kWindow - 1) / 2.0;
    double total = 0.0;
    for (int i = 0; i < kWindow; ++i)
      for (int j = 0; j < kWindow; ++j) {
        const double v = std::exp(-((i - mu) * (i - mu) + (j - mu) * (j - mu)) /
                                  (2.0 * kWindowSigma * kWindowSigma));
        w[i * kWindow + j] = v;
        total += v;
      }
    for (auto& v : w) v /= total;
    return w;
  }();
  return win;
}

}  // namespace

double psnr(const Tensor& enhanced, const Tensor& reference) {
  check_pair(enhanced, reference, "psnr");
  const auto& e = enhanced.data();
  const auto& g = reference.data();
  double mse = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double d = e[i] - g[i];
    mse += d * d;
  }
  mse /= double(e.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double ssim_windowed(const Tensor& enhanced, const Tensor& reference) {
  check_pair(enhanced, reference, "ssim_windowed");
  const Shape s = enhanced.shape();
  if (s.h < kWindow || s.w < kWindow)
    fail("ssim_windowed: image " + s.str() + " smaller than the " + std::to_string(kWindow) +
         "x" + std::to_string(kWindow) + " window");
  const auto& win = ssim_window();
  const auto& ed = enhanced.data();
  const auto& gd = reference.data();

  double batch_acc = 0.0;
  for (int n = 0; n < s.n; ++n) {
    double channel_acc = 0.0;
    for (int c = 0; c < s.c; ++c) {
      double pos_acc = 0.0;
      const int ph = s.h - kWindow + 1;
      const int pw = s.w - kWindow + 1;
      for (int i = 0; i < ph; ++i) {
        for (int j = 0; j < pw; ++j) {
          double me = 0.0, mg = 0.0, ee = 0.0, gg = 0.0, eg = 0.0;
          for (int di = 0; di < kWindow; ++di) {
            for (int dj = 0; dj < kWindow; ++dj) {
              const double w = win[di * kWindow + dj];
              const double ev = ed[s.index(n, i + di, j + dj, c)];
              const double gv = gd[s.index(n, i + di, j + dj, c)];
              me += w * ev;
              mg += w * gv;
              ee += w * ev * ev;
              gg += w * gv * gv;
              eg += w * ev * gv;
            }
          }
          const double var_e = ee - me * me;
          const double var_g = gg - mg * mg;
          const double cov = eg - me * mg;
          const double num = (2.0 * me * mg + kC1) * (2.0 * cov + kC2);
          const double den = (me * me + mg * mg + kC1) * (var_e + var_g + kC2);
          pos_acc += num / den;
        }
      }
      channel_acc += pos_acc / (double(ph) * pw);
    }
    batch_acc += channel_acc / s.c;
  }
  return batch_acc / s.n;
}

MetricReport evaluate_pairs(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) fail("evaluate_pairs: empty pair list");
  MetricReport report;
  double psnr_acc = 0.0, ssim_acc = 0.0;
  for (const auto& p : pairs) {
    if (!p.enhanced.defined() || !p.reference.defined() ||
        !(p.enhanced.shape() == p.reference.shape())) {
      report.errors.push_back(p.name + ": shape mismatch or missing image");
      continue;
    }
    MetricReport::Entry entry;
    entry.name = p.name;
    try {
      entry.psnr_db = psnr(p.enhanced, p.reference);
      entry.ssim = ssim_windowed(p.enhanced, p.reference);
    } catch (const std::exception& e) {
      report.errors.push_back(p.name + ": " + e.what());
      continue;
    }
    psnr_acc += entry.psnr_db;
    ssim_acc += entry.ssim;
    report.per_image.push_back(std::move(entry));
  }
  const double count = double(report.per_image.size());
  report.mean_psnr = count > 0 ? psnr_acc / count : std::numeric_limits<double>::quiet_NaN();
  report.mean_ssim = count > 0 ? ssim_acc / count : std::numeric_limits<double>::quiet_NaN();
  return report;
}

void write_metrics_csv(const MetricReport& report, std::ostream& out) {
  out << "name,psnr_db,ssim\n";
  char buf[160];
  for (const auto& e : report.per_image) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f\n", e.name.c_str(), e.psnr_db, e.ssim);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "MEAN,%.6f,%.6f\n", report.mean_psnr, report.mean_ssim);
  out << buf;
}

}  // namespace r2mw

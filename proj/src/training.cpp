#include "r2mw/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace r2mw {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

// Quarter-turn clockwise: out(i, j) = in(H-1-j, i), so (H,W) becomes (W,H).
Tensor rot90cw(const Tensor& x) {
  const Shape s = x.shape();
  const Shape os{s.n, s.w, s.h, s.c};
  std::vector<double> out(os.count());
  const auto& d = x.data();
  for (int n = 0; n < s.n; ++n)
    for (int i = 0; i < os.h; ++i)
      for (int j = 0; j < os.w; ++j) {
        const std::size_t src = s.index(n, s.h - 1 - j, i, 0);
        const std::size_t dst = os.index(n, i, j, 0);
        for (int c = 0; c < s.c; ++c) out[dst + c] = d[src + c];
      }
  return Tensor::from_data(os, std::move(out));
}

Tensor flip_h(const Tensor& x) {
  const Shape s = x.shape();
  std::vector<double> out(s.count());
  const auto& d = x.data();
  for (int n = 0; n < s.n; ++n)
    for (int i = 0; i < s.h; ++i)
      for (int j = 0; j < s.w; ++j) {
        const std::size_t src = s.index(n, i, s.w - 1 - j, 0);
        const std::size_t dst = s.index(n, i, j, 0);
        for (int c = 0; c < s.c; ++c) out[dst + c] = d[src + c];
      }
  return Tensor::from_data(s, std::move(out));
}

std::string format_row(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.epoch, r.step,
                r.total, r.pixel, r.global_part, r.edge, r.channel, r.lr);
  return buf;
}

}  // namespace

void adam_step(ModelParams& params, AdamState& st) {
  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, double(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, double(st.t));
  for (auto& [name, p] : params.map()) {
    if (!p.has_grad())
      throw std::logic_error("adam_step: parameter '" + name + "' has no gradient");
    const auto& g = p.grad();
    auto& [m, v] = st.moments[name];
    if (m.size() != g.size()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    auto& data = p.data_mut();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

double schedule_update(PlateauSchedule& s, double epoch_loss, double current_lr) {
  if (!std::isfinite(epoch_loss))
    throw std::runtime_error("schedule_update: non-finite epoch loss");
  if (epoch_loss < s.best) {
    s.best = epoch_loss;
    s.wait = 0;
    return current_lr;
  }
  s.wait += 1;
  if (s.wait > s.patience) {
    s.wait = 0;
    return std::max(current_lr * s.factor, s.min_lr);
  }
  return current_lr;
}

Tensor dihedral(const Tensor& x, int k) {
  if (k < 0 || k >= 8) fail("dihedral: index must lie in [0,8)");
  Tensor out = x.detach(false);
  for (int r = 0; r < (k & 3); ++r) out = rot90cw(out);
  if (k & 4) out = flip_h(out);
  return out;
}

int dihedral_inverse(int k) {
  if (k < 0 || k >= 8) fail("dihedral_inverse: index must lie in [0,8)");
  // The group is small; resolve inverses against a probe once.
  static const std::array<int, 8> table = [] {
    std::array<int, 8> t{};
    Tensor probe = Tensor::from_data(Shape{1, 2, 3, 1}, {1, 2, 3, 4, 5, 6});
    for (int a = 0; a < 8; ++a) {
      for (int b = 0; b < 8; ++b) {
        Tensor round = dihedral(dihedral(probe, a), b);
        if (round.shape() == probe.shape() && round.data() == probe.data()) {
          t[a] = b;
          break;
        }
      }
    }
    return t;
  }();
  return table[k];
}

std::pair<Tensor, Tensor> augment(const Tensor& low, const Tensor& ref, std::mt19937_64& rng) {
  if (!(low.shape() == ref.shape()))
    fail("augment: shape mismatch " + low.shape().str() + " vs " + ref.shape().str());
  std::uniform_int_distribution<int> dist(0, 7);
  const int k = dist(rng);
  return {dihedral(low, k), dihedral(ref, k)};
}

TrainResult train(const std::vector<ImagePair>& dataset, const NetworkConfig& net,
                  const LossConfig& loss_cfg, const TrainOptions& opts) {
  if (dataset.empty()) fail("train: empty dataset");
  const int divisor = 1 << net.levels;
  if (opts.patch % divisor != 0)
    fail("train: patch " + std::to_string(opts.patch) + " not divisible by 2^levels = " +
         std::to_string(divisor));
  if (opts.batch < 1) fail("train: batch must be >= 1");

  // Deterministic split of the run seed into independent streams.
  std::mt19937_64 data_rng(splitmix64(opts.seed ^ 0x64617461ull));

  TrainResult result;
  Checkpoint ck;
  AdamState adam;
  PlateauSchedule sched;
  sched.patience = opts.patience;
  sched.factor = opts.lr_factor;
  sched.min_lr = opts.min_lr;
  adam.lr = opts.lr;
  int start_epoch = 0;

  if (!opts.resume.empty()) {
    ck = load_checkpoint(opts.resume);
    validate_checkpoint(ck, net);
    adam.lr = ck.opt_lr;
    adam.beta1 = ck.opt_beta1;
    adam.beta2 = ck.opt_beta2;
    adam.eps = ck.opt_eps;
    adam.t = ck.opt_t;
    adam.moments = ck.opt_moments;
    sched.best = ck.sched_best;
    sched.wait = ck.sched_wait;
    sched.patience = ck.sched_patience;
    sched.factor = ck.sched_factor;
    sched.min_lr = ck.sched_min_lr;
    start_epoch = ck.epoch + 1;
  } else {
    ck.net = net;
    ck.params = init_params(net, splitmix64(opts.seed ^ 0x696e6974ull));
    ck.seed = opts.seed;
  }

  PerceptualExtractor ext = opts.perc_weights.empty()
                                ? PerceptualExtractor::seeded()
                                : PerceptualExtractor::from_file(opts.perc_weights);

  // Validation tail (optional): pairs at the end of the sorted dataset.
  std::size_t val_count = 0;
  if (opts.val_fraction > 0.0)
    val_count = std::min(dataset.size() - 1,
                         std::size_t(std::llround(opts.val_fraction * double(dataset.size()))));
  const std::size_t train_count = dataset.size() - val_count;

  std::ofstream csv;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    result.csv_path = opts.out_dir / "loss.csv";
    csv.open(result.csv_path, std::ios::trunc);
    if (!csv) fail("train: cannot write '" + result.csv_path.string() + "'");
    csv << "epoch,step,total,pixel,global,edge,channel,lr\n";
  }

  auto crop_pair = [&](const ImagePair& pair) -> std::pair<Tensor, Tensor> {
    const Shape s = pair.low.shape();
    if (s.h < opts.patch || s.w < opts.patch)
      fail("train: image '" + pair.name + "' (" + s.str() + ") smaller than patch " +
           std::to_string(opts.patch));
    std::uniform_int_distribution<int> dh(0, s.h - opts.patch);
    std::uniform_int_distribution<int> dw(0, s.w - opts.patch);
    const int oh = dh(data_rng);
    const int ow = dw(data_rng);
    NoGradGuard no_grad;
    return {crop2d(pair.low, oh, opts.patch, ow, opts.patch),
            crop2d(pair.ref, oh, opts.patch, ow, opts.patch)};
  };

  double best_metric = sched.best;
  long global_step = long(adam.t);
  std::vector<std::size_t> order(train_count);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = start_epoch; epoch < opts.epochs && !result.aborted; ++epoch) {
    std::shuffle(order.begin(), order.end(), data_rng);
    std::vector<double> epoch_totals;

    for (std::size_t base = 0; base < order.size(); base += std::size_t(opts.batch)) {
      const std::size_t stop = std::min(order.size(), base + std::size_t(opts.batch));
      std::vector<Tensor> lows, refs;
      for (std::size_t i = base; i < stop; ++i) {
        auto [low, ref] = crop_pair(dataset[order[i]]);
        if (opts.augment) {
          auto [alow, aref] = augment(low, ref, data_rng);
          low = alow;
          ref = aref;
        }
        lows.push_back(low);
        refs.push_back(ref);
      }
      Tensor batch_low = lows.size() == 1 ? lows[0] : concat_batch(lows);
      Tensor batch_ref = refs.size() == 1 ? refs[0] : concat_batch(refs);

      ck.params.zero_grad();
      Tensor out = forward(batch_low, ck.params, net);
      LossBreakdown lb = total_loss(out, batch_ref, ext, loss_cfg);
      const double total = lb.total.item();
      if (!std::isfinite(total)) {
        result.aborted = true;
        result.abort_reason = "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(global_step);
        break;
      }
      lb.total.backward();

      if (opts.grad_clip > 0.0) {
        double norm_sq = 0.0;
        for (const auto& [name, p] : ck.params.map())
          if (p.has_grad())
            for (double g : p.grad()) norm_sq += g * g;
        const double norm = std::sqrt(norm_sq);
        if (norm > opts.grad_clip) {
          const double scale_by = opts.grad_clip / norm;
          for (auto& [name, p] : ck.params.map())
            if (p.has_grad()) {
              auto* node = p.node();
              for (auto& g : node->grad) g *= scale_by;
            }
        }
      }

      adam_step(ck.params, adam);
      ++global_step;

      StepRecord rec{epoch, global_step, total, lb.pixel, lb.global_part, lb.edge, lb.channel,
                     adam.lr};
      if (csv.is_open()) csv << format_row(rec) << "\n";
      result.history.push_back(rec);
      epoch_totals.push_back(total);
    }
    if (result.aborted) break;

    double epoch_metric = 0.0;
    if (val_count > 0) {
      NoGradGuard no_grad;
      double acc = 0.0;
      for (std::size_t i = train_count; i < dataset.size(); ++i) {
        const ImagePair& pair = dataset[i];
        const Shape s = pair.low.shape();
        const int vh = (s.h / divisor) * divisor;
        const int vw = (s.w / divisor) * divisor;
        Tensor low = crop2d(pair.low, 0, vh, 0, vw);
        Tensor ref = crop2d(pair.ref, 0, vh, 0, vw);
        Tensor out = forward(low, ck.params, net);
        acc += total_loss(out, ref, ext, loss_cfg).total.item();
      }
      epoch_metric = acc / double(val_count);
    } else {
      epoch_metric = std::accumulate(epoch_totals.begin(), epoch_totals.end(), 0.0) /
                     double(epoch_totals.size());
    }

    const bool improved = epoch_metric < best_metric;
    if (improved) best_metric = epoch_metric;
    adam.lr = schedule_update(sched, epoch_metric, adam.lr);

    ck.epoch = epoch;
    ck.opt_lr = adam.lr;
    ck.opt_beta1 = adam.beta1;
    ck.opt_beta2 = adam.beta2;
    ck.opt_eps = adam.eps;
    ck.opt_t = adam.t;
    ck.opt_moments = adam.moments;
    ck.sched_best = sched.best;
    ck.sched_wait = sched.wait;
    ck.sched_patience = sched.patience;
    ck.sched_factor = sched.factor;
    ck.sched_min_lr = sched.min_lr;

    if (!opts.out_dir.empty()) {
      result.last_path = opts.out_dir / "last.ckpt";
      save_checkpoint(ck, result.last_path);
      if (improved) {
        result.best_path = opts.out_dir / "best.ckpt";
        save_checkpoint(ck, result.best_path);
      }
    }
  }

  result.checkpoint = std::move(ck);
  return result;
}

}  // namespace r2mw

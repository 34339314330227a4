#include "r2mw/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace r2mw {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'R', '2', 'M', 'W'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  unsigned char b[4];
  std::memcpy(b, &v, 4);
  out.insert(out.end(), b, b + 4);
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  unsigned char b[8];
  std::memcpy(b, &v, 8);
  out.insert(out.end(), b, b + 8);
}

struct Reader {
  const unsigned char* p;
  std::size_t size;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > size)
      throw TruncatedError(std::string("checkpoint truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, p + pos, 4);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v;
    std::memcpy(&v, p + pos, 8);
    pos += 8;
    return v;
  }
};

Tensor scalar_tensor(double v) { return Tensor::scalar(v); }

double read_scalar(const std::map<std::string, Tensor>& t, const std::string& name) {
  auto it = t.find(name);
  if (it == t.end()) throw CheckpointError("checkpoint: missing entry '" + name + "'");
  if (it->second.numel() != 1)
    throw CheckpointError("checkpoint: entry '" + name + "' is not a scalar");
  return it->second.data()[0];
}

}  // namespace

void save_named_tensors(const std::filesystem::path& path,
                        const std::map<std::string, Tensor>& tensors) {
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32(buf, kCheckpointVersion);
  put_u64(buf, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_u32(buf, std::uint32_t(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    put_u32(buf, 4);
    const Shape s = t.shape();
    put_u64(buf, std::uint64_t(s.n));
    put_u64(buf, std::uint64_t(s.h));
    put_u64(buf, std::uint64_t(s.w));
    put_u64(buf, std::uint64_t(s.c));
    const auto& d = t.data();
    const auto* bytes = reinterpret_cast<const unsigned char*>(d.data());
    buf.insert(buf.end(), bytes, bytes + d.size() * sizeof(double));
  }
  const std::uint32_t crc =
      std::uint32_t(::crc32(0L, buf.data(), uInt(buf.size())));
  put_u32(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for '" + path.string() + "'");
}

std::map<std::string, Tensor> load_named_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());

  Reader r{buf.data(), buf.size()};
  r.need(4, "magic");
  if (std::memcmp(r.p, kMagic, 4) != 0)
    throw CheckpointError("checkpoint: '" + path.string() + "' is not a checkpoint file");
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw VersionMismatchError("checkpoint: version " + std::to_string(version) +
                               " unsupported (expected " + std::to_string(kCheckpointVersion) +
                               ")");
  const std::uint64_t count = r.u64("tensor count");

  std::map<std::string, Tensor> tensors;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("name length");
    r.need(name_len, "name");
    std::string name(reinterpret_cast<const char*>(r.p + r.pos), name_len);
    r.pos += name_len;
    const std::uint32_t rank = r.u32("rank");
    if (rank != 4)
      throw CheckpointError("checkpoint: tensor '" + name + "' has rank " +
                            std::to_string(rank) + ", expected 4");
    Shape s;
    s.n = int(r.u64("dim"));
    s.h = int(r.u64("dim"));
    s.w = int(r.u64("dim"));
    s.c = int(r.u64("dim"));
    if (s.n <= 0 || s.h <= 0 || s.w <= 0 || s.c <= 0)
      throw CheckpointError("checkpoint: tensor '" + name + "' has invalid shape " + s.str());
    const std::size_t bytes = s.count() * sizeof(double);
    r.need(bytes, "tensor data");
    std::vector<double> data(s.count());
    std::memcpy(data.data(), r.p + r.pos, bytes);
    r.pos += bytes;
    tensors.emplace(std::move(name), Tensor::from_data(s, std::move(data)));
  }

  r.need(4, "checksum");
  std::uint32_t stored;
  std::memcpy(&stored, r.p + r.pos, 4);
  const std::uint32_t computed = std::uint32_t(::crc32(0L, buf.data(), uInt(r.pos)));
  if (stored != computed)
    throw ChecksumError("checkpoint: CRC mismatch in '" + path.string() + "'");
  r.pos += 4;
  if (r.pos != buf.size())
    throw CheckpointError("checkpoint: trailing bytes after checksum in '" + path.string() + "'");
  return tensors;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::map<std::string, Tensor> t;
  for (const auto& [name, p] : ck.params.map()) t.emplace("param." + name, p.detach(false));
  for (const auto& [name, mv] : ck.opt_moments) {
    const Shape s = ck.params.at(name).shape();
    t.emplace("opt.m." + name, Tensor::from_data(s, mv.first));
    t.emplace("opt.v." + name, Tensor::from_data(s, mv.second));
  }
  t.emplace("opt.lr", scalar_tensor(ck.opt_lr));
  t.emplace("opt.beta1", scalar_tensor(ck.opt_beta1));
  t.emplace("opt.beta2", scalar_tensor(ck.opt_beta2));
  t.emplace("opt.eps", scalar_tensor(ck.opt_eps));
  t.emplace("opt.t", scalar_tensor(double(ck.opt_t)));
  t.emplace("sched.best", scalar_tensor(ck.sched_best));
  t.emplace("sched.wait", scalar_tensor(double(ck.sched_wait)));
  t.emplace("sched.patience", scalar_tensor(double(ck.sched_patience)));
  t.emplace("sched.factor", scalar_tensor(ck.sched_factor));
  t.emplace("sched.min_lr", scalar_tensor(ck.sched_min_lr));
  t.emplace("meta.epoch", scalar_tensor(double(ck.epoch)));
  t.emplace("meta.seed_hi", scalar_tensor(double(ck.seed >> 32)));
  t.emplace("meta.seed_lo", scalar_tensor(double(ck.seed & 0xffffffffull)));
  t.emplace("meta.levels", scalar_tensor(double(ck.net.levels)));
  t.emplace("meta.base_channels", scalar_tensor(double(ck.net.base_channels)));
  t.emplace("meta.msc_depth", scalar_tensor(double(ck.net.msc_depth)));
  t.emplace("meta.global_residual", scalar_tensor(ck.net.global_residual ? 1.0 : 0.0));
  t.emplace("meta.alpha", scalar_tensor(ck.net.alpha));
  t.emplace("meta.attention_reduction", scalar_tensor(double(ck.net.attention_reduction)));
  t.emplace("meta.in_channels", scalar_tensor(double(ck.net.in_channels)));
  save_named_tensors(path, t);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto t = load_named_tensors(path);
  Checkpoint ck;
  ck.net.levels = int(read_scalar(t, "meta.levels"));
  ck.net.base_channels = int(read_scalar(t, "meta.base_channels"));
  ck.net.msc_depth = int(read_scalar(t, "meta.msc_depth"));
  ck.net.global_residual = read_scalar(t, "meta.global_residual") != 0.0;
  ck.net.alpha = read_scalar(t, "meta.alpha");
  ck.net.attention_reduction = int(read_scalar(t, "meta.attention_reduction"));
  ck.net.in_channels = int(read_scalar(t, "meta.in_channels"));
  ck.epoch = int(read_scalar(t, "meta.epoch"));
  ck.seed = (std::uint64_t(read_scalar(t, "meta.seed_hi")) << 32) |
            std::uint64_t(read_scalar(t, "meta.seed_lo"));
  ck.opt_lr = read_scalar(t, "opt.lr");
  ck.opt_beta1 = read_scalar(t, "opt.beta1");
  ck.opt_beta2 = read_scalar(t, "opt.beta2");
  ck.opt_eps = read_scalar(t, "opt.eps");
  ck.opt_t = std::int64_t(read_scalar(t, "opt.t"));
  ck.sched_best = read_scalar(t, "sched.best");
  ck.sched_wait = int(read_scalar(t, "sched.wait"));
  ck.sched_patience = int(read_scalar(t, "sched.patience"));
  ck.sched_factor = read_scalar(t, "sched.factor");
  ck.sched_min_lr = read_scalar(t, "sched.min_lr");

  for (auto& [name, tensor] : t) {
    if (name.rfind("param.", 0) == 0)
      ck.params.add(name.substr(6), tensor.detach(true));
  }
  for (auto& [name, tensor] : t) {
    if (name.rfind("opt.m.", 0) == 0) {
      const std::string pname = name.substr(6);
      auto vit = t.find("opt.v." + pname);
      if (vit == t.end())
        throw CheckpointError("checkpoint: first moment without second moment for '" + pname +
                              "'");
      if (!ck.params.contains(pname))
        throw CheckpointError("checkpoint: optimizer state for unknown parameter '" + pname +
                              "'");
      ck.opt_moments.emplace(pname,
                             std::make_pair(tensor.data(), vit->second.data()));
    }
  }
  return ck;
}

void validate_checkpoint(const Checkpoint& ck, const NetworkConfig& cfg) {
  ModelParams expected = init_params(cfg, 0);
  if (expected.size() != ck.params.size())
    throw MismatchError("checkpoint holds " + std::to_string(ck.params.size()) +
                        " parameters, network needs " + std::to_string(expected.size()));
  auto eit = expected.map().begin();
  for (const auto& [name, t] : ck.params.map()) {
    if (eit->first != name)
      throw MismatchError("checkpoint parameter '" + name + "' does not match expected '" +
                          eit->first + "'");
    if (!(eit->second.shape() == t.shape()))
      throw MismatchError("checkpoint parameter '" + name + "' has shape " + t.shape().str() +
                          ", network needs " + eit->second.shape().str());
    ++eit;
  }
}

}  // namespace r2mw

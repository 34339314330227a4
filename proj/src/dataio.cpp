#include "r2mw/dataio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace r2mw {

namespace {

struct PngRead {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngRead() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngWrite {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWrite() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

bool is_png_name(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

// Width/height straight out of the IHDR chunk (always first, fixed layout).
std::pair<int, int> png_dimensions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open '" + path.string() + "'");
  unsigned char head[24];
  in.read(reinterpret_cast<char*>(head), sizeof head);
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (in.gcount() != sizeof head || std::memcmp(head, sig, 8) != 0 ||
      std::memcmp(head + 12, "IHDR", 4) != 0)
    throw CorruptImageError("'" + path.string() + "' is not a PNG file");
  auto be32 = [&](int off) {
    return (std::uint32_t(head[off]) << 24) | (std::uint32_t(head[off + 1]) << 16) |
           (std::uint32_t(head[off + 2]) << 8) | std::uint32_t(head[off + 3]);
  };
  return {int(be32(20)), int(be32(16))};  // (height, width)
}

}  // namespace

Tensor load_image(const std::filesystem::path& path) {
  PngRead ctx;
  ctx.fp = std::fopen(path.string().c_str(), "rb");
  if (!ctx.fp) throw ImageIoError("cannot open '" + path.string() + "'");

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, ctx.fp) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw CorruptImageError("'" + path.string() + "' is not a PNG file");

  ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) throw ImageIoError("libpng initialization failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw ImageIoError("libpng initialization failed");

  if (setjmp(png_jmpbuf(ctx.png)))
    throw CorruptImageError("truncated or corrupt PNG '" + path.string() + "'");

  png_init_io(ctx.png, ctx.fp);
  png_set_sig_bytes(ctx.png, 8);
  png_read_info(ctx.png, ctx.info);

  const int bit_depth = png_get_bit_depth(ctx.png, ctx.info);
  if (bit_depth == 16)
    throw UnsupportedImageError("16-bit PNG '" + path.string() + "' is not supported (8-bit only)");
  const int color_type = png_get_color_type(ctx.png, ctx.info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(ctx.png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(ctx.png);
  if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(ctx.png);
  png_set_strip_alpha(ctx.png);
  png_set_interlace_handling(ctx.png);
  png_read_update_info(ctx.png, ctx.info);

  const png_uint_32 width = png_get_image_width(ctx.png, ctx.info);
  const png_uint_32 height = png_get_image_height(ctx.png, ctx.info);
  const std::size_t rowbytes = png_get_rowbytes(ctx.png, ctx.info);
  if (rowbytes != std::size_t(width) * 3)
    throw UnsupportedImageError("unexpected pixel layout in '" + path.string() + "'");

  std::vector<unsigned char> pixels(std::size_t(height) * rowbytes);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = pixels.data() + std::size_t(r) * rowbytes;
  png_read_image(ctx.png, rows.data());
  png_read_end(ctx.png, nullptr);

  std::vector<double> data(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) data[i] = pixels[i] / 255.0;
  return Tensor::from_data(Shape{1, int(height), int(width), 3}, std::move(data));
}

void save_image(const Tensor& image, const std::filesystem::path& path) {
  if (!image.defined()) throw ImageIoError("save_image: undefined tensor");
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3)
    throw ImageIoError("save_image: expected shape (1,H,W,3), got " + s.str());

  const auto& d = image.data();
  std::vector<unsigned char> pixels(d.size());
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double v = d[i];
    if (v < 0.0 || v > 1.0 || !std::isfinite(v)) {
      v = std::isfinite(v) ? std::min(std::max(v, 0.0), 1.0) : 0.0;
      ++clamped;
    }
    pixels[i] = static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
  }
  if (clamped > 0)
    std::fprintf(stderr, "save_image: clamped %zu out-of-range values in '%s'\n", clamped,
                 path.string().c_str());

  PngWrite ctx;
  ctx.fp = std::fopen(path.string().c_str(), "wb");
  if (!ctx.fp) throw ImageIoError("cannot open '" + path.string() + "' for writing");
  ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!ctx.png) throw ImageIoError("libpng initialization failed");
  ctx.info = png_create_info_struct(ctx.png);
  if (!ctx.info) throw ImageIoError("libpng initialization failed");
  if (setjmp(png_jmpbuf(ctx.png)))
    throw ImageIoError("PNG write failed for '" + path.string() + "'");

  png_init_io(ctx.png, ctx.fp);
  png_set_IHDR(ctx.png, ctx.info, png_uint_32(s.w), png_uint_32(s.h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(ctx.png, ctx.info);
  std::vector<png_bytep> rows(s.h);
  for (int r = 0; r < s.h; ++r) rows[r] = pixels.data() + std::size_t(r) * s.w * 3;
  png_write_image(ctx.png, rows.data());
  png_write_end(ctx.png, nullptr);
}

ScanResult scan_pairs(const std::filesystem::path& low_dir,
                      const std::filesystem::path& ref_dir) {
  namespace fs = std::filesystem;
  for (const auto& dir : {low_dir, ref_dir})
    if (!fs::is_directory(dir))
      throw ImageIoError("'" + dir.string() + "' is not a directory");

  auto list_pngs = [](const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && is_png_name(entry.path()))
        names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
  };

  const auto low_names = list_pngs(low_dir);
  const auto ref_names = list_pngs(ref_dir);

  ScanResult result;
  for (const auto& name : low_names) {
    if (!std::binary_search(ref_names.begin(), ref_names.end(), name)) {
      result.warnings.push_back("unmatched low image '" + name + "'");
      continue;
    }
    const fs::path low = low_dir / name;
    const fs::path ref = ref_dir / name;
    const auto [lh, lw] = png_dimensions(low);
    const auto [rh, rw] = png_dimensions(ref);
    if (lh != rh || lw != rw) {
      result.warnings.push_back("pair '" + name + "' rejected: dimension mismatch " +
                                std::to_string(lw) + "x" + std::to_string(lh) + " vs " +
                                std::to_string(rw) + "x" + std::to_string(rh));
      continue;
    }
    result.pairs.push_back(PairEntry{name, low, ref, lh, lw});
  }
  for (const auto& name : ref_names)
    if (!std::binary_search(low_names.begin(), low_names.end(), name))
      result.warnings.push_back("unmatched reference image '" + name + "'");

  if (result.pairs.empty())
    throw ImageIoError("no matching image pairs between '" + low_dir.string() + "' and '" +
                       ref_dir.string() + "'");
  return result;
}

std::vector<ImagePair> load_pairs(const ScanResult& scan) {
  std::vector<ImagePair> pairs;
  pairs.reserve(scan.pairs.size());
  for (const auto& entry : scan.pairs)
    pairs.push_back(ImagePair{entry.name, load_image(entry.low), load_image(entry.ref)});
  return pairs;
}

}  // namespace r2mw

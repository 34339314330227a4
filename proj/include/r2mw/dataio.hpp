#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "r2mw/tensor.hpp"

namespace r2mw {

struct ImageIoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnsupportedImageError : ImageIoError {
  using ImageIoError::ImageIoError;
};
struct CorruptImageError : ImageIoError {
  using ImageIoError::ImageIoError;
};

/// Reads an 8-bit RGB or grayscale PNG into (1,H,W,3) scaled to [0,1];
/// grayscale replicates across channels, palette images expand, alpha is
/// dropped. 16-bit files raise UnsupportedImageError; damaged files raise
/// CorruptImageError.
Tensor load_image(const std::filesystem::path& path);

/// Writes (1,H,W,3) as an 8-bit RGB PNG, quantizing round-to-nearest with
/// ties away from zero. Out-of-range values are clamped with a warning on
/// stderr, never an exception.
void save_image(const Tensor& image, const std::filesystem::path& path);

struct PairEntry {
  std::string name;
  std::filesystem::path low;
  std::filesystem::path ref;
  int height = 0;
  int width = 0;
};

struct ScanResult {
  std::vector<PairEntry> pairs;       // lexicographic by filename
  std::vector<std::string> warnings;  // unmatched files, rejected pairs
};

/// Pairs PNGs by identical filename across the two directories. Unmatched
/// files and size-mismatched pairs are reported as warnings; zero matches is
/// an error.
ScanResult scan_pairs(const std::filesystem::path& low_dir,
                      const std::filesystem::path& ref_dir);

struct ImagePair {
  std::string name;
  Tensor low;
  Tensor ref;
};

std::vector<ImagePair> load_pairs(const ScanResult& scan);

}  // namespace r2mw

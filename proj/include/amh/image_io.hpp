#pragma once

#include "amh/datagen.hpp"
#include "amh/tensor_ops.hpp"

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace amh {

class ImageFormatError : public std::runtime_error {
 public:
  ImageFormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Rounds to the nearest of the 256 levels k/255 after clamping to [0,1].
Tensor quantize(const Tensor& x);

std::vector<unsigned char> encode_pgm(const Tensor& gray);
Tensor decode_pgm(const std::vector<unsigned char>& bytes);
void save_pgm(const std::string& path, const Tensor& gray);
Tensor load_pgm(const std::string& path);

std::vector<unsigned char> encode_png_gray(const Tensor& gray);
void save_png_gray(const std::string& path, const Tensor& gray);

struct ManifestEntry {
  std::string image;
  std::string mask;
};
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

/// Loads every pair; masks are binarised at 0.5. Relative paths resolve against the manifest's directory.
Dataset load_dataset(const std::string& manifest_path);

}  // namespace amh

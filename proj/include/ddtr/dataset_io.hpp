#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddtr/synthetic.hpp"

namespace ddtr {

inline constexpr const char* kAnnotationFile = "annotations.jsonl";

/// Malformed dataset file; the message names the file and line or byte offset.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes one 8-bit PGM (P5) per image plus annotations.jsonl. Pixels are
/// quantized to k/255 on write.
void write_dataset(const std::vector<AnnotatedImage>& images, const std::filesystem::path& directory);

/// Reads images in annotation-file order. A directory without files yields an
/// empty list.
std::vector<AnnotatedImage> read_dataset(const std::filesystem::path& directory);

void write_pgm(const RowMatrix& pixels, const std::filesystem::path& file);
RowMatrix read_pgm(const std::filesystem::path& file);

}  // namespace ddtr

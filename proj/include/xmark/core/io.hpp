#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xmark/core/tensor.hpp"

namespace xmark::io {

// Grayscale PNG, 8- or 16-bit, rescaled to [0,1] by the full bit range.
// Color or alpha channels are rejected.
Tensor read_png_gray(const std::string& path);
void write_png_gray8(const std::string& path, const Tensor& image_hw);

// Minimal CSV: comma-separated, newline rows, no quoting. Trailing \r is
// stripped; empty lines skipped.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

std::uint64_t fnv1a64(const void* data, std::size_t n);
std::uint64_t fnv1a64_str(const std::string& s);
std::string hex64(std::uint64_t v);

// Raw float blob: int32 h, int32 w, then h*w little-endian floats.
void write_f32_blob(const std::string& path, const Tensor& t_hw);
Tensor read_f32_blob(const std::string& path);

}  // namespace xmark::io

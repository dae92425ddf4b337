#pragma once

// Binary PPM (P6, RGB) and PGM (P5, grey / label) files with maxval 255.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bisenet/tensor.hpp"

namespace bisenet {

using Rgb = std::array<std::uint8_t, 3>;
using Palette = std::vector<Rgb>;

// (1, 3, h, w) with values 0..255. Throws kFormat with the byte offset of
// the first bad header field.
Tensor decode_ppm(const std::vector<std::uint8_t>& bytes);
Tensor read_ppm(const std::string& path);
// Values are rounded and clamped to 0..255; n must be 1 and c 3.
std::vector<std::uint8_t> encode_ppm(const Tensor& image);
void write_ppm(const Tensor& image, const std::string& path);

LabelMap decode_pgm(const std::vector<std::uint8_t>& bytes);
LabelMap read_pgm(const std::string& path);
// n must be 1; values outside 0..255 throw kData.
void write_pgm(const LabelMap& labels, const std::string& path);
std::vector<std::uint8_t> encode_pgm(const LabelMap& labels);

// Ignore / out-of-palette pixels are written black.
void write_color_mask(const LabelMap& labels, const Palette& palette, const std::string& path);

// Text lines "class r g b"; '#' starts a comment.
Palette read_palette(const std::string& path);
// Deterministic palette: a fixed street-scene table, then hashed colours.
Palette default_palette(std::int64_t num_classes);

// Text lines "image_path label_path"; relative paths resolve against the
// manifest's directory.
std::vector<std::pair<std::string, std::string>> read_manifest(const std::string& path);
void write_manifest(const std::vector<std::pair<std::string, std::string>>& entries, const std::string& path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace bisenet

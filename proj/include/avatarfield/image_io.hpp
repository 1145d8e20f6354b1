#pragma once

#include <filesystem>

#include "avatarfield/appearance.hpp"

namespace avatarfield {

// 8-bit PNG in, [0,1] doubles out. channels is 1 (gray) or 3 (RGB); the file
// is converted when its own layout differs.
Image read_png(const std::filesystem::path& path, int channels);
// Values are clamped to [0,1] and rounded to 8 bits.
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace avatarfield

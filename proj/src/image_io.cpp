#include "avatarfield/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "avatarfield/errors.hpp"

namespace avatarfield {

Image read_png(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) throw ContractError("read_png: channels must be 1 or 3");
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!std::filesystem::exists(path)) throw IoError("missing image file: " + path.string());
  if (png_image_begin_read_from_file(&img, path.c_str()) == 0) {
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr) == 0) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height), channels);
  for (Eigen::Index i = 0; i < out.pixels.size(); ++i) out.pixels.data()[i] = buf[static_cast<std::size_t>(i)] / 255.0;
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const auto ch = image.pixels.cols();
  if ((ch != 1 && ch != 3) || image.pixels.rows() != static_cast<Eigen::Index>(image.width) * image.height) {
    throw ContractError("write_png: image must be w*h x 1 or 3");
  }
  std::vector<png_byte> buf(static_cast<std::size_t>(image.pixels.size()));
  for (Eigen::Index i = 0; i < image.pixels.size(); ++i) {
    const double v = std::clamp(image.pixels.data()[i], 0.0, 1.0);
    buf[static_cast<std::size_t>(i)] = static_cast<png_byte>(std::lround(v * 255.0));
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = ch == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr) == 0) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

}  // namespace avatarfield

#include "poredet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "poredet/errors.hpp"

namespace poredet {

GrayImage::GrayImage(int height, int width, float fill)
    : GrayImage(height, width, std::vector<float>(static_cast<std::size_t>(std::max(height, 0)) *
                                                  std::max(width, 0), fill)) {}

GrayImage::GrayImage(int height, int width, std::vector<float> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height < 1 || width < 1) throw SizeMismatch("image dimensions must be positive");
  if (pixels_.size() != static_cast<std::size_t>(height) * width) {
    throw SizeMismatch("pixel count does not match image dimensions");
  }
}

GrayImage GrayImage::crop(int row, int col, int height, int width) const {
  if (row < 0 || col < 0 || row + height > height_ || col + width > width_) {
    throw SizeMismatch("crop window outside image");
  }
  GrayImage out(height, width);
  for (int r = 0; r < height; ++r) {
    std::copy_n(pixels_.begin() + static_cast<std::ptrdiff_t>(index(row + r, col)), width,
                out.pixels_.begin() + static_cast<std::ptrdiff_t>(r) * width);
  }
  return out;
}

FeatureMap GrayImage::to_tensor() const {
  FeatureMap t(1, height_, width_, 1);
  std::copy(pixels_.begin(), pixels_.end(), t.data());
  return t;
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

int header_int(std::istream& in, const char* what) {
  const std::string tok = header_token(in);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw FormatError(std::string("bad graymap ") + what + " '" + tok + "'");
  }
}

}  // namespace

GrayImage read_pgm(std::istream& in) {
  const std::string magic = header_token(in);
  if (magic != "P5" && magic != "P2") {
    throw FormatError("unsupported raster '" + magic + "': expected an 8-bit graymap (P5/P2)");
  }
  const int width = header_int(in, "width");
  const int height = header_int(in, "height");
  const int maxval = header_int(in, "maxval");
  if (width < 1 || height < 1) throw FormatError("graymap has non-positive dimensions");
  if (maxval < 1 || maxval > 255) {
    throw FormatError("graymap maxval " + std::to_string(maxval) + " is not 8-bit");
  }
  std::vector<float> pixels(static_cast<std::size_t>(width) * height);
  const float scale = static_cast<float>(maxval);
  if (magic == "P5") {
    std::vector<unsigned char> raw(pixels.size());
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
      throw FormatError("graymap pixel data is truncated");
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] > maxval) throw FormatError("graymap pixel exceeds maxval");
      pixels[i] = static_cast<float>(raw[i]) / scale;
    }
  } else {
    for (float& p : pixels) {
      int v = -1;
      if (!(in >> v) || v < 0 || v > maxval) throw FormatError("bad ASCII graymap pixel");
      p = static_cast<float>(v) / scale;
    }
  }
  return GrayImage(height, width, std::move(pixels));
}

GrayImage load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  try {
    return read_pgm(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_pgm(const GrayImage& image, std::ostream& out) {
  out << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
  std::vector<unsigned char> raw(image.pixels().size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float v = std::clamp(image.pixels()[i], 0.0f, 1.0f);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void save_image(const GrayImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image " + path.string());
  write_pgm(image, out);
  if (!out) throw IoError("failed writing image " + path.string());
}

}  // namespace poredet

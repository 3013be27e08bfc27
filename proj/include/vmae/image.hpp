#pragma once

// Channel-last float images in [0, 1] and binary netpbm (P5/P6) I/O.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vmae/error.hpp"

namespace vmae {

struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> data;  // row-major pixels, channel-last

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Luma with Rec. 601 weights; single-channel input is returned unchanged.
inline Image to_grayscale(const Image& img) {
  if (img.channels == 1) return img;
  Image out(img.height, img.width, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(y, x, 0) = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
  return out;
}

inline Image replicate_channels(const Image& gray, int channels = 3) {
  if (gray.channels != 1) throw Error(ErrorCode::kShapeMismatch, "replicate_channels expects one channel");
  Image out(gray.height, gray.width, channels);
  for (std::size_t i = 0; i < gray.data.size(); ++i)
    for (int c = 0; c < channels; ++c) out.data[i * channels + c] = gray.data[i];
  return out;
}

/// Rounds every value to the nearest 8-bit level so that a file round trip
/// is lossless.
inline void quantize_8bit(Image& img) {
  for (double& v : img.data) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

inline void write_netpbm(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw Error(ErrorCode::kShapeMismatch, "netpbm needs 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kFileUnreadable, "cannot write " + path.string());
  out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Image read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingImage, "cannot open " + path.string());
  auto next_token = [&in]() {
    std::string tok;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(ch);
    }
    return tok;
  };
  const std::string magic = next_token();
  if (magic != "P5" && magic != "P6") throw Error(ErrorCode::kParseError, path.string() + ": not a binary netpbm file");
  Image img;
  try {
    img.width = std::stoi(next_token());
    img.height = std::stoi(next_token());
    if (std::stoi(next_token()) != 255) throw Error(ErrorCode::kParseError, path.string() + ": only maxval 255");
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::kParseError, path.string() + ": bad header");
  }
  img.channels = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> bytes(static_cast<std::size_t>(img.width) * img.height * img.channels);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw Error(ErrorCode::kParseError, path.string() + ": truncated pixel data");
  }
  img.data.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

}  // namespace vmae

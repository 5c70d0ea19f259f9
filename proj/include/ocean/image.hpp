#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ocean/error.hpp"
#include "ocean/tensor.hpp"

namespace ocean {

/// 8-bit interleaved RGB image.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) {
    return rgb[(y * width + x) * 3 + c];
  }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
    return rgb[(y * width + x) * 3 + c];
  }

  std::array<double, 3> channel_means() const {
    std::array<double, 3> m{};
    const std::size_t n = width * height;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 3; ++c) m[c] += rgb[i * 3 + c];
    }
    for (auto& v : m) v /= static_cast<double>(n ? n : 1);
    return m;
  }

  bool operator==(const Image&) const = default;
};

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArtifactError("cannot write " + path.string());
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()),
           static_cast<std::streamsize>(img.rgb.size()));
  if (!os) throw ArtifactError("failed writing " + path.string());
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArtifactError("cannot open frame " + path.string());
  auto token = [&]() {
    std::string t;
    while (is >> t) {
      if (t[0] == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      return t;
    }
    throw ArtifactError("truncated PPM header in " + path.string());
  };
  if (token() != "P6") throw ArtifactError(path.string() + " is not a binary PPM (P6)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw ArtifactError("malformed PPM header in " + path.string());
  }
  if (maxval != 255 || w == 0 || h == 0) {
    throw ArtifactError("unsupported PPM format in " + path.string());
  }
  is.get();
  Image img(w, h);
  if (!is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()))) {
    throw ArtifactError("truncated PPM data in " + path.string());
  }
  return img;
}

/// Square crop of side `side` pixels centred on (cx, cy), resampled
/// bilinearly to out_size x out_size. Areas outside the frame are filled with
/// the frame's channel means. Values are scaled to [-0.5, 0.5].
///
/// Crop coordinate c maps to frame coordinate cx + (c - out_size/2) * side/out_size.
template <typename T>
Tensor<T> crop_and_resize(const Image& img, double cx, double cy, double side,
                          std::size_t out_size) {
  if (!(side > 0) || out_size == 0) throw UsageError("crop_and_resize: empty crop");
  const auto mean = img.channel_means();
  const double scale = side / static_cast<double>(out_size);
  Tensor<T> out({3, out_size, out_size});
  auto pixel = [&](std::ptrdiff_t x, std::ptrdiff_t y, std::size_t c) {
    if (x < 0 || y < 0 || x >= static_cast<std::ptrdiff_t>(img.width) ||
        y >= static_cast<std::ptrdiff_t>(img.height)) {
      return mean[c];
    }
    return static_cast<double>(img.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c));
  };
  const double half = static_cast<double>(out_size) / 2.0;
  for (std::size_t v = 0; v < out_size; ++v) {
    const double fy = cy + (static_cast<double>(v) + 0.5 - half) * scale - 0.5;
    const double y0 = std::floor(fy);
    const double ly = fy - y0;
    const auto iy = static_cast<std::ptrdiff_t>(y0);
    for (std::size_t u = 0; u < out_size; ++u) {
      const double fx = cx + (static_cast<double>(u) + 0.5 - half) * scale - 0.5;
      const double x0 = std::floor(fx);
      const double lx = fx - x0;
      const auto ix = static_cast<std::ptrdiff_t>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double val = (1 - ly) * ((1 - lx) * pixel(ix, iy, c) + lx * pixel(ix + 1, iy, c)) +
                           ly * ((1 - lx) * pixel(ix, iy + 1, c) + lx * pixel(ix + 1, iy + 1, c));
        out(c, v, u) = static_cast<T>(val / 255.0 - 0.5);
      }
    }
  }
  return out;
}

}  // namespace ocean

#include "mscaps/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "mscaps/error.hpp"

namespace mscaps {

namespace {

// Header tokens may be separated by whitespace and '#' comments.
std::size_t read_header_int(const std::vector<char>& buf, std::size_t& pos, const std::string& path) {
  for (;;) {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (pos < buf.size() && buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  require(pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos])), ErrorCode::kCorrupt,
          path + ": malformed PGM header");
  std::size_t v = 0;
  while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
    v = v * 10 + static_cast<std::size_t>(buf[pos] - '0');
    require(v <= 1u << 24, ErrorCode::kCorrupt, path + ": PGM header value too large");
    ++pos;
  }
  return v;
}

}  // namespace

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(buf.size() >= 2 && buf[0] == 'P' && buf[1] == '5', ErrorCode::kCorrupt, path + ": not a binary PGM (P5)");
  std::size_t pos = 2;
  GrayImage img;
  img.width = read_header_int(buf, pos, path);
  img.height = read_header_int(buf, pos, path);
  const std::size_t maxval = read_header_int(buf, pos, path);
  require(img.width > 0 && img.height > 0, ErrorCode::kCorrupt, path + ": empty image");
  require(maxval >= 1 && maxval <= 65535, ErrorCode::kCorrupt, path + ": maxval out of range");
  img.maxval = static_cast<unsigned>(maxval);
  require(pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos])), ErrorCode::kCorrupt,
          path + ": malformed PGM header");
  ++pos;
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  const std::size_t n = img.width * img.height;
  require(buf.size() - pos >= n * bytes_per, ErrorCode::kCorrupt, path + ": truncated pixel data");
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(&buf[pos + i * bytes_per]);
    img.pixels[i] = bytes_per == 2 ? static_cast<std::uint16_t>((p[0] << 8) | p[1]) : p[0];
    require(img.pixels[i] <= img.maxval, ErrorCode::kCorrupt, path + ": sample exceeds maxval");
  }
  return img;
}

void write_pgm(const std::string& path, const GrayImage& img) {
  require(img.pixels.size() == img.width * img.height, ErrorCode::kShapeMismatch, "PGM pixel count mismatch");
  require(img.maxval >= 1 && img.maxval <= 65535, ErrorCode::kInvalidArgument, "PGM maxval out of range");
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path);
  out << "P5\n" << img.width << ' ' << img.height << '\n' << img.maxval << '\n';
  std::vector<char> data;
  const bool wide = img.maxval > 255;
  data.reserve(img.pixels.size() * (wide ? 2 : 1));
  for (auto v : img.pixels) {
    if (wide) data.push_back(static_cast<char>(v >> 8));
    data.push_back(static_cast<char>(v & 0xff));
  }
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  require(static_cast<bool>(out), ErrorCode::kIo, "failed writing " + path);
}

Tensor to_tensor(const GrayImage& img) {
  Tensor t(Shape{img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i];
  return t;
}

GrayImage from_intensity(const Tensor& image) {
  require(image.rank() == 2, ErrorCode::kShapeMismatch, "intensity image must be [h, w]");
  GrayImage img;
  img.height = image.dim(0);
  img.width = image.dim(1);
  double mx = 0.0;
  for (double v : image.data()) mx = std::max(mx, v);
  img.maxval = std::lround(mx) <= 255 ? 255 : 65535;
  img.pixels.resize(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(std::round(image[i]), 0.0, static_cast<double>(img.maxval));
    img.pixels[i] = static_cast<std::uint16_t>(v);
  }
  return img;
}

ChangeMap to_change_map(const GrayImage& img) {
  ChangeMap m(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const auto v = img.pixels[i];
    require(v == 0 || v == img.maxval, ErrorCode::kInvalidArgument,
            "change map must contain only 0 and " + std::to_string(img.maxval) + ", found " + std::to_string(v));
    m.labels[i] = v ? 1 : 0;
  }
  return m;
}

GrayImage from_change_map(const ChangeMap& map) {
  GrayImage img;
  img.width = map.width;
  img.height = map.height;
  img.maxval = 255;
  img.pixels.resize(map.labels.size());
  for (std::size_t i = 0; i < map.labels.size(); ++i) img.pixels[i] = map.labels[i] ? 255 : 0;
  return img;
}

}  // namespace mscaps

#include "mf/geometry/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <sstream>

#include "mf/common/error.hpp"

namespace mf::geom {

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void write_atomic(const std::filesystem::path& path, const void* data, std::size_t size) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(fmt::format("cannot open {} for writing", tmp.string()));
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!f) throw IoError(fmt::format("short write to {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<unsigned char> encode_png(const Image& image) {
  if (image.width <= 0 || image.height <= 0) throw DimensionError("encode_png: empty image");
  std::vector<std::uint8_t> pixels(image.data.size());
  std::transform(image.data.begin(), image.data.end(), pixels.begin(), to_byte);

  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw IoError(fmt::format("png encode failed: {}", img.message));
  std::vector<unsigned char> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw IoError(fmt::format("png encode failed: {}", img.message));
  out.resize(size);
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const auto bytes = encode_png(image);
  write_atomic(path, bytes.data(), bytes.size());
}

Image read_png(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw IoError(fmt::format("{}: not a readable PNG ({})", path.string(), img.message));
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError(fmt::format("{}: PNG decode failed ({})", path.string(), img.message));
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  for (std::size_t i = 0; i < pixels.size(); ++i) out.data[i] = static_cast<float>(pixels[i]) / 255.0f;
  return out;
}

Image quantize8(const Image& image) {
  Image out = image;
  for (auto& v : out.data) v = static_cast<float>(to_byte(v)) / 255.0f;
  return out;
}

void write_pfm(const std::filesystem::path& path, const DepthMap& depth) {
  static_assert(std::endian::native == std::endian::little, "PFM writer assumes a little-endian host");
  std::string header = fmt::format("Pf\n{} {}\n-1.0\n", depth.width, depth.height);
  std::string buf = header;
  buf.resize(header.size() + depth.depth.size() * sizeof(float));
  char* dst = buf.data() + header.size();
  for (int y = depth.height - 1; y >= 0; --y) {
    const float* row = depth.depth.data() + static_cast<std::size_t>(y) * depth.width;
    std::memcpy(dst, row, static_cast<std::size_t>(depth.width) * sizeof(float));
    dst += static_cast<std::size_t>(depth.width) * sizeof(float);
  }
  write_atomic(path, buf.data(), buf.size());
}

DepthMap read_pfm(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  const std::string magic = token();
  if (magic != "Pf") throw IoError(fmt::format("{}: expected single-channel PFM (Pf), got '{}'", path.string(), magic));
  int w = 0, h = 0;
  double scale = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    scale = std::stod(token());
  } catch (const std::exception&) {
    throw IoError(fmt::format("{}: malformed PFM header", path.string()));
  }
  ++pos;  // single whitespace before raster
  if (w <= 0 || h <= 0) throw IoError(fmt::format("{}: bad PFM extents {}x{}", path.string(), w, h));
  const bool big_endian = scale > 0;
  const std::size_t need = static_cast<std::size_t>(w) * h * sizeof(float);
  if (bytes.size() < pos + need) throw IoError(fmt::format("{}: truncated PFM raster", path.string()));
  DepthMap out(w, h);
  const char* src = bytes.data() + pos;
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      std::uint32_t raw;
      std::memcpy(&raw, src, 4);
      src += 4;
      if (big_endian) raw = __builtin_bswap32(raw);
      out.set(x, y, std::bit_cast<float>(raw));
    }
  }
  return out;
}

void write_poses(const std::filesystem::path& path, const std::vector<CameraPose>& poses) {
  std::string text;
  for (const auto& p : poses) {
    for (double v : p.rotation.m) text += fmt::format("{:.17g} ", v);
    text += fmt::format("{:.17g} {:.17g} {:.17g}\n", p.translation.x, p.translation.y, p.translation.z);
  }
  write_atomic(path, text.data(), text.size());
}

std::vector<CameraPose> read_poses(const std::filesystem::path& path) {
  std::istringstream in(read_all(path));
  std::vector<CameraPose> poses;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (!ls.eof() || v.size() != 12)
      throw IoError(fmt::format("{}:{}: expected 12 numbers per pose line", path.string(), line_no));
    CameraPose p;
    std::copy_n(v.begin(), 9, p.rotation.m.begin());
    p.translation = {v[9], v[10], v[11]};
    p.validate();
    poses.push_back(p);
  }
  return poses;
}

}  // namespace mf::geom

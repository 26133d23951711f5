#include "dgs/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

namespace dgs {
namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_netpbm(const RasterImage& img, const std::filesystem::path& path, int channels,
                  const char* magic) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write image: " + path.string());
  out << magic << "\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> buf(img.pixel_count() * channels);
  for (std::size_t p = 0; p < img.pixel_count(); ++p)
    for (int c = 0; c < channels; ++c) buf[p * channels + c] = to_byte(img.values[p * img.channels + c]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

RasterImage read_netpbm(const std::filesystem::path& path, int channels, const char* magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image: " + path.string());
  std::string m;
  int w = 0, h = 0, maxval = 0;
  in >> m >> w >> h >> maxval;
  in.get();
  if (m != magic || w <= 0 || h <= 0 || maxval != 255)
    throw FormatError("unsupported netpbm header in " + path.string());
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size())
    throw FormatError("truncated image: " + path.string());
  RasterImage img(w, h, channels);
  for (std::size_t i = 0; i < buf.size(); ++i) img.values[i] = buf[i] / 255.0;
  return img;
}

}  // namespace

void write_ppm(const RasterImage& img, const std::filesystem::path& path) {
  if (img.channels < 3) throw ConfigError("write_ppm: need 3 channels");
  write_netpbm(img, path, 3, "P6");
}

RasterImage read_ppm(const std::filesystem::path& path) { return read_netpbm(path, 3, "P6"); }

void write_pgm(const RasterImage& img, const std::filesystem::path& path) {
  write_netpbm(img, path, 1, "P5");
}

RasterImage read_pgm(const std::filesystem::path& path) { return read_netpbm(path, 1, "P5"); }

void write_float_raster(const RasterImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write raster: " + path.string());
  const std::uint32_t header[4] = {0x52534744u /* "DGSR" */, static_cast<std::uint32_t>(img.width),
                                   static_cast<std::uint32_t>(img.height),
                                   static_cast<std::uint32_t>(img.channels)};
  out.write(reinterpret_cast<const char*>(header), sizeof header);
  std::vector<float> buf(img.values.begin(), img.values.end());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
}

RasterImage read_float_raster(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open raster: " + path.string());
  std::uint32_t header[4];
  in.read(reinterpret_cast<char*>(header), sizeof header);
  if (!in || header[0] != 0x52534744u) throw FormatError("bad raster magic in " + path.string());
  RasterImage img(static_cast<int>(header[1]), static_cast<int>(header[2]), static_cast<int>(header[3]));
  std::vector<float> buf(img.values.size());
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (static_cast<std::size_t>(in.gcount()) != buf.size() * 4)
    throw FormatError("truncated raster: " + path.string());
  std::copy(buf.begin(), buf.end(), img.values.begin());
  return img;
}

}  // namespace dgs

#include "dgs/grid_io.hpp"

#include <cstring>
#include <fstream>
#include <string>

namespace dgs {
namespace {

constexpr char kMagic[8] = {'D', 'G', 'S', 'V', 'O', 'L', '0', '1'};

#pragma pack(push, 1)
struct Header {
  char magic[8];
  std::int32_t dims[3];
  std::uint32_t channels;
  double origin[3];
  double cell;
  std::uint8_t reserved[8];
};
#pragma pack(pop)
static_assert(sizeof(Header) == 64);

}  // namespace

void write_volume(const VolumeFile& vol, const std::filesystem::path& path) {
  const std::size_t expect =
      static_cast<std::size_t>(vol.dims[0]) * vol.dims[1] * vol.dims[2] * vol.channels;
  if (vol.data.size() != expect) throw ConfigError("write_volume: data size does not match dims");
  Header h{};
  std::memcpy(h.magic, kMagic, 8);
  for (int a = 0; a < 3; ++a) {
    h.dims[a] = vol.dims[a];
    h.origin[a] = vol.origin[a];
  }
  h.channels = vol.channels;
  h.cell = vol.cell;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write volume: " + path.string());
  out.write(reinterpret_cast<const char*>(&h), sizeof h);
  out.write(reinterpret_cast<const char*>(vol.data.data()),
            static_cast<std::streamsize>(vol.data.size() * sizeof(float)));
}

VolumeFile read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open volume: " + path.string());
  Header h{};
  in.read(reinterpret_cast<char*>(&h), sizeof h);
  if (!in || std::memcmp(h.magic, kMagic, 8) != 0)
    throw FormatError("bad volume magic in " + path.string());
  VolumeFile vol;
  for (int a = 0; a < 3; ++a) {
    if (h.dims[a] <= 0) throw FormatError("non-positive volume dims in " + path.string());
    vol.dims[a] = h.dims[a];
    vol.origin[a] = h.origin[a];
  }
  if (h.channels == 0 || !(h.cell > 0.0)) throw FormatError("bad volume header in " + path.string());
  vol.channels = h.channels;
  vol.cell = h.cell;
  vol.data.resize(static_cast<std::size_t>(vol.dims[0]) * vol.dims[1] * vol.dims[2] * vol.channels);
  in.read(reinterpret_cast<char*>(vol.data.data()),
          static_cast<std::streamsize>(vol.data.size() * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != vol.data.size() * sizeof(float))
    throw FormatError("truncated volume: " + path.string());
  return vol;
}

void save_indicator(const IndicatorGrid& grid, const std::filesystem::path& path) {
  VolumeFile vol;
  vol.origin = grid.origin;
  vol.cell = grid.cell;
  vol.dims = grid.dims;
  vol.data.assign(grid.values.begin(), grid.values.end());
  write_volume(vol, path);
}

IndicatorGrid load_indicator(const std::filesystem::path& path) {
  const VolumeFile vol = read_volume(path);
  if (vol.channels != 1) throw FormatError("indicator volume must have 1 channel: " + path.string());
  IndicatorGrid grid(vol.origin, vol.cell, vol.dims);
  std::copy(vol.data.begin(), vol.data.end(), grid.values.begin());
  return grid;
}

}  // namespace dgs

#include "dgs/ply.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace dgs {
namespace {

static_assert(std::endian::native == std::endian::little, "PLY I/O assumes a little-endian host");

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

struct PlyProperty {
  std::string name;
  PlyType type;
  std::size_t offset;
};

std::size_t type_size(PlyType t) {
  switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
  }
  return 0;
}

bool parse_type(const std::string& s, PlyType& t) {
  static const std::map<std::string, PlyType> table = {
      {"char", PlyType::Int8},     {"int8", PlyType::Int8},       {"uchar", PlyType::UInt8},
      {"uint8", PlyType::UInt8},   {"short", PlyType::Int16},     {"int16", PlyType::Int16},
      {"ushort", PlyType::UInt16}, {"uint16", PlyType::UInt16},   {"int", PlyType::Int32},
      {"int32", PlyType::Int32},   {"uint", PlyType::UInt32},     {"uint32", PlyType::UInt32},
      {"float", PlyType::Float32}, {"float32", PlyType::Float32}, {"double", PlyType::Float64},
      {"float64", PlyType::Float64}};
  auto it = table.find(s);
  if (it == table.end()) return false;
  t = it->second;
  return true;
}

double read_value(const char* p, PlyType t) {
  switch (t) {
    case PlyType::Int8: { std::int8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::UInt8: { std::uint8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::Int16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::UInt16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::Int32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::UInt32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::Float32: { float v; std::memcpy(&v, p, 4); return v; }
    case PlyType::Float64: { double v; std::memcpy(&v, p, 8); return v; }
  }
  return 0.0;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
// Saturated opacities (0 or 1) store as +-30, which decodes within 1e-13.
double logit(double p) { return std::clamp(std::log(p / (1.0 - p)), -30.0, 30.0); }

/// Smallest-effort float encoding that survives decode→encode unchanged.
template <class Encode, class Decode>
float stable_float(double value, Encode enc, Decode dec) {
  float f = static_cast<float>(enc(value));
  for (int i = 0; i < 8; ++i) {
    const float g = static_cast<float>(enc(dec(static_cast<double>(f))));
    if (g == f || !std::isfinite(g)) break;
    f = g;
  }
  return f;
}

/// Quaternion components that map to themselves under normalize-then-round.
std::array<float, 4> stable_quat(const Quat& q) {
  auto round_normalized = [](const std::array<double, 4>& v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]);
    return std::array<float, 4>{static_cast<float>(v[0] / n), static_cast<float>(v[1] / n),
                                static_cast<float>(v[2] / n), static_cast<float>(v[3] / n)};
  };
  std::array<float, 4> f = round_normalized({q.w(), q.x(), q.y(), q.z()});
  for (int i = 0; i < 8; ++i) {
    const auto g = round_normalized({f[0], f[1], f[2], f[3]});
    if (g == f) break;
    f = g;
  }
  return f;
}

}  // namespace

SplatScene load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open PLY file: " + path.string());

  std::string line;
  std::getline(in, line);
  if (line != "ply") throw FormatError("not a PLY file: " + path.string());

  std::size_t count = 0;
  bool in_vertex = false, seen_vertex = false, binary_le = false;
  std::vector<PlyProperty> props;
  std::size_t stride = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "end_header") break;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = fmt == "binary_little_endian";
      if (!binary_le) throw FormatError("unsupported PLY format '" + fmt + "'");
    } else if (tok == "element") {
      std::string name;
      ls >> name >> count;
      if (seen_vertex && name != "vertex")
        throw FormatError("unsupported element '" + name + "' after vertex");
      in_vertex = name == "vertex";
      if (!in_vertex) throw FormatError("unsupported element '" + name + "' before vertex");
      seen_vertex = true;
    } else if (tok == "property") {
      if (!in_vertex) throw FormatError("property outside vertex element");
      std::string type_name, name;
      ls >> type_name;
      if (type_name == "list") throw FormatError("list property not supported in vertex element");
      ls >> name;
      PlyType t;
      if (!parse_type(type_name, t))
        throw FormatError("property '" + name + "' has unknown type '" + type_name + "'");
      props.push_back({name, t, stride});
      stride += type_size(t);
    }
  }
  if (!binary_le) throw FormatError("missing format line");
  if (!seen_vertex) throw FormatError("missing vertex element");

  std::map<std::string, const PlyProperty*> by_name;
  for (const auto& p : props) by_name[p.name] = &p;
  auto require = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("missing property '" + name + "'");
    return it->second;
  };
  const PlyProperty* px = require("x");
  const PlyProperty* py = require("y");
  const PlyProperty* pz = require("z");
  const PlyProperty* pop = require("opacity");
  const PlyProperty* ps[3] = {require("scale_0"), require("scale_1"), require("scale_2")};
  const PlyProperty* pr[4] = {require("rot_0"), require("rot_1"), require("rot_2"), require("rot_3")};
  const PlyProperty* pdc[3] = {require("f_dc_0"), require("f_dc_1"), require("f_dc_2")};
  std::vector<const PlyProperty*> prest;
  while (by_name.count("f_rest_" + std::to_string(prest.size())))
    prest.push_back(by_name["f_rest_" + std::to_string(prest.size())]);
  if (prest.size() % 3 != 0 || prest.size() / 3 > kShCoeffs - 1)
    throw FormatError("property 'f_rest_" + std::to_string(prest.size()) +
                      "': SH rest coefficient count must be 0, 9, 24 or 45");
  const std::size_t rest_per_channel = prest.size() / 3;
  const PlyProperty* plabel = by_name.count("label") ? by_name["label"] : nullptr;

  std::vector<char> data(stride * count);
  in.read(data.data(), static_cast<std::streamsize>(data.size()));
  if (static_cast<std::size_t>(in.gcount()) != data.size())
    throw FormatError("truncated PLY body: expected " + std::to_string(count) + " records");

  SplatScene scene;
  scene.kernels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const char* rec = data.data() + i * stride;
    auto get = [&](const PlyProperty* p) {
      const double v = read_value(rec + p->offset, p->type);
      if (!std::isfinite(v))
        throw FormatError("non-finite value for '" + p->name + "' at record " + std::to_string(i));
      return v;
    };
    GaussianKernel& k = scene.kernels[i];
    k.center = Vec3(get(px), get(py), get(pz));
    k.opacity = sigmoid(get(pop));
    for (int a = 0; a < 3; ++a) k.scales[a] = std::exp(get(ps[a]));
    Quat q(get(pr[0]), get(pr[1]), get(pr[2]), get(pr[3]));
    if (q.norm() == 0.0) throw FormatError("zero quaternion at record " + std::to_string(i));
    k.rotation = q.normalized();
    for (int c = 0; c < 3; ++c) {
      k.sh[c].fill(0.0);
      k.sh[c][0] = get(pdc[c]);
      for (std::size_t j = 0; j < rest_per_channel; ++j)
        k.sh[c][j + 1] = get(prest[c * rest_per_channel + j]);
    }
    k.label = plabel ? static_cast<int>(get(plabel)) : 0;
  }
  return scene;
}

void save_ply(const std::vector<GaussianKernel>& kernels, const std::filesystem::path& path) {
  if (kernels.empty()) throw ConfigError("empty scene");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write PLY file: " + path.string());

  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << kernels.size() << "\n";
  for (const char* n : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"})
    out << "property float " << n << "\n";
  for (int i = 0; i < 3 * (kShCoeffs - 1); ++i) out << "property float f_rest_" << i << "\n";
  for (const char* n : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
    out << "property float " << n << "\n";
  out << "property int label\nend_header\n";

  constexpr int kFloats = 3 + 3 + 3 + 3 * (kShCoeffs - 1) + 1 + 3 + 4;
  std::vector<char> buf(kernels.size() * (kFloats * 4 + 4));
  char* w = buf.data();
  auto put = [&](float f) {
    std::memcpy(w, &f, 4);
    w += 4;
  };
  for (const auto& k : kernels) {
    for (int a = 0; a < 3; ++a) put(static_cast<float>(k.center[a]));
    for (int a = 0; a < 3; ++a) put(0.0f);
    for (int c = 0; c < 3; ++c) put(static_cast<float>(k.sh[c][0]));
    for (int c = 0; c < 3; ++c)
      for (int j = 1; j < kShCoeffs; ++j) put(static_cast<float>(k.sh[c][j]));
    put(stable_float(k.opacity, logit, sigmoid));
    for (int a = 0; a < 3; ++a)
      put(stable_float(k.scales[a], [](double s) { return std::log(s); },
                       [](double l) { return std::exp(l); }));
    for (float f : stable_quat(k.rotation)) put(f);
    const std::int32_t label = k.label;
    std::memcpy(w, &label, 4);
    w += 4;
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ConfigError("failed writing PLY file: " + path.string());
}

void save_ply(const SplatScene& scene, const std::filesystem::path& path) {
  save_ply(scene.kernels, path);
}

std::vector<int> load_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open label file: " + path.string());
  std::vector<int> labels;
  if (path.extension() == ".csv") {
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
      ++row;
      if (line.empty() || line == "\r") continue;
      try {
        labels.push_back(std::stoi(line));
      } catch (const std::exception&) {
        throw FormatError("label file " + path.string() + ": bad integer on line " +
                          std::to_string(row));
      }
    }
    return labels;
  }
  std::int32_t v;
  while (in.read(reinterpret_cast<char*>(&v), 4)) labels.push_back(v);
  if (in.gcount() != 0) throw FormatError("label file " + path.string() + ": trailing bytes");
  return labels;
}

void save_labels(const std::vector<int>& labels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write label file: " + path.string());
  if (path.extension() == ".csv") {
    for (int l : labels) out << l << "\n";
    return;
  }
  for (int l : labels) {
    const std::int32_t v = l;
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
}

}  // namespace dgs

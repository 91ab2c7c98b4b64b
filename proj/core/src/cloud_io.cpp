#include "pocoti/cloud_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <sstream>

#include "json.hpp"
#include "pocoti/util.hpp"

namespace pocoti::data {

static_assert(std::endian::native == std::endian::little, "PLY/raw readers assume a little-endian host");

namespace {

enum class Scalar { i8, u8, i16, u16, i32, u32, f32, f64 };

std::size_t scalar_size(Scalar s) {
  switch (s) {
    case Scalar::i8:
    case Scalar::u8: return 1;
    case Scalar::i16:
    case Scalar::u16: return 2;
    case Scalar::i32:
    case Scalar::u32:
    case Scalar::f32: return 4;
    case Scalar::f64: return 8;
  }
  return 0;
}

Scalar scalar_from_name(const std::string& name) {
  if (name == "char" || name == "int8") return Scalar::i8;
  if (name == "uchar" || name == "uint8") return Scalar::u8;
  if (name == "short" || name == "int16") return Scalar::i16;
  if (name == "ushort" || name == "uint16") return Scalar::u16;
  if (name == "int" || name == "int32") return Scalar::i32;
  if (name == "uint" || name == "uint32") return Scalar::u32;
  if (name == "float" || name == "float32") return Scalar::f32;
  if (name == "double" || name == "float64") return Scalar::f64;
  throw ValidationError("PLY: unsupported property type '" + name + "'");
}

template <class T>
T load_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

double read_scalar(const char* p, Scalar s) {
  switch (s) {
    case Scalar::i8: return load_le<std::int8_t>(p);
    case Scalar::u8: return load_le<std::uint8_t>(p);
    case Scalar::i16: return load_le<std::int16_t>(p);
    case Scalar::u16: return load_le<std::uint16_t>(p);
    case Scalar::i32: return load_le<std::int32_t>(p);
    case Scalar::u32: return load_le<std::uint32_t>(p);
    case Scalar::f32: return load_le<float>(p);
    case Scalar::f64: return load_le<double>(p);
  }
  return 0;
}

struct Property {
  std::string name;
  Scalar type;
};

double color_value(double v, Scalar type) {
  return type == Scalar::u8 ? v / 255.0 : v;
}

}  // namespace

RawCloud parse_ply(std::string_view bytes, std::string id) {
  const auto header_end = bytes.find("end_header");
  if (!starts_with(bytes, "ply") || header_end == std::string_view::npos) {
    throw ValidationError("PLY: missing magic or end_header");
  }
  auto body_start = bytes.find('\n', header_end);
  if (body_start == std::string_view::npos) throw ValidationError("PLY: truncated header");
  ++body_start;

  bool binary = false;
  std::size_t count = 0;
  bool in_vertex = false;
  bool vertex_seen = false;
  std::vector<Property> props;
  std::istringstream header{std::string(bytes.substr(0, header_end))};
  std::string line;
  while (std::getline(header, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") binary = true;
      else if (fmt != "ascii") throw ValidationError("PLY: unsupported format '" + fmt + "'");
    } else if (kw == "element") {
      std::string name;
      ls >> name;
      if (name == "vertex") {
        if (vertex_seen) throw ValidationError("PLY: duplicate vertex element");
        ls >> count;
        in_vertex = vertex_seen = true;
      } else {
        if (!vertex_seen) throw ValidationError("PLY: vertex must be the first element");
        in_vertex = false;
      }
    } else if (kw == "property" && in_vertex) {
      std::string type, name;
      ls >> type;
      if (type == "list") throw ValidationError("PLY: list properties on vertex are not supported");
      ls >> name;
      props.push_back({name, scalar_from_name(type)});
    }
  }
  if (!vertex_seen) throw ValidationError("PLY: no vertex element");

  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
  for (int i = 0; i < static_cast<int>(props.size()); ++i) {
    const auto& n = props[static_cast<std::size_t>(i)].name;
    if (n == "x") ix = i;
    else if (n == "y") iy = i;
    else if (n == "z") iz = i;
    else if (n == "red") ir = i;
    else if (n == "green") ig = i;
    else if (n == "blue") ib = i;
  }
  if (ix < 0 || iy < 0 || iz < 0) throw ValidationError("PLY: vertex lacks x/y/z");
  const bool colored = ir >= 0 && ig >= 0 && ib >= 0;

  RawCloud cloud;
  cloud.id = std::move(id);
  cloud.has_color = colored;
  cloud.points.reserve(count);
  std::vector<double> values(props.size());
  auto emit = [&] {
    Point p;
    p.x = values[static_cast<std::size_t>(ix)];
    p.y = values[static_cast<std::size_t>(iy)];
    p.z = values[static_cast<std::size_t>(iz)];
    if (colored) {
      p.r = color_value(values[static_cast<std::size_t>(ir)], props[static_cast<std::size_t>(ir)].type);
      p.g = color_value(values[static_cast<std::size_t>(ig)], props[static_cast<std::size_t>(ig)].type);
      p.b = color_value(values[static_cast<std::size_t>(ib)], props[static_cast<std::size_t>(ib)].type);
    }
    cloud.points.push_back(p);
  };

  if (binary) {
    std::size_t stride = 0;
    for (const auto& p : props) stride += scalar_size(p.type);
    if (bytes.size() - body_start < stride * count) throw ValidationError("PLY: truncated vertex data");
    const char* cursor = bytes.data() + body_start;
    for (std::size_t v = 0; v < count; ++v) {
      for (std::size_t i = 0; i < props.size(); ++i) {
        values[i] = read_scalar(cursor, props[i].type);
        cursor += scalar_size(props[i].type);
      }
      emit();
    }
  } else {
    std::istringstream body{std::string(bytes.substr(body_start))};
    for (std::size_t v = 0; v < count; ++v) {
      for (auto& value : values) {
        if (!(body >> value)) throw ValidationError("PLY: truncated ASCII vertex data");
      }
      emit();
    }
  }
  return cloud;
}

RawCloud read_ply(const std::filesystem::path& path) {
  return parse_ply(read_file(path), path.stem().string());
}

std::string encode_ply(const RawCloud& cloud) {
  std::ostringstream out;
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (cloud.has_color) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  std::string data = out.str();
  auto put_float = [&](double v) {
    const auto f = static_cast<float>(v);
    char buf[4];
    std::memcpy(buf, &f, 4);
    data.append(buf, 4);
  };
  auto put_color = [&](double v) {
    const double clamped = v < 0 ? 0 : (v > 1 ? 1 : v);
    data.push_back(static_cast<char>(static_cast<std::uint8_t>(clamped * 255.0 + 0.5)));
  };
  for (const auto& p : cloud.points) {
    put_float(p.x);
    put_float(p.y);
    put_float(p.z);
    if (cloud.has_color) {
      put_color(p.r);
      put_color(p.g);
      put_color(p.b);
    }
  }
  return data;
}

RawCloud parse_raw_f32(std::string_view bytes, std::string_view sidecar_json) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(sidecar_json);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("raw cloud sidecar: ") + e.what());
  }
  if (!meta.contains("id") || !meta.contains("count")) {
    throw ValidationError("raw cloud sidecar needs 'id' and 'count'");
  }
  const auto count = meta["count"].get<std::size_t>();
  if (bytes.size() != count * 6 * sizeof(float)) {
    throw ValidationError("raw cloud: expected " + std::to_string(count * 24) + " bytes, got " +
                          std::to_string(bytes.size()));
  }
  RawCloud cloud;
  cloud.id = meta["id"].get<std::string>();
  cloud.has_color = true;
  cloud.points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const char* p = bytes.data() + i * 24;
    cloud.points.push_back(Point{load_le<float>(p), load_le<float>(p + 4), load_le<float>(p + 8),
                                 load_le<float>(p + 12), load_le<float>(p + 16),
                                 load_le<float>(p + 20)});
  }
  return cloud;
}

RawCloud read_raw_f32(const std::filesystem::path& data_path) {
  auto sidecar = data_path;
  sidecar.replace_extension(".json");
  return parse_raw_f32(read_file(data_path), read_file(sidecar));
}

std::string encode_raw_f32(const RawCloud& cloud) {
  std::string data;
  data.reserve(cloud.points.size() * 24);
  for (const auto& p : cloud.points) {
    for (double v : {p.x, p.y, p.z, p.r, p.g, p.b}) {
      const auto f = static_cast<float>(v);
      char buf[4];
      std::memcpy(buf, &f, 4);
      data.append(buf, 4);
    }
  }
  return data;
}

std::string raw_sidecar_json(const RawCloud& cloud) {
  nlohmann::json meta;
  meta["id"] = cloud.id;
  meta["count"] = cloud.points.size();
  return meta.dump();
}

CloudStore::CloudStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!std::filesystem::is_directory(dir_)) {
    throw ValidationError("cloud directory does not exist: " + dir_.string());
  }
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (!entry.is_regular_file()) continue;
    const auto& path = entry.path();
    std::string id;
    if (path.extension() == ".ply") {
      id = path.stem().string();
    } else if (path.extension() == ".bin") {
      auto sidecar = path;
      sidecar.replace_extension(".json");
      if (!std::filesystem::exists(sidecar)) continue;
      try {
        id = nlohmann::json::parse(read_file(sidecar)).at("id").get<std::string>();
      } catch (const nlohmann::json::exception&) {
        throw ValidationError("bad raw cloud sidecar " + sidecar.string());
      }
    } else {
      continue;
    }
    if (!ids_.insert(id).second) throw ValidationError("duplicate cloud id '" + id + "' in " + dir_.string());
    paths_[id] = path;
  }
}

RawCloud CloudStore::load_raw(const std::string& id) const {
  const auto it = paths_.find(id);
  if (it == paths_.end()) throw ValidationError("unknown cloud id '" + id + "'");
  auto raw = it->second.extension() == ".ply" ? read_ply(it->second) : read_raw_f32(it->second);
  raw.id = id;
  return raw;
}

PointCloud CloudStore::load(const std::string& id) const {
  auto raw = load_raw(id);
  return normalize_cloud(std::move(raw.points), raw.id, raw.has_color);
}

}  // namespace pocoti::data

// Minimal PLY reader/writer for point clouds: x, y, z as 32-bit floats,
// ASCII or binary little-endian, extra scalar properties ignored.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gscalib/errors.hpp"
#include "gscalib/scene.hpp"

namespace gscalib {

inline void write_ply(const std::string& path, const PointCloud& cloud, bool binary = true) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for write: " + path);
  f << "ply\n"
    << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n")
    << "element vertex " << cloud.size() << "\n"
    << "property float x\nproperty float y\nproperty float z\n"
    << "end_header\n";
  if (binary) {
    for (const Vec3& p : cloud.points) {
      const float v[3] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                          static_cast<float>(p.z())};
      f.write(reinterpret_cast<const char*>(v), sizeof(v));
    }
  } else {
    std::ostringstream os;
    os.precision(9);
    for (const Vec3& p : cloud.points)
      os << static_cast<float>(p.x()) << ' ' << static_cast<float>(p.y()) << ' '
         << static_cast<float>(p.z()) << '\n';
    f << os.str();
  }
  if (!f) throw Error("short write: " + path);
}

namespace detail {

inline int ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
      t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  throw Error("unsupported ply property type: " + t);
}

inline double ply_read_scalar(const char* p, const std::string& t) {
  if (t == "float" || t == "float32") {
    float v;
    std::memcpy(&v, p, 4);
    return v;
  }
  if (t == "double" || t == "float64") {
    double v;
    std::memcpy(&v, p, 8);
    return v;
  }
  if (t == "char" || t == "int8") return *reinterpret_cast<const std::int8_t*>(p);
  if (t == "uchar" || t == "uint8") return *reinterpret_cast<const std::uint8_t*>(p);
  if (t == "short" || t == "int16") {
    std::int16_t v;
    std::memcpy(&v, p, 2);
    return v;
  }
  if (t == "ushort" || t == "uint16") {
    std::uint16_t v;
    std::memcpy(&v, p, 2);
    return v;
  }
  if (t == "int" || t == "int32") {
    std::int32_t v;
    std::memcpy(&v, p, 4);
    return v;
  }
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

}  // namespace detail

inline PointCloud read_ply(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFile(path);

  std::string line;
  if (!std::getline(f, line) || line.rfind("ply", 0) != 0)
    throw Error("not a ply file: " + path);

  bool binary = false;
  std::size_t vertex_count = 0;
  bool in_vertex = false;
  struct Prop {
    std::string type, name;
  };
  std::vector<Prop> props;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream is(line);
    std::string tok;
    is >> tok;
    if (tok == "end_header") break;
    if (tok == "format") {
      std::string fmt;
      is >> fmt;
      if (fmt == "binary_little_endian") binary = true;
      else if (fmt == "ascii") binary = false;
      else throw Error("unsupported ply format: " + fmt);
    } else if (tok == "element") {
      std::string name;
      std::size_t count;
      is >> name >> count;
      in_vertex = (name == "vertex");
      if (in_vertex) vertex_count = count;
      else if (vertex_count > 0) break;  // vertices already described; rest ignored
      else if (count > 0) throw Error("ply: non-vertex element before vertex: " + name);
    } else if (tok == "property" && in_vertex) {
      std::string type, name;
      is >> type;
      if (type == "list") throw Error("ply: list properties unsupported in vertex");
      is >> name;
      props.push_back({type, name});
    }
  }

  int ix = -1, iy = -1, iz = -1;
  int stride = 0;
  std::vector<int> offsets;
  for (std::size_t i = 0; i < props.size(); ++i) {
    offsets.push_back(stride);
    stride += detail::ply_type_size(props[i].type);
    if (props[i].name == "x") ix = static_cast<int>(i);
    if (props[i].name == "y") iy = static_cast<int>(i);
    if (props[i].name == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw Error("ply: missing x/y/z properties: " + path);

  PointCloud cloud;
  cloud.points.reserve(vertex_count);
  if (binary) {
    std::vector<char> row(static_cast<std::size_t>(stride));
    for (std::size_t i = 0; i < vertex_count; ++i) {
      if (!f.read(row.data(), stride)) throw Error("ply: truncated vertex data: " + path);
      cloud.points.emplace_back(
          detail::ply_read_scalar(row.data() + offsets[static_cast<std::size_t>(ix)], props[static_cast<std::size_t>(ix)].type),
          detail::ply_read_scalar(row.data() + offsets[static_cast<std::size_t>(iy)], props[static_cast<std::size_t>(iy)].type),
          detail::ply_read_scalar(row.data() + offsets[static_cast<std::size_t>(iz)], props[static_cast<std::size_t>(iz)].type));
    }
  } else {
    for (std::size_t i = 0; i < vertex_count; ++i) {
      double x = 0, y = 0, z = 0;
      for (std::size_t p = 0; p < props.size(); ++p) {
        double v;
        if (!(f >> v)) throw Error("ply: truncated vertex data: " + path);
        if (static_cast<int>(p) == ix) x = v;
        if (static_cast<int>(p) == iy) y = v;
        if (static_cast<int>(p) == iz) z = v;
      }
      cloud.points.emplace_back(x, y, z);
    }
  }
  return cloud;
}

}  // namespace gscalib

// Scene checkpoint: single binary file, versioned header, every array as
// little-endian 32-bit floats. Exact layout in docs/formats.md.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gscalib/errors.hpp"
#include "gscalib/scene.hpp"

namespace gscalib {

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

inline void put_f32(std::ofstream& f, double v) {
  const float x = static_cast<float>(v);
  f.write(reinterpret_cast<const char*>(&x), 4);
}
inline void put_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), 8);
}
inline void put_f64(std::ofstream& f, double v) {
  f.write(reinterpret_cast<const char*>(&v), 8);
}

inline float get_f32(std::ifstream& f) {
  float v;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline std::uint32_t get_u32(std::ifstream& f) {
  std::uint32_t v;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline std::uint64_t get_u64(std::ifstream& f) {
  std::uint64_t v;
  f.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
inline double get_f64(std::ifstream& f) {
  double v;
  f.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

inline void put_matrix_f32(std::ofstream& f, const MatX& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) put_f32(f, m(r, c));
}
inline MatX get_matrix_f32(std::ifstream& f, int rows, int cols) {
  MatX m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = get_f32(f);
  return m;
}
inline void put_layer(std::ofstream& f, const DenseLayer& l) {
  put_matrix_f32(f, l.weight);
  for (int i = 0; i < l.bias.size(); ++i) put_f32(f, l.bias(i));
}
inline DenseLayer get_layer(std::ifstream& f, int out, int in) {
  DenseLayer l;
  l.weight = get_matrix_f32(f, out, in);
  l.bias = VecX(out);
  for (int i = 0; i < out; ++i) l.bias(i) = get_f32(f);
  return l;
}

constexpr char kCheckpointMagic[8] = {'G', 'S', 'C', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace detail

inline void save_checkpoint(const std::string& path, const GaussianScene& scene) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for write: " + path);
  f.write(detail::kCheckpointMagic, 8);
  detail::put_u32(f, detail::kCheckpointVersion);
  const DecoderNet& nets = scene.nets();
  detail::put_u32(f, static_cast<std::uint32_t>(nets.feature_dim));
  detail::put_u32(f, static_cast<std::uint32_t>(nets.k_aux));
  detail::put_u32(f, static_cast<std::uint32_t>(nets.hidden_dim));
  detail::put_u64(f, static_cast<std::uint64_t>(scene.anchor_count()));
  detail::put_f64(f, scene.scene_scale());
  detail::put_f64(f, scene.voxel_size());

  detail::put_matrix_f32(f, scene.centers());
  detail::put_matrix_f32(f, scene.features());
  for (int i = 0; i < scene.anchor_count(); ++i) detail::put_f32(f, scene.log_ell()(i));
  for (int i = 0; i < scene.anchor_count(); ++i) detail::put_f32(f, scene.opacity_mean(i));
  for (int i = 0; i < scene.anchor_count(); ++i)
    detail::put_u32(f, static_cast<std::uint32_t>(scene.opacity_count(i)));

  for (const Mlp2* net : {&nets.offset, &nets.cov, &nets.color, &nets.opacity}) {
    detail::put_layer(f, net->hidden);
    detail::put_layer(f, net->output);
  }
  if (!f) throw Error("short write: " + path);
}

inline GaussianScene load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingCheckpoint(path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
    throw Error("not a scene checkpoint: " + path);
  const std::uint32_t version = detail::get_u32(f);
  if (version != detail::kCheckpointVersion)
    throw Error("unsupported checkpoint version " + std::to_string(version));

  const int feature_dim = static_cast<int>(detail::get_u32(f));
  const int k_aux = static_cast<int>(detail::get_u32(f));
  const int hidden_dim = static_cast<int>(detail::get_u32(f));
  const int n = static_cast<int>(detail::get_u64(f));
  const double scale = detail::get_f64(f);
  const double voxel = detail::get_f64(f);

  GaussianScene scene;
  scene.set_scales(scale, voxel);
  const MatX centers = detail::get_matrix_f32(f, n, 3);
  const MatX features = detail::get_matrix_f32(f, n, feature_dim);
  VecX log_ell(n), op_mean(n);
  for (int i = 0; i < n; ++i) log_ell(i) = detail::get_f32(f);
  for (int i = 0; i < n; ++i) op_mean(i) = detail::get_f32(f);
  std::vector<int> op_count(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    op_count[static_cast<std::size_t>(i)] = static_cast<int>(detail::get_u32(f));

  DecoderNet nets;
  nets.feature_dim = feature_dim;
  nets.k_aux = k_aux;
  nets.hidden_dim = hidden_dim;
  const int in = nets.input_dim();
  nets.offset.hidden = detail::get_layer(f, hidden_dim, in);
  nets.offset.output = detail::get_layer(f, 3 * k_aux, hidden_dim);
  nets.cov.hidden = detail::get_layer(f, hidden_dim, in);
  nets.cov.output = detail::get_layer(f, 7 * k_aux, hidden_dim);
  nets.color.hidden = detail::get_layer(f, hidden_dim, in);
  nets.color.output = detail::get_layer(f, 3 * k_aux, hidden_dim);
  nets.opacity.hidden = detail::get_layer(f, hidden_dim, in);
  nets.opacity.output = detail::get_layer(f, k_aux, hidden_dim);
  if (!f) throw Error("truncated checkpoint: " + path);
  scene.set_nets(std::move(nets));

  for (int i = 0; i < n; ++i) {
    scene.add_anchor(centers.row(i).transpose(), features.row(i).transpose(), 1.0);
    scene.log_ell()(i) = log_ell(i);
  }
  scene.restore_opacity_stats(op_mean, op_count);
  return scene;
}

}  // namespace gscalib

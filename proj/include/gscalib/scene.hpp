// Anchor-Gaussian scene: voxelized LiDAR points with frozen centers carry
// trainable features; four small MLPs decode K renderable Gaussians per
// anchor, conditioned on the viewing camera.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "gscalib/errors.hpp"
#include "gscalib/lie.hpp"
#include "gscalib/mlp.hpp"
#include "gscalib/random.hpp"

namespace gscalib {

/// LiDAR returns with per-point source timestamp (1-based).
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<int> timestamps;  // same length as points, or empty

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Transforms every scan into the common frame with its given pose and
/// concatenates. Scan poses are inputs (from LiDAR odometry), not estimates.
inline PointCloud aggregate(const std::vector<std::pair<PointCloud, Pose>>& scans) {
  PointCloud out;
  std::size_t total = 0;
  for (const auto& [cloud, pose] : scans) total += cloud.size();
  if (total == 0) throw EmptyInput("aggregate: no points in any scan");
  out.points.reserve(total);
  out.timestamps.reserve(total);
  int scan_index = 0;
  for (const auto& [cloud, pose] : scans) {
    ++scan_index;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      out.points.push_back(pose.apply(cloud.points[i]));
      out.timestamps.push_back(cloud.timestamps.empty() ? scan_index
                                                        : cloud.timestamps[i]);
    }
  }
  return out;
}

/// Maximum axis-aligned bounding-box extent of the cloud.
inline double scene_scale(const PointCloud& cloud) {
  if (cloud.empty()) throw EmptyInput("scene_scale: empty cloud");
  Vec3 lo = cloud.points.front(), hi = cloud.points.front();
  for (const Vec3& p : cloud.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return (hi - lo).maxCoeff();
}

/// Voxel size = scene_scale / c.
inline double compute_voxel_size(const PointCloud& cloud, double c) {
  if (c <= 0.0) throw Error("compute_voxel_size: constant must be positive");
  const double extent = scene_scale(cloud);
  if (extent <= 0.0) throw DegenerateCloud();
  return extent / c;
}

/// Deduplicated voxel corners floor(p / eps) * eps, sorted lexicographically.
inline std::vector<Vec3> voxelize(const PointCloud& cloud, double epsilon) {
  if (epsilon <= 0.0) throw NonPositiveVoxelSize();
  std::vector<std::array<std::int64_t, 3>> cells;
  cells.reserve(cloud.size());
  for (const Vec3& p : cloud.points) {
    cells.push_back({static_cast<std::int64_t>(std::floor(p.x() / epsilon)),
                     static_cast<std::int64_t>(std::floor(p.y() / epsilon)),
                     static_cast<std::int64_t>(std::floor(p.z() / epsilon))});
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  std::vector<Vec3> centers;
  centers.reserve(cells.size());
  for (const auto& c : cells) {
    centers.emplace_back(static_cast<double>(c[0]) * epsilon,
                         static_cast<double>(c[1]) * epsilon,
                         static_cast<double>(c[2]) * epsilon);
  }
  return centers;
}

/// One anchor, assembled view (storage is struct-of-arrays in GaussianScene).
struct Anchor {
  Vec3 center = Vec3::Zero();  // frozen for the whole optimization
  VecX feature;                // trainable, dimension GaussianScene::feature_dim
  double ell = 0.0;            // trainable positive scale parameter, meters
  double opacity_mean = 0.0;   // running mean of max offspring opacity
  int opacity_count = 0;
};

/// Renderable Gaussian decoded from an anchor.
struct AuxGaussian {
  Vec3 center = Vec3::Zero();
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 scale = Vec3::Ones();   // all components positive
  Vec3 color = Vec3::Zero();   // [0,1]
  double opacity = 0.0;        // [0,1)
  int anchor_index = -1;
  int offspring_index = 0;     // k in [0, K)
};

/// The four decoder heads. Each is a two-layer perceptron with ReLU hidden
/// activation; input is [feature; unit dir anchor->camera; distance; ell].
struct DecoderNet {
  Mlp2 offset;   // 3K outputs, tanh * ell envelope
  Mlp2 cov;      // 7K outputs: 4 quaternion + 3 log-scale per Gaussian
  Mlp2 color;    // 3K outputs, sigmoid
  Mlp2 opacity;  // K outputs, alpha_max * sigmoid

  int k_aux = 10;
  int feature_dim = 32;
  int hidden_dim = 32;

  int input_dim() const { return feature_dim + 5; }

  static DecoderNet init(int k_aux, int feature_dim, int hidden_dim, Rng& rng) {
    DecoderNet n;
    n.k_aux = k_aux;
    n.feature_dim = feature_dim;
    n.hidden_dim = hidden_dim;
    const int in = n.input_dim();
    n.offset = Mlp2::init(in, hidden_dim, 3 * k_aux, rng);
    n.cov = Mlp2::init(in, hidden_dim, 7 * k_aux, rng);
    n.color = Mlp2::init(in, hidden_dim, 3 * k_aux, rng);
    // positive opacity bias keeps the freshly built scene visible
    n.opacity = Mlp2::init(in, hidden_dim, k_aux, rng, 1.0);
    return n;
  }
};

struct DecoderNetGrads {
  Mlp2Grad offset, cov, color, opacity;

  void init_like(const DecoderNet& n) {
    offset.init_like(n.offset);
    cov.init_like(n.cov);
    color.init_like(n.color);
    opacity.init_like(n.opacity);
  }
};

class GaussianScene {
 public:
  GaussianScene() = default;

  /// Builds the anchor scaffold from an aggregated cloud. Anchor centers are
  /// the voxel corners and never move afterwards.
  static GaussianScene build(const PointCloud& cloud, double voxel_constant, int k_aux,
                             int feature_dim, int hidden_dim, Rng& rng) {
    GaussianScene s;
    s.scene_scale_ = scene_scale(cloud);
    if (s.scene_scale_ <= 0.0) throw DegenerateCloud();
    s.voxel_size_ = s.scene_scale_ / voxel_constant;
    const auto centers = voxelize(cloud, s.voxel_size_);
    s.centers_.resize(static_cast<int>(centers.size()), 3);
    for (int i = 0; i < static_cast<int>(centers.size()); ++i)
      s.centers_.row(i) = centers[i].transpose();
    s.features_ = MatX::Zero(s.centers_.rows(), feature_dim);
    s.log_ell_ = VecX::Constant(s.centers_.rows(), std::log(s.voxel_size_));
    s.opacity_mean_ = VecX::Zero(s.centers_.rows());
    s.opacity_count_.assign(static_cast<std::size_t>(s.centers_.rows()), 0);
    s.nets_ = DecoderNet::init(k_aux, feature_dim, hidden_dim, rng);
    return s;
  }

  int anchor_count() const { return static_cast<int>(centers_.rows()); }
  int k_aux() const { return nets_.k_aux; }
  int gaussian_count() const { return anchor_count() * nets_.k_aux; }

  const MatX& centers() const { return centers_; }
  MatX& features() { return features_; }
  const MatX& features() const { return features_; }
  VecX& log_ell() { return log_ell_; }
  const VecX& log_ell() const { return log_ell_; }
  double ell(int i) const { return std::exp(log_ell_(i)); }

  DecoderNet& nets() { return nets_; }
  const DecoderNet& nets() const { return nets_; }

  double scene_scale() const { return scene_scale_; }
  double voxel_size() const { return voxel_size_; }
  double alpha_max() const { return alpha_max_; }
  double scale_min() const { return scale_min_; }
  double scale_max() const { return scale_max_ > 0.0 ? scale_max_ : scene_scale_ / 10.0; }

  void set_scales(double scene_scale, double voxel_size) {
    scene_scale_ = scene_scale;
    voxel_size_ = voxel_size;
  }

  Anchor anchor(int i) const {
    Anchor a;
    a.center = centers_.row(i).transpose();
    a.feature = features_.row(i).transpose();
    a.ell = ell(i);
    a.opacity_mean = opacity_mean_(i);
    a.opacity_count = opacity_count_[static_cast<std::size_t>(i)];
    return a;
  }

  /// Test/build hook: append one anchor (before training only).
  void add_anchor(const Vec3& center, const VecX& feature, double ell_value) {
    const int n = anchor_count();
    centers_.conservativeResize(n + 1, 3);
    centers_.row(n) = center.transpose();
    if (features_.cols() == 0) features_.resize(0, feature.size());
    features_.conservativeResize(n + 1, features_.cols());
    features_.row(n) = feature.transpose();
    log_ell_.conservativeResize(n + 1);
    log_ell_(n) = std::log(ell_value);
    opacity_mean_.conservativeResize(n + 1);
    opacity_mean_(n) = 0.0;
    opacity_count_.push_back(0);
  }

  void set_nets(DecoderNet nets) { nets_ = std::move(nets); }

  /// Running mean of max-offspring opacity, one sample per call.
  void update_opacity_stats(const std::vector<AuxGaussian>& gaussians) {
    const int k = nets_.k_aux;
    for (int i = 0; i < anchor_count(); ++i) {
      double m = 0.0;
      for (int j = 0; j < k; ++j) m = std::max(m, gaussians[static_cast<std::size_t>(i) * k + j].opacity);
      auto& cnt = opacity_count_[static_cast<std::size_t>(i)];
      opacity_mean_(i) = (opacity_mean_(i) * cnt + m) / (cnt + 1);
      cnt += 1;
    }
  }

  void reset_opacity_stats() {
    opacity_mean_.setZero();
    std::fill(opacity_count_.begin(), opacity_count_.end(), 0);
  }

  void restore_opacity_stats(const VecX& means, const std::vector<int>& counts) {
    opacity_mean_ = means;
    opacity_count_ = counts;
  }

  double opacity_mean(int i) const { return opacity_mean_(i); }
  int opacity_count(int i) const { return opacity_count_[static_cast<std::size_t>(i)]; }

  /// Removes anchors whose stats qualify them as floaters; returns indices kept.
  std::vector<int> remove_anchors(const std::vector<int>& to_remove) {
    std::vector<char> drop(static_cast<std::size_t>(anchor_count()), 0);
    for (int i : to_remove) drop[static_cast<std::size_t>(i)] = 1;
    std::vector<int> kept;
    kept.reserve(static_cast<std::size_t>(anchor_count()));
    for (int i = 0; i < anchor_count(); ++i)
      if (!drop[static_cast<std::size_t>(i)]) kept.push_back(i);

    MatX centers(kept.size(), 3), features(kept.size(), features_.cols());
    VecX log_ell(kept.size()), op_mean(kept.size());
    std::vector<int> op_count(kept.size());
    for (std::size_t r = 0; r < kept.size(); ++r) {
      centers.row(static_cast<int>(r)) = centers_.row(kept[r]);
      features.row(static_cast<int>(r)) = features_.row(kept[r]);
      log_ell(static_cast<int>(r)) = log_ell_(kept[r]);
      op_mean(static_cast<int>(r)) = opacity_mean_(kept[r]);
      op_count[r] = opacity_count_[static_cast<std::size_t>(kept[r])];
    }
    centers_ = std::move(centers);
    features_ = std::move(features);
    log_ell_ = std::move(log_ell);
    opacity_mean_ = std::move(op_mean);
    opacity_count_ = std::move(op_count);
    return kept;
  }

 private:
  MatX centers_;  // [N x 3], frozen
  MatX features_;
  VecX log_ell_;  // trainable as log so ell stays positive
  VecX opacity_mean_;
  std::vector<int> opacity_count_;
  DecoderNet nets_;
  double scene_scale_ = 1.0;
  double voxel_size_ = 0.1;
  double alpha_max_ = 0.99;
  double scale_min_ = 1e-4;
  double scale_max_ = 0.0;  // 0 -> scene_scale / 10
};

/// Forward intermediates kept for decode_backward.
struct DecodeCache {
  bool valid = false;
  MatX input;  // [N x (F+5)]
  Mlp2::Cache offset, cov, color, opacity;
  MatX raw_offset, raw_cov, raw_color, raw_opacity;
  MatX dir;   // [N x 3], unit anchor->camera
  VecX dist;  // [N]
  Vec3 cam_center = Vec3::Zero();
};

namespace detail {
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace detail

/// Decodes all anchors for one camera position. Output is anchor-major:
/// gaussian (i, k) sits at index i*K + k. Deterministic given inputs.
inline std::vector<AuxGaussian> decode_scene(const GaussianScene& scene, const Vec3& cam_center,
                                             DecodeCache* cache = nullptr) {
  const int n = scene.anchor_count();
  const int k = scene.k_aux();
  const int f = scene.nets().feature_dim;
  const DecoderNet& nets = scene.nets();

  MatX x(n, nets.input_dim());
  MatX dir(n, 3);
  VecX dist(n);
  for (int i = 0; i < n; ++i) {
    const Vec3 v = scene.centers().row(i).transpose();
    Vec3 u = cam_center - v;
    double r = u.norm();
    if (r < 1e-12) r = 1e-12;
    const Vec3 d = u / r;
    dir.row(i) = d.transpose();
    dist(i) = r;
    x.row(i).head(f) = scene.features().row(i);
    x.row(i).segment(f, 3) = d.transpose();
    x(i, f + 3) = r;
    x(i, f + 4) = scene.ell(i);
  }

  DecodeCache local;
  DecodeCache& c = cache ? *cache : local;
  c.valid = true;
  c.input = x;
  c.dir = dir;
  c.dist = dist;
  c.cam_center = cam_center;
  c.raw_offset = nets.offset.forward(x, &c.offset);
  c.raw_cov = nets.cov.forward(x, &c.cov);
  c.raw_color = nets.color.forward(x, &c.color);
  c.raw_opacity = nets.opacity.forward(x, &c.opacity);

  const double a_max = scene.alpha_max();
  const double s_min = scene.scale_min();
  const double s_max = scene.scale_max();

  std::vector<AuxGaussian> out(static_cast<std::size_t>(n) * k);
  for (int i = 0; i < n; ++i) {
    const Vec3 v = scene.centers().row(i).transpose();
    const double ell = scene.ell(i);
    for (int j = 0; j < k; ++j) {
      AuxGaussian& g = out[static_cast<std::size_t>(i) * k + j];
      g.anchor_index = i;
      g.offspring_index = j;
      const Vec3 delta(ell * std::tanh(c.raw_offset(i, 3 * j + 0)),
                       ell * std::tanh(c.raw_offset(i, 3 * j + 1)),
                       ell * std::tanh(c.raw_offset(i, 3 * j + 2)));
      g.center = v + delta;
      // quaternion head: unit w offset keeps the zero-initialized net valid
      Eigen::Vector4d qpre(1.0 + c.raw_cov(i, 7 * j + 0), c.raw_cov(i, 7 * j + 1),
                           c.raw_cov(i, 7 * j + 2), c.raw_cov(i, 7 * j + 3));
      const double qn = qpre.norm();
      g.rotation = Eigen::Quaterniond(qpre(0) / qn, qpre(1) / qn, qpre(2) / qn, qpre(3) / qn);
      for (int a = 0; a < 3; ++a) {
        const double s = ell * std::exp(c.raw_cov(i, 7 * j + 4 + a));
        g.scale(a) = std::clamp(s, s_min, s_max);
      }
      for (int a = 0; a < 3; ++a) g.color(a) = detail::sigmoid(c.raw_color(i, 3 * j + a));
      g.opacity = a_max * detail::sigmoid(c.raw_opacity(i, j));
    }
  }
  return out;
}

/// Single-anchor decode, the contract-level entry point.
inline std::vector<AuxGaussian> decode(const Anchor& anchor, const Vec3& cam_center,
                                       const DecoderNet& nets, double scale_max = 1e8) {
  GaussianScene s;
  s.set_nets(nets);
  s.set_scales(scale_max * 10.0, anchor.ell);
  s.add_anchor(anchor.center, anchor.feature, anchor.ell);
  return decode_scene(s, cam_center);
}

/// Per-Gaussian upstream gradients, indexed like decode_scene output.
struct GaussianGrads {
  MatX d_center;   // [N*K x 3]
  MatX d_quat;     // [N*K x 4], (w,x,y,z)
  MatX d_scale;    // [N*K x 3]
  MatX d_color;    // [N*K x 3]
  VecX d_opacity;  // [N*K]

  static GaussianGrads zeros(int count) {
    GaussianGrads g;
    g.d_center = MatX::Zero(count, 3);
    g.d_quat = MatX::Zero(count, 4);
    g.d_scale = MatX::Zero(count, 3);
    g.d_color = MatX::Zero(count, 3);
    g.d_opacity = VecX::Zero(count);
    return g;
  }
};

/// Gradients produced by decode_backward.
struct SceneGrads {
  MatX d_features;  // [N x F]
  VecX d_ell;       // [N], w.r.t. ell itself (not log ell)
  DecoderNetGrads nets;
  Vec3 d_cam_center = Vec3::Zero();
};

/// Exact reverse-mode gradients of decode_scene. The cache must come from
/// the matching forward call.
inline SceneGrads decode_backward(const GaussianScene& scene, const DecodeCache& cache,
                                  const GaussianGrads& up) {
  if (!cache.valid) throw MissingCache("decode_backward: run decode_scene with a cache first");
  const int n = scene.anchor_count();
  const int k = scene.k_aux();
  const int f = scene.nets().feature_dim;
  const DecoderNet& nets = scene.nets();
  const double a_max = scene.alpha_max();
  const double s_min = scene.scale_min();
  const double s_max = scene.scale_max();

  SceneGrads out;
  out.d_features = MatX::Zero(n, f);
  out.d_ell = VecX::Zero(n);
  out.nets.init_like(nets);

  MatX d_raw_offset = MatX::Zero(n, 3 * k);
  MatX d_raw_cov = MatX::Zero(n, 7 * k);
  MatX d_raw_color = MatX::Zero(n, 3 * k);
  MatX d_raw_opacity = MatX::Zero(n, k);

  for (int i = 0; i < n; ++i) {
    const double ell = scene.ell(i);
    double d_ell = 0.0;
    for (int j = 0; j < k; ++j) {
      const std::size_t g = static_cast<std::size_t>(i) * k + j;
      // offset head: delta = ell * tanh(raw); center = v + delta
      for (int a = 0; a < 3; ++a) {
        const double th = std::tanh(cache.raw_offset(i, 3 * j + a));
        const double dc = up.d_center(static_cast<int>(g), a);
        d_raw_offset(i, 3 * j + a) = dc * ell * (1.0 - th * th);
        d_ell += dc * th;
      }
      // quaternion: q = qpre / |qpre| with qpre = raw + (1,0,0,0)
      Eigen::Vector4d qpre(1.0 + cache.raw_cov(i, 7 * j + 0), cache.raw_cov(i, 7 * j + 1),
                           cache.raw_cov(i, 7 * j + 2), cache.raw_cov(i, 7 * j + 3));
      const double qn = qpre.norm();
      const Eigen::Vector4d q = qpre / qn;
      const Eigen::Vector4d dq = up.d_quat.row(static_cast<int>(g)).transpose();
      const Eigen::Vector4d dqpre = (dq - q * q.dot(dq)) / qn;
      for (int a = 0; a < 4; ++a) d_raw_cov(i, 7 * j + a) = dqpre(a);
      // scale: s = clamp(ell * exp(raw), s_min, s_max); zero slope when clamped
      for (int a = 0; a < 3; ++a) {
        const double s = ell * std::exp(cache.raw_cov(i, 7 * j + 4 + a));
        if (s > s_min && s < s_max) {
          const double ds = up.d_scale(static_cast<int>(g), a);
          d_raw_cov(i, 7 * j + 4 + a) = ds * s;
          d_ell += ds * s / ell;
        }
      }
      // color: sigmoid
      for (int a = 0; a < 3; ++a) {
        const double sg = detail::sigmoid(cache.raw_color(i, 3 * j + a));
        d_raw_color(i, 3 * j + a) = up.d_color(static_cast<int>(g), a) * sg * (1.0 - sg);
      }
      // opacity: alpha_max * sigmoid
      const double sg = detail::sigmoid(cache.raw_opacity(i, j));
      d_raw_opacity(i, j) = up.d_opacity(static_cast<int>(g)) * a_max * sg * (1.0 - sg);
    }
    out.d_ell(i) += d_ell;
  }

  MatX d_x = nets.offset.backward(cache.offset, d_raw_offset, &out.nets.offset.hidden,
                                  &out.nets.offset.output);
  d_x += nets.cov.backward(cache.cov, d_raw_cov, &out.nets.cov.hidden, &out.nets.cov.output);
  d_x += nets.color.backward(cache.color, d_raw_color, &out.nets.color.hidden,
                             &out.nets.color.output);
  d_x += nets.opacity.backward(cache.opacity, d_raw_opacity, &out.nets.opacity.hidden,
                               &out.nets.opacity.output);

  // input slots: [feature; dir; dist; ell]
  out.d_features += d_x.leftCols(f);
  out.d_ell += d_x.col(f + 4);
  for (int i = 0; i < n; ++i) {
    const Vec3 d_dir = d_x.row(i).segment(f, 3).transpose();
    const double d_dist = d_x(i, f + 3);
    const Vec3 dir = cache.dir.row(i).transpose();
    const double r = cache.dist(i);
    // dir = u/|u|, dist = |u|, u = cam_center - v
    const Vec3 d_u = (d_dir - dir * dir.dot(d_dir)) / r + dir * d_dist;
    out.d_cam_center += d_u;
  }
  return out;
}

/// Removes anchors whose running-mean max-offspring opacity stayed below
/// the threshold for at least `window` samples. Returns the removed count.
inline std::size_t prune_floaters(GaussianScene& scene, double opacity_threshold, int window) {
  std::vector<int> doomed;
  for (int i = 0; i < scene.anchor_count(); ++i) {
    if (scene.opacity_count(i) >= window && scene.opacity_mean(i) < opacity_threshold) {
      doomed.push_back(i);
    }
  }
  if (!doomed.empty()) scene.remove_anchors(doomed);
  return doomed.size();
}

}  // namespace gscalib

// Joint optimization of scene parameters and per-camera extrinsics.
// Scene groups train with AdamW (decoupled weight decay on a schedule);
// each camera has its own Adam over the 6D tangent gradient, applied as a
// left-multiplicative manifold update to that camera's single shared
// LiDAR-to-camera extrinsic.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gscalib/dataset.hpp"
#include "gscalib/errors.hpp"
#include "gscalib/io/checkpoint.hpp"
#include "gscalib/losses.hpp"
#include "gscalib/metrics.hpp"
#include "gscalib/random.hpp"
#include "gscalib/rasterizer.hpp"
#include "gscalib/rig.hpp"
#include "gscalib/scene.hpp"

namespace gscalib {

struct TrainConfig {
  long total_iters = 30000;
  double weight_decay = 1e-2;
  long weight_decay_until = 15000;  // decay drops to zero from this iteration on
  double lr_pose_rotation = 2e-3;
  double lr_pose_translation = 8e-3;
  double lr_anchor_features = 2.5e-3;
  double lr_anchor_scale = 2.5e-3;
  double lr_mlp = 2e-3;
  double lambda_dssim = 0.2;
  int aux_count = 10;            // K auxiliary Gaussians per anchor
  double scale_reg_sigma = 10.0; // anisotropy threshold
  int min_cycles = 5;            // pose updates wait for this many full passes
  double prune_opacity_threshold = 0.05;
  long prune_window = 1000;
  double voxel_constant = 100.0; // voxel size = scene_scale / c
  std::uint64_t seed = 0;
  long checkpoint_every = 1000;
  int workers = 1;
};

inline nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"total_iters", c.total_iters},
          {"weight_decay", c.weight_decay},
          {"weight_decay_until", c.weight_decay_until},
          {"lr_pose_rotation", c.lr_pose_rotation},
          {"lr_pose_translation", c.lr_pose_translation},
          {"lr_anchor_features", c.lr_anchor_features},
          {"lr_anchor_scale", c.lr_anchor_scale},
          {"lr_mlp", c.lr_mlp},
          {"lambda_dssim", c.lambda_dssim},
          {"aux_count", c.aux_count},
          {"scale_reg_sigma", c.scale_reg_sigma},
          {"min_cycles", c.min_cycles},
          {"prune_opacity_threshold", c.prune_opacity_threshold},
          {"prune_window", c.prune_window},
          {"voxel_constant", c.voxel_constant},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"workers", c.workers}};
}

/// Strict parse: unknown keys are errors, known keys override defaults.
inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "total_iters") c.total_iters = value.get<long>();
    else if (key == "weight_decay") c.weight_decay = value.get<double>();
    else if (key == "weight_decay_until") c.weight_decay_until = value.get<long>();
    else if (key == "lr_pose_rotation") c.lr_pose_rotation = value.get<double>();
    else if (key == "lr_pose_translation") c.lr_pose_translation = value.get<double>();
    else if (key == "lr_anchor_features") c.lr_anchor_features = value.get<double>();
    else if (key == "lr_anchor_scale") c.lr_anchor_scale = value.get<double>();
    else if (key == "lr_mlp") c.lr_mlp = value.get<double>();
    else if (key == "lambda_dssim") c.lambda_dssim = value.get<double>();
    else if (key == "aux_count") c.aux_count = value.get<int>();
    else if (key == "scale_reg_sigma") c.scale_reg_sigma = value.get<double>();
    else if (key == "min_cycles") c.min_cycles = value.get<int>();
    else if (key == "prune_opacity_threshold") c.prune_opacity_threshold = value.get<double>();
    else if (key == "prune_window") c.prune_window = value.get<long>();
    else if (key == "voxel_constant") c.voxel_constant = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "checkpoint_every") c.checkpoint_every = value.get<long>();
    else if (key == "workers") c.workers = value.get<int>();
    else throw Error("unknown config key: " + key);
  }
  if (c.min_cycles < 1) throw Error("min_cycles must be >= 1");
  return c;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingFile(path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad config json " + path + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamMoments {
  MatX m, v;
  long step = 0;

  static AdamMoments zeros(long rows, long cols) {
    AdamMoments a;
    a.m = MatX::Zero(rows, cols);
    a.v = MatX::Zero(rows, cols);
    return a;
  }
};

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Standard decoupled-weight-decay Adam step, in place.
inline void adamw_update(Eigen::Ref<MatX> param, const MatX& grad, AdamMoments& mom,
                         const AdamParams& p) {
  mom.step += 1;
  mom.m = p.beta1 * mom.m + (1.0 - p.beta1) * grad;
  mom.v = p.beta2 * mom.v + (1.0 - p.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(mom.step));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(mom.step));
  const MatX mhat = mom.m / c1;
  const MatX vhat = mom.v / c2;
  param -= p.lr * (mhat.array() / (vhat.array().sqrt() + p.eps)).matrix();
  if (p.weight_decay != 0.0) param -= (p.lr * p.weight_decay) * param;
}

// ---------------------------------------------------------------------------
// Pose optimizer: Adam on the tangent gradient, manifold update
// ---------------------------------------------------------------------------

struct PoseMoments {
  Twist m = Twist::Zero();
  Twist v = Twist::Zero();
  long step = 0;
};

/// T <- exp(-lambda (.) adam(g)) * T with lambda = (lr_trans x3, lr_rot x3).
/// Moments live in the tangent space across steps (no parallel transport).
inline Pose pose_update(const Pose& t_lc, const Twist& grad, double lr_rot, double lr_trans,
                        PoseMoments& mom, double beta1 = 0.9, double beta2 = 0.999,
                        double eps = 1e-8) {
  mom.step += 1;
  mom.m = beta1 * mom.m + (1.0 - beta1) * grad;
  mom.v = beta2 * mom.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(mom.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(mom.step));
  const Twist dir = (mom.m / c1).array() / ((mom.v / c2).array().sqrt() + eps);
  Twist step;
  step.head<3>() = -lr_trans * dir.head<3>();
  step.tail<3>() = -lr_rot * dir.tail<3>();
  if (step.isZero(0.0)) return t_lc;  // zero learning rates stay bit-identical
  return exp(step).compose(t_lc);
}

// ---------------------------------------------------------------------------
// Train state
// ---------------------------------------------------------------------------

struct MlpMoments {
  AdamMoments w_hidden, b_hidden, w_out, b_out;

  static MlpMoments zeros_like(const Mlp2& net) {
    MlpMoments m;
    m.w_hidden = AdamMoments::zeros(net.hidden.weight.rows(), net.hidden.weight.cols());
    m.b_hidden = AdamMoments::zeros(net.hidden.bias.size(), 1);
    m.w_out = AdamMoments::zeros(net.output.weight.rows(), net.output.weight.cols());
    m.b_out = AdamMoments::zeros(net.output.bias.size(), 1);
    return m;
  }
};

struct TrainState {
  long iteration = 0;
  AdamMoments features, log_ell;
  MlpMoments offset, cov, color, opacity;
  std::vector<PoseMoments> pose;                // one per camera
  std::vector<std::vector<long>> visit_counts;  // per track, per image
  Rng rng;

  static TrainState init(const GaussianScene& scene, const Dataset& ds,
                         const TrainConfig& config) {
    TrainState s;
    s.features = AdamMoments::zeros(scene.features().rows(), scene.features().cols());
    s.log_ell = AdamMoments::zeros(scene.log_ell().size(), 1);
    s.offset = MlpMoments::zeros_like(scene.nets().offset);
    s.cov = MlpMoments::zeros_like(scene.nets().cov);
    s.color = MlpMoments::zeros_like(scene.nets().color);
    s.opacity = MlpMoments::zeros_like(scene.nets().opacity);
    s.pose.resize(ds.initial_rig.cameras.size());
    for (const auto& track : ds.tracks)
      s.visit_counts.emplace_back(track.images.size(), 0);
    s.rng.seed(config.seed);
    return s;
  }

  bool all_visited_at_least(long n) const {
    for (const auto& track : visit_counts)
      for (long c : track)
        if (c < n) return false;
    return true;
  }

  /// Drop optimizer rows of pruned anchors; `kept` is the surviving order.
  void prune_anchor_rows(const std::vector<int>& kept) {
    auto take_rows = [&kept](const MatX& m) {
      MatX out(static_cast<long>(kept.size()), m.cols());
      for (std::size_t r = 0; r < kept.size(); ++r) out.row(static_cast<long>(r)) = m.row(kept[r]);
      return out;
    };
    features.m = take_rows(features.m);
    features.v = take_rows(features.v);
    log_ell.m = take_rows(log_ell.m);
    log_ell.v = take_rows(log_ell.v);
  }
};

/// Hyperparameters in force for the current iteration.
struct ScheduleDecision {
  double weight_decay = 0.0;
  bool pose_updates_enabled = false;
};

/// Weight decay holds until `weight_decay_until`, then drops to exactly
/// zero. Pose updates stay gated until every image has been visited at
/// least `min_cycles` times.
inline ScheduleDecision schedule(const TrainState& state, const TrainConfig& config) {
  ScheduleDecision d;
  d.weight_decay =
      state.iteration < config.weight_decay_until ? config.weight_decay : 0.0;
  d.pose_updates_enabled = state.all_visited_at_least(config.min_cycles);
  return d;
}

// ---------------------------------------------------------------------------
// One optimization step
// ---------------------------------------------------------------------------

namespace detail {

inline void apply_mlp_update(Mlp2& net, const Mlp2Grad& grad, MlpMoments& mom,
                             AdamParams p) {
  adamw_update(net.hidden.weight, grad.hidden.weight, mom.w_hidden, p);
  adamw_update(net.hidden.bias, grad.hidden.bias, mom.b_hidden, p);
  adamw_update(net.output.weight, grad.output.weight, mom.w_out, p);
  adamw_update(net.output.bias, grad.output.bias, mom.b_out, p);
}

}  // namespace detail

/// Renders one (camera, timestamp) image, backpropagates, updates scene
/// parameters and (when the gate is open) that camera's extrinsic.
/// Throws NonFiniteLoss with a diagnostic dump on numerical failure.
inline LossReport step(GaussianScene& scene, CameraRig& rig, int camera_index, int image_index,
                       const Dataset& dataset, TrainState& state, const TrainConfig& config) {
  const RigCamera& cam = rig.cameras[static_cast<std::size_t>(camera_index)];
  const ImageRecord& obs =
      dataset.tracks[static_cast<std::size_t>(camera_index)].images[static_cast<std::size_t>(image_index)];

  state.visit_counts[static_cast<std::size_t>(camera_index)][static_cast<std::size_t>(image_index)] += 1;
  const ScheduleDecision hp = schedule(state, config);

  const Pose world_to_cam = dataset.camera_pose(cam, obs.t);
  const Vec3 cam_center = world_to_cam.center();

  DecodeCache cache;
  const std::vector<AuxGaussian> gaussians = decode_scene(scene, cam_center, &cache);

  RenderOptions ropt;
  ropt.workers = config.workers;
  const SceneProjection view = project_scene(gaussians, world_to_cam, cam.intrinsics, ropt);
  const RenderPacket packet = render(view.splats, cam.intrinsics, ropt);

  auto [photo, d_image] = photometric(packet.color, obs.image, config.lambda_dssim);

  std::vector<Vec3> visible_scales;
  visible_scales.reserve(view.visible_gaussians.size());
  for (int gi : view.visible_gaussians)
    visible_scales.push_back(gaussians[static_cast<std::size_t>(gi)].scale);
  auto [reg, reg_grads] = scale_reg(visible_scales, config.scale_reg_sigma);

  LossReport report;
  report.photo = photo;
  report.scale_reg = reg;
  report.total = photo + reg;
  report.d_image = d_image;

  if (!std::isfinite(report.total)) {
    std::cerr << "non-finite loss at iteration " << state.iteration << ": photo=" << photo
              << " scale_reg=" << reg << " splats=" << view.splats.size()
              << " anchors=" << scene.anchor_count() << "\n";
    throw NonFiniteLoss("loss is not finite at iteration " + std::to_string(state.iteration));
  }

  // backward
  const SplatGrads splat_grads = render_backward(packet, d_image);
  ProjectionBackwardResult back = projection_backward(view, splat_grads, world_to_cam,
                                                      cam.intrinsics);
  for (std::size_t s = 0; s < view.visible_gaussians.size(); ++s)
    back.gaussians.d_scale.row(view.visible_gaussians[s]) += reg_grads[s].transpose();

  const SceneGrads scene_grads = decode_backward(scene, cache, back.gaussians);

  // scene updates (anchor centers are never touched)
  AdamParams p_feat{config.lr_anchor_features, 0.9, 0.999, 1e-8, hp.weight_decay};
  adamw_update(scene.features(), scene_grads.d_features, state.features, p_feat);

  // ell is trained as log(ell): d/dlog = d/dell * ell
  const VecX ell = scene.log_ell().array().exp().matrix();
  const MatX d_log_ell = scene_grads.d_ell.cwiseProduct(ell);
  AdamParams p_ell{config.lr_anchor_scale, 0.9, 0.999, 1e-8, hp.weight_decay};
  adamw_update(scene.log_ell(), d_log_ell, state.log_ell, p_ell);

  AdamParams p_mlp{config.lr_mlp, 0.9, 0.999, 1e-8, hp.weight_decay};
  detail::apply_mlp_update(scene.nets().offset, scene_grads.nets.offset, state.offset, p_mlp);
  detail::apply_mlp_update(scene.nets().cov, scene_grads.nets.cov, state.cov, p_mlp);
  detail::apply_mlp_update(scene.nets().color, scene_grads.nets.color, state.color, p_mlp);
  detail::apply_mlp_update(scene.nets().opacity, scene_grads.nets.opacity, state.opacity, p_mlp);

  // rig-based pose update: one shared extrinsic per camera
  if (hp.pose_updates_enabled) {
    back.pose.color_term = camera_center_pose_term(world_to_cam, scene_grads.d_cam_center);
    const Twist g = back.pose.total();
    rig.cameras[static_cast<std::size_t>(camera_index)].t_lc =
        pose_update(cam.t_lc, g, config.lr_pose_rotation, config.lr_pose_translation,
                    state.pose[static_cast<std::size_t>(camera_index)]);
  }

  scene.update_opacity_stats(gaussians);
  state.iteration += 1;
  return report;
}

// ---------------------------------------------------------------------------
// Full calibration loop
// ---------------------------------------------------------------------------

struct HistoryRow {
  long iter = 0;
  double total = 0.0, photo = 0.0, scale_reg = 0.0;
  // per camera: rotation/translation delta from the initial extrinsic
  std::vector<std::pair<double, double>> deltas;
};

struct CalibrationResult {
  CameraRig final_rig;
  GaussianScene scene;
  std::vector<HistoryRow> history;
};

using IterCallback = std::function<void(const HistoryRow&)>;

inline void write_history_csv(const std::string& path, const std::vector<HistoryRow>& history,
                              const CameraRig& rig) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open for write: " + path);
  f << "iter,total,photo,scale_reg";
  for (const auto& cam : rig.cameras)
    f << "," << cam.name << "_rot_delta_deg," << cam.name << "_trans_delta_m";
  f << "\n";
  f << std::setprecision(17);
  for (const auto& row : history) {
    f << row.iter << "," << row.total << "," << row.photo << "," << row.scale_reg;
    for (const auto& [r, t] : row.deltas) f << "," << r << "," << t;
    f << "\n";
  }
}

/// Runs the whole joint optimization. When `out_dir` is non-empty, writes
/// checkpoints, the per-iteration loss CSV and the pose trajectory there.
inline CalibrationResult calibrate(const Dataset& dataset, const TrainConfig& config,
                                   const std::filesystem::path& out_dir = {},
                                   const IterCallback& on_iter = nullptr) {
  if (dataset.total_images() == 0) throw EmptyInput("dataset has no images");

  Rng rng(config.seed);
  const PointCloud cloud = dataset.aggregated_cloud();
  GaussianScene scene =
      GaussianScene::build(cloud, config.voxel_constant, config.aux_count, 32, 32, rng);

  CalibrationResult result;
  result.final_rig = dataset.initial_rig;
  const CameraRig initial_rig = dataset.initial_rig;
  TrainState state = TrainState::init(scene, dataset, config);
  state.rng = rng;  // continue the seeded stream

  std::vector<std::pair<int, int>> flat;  // (camera, image) pairs
  for (std::size_t ci = 0; ci < dataset.tracks.size(); ++ci)
    for (std::size_t ii = 0; ii < dataset.tracks[ci].images.size(); ++ii)
      flat.emplace_back(static_cast<int>(ci), static_cast<int>(ii));

  const bool emit = !out_dir.empty();
  std::ofstream trajectory;
  if (emit) {
    std::filesystem::create_directories(out_dir);
    trajectory.open(out_dir / "trajectory.csv");
    trajectory << "iter,camera,r00,r01,r02,tx,r10,r11,r12,ty,r20,r21,r22,tz\n"
               << std::setprecision(17);
  }
  auto emit_trajectory = [&](long iter) {
    if (!emit) return;
    for (const auto& cam : result.final_rig.cameras) {
      trajectory << iter << "," << cam.name;
      const Mat34 m = cam.t_lc.matrix3x4();
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) trajectory << "," << m(r, c);
      trajectory << "\n";
    }
  };
  auto checkpoint_name = [](long iter) {
    std::ostringstream os;
    os << "ckpt_" << std::setw(6) << std::setfill('0') << iter;
    return os.str();
  };

  emit_trajectory(0);
  for (long iter = 0; iter < config.total_iters; ++iter) {
    // round-robin until the viewpoint-cycle gate opens, then uniform random
    std::pair<int, int> pick;
    if (!state.all_visited_at_least(config.min_cycles)) {
      pick = flat[static_cast<std::size_t>(iter) % flat.size()];
    } else {
      pick = flat[uniform_index(state.rng, flat.size())];
    }

    const LossReport report =
        step(scene, result.final_rig, pick.first, pick.second, dataset, state, config);

    HistoryRow row;
    row.iter = iter;
    row.total = report.total;
    row.photo = report.photo;
    row.scale_reg = report.scale_reg;
    for (std::size_t ci = 0; ci < result.final_rig.cameras.size(); ++ci) {
      row.deltas.push_back(pose_error_pair(result.final_rig.cameras[ci].t_lc,
                                           initial_rig.cameras[ci].t_lc));
    }
    result.history.push_back(row);
    if (on_iter) on_iter(row);

    if (config.prune_window > 0 && (iter + 1) % config.prune_window == 0) {
      std::vector<int> doomed;
      for (int i = 0; i < scene.anchor_count(); ++i) {
        if (scene.opacity_count(i) >= config.prune_window &&
            scene.opacity_mean(i) < config.prune_opacity_threshold) {
          doomed.push_back(i);
        }
      }
      if (!doomed.empty()) {
        const std::vector<int> kept = scene.remove_anchors(doomed);
        state.prune_anchor_rows(kept);
      }
      scene.reset_opacity_stats();
    }

    if (emit && config.checkpoint_every > 0 && (iter + 1) % config.checkpoint_every == 0) {
      save_checkpoint((out_dir / (checkpoint_name(iter + 1) + ".bin")).string(), scene);
      save_rig((out_dir / (checkpoint_name(iter + 1) + "_rig.json")).string(), result.final_rig);
      emit_trajectory(iter + 1);
    }
  }

  if (emit) {
    save_checkpoint((out_dir / "scene_final.bin").string(), scene);
    save_rig((out_dir / "rig_final.json").string(), result.final_rig);
    emit_trajectory(config.total_iters);
    write_history_csv((out_dir / "loss.csv").string(), result.history, result.final_rig);
  }
  result.scene = std::move(scene);
  return result;
}

}  // namespace gscalib

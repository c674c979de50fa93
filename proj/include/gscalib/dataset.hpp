// Dataset ingestion and persistence. A dataset directory is described by a
// single manifest.json listing LiDAR scans (PLY + pose) and per-camera
// image sequences; see docs/formats.md for the schema.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gscalib/errors.hpp"
#include "gscalib/image.hpp"
#include "gscalib/io/ply.hpp"
#include "gscalib/io/png.hpp"
#include "gscalib/rig.hpp"
#include "gscalib/scene.hpp"

namespace gscalib {

struct ScanRecord {
  int t = 0;            // timestamp index, 1-based
  Pose pose;            // scan frame -> global LiDAR frame
  PointCloud cloud;     // points in the scan frame
  std::string ply_file; // path relative to the dataset root
};

struct ImageRecord {
  int t = 0;
  std::string file;  // relative path
  Image image;
};

struct CameraTrack {
  std::string name;
  std::vector<ImageRecord> images;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<ScanRecord> scans;       // sorted by t
  std::vector<CameraTrack> tracks;     // order matches initial_rig.cameras
  CameraRig initial_rig;
  std::optional<CameraRig> gt_rig;

  const ScanRecord* scan_at(int t) const {
    for (const auto& s : scans)
      if (s.t == t) return &s;
    return nullptr;
  }

  std::size_t total_images() const {
    std::size_t n = 0;
    for (const auto& tr : tracks) n += tr.images.size();
    return n;
  }

  /// All scans expressed in the global LiDAR frame.
  PointCloud aggregated_cloud() const {
    std::vector<std::pair<PointCloud, Pose>> pairs;
    pairs.reserve(scans.size());
    for (const auto& s : scans) {
      PointCloud c = s.cloud;
      c.timestamps.assign(c.size(), s.t);
      pairs.emplace_back(std::move(c), s.pose);
    }
    return aggregate(pairs);
  }

  /// World(LiDAR global) -> camera pose for camera `cam` at timestamp t.
  Pose camera_pose(const RigCamera& cam, int t) const {
    const ScanRecord* s = scan_at(t);
    if (!s) throw TimestampGap("no LiDAR pose for timestamp " + std::to_string(t));
    return cam.t_lc.compose(s->pose.inverse());
  }
};

inline Dataset load_dataset(const std::filesystem::path& root,
                            const std::string& manifest_name = "manifest.json") {
  const auto manifest_path = root / manifest_name;
  std::ifstream f(manifest_path);
  if (!f) throw MissingFile(manifest_path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad manifest json " + manifest_path.string() + ": " + e.what());
  }

  Dataset ds;
  ds.root = root;

  for (const auto& js : j.at("scans")) {
    ScanRecord rec;
    rec.t = js.at("t").get<int>();
    rec.ply_file = js.at("ply").get<std::string>();
    rec.pose = detail::pose_from_json(js.at("pose"));
    const auto ply_path = root / rec.ply_file;
    if (!std::filesystem::exists(ply_path)) throw MissingFile(ply_path.string());
    rec.cloud = read_ply(ply_path.string());
    ds.scans.push_back(std::move(rec));
  }
  if (ds.scans.empty()) throw Error("manifest lists no scans");
  std::sort(ds.scans.begin(), ds.scans.end(),
            [](const ScanRecord& a, const ScanRecord& b) { return a.t < b.t; });

  for (const auto& jc : j.at("cameras")) {
    RigCamera cam;
    cam.name = jc.at("name").get<std::string>();
    cam.intrinsics = detail::intrinsics_from_json(jc.at("intrinsics"));
    cam.t_lc = detail::pose_from_json(jc.at("t_lc_init"));
    ds.initial_rig.cameras.push_back(cam);

    CameraTrack track;
    track.name = cam.name;
    for (const auto& ji : jc.at("images")) {
      ImageRecord rec;
      rec.t = ji.at("t").get<int>();
      rec.file = ji.at("file").get<std::string>();
      if (!ds.scan_at(rec.t)) {
        throw TimestampGap("camera " + cam.name + " image t=" + std::to_string(rec.t) +
                           " has no LiDAR pose (" + rec.file + ")");
      }
      const auto img_path = root / rec.file;
      if (!std::filesystem::exists(img_path)) throw MissingFile(img_path.string());
      rec.image = read_png(img_path.string());
      if (rec.image.width() != cam.intrinsics.width ||
          rec.image.height() != cam.intrinsics.height) {
        throw DimensionMismatch(
            "image " + rec.file + " is " + std::to_string(rec.image.width()) + "x" +
            std::to_string(rec.image.height()) + " but intrinsics declare " +
            std::to_string(cam.intrinsics.width) + "x" + std::to_string(cam.intrinsics.height));
      }
      track.images.push_back(std::move(rec));
    }
    ds.tracks.push_back(std::move(track));
  }
  ds.initial_rig.validate();

  if (j.contains("gt_rig")) {
    const auto gt_path = root / j.at("gt_rig").get<std::string>();
    if (!std::filesystem::exists(gt_path)) throw MissingFile(gt_path.string());
    ds.gt_rig = load_rig(gt_path.string());
  }
  return ds;
}

/// Writes every artifact (PLYs, PNGs, rig, manifest) under `root`.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& root,
                         bool binary_ply = true) {
  std::filesystem::create_directories(root / "scans");
  std::filesystem::create_directories(root / "images");

  nlohmann::json manifest;
  manifest["scans"] = nlohmann::json::array();
  for (const auto& s : ds.scans) {
    const std::string rel = s.ply_file.empty()
                                ? "scans/scan_" + std::to_string(s.t) + ".ply"
                                : s.ply_file;
    write_ply((root / rel).string(), s.cloud, binary_ply);
    manifest["scans"].push_back({{"t", s.t}, {"ply", rel}, {"pose", detail::pose_to_json(s.pose)}});
  }

  manifest["cameras"] = nlohmann::json::array();
  for (std::size_t ci = 0; ci < ds.tracks.size(); ++ci) {
    const CameraTrack& track = ds.tracks[ci];
    const RigCamera& cam = ds.initial_rig.cameras[ci];
    nlohmann::json images = nlohmann::json::array();
    for (const auto& rec : track.images) {
      const std::string rel = rec.file.empty()
                                  ? "images/" + cam.name + "_" + std::to_string(rec.t) + ".png"
                                  : rec.file;
      write_png((root / rel).string(), rec.image);
      images.push_back({{"t", rec.t}, {"file", rel}});
    }
    manifest["cameras"].push_back({{"name", cam.name},
                                   {"intrinsics", detail::intrinsics_to_json(cam.intrinsics)},
                                   {"t_lc_init", detail::pose_to_json(cam.t_lc)},
                                   {"images", images}});
  }

  if (ds.gt_rig) {
    save_rig((root / "gt_rig.json").string(), *ds.gt_rig);
    manifest["gt_rig"] = "gt_rig.json";
  }

  std::ofstream f(root / "manifest.json");
  if (!f) throw Error("cannot open for write: " + (root / "manifest.json").string());
  f << manifest.dump(2) << "\n";
}

}  // namespace gscalib

// Camera rig: per-camera pinhole intrinsics plus the LiDAR-to-camera
// extrinsic, which is the calibration target. JSON serialization stores
// each extrinsic as 12 row-major [R|t] numbers.

#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gscalib/camera.hpp"
#include "gscalib/errors.hpp"
#include "gscalib/lie.hpp"

namespace gscalib {

struct RigCamera {
  std::string name;
  PinholeCamera intrinsics;
  Pose t_lc;  // LiDAR frame -> camera frame
};

struct CameraRig {
  std::vector<RigCamera> cameras;

  const RigCamera* find(const std::string& name) const {
    for (const auto& c : cameras)
      if (c.name == name) return &c;
    return nullptr;
  }
  RigCamera* find(const std::string& name) {
    for (auto& c : cameras)
      if (c.name == name) return &c;
    return nullptr;
  }

  const RigCamera& at(const std::string& name) const {
    const RigCamera* c = find(name);
    if (!c) throw NameMismatch("no camera named '" + name + "' in rig");
    return *c;
  }

  void validate() const {
    if (cameras.empty()) throw Error("rig needs at least one camera");
    for (std::size_t i = 0; i < cameras.size(); ++i) {
      for (std::size_t j = i + 1; j < cameras.size(); ++j) {
        if (cameras[i].name == cameras[j].name)
          throw Error("duplicate camera name: " + cameras[i].name);
      }
      if (!cameras[i].intrinsics.valid())
        throw Error("invalid intrinsics for camera: " + cameras[i].name);
    }
  }
};

namespace detail {

inline nlohmann::json pose_to_json(const Pose& p) {
  const Mat34 m = p.matrix3x4();
  nlohmann::json arr = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) arr.push_back(m(r, c));
  return arr;
}

inline Pose pose_from_json(const nlohmann::json& arr) {
  if (!arr.is_array() || arr.size() != 12) throw Error("pose json must be 12 numbers");
  Mat34 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = arr[static_cast<std::size_t>(r * 4 + c)].get<double>();
  return Pose(Rotation::from_matrix(m.leftCols<3>()), m.col(3));
}

inline nlohmann::json intrinsics_to_json(const PinholeCamera& cam) {
  return {{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx},         {"cy", cam.cy},
          {"width", cam.width}, {"height", cam.height}, {"near", cam.near}, {"far", cam.far}};
}

inline PinholeCamera intrinsics_from_json(const nlohmann::json& j) {
  PinholeCamera cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  cam.near = j.value("near", 0.1);
  cam.far = j.value("far", 1e4);
  return cam;
}

}  // namespace detail

inline nlohmann::json rig_to_json(const CameraRig& rig) {
  nlohmann::json cams = nlohmann::json::array();
  for (const auto& c : rig.cameras) {
    cams.push_back({{"name", c.name},
                    {"intrinsics", detail::intrinsics_to_json(c.intrinsics)},
                    {"t_lc", detail::pose_to_json(c.t_lc)}});
  }
  return {{"cameras", cams}};
}

inline CameraRig rig_from_json(const nlohmann::json& j) {
  CameraRig rig;
  for (const auto& c : j.at("cameras")) {
    RigCamera cam;
    cam.name = c.at("name").get<std::string>();
    cam.intrinsics = detail::intrinsics_from_json(c.at("intrinsics"));
    cam.t_lc = detail::pose_from_json(c.at("t_lc"));
    rig.cameras.push_back(std::move(cam));
  }
  rig.validate();
  return rig;
}

inline void save_rig(const std::string& path, const CameraRig& rig) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open for write: " + path);
  f << rig_to_json(rig).dump(2) << "\n";
}

inline CameraRig load_rig(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingFile(path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad rig json " + path + ": " + e.what());
  }
  return rig_from_json(j);
}

}  // namespace gscalib

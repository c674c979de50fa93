// Error taxonomy shared by every module. All failures surface as typed
// exceptions rooted at gscalib::Error so callers can map them to exit codes.

#pragma once

#include <stdexcept>
#include <string>

namespace gscalib {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// lie
struct AngleNearPi : Error {
  explicit AngleNearPi(const std::string& msg = "rotation angle too close to pi for log()")
      : Error(msg) {}
};

// scene
struct EmptyInput : Error {
  explicit EmptyInput(const std::string& msg = "empty input") : Error(msg) {}
};
struct NonPositiveVoxelSize : Error {
  explicit NonPositiveVoxelSize(const std::string& msg = "voxel size must be positive")
      : Error(msg) {}
};
struct DegenerateCloud : Error {
  explicit DegenerateCloud(const std::string& msg = "point cloud has zero extent")
      : Error(msg) {}
};
struct MissingCache : Error {
  explicit MissingCache(const std::string& msg = "backward pass requires a cached forward pass")
      : Error(msg) {}
};

// losses
struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& msg = "image shapes differ") : Error(msg) {}
};

// optim
struct NonFiniteLoss : Error {
  explicit NonFiniteLoss(const std::string& msg = "loss became non-finite") : Error(msg) {}
};

// io
struct MissingFile : Error {
  explicit MissingFile(const std::string& path) : Error("missing file: " + path) {}
};
struct DimensionMismatch : Error {
  explicit DimensionMismatch(const std::string& msg) : Error(msg) {}
};
struct TimestampGap : Error {
  explicit TimestampGap(const std::string& msg) : Error(msg) {}
};
struct NameMismatch : Error {
  explicit NameMismatch(const std::string& msg) : Error(msg) {}
};
struct MissingCheckpoint : Error {
  explicit MissingCheckpoint(const std::string& path) : Error("missing checkpoint: " + path) {}
};

// synth
struct DegenerateSpec : Error {
  explicit DegenerateSpec(const std::string& msg) : Error(msg) {}
};

}  // namespace gscalib

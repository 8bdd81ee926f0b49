#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flsmap/geometry.hpp"
#include "flsmap/types.hpp"

namespace flsmap {

struct FramePose {
  int64_t frame_id = 0;
  double time = 0;
  Pose<double> pose;  // world-from-sonar
  // Quaternion as stored on disk (kept verbatim so that writes round-trip).
  double qw = 1, qx = 0, qy = 0, qz = 0;

  void set_pose(const Pose<double>& p) {
    pose = p;
    const Eigen::Quaterniond q(p.rotation);
    qw = q.w();
    qx = q.x();
    qy = q.y();
    qz = q.z();
  }
};

/// One FLS image: n_bins x n_beams intensities quantized to 16 bits.
/// Real intensity = raw / 65535 * scale.
struct SonarFrame {
  int n_bins = 0;
  int n_beams = 0;
  float scale = 1.0f;
  std::vector<uint16_t> raw;  // row-major, rows = bins

  uint16_t& at(int bin, int beam) { return raw[size_t(bin) * n_beams + beam]; }
  uint16_t at(int bin, int beam) const { return raw[size_t(bin) * n_beams + beam]; }
  float intensity(int bin, int beam) const {
    return float(at(bin, beam)) / 65535.0f * scale;
  }

  static SonarFrame quantize(const Eigen::MatrixXf& intensities, float scale = 1.0f);
};

struct AltimeterPoint {
  Vec3<double> point;
  double weight = 1.0;
};

std::vector<FramePose> read_pose_file(const std::string& path);
void write_pose_file(const std::string& path, const std::vector<FramePose>& poses);

SonarIntrinsics read_intrinsics(const std::string& path);
void write_intrinsics(const std::string& path, const SonarIntrinsics& k);

SonarFrame read_frame(const std::string& path);
void write_frame(const std::string& path, const SonarFrame& f);

std::vector<AltimeterPoint> read_altimeter(const std::string& path);
void write_altimeter(const std::string& path, const std::vector<AltimeterPoint>& pts);

std::string frame_filename(int64_t frame_id);

/// A survey dataset on disk: poses.txt, intrinsics.txt, frames/NNNNNN.img and
/// an altimeter point file.
struct Dataset {
  SonarIntrinsics intrinsics;
  std::vector<FramePose> poses;
  std::vector<SonarFrame> frames;  // parallel to poses (empty if not loaded)
  std::vector<AltimeterPoint> altimeter;

  static Dataset load(const std::string& dir, bool load_frames = true,
                      const std::string& altimeter_file = "altimeter.txt");
  int frame_index_of(int64_t frame_id) const;
};

}  // namespace flsmap

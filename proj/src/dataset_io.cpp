#include "flsmap/dataset_io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "flsmap/config.hpp"

namespace flsmap {

namespace {

std::ifstream open_in(const std::string& path, bool binary = false) {
  std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  return f;
}

std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  return f;
}

void put_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); }
void put_f32(std::ostream& out, float v) { out.write(reinterpret_cast<char*>(&v), 4); }

uint32_t get_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
float get_f32(std::istream& in) {
  float v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace

std::vector<FramePose> read_pose_file(const std::string& path) {
  auto f = open_in(path);
  std::vector<FramePose> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream in(line);
    FramePose p;
    double x, y, z;
    if (!(in >> p.frame_id)) continue;  // blank line
    if (!(in >> p.time >> x >> y >> z >> p.qw >> p.qx >> p.qy >> p.qz))
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad pose line");
    p.pose = Pose<double>::from_quaternion(Vec3<double>(x, y, z), p.qw, p.qx, p.qy, p.qz);
    out.push_back(p);
  }
  return out;
}

void write_pose_file(const std::string& path, const std::vector<FramePose>& poses) {
  auto f = open_out(path);
  f << "# frame_id time x y z qw qx qy qz\n";
  char buf[512];
  for (const auto& p : poses) {
    std::snprintf(buf, sizeof(buf),
                  "%lld %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  static_cast<long long>(p.frame_id), p.time, p.pose.translation.x(),
                  p.pose.translation.y(), p.pose.translation.z(), p.qw, p.qx, p.qy,
                  p.qz);
    f << buf;
  }
}

SonarIntrinsics read_intrinsics(const std::string& path) {
  const Config c = Config::load(path);
  SonarIntrinsics k;
  k.r_min = c.get_double("r_min", k.r_min);
  k.r_max = c.get_double("r_max", k.r_max);
  k.hfov = c.get_double("hfov_deg", k.hfov * 180.0 / M_PI) * M_PI / 180.0;
  k.phi_min = c.get_double("phi_min_deg", k.phi_min * 180.0 / M_PI) * M_PI / 180.0;
  k.phi_max = c.get_double("phi_max_deg", k.phi_max * 180.0 / M_PI) * M_PI / 180.0;
  k.n_beams = c.get_int("n_beams", k.n_beams);
  k.n_bins = c.get_int("n_bins", k.n_bins);
  if (!k.is_valid()) throw std::runtime_error("invalid intrinsics in " + path);
  return k;
}

void write_intrinsics(const std::string& path, const SonarIntrinsics& k) {
  auto f = open_out(path);
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "r_min = %.9g\nr_max = %.9g\nhfov_deg = %.9g\n"
                "phi_min_deg = %.9g\nphi_max_deg = %.9g\nn_beams = %d\nn_bins = %d\n",
                k.r_min, k.r_max, k.hfov * 180.0 / M_PI, k.phi_min * 180.0 / M_PI,
                k.phi_max * 180.0 / M_PI, k.n_beams, k.n_bins);
  f << buf;
}

SonarFrame SonarFrame::quantize(const Eigen::MatrixXf& intensities, float scale) {
  SonarFrame f;
  f.n_bins = int(intensities.rows());
  f.n_beams = int(intensities.cols());
  f.scale = scale;
  f.raw.resize(size_t(f.n_bins) * f.n_beams);
  for (int b = 0; b < f.n_bins; ++b)
    for (int m = 0; m < f.n_beams; ++m) {
      float v = intensities(b, m) / scale;
      v = std::min(std::max(v, 0.0f), 1.0f);
      f.at(b, m) = uint16_t(std::lround(v * 65535.0f));
    }
  return f;
}

static constexpr char kFrameMagic[4] = {'F', 'L', 'S', 'I'};

SonarFrame read_frame(const std::string& path) {
  auto f = open_in(path, true);
  char magic[4];
  f.read(magic, 4);
  if (std::memcmp(magic, kFrameMagic, 4) != 0)
    throw std::runtime_error("bad frame magic in " + path);
  SonarFrame out;
  out.n_bins = int(get_u32(f));
  out.n_beams = int(get_u32(f));
  out.scale = get_f32(f);
  if (out.n_bins <= 0 || out.n_beams <= 0 || out.n_bins > 1 << 16 ||
      out.n_beams > 1 << 16)
    throw std::runtime_error("bad frame dimensions in " + path);
  out.raw.resize(size_t(out.n_bins) * out.n_beams);
  f.read(reinterpret_cast<char*>(out.raw.data()), std::streamsize(out.raw.size() * 2));
  if (!f) throw std::runtime_error("truncated frame file: " + path);
  return out;
}

void write_frame(const std::string& path, const SonarFrame& fr) {
  auto f = open_out(path, true);
  f.write(kFrameMagic, 4);
  put_u32(f, uint32_t(fr.n_bins));
  put_u32(f, uint32_t(fr.n_beams));
  put_f32(f, fr.scale);
  f.write(reinterpret_cast<const char*>(fr.raw.data()),
          std::streamsize(fr.raw.size() * 2));
}

std::vector<AltimeterPoint> read_altimeter(const std::string& path) {
  auto f = open_in(path);
  std::vector<AltimeterPoint> out;
  std::string line;
  while (std::getline(f, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream in(line);
    AltimeterPoint p;
    if (!(in >> p.point.x())) continue;
    if (!(in >> p.point.y() >> p.point.z()))
      throw std::runtime_error(path + ": bad altimeter line: " + line);
    if (!(in >> p.weight)) p.weight = 1.0;
    out.push_back(p);
  }
  return out;
}

void write_altimeter(const std::string& path, const std::vector<AltimeterPoint>& pts) {
  auto f = open_out(path);
  f << "# x y z w\n";
  char buf[256];
  for (const auto& p : pts) {
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g\n", p.point.x(), p.point.y(),
                  p.point.z(), p.weight);
    f << buf;
  }
}

std::string frame_filename(int64_t frame_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld.img", static_cast<long long>(frame_id));
  return buf;
}

Dataset Dataset::load(const std::string& dir, bool load_frames,
                      const std::string& altimeter_file) {
  Dataset d;
  d.intrinsics = read_intrinsics(dir + "/intrinsics.txt");
  d.poses = read_pose_file(dir + "/poses.txt");
  {
    std::ifstream probe(dir + "/" + altimeter_file);
    if (probe) d.altimeter = read_altimeter(dir + "/" + altimeter_file);
  }
  if (load_frames) {
    d.frames.reserve(d.poses.size());
    for (const auto& p : d.poses)
      d.frames.push_back(read_frame(dir + "/frames/" + frame_filename(p.frame_id)));
  }
  return d;
}

int Dataset::frame_index_of(int64_t frame_id) const {
  for (size_t i = 0; i < poses.size(); ++i)
    if (poses[i].frame_id == frame_id) return int(i);
  return -1;
}

}  // namespace flsmap

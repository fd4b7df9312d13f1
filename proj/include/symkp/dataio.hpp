#pragma once

#include "symkp/geom.hpp"
#include "symkp/types.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace symkp {

struct PointCloud {
  std::string id;
  Points points;
  std::vector<int> labels;  // empty or one per point

  Index size() const noexcept { return static_cast<Index>(points.rows()); }
  bool has_labels() const noexcept { return !labels.empty(); }
};

// ---------------------------------------------------------------- file formats

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <class T>
T parse_number(std::string_view tok, const std::string& path, std::size_t line) {
  T v{};
  const auto* end = tok.data() + tok.size();
  auto [p, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || p != end) throw ParseError(path, line, "invalid number '" + std::string(tok) + "'");
  if constexpr (std::is_floating_point_v<T>)
    if (!std::isfinite(v)) throw ParseError(path, line, "non-finite coordinate");
  return v;
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void check_count(const PointCloud& pc, const std::string& path) {
  if (pc.size() < 4) throw Error(path + ": too few points (" + std::to_string(pc.size()) + ", need at least 4)");
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return in;
}

inline std::string stem(const std::string& path) { return std::filesystem::path(path).stem().string(); }

/// Next non-empty, non-comment line; false at EOF.
inline bool next_line(std::istream& in, std::string& line, std::size_t& lineno, char comment = '#') {
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = split_ws(line);
    if (t.empty() || t.front().front() == comment) continue;
    return true;
  }
  return false;
}

}  // namespace detail

/// `x y z [label]` per line; '#' starts a comment line.
inline PointCloud read_xyz(const std::string& path) {
  auto in = detail::open_in(path);
  PointCloud pc;
  pc.id = detail::stem(path);
  std::vector<double> xyz;
  std::string line;
  std::size_t lineno = 0;
  int columns = 0;
  while (detail::next_line(in, line, lineno)) {
    const auto t = detail::split_ws(line);
    if (t.size() != 3 && t.size() != 4) throw ParseError(path, lineno, "expected 3 or 4 columns, got " + std::to_string(t.size()));
    if (columns == 0) columns = static_cast<int>(t.size());
    if (static_cast<int>(t.size()) != columns) throw ParseError(path, lineno, "inconsistent column count");
    for (int k = 0; k < 3; ++k) xyz.push_back(detail::parse_number<double>(t[static_cast<std::size_t>(k)], path, lineno));
    if (columns == 4) pc.labels.push_back(detail::parse_number<int>(t[3], path, lineno));
  }
  pc.points = Eigen::Map<Points>(xyz.data(), static_cast<Eigen::Index>(xyz.size() / 3), 3);
  detail::check_count(pc, path);
  return pc;
}

inline void write_xyz(const PointCloud& pc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  for (Eigen::Index i = 0; i < pc.points.rows(); ++i) {
    out << detail::fmt_double(pc.points(i, 0)) << ' ' << detail::fmt_double(pc.points(i, 1)) << ' '
        << detail::fmt_double(pc.points(i, 2));
    if (pc.has_labels()) out << ' ' << pc.labels[static_cast<std::size_t>(i)];
    out << '\n';
  }
}

/// ASCII OFF; faces are ignored.
inline PointCloud read_off(const std::string& path) {
  auto in = detail::open_in(path);
  std::string line;
  std::size_t lineno = 0;
  if (!detail::next_line(in, line, lineno)) throw ParseError(path, lineno, "empty file");
  auto t = detail::split_ws(line);
  if (t.front().substr(0, 3) != "OFF") throw ParseError(path, lineno, "missing OFF header");
  t.erase(t.begin());
  if (t.empty()) {
    if (!detail::next_line(in, line, lineno)) throw ParseError(path, lineno, "missing element counts");
    t = detail::split_ws(line);
  }
  if (t.size() < 2) throw ParseError(path, lineno, "expected vertex and face counts");
  const auto nv = detail::parse_number<std::size_t>(t[0], path, lineno);
  PointCloud pc;
  pc.id = detail::stem(path);
  pc.points.resize(static_cast<Eigen::Index>(nv), 3);
  for (std::size_t i = 0; i < nv; ++i) {
    if (!detail::next_line(in, line, lineno)) throw ParseError(path, lineno, "unexpected end of file in vertex list");
    const auto v = detail::split_ws(line);
    if (v.size() < 3) throw ParseError(path, lineno, "vertex needs 3 coordinates");
    for (int k = 0; k < 3; ++k)
      pc.points(static_cast<Eigen::Index>(i), k) = detail::parse_number<double>(v[static_cast<std::size_t>(k)], path, lineno);
  }
  detail::check_count(pc, path);
  return pc;
}

inline void write_off(const PointCloud& pc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "OFF\n" << pc.points.rows() << " 0 0\n";
  for (Eigen::Index i = 0; i < pc.points.rows(); ++i)
    out << detail::fmt_double(pc.points(i, 0)) << ' ' << detail::fmt_double(pc.points(i, 1)) << ' '
        << detail::fmt_double(pc.points(i, 2)) << '\n';
}

/// ASCII PLY, vertex element only. Properties x/y/z are required; an integer
/// `label` property is read when present. Other elements are skipped.
inline PointCloud read_ply(const std::string& path) {
  auto in = detail::open_in(path);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line) || detail::split_ws(line) != std::vector<std::string_view>{"ply"})
    throw ParseError(path, 1, "missing ply magic");
  ++lineno;
  struct Element {
    std::string name;
    std::size_t count;
    std::vector<std::string> props;
  };
  std::vector<Element> elements;
  bool ascii = false;
  while (true) {
    if (!std::getline(in, line)) throw ParseError(path, lineno, "unterminated header");
    ++lineno;
    const auto t = detail::split_ws(line);
    if (t.empty() || t[0] == "comment" || t[0] == "obj_info") continue;
    if (t[0] == "end_header") break;
    if (t[0] == "format") {
      if (t.size() < 2 || t[1] != "ascii") throw ParseError(path, lineno, "only ascii PLY is supported");
      ascii = true;
    } else if (t[0] == "element") {
      if (t.size() != 3) throw ParseError(path, lineno, "malformed element line");
      elements.push_back({std::string(t[1]), detail::parse_number<std::size_t>(t[2], path, lineno), {}});
    } else if (t[0] == "property") {
      if (elements.empty() || t.size() < 3) throw ParseError(path, lineno, "property outside element");
      elements.back().props.emplace_back(t.back());
    } else {
      throw ParseError(path, lineno, "unknown header keyword '" + std::string(t[0]) + "'");
    }
  }
  if (!ascii) throw ParseError(path, lineno, "missing format line");
  PointCloud pc;
  pc.id = detail::stem(path);
  bool found = false;
  for (const auto& e : elements) {
    if (e.name != "vertex") {
      for (std::size_t i = 0; i < e.count; ++i)
        if (!detail::next_line(in, line, lineno)) throw ParseError(path, lineno, "unexpected end of file");
      continue;
    }
    found = true;
    auto find = [&](const char* n) -> int {
      const auto it = std::find(e.props.begin(), e.props.end(), n);
      return it == e.props.end() ? -1 : static_cast<int>(it - e.props.begin());
    };
    const int ix = find("x"), iy = find("y"), iz = find("z"), il = find("label");
    if (ix < 0 || iy < 0 || iz < 0) throw ParseError(path, lineno, "vertex element lacks x/y/z");
    pc.points.resize(static_cast<Eigen::Index>(e.count), 3);
    for (std::size_t i = 0; i < e.count; ++i) {
      if (!detail::next_line(in, line, lineno)) throw ParseError(path, lineno, "unexpected end of file in vertex list");
      const auto v = detail::split_ws(line);
      if (v.size() < e.props.size()) throw ParseError(path, lineno, "too few vertex properties");
      const auto r = static_cast<Eigen::Index>(i);
      pc.points(r, 0) = detail::parse_number<double>(v[static_cast<std::size_t>(ix)], path, lineno);
      pc.points(r, 1) = detail::parse_number<double>(v[static_cast<std::size_t>(iy)], path, lineno);
      pc.points(r, 2) = detail::parse_number<double>(v[static_cast<std::size_t>(iz)], path, lineno);
      if (il >= 0) pc.labels.push_back(detail::parse_number<int>(v[static_cast<std::size_t>(il)], path, lineno));
    }
    break;
  }
  if (!found) throw ParseError(path, lineno, "no vertex element");
  detail::check_count(pc, path);
  return pc;
}

inline PointCloud load_point_cloud(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".xyz") return read_xyz(path);
  if (ext == ".off") return read_off(path);
  if (ext == ".ply") return read_ply(path);
  throw Error("unsupported point cloud extension '" + ext + "' (" + path + ")");
}

// ------------------------------------------------------------ transformations

struct Normalization {
  Eigen::RowVector3d center = Eigen::RowVector3d::Zero();
  double scale = 1.0;  // largest half-extent

  Points apply(const Points& p) const { return (p.rowwise() - center) / scale; }
  Points invert(const Points& p) const { return (p * scale).rowwise() + center; }
};

/// Bounding-box midpoint and largest half-extent.
inline Normalization normalization_of(const Points& pts) {
  if (pts.rows() < 1) throw Error("normalize: empty cloud");
  const Eigen::RowVector3d lo = pts.colwise().minCoeff();
  const Eigen::RowVector3d hi = pts.colwise().maxCoeff();
  const double half = 0.5 * (hi - lo).maxCoeff();
  if (!(half > 0.0)) throw Error("normalize: degenerate cloud (all points identical)");
  return {0.5 * (lo + hi), half};
}

/// Center on the bounding-box midpoint and scale uniformly so the largest
/// half-extent is 1.
inline PointCloud normalize(const PointCloud& pc) {
  PointCloud out = pc;
  out.points = normalization_of(pc.points).apply(pc.points);
  return out;
}

inline PointCloud rotate_cloud(const PointCloud& pc, double angle) {
  PointCloud out = pc;
  out.points = rotate(pc.points, rotation_about_up(angle));
  return out;
}

/// Rotate about +z by an angle drawn uniformly from [-max_deg, max_deg].
/// Returns the rotated cloud and the angle in radians.
inline std::pair<PointCloud, double> random_misalign(const PointCloud& pc, double max_deg, std::uint64_t seed) {
  if (!(max_deg >= 0.0 && max_deg <= 180.0)) throw Error("random_misalign: max_deg must lie in [0, 180]");
  double angle = 0.0;
  if (max_deg > 0.0) {
    std::mt19937_64 rng(seed);
    const double m = max_deg * std::numbers::pi / 180.0;
    angle = std::uniform_real_distribution<double>(-m, m)(rng);
  }
  return {rotate_cloud(pc, angle), angle};
}

/// Exactly `target` points: a subset without replacement when the cloud is
/// larger, otherwise all points plus duplicates drawn with replacement.
inline PointCloud resample(const PointCloud& pc, Index target, std::uint64_t seed) {
  if (pc.size() < 1) throw Error("resample: empty cloud");
  std::mt19937_64 rng(seed);
  std::vector<Index> idx(pc.size());
  std::iota(idx.begin(), idx.end(), Index{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  if (target <= pc.size()) {
    idx.resize(target);
  } else {
    std::uniform_int_distribution<Index> pick(0, pc.size() - 1);
    while (idx.size() < target) idx.push_back(pick(rng));
  }
  PointCloud out;
  out.id = pc.id;
  out.points = select_rows(pc.points, idx);
  if (pc.has_labels())
    for (Index i : idx) out.labels.push_back(pc.labels[i]);
  return out;
}

/// Cyclic axis permutation that makes `up` (0=x, 1=y, 2=z) the z axis.
inline Points to_z_up(const Points& p, int up) {
  if (up == 2) return p;
  Points out(p.rows(), 3);
  out.col(0) = p.col((up + 1) % 3);
  out.col(1) = p.col((up + 2) % 3);
  out.col(2) = p.col(up);
  return out;
}

inline Points from_z_up(const Points& p, int up) {
  if (up == 2) return p;
  Points out(p.rows(), 3);
  out.col((up + 1) % 3) = p.col(0);
  out.col((up + 2) % 3) = p.col(1);
  out.col(up) = p.col(2);
  return out;
}

inline int parse_up_axis(const std::string& s) {
  if (s == "x") return 0;
  if (s == "y") return 1;
  if (s == "z") return 2;
  throw Error("up axis must be x, y or z");
}

// ----------------------------------------------------------- keypoint files

/// Ordered keypoints tagged with their original index (`index x y z` lines).
struct IndexedKeypoints {
  IndexList indices;
  Points points;
};

inline void write_keypoints(const IndexedKeypoints& kp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  for (Eigen::Index i = 0; i < kp.points.rows(); ++i)
    out << kp.indices[static_cast<std::size_t>(i)] << ' ' << detail::fmt_double(kp.points(i, 0)) << ' '
        << detail::fmt_double(kp.points(i, 1)) << ' ' << detail::fmt_double(kp.points(i, 2)) << '\n';
  if (!out) throw Error("write failed for '" + path + "'");
}

inline IndexedKeypoints read_keypoints(const std::string& path) {
  auto in = detail::open_in(path);
  std::string line;
  std::size_t lineno = 0;
  IndexedKeypoints kp;
  std::vector<double> xyz;
  while (detail::next_line(in, line, lineno)) {
    const auto f = detail::split_ws(line);
    if (f.size() != 4) throw ParseError(path, lineno, "expected 'index x y z'");
    const auto idx = detail::parse_number<Index>(f[0], path, lineno);
    kp.indices.push_back(idx);
    for (int c = 1; c < 4; ++c) xyz.push_back(detail::parse_number<double>(f[static_cast<std::size_t>(c)], path, lineno));
  }
  if (kp.indices.empty()) throw Error(path + ": no keypoints");
  kp.points.resize(static_cast<Eigen::Index>(kp.indices.size()), 3);
  std::copy(xyz.begin(), xyz.end(), kp.points.data());
  return kp;
}

// -------------------------------------------------------------------- manifest

struct ManifestEntry {
  std::string path;  // as written in the manifest (relative to it, or absolute)
  std::string split;  // "train" or "test"
  std::optional<double> misalignment;  // radians, evaluation only
};

struct DatasetManifest {
  std::string category;
  std::vector<ManifestEntry> instances;
  std::optional<Vec3> ground_truth_symmetry_normal;
  std::string base_dir;  // directory the manifest was read from

  std::string resolve(const ManifestEntry& e) const {
    const std::filesystem::path p(e.path);
    return p.is_absolute() || base_dir.empty() ? e.path : (std::filesystem::path(base_dir) / p).string();
  }
  std::vector<ManifestEntry> split(const std::string& tag) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : instances)
      if (e.split == tag) out.push_back(e);
    return out;
  }
};

/// Tags the first floor(fraction·n) entries train and the rest test.
inline void assign_splits(DatasetManifest& m, double train_fraction = 0.85) {
  const auto n = m.instances.size();
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
  for (std::size_t i = 0; i < n; ++i) m.instances[i].split = i < n_train ? "train" : "test";
}

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
  nlohmann::ordered_json j;
  j["category"] = m.category;
  if (m.ground_truth_symmetry_normal) {
    const Vec3& n = *m.ground_truth_symmetry_normal;
    j["ground_truth_symmetry_normal"] = {n.x(), n.y(), n.z()};
  }
  j["instances"] = nlohmann::ordered_json::array();
  for (const auto& e : m.instances) {
    nlohmann::ordered_json ej;
    ej["path"] = e.path;
    ej["split"] = e.split;
    if (e.misalignment) ej["misalignment"] = *e.misalignment;
    j["instances"].push_back(ej);
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

inline DatasetManifest read_manifest(const std::string& path) {
  auto in = detail::open_in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": invalid manifest: " + e.what());
  }
  DatasetManifest m;
  m.base_dir = std::filesystem::path(path).parent_path().string();
  try {
    m.category = j.at("category").get<std::string>();
    if (j.contains("ground_truth_symmetry_normal")) {
      const auto v = j["ground_truth_symmetry_normal"].get<std::vector<double>>();
      if (v.size() != 3) throw Error(path + ": ground_truth_symmetry_normal needs 3 entries");
      m.ground_truth_symmetry_normal = Vec3(v[0], v[1], v[2]).normalized();
    }
    for (const auto& ej : j.at("instances")) {
      ManifestEntry e;
      e.path = ej.at("path").get<std::string>();
      e.split = ej.value("split", std::string("train"));
      if (e.split != "train" && e.split != "test") throw Error(path + ": split must be train or test");
      if (ej.contains("misalignment")) e.misalignment = ej["misalignment"].get<double>();
      m.instances.push_back(e);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": invalid manifest: " + e.what());
  }
  return m;
}

// ---------------------------------------------------------- synthetic shapes

enum class Archetype { table_like, chair_like, sym_deform_biped };

inline Archetype parse_archetype(const std::string& s) {
  if (s == "table_like") return Archetype::table_like;
  if (s == "chair_like") return Archetype::chair_like;
  if (s == "sym_deform_biped") return Archetype::sym_deform_biped;
  throw Error("unknown archetype '" + s + "'");
}

inline std::string to_string(Archetype a) {
  switch (a) {
    case Archetype::table_like: return "table_like";
    case Archetype::chair_like: return "chair_like";
    case Archetype::sym_deform_biped: return "sym_deform_biped";
  }
  return "?";
}

struct SyntheticCategorySpec {
  Archetype archetype = Archetype::table_like;
  std::size_t instance_count = 236;
  /// Multiplicative scale range per axis (x, y, z) applied to the archetype's
  /// base dimensions.
  std::array<std::pair<double, double>, 3> shape_jitter{{{0.85, 1.15}, {0.85, 1.15}, {0.85, 1.15}}};
  std::size_t points_per_instance = 2000;
  std::uint64_t seed = 7;
  double train_fraction = 0.85;
  std::string category;  // empty: the archetype name
};

/// Part labels emitted by the generators.
namespace part {
inline constexpr int top = 0, leg = 1, apron = 2;          // table_like
inline constexpr int seat = 0, back = 2;                    // chair_like (legs share `leg`)
inline constexpr int torso = 0, head = 1, arm = 2, biped_leg = 3;  // sym_deform_biped
}  // namespace part

/// Joint angles (radians) of one side of the biped.
struct LimbPose {
  double arm_swing = 0, arm_abduct = 0, elbow = 0;
  double leg_swing = 0, leg_abduct = 0, knee = 0;
  friend bool operator==(const LimbPose&, const LimbPose&) = default;
};

struct BipedPose {
  LimbPose left, right;
  BipedPose mirrored() const { return {right, left}; }
};

/// Left and right sides are drawn i.i.d. from one distribution, so a pose and
/// its mirror are equally likely.
inline LimbPose sample_limb_pose(std::mt19937_64& rng) {
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  LimbPose p;
  p.arm_swing = u(-0.8, 0.8);
  p.arm_abduct = u(0.1, 1.2);
  p.elbow = u(0.0, 1.2);
  p.leg_swing = u(-0.6, 0.6);
  p.leg_abduct = u(0.0, 0.35);
  p.knee = u(0.0, 1.0);
  return p;
}

inline BipedPose sample_biped_pose(std::mt19937_64& rng) {
  BipedPose p;
  p.left = sample_limb_pose(rng);
  p.right = sample_limb_pose(rng);
  return p;
}

namespace detail {

struct Box {
  Vec3 lo, hi;
  int label;
  double area() const {
    const Vec3 e = hi - lo;
    return 2.0 * (e.x() * e.y() + e.y() * e.z() + e.x() * e.z());
  }
  Vec3 sample(std::mt19937_64& rng) const {
    const Vec3 e = hi - lo;
    const std::array<double, 3> face{e.y() * e.z(), e.x() * e.z(), e.x() * e.y()};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double r = u(rng) * (face[0] + face[1] + face[2]);
    const int axis = r < face[0] ? 0 : (r < face[0] + face[1] ? 1 : 2);
    Vec3 p(lo.x() + u(rng) * e.x(), lo.y() + u(rng) * e.y(), lo.z() + u(rng) * e.z());
    p[axis] = u(rng) < 0.5 ? lo[axis] : hi[axis];
    return p;
  }
};

/// Cylinder surface around segment a→b.
struct Segment {
  Vec3 a, b;
  double radius;
  int label;
  double area() const { return 2.0 * std::numbers::pi * radius * (b - a).norm(); }
  Vec3 sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Vec3 axis = (b - a).normalized();
    const Vec3 helper = std::abs(axis.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    const Vec3 e1 = axis.cross(helper).normalized();
    const Vec3 e2 = axis.cross(e1);
    const double t = u(rng), phi = 2.0 * std::numbers::pi * u(rng);
    return a + t * (b - a) + radius * (std::cos(phi) * e1 + std::sin(phi) * e2);
  }
};

template <class Part>
std::size_t pick_part(const std::vector<Part>& parts, double total, std::mt19937_64& rng) {
  double r = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    r -= parts[i].area();
    if (r <= 0.0) return i;
  }
  return parts.size() - 1;
}

/// Sample `count` points from mirror-symmetric parts as exact (p, mirror(p))
/// pairs about x = 0.
template <class Part>
void sample_mirrored(const std::vector<Part>& parts, std::size_t count, std::mt19937_64& rng, std::vector<Vec3>& pts,
                     std::vector<int>& labels) {
  double total = 0.0;
  for (const auto& p : parts) total += p.area();
  for (std::size_t added = 0; added < count; added += 2) {
    const auto& part = parts[pick_part(parts, total, rng)];
    const Vec3 p = part.sample(rng);
    pts.push_back(p);
    labels.push_back(part.label);
    if (added + 1 < count) {
      pts.emplace_back(-p.x(), p.y(), p.z());
      labels.push_back(part.label);
    }
  }
}

template <class Part>
void sample_plain(const std::vector<Part>& parts, std::size_t count, std::mt19937_64& rng, std::vector<Vec3>& pts,
                  std::vector<int>& labels) {
  double total = 0.0;
  for (const auto& p : parts) total += p.area();
  for (std::size_t i = 0; i < count; ++i) {
    const auto& part = parts[pick_part(parts, total, rng)];
    pts.push_back(part.sample(rng));
    labels.push_back(part.label);
  }
}

inline double jitter(const std::pair<double, double>& r, std::mt19937_64& rng) {
  return r.first == r.second ? r.first : std::uniform_real_distribution<double>(r.first, r.second)(rng);
}

inline void push_mirrored_box(std::vector<Box>& parts, const Vec3& lo, const Vec3& hi, int label) {
  parts.push_back({lo, hi, label});
  parts.push_back({Vec3(-hi.x(), lo.y(), lo.z()), Vec3(-lo.x(), hi.y(), hi.z()), label});
}

/// Table: top, four legs (rear pair inset deeper than the front pair) and a
/// back apron. Mirror-symmetric about x = 0 only.
inline std::vector<Box> table_parts(const SyntheticCategorySpec& s, std::mt19937_64& rng) {
  const double w = 2.0 * jitter(s.shape_jitter[0], rng), d = 1.2 * jitter(s.shape_jitter[1], rng),
               h = 0.9 * jitter(s.shape_jitter[2], rng);
  const double t = 0.06, leg = 0.08;
  const double inset_x = 0.08, inset_front = 0.06, inset_back = 0.30 * d;
  std::vector<Box> parts;
  parts.push_back({Vec3(-w / 2, -d / 2, h - t), Vec3(w / 2, d / 2, h), part::top});
  const double lx = w / 2 - inset_x;
  const double fy = -d / 2 + inset_front, by = d / 2 - inset_back;
  push_mirrored_box(parts, Vec3(lx - leg, fy, 0.0), Vec3(lx, fy + leg, h - t), part::leg);
  push_mirrored_box(parts, Vec3(lx - leg, by - leg, 0.0), Vec3(lx, by, h - t), part::leg);
  parts.push_back({Vec3(-lx, by - leg, h - t - 0.25), Vec3(lx, by - leg + 0.03, h - t), part::apron});
  return parts;
}

/// Chair: seat, four legs and a backrest on the +y side.
inline std::vector<Box> chair_parts(const SyntheticCategorySpec& s, std::mt19937_64& rng) {
  const double w = 1.0 * jitter(s.shape_jitter[0], rng), d = 1.0 * jitter(s.shape_jitter[1], rng),
               h = 2.0 * jitter(s.shape_jitter[2], rng);
  const double seat_h = 0.45 * h, t = 0.06, leg = 0.07;
  std::vector<Box> parts;
  parts.push_back({Vec3(-w / 2, -d / 2, seat_h - t), Vec3(w / 2, d / 2, seat_h), part::seat});
  push_mirrored_box(parts, Vec3(w / 2 - leg, -d / 2, 0.0), Vec3(w / 2, -d / 2 + leg, seat_h - t), part::leg);
  push_mirrored_box(parts, Vec3(w / 2 - leg, d / 2 - leg, 0.0), Vec3(w / 2, d / 2, seat_h - t), part::leg);
  parts.push_back({Vec3(-w / 2, d / 2 - t, seat_h), Vec3(w / 2, d / 2, h), part::back});
  return parts;
}

/// Limb segments of the left (+x) side for one pose. The right side is the
/// same construction mirrored.
inline std::vector<Segment> left_limbs(const LimbPose& p, const Vec3& scale) {
  auto dir = [](double swing, double abduct) {
    // Straight down, tilted outward (+x) by abduct and forward (-y) by swing.
    return Vec3(std::sin(abduct), -std::sin(swing) * std::cos(abduct), -std::cos(swing) * std::cos(abduct)).normalized();
  };
  const Vec3 shoulder(0.22 * scale.x(), 0.0, 1.45 * scale.z());
  const Vec3 hip(0.11 * scale.x(), 0.0, 0.9 * scale.z());
  const double upper_arm = 0.32 * scale.z(), fore_arm = 0.3 * scale.z();
  const double thigh = 0.45 * scale.z(), shin = 0.45 * scale.z();
  const Vec3 arm_dir = dir(p.arm_swing, p.arm_abduct);
  const Vec3 elbow = shoulder + upper_arm * arm_dir;
  const Vec3 hand = elbow + fore_arm * dir(p.arm_swing + p.elbow, p.arm_abduct);
  const Vec3 knee = hip + thigh * dir(p.leg_swing, p.leg_abduct);
  const Vec3 foot = knee + shin * dir(p.leg_swing - p.knee, p.leg_abduct);
  return {{shoulder, elbow, 0.045, part::arm},
          {elbow, hand, 0.04, part::arm},
          {hip, knee, 0.07, part::biped_leg},
          {knee, foot, 0.055, part::biped_leg}};
}

}  // namespace detail

/// Builds one biped cloud for a given pose. Torso and head are sampled as
/// mirrored pairs; each side's limbs follow its own pose.
inline PointCloud make_biped(const BipedPose& pose, const Vec3& scale, std::size_t n_points, std::mt19937_64& rng) {
  std::vector<detail::Box> body{
      {Vec3(-0.2 * scale.x(), -0.1 * scale.y(), 0.9 * scale.z()), Vec3(0.2 * scale.x(), 0.1 * scale.y(), 1.5 * scale.z()), part::torso},
      {Vec3(-0.09 * scale.x(), -0.1 * scale.y(), 1.55 * scale.z()), Vec3(0.09 * scale.x(), 0.1 * scale.y(), 1.8 * scale.z()), part::head}};
  const auto left = detail::left_limbs(pose.left, scale);
  auto right = detail::left_limbs(pose.right, scale);
  for (auto& s : right) {
    s.a.x() = -s.a.x();
    s.b.x() = -s.b.x();
  }
  double body_area = 0.0, limb_area = 0.0;
  for (const auto& b : body) body_area += b.area();
  for (const auto& s : left) limb_area += s.area();
  const auto n_body = 2 * static_cast<std::size_t>(std::round(0.5 * static_cast<double>(n_points) * body_area / (body_area + limb_area)));
  const std::size_t n_side = (n_points - n_body) / 2;
  std::vector<Vec3> pts;
  std::vector<int> labels;
  detail::sample_mirrored(body, n_body, rng, pts, labels);
  detail::sample_plain(left, n_side, rng, pts, labels);
  detail::sample_plain(right, n_points - n_body - n_side, rng, pts, labels);
  PointCloud pc;
  pc.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) pc.points.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  pc.labels = std::move(labels);
  return pc;
}

/// Largest distance from a point to the nearest point of the cloud mirrored
/// about x = 0. Zero for exactly mirror-symmetric clouds.
inline double mirror_asymmetry(const Points& pts) {
  Points mirrored = pts;
  mirrored.col(0) = -mirrored.col(0);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const Index j = nearest_index(mirrored, Vec3(pts.row(i).transpose()));
    worst = std::max(worst, (pts.row(i) - mirrored.row(static_cast<Eigen::Index>(j))).norm());
  }
  return worst;
}

struct SyntheticDataset {
  DatasetManifest manifest;
  std::vector<PointCloud> clouds;  // same order as manifest.instances
  std::vector<BipedPose> poses;    // biped only
};

/// Deterministic synthetic category. Clouds are in the canonical (aligned)
/// frame, unnormalized; file paths in the manifest are `<id>.xyz`.
inline SyntheticDataset generate_synthetic_category(const SyntheticCategorySpec& spec) {
  if (spec.instance_count == 0) throw Error("synthetic category needs at least one instance");
  if (spec.points_per_instance < 4) throw Error("synthetic category needs at least 4 points per instance");
  SyntheticDataset ds;
  ds.manifest.category = spec.category.empty() ? to_string(spec.archetype) : spec.category;
  ds.manifest.ground_truth_symmetry_normal = Vec3::UnitX();
  std::mt19937_64 rng(spec.seed);
  for (std::size_t i = 0; i < spec.instance_count; ++i) {
    std::mt19937_64 inst_rng(rng());
    PointCloud pc;
    if (spec.archetype == Archetype::sym_deform_biped) {
      const BipedPose pose = sample_biped_pose(inst_rng);
      const Vec3 scale(detail::jitter(spec.shape_jitter[0], inst_rng), detail::jitter(spec.shape_jitter[1], inst_rng),
                       detail::jitter(spec.shape_jitter[2], inst_rng));
      pc = make_biped(pose, scale, spec.points_per_instance, inst_rng);
      ds.poses.push_back(pose);
    } else {
      const auto parts = spec.archetype == Archetype::table_like ? detail::table_parts(spec, inst_rng)
                                                                  : detail::chair_parts(spec, inst_rng);
      std::vector<Vec3> pts;
      detail::sample_mirrored(parts, spec.points_per_instance, inst_rng, pts, pc.labels);
      pc.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
      for (std::size_t k = 0; k < pts.size(); ++k) pc.points.row(static_cast<Eigen::Index>(k)) = pts[k].transpose();
    }
    char name[64];
    std::snprintf(name, sizeof name, "%s_%04zu", ds.manifest.category.c_str(), i);
    pc.id = name;
    ds.manifest.instances.push_back({pc.id + ".xyz", "train", std::nullopt});
    ds.clouds.push_back(std::move(pc));
  }
  assign_splits(ds.manifest, spec.train_fraction);
  return ds;
}

/// Writes every cloud as `<dir>/<id>.xyz` and the manifest as `<dir>/manifest.json`.
inline std::string write_dataset(const SyntheticDataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& pc : ds.clouds) write_xyz(pc, (std::filesystem::path(dir) / (pc.id + ".xyz")).string());
  const auto path = (std::filesystem::path(dir) / "manifest.json").string();
  write_manifest(ds.manifest, path);
  return path;
}

}  // namespace symkp

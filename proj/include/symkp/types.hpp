#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace symkp {

/// Row-major M×3 point matrix. Row order carries meaning for keypoints,
/// none for clouds.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

using Index = std::size_t;
using IndexList = std::vector<Index>;

/// Base error for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Symmetry prior used by the keypoint decoder.
enum class SymmetryMode : std::uint8_t {
  none = 0,        // plain low-rank basis
  instance = 1,    // every instance mirror-symmetric
  deformation = 2  // mirror-closed deformation space, asymmetric coefficients
};

inline std::string to_string(SymmetryMode m) {
  switch (m) {
    case SymmetryMode::none: return "none";
    case SymmetryMode::instance: return "instance";
    case SymmetryMode::deformation: return "deformation";
  }
  return "?";
}

inline SymmetryMode parse_mode(const std::string& s) {
  if (s == "none") return SymmetryMode::none;
  if (s == "instance") return SymmetryMode::instance;
  if (s == "deformation") return SymmetryMode::deformation;
  throw Error("unknown symmetry mode '" + s + "'");
}

inline Vec3 row(const Points& p, Index i) { return p.row(static_cast<Eigen::Index>(i)).transpose(); }

}  // namespace symkp

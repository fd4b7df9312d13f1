#pragma once

#include "symkp/dataio.hpp"
#include "symkp/geom.hpp"
#include "symkp/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace symkp {

// ------------------------------------------------------------------- metrics

inline double coverage_metric(const Points& keypoints, const Points& cloud) {
  if (keypoints.rows() == 0 || cloud.rows() == 0) throw Error("coverage: empty input");
  const double v = bbox_volume(cloud);
  if (!(v > 0.0)) throw Error("coverage: cloud bounding box has zero volume");
  return std::clamp(100.0 * bbox_volume(keypoints) / v, 0.0, 100.0);
}

/// Root-mean Chamfer between nodes and keypoints as a percentage of the
/// cloud's largest bounding-box extent.
inline double model_error_metric(const Points& nodes, const Points& keypoints, const Points& cloud) {
  if (nodes.rows() == 0 || keypoints.rows() == 0) throw Error("model error: empty input");
  const double scale = bbox_extent(cloud).maxCoeff();
  if (!(scale > 0.0)) throw Error("model error: cloud has zero extent");
  const double n = static_cast<double>(nodes.rows() + keypoints.rows());
  return 100.0 * std::sqrt(chamfer(nodes, keypoints) / n) / scale;
}

inline double inclusivity_metric(const Points& keypoints, const Points& cloud, double threshold = 0.15) {
  if (keypoints.rows() == 0 || cloud.rows() == 0) throw Error("inclusivity: empty input");
  const double t2 = threshold * threshold;
  Index inside = 0;
  for (Eigen::Index i = 0; i < keypoints.rows(); ++i) {
    const Vec3 p = keypoints.row(i).transpose();
    const Index j = nearest_index(cloud, p);
    if ((cloud.row(static_cast<Eigen::Index>(j)).transpose() - p).squaredNorm() <= t2) ++inside;
  }
  return 100.0 * static_cast<double>(inside) / static_cast<double>(keypoints.rows());
}

/// Angle between two planes given by their normals, in degrees (0..90).
inline double symmetry_error_deg(const Vec3& n_pred, const Vec3& n_gt) {
  const double na = n_pred.norm(), nb = n_gt.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw Error("symmetry error: zero normal");
  const double c = std::min(1.0, std::abs(n_pred.dot(n_gt)) / (na * nb));
  return std::acos(c) * 180.0 / std::numbers::pi;
}

// ------------------------------------------------------------------- k-means

struct KMeansResult {
  IndexList labels;
  Points centers;
  double inertia = 0.0;
};

namespace detail {

inline KMeansResult kmeans_once(const Points& pts, Index k, std::mt19937_64& rng, std::size_t max_iter) {
  const auto m = static_cast<Index>(pts.rows());
  KMeansResult r;
  r.centers.resize(static_cast<Eigen::Index>(k), 3);
  // k-means++ seeding
  std::vector<double> d2(m, std::numeric_limits<double>::infinity());
  Index first = std::uniform_int_distribution<Index>(0, m - 1)(rng);
  r.centers.row(0) = pts.row(static_cast<Eigen::Index>(first));
  for (Index c = 1; c < k; ++c) {
    double total = 0.0;
    for (Index i = 0; i < m; ++i) {
      d2[i] = std::min(d2[i], (pts.row(static_cast<Eigen::Index>(i)) - r.centers.row(static_cast<Eigen::Index>(c - 1))).squaredNorm());
      total += d2[i];
    }
    Index pick = 0;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick + 1 < m; ++pick) {
        u -= d2[pick];
        if (u < 0.0) break;
      }
    } else {
      pick = std::uniform_int_distribution<Index>(0, m - 1)(rng);
    }
    r.centers.row(static_cast<Eigen::Index>(c)) = pts.row(static_cast<Eigen::Index>(pick));
  }

  r.labels.assign(m, 0);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = it == 0;
    for (Index i = 0; i < m; ++i) {
      const Index best = nearest_index(r.centers, pts.row(static_cast<Eigen::Index>(i)).transpose());
      if (best != r.labels[i]) {
        r.labels[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Points sum = Points::Zero(static_cast<Eigen::Index>(k), 3);
    std::vector<Index> count(k, 0);
    for (Index i = 0; i < m; ++i) {
      sum.row(static_cast<Eigen::Index>(r.labels[i])) += pts.row(static_cast<Eigen::Index>(i));
      ++count[r.labels[i]];
    }
    for (Index c = 0; c < k; ++c)
      if (count[c] > 0) r.centers.row(static_cast<Eigen::Index>(c)) = sum.row(static_cast<Eigen::Index>(c)) / static_cast<double>(count[c]);
  }
  r.inertia = 0.0;
  for (Index i = 0; i < m; ++i)
    r.inertia += (pts.row(static_cast<Eigen::Index>(i)) - r.centers.row(static_cast<Eigen::Index>(r.labels[i]))).squaredNorm();
  return r;
}

}  // namespace detail

/// Lloyd's k-means with k-means++ seeding; lowest inertia over `restarts`.
inline KMeansResult kmeans(const Points& pts, Index k, std::uint64_t seed, std::size_t restarts = 10,
                           std::size_t max_iter = 300) {
  if (k == 0 || k > static_cast<Index>(pts.rows())) throw Error("kmeans: need 1 <= k <= point count");
  std::mt19937_64 rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(1, restarts); ++r) {
    KMeansResult cur = detail::kmeans_once(pts, k, rng, max_iter);
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

/// Pools all instances' keypoints, clusters them into N' groups, and scores
/// each order index by the share of instances whose keypoint lands in that
/// index's most common cluster.
inline double correspondence_metric(std::span<const Points> sets, std::uint64_t seed = 0) {
  if (sets.size() < 2) throw Error("correspondence: need at least 2 instances");
  const auto n = static_cast<Index>(sets[0].rows());
  for (const auto& s : sets)
    if (static_cast<Index>(s.rows()) != n) throw Error("correspondence: instances have different keypoint counts");
  if (sets.size() < n) throw Error("correspondence: fewer instances (" + std::to_string(sets.size()) + ") than keypoints (" + std::to_string(n) + ")");
  Points pooled(static_cast<Eigen::Index>(sets.size() * n), 3);
  for (std::size_t i = 0; i < sets.size(); ++i) pooled.middleRows(static_cast<Eigen::Index>(i * n), static_cast<Eigen::Index>(n)) = sets[i];
  const KMeansResult km = kmeans(pooled, n, seed);
  double score = 0.0;
  for (Index j = 0; j < n; ++j) {
    std::vector<std::size_t> hist(n, 0);
    for (std::size_t i = 0; i < sets.size(); ++i) ++hist[km.labels[i * n + j]];
    score += static_cast<double>(*std::max_element(hist.begin(), hist.end())) / static_cast<double>(sets.size());
  }
  return 100.0 * score / static_cast<double>(n);
}

// ------------------------------------------------------------------- semantics

struct SemanticReport {
  std::vector<int> labels;  // column order
  Eigen::MatrixXd matrix;   // N' x L, row-normalized label frequencies
  double score = 0.0;
};

inline std::vector<int> nearest_labels(const Points& keypoints, const PointCloud& pc) {
  if (pc.labels.empty()) throw Error("cloud '" + pc.id + "' has no part labels");
  std::vector<int> out(static_cast<std::size_t>(keypoints.rows()));
  for (Eigen::Index i = 0; i < keypoints.rows(); ++i)
    out[static_cast<std::size_t>(i)] = pc.labels[nearest_index(pc.points, keypoints.row(i).transpose())];
  return out;
}

inline SemanticReport semantic_consistency(std::span<const Points> sets, std::span<const PointCloud> clouds) {
  if (sets.empty() || sets.size() != clouds.size()) throw Error("semantic consistency: need one labeled cloud per keypoint set");
  const auto n = static_cast<std::size_t>(sets[0].rows());
  std::vector<std::vector<int>> per;
  std::vector<int> all;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (static_cast<std::size_t>(sets[i].rows()) != n) throw Error("semantic consistency: keypoint counts differ");
    per.push_back(nearest_labels(sets[i], clouds[i]));
    all.insert(all.end(), per.back().begin(), per.back().end());
  }
  SemanticReport r;
  for (const auto& pc : clouds) all.insert(all.end(), pc.labels.begin(), pc.labels.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  r.labels = all;
  r.matrix = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(all.size()));
  for (const auto& lab : per)
    for (std::size_t j = 0; j < n; ++j) {
      const auto col = std::lower_bound(all.begin(), all.end(), lab[j]) - all.begin();
      r.matrix(static_cast<Eigen::Index>(j), col) += 1.0;
    }
  r.matrix /= static_cast<double>(sets.size());
  r.score = n == 0 ? 0.0 : 100.0 * r.matrix.rowwise().maxCoeff().mean();
  return r;
}

/// Every cloud point takes the label of its nearest keypoint.
inline PointCloud label_transfer(const Points& keypoints, std::span<const int> keypoint_labels, const PointCloud& pc) {
  if (keypoints.rows() == 0 || static_cast<std::size_t>(keypoints.rows()) != keypoint_labels.size())
    throw Error("label transfer: need one label per keypoint");
  PointCloud out{pc.id, pc.points, std::vector<int>(static_cast<std::size_t>(pc.points.rows()))};
  for (Eigen::Index i = 0; i < pc.points.rows(); ++i)
    out.labels[static_cast<std::size_t>(i)] = keypoint_labels[nearest_index(keypoints, pc.points.row(i).transpose())];
  return out;
}

/// Majority label over the cloud points nearest to each keypoint; a keypoint
/// that owns no point falls back to its nearest point's label.
inline std::vector<int> majority_labels(const Points& keypoints, const PointCloud& labeled) {
  if (labeled.labels.empty()) throw Error("cloud '" + labeled.id + "' has no labels");
  const auto n = static_cast<std::size_t>(keypoints.rows());
  std::vector<std::map<int, std::size_t>> votes(n);
  for (Eigen::Index i = 0; i < labeled.points.rows(); ++i)
    ++votes[nearest_index(keypoints, labeled.points.row(i).transpose())][labeled.labels[static_cast<std::size_t>(i)]];
  std::vector<int> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (votes[j].empty()) {
      out[j] = labeled.labels[nearest_index(labeled.points, keypoints.row(static_cast<Eigen::Index>(j)).transpose())];
      continue;
    }
    out[j] = std::max_element(votes[j].begin(), votes[j].end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
  }
  return out;
}

inline double label_accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size() || truth.empty()) throw Error("label accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(truth.size());
}

// ------------------------------------------------------------------- coefficients

struct CoefficientStats {
  Eigen::VectorXd mean_c, var_c, mean_c_prime, var_c_prime;
  double mean_var_c = 0.0, mean_var_c_prime = 0.0;

  /// |mv(c) - mv(c')| / max(mv(c), mv(c')); 0 when both vanish.
  double relative_difference() const {
    const double m = std::max(mean_var_c, mean_var_c_prime);
    return m > 0.0 ? std::abs(mean_var_c - mean_var_c_prime) / m : 0.0;
  }
};

inline CoefficientStats coefficient_distribution_check(std::span<const PoseCoeffs> coeffs) {
  if (coeffs.empty()) throw Error("coefficient check: no instances");
  for (const auto& p : coeffs)
    if (!p.c_prime) throw Error("coefficient check: requires deformation-mode coefficients");
  const auto k = coeffs[0].c.size();
  auto stats = [&](auto get, Eigen::VectorXd& mean, Eigen::VectorXd& var) {
    mean = Eigen::VectorXd::Zero(k);
    var = Eigen::VectorXd::Zero(k);
    for (const auto& p : coeffs) mean += get(p);
    mean /= static_cast<double>(coeffs.size());
    for (const auto& p : coeffs) var += (get(p) - mean).array().square().matrix();
    var /= static_cast<double>(coeffs.size());
  };
  CoefficientStats s;
  stats([](const PoseCoeffs& p) -> const Eigen::VectorXd& { return p.c; }, s.mean_c, s.var_c);
  stats([](const PoseCoeffs& p) -> const Eigen::VectorXd& { return *p.c_prime; }, s.mean_c_prime, s.var_c_prime);
  s.mean_var_c = s.var_c.mean();
  s.mean_var_c_prime = s.var_c_prime.mean();
  return s;
}

// ------------------------------------------------------------------- registration

struct RegistrationReport {
  double mean_error_deg = 0.0;
  std::size_t pairs = 0, skipped = 0;
  std::vector<double> errors_deg;  // one per registered (instance, template) pair
};

/// Registers every non-template instance onto each template by a similarity
/// transform on ordered keypoints, and compares the recovered rotation with
/// R_z(angle[template] - angle[instance]).
inline RegistrationReport registration_experiment(std::span<const Points> sets, std::span<const double> angles,
                                                  std::span<const std::size_t> templates) {
  if (sets.size() < 4) throw Error("registration: need at least 4 instances");
  if (angles.size() != sets.size()) throw Error("registration: need one ground-truth angle per instance");
  if (templates.empty()) throw Error("registration: no templates");
  for (auto t : templates)
    if (t >= sets.size()) throw Error("registration: template index out of range");
  RegistrationReport r;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (std::find(templates.begin(), templates.end(), i) != templates.end()) continue;
    for (auto t : templates) {
      const auto tf = similarity_registration(sets[i], sets[t]);
      if (!tf) {
        ++r.skipped;
        continue;
      }
      const double e = rotation_angle_between(tf->rotation, rotation_about_up(angles[t] - angles[i]));
      r.errors_deg.push_back(e * 180.0 / std::numbers::pi);
    }
  }
  r.pairs = r.errors_deg.size();
  if (r.pairs == 0) throw Error("registration: every pair was degenerate");
  double sum = 0.0;
  for (double e : r.errors_deg) sum += e;
  r.mean_error_deg = sum / static_cast<double>(r.pairs);
  return r;
}

/// Three distinct template indices drawn from [0, n).
inline std::vector<std::size_t> pick_templates(std::size_t n, std::uint64_t seed, std::size_t count = 3) {
  if (n < count) throw Error("not enough instances for templates");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(count);
  return idx;
}

// ------------------------------------------------------------------- category evaluation

struct MetricsRecord {
  double coverage_pct = 0, model_err_pct = 0, inclusivity_pct = 0;
  std::optional<double> correspondence_pct;  // absent with fewer instances than N'
  std::optional<double> sym_err_deg;         // absent without a ground-truth plane
  std::size_t definition_nprime = 0;
};

struct EvalOptions {
  double misalign_deg = 45.0;
  double nms_radius = 0.2;
  double inclusivity_threshold = 0.15;
  std::uint64_t seed = 0;
};

struct CategoryEvaluation {
  MetricsRecord metrics;
  IndexList retained;
  std::vector<double> angles;               // applied misalignment per instance (radians)
  std::vector<PointCloud> clouds;           // misaligned inputs
  std::vector<InstancePrediction> predictions;
  std::vector<Points> aligned_keypoints;    // retained keypoints with the misalignment undone
};

/// Predicts on misaligned copies of normalized instances, selects N' by NMS
/// in the canonical frame and computes the per-category metrics.
/// `given_angles` (radians) overrides the seeded misalignment when non-empty.
inline CategoryEvaluation evaluate_category(const CategoryParams& params, std::span<const PointCloud> instances,
                                            const std::optional<Vec3>& gt_normal, const EvalOptions& opt,
                                            std::span<const double> given_angles = {}) {
  if (instances.empty()) throw Error("evaluate: no instances");
  if (!given_angles.empty() && given_angles.size() != instances.size())
    throw Error("evaluate: angle count does not match instance count");
  CategoryEvaluation ev;
  std::vector<Points> canonical;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    PointCloud cloud;
    double angle = 0.0;
    if (!given_angles.empty()) {
      angle = given_angles[i];
      cloud = rotate_cloud(instances[i], angle);
    } else {
      std::tie(cloud, angle) = random_misalign(instances[i], opt.misalign_deg, opt.seed * 1000003ull + i);
    }
    ev.predictions.push_back(predict(params, cloud.points, opt.seed ^ (0x9E37ull * (i + 1))));
    canonical.push_back(ev.predictions.back().canonical_keypoints);
    ev.angles.push_back(angle);
    ev.clouds.push_back(std::move(cloud));
  }
  ev.retained = nms_select(canonical, opt.nms_radius);
  auto& m = ev.metrics;
  m.definition_nprime = ev.retained.size();

  double cov = 0, inc = 0, err = 0, sym = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& p = ev.predictions[i];
    const Points kp = select_rows(p.keypoints, ev.retained);
    cov += coverage_metric(kp, ev.clouds[i].points);
    inc += inclusivity_metric(kp, ev.clouds[i].points, opt.inclusivity_threshold);
    err += model_error_metric(p.nodes, p.keypoints, ev.clouds[i].points);
    const Mat3 undo = rotation_about_up(-ev.angles[i]);
    ev.aligned_keypoints.push_back(rotate(kp, undo));
    if (gt_normal && params.config.mode != SymmetryMode::none)
      sym += symmetry_error_deg(undo * p.total_rotation * params.normal(), *gt_normal);
  }
  const double n = static_cast<double>(instances.size());
  m.coverage_pct = cov / n;
  m.inclusivity_pct = inc / n;
  m.model_err_pct = err / n;
  if (gt_normal && params.config.mode != SymmetryMode::none) m.sym_err_deg = sym / n;
  if (ev.aligned_keypoints.size() >= std::max<std::size_t>(2, ev.retained.size()))
    m.correspondence_pct = correspondence_metric(ev.aligned_keypoints, opt.seed);
  return ev;
}

// ------------------------------------------------------------------- output

inline std::string metrics_csv_header() {
  return "category,coverage_pct,model_err_pct,correspondence_pct,inclusivity_pct,sym_err_deg,definition_Nprime";
}

inline std::string metrics_csv_row(const std::string& category, const MetricsRecord& m) {
  auto num = [](std::optional<double> v) {
    if (!v) return std::string();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  return category + "," + num(m.coverage_pct) + "," + num(m.model_err_pct) + "," + num(m.correspondence_pct) + "," +
         num(m.inclusivity_pct) + "," + num(m.sym_err_deg) + "," + std::to_string(m.definition_nprime);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
}

inline std::string semantic_csv(const SemanticReport& r) {
  std::ostringstream s;
  s << "keypoint";
  for (int l : r.labels) s << ",label_" << l;
  s << '\n';
  char buf[64];
  for (Eigen::Index j = 0; j < r.matrix.rows(); ++j) {
    s << j;
    for (Eigen::Index c = 0; c < r.matrix.cols(); ++c) {
      std::snprintf(buf, sizeof buf, ",%.6f", r.matrix(j, c));
      s << buf;
    }
    s << '\n';
  }
  return s.str();
}

namespace detail {

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#bfef45",
                                 "#fabed4", "#469990", "#dcbeff", "#9a6324", "#800000", "#aaffc3", "#808000", "#000075"};
  return colors[i % 16];
}

}  // namespace detail

/// Top-down (x, y) scatter: cloud in grey, keypoints colored by order index.
inline std::string keypoint_scatter_svg(const Points& cloud, std::span<const Points> keypoint_sets, const std::string& title) {
  const double size = 480, pad = 20, half = (size - 2 * pad) / 2;
  double r = 1e-9;
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) r = std::max({r, std::abs(cloud(i, 0)), std::abs(cloud(i, 1))});
  for (const auto& s : keypoint_sets)
    for (Eigen::Index i = 0; i < s.rows(); ++i) r = std::max({r, std::abs(s(i, 0)), std::abs(s(i, 1))});
  auto px = [&](double x) { return pad + half + x / r * half; };
  auto py = [&](double y) { return pad + half - y / r * half; };
  std::ostringstream o;
  char buf[256];
  std::snprintf(buf, sizeof buf, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\">\n", size, size + 20);
  o << buf << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"10\" y=\"" << size + 12 << "\" font-size=\"12\" font-family=\"sans-serif\">" << title << "</text>\n";
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"1\" fill=\"#bbbbbb\"/>\n", px(cloud(i, 0)), py(cloud(i, 1)));
    o << buf;
  }
  for (const auto& s : keypoint_sets)
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"4\" fill=\"%s\" fill-opacity=\"0.7\"/>\n", px(s(i, 0)),
                    py(s(i, 1)), detail::palette(static_cast<std::size_t>(i)));
      o << buf;
    }
  o << "</svg>\n";
  return o.str();
}

/// Keypoint-by-label heatmap of a semantic co-occurrence matrix.
inline std::string semantic_heatmap_svg(const SemanticReport& r) {
  const double cell = 28, left = 40, top = 30;
  const auto rows = r.matrix.rows(), cols = r.matrix.cols();
  std::ostringstream o;
  char buf[256];
  std::snprintf(buf, sizeof buf, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\">\n",
                left + cell * static_cast<double>(cols) + 10, top + cell * static_cast<double>(rows) + 10);
  o << buf << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (Eigen::Index c = 0; c < cols; ++c) {
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"20\" font-size=\"11\" font-family=\"sans-serif\">%d</text>\n",
                  left + cell * static_cast<double>(c) + 9, r.labels[static_cast<std::size_t>(c)]);
    o << buf;
  }
  for (Eigen::Index j = 0; j < rows; ++j) {
    std::snprintf(buf, sizeof buf, "<text x=\"8\" y=\"%.1f\" font-size=\"11\" font-family=\"sans-serif\">%ld</text>\n",
                  top + cell * static_cast<double>(j) + 18, static_cast<long>(j));
    o << buf;
    for (Eigen::Index c = 0; c < cols; ++c) {
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - std::clamp(r.matrix(j, c), 0.0, 1.0))));
      std::snprintf(buf, sizeof buf,
                    "<rect x=\"%.1f\" y=\"%.1f\" width=\"%g\" height=\"%g\" fill=\"rgb(%d,%d,255)\" stroke=\"#888\"/>\n",
                    left + cell * static_cast<double>(c), top + cell * static_cast<double>(j), cell, cell, shade, shade);
      o << buf;
    }
  }
  o << "</svg>\n";
  return o.str();
}

/// Bar chart of per-component variances of c and c'.
inline std::string coefficient_svg(const CoefficientStats& s) {
  const auto k = s.var_c.size();
  const double w = 24, h = 200, left = 30;
  const double vmax = std::max({1e-12, s.var_c.maxCoeff(), s.var_c_prime.maxCoeff()});
  std::ostringstream o;
  char buf[256];
  std::snprintf(buf, sizeof buf, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\">\n",
                left + 2.5 * w * static_cast<double>(k) + 20, h + 40);
  o << buf << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (Eigen::Index i = 0; i < k; ++i) {
    const double x = left + 2.5 * w * static_cast<double>(i);
    const double a = h * s.var_c(i) / vmax, b = h * s.var_c_prime(i) / vmax;
    std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"%g\" height=\"%.1f\" fill=\"#4363d8\"/>\n", x, 10 + h - a, w, a);
    o << buf;
    std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"%g\" height=\"%.1f\" fill=\"#f58231\"/>\n", x + w, 10 + h - b, w, b);
    o << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"10\" y=\"%g\" font-size=\"12\" font-family=\"sans-serif\">mean variance c: %.4f  c': %.4f</text>\n",
                h + 30, s.mean_var_c, s.mean_var_c_prime);
  o << buf << "</svg>\n";
  return o.str();
}

}  // namespace symkp

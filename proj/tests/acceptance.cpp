// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include "symkp/symkp.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

using namespace symkp;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Points random_points(Index n, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Points p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (int k = 0; k < 3; ++k) p(i, k) = u(rng);
  return p;
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vec3 v(g(rng), g(rng), g(rng));
  return v.normalized();
}

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  return Eigen::Quaterniond(g(rng), g(rng), g(rng), g(rng)).normalized().toRotationMatrix();
}

double max_abs(const Points& a, const Points& b) { return (a - b).cwiseAbs().maxCoeff(); }

ModelConfig small_model(SymmetryMode mode) {
  ModelConfig c;
  c.mode = mode;
  c.n_nodes = 8;
  c.n_basis = 3;
  c.knn_k = 3;
  c.cluster_widths = {6, 5};
  c.aggregate_widths = {7};
  c.offset_widths = {4};
  c.pose_widths = {6};
  return c;
}

CategoryParams random_params(const ModelConfig& c, std::uint64_t seed) {
  CategoryParams p = init_category_params(c, seed);
  std::mt19937_64 rng(seed + 1);
  const Vec3 n = random_unit(rng);
  p.sym_normal.values = {n.x(), n.y(), n.z()};
  p.category_angle.values[0] = std::uniform_real_distribution<double>(-3, 3)(rng);
  for (auto& w : p.net_weights)
    if (w.name.rfind("offset.out", 0) == 0)
      for (double& v : w.tensor.values) v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
  // zero biases put node-relative rows exactly on the activation kink
  for (auto& w : p.net_weights)
    if (w.name.size() > 2 && w.name.compare(w.name.size() - 2, 2, ".b") == 0 && w.name.rfind("offset.out", 0) != 0)
      for (double& v : w.tensor.values) v = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
  return p;
}

PoseCoeffs random_pose(const ModelConfig& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  PoseCoeffs p;
  p.angle = 3 * u(rng);
  p.c = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(c.n_basis), [&] { return u(rng); });
  if (c.mode == SymmetryMode::deformation)
    p.c_prime = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(c.n_basis), [&] { return u(rng); });
  return p;
}

// ------------------------------------------------------------------ C1

Outcome geometry_suite() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);

  double refl = 0;
  for (int t = 0; t < 1000; ++t) {
    const Mat3 a = reflection_from_normal(SymmetryPlane(random_unit(rng)));
    refl = std::max({refl, (a * a - Mat3::Identity()).cwiseAbs().maxCoeff(), (a.transpose() * a - Mat3::Identity()).cwiseAbs().maxCoeff(),
                     std::abs(a.determinant() + 1.0)});
  }
  o.check(refl < 1e-9, "reflection " + fmt("%.2e", refl));

  double chf = 0;
  for (int t = 0; t < 500; ++t) {
    const Points a = random_points(1 + static_cast<Index>(rng() % 30), rng), b = random_points(1 + static_cast<Index>(rng() % 30), rng);
    const Mat3 r = random_rotation(rng);
    const Eigen::RowVector3d s = random_unit(rng).transpose() * 4.0;
    const double base = chamfer(a, b);
    chf = std::max({chf, std::abs(base - chamfer(b, a)), chamfer(a, a),
                    std::abs(base - chamfer(Points((a * r.transpose()).rowwise() + s), Points((b * r.transpose()).rowwise() + s)))});
  }
  o.check(chf < 1e-9, "chamfer " + fmt("%.2e", chf));

  // FPS against brute force: at every step choose the smallest index among
  // the points maximizing the minimum distance to the chosen set.
  std::size_t fps_cases = 0, fps_bad = 0;
  for (Index m = 1; m <= 12; ++m)
    for (int rep = 0; rep < 4; ++rep) {
      Points pts = random_points(m, rng);
      if (rep == 3)
        for (Index i = 0; i < m; ++i) pts.row(static_cast<Eigen::Index>(i)) << static_cast<double>(i % 3), static_cast<double>(i / 3), 0;
      for (Index n = 1; n <= m; ++n)
        for (Index first = 0; first < m; ++first) {
          IndexList want{first};
          while (want.size() < n) {
            Index best = 0;
            double best_d = -1;
            for (Index c = 0; c < m; ++c) {
              double d = std::numeric_limits<double>::infinity();
              for (Index s : want) d = std::min(d, squared_distance(pts, static_cast<Eigen::Index>(c), pts, static_cast<Eigen::Index>(s)));
              if (d > best_d) best_d = d, best = c;
            }
            want.push_back(best);
          }
          ++fps_cases;
          fps_bad += farthest_point_sampling_from(pts, n, first) != want;
        }
    }
  o.check(fps_bad == 0, "fps " + std::to_string(fps_cases - fps_bad) + "/" + std::to_string(fps_cases));

  double sim = 0;
  for (int t = 0; t < 1000; ++t) {
    const Points src = random_points(3 + static_cast<Index>(rng() % 20), rng);
    const double s = std::exp(std::uniform_real_distribution<double>(-1, 1)(rng));
    const Mat3 r = random_rotation(rng);
    const Vec3 tr = random_unit(rng) * 5.0;
    const Points dst = Points((s * src * r.transpose()).rowwise() + tr.transpose());
    const auto est = similarity_registration(src, dst);
    if (!est) {
      sim = std::numeric_limits<double>::infinity();
      break;
    }
    sim = std::max({sim, std::abs(est->scale - s), (est->rotation - r).cwiseAbs().maxCoeff(), (est->translation - tr).cwiseAbs().maxCoeff()});
  }
  o.check(sim < 1e-7, "similarity " + fmt("%.2e", sim));

  const double secs = seconds_since(t0);
  o.check(secs < 60, fmt("%.1f s", secs));
  return o;
}

// ------------------------------------------------------------------ C2

// Nearest-neighbor choices and bounding-box extremes are piecewise; a
// configuration counts as tie-free when every such choice wins by `margin`.
bool nn_tie_free(const Points& a, const Points& b, double margin) {
  if (b.rows() < 2) return true;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Eigen::VectorXd d = (b.rowwise() - a.row(i)).rowwise().squaredNorm();
    std::sort(d.data(), d.data() + d.size());
    if (d(1) - d(0) < margin) return false;
  }
  return true;
}

bool bbox_tie_free(const Points& a, double margin) {
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd v = a.col(c);
    std::sort(v.data(), v.data() + v.size());
    if (v(1) - v(0) < margin || v(v.size() - 1) - v(v.size() - 2) < margin) return false;
  }
  return true;
}

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  const int configs = 200;
  double chf = 0, cov = 0, inc = 0, tot = 0, dec = 0, full = 0;

  for (int t = 0; t < configs; ++t) {
    Points cloud, pn, pk;
    do {
      cloud = random_points(40, rng, -1.5, 1.5);
      pn = random_points(8, rng);
      pk = random_points(8, rng);
    } while (!nn_tie_free(pn, pk, 1e-3) || !nn_tie_free(pk, pn, 1e-3) || !nn_tie_free(pn, cloud, 1e-3) || !bbox_tie_free(pn, 1e-3));
    const diff::Tensor n = diff::Tensor::from_points(pn), k = diff::Tensor::from_points(pk);
    chf = std::max(chf, diff::grad_check([](diff::Graph&, const std::vector<diff::Var>& v) { return chamfer_loss(v[0], v[1]); }, {n, k}));
    cov = std::max(cov, diff::grad_check([&](diff::Graph&, const std::vector<diff::Var>& v) { return coverage_loss(v[0], cloud); }, {n}));
    inc = std::max(inc, diff::grad_check([&](diff::Graph&, const std::vector<diff::Var>& v) { return inclusivity_loss(v[0], cloud); }, {n}));
    tot = std::max(tot, diff::grad_check(
                            [&](diff::Graph&, const std::vector<diff::Var>& v) { return total_loss(v[0], v[1], cloud, LossWeights{}).total; },
                            {n, k}));

    // decode graph: raw head output through normalization, basis, reflection and both rotations
    const auto mode = static_cast<SymmetryMode>(t % 3);
    const CategoryParams p = random_params(small_model(mode), static_cast<std::uint64_t>(t));
    diff::Tensor raw = diff::Tensor::zeros({1, p.config.head_outputs()});
    for (double& v : raw.values) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    const std::size_t kb = p.config.n_basis;
    auto decode = [&](diff::Graph&, const std::vector<diff::Var>& v) {
      BoundParams b;
      b.half_basis = v[0];
      b.sym_normal = v[1];
      b.category_angle = v[2];
      diff::Var rc = diff::reshape(diff::slice_cols(v[3], 0, 1), {1}), rs = diff::reshape(diff::slice_cols(v[3], 1, 2), {1});
      diff::Var r = diff::sqrt(diff::add(diff::square(rc), diff::square(rs)));
      diff::Var cp = mode == SymmetryMode::deformation ? diff::slice_cols(v[3], 2 + kb, 2 + 2 * kb) : diff::Var{};
      diff::Var kp = decode_graph(b, p.config, diff::div(rc, r), diff::div(rs, r), diff::slice_cols(v[3], 2, 2 + kb), cp);
      return diff::sum(diff::square(diff::sub(kp, v[4])));
    };
    dec = std::max(dec, diff::grad_check(decode, {p.half_basis, p.sym_normal, p.category_angle, raw, k}));
  }
  // full network through the losses, on a handful of configurations per mode
  for (int t = 0; t < 30; ++t) {
    const CategoryParams p = random_params(small_model(static_cast<SymmetryMode>(t % 3)), 1000 + static_cast<std::uint64_t>(t));
    const Points cloud = random_points(60, rng);
    std::vector<diff::Tensor> leaves;
    for (const auto* x : p.tensors()) leaves.push_back(*x);
    full = std::max(full, diff::grad_check(
                              [&](diff::Graph& g, const std::vector<diff::Var>& v) {
                                (void)g;
                                const auto f = forward(g, bind_vars(p, v), p.config, cloud, 5);
                                return total_loss(f.node.nodes, f.keypoints, cloud, LossWeights{}).total;
                              },
                              leaves));
  }
  o.check(chf < 1e-4, "chamfer " + fmt("%.1e", chf));
  o.check(cov < 1e-4, "coverage " + fmt("%.1e", cov));
  o.check(inc < 1e-4, "inclusivity " + fmt("%.1e", inc));
  o.check(tot < 1e-4, "total " + fmt("%.1e", tot));
  o.check(dec < 1e-4, "decode " + fmt("%.1e", dec));
  o.check(full < 1e-4, "network " + fmt("%.1e", full));
  const double secs = seconds_since(t0);
  o.check(secs < 120, fmt("%.1f s", secs));
  return o;
}

// ------------------------------------------------------------------ C3

Outcome decode_invariants() {
  Outcome o;
  std::mt19937_64 rng(303);
  double equi = 0, mirror = 0, reduce = 0;
  for (int t = 0; t < 300; ++t) {
    for (auto mode : {SymmetryMode::none, SymmetryMode::instance, SymmetryMode::deformation}) {
      ModelConfig c;
      c.mode = mode;
      const CategoryParams p = random_params(c, static_cast<std::uint64_t>(t));
      PoseCoeffs pose = random_pose(c, rng);
      const Points turned = decode_keypoints(p, pose, mode);
      const double a = pose.angle;
      pose.angle = 0;
      equi = std::max(equi, max_abs(turned, rotate(decode_keypoints(p, pose, mode), rotation_about_up(a))));
      pose.angle = a;

      if (mode == SymmetryMode::instance) {
        const Mat3 r = rotation_about_up(p.category_angle.item()) * rotation_about_up(pose.angle);
        const Points canon = rotate(turned, r.transpose());
        const Mat3 refl = reflection_from_normal(SymmetryPlane(p.normal()));
        const Eigen::Index h = canon.rows() / 2;
        for (Eigen::Index j = 0; j < h; ++j) mirror = std::max(mirror, (refl * canon.row(j).transpose() - canon.row(j + h).transpose()).norm());
      }
      if (mode == SymmetryMode::deformation) {
        pose.c_prime = pose.c;
        reduce = std::max(reduce, max_abs(decode_keypoints(p, pose, mode), decode_keypoints(p, pose, SymmetryMode::instance)));
      }
    }
  }
  o.check(equi < 1e-12, "equivariance " + fmt("%.1e", equi));
  o.check(mirror < 1e-9, "mirror pairs " + fmt("%.1e", mirror));
  o.check(reduce < 1e-12, "c'=c " + fmt("%.1e", reduce));
  return o;
}

// ------------------------------------------------------------------ shared synthetic runs

struct Split {
  std::vector<PointCloud> train, test;
  std::optional<Vec3> normal;
};

Split synthetic_split(Archetype a) {
  SyntheticCategorySpec s;
  s.archetype = a;
  s.instance_count = 236;
  const auto ds = generate_synthetic_category(s);
  Split out;
  out.normal = ds.manifest.ground_truth_symmetry_normal;
  for (std::size_t i = 0; i < ds.clouds.size(); ++i) {
    PointCloud pc = resample(normalize(ds.clouds[i]), 2000, mix_seed({0, 0x5A3Dull, i}));
    (ds.manifest.instances[i].split == "train" ? out.train : out.test).push_back(std::move(pc));
  }
  return out;
}

TrainConfig run_config(SymmetryMode mode) {
  TrainConfig c;
  c.epochs = 60;
  c.model.mode = mode;
  c.model.n_nodes = 16;
  c.model.n_basis = 8;
  c.misalign_deg = 45;
  return c;
}

struct Trained {
  CategoryParams params;
  CategoryEvaluation eval;
  double secs = 0;
  double first_loss = 0, last_loss = 0;
};

Trained train_and_eval(const Split& d, SymmetryMode mode, const char* tag) {
  const auto t0 = Clock::now();
  auto r = train(d.train, run_config(mode));
  Trained out;
  out.secs = seconds_since(t0);
  out.first_loss = r.epoch_loss.front();
  out.last_loss = r.epoch_loss.back();
  out.params = std::move(r.params);
  out.eval = evaluate_category(out.params, d.test, d.normal, EvalOptions{});
  const auto& m = out.eval.metrics;
  std::fprintf(stderr, "[%s/%s] %.0f s: cov %.2f err %.3f corr %.2f inc %.2f sym %.3f N' %zu\n", tag, to_string(mode).c_str(), out.secs,
               m.coverage_pct, m.model_err_pct, m.correspondence_pct.value_or(-1), m.inclusivity_pct, m.sym_err_deg.value_or(-1),
               m.definition_nprime);
  return out;
}

std::vector<Points> retained_keypoints(const CategoryEvaluation& ev) {
  std::vector<Points> out;
  for (const auto& p : ev.predictions) out.push_back(select_rows(p.keypoints, ev.retained));
  return out;
}

// ------------------------------------------------------------------ C4

Outcome table_run(const Trained& t) {
  Outcome o;
  const auto& m = t.eval.metrics;
  o.check(m.coverage_pct >= 80, "coverage " + fmt("%.2f", m.coverage_pct));
  o.check(m.inclusivity_pct >= 90, "inclusivity " + fmt("%.2f", m.inclusivity_pct));
  o.check(m.correspondence_pct && *m.correspondence_pct == 100.0, "correspondence " + fmt("%.2f", m.correspondence_pct.value_or(-1)));
  o.check(m.model_err_pct <= 2.0, "model error " + fmt("%.3f", m.model_err_pct));
  o.check(m.sym_err_deg && *m.sym_err_deg <= 5.0, "symmetry " + fmt("%.3f", m.sym_err_deg.value_or(-1)));
  o.check(m.definition_nprime >= 6 && m.definition_nprime <= 16, "N' " + std::to_string(m.definition_nprime));
  o.check(t.last_loss < 0.1 * t.first_loss, "loss ratio " + fmt("%.3f", t.last_loss / t.first_loss));
  o.check(t.secs < 1800, fmt("%.0f s", t.secs));
  return o;
}

// ------------------------------------------------------------------ C5

Outcome registration_order(const Trained& none, const Trained& inst, const Trained& deform) {
  Outcome o;
  const auto templates = pick_templates(none.eval.predictions.size(), 0);
  auto err = [&](const Trained& t) { return registration_experiment(retained_keypoints(t.eval), t.eval.angles, templates).mean_error_deg; };
  const double en = err(none), ei = err(inst), ed = err(deform);
  o.check(en > ei, "none " + fmt("%.2f", en) + " > instance " + fmt("%.2f", ei));
  o.check(en > ed, "none " + fmt("%.2f", en) + " > deformation " + fmt("%.2f", ed));
  return o;
}

// ------------------------------------------------------------------ C6

Outcome coefficient_distribution() {
  Outcome o;
  const Split d = synthetic_split(Archetype::sym_deform_biped);
  const auto t0 = Clock::now();
  const auto r = train(d.train, run_config(SymmetryMode::deformation));
  std::vector<PointCloud> all = d.train;
  all.insert(all.end(), d.test.begin(), d.test.end());
  const auto ev = evaluate_category(r.params, all, std::nullopt, EvalOptions{});
  std::vector<PoseCoeffs> coeffs;
  for (const auto& p : ev.predictions) coeffs.push_back(p.pose);
  const auto s = coefficient_distribution_check(coeffs);
  o.check(s.relative_difference() < 0.3, "var(c) " + fmt("%.4f", s.mean_var_c) + " var(c') " + fmt("%.4f", s.mean_var_c_prime) +
                                             " rel " + fmt("%.3f", s.relative_difference()));
  o.detail += "; " + fmt("%.0f s", seconds_since(t0));
  return o;
}

// ------------------------------------------------------------------ C7

Outcome semantics(const Trained& t) {
  Outcome o;
  const auto kps = retained_keypoints(t.eval);
  const auto rep = semantic_consistency(kps, t.eval.clouds);
  o.check(rep.score >= 90, "consistency " + fmt("%.2f", rep.score));
  // keypoint labels -> cloud labels -> keypoint labels
  std::size_t same = 0;
  double transfer = 0;
  const auto source = majority_labels(kps[0], t.eval.clouds[0]);
  for (std::size_t i = 0; i < kps.size(); ++i) {
    const auto labels = majority_labels(kps[i], t.eval.clouds[i]);
    same += majority_labels(kps[i], label_transfer(kps[i], labels, t.eval.clouds[i])) == labels;
    if (i > 0) transfer += label_accuracy(label_transfer(kps[i], source, t.eval.clouds[i]).labels, t.eval.clouds[i].labels);
  }
  o.check(same == kps.size(), "round trip " + std::to_string(same) + "/" + std::to_string(kps.size()));
  o.detail += "; transfer accuracy " + fmt("%.1f", transfer / static_cast<double>(kps.size() - 1));
  return o;
}

// ------------------------------------------------------------------ C8

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const Split& d) {
  Outcome o;
  const auto dir = std::filesystem::temp_directory_path() / "symkp_acceptance";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const std::vector<PointCloud> few(d.train.begin(), d.train.begin() + 8);
  for (int run = 0; run < 2; ++run) {
    TrainConfig c = run_config(SymmetryMode::instance);
    c.epochs = 2;
    c.batch_size = 4;
    c.log_path = (dir / ("log" + std::to_string(run) + ".csv")).string();
    save_checkpoint(train(few, c).params, (dir / ("ck" + std::to_string(run) + ".cskp")).string());
  }
  o.check(slurp(dir / "ck0.cskp") == slurp(dir / "ck1.cskp"), "checkpoints identical");
  o.check(slurp(dir / "log0.csv") == slurp(dir / "log1.csv"), "logs identical");
  const auto loaded = load_checkpoint((dir / "ck0.cskp").string());
  save_checkpoint(loaded, (dir / "ck2.cskp").string());
  o.check(slurp(dir / "ck0.cskp") == slurp(dir / "ck2.cskp"), "save/load round trip");
  std::filesystem::remove_all(dir);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  // optional criterion filter, e.g. `acceptance 1 2 3`
  std::vector<bool> want(9, argc == 1);
  for (int i = 1; i < argc; ++i) {
    const int c = std::atoi(argv[i]);
    if (c >= 1 && c <= 8) want[static_cast<std::size_t>(c)] = true;
  }
  bool ok = true;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("C%d %s %s: %s\n", id, o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    ok = ok && o.pass;
  };
  auto guarded = [&](int id, const char* name, const std::function<Outcome()>& f) {
    if (!want[static_cast<std::size_t>(id)]) return;
    try {
      report(id, name, f());
    } catch (const std::exception& e) {
      report(id, name, Outcome{false, std::string("error: ") + e.what()});
    }
  };

  guarded(1, "geometry", geometry_suite);
  guarded(2, "gradients", gradient_suite);
  guarded(3, "decode invariants", decode_invariants);

  if (want[4] || want[5] || want[7] || want[8]) {
    const Split tables = synthetic_split(Archetype::table_like);
    std::optional<Trained> inst;
    auto instance_model = [&]() -> const Trained& {
      if (!inst) inst = train_and_eval(tables, SymmetryMode::instance, "table_like");
      return *inst;
    };
    guarded(4, "table_like run", [&] { return table_run(instance_model()); });
    guarded(5, "registration ordering", [&] {
      const Trained none = train_and_eval(tables, SymmetryMode::none, "table_like");
      const Trained deform = train_and_eval(tables, SymmetryMode::deformation, "table_like");
      return registration_order(none, instance_model(), deform);
    });
    guarded(6, "coefficient distribution", coefficient_distribution);
    guarded(7, "semantic consistency", [&] { return semantics(instance_model()); });
    guarded(8, "determinism", [&] { return determinism(tables); });
  } else {
    guarded(6, "coefficient distribution", coefficient_distribution);
  }
  return ok ? 0 : 1;
}

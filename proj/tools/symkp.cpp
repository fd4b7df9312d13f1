// symkp command-line entry point: synth, train, infer, eval, register.

#include "symkp/symkp.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <numbers>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace symkp;

namespace {

std::string default_out_dir() {
  const char* env = std::getenv("SYMKP_OUT_DIR");
  return env && *env ? env : "symkp_out";
}

std::string out_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

json model_json(const ModelConfig& m) {
  return {{"mode", to_string(m.mode)},       {"n_nodes", m.n_nodes},
          {"n_basis", m.n_basis},            {"knn_k", m.knn_k},
          {"leaky_slope", m.leaky_slope},    {"cluster_widths", m.cluster_widths},
          {"aggregate_widths", m.aggregate_widths}, {"offset_widths", m.offset_widths},
          {"pose_widths", m.pose_widths}};
}

json train_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"decay_factor", c.decay_factor},
          {"decay_every", c.decay_every},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"model", model_json(c.model)},
          {"seed", c.seed},
          {"w_chf", c.weights.chamfer},
          {"w_cov", c.weights.coverage},
          {"w_inc", c.weights.inclusivity},
          {"huber_delta", c.huber_delta},
          {"misalign_deg", c.misalign_deg},
          {"n_points", c.n_points},
          {"threads", c.threads},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"checkpoint_every", c.checkpoint_every}};
}

void write_run_json(const std::string& dir, const std::string& sub, json cfg) {
  json j;
  j["subcommand"] = sub;
  j["config"] = std::move(cfg);
  write_text(out_path(dir, "run.json"), j.dump(2) + "\n");
}

const std::map<std::string, int> up_axes{{"x", 0}, {"y", 1}, {"z", 2}};

struct LoadedInstance {
  PointCloud cloud;  // z-up, normalized
  Normalization norm;
};

LoadedInstance load_instance(const std::string& path, int up) {
  PointCloud pc = load_point_cloud(path);
  pc.points = to_z_up(pc.points, up);
  LoadedInstance li;
  li.norm = normalization_of(pc.points);
  li.cloud = pc;
  li.cloud.points = li.norm.apply(pc.points);
  return li;
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
  std::string archetype = "table_like", out, category;
  std::size_t count = 236, points = 2000;
  std::uint64_t seed = 7;
  double train_fraction = 0.85;
};

int run_synth(const SynthArgs& a) {
  SyntheticCategorySpec s;
  s.archetype = parse_archetype(a.archetype);
  s.instance_count = a.count;
  s.points_per_instance = a.points;
  s.seed = a.seed;
  s.train_fraction = a.train_fraction;
  if (!a.category.empty()) s.category = a.category;
  const auto ds = generate_synthetic_category(s);
  const auto manifest = write_dataset(ds, a.out);
  write_run_json(a.out, "synth",
                 {{"archetype", a.archetype}, {"category", ds.manifest.category}, {"count", a.count},
                  {"points", a.points}, {"seed", a.seed}, {"train_fraction", a.train_fraction}, {"out", a.out}});
  std::cout << "wrote " << ds.clouds.size() << " instances and " << manifest << "\n";
  return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string manifest, out, split = "train", mode = "instance", up = "z";
  TrainConfig cfg;
  bool quiet = false;
};

int run_train(TrainArgs& a) {
  a.cfg.model.mode = parse_mode(a.mode);
  a.cfg.validate();
  fs::create_directories(a.out);
  const auto m = read_manifest(a.manifest);
  const auto instances = prepare_instances(m, a.split, a.cfg.n_points, a.cfg.seed, up_axes.at(a.up));
  if (instances.empty()) throw Error("manifest has no '" + a.split + "' instances");
  TrainConfig cfg = a.cfg;
  cfg.log_path = out_path(a.out, "train_log.csv");
  if (cfg.checkpoint_every > 0) cfg.checkpoint_dir = out_path(a.out, "checkpoints");
  json j = train_json(cfg);
  j["manifest"] = a.manifest;
  j["split"] = a.split;
  j["up_axis"] = a.up;
  j["instances"] = instances.size();
  j["out"] = a.out;
  write_run_json(a.out, "train", j);
  std::size_t last_epoch = SIZE_MAX;
  const auto res = train(instances, cfg, [&](const LogRow& r) {
    if (!a.quiet && r.epoch != last_epoch) {
      last_epoch = r.epoch;
      std::cerr << "epoch " << r.epoch << " lr " << r.lr << " loss " << r.total << "\n";
    }
  });
  save_checkpoint(res.params, out_path(a.out, "checkpoint.cskp"));
  std::cout << "final epoch loss " << res.epoch_loss.back() << "; checkpoint " << out_path(a.out, "checkpoint.cskp") << "\n";
  return 0;
}

// ------------------------------------------------------------------ infer

struct InferArgs {
  std::string checkpoint, out, up = "z";
  std::vector<std::string> clouds;
  double nms_radius = 0.2;
  std::uint64_t seed = 0;
};

int run_infer(const InferArgs& a) {
  if (!(a.nms_radius >= 0.0)) throw Error("--nms-radius must be >= 0");
  const auto params = load_checkpoint(a.checkpoint);
  const int up = up_axes.at(a.up);
  fs::create_directories(a.out);
  std::vector<LoadedInstance> inputs;
  std::vector<InstancePrediction> preds;
  std::vector<Points> canonical;
  for (std::size_t i = 0; i < a.clouds.size(); ++i) {
    inputs.push_back(load_instance(a.clouds[i], up));
    preds.push_back(predict(params, inputs.back().cloud.points, a.seed));
    canonical.push_back(preds.back().canonical_keypoints);
  }
  const IndexList keep = nms_select(canonical, a.nms_radius);
  std::string retained;
  for (Index k : keep) retained += std::to_string(k) + "\n";
  write_text(out_path(a.out, "retained.txt"), retained);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    IndexedKeypoints kp{keep, from_z_up(inputs[i].norm.invert(select_rows(preds[i].keypoints, keep)), up)};
    write_keypoints(kp, out_path(a.out, inputs[i].cloud.id + ".kp.xyz"));
  }
  write_run_json(a.out, "infer",
                 {{"checkpoint", a.checkpoint}, {"clouds", a.clouds}, {"nms_radius", a.nms_radius}, {"seed", a.seed},
                  {"up_axis", a.up}, {"out", a.out}, {"model", model_json(params.config)}});
  std::cout << "N' = " << keep.size() << " keypoints for " << inputs.size() << " instances\n";
  return 0;
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
  std::string checkpoint, manifest, out, split = "test", up = "z";
  EvalOptions opt;
  std::size_t n_points = 2000;
};

int run_eval(const EvalArgs& a) {
  const auto params = load_checkpoint(a.checkpoint);
  const auto m = read_manifest(a.manifest);
  const auto entries = m.split(a.split);
  const auto instances = prepare_instances(m, a.split, a.n_points, a.opt.seed, up_axes.at(a.up));
  if (instances.empty()) throw Error("manifest has no '" + a.split + "' instances");
  std::vector<double> angles;
  const bool given = std::all_of(entries.begin(), entries.end(), [](const ManifestEntry& e) { return e.misalignment.has_value(); });
  if (given)
    for (const auto& e : entries) angles.push_back(*e.misalignment);
  fs::create_directories(a.out);

  const auto ev = evaluate_category(params, instances, m.ground_truth_symmetry_normal, a.opt, angles);
  write_text(out_path(a.out, "metrics.csv"), metrics_csv_header() + "\n" + metrics_csv_row(m.category, ev.metrics) + "\n");

  std::vector<Points> kps;
  for (const auto& p : ev.predictions) kps.push_back(select_rows(p.keypoints, ev.retained));
  write_text(out_path(a.out, "keypoints.svg"),
             keypoint_scatter_svg(instances[0].points, std::span<const Points>(ev.aligned_keypoints.data(), 1),
                                  m.category + ": instance " + instances[0].id + ", N' = " + std::to_string(ev.retained.size())));
  write_text(out_path(a.out, "keypoints_all.svg"), keypoint_scatter_svg(Points(0, 3), ev.aligned_keypoints, m.category + ": all test instances"));

  json summary;
  summary["metrics"] = {{"coverage_pct", ev.metrics.coverage_pct},
                        {"model_err_pct", ev.metrics.model_err_pct},
                        {"correspondence_pct", ev.metrics.correspondence_pct ? json(*ev.metrics.correspondence_pct) : json(nullptr)},
                        {"inclusivity_pct", ev.metrics.inclusivity_pct},
                        {"sym_err_deg", ev.metrics.sym_err_deg ? json(*ev.metrics.sym_err_deg) : json(nullptr)},
                        {"definition_Nprime", ev.metrics.definition_nprime}};
  summary["retained"] = ev.retained;

  if (std::all_of(ev.clouds.begin(), ev.clouds.end(), [](const PointCloud& c) { return c.has_labels(); })) {
    const auto sem = semantic_consistency(kps, ev.clouds);
    write_text(out_path(a.out, "semantic.csv"), semantic_csv(sem));
    write_text(out_path(a.out, "semantic.svg"), semantic_heatmap_svg(sem));
    summary["semantic_consistency_pct"] = sem.score;
  }

  if (params.config.mode == SymmetryMode::deformation) {
    std::vector<PoseCoeffs> coeffs;
    for (const auto& p : ev.predictions) coeffs.push_back(p.pose);
    const auto cs = coefficient_distribution_check(coeffs);
    std::string csv = "component,mean_c,var_c,mean_c_prime,var_c_prime\n";
    char buf[256];
    for (Eigen::Index k = 0; k < cs.var_c.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g,%.9g\n", static_cast<long>(k), cs.mean_c(k), cs.var_c(k), cs.mean_c_prime(k),
                    cs.var_c_prime(k));
      csv += buf;
    }
    write_text(out_path(a.out, "coefficients.csv"), csv);
    write_text(out_path(a.out, "coefficients.svg"), coefficient_svg(cs));
    summary["coefficients"] = {{"mean_var_c", cs.mean_var_c}, {"mean_var_c_prime", cs.mean_var_c_prime},
                               {"relative_difference", cs.relative_difference()}};
  }

  if (kps.size() >= 4) {
    const auto templates = pick_templates(kps.size(), a.opt.seed);
    const auto reg = registration_experiment(kps, ev.angles, templates);
    summary["registration"] = {{"templates", templates}, {"mean_error_deg", reg.mean_error_deg}, {"pairs", reg.pairs}, {"skipped", reg.skipped}};
  }
  write_text(out_path(a.out, "summary.json"), summary.dump(2) + "\n");
  write_run_json(a.out, "eval",
                 {{"checkpoint", a.checkpoint}, {"manifest", a.manifest}, {"split", a.split}, {"up_axis", a.up},
                  {"misalign_deg", a.opt.misalign_deg}, {"misalignment_from_manifest", given}, {"nms_radius", a.opt.nms_radius},
                  {"inclusivity_threshold", a.opt.inclusivity_threshold}, {"seed", a.opt.seed}, {"n_points", a.n_points},
                  {"out", a.out}, {"model", model_json(params.config)}});
  std::cout << metrics_csv_header() << "\n" << metrics_csv_row(m.category, ev.metrics) << "\n";
  return 0;
}

// ------------------------------------------------------------------ register

struct RegisterArgs {
  std::vector<std::string> keypoints, templates;
  std::string out, angles;
};

// Rows shared by both files, in ascending index order.
std::pair<Points, Points> common_rows(const IndexedKeypoints& a, const IndexedKeypoints& b) {
  std::map<Index, Eigen::Index> in_b;
  for (std::size_t i = 0; i < b.indices.size(); ++i) in_b[b.indices[i]] = static_cast<Eigen::Index>(i);
  std::vector<std::pair<Index, std::pair<Eigen::Index, Eigen::Index>>> rows;
  for (std::size_t i = 0; i < a.indices.size(); ++i)
    if (auto it = in_b.find(a.indices[i]); it != in_b.end()) rows.push_back({a.indices[i], {static_cast<Eigen::Index>(i), it->second}});
  std::sort(rows.begin(), rows.end());
  Points pa(static_cast<Eigen::Index>(rows.size()), 3), pb(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    pa.row(static_cast<Eigen::Index>(r)) = a.points.row(rows[r].second.first);
    pb.row(static_cast<Eigen::Index>(r)) = b.points.row(rows[r].second.second);
  }
  return {pa, pb};
}

std::map<std::string, double> read_angles(const std::string& path) {
  auto in = std::ifstream(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::map<std::string, double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(path, lineno, "expected 'name,angle_deg'");
    const std::string name = line.substr(0, comma);
    if (name == "name") continue;
    try {
      out[name] = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw ParseError(path, lineno, "bad angle");
    }
  }
  return out;
}

std::string kp_name(const std::string& path) {
  std::string s = fs::path(path).filename().string();
  for (const char* ext : {".kp.xyz", ".xyz"})
    if (s.size() > std::strlen(ext) && s.ends_with(ext)) return s.substr(0, s.size() - std::strlen(ext));
  return s;
}

int run_register(const RegisterArgs& a) {
  std::map<std::string, double> angles;
  if (!a.angles.empty()) angles = read_angles(a.angles);
  fs::create_directories(a.out);
  std::vector<IndexedKeypoints> tmpl;
  for (const auto& t : a.templates) tmpl.push_back(read_keypoints(t));
  std::string csv = "instance,template,scale,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz,yaw_deg,rms_residual,rotation_error_deg\n";
  double err_sum = 0.0;
  std::size_t err_n = 0, skipped = 0;
  char buf[512];
  for (const auto& path : a.keypoints) {
    const auto kp = read_keypoints(path);
    for (std::size_t t = 0; t < tmpl.size(); ++t) {
      const auto [src, dst] = common_rows(kp, tmpl[t]);
      std::optional<SimilarityTransform> tf;
      if (src.rows() >= 3) tf = similarity_registration(src, dst);
      if (!tf) {
        ++skipped;
        std::cerr << "skipping degenerate pair " << path << " -> " << a.templates[t] << "\n";
        continue;
      }
      const Points moved = tf->apply(src);
      const double rms = std::sqrt((moved - dst).rowwise().squaredNorm().mean());
      const Mat3& r = tf->rotation;
      const double yaw = std::atan2(r(1, 0), r(0, 0)) * 180.0 / std::numbers::pi;
      std::string err = "";
      const auto ai = angles.find(kp_name(path));
      const auto at = angles.find(kp_name(a.templates[t]));
      if (ai != angles.end() && at != angles.end()) {
        const double gt = (at->second - ai->second) * std::numbers::pi / 180.0;
        const double e = rotation_angle_between(r, rotation_about_up(gt)) * 180.0 / std::numbers::pi;
        err_sum += e;
        ++err_n;
        std::snprintf(buf, sizeof buf, "%.9g", e);
        err = buf;
      }
      std::snprintf(buf, sizeof buf, "%s,%s,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.9g,%.9g,",
                    kp_name(path).c_str(), kp_name(a.templates[t]).c_str(), tf->scale, r(0, 0), r(0, 1), r(0, 2), r(1, 0),
                    r(1, 1), r(1, 2), r(2, 0), r(2, 1), r(2, 2), tf->translation.x(), tf->translation.y(), tf->translation.z(),
                    yaw, rms);
      csv += buf + err + "\n";
    }
  }
  write_text(out_path(a.out, "transforms.csv"), csv);
  json report{{"pairs", a.keypoints.size() * tmpl.size() - skipped}, {"skipped", skipped}};
  if (err_n > 0) report["mean_rotation_error_deg"] = err_sum / static_cast<double>(err_n);
  write_text(out_path(a.out, "registration.json"), report.dump(2) + "\n");
  write_run_json(a.out, "register", {{"keypoints", a.keypoints}, {"templates", a.templates}, {"angles", a.angles}, {"out", a.out}});
  std::cout << report.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised category-specific symmetric 3D keypoints"};
  app.require_subcommand(1);
  const std::string out_default = default_out_dir();
  const auto archetypes = std::vector<std::string>{"table_like", "chair_like", "sym_deform_biped"};
  const auto modes = std::vector<std::string>{"none", "instance", "deformation"};
  const auto up_names = std::vector<std::string>{"x", "y", "z"};

  SynthArgs sa;
  sa.out = out_default;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic category dataset with a manifest");
  synth->add_option("--archetype", sa.archetype, "Shape family")->check(CLI::IsMember(archetypes))->capture_default_str();
  synth->add_option("--count", sa.count, "Number of instances")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--points", sa.points, "Points per instance")->check(CLI::Range(4, 10000000))->capture_default_str();
  synth->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  synth->add_option("--train-fraction", sa.train_fraction, "Share of instances tagged train")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  synth->add_option("--category", sa.category, "Category name (defaults to the archetype)");
  synth->add_option("--out", sa.out, "Output directory")->capture_default_str();

  TrainArgs ta;
  ta.out = out_default;
  auto& tc = ta.cfg;
  auto* trn = app.add_subcommand("train", "Train a category model on a manifest");
  trn->add_option("--manifest", ta.manifest, "Dataset manifest (JSON)")->required()->check(CLI::ExistingFile);
  trn->add_option("--out", ta.out, "Output directory")->capture_default_str();
  trn->add_option("--split", ta.split, "Manifest split to train on")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  trn->add_option("--mode", ta.mode, "Symmetry mode")->check(CLI::IsMember(modes))->capture_default_str();
  trn->add_option("--up-axis", ta.up, "Up axis of the input clouds")->check(CLI::IsMember(up_names))->capture_default_str();
  trn->add_option("--lr", tc.lr, "Initial learning rate")->capture_default_str();
  trn->add_option("--decay-factor", tc.decay_factor, "Learning-rate decay factor")->capture_default_str();
  trn->add_option("--decay-every", tc.decay_every, "Epochs between decays")->capture_default_str();
  trn->add_option("--epochs", tc.epochs, "Training epochs")->capture_default_str();
  trn->add_option("--batch-size", tc.batch_size, "Instances per optimizer step")->capture_default_str();
  trn->add_option("--nodes", tc.model.n_nodes, "Node / keypoint count N")->capture_default_str();
  trn->add_option("--basis", tc.model.n_basis, "Basis rank K")->capture_default_str();
  trn->add_option("--knn", tc.model.knn_k, "Neighbors in node aggregation")->capture_default_str();
  trn->add_option("--seed", tc.seed, "Random seed")->capture_default_str();
  trn->add_option("--w-chf", tc.weights.chamfer, "Chamfer loss weight")->capture_default_str();
  trn->add_option("--w-cov", tc.weights.coverage, "Coverage loss weight")->capture_default_str();
  trn->add_option("--w-inc", tc.weights.inclusivity, "Inclusivity loss weight")->capture_default_str();
  trn->add_option("--huber-delta", tc.huber_delta, "Huber threshold of the coverage loss")->capture_default_str();
  trn->add_option("--misalign-deg", tc.misalign_deg, "Maximum training misalignment about up (degrees)")->capture_default_str();
  trn->add_option("--points", tc.n_points, "Points per instance after resampling")->capture_default_str();
  trn->add_option("--threads", tc.threads, "Worker threads per batch")->capture_default_str();
  trn->add_option("--checkpoint-every", tc.checkpoint_every, "Epochs between periodic checkpoints (0 = off)")->capture_default_str();
  trn->add_flag("--quiet", ta.quiet, "No per-epoch progress on stderr");

  InferArgs ia;
  ia.out = out_default;
  auto* inf = app.add_subcommand("infer", "Predict ordered keypoints for point clouds");
  inf->add_option("--checkpoint", ia.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("clouds", ia.clouds, "Point clouds (.xyz, .off, .ply)")->required()->check(CLI::ExistingFile);
  inf->add_option("--nms-radius", ia.nms_radius, "Suppression radius in normalized units")->capture_default_str();
  inf->add_option("--seed", ia.seed, "Sampling seed")->capture_default_str();
  inf->add_option("--up-axis", ia.up, "Up axis of the input clouds")->check(CLI::IsMember(up_names))->capture_default_str();
  inf->add_option("--out", ia.out, "Output directory")->capture_default_str();

  EvalArgs ea;
  ea.out = out_default;
  auto* evl = app.add_subcommand("eval", "Compute metrics and figures on a manifest split");
  evl->add_option("--checkpoint", ea.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  evl->add_option("--manifest", ea.manifest, "Dataset manifest (JSON)")->required()->check(CLI::ExistingFile);
  evl->add_option("--split", ea.split, "Manifest split to evaluate")->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  evl->add_option("--misalign-deg", ea.opt.misalign_deg, "Maximum test misalignment (ignored when the manifest gives angles)")->capture_default_str();
  evl->add_option("--nms-radius", ea.opt.nms_radius, "Suppression radius in normalized units")->capture_default_str();
  evl->add_option("--inclusivity-threshold", ea.opt.inclusivity_threshold, "Inclusivity distance threshold")->capture_default_str();
  evl->add_option("--points", ea.n_points, "Points per instance after resampling")->capture_default_str();
  evl->add_option("--seed", ea.opt.seed, "Random seed")->capture_default_str();
  evl->add_option("--up-axis", ea.up, "Up axis of the input clouds")->check(CLI::IsMember(up_names))->capture_default_str();
  evl->add_option("--out", ea.out, "Output directory")->capture_default_str();

  RegisterArgs ra;
  ra.out = out_default;
  auto* reg = app.add_subcommand("register", "Similarity-register keypoint files onto templates");
  reg->add_option("keypoints", ra.keypoints, "Keypoint files (index x y z)")->required()->check(CLI::ExistingFile);
  reg->add_option("--templates", ra.templates, "Template keypoint files")->required()->check(CLI::ExistingFile);
  reg->add_option("--angles", ra.angles, "CSV 'name,angle_deg' of known yaw angles for error reporting")->check(CLI::ExistingFile);
  reg->add_option("--out", ra.out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*trn) return run_train(ta);
    if (*inf) return run_infer(ia);
    if (*evl) return run_eval(ea);
    if (*reg) return run_register(ra);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

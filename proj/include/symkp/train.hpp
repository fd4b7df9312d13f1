#pragma once

#include "symkp/checkpoint.hpp"
#include "symkp/dataio.hpp"
#include "symkp/losses.hpp"
#include "symkp/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace symkp {

struct TrainConfig {
  double lr = 1e-3;
  double decay_factor = 0.5;
  std::size_t decay_every = 40;  // epochs
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  ModelConfig model;
  std::uint64_t seed = 0;
  LossWeights weights;
  double huber_delta = 1.0;
  double misalign_deg = 45.0;
  std::size_t n_points = 2000;
  std::size_t threads = 1;

  // Adam
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  std::string log_path;             // per-step CSV; empty disables
  std::string checkpoint_dir;       // periodic checkpoints; empty disables
  std::size_t checkpoint_every = 0;  // epochs; 0 disables

  void validate() const {
    if (!(lr >= 0.0) || !(decay_factor > 0.0) || decay_every == 0 || epochs == 0 || batch_size == 0 || n_points < 4 ||
        threads == 0)
      throw Error("train config: lr must be >= 0, and decay factor, decay interval, epochs, batch size, point count and threads positive");
    if (!(misalign_deg >= 0.0 && misalign_deg <= 180.0)) throw Error("train config: misalignment must lie in [0, 180] degrees");
    model.validate();
  }

  /// Step-decayed learning rate for a 0-based epoch.
  double lr_at(std::size_t epoch) const {
    return lr * std::pow(decay_factor, static_cast<double>(epoch / decay_every));
  }
};

struct LogRow {
  std::size_t epoch = 0, step = 0;
  double lr = 0, chamfer = 0, coverage = 0, inclusivity = 0, total = 0;
};

inline std::string log_header() { return "epoch,step,lr,L_chf,L_cov,L_inc,total"; }

inline std::string format_log_row(const LogRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g", r.epoch, r.step, r.lr, r.chamfer, r.coverage,
                r.inclusivity, r.total);
  return buf;
}

struct TrainResult {
  CategoryParams params;
  std::vector<LogRow> log;
  std::vector<double> epoch_loss;  // mean total loss per epoch
};

/// splitmix64 over a sequence of words; used to derive per-use seeds.
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x9E3779B97F4A7C15ull;
  for (auto w : words) {
    h ^= w + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    std::uint64_t z = (h += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    h = z ^ (z >> 31);
  }
  return h;
}

/// Loads, normalizes and resamples every manifest instance with the given
/// split tag (all instances when the tag is empty).
inline std::vector<PointCloud> prepare_instances(const DatasetManifest& m, const std::string& split, std::size_t n_points,
                                                 std::uint64_t seed, int up_axis = 2) {
  std::vector<PointCloud> out;
  std::size_t i = 0;
  for (const auto& e : m.instances) {
    if (!split.empty() && e.split != split) continue;
    PointCloud pc = load_point_cloud(m.resolve(e));
    pc.points = to_z_up(pc.points, up_axis);
    out.push_back(resample(normalize(pc), n_points, mix_seed({seed, 0x5A3Dull, i++})));
  }
  return out;
}

/// Adam with bias correction over a flat list of tensors.
class Adam {
 public:
  Adam(const std::vector<diff::Tensor*>& params, double beta1, double beta2, double eps)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  void step(const std::vector<diff::Tensor*>& params, const std::vector<diff::Buffer>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i]->values;
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double g = grads[i][j];
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        p[j] -= lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<diff::Buffer> m_, v_;
};

namespace detail {

struct InstanceStep {
  std::vector<diff::Buffer> grads;
  double chamfer = 0, coverage = 0, inclusivity = 0, total = 0;
};

/// Forward and backward for one misaligned instance; loss scaled by `weight`.
inline InstanceStep instance_step(const CategoryParams& params, const TrainConfig& cfg, const PointCloud& pc,
                                  std::uint64_t misalign_seed, std::uint64_t fps_seed, double weight) {
  const auto [cloud, angle] = random_misalign(pc, cfg.misalign_deg, misalign_seed);
  diff::Graph g;
  const BoundParams b = bind(g, params);
  const ForwardOutput f = forward(g, b, params.config, cloud.points, fps_seed);
  const LossTerms t = total_loss(f.node.nodes, f.keypoints, cloud.points, cfg.weights, cfg.huber_delta);
  g.backward(diff::scale(t.total, weight));
  InstanceStep s;
  for (const auto& v : b.vars) s.grads.push_back(g.grad(v).values);
  s.chamfer = t.chamfer.value().item();
  s.coverage = t.coverage.value().item();
  s.inclusivity = t.inclusivity.value().item();
  s.total = t.total.value().item();
  return s;
}

}  // namespace detail

/// Unsupervised training on prepared (normalized, resampled) clouds.
///
/// Every epoch reshuffles the instances, redraws each instance's
/// misalignment, and takes one Adam step per batch on the batch-mean loss.
/// Batch members may run on several threads; their gradients are summed in
/// batch order, so results do not depend on the thread count.
inline TrainResult train(const std::vector<PointCloud>& instances, const TrainConfig& cfg,
                         const std::function<void(const LogRow&)>& on_step = {}) {
  cfg.validate();
  if (instances.empty()) throw Error("train: no training instances");
  TrainResult res;
  res.params = init_category_params(cfg.model, mix_seed({cfg.seed, 0x1417ull}));
  auto tensors = res.params.tensors();
  Adam adam(tensors, cfg.beta1, cfg.beta2, cfg.eps);

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw Error("cannot write '" + cfg.log_path + "'");
    log << log_header() << '\n';
  }

  std::vector<std::size_t> order(instances.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(mix_seed({cfg.seed, 0x5EEDull, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = cfg.lr_at(epoch);
    double epoch_total = 0.0;

    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::size_t n = end - begin;
      const double weight = 1.0 / static_cast<double>(n);
      std::vector<detail::InstanceStep> steps(n);
      auto run = [&](std::size_t slot) {
        const std::size_t idx = order[begin + slot];
        try {
          steps[slot] = detail::instance_step(res.params, cfg, instances[idx], mix_seed({cfg.seed, 0xA11Cull, epoch, idx}),
                                              mix_seed({cfg.seed, 0xF95ull, epoch, idx}), weight);
        } catch (const Error& e) {
          throw Error("non-finite or invalid training step on instance '" + instances[idx].id + "' (epoch " +
                      std::to_string(epoch) + "): " + e.what());
        }
      };
      if (cfg.threads <= 1 || n == 1) {
        for (std::size_t s = 0; s < n; ++s) run(s);
      } else {
        std::vector<std::exception_ptr> errors(cfg.threads);
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < cfg.threads; ++t)
          pool.emplace_back([&, t] {
            try {
              for (std::size_t s = t; s < n; s += cfg.threads) run(s);
            } catch (...) {
              errors[t] = std::current_exception();
            }
          });
        for (auto& th : pool) th.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
      }

      std::vector<diff::Buffer> grads = std::move(steps[0].grads);
      LogRow row{epoch, step, lr, steps[0].chamfer, steps[0].coverage, steps[0].inclusivity, steps[0].total};
      for (std::size_t s = 1; s < n; ++s) {
        for (std::size_t i = 0; i < grads.size(); ++i)
          for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += steps[s].grads[i][j];
        row.chamfer += steps[s].chamfer;
        row.coverage += steps[s].coverage;
        row.inclusivity += steps[s].inclusivity;
        row.total += steps[s].total;
      }
      row.chamfer *= weight;
      row.coverage *= weight;
      row.inclusivity *= weight;
      row.total *= weight;
      if (!std::isfinite(row.total)) throw Error("non-finite batch loss at epoch " + std::to_string(epoch));

      adam.step(tensors, grads, lr);
      res.params.renormalize_normal();
      epoch_total += row.total * static_cast<double>(n);
      res.log.push_back(row);
      if (log) log << format_log_row(row) << '\n';
      if (on_step) on_step(row);
      ++step;
    }
    res.epoch_loss.push_back(epoch_total / static_cast<double>(instances.size()));
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && (epoch + 1) % cfg.checkpoint_every == 0) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      char name[64];
      std::snprintf(name, sizeof name, "epoch_%04zu.cskp", epoch + 1);
      save_checkpoint(res.params, (std::filesystem::path(cfg.checkpoint_dir) / name).string());
    }
  }
  return res;
}

}  // namespace symkp

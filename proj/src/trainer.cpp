#include "seqcount/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "seqcount/wire.hpp"

namespace seqcount {

LossWeights lambda_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lambda_schedule: negative epoch");
  LossWeights w;
  w.epoch = epoch;
  w.lambda1 = std::max(cfg.lambda1_0 * std::pow(cfg.gamma, epoch), cfg.lambda_floor);
  w.lambda2 = cfg.lambda2;
  return w;
}

ad::Tensor episode_loss(const std::vector<ad::Tensor>& alphas,
                        const std::vector<ad::Tensor>& gauss_targets,
                        const std::vector<ad::Tensor>& scores,
                        const std::vector<int>& target_classes, const LossWeights& weights) {
  const size_t steps = alphas.size();
  if (steps == 0) throw std::invalid_argument("episode_loss: empty sequence");
  if (gauss_targets.size() != steps || scores.size() != steps || target_classes.size() != steps)
    throw std::invalid_argument(
        "episode_loss: sequence length mismatch: alphas " + std::to_string(steps) +
        ", targets " + std::to_string(gauss_targets.size()) + ", scores " +
        std::to_string(scores.size()) + ", labels " + std::to_string(target_classes.size()));

  ad::Tensor kl_sum, ce_sum;
  for (size_t t = 0; t < steps; ++t) {
    const ad::Tensor& alpha = alphas[t];
    const ad::Tensor& g = gauss_targets[t];
    if (g.numel() != alpha.numel())
      throw std::invalid_argument("episode_loss: target grid " + ad::shape_str(g.shape()) +
                                  " does not match attention " + ad::shape_str(alpha.shape()));
    // KL(alpha || G) = sum alpha * (log alpha - log G); G is a constant.
    ad::Tensor neg_log_g = ad::Tensor::zeros({static_cast<int>(g.numel())});
    for (long i = 0; i < g.numel(); ++i) {
      if (!(g[i] > 0.0))
        throw std::invalid_argument("episode_loss: target map must be strictly positive");
      neg_log_g.data()[i] = -std::log(g[i]);
    }
    ad::Tensor flat = alphas[t].shape().size() == 1
                          ? alphas[t]
                          : ad::reshape(alphas[t], {static_cast<int>(alpha.numel())});
    ad::Tensor kl = ad::sum(ad::mul(flat, ad::add(ad::log(flat), neg_log_g)));
    kl_sum = kl_sum.defined() ? ad::add(kl_sum, kl) : kl;

    const int y = target_classes[t];
    if (y < 0 || y >= scores[t].shape()[0])
      throw std::invalid_argument("episode_loss: target class " + std::to_string(y) +
                                  " outside score vector " + ad::shape_str(scores[t].shape()));
    if (scores[t][y] == 0.0)
      throw std::domain_error("episode_loss: zero probability for target class " +
                              std::to_string(y) + " at step " + std::to_string(t));
    ad::Tensor onehot = ad::Tensor::zeros(scores[t].shape());
    onehot.data()[y] = 1.0;
    ad::Tensor ce = ad::neg(ad::log(ad::sum(ad::mul(scores[t], onehot))));
    ce_sum = ce_sum.defined() ? ad::add(ce_sum, ce) : ce;
  }
  return ad::add(ad::scale(kl_sum, weights.lambda1), ad::scale(ce_sum, weights.lambda2));
}

std::vector<ad::Tensor> gaussian_targets(const std::vector<ScenePointLabel>& labels,
                                         double sigma, int grid_h, int grid_w) {
  std::vector<ad::Tensor> targets;
  targets.reserve(labels.size());
  for (const auto& l : labels)
    targets.push_back(gaussian_map(l.y / 4.0, l.x / 4.0, sigma / 4.0, grid_h, grid_w,
                                   GaussianMode::probability, kTargetEps));
  return targets;
}

ad::Tensor episode_forward_loss(const Model& model, const EpisodeTask& task,
                                const LossWeights& weights) {
  if (task.query.labels.empty())
    throw std::invalid_argument("episode_forward_loss: query has no labels");
  std::vector<Image> images;
  images.reserve(task.support.size() + 1);
  for (const Scene& s : task.support) images.push_back(s.image);
  images.push_back(task.query.image);

  const auto fms = shared_forward(images, model.backbone, model.dims);
  std::vector<SupportItem> items;
  items.reserve(task.support.size());
  for (size_t s = 0; s < task.support.size(); ++s)
    items.push_back({fms[s], task.support[s].labels});

  const PrototypeBank bank = model.prototypes_for(items, task.ways());
  const FeatureMap& query = fms.back();
  const int steps = static_cast<int>(task.query.labels.size());
  const DecodeTrace trace = decode_train(query, bank, model.decoder, steps);

  const auto targets =
      gaussian_targets(task.query.labels, model.sigma, query.grid_h, query.grid_w);
  std::vector<int> target_classes;
  target_classes.reserve(task.query.labels.size());
  for (const auto& l : task.query.labels) target_classes.push_back(l.cls);
  return episode_loss(trace.alphas, targets, trace.scores, target_classes, weights);
}

void adam_step(const std::vector<std::pair<std::string, ad::Tensor>>& params, AdamState& state,
               double lr, const TrainConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].second.numel(), 0.0);
      state.v[i].assign(params[i].second.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state holds " + std::to_string(state.m.size()) +
                                " parameters, got " + std::to_string(params.size()));
  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    ad::Tensor& p = const_cast<ad::Tensor&>(params[i].second);
    if (!p.has_grad()) continue;
    if (static_cast<long>(state.m[i].size()) != p.numel())
      throw std::invalid_argument("adam_step: moment shape mismatch for " + params[i].first);
    const auto& g = p.grad();
    for (long j = 0; j < p.numel(); ++j) {
      state.m[i][j] = b1 * state.m[i][j] + (1.0 - b1) * g[j];
      state.v[i][j] = b2 * state.v[i][j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = state.m[i][j] / bc1;
      const double vhat = state.v[i][j] / bc2;
      p.data()[j] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

double train_episode(const Model& model, const EpisodeTask& task, const LossWeights& weights,
                     AdamState& adam, double lr, const TrainConfig& cfg) {
  model.zero_grads();
  ad::Graph graph;
  double loss_value;
  {
    ad::GraphScope scope(graph);
    ad::Tensor loss = episode_forward_loss(model, task, weights);
    loss_value = loss.item();
    graph.backward(loss);
  }
  auto params = model.named_params();
  adam_step(params, adam, lr, cfg);
  return loss_value;
}

namespace {

double validation_mae(const Model& model, const std::vector<EpisodeTask>& val_pool, int t_max) {
  double total = 0.0;
  long terms = 0;
  for (const EpisodeTask& task : val_pool) {
    ad::NoGradGuard no_grad;
    std::vector<Image> images;
    for (const Scene& s : task.support) images.push_back(s.image);
    images.push_back(task.query.image);
    const auto fms = shared_forward(images, model.backbone, model.dims);
    std::vector<SupportItem> items;
    for (size_t s = 0; s < task.support.size(); ++s)
      items.push_back({fms[s], task.support[s].labels});
    const PrototypeBank bank = model.prototypes_for(items, task.ways());
    const auto preds = decode_infer(fms.back(), bank, model.decoder, t_max);
    std::vector<int> pred_counts(task.ways(), 0), gt_counts(task.ways(), 0);
    for (const auto& p : preds) ++pred_counts[p.cls];
    for (const auto& l : task.query.labels) ++gt_counts[l.cls];
    for (int c = 0; c < task.ways(); ++c) {
      total += std::abs(pred_counts[c] - gt_counts[c]);
      ++terms;
    }
  }
  return terms ? total / static_cast<double>(terms) : 0.0;
}

}  // namespace

std::vector<EpochStats> train(Model& model, const std::vector<EpisodeTask>& train_pool,
                              const std::vector<EpisodeTask>& val_pool, const TrainConfig& cfg,
                              const TrainOptions& options) {
  if (train_pool.empty()) throw std::invalid_argument("train: empty train pool");

  AdamState adam;
  PlateauScheduler sched(cfg.lr0, cfg.plateau_window, cfg.lr_factor);
  int start_epoch = 0;
  if (!options.resume_from.empty()) {
    int saved_epoch = 0;
    load_checkpoint_into(options.resume_from, model, &adam, &sched, &saved_epoch);
    start_epoch = saved_epoch + 1;
  }

  std::ofstream log;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log.open(options.out_dir + "/metrics.log", std::ios::app);
  }

  std::vector<EpochStats> stats;
  double best_val = sched.best();
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const LossWeights weights = lambda_schedule(epoch, cfg);
    const double lr = sched.lr();
    double loss_sum = 0.0;
    for (int i = 0; i < cfg.episodes_per_epoch; ++i) {
      const std::uint64_t draw = Rng::derive(
          cfg.seed ^ 0x45504953ULL, static_cast<std::uint64_t>(epoch) * cfg.episodes_per_epoch + i);
      const size_t pick = static_cast<size_t>(draw % train_pool.size());
      const std::string where = "epoch " + std::to_string(epoch) + " episode " +
                                std::to_string(i) + " (train pool index " +
                                std::to_string(pick) + ")";
      double loss;
      try {
        loss = train_episode(model, train_pool[pick], weights, adam, lr, cfg);
      } catch (const std::exception& e) {
        throw std::runtime_error("train: aborted at " + where + ": " + e.what());
      }
      if (!std::isfinite(loss))
        throw std::runtime_error("train: non-finite loss at " + where);
      loss_sum += loss;
    }

    EpochStats s;
    s.epoch = epoch;
    s.mean_loss = loss_sum / cfg.episodes_per_epoch;
    s.val_mae = val_pool.empty() ? 0.0 : validation_mae(model, val_pool, options.val_t_max);
    s.lambda1 = weights.lambda1;
    if (!val_pool.empty()) sched.observe(s.val_mae);
    s.lr = sched.lr();
    stats.push_back(s);

    if (!options.out_dir.empty()) {
      save_checkpoint(options.out_dir + "/last.ckpt", model, adam, sched, epoch);
      if (s.val_mae < best_val) {
        best_val = s.val_mae;
        save_checkpoint(options.out_dir + "/best.ckpt", model, adam, sched, epoch);
      }
      log << "epoch=" << epoch << " loss=" << s.mean_loss << " val_mae=" << s.val_mae
          << " lr=" << s.lr << " lambda1=" << s.lambda1 << "\n";
      log.flush();
    }
    if (options.on_epoch) options.on_epoch(s);
  }
  return stats;
}

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;

void write_entry(wire::Writer& w, const std::string& name, const ad::Shape& shape,
                 const double* data, long n) {
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u8(static_cast<std::uint8_t>(shape.size()));
  for (int d : shape) w.u32(static_cast<std::uint32_t>(d));
  for (long i = 0; i < n; ++i) w.f64(data[i]);
}

void write_scalar(wire::Writer& w, const std::string& name, double value) {
  write_entry(w, name, {}, &value, 1);
}

struct Entry {
  ad::Shape shape;
  std::vector<double> values;
};

std::map<std::string, Entry> read_entries(const std::string& path, int* epoch) {
  wire::Reader r(path, "load_checkpoint");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic at offset 0 in '" + path + "'");
  const std::uint16_t version = r.u16();
  if (version != kVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
  *epoch = static_cast<int>(r.u32());
  const std::uint32_t count = r.u32();
  std::map<std::string, Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    Entry e;
    const int rank = r.u8();
    long n = 1;
    for (int d = 0; d < rank; ++d) {
      e.shape.push_back(static_cast<int>(r.u32()));
      n *= e.shape.back();
    }
    e.values.resize(n);
    for (long j = 0; j < n; ++j) e.values[j] = r.f64();
    entries.emplace(std::move(name), std::move(e));
  }
  return entries;
}

const Entry& need(const std::map<std::string, Entry>& entries, const std::string& name) {
  const auto it = entries.find(name);
  if (it == entries.end())
    throw std::runtime_error("load_checkpoint: missing entry '" + name + "'");
  return it->second;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const AdamState& adam,
                     const PlateauScheduler& sched, int epoch) {
  const auto params = model.named_params();
  wire::Writer w(path, "save_checkpoint");
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(epoch));

  const std::uint32_t n_entries =
      static_cast<std::uint32_t>(params.size() * 3 + 4 /*opt+sched scalars*/ + 10 /*cfg*/ + 1);
  w.u32(n_entries);

  for (const auto& [name, p] : params) write_entry(w, name, p.shape(), p.data(), p.numel());
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    std::vector<double> zero;
    const double* m = adam.m.empty() ? nullptr : adam.m[i].data();
    const double* v = adam.v.empty() ? nullptr : adam.v[i].data();
    if (!m) {
      zero.assign(p.numel(), 0.0);
      m = v = zero.data();
    }
    write_entry(w, "adam.m." + name, p.shape(), m, p.numel());
    write_entry(w, "adam.v." + name, p.shape(), v, p.numel());
  }
  write_scalar(w, "adam.t", static_cast<double>(adam.step));
  write_scalar(w, "opt.lr", sched.lr());
  write_scalar(w, "sched.best", sched.best());
  write_scalar(w, "sched.since_best", sched.since_best());

  write_scalar(w, "cfg.image_h", model.image_h);
  write_scalar(w, "cfg.image_w", model.image_w);
  write_scalar(w, "cfg.sigma", model.sigma);
  write_scalar(w, "cfg.coord_channels", model.dims.coord_channels ? 1.0 : 0.0);
  write_scalar(w, "cfg.guide", model.dims.guide ? 1.0 : 0.0);
  write_scalar(w, "cfg.attn_dim", model.dims.attn_dim);
  write_scalar(w, "cfg.hidden_dim", model.dims.hidden_dim);
  write_scalar(w, "cfg.input_dim", model.dims.input_dim);
  write_scalar(w, "cfg.embed_dim", model.dims.embed_dim);
  write_scalar(w, "cfg.max_ways", model.dims.max_ways);
  {
    std::vector<double> widths(model.dims.backbone_widths.begin(),
                               model.dims.backbone_widths.end());
    write_entry(w, "cfg.backbone_widths", {static_cast<int>(widths.size())}, widths.data(),
                static_cast<long>(widths.size()));
  }
  w.close_checked();
}

void load_checkpoint_into(const std::string& path, Model& model, AdamState* adam,
                          PlateauScheduler* sched, int* epoch) {
  int file_epoch = 0;
  const auto entries = read_entries(path, &file_epoch);
  if (epoch) *epoch = file_epoch;

  auto params = model.named_params();
  for (auto& [name, p] : params) {
    const Entry& e = need(entries, name);
    if (e.shape != p.shape())
      throw std::runtime_error("load_checkpoint: tensor '" + name + "' has shape " +
                               ad::shape_str(e.shape) + " in file, expected " +
                               ad::shape_str(p.shape()));
    ad::Tensor& t = const_cast<ad::Tensor&>(p);
    std::copy(e.values.begin(), e.values.end(), t.data());
  }
  if (adam) {
    adam->m.assign(params.size(), {});
    adam->v.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
      const Entry& m = need(entries, "adam.m." + params[i].first);
      const Entry& v = need(entries, "adam.v." + params[i].first);
      if (m.shape != params[i].second.shape() || v.shape != params[i].second.shape())
        throw std::runtime_error("load_checkpoint: moment shape mismatch for '" +
                                 params[i].first + "'");
      adam->m[i] = m.values;
      adam->v[i] = v.values;
    }
    adam->step = static_cast<long>(need(entries, "adam.t").values.at(0));
  }
  if (sched) {
    sched->restore(need(entries, "opt.lr").values.at(0),
                   need(entries, "sched.best").values.at(0),
                   static_cast<int>(need(entries, "sched.since_best").values.at(0)));
  }
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  int epoch = 0;
  const auto entries = read_entries(path, &epoch);

  ModelDims dims;
  dims.coord_channels = need(entries, "cfg.coord_channels").values.at(0) != 0.0;
  dims.guide = need(entries, "cfg.guide").values.at(0) != 0.0;
  dims.attn_dim = static_cast<int>(need(entries, "cfg.attn_dim").values.at(0));
  dims.hidden_dim = static_cast<int>(need(entries, "cfg.hidden_dim").values.at(0));
  dims.input_dim = static_cast<int>(need(entries, "cfg.input_dim").values.at(0));
  dims.embed_dim = static_cast<int>(need(entries, "cfg.embed_dim").values.at(0));
  dims.max_ways = static_cast<int>(need(entries, "cfg.max_ways").values.at(0));
  dims.backbone_widths.clear();
  for (double wdt : need(entries, "cfg.backbone_widths").values)
    dims.backbone_widths.push_back(static_cast<int>(wdt));

  LoadedCheckpoint out;
  out.model = init_model(dims, static_cast<int>(need(entries, "cfg.image_h").values.at(0)),
                         static_cast<int>(need(entries, "cfg.image_w").values.at(0)),
                         need(entries, "cfg.sigma").values.at(0), /*seed=*/0);
  PlateauScheduler sched(0.0, 1, 0.5);
  load_checkpoint_into(path, out.model, &out.adam, &sched, &out.epoch);
  out.lr = sched.lr();
  out.sched_best = sched.best();
  out.sched_since_best = sched.since_best();
  return out;
}

}  // namespace seqcount

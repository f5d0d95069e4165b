#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "seqcount/config.hpp"
#include "seqcount/episode.hpp"
#include "seqcount/metrics.hpp"
#include "seqcount/micro.hpp"
#include "seqcount/model.hpp"
#include "seqcount/trainer.hpp"

namespace fs = std::filesystem;
using namespace seqcount;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitUsage = 2;

struct Range {
  int lo = 0, hi = 0;
};

Range parse_range(const std::string& s) {
  const auto pos = s.find("..");
  Range r;
  try {
    if (pos == std::string::npos) {
      r.lo = r.hi = std::stoi(s);
    } else {
      r.lo = std::stoi(s.substr(0, pos));
      r.hi = std::stoi(s.substr(pos + 2));
    }
  } catch (const std::exception&) {
    throw std::runtime_error("bad range '" + s + "', expected A..B");
  }
  if (r.lo > r.hi) throw std::runtime_error("bad range '" + s + "': lower bound above upper");
  return r;
}

void set_kernel_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int cmd_gen_data(const std::string& out_dir, std::uint64_t seed, int train_tasks, int val_tasks,
                 int test_tasks, const std::string& ways, const std::string& shots) {
  SceneConfig cfg;
  if (!ways.empty()) {
    const Range r = parse_range(ways);
    cfg.ways_min = r.lo;
    cfg.ways_max = r.hi;
  }
  if (!shots.empty()) {
    const Range r = parse_range(shots);
    cfg.shots_min = r.lo;
    cfg.shots_max = r.hi;
  }
  fs::create_directories(out_dir);

  auto make_pool = [&cfg](Split split, std::uint64_t stream_seed, int n) {
    Rng rng(stream_seed);
    std::vector<EpisodeTask> tasks;
    tasks.reserve(n);
    for (int i = 0; i < n; ++i) tasks.push_back(sample_task(rng, split, cfg));
    return tasks;
  };

  write_episodes(out_dir + "/train.sqep",
                 make_pool(Split::meta_train, Rng::derive(seed, 1), train_tasks));
  write_episodes(out_dir + "/val.sqep",
                 make_pool(Split::meta_train, Rng::derive(seed, 2), val_tasks));
  if (test_tasks > 0) {
    write_episodes(out_dir + "/test.sqep",
                   make_pool(Split::meta_test, Rng::derive(seed, 3), test_tasks));
  } else {
    std::cout << "warning: --test-tasks 0, no meta-test file written\n";
  }

  std::cout << "wrote " << train_tasks << " train / " << val_tasks << " val";
  if (test_tasks > 0) std::cout << " / " << test_tasks << " test";
  std::cout << " tasks to " << out_dir << "\n";
  std::cout << "meta-train classes (" << meta_train_classes().size() << "):";
  for (int id : meta_train_classes()) std::cout << " " << id;
  std::cout << "\nmeta-test classes (" << meta_test_classes().size() << "):";
  for (int id : meta_test_classes()) std::cout << " " << id << "(" << glyph_class_name(id) << ")";
  std::cout << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, bool no_coords, bool no_guide, double sigma,
              int epochs, const std::string& resume) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
  cfg.apply_env();
  if (no_coords) cfg.model.coord_channels = false;
  if (no_guide) cfg.model.guide = false;
  if (sigma > 0) cfg.train.sigma = sigma;
  if (epochs >= 0) cfg.train.epochs = epochs;

  const std::string train_path = data_dir + "/train.sqep";
  const std::string val_path = data_dir + "/val.sqep";
  if (!fs::exists(train_path))
    throw std::runtime_error("missing training episodes: " + train_path);
  const auto train_pool = read_episodes(train_path);
  const auto val_pool = fs::exists(val_path) ? read_episodes(val_path) : std::vector<EpisodeTask>{};
  if (train_pool.empty()) throw std::runtime_error("training pool is empty");

  const Image& first = train_pool[0].query.image;
  fs::create_directories(out_dir);
  {
    std::ofstream echo(out_dir + "/config_effective.txt");
    echo << cfg.to_text();
  }

  Model model = init_model(cfg.model, first.h, first.w, cfg.train.sigma, cfg.train.seed);
  TrainOptions options;
  options.out_dir = out_dir;
  options.resume_from = resume;
  options.on_epoch = [](const EpochStats& s) {
    std::printf("epoch %4d  loss %9.4f  val_mae %6.3f  lr %.3e  lambda1 %6.3f\n", s.epoch,
                s.mean_loss, s.val_mae, s.lr, s.lambda1);
    std::fflush(stdout);
  };
  train(model, train_pool, val_pool, cfg.train, options);
  std::cout << "checkpoints and metrics written to " << out_dir << "\n";
  return kExitOk;
}

std::string resolve_episode_file(const std::string& data) {
  if (fs::is_directory(data)) return data + "/test.sqep";
  return data;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, double radius, int t_max,
             int workers, const std::string& csv_path) {
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  const auto pool = read_episodes(resolve_episode_file(data));
  if (pool.empty()) throw std::runtime_error("evaluation pool is empty");
  const EvalReport report = evaluate(ckpt.model, pool, radius, t_max, workers);
  std::cout << report.to_text();
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    csv << report.buckets_csv();
    std::cout << "bucket table written to " << csv_path << "\n";
  }
  return kExitOk;
}

// Sidecar format: one "y x class_name" per line, '#' comments.
std::vector<std::pair<ScenePointLabel, std::string>> read_points(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open points file '" + path + "'");
  std::vector<std::pair<ScenePointLabel, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    ScenePointLabel l;
    std::string name;
    if (!(ss >> l.y >> l.x >> name)) {
      std::string rest;
      if (ss.clear(), ss.str().find_first_not_of(" \t\r\n") == std::string::npos) continue;
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 'y x class_name'");
    }
    out.emplace_back(l, name);
  }
  return out;
}

int cmd_count(const std::string& checkpoint, const std::vector<std::string>& support_specs,
              const std::string& query_path, const std::string& classes_csv, int t_max) {
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  const Model& model = ckpt.model;

  std::vector<std::string> class_names;
  if (!classes_csv.empty()) {
    std::stringstream ss(classes_csv);
    std::string item;
    while (std::getline(ss, item, ',')) class_names.push_back(item);
  }
  auto local_of = [&](const std::string& name, bool declare) -> int {
    for (size_t i = 0; i < class_names.size(); ++i)
      if (class_names[i] == name) return static_cast<int>(i);
    if (!declare)
      throw std::runtime_error("class '" + name + "' not in the declared class list");
    class_names.push_back(name);
    return static_cast<int>(class_names.size()) - 1;
  };
  const bool declared = !classes_csv.empty();

  std::vector<Scene> support;
  for (const std::string& spec : support_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("bad --support '" + spec + "', expected image.ppm=points.txt");
    Scene s;
    s.image = read_ppm(spec.substr(0, eq));
    for (auto& [label, name] : read_points(spec.substr(eq + 1))) {
      label.cls = local_of(name, !declared);
      if (label.y < 0 || label.y >= s.image.h || label.x < 0 || label.x >= s.image.w)
        throw std::runtime_error("point (" + std::to_string(label.y) + "," +
                                 std::to_string(label.x) + ") outside image in " + spec);
      s.labels.push_back(label);
    }
    s.labels = sort_labels(std::move(s.labels));
    support.push_back(std::move(s));
  }
  if (support.empty()) throw std::runtime_error("at least one --support image is required");
  if (class_names.empty()) throw std::runtime_error("support points declare no classes");

  std::vector<int> instances(class_names.size(), 0);
  for (const Scene& s : support)
    for (const auto& l : s.labels) ++instances[l.cls];
  for (size_t c = 0; c < class_names.size(); ++c)
    if (instances[c] == 0)
      throw std::runtime_error("support images lack any instance of class '" + class_names[c] +
                               "'");

  EpisodeTask task;
  task.class_ids.assign(class_names.size(), 0);  // external classes have no global ids
  task.support = std::move(support);
  task.query.image = read_ppm(query_path);
  if (task.query.image.h != model.image_h || task.query.image.w != model.image_w)
    throw std::runtime_error("query image is " + std::to_string(task.query.image.h) + "x" +
                             std::to_string(task.query.image.w) + " but the checkpoint expects " +
                             std::to_string(model.image_h) + "x" + std::to_string(model.image_w));
  if (static_cast<int>(class_names.size()) > model.dims.max_ways)
    throw std::runtime_error("task declares " + std::to_string(class_names.size()) +
                             " classes, checkpoint supports at most " +
                             std::to_string(model.dims.max_ways));

  const auto preds = infer_task(model, task, t_max);
  std::vector<int> counts(class_names.size(), 0);
  for (const auto& p : preds) ++counts[p.cls];
  std::cout << "counts:\n";
  for (size_t c = 0; c < class_names.size(); ++c)
    std::cout << "  " << class_names[c] << " = " << counts[c] << "\n";
  std::cout << "points (y x class):\n";
  for (const auto& p : preds)
    std::cout << "  " << p.y << " " << p.x << " " << class_names[p.cls] << "\n";
  return kExitOk;
}

int cmd_gradcheck(bool micro) {
  if (!micro) throw std::runtime_error("gradcheck: pass --micro to run the micro-episode sweep");
  const auto report = micro_gradcheck();
  std::cout << report.summary() << "\n";
  return report.pass ? kExitOk : kExitVerifyFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot sequential multi-class object counting on glyph scenes"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads for the kernels (0 = library default)");

  auto* gen = app.add_subcommand("gen-data", "Generate episodic train/val/test datasets");
  std::string gen_out;
  std::uint64_t gen_seed = 1;
  int train_tasks = 500, val_tasks = 50, test_tasks = 200;
  std::string ways, shots;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Master seed");
  gen->add_option("--train-tasks", train_tasks, "Meta-train episode count");
  gen->add_option("--val-tasks", val_tasks, "Validation episode count (meta-train classes)");
  gen->add_option("--test-tasks", test_tasks, "Meta-test episode count");
  gen->add_option("--ways", ways, "Ways range A..B (default 2..5)");
  gen->add_option("--shots", shots, "Shots range A..B (default 3..5)");

  auto* tr = app.add_subcommand("train", "Episodic training");
  std::string tr_config, tr_data, tr_out, tr_resume;
  bool no_coords = false, no_guide = false;
  double tr_sigma = -1.0;
  int tr_epochs = -1;
  tr->add_option("--config", tr_config, "key=value config file");
  tr->add_option("--data", tr_data, "Dataset directory from gen-data")->required();
  tr->add_option("--out", tr_out, "Run directory")->required();
  tr->add_flag("--no-coords", no_coords, "Drop the coordinate one-hot channels");
  tr->add_flag("--no-guide", no_guide, "Pool support features with attention, not label Gaussians");
  tr->add_option("--sigma", tr_sigma, "Gaussian kernel std in image pixels (default 8)");
  tr->add_option("--epochs", tr_epochs, "Override epoch count");
  tr->add_option("--resume", tr_resume, "Resume from a checkpoint");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on an episode pool");
  std::string ev_ckpt, ev_data, ev_csv;
  double radius = 16.0;
  int ev_tmax = 32, workers = 1;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--data", ev_data, "Episode file, or dataset directory (uses test.sqep)")
      ->required();
  ev->add_option("--radius", radius, "Matching radius in pixels (default 16)");
  ev->add_option("--tmax", ev_tmax, "Decoder step cap per episode (default 32)");
  ev->add_option("--workers", workers, "Parallel episode workers (default 1)");
  ev->add_option("--csv", ev_csv, "Write the per-(ways,shots) bucket table to this CSV");

  auto* cnt = app.add_subcommand("count", "Count one user-supplied task");
  std::string cnt_ckpt, cnt_query, cnt_classes;
  std::vector<std::string> cnt_support;
  int cnt_tmax = 32;
  cnt->add_option("--checkpoint", cnt_ckpt, "Checkpoint path")->required();
  cnt->add_option("--support", cnt_support, "Support image.ppm=points.txt (repeatable)")
      ->required();
  cnt->add_option("--query", cnt_query, "Query image (PPM)")->required();
  cnt->add_option("--classes", cnt_classes, "Comma-separated class names (else from sidecars)");
  cnt->add_option("--tmax", cnt_tmax, "Decoder step cap (default 32)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference verification");
  bool micro = false;
  gc->add_flag("--micro", micro, "Full-pipeline sweep on the micro episode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  set_kernel_threads(threads);
  try {
    if (gen->parsed())
      return cmd_gen_data(gen_out, gen_seed, train_tasks, val_tasks, test_tasks, ways, shots);
    if (tr->parsed())
      return cmd_train(tr_config, tr_data, tr_out, no_coords, no_guide, tr_sigma, tr_epochs,
                       tr_resume);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, radius, ev_tmax, workers, ev_csv);
    if (cnt->parsed()) return cmd_count(cnt_ckpt, cnt_support, cnt_query, cnt_classes, cnt_tmax);
    if (gc->parsed()) return cmd_gradcheck(micro);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

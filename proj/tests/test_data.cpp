#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

#include "doctest.h"
#include "seqcount/config.hpp"
#include "seqcount/episode.hpp"

using namespace seqcount;

namespace {

std::string temp_path(const char* tag) {
  static int counter = 0;
  return std::string("seqcount_test_") + tag + "_" + std::to_string(counter++) + ".bin";
}

}  // namespace

TEST_CASE("class split is disjoint and covers all 40 ids") {
  std::set<int> train(meta_train_classes().begin(), meta_train_classes().end());
  std::set<int> test(meta_test_classes().begin(), meta_test_classes().end());
  CHECK(train.size() == 30);
  CHECK(test.size() == 10);
  for (int id : test) CHECK(train.count(id) == 0);
  std::set<int> all = train;
  all.insert(test.begin(), test.end());
  CHECK(all.size() == kNumGlyphClasses);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == kNumGlyphClasses - 1);
}

TEST_CASE("generate_scene is deterministic and honors counts") {
  SceneConfig cfg;
  const std::vector<int> classes = {3, 17};
  const std::vector<int> counts = {3, 2};
  const Scene a = generate_scene(99, classes, counts, cfg);
  const Scene b = generate_scene(99, classes, counts, cfg);
  CHECK(a == b);

  CHECK(a.labels.size() == 5);
  int c3 = 0, c17 = 0;
  for (const auto& l : a.labels) {
    if (l.cls == 3) ++c3;
    if (l.cls == 17) ++c17;
  }
  CHECK(c3 == 3);
  CHECK(c17 == 2);

  const Scene different = generate_scene(100, classes, counts, cfg);
  CHECK(a.image.rgb != different.image.rgb);
}

TEST_CASE("generate_scene with all-zero counts gives a background-only image") {
  SceneConfig cfg;
  const Scene s = generate_scene(1, {5}, {0}, cfg);
  CHECK(s.labels.empty());
  // Background noise only: all bytes near mid-gray.
  for (auto b : s.image.rgb) {
    CHECK(b >= 115);
    CHECK(b <= 140);
  }
}

TEST_CASE("generate_scene errors when the scene cannot be packed") {
  SceneConfig cfg;
  cfg.height = 32;
  cfg.width = 32;
  cfg.max_objects = 30;
  CHECK_THROWS_AS(generate_scene(1, {0}, {30}, cfg), std::runtime_error);
  CHECK_THROWS_AS(generate_scene(1, {0}, {40}, cfg), std::invalid_argument);  // > max_objects
}

TEST_CASE("annotation points land on their glyph") {
  SceneConfig cfg;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    // One instance of each shape in one color so pixel color identifies it.
    const std::vector<int> classes = {0, 5, 10, 15, 20, 25, 30, 35};
    const std::vector<int> counts(classes.size(), 1);
    SceneConfig wide = cfg;
    wide.height = 128;
    wide.width = 128;
    wide.max_objects = 8;
    const Scene s = generate_scene(seed, classes, counts, wide);
    for (const auto& l : s.labels) {
      const std::uint8_t* px = &s.image.rgb[(static_cast<size_t>(l.y) * wide.width + l.x) * 3];
      // Red channel of the "red" color family (all test classes use color 0).
      CHECK(px[0] == 230);
      CHECK(px[1] == 38);
      CHECK(px[2] == 38);
    }
  }
}

TEST_CASE("sort_labels orders by (y, x) and is stable") {
  std::vector<ScenePointLabel> labels = {{5, 3, 0}, {2, 9, 1}, {2, 1, 2}};
  const auto sorted = sort_labels(labels);
  CHECK(sorted[0] == ScenePointLabel{2, 1, 2});
  CHECK(sorted[1] == ScenePointLabel{2, 9, 1});
  CHECK(sorted[2] == ScenePointLabel{5, 3, 0});

  CHECK(sort_labels({}).empty());

  // Equal coordinates keep input order.
  const auto stable = sort_labels({{1, 1, 7}, {1, 1, 8}, {0, 0, 9}});
  CHECK(stable[0].cls == 9);
  CHECK(stable[1].cls == 7);
  CHECK(stable[2].cls == 8);
}

TEST_CASE("sample_task respects the split, shot range and label order") {
  SceneConfig cfg;
  Rng rng(2024);
  const std::set<int> test_ids(meta_test_classes().begin(), meta_test_classes().end());

  int shots_hist[6] = {0};
  for (int i = 0; i < 1000; ++i) {
    const EpisodeTask task = sample_task(rng, Split::meta_test, cfg);
    CHECK(task.ways() >= cfg.ways_min);
    CHECK(task.ways() <= cfg.ways_max);
    CHECK(task.shots() >= cfg.shots_min);
    CHECK(task.shots() <= cfg.shots_max);
    ++shots_hist[task.shots()];
    for (int id : task.class_ids) CHECK(test_ids.count(id) == 1);

    // Query labels: local classes, sorted, within count bounds.
    const auto n_q = static_cast<int>(task.query.labels.size());
    CHECK(n_q >= task.ways() * cfg.count_min);
    CHECK(n_q <= task.ways() * cfg.count_max);
    CHECK(task.query.labels == sort_labels(task.query.labels));
    for (const auto& l : task.query.labels) {
      CHECK(l.cls >= 0);
      CHECK(l.cls < task.ways());
    }
    // Every class has support instances.
    std::vector<int> support_count(task.ways(), 0);
    for (const auto& s : task.support)
      for (const auto& l : s.labels) ++support_count[l.cls];
    for (int c = 0; c < task.ways(); ++c) CHECK(support_count[c] >= 1);
  }
  // Uniform over {3,4,5}: each bucket far above the p>=0.999 floor of 200.
  CHECK(shots_hist[3] >= 200);
  CHECK(shots_hist[4] >= 200);
  CHECK(shots_hist[5] >= 200);
}

TEST_CASE("episode files round trip bit-exactly") {
  SceneConfig cfg;
  Rng rng(7);
  std::vector<EpisodeTask> tasks;
  for (int i = 0; i < 10; ++i)
    tasks.push_back(sample_task(rng, i % 2 ? Split::meta_train : Split::meta_test, cfg));

  const std::string path = temp_path("episodes");
  write_episodes(path, tasks);
  const auto loaded = read_episodes(path);
  CHECK(loaded == tasks);

  // Empty list is a valid file.
  const std::string empty_path = temp_path("empty");
  write_episodes(empty_path, {});
  CHECK(read_episodes(empty_path).empty());

  // Truncation is reported with an offset.
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(read_episodes(path), std::runtime_error);

  // Bad magic is reported at offset 0.
  {
    std::ofstream out(empty_path, std::ios::binary | std::ios::trunc);
    out << "NOPE\x01\x00";
  }
  try {
    read_episodes(empty_path);
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
  }
  std::remove(path.c_str());
  std::remove(empty_path.c_str());
}

TEST_CASE("dataset-wide split hygiene") {
  SceneConfig cfg;
  Rng train_rng(11), test_rng(12);
  std::set<int> train_seen, test_seen;
  for (int i = 0; i < 50; ++i) {
    for (int id : sample_task(train_rng, Split::meta_train, cfg).class_ids) train_seen.insert(id);
    for (int id : sample_task(test_rng, Split::meta_test, cfg).class_ids) test_seen.insert(id);
  }
  for (int id : test_seen) CHECK(train_seen.count(id) == 0);
}

TEST_CASE("run config parses, echoes, and rejects unknown keys") {
  RunConfig def;
  CHECK(def.train.lr0 == 4e-5);
  CHECK(def.train.plateau_window == 40);
  CHECK(def.train.episodes_per_epoch == 100);
  CHECK(def.train.sigma == 8.0);
  CHECK(def.scene.shots_min == 3);
  CHECK(def.scene.shots_max == 5);

  const RunConfig cfg = RunConfig::parse("sigma = 4\nepochs=7\n# comment\nguide=0\n");
  CHECK(cfg.train.sigma == 4.0);
  CHECK(cfg.train.epochs == 7);
  CHECK(!cfg.model.guide);

  // to_text() -> parse() round trip.
  const RunConfig again = RunConfig::parse(cfg.to_text());
  CHECK(again.to_text() == cfg.to_text());

  CHECK_THROWS_WITH_AS(RunConfig::parse("no_such_key=1\n"),
                       doctest::Contains("no_such_key"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::parse("sigma\n"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::parse("epochs=abc\n"), std::invalid_argument);

  setenv("SEQCOUNT_SEED", "4242", 1);
  RunConfig env_cfg;
  env_cfg.apply_env();
  CHECK(env_cfg.train.seed == 4242);
  unsetenv("SEQCOUNT_SEED");
}

TEST_CASE("ppm round trip") {
  SceneConfig cfg;
  const Scene s = generate_scene(5, {1, 2}, {1, 1}, cfg);
  const std::string path = temp_path("ppm");
  write_ppm(path, s.image);
  const Image back = read_ppm(path);
  CHECK(back == s.image);
  std::remove(path.c_str());
}

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqcount/config.hpp"
#include "seqcount/rng.hpp"

namespace seqcount {

struct Image {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> rgb;  // h*w*3, row-major

  bool operator==(const Image&) const = default;
};

// One annotated point: a single pixel on the object, plus its class.
// `cls` is a global glyph id in freshly generated scenes and an
// episode-local index inside an EpisodeTask.
struct ScenePointLabel {
  int y = 0;
  int x = 0;
  int cls = 0;

  bool operator==(const ScenePointLabel&) const = default;
};

struct Scene {
  Image image;
  std::vector<ScenePointLabel> labels;

  bool operator==(const Scene&) const = default;
};

// A C-way S-shot episode: S support scenes, one query scene, and the
// task's global class ids indexed by episode-local class (0..C-1). Labels
// inside the scenes use local indices and are (y,x)-lexicographically
// sorted.
struct EpisodeTask {
  std::vector<int> class_ids;
  std::vector<Scene> support;
  Scene query;

  int ways() const { return static_cast<int>(class_ids.size()); }
  int shots() const { return static_cast<int>(support.size()); }
  bool operator==(const EpisodeTask&) const = default;
};

// 8 glyph shapes x 5 colors = 40 global classes; id = shape*5 + color.
inline constexpr int kNumGlyphClasses = 40;
const std::vector<int>& meta_train_classes();  // 30 ids
const std::vector<int>& meta_test_classes();   // 10 ids, disjoint
std::string glyph_class_name(int global_id);

// Deterministic scene synthesis: glyphs of the requested classes placed
// by rejection sampling on a noisy background, one jittered annotation
// point per glyph (always inside the glyph mask). Identical arguments
// give bit-identical output. Throws if placement fails after 1000
// attempts for an object (scene too crowded) or sum(counts) exceeds
// cfg.max_objects.
Scene generate_scene(std::uint64_t seed, const std::vector<int>& classes,
                     const std::vector<int>& counts, const SceneConfig& cfg);

// Stable (y, then x) ordering.
std::vector<ScenePointLabel> sort_labels(std::vector<ScenePointLabel> labels);

enum class Split { meta_train, meta_test };

EpisodeTask sample_task(Rng& rng, Split split, const SceneConfig& cfg);

// Episode file ("SQEP"): little-endian, version 1. Round trips
// bit-exactly.
void write_episodes(const std::string& path, const std::vector<EpisodeTask>& tasks);
std::vector<EpisodeTask> read_episodes(const std::string& path);

// Binary PPM (P6) image IO for user-supplied counting tasks.
Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& img);

}  // namespace seqcount

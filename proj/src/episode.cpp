#include "seqcount/episode.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "seqcount/wire.hpp"
#include <stdexcept>

namespace seqcount {

namespace {

constexpr int kNumShapes = 8;
constexpr int kNumColors = 5;

const char* kShapeNames[kNumShapes] = {"disk", "square", "triangle", "ring",
                                       "cross", "diamond", "star", "bar"};
const char* kColorNames[kNumColors] = {"red", "green", "blue", "yellow", "magenta"};

const std::uint8_t kColors[kNumColors][3] = {
    {230, 38, 38}, {38, 204, 51}, {51, 77, 230}, {230, 217, 51}, {217, 51, 204}};

// Meta-test ids chosen so every shape and every color still occurs in
// meta-training (unseen shape+color combinations, not unseen primitives).
const int kMetaTest[] = {0, 2, 6, 12, 18, 21, 24, 25, 31, 37};

bool in_meta_test(int id) {
  for (int t : kMetaTest)
    if (t == id) return true;
  return false;
}

// dy, dx relative to the glyph center; r is the glyph radius.
bool glyph_mask(int shape, double dy, double dx, double r) {
  const double d2 = dy * dy + dx * dx;
  switch (shape) {
    case 0: return d2 <= r * r;                                           // disk
    case 1: return std::max(std::abs(dy), std::abs(dx)) <= 0.75 * r;      // square
    case 2: return dy >= -r && dy <= 0.8 * r && std::abs(dx) <= (dy + r) / 1.8;  // triangle
    case 3: return d2 <= r * r && d2 >= 0.16 * r * r;                     // ring
    case 4:                                                               // cross
      return (std::abs(dx) <= 0.3 * r && std::abs(dy) <= r) ||
             (std::abs(dy) <= 0.3 * r && std::abs(dx) <= r);
    case 5: return std::abs(dy) + std::abs(dx) <= r;                      // diamond
    case 6:                                                               // star (4-point)
      return std::abs(dy * dx) <= 0.09 * r * r && std::abs(dy) <= r && std::abs(dx) <= r;
    case 7: return std::abs(dy) <= 0.3 * r && std::abs(dx) <= r;          // bar
  }
  return false;
}

struct Placed {
  int y, x, r, cls;
};

}  // namespace

const std::vector<int>& meta_train_classes() {
  static const std::vector<int> ids = [] {
    std::vector<int> v;
    for (int id = 0; id < kNumGlyphClasses; ++id)
      if (!in_meta_test(id)) v.push_back(id);
    return v;
  }();
  return ids;
}

const std::vector<int>& meta_test_classes() {
  static const std::vector<int> ids(std::begin(kMetaTest), std::end(kMetaTest));
  return ids;
}

std::string glyph_class_name(int global_id) {
  if (global_id < 0 || global_id >= kNumGlyphClasses)
    throw std::invalid_argument("glyph_class_name: bad id " + std::to_string(global_id));
  return std::string(kColorNames[global_id % kNumColors]) + "_" +
         kShapeNames[global_id / kNumColors];
}

std::vector<ScenePointLabel> sort_labels(std::vector<ScenePointLabel> labels) {
  std::stable_sort(labels.begin(), labels.end(),
                   [](const ScenePointLabel& a, const ScenePointLabel& b) {
                     return a.y != b.y ? a.y < b.y : a.x < b.x;
                   });
  return labels;
}

Scene generate_scene(std::uint64_t seed, const std::vector<int>& classes,
                     const std::vector<int>& counts, const SceneConfig& cfg) {
  if (classes.size() != counts.size())
    throw std::invalid_argument("generate_scene: classes/counts size mismatch");
  long total = 0;
  for (int c : counts) {
    if (c < 0) throw std::invalid_argument("generate_scene: negative count");
    total += c;
  }
  if (total > cfg.max_objects)
    throw std::invalid_argument("generate_scene: " + std::to_string(total) +
                                " objects exceed max_objects=" + std::to_string(cfg.max_objects));

  Rng rng(seed);
  Scene scene;
  scene.image.h = cfg.height;
  scene.image.w = cfg.width;
  scene.image.rgb.resize(static_cast<size_t>(cfg.height) * cfg.width * 3);

  // Low-amplitude gray noise background.
  for (auto& b : scene.image.rgb)
    b = static_cast<std::uint8_t>(115 + rng.uniform_int(0, 25));

  const int min_sep = 2 * cfg.radius_max;
  std::vector<Placed> placed;
  for (size_t k = 0; k < classes.size(); ++k) {
    for (int inst = 0; inst < counts[k]; ++inst) {
      const int r = rng.uniform_int(cfg.radius_min, cfg.radius_max);
      bool ok = false;
      for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
        const int cy = rng.uniform_int(r, cfg.height - 1 - r);
        const int cx = rng.uniform_int(r, cfg.width - 1 - r);
        ok = true;
        for (const Placed& p : placed) {
          const long dy = cy - p.y, dx = cx - p.x;
          if (dy * dy + dx * dx < static_cast<long>(min_sep) * min_sep) {
            ok = false;
            break;
          }
        }
        if (ok) placed.push_back({cy, cx, r, classes[k]});
      }
      if (!ok)
        throw std::runtime_error("generate_scene: placement failed after 1000 attempts "
                                 "(scene too crowded: " + std::to_string(total) + " objects)");
    }
  }

  for (const Placed& p : placed) {
    const int shape = p.cls / kNumColors;
    const std::uint8_t* color = kColors[p.cls % kNumColors];
    for (int y = p.y - p.r; y <= p.y + p.r; ++y) {
      for (int x = p.x - p.r; x <= p.x + p.r; ++x) {
        if (y < 0 || y >= cfg.height || x < 0 || x >= cfg.width) continue;
        if (!glyph_mask(shape, y - p.y, x - p.x, p.r)) continue;
        std::uint8_t* px = &scene.image.rgb[(static_cast<size_t>(y) * cfg.width + x) * 3];
        px[0] = color[0];
        px[1] = color[1];
        px[2] = color[2];
      }
    }
    // Annotation point: uniform over mask pixels within r/2 of the
    // center; the whole mask if that set is empty (thin shapes).
    std::vector<std::pair<int, int>> near, all;
    for (int y = p.y - p.r; y <= p.y + p.r; ++y) {
      for (int x = p.x - p.r; x <= p.x + p.r; ++x) {
        if (y < 0 || y >= cfg.height || x < 0 || x >= cfg.width) continue;
        if (!glyph_mask(shape, y - p.y, x - p.x, p.r)) continue;
        all.emplace_back(y, x);
        const long dy = y - p.y, dx = x - p.x;
        if (4 * (dy * dy + dx * dx) <= static_cast<long>(p.r) * p.r) near.emplace_back(y, x);
      }
    }
    const auto& pool = near.empty() ? all : near;
    if (pool.empty()) throw std::runtime_error("generate_scene: glyph rendered no pixels");
    const auto [py, px] = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
    scene.labels.push_back({py, px, p.cls});
  }

  scene.labels = sort_labels(std::move(scene.labels));
  return scene;
}

EpisodeTask sample_task(Rng& rng, Split split, const SceneConfig& cfg) {
  if (cfg.ways_min < 1 || cfg.ways_min > cfg.ways_max || cfg.shots_min < 1 ||
      cfg.shots_min > cfg.shots_max || cfg.count_min < 1 || cfg.count_min > cfg.count_max)
    throw std::invalid_argument("sample_task: empty ways/shots/count range");

  const std::vector<int>& pool =
      split == Split::meta_train ? meta_train_classes() : meta_test_classes();
  if (static_cast<int>(pool.size()) < cfg.ways_max)
    throw std::invalid_argument("sample_task: class pool smaller than ways_max");

  const int ways = rng.uniform_int(cfg.ways_min, cfg.ways_max);
  const int shots = rng.uniform_int(cfg.shots_min, cfg.shots_max);
  if (static_cast<long>(ways) * cfg.count_min > cfg.max_objects)
    throw std::invalid_argument("sample_task: ways*count_min exceeds max_objects");

  // Drawing the classes in random order doubles as the random local-index
  // assignment: local index = position in class_ids.
  std::vector<int> shuffled = pool;
  rng.shuffle(shuffled);
  EpisodeTask task;
  task.class_ids.assign(shuffled.begin(), shuffled.begin() + ways);

  auto draw_counts = [&]() {
    std::vector<int> counts(ways);
    for (;;) {
      long total = 0;
      for (int& c : counts) {
        c = rng.uniform_int(cfg.count_min, cfg.count_max);
        total += c;
      }
      if (total <= cfg.max_objects) return counts;
    }
  };
  auto to_local = [&](Scene s) {
    for (auto& l : s.labels) {
      const auto it = std::find(task.class_ids.begin(), task.class_ids.end(), l.cls);
      l.cls = static_cast<int>(it - task.class_ids.begin());
    }
    return s;
  };

  // Rejection placement can fail near the packing limit; redraw counts
  // and seed a bounded number of times (still deterministic).
  auto make_scene = [&]() {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const std::uint64_t seed = rng.next_u64();
      const auto counts = draw_counts();
      try {
        return generate_scene(seed, task.class_ids, counts, cfg);
      } catch (const std::runtime_error&) {
        if (attempt == 19) throw;
      }
    }
    throw std::runtime_error("sample_task: unreachable");
  };
  for (int s = 0; s < shots; ++s) task.support.push_back(to_local(make_scene()));
  task.query = to_local(make_scene());
  return task;
}

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'E', 'P'};
constexpr std::uint16_t kVersion = 1;

using wire::Reader;
using wire::Writer;

void write_scene(Writer& w, const Scene& s) {
  w.u16(static_cast<std::uint16_t>(s.image.h));
  w.u16(static_cast<std::uint16_t>(s.image.w));
  w.bytes(s.image.rgb.data(), s.image.rgb.size());
  w.u32(static_cast<std::uint32_t>(s.labels.size()));
  for (const auto& l : s.labels) {
    w.u16(static_cast<std::uint16_t>(l.y));
    w.u16(static_cast<std::uint16_t>(l.x));
    w.u8(static_cast<std::uint8_t>(l.cls));
  }
}

Scene read_scene(Reader& r) {
  Scene s;
  s.image.h = r.u16();
  s.image.w = r.u16();
  if (s.image.h == 0 || s.image.w == 0)
    throw std::runtime_error("read_episodes: zero image size at offset " + std::to_string(r.offset()));
  s.image.rgb.resize(static_cast<size_t>(s.image.h) * s.image.w * 3);
  r.bytes(s.image.rgb.data(), s.image.rgb.size());
  const std::uint32_t n = r.u32();
  s.labels.resize(n);
  for (auto& l : s.labels) {
    l.y = r.u16();
    l.x = r.u16();
    l.cls = r.u8();
  }
  return s;
}

}  // namespace

void write_episodes(const std::string& path, const std::vector<EpisodeTask>& tasks) {
  Writer w(path, "write_episodes");
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(tasks.size()));
  for (const EpisodeTask& t : tasks) {
    w.u16(static_cast<std::uint16_t>(t.ways()));
    w.u16(static_cast<std::uint16_t>(t.shots()));
    // Class ids in ascending order plus the local index of each, so the
    // random local assignment survives the round trip.
    std::vector<int> order(t.class_ids.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return t.class_ids[a] < t.class_ids[b]; });
    for (int local : order) w.u16(static_cast<std::uint16_t>(t.class_ids[local]));
    for (int local : order) w.u8(static_cast<std::uint8_t>(local));
    for (const Scene& s : t.support) write_scene(w, s);
    write_scene(w, t.query);
  }
  w.close_checked();
}

std::vector<EpisodeTask> read_episodes(const std::string& path) {
  Reader r(path, "read_episodes");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("read_episodes: bad magic at offset 0 in '" + path + "'");
  const std::uint16_t version = r.u16();
  if (version != kVersion)
    throw std::runtime_error("read_episodes: unsupported version " + std::to_string(version) +
                             " at offset 4");
  const std::uint32_t count = r.u32();
  std::vector<EpisodeTask> tasks;
  tasks.reserve(count);
  for (std::uint32_t ti = 0; ti < count; ++ti) {
    EpisodeTask t;
    const int ways = r.u16();
    const int shots = r.u16();
    if (ways < 1 || shots < 1)
      throw std::runtime_error("read_episodes: corrupt task header at offset " +
                               std::to_string(r.offset()));
    std::vector<int> sorted_ids(ways);
    for (auto& id : sorted_ids) id = r.u16();
    t.class_ids.assign(ways, 0);
    for (int i = 0; i < ways; ++i) {
      const int local = r.u8();
      if (local < 0 || local >= ways)
        throw std::runtime_error("read_episodes: corrupt local index map at offset " +
                                 std::to_string(r.offset()));
      t.class_ids[local] = sorted_ids[i];
    }
    for (int s = 0; s < shots; ++s) t.support.push_back(read_scene(r));
    t.query = read_scene(r);
    tasks.push_back(std::move(t));
  }
  return tasks;
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open '" + path + "'");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: '" + path + "' is not a binary PPM (P6)");
  auto next_int = [&]() {
    // Skip whitespace and '#' comment lines between header fields.
    for (;;) {
      const int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    int v;
    if (!(in >> v)) throw std::runtime_error("read_ppm: malformed header in '" + path + "'");
    return v;
  };
  Image img;
  img.w = next_int();
  img.h = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw std::runtime_error("read_ppm: only maxval 255 supported");
  in.get();  // single whitespace before pixel data
  img.rgb.resize(static_cast<size_t>(img.h) * img.w * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.rgb.size()))
    throw std::runtime_error("read_ppm: truncated pixel data in '" + path + "'");
  return img;
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open '" + path + "'");
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out.good()) throw std::runtime_error("write_ppm: I/O error writing '" + path + "'");
}

}  // namespace seqcount

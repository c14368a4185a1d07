#pragma once

// Place-recognition datasets: labelled five-frame samples, 7:1:2 splits,
// P x K batch sampling, and a synthetic toy dataset generator.
//
// Dataset root layout:
//   manifest.csv   sample_id,location_label,category,frame_0,...,frame_4,description_file
//   frame files    event files (.csv/.evt) or 16-bit PNG frames, relative to root
//   descriptions   UTF-8 text files, relative to root (column may be empty)

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgvpr/common.hpp"
#include "sgvpr/event_io.hpp"

namespace sgvpr {

inline constexpr int kFramesPerSample = 5;

enum class Category { Campus, Park, Road };

inline std::string to_string(Category c) {
  switch (c) {
    case Category::Campus: return "Campus";
    case Category::Park: return "Park";
    case Category::Road: return "Road";
  }
  return "?";
}

inline std::optional<Category> parse_category(std::string_view s) {
  if (s == "Campus") return Category::Campus;
  if (s == "Park") return Category::Park;
  if (s == "Road") return Category::Road;
  return std::nullopt;
}

struct PlaceSample {
  std::string sample_id;
  std::int64_t location_label = 0;
  Category category = Category::Campus;
  std::array<std::string, kFramesPerSample> frames;  // relative to dataset root
  std::string description_file;                      // relative; may be empty
  std::string description;

  bool operator==(const PlaceSample&) const = default;
};

struct Dataset {
  fs::path root;
  std::vector<PlaceSample> samples;

  fs::path frame_path(const PlaceSample& s, int k) const { return root / s.frames[static_cast<std::size_t>(k)]; }

  const PlaceSample& by_id(const std::string& id) const {
    for (const auto& s : samples)
      if (s.sample_id == id) return s;
    throw DataError(detail::concat("unknown sample id '", id, "'"));
  }
};

inline const char* const kManifestHeader =
    "sample_id,location_label,category,frame_0,frame_1,frame_2,frame_3,frame_4,description_file";

inline Dataset load_dataset(const fs::path& root) {
  const fs::path manifest = root / "manifest.csv";
  std::ifstream in(manifest);
  if (!in) throw DataError(detail::concat("cannot open ", manifest.string()));
  Dataset ds{root, {}};
  std::vector<std::string> errors;
  std::vector<std::string> missing;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    if (!header) {
      if (line != kManifestHeader) throw DataError(detail::concat(manifest.string(), ":", lineno, ": bad header"));
      header = true;
      continue;
    }
    auto f = detail::split_csv_line(line);
    const std::string where = detail::concat("line ", lineno, ": ");
    if (f.size() < 3) {
      errors.push_back(where + "too few columns");
      continue;
    }
    PlaceSample s;
    s.sample_id = f[0];
    if (s.sample_id.empty()) {
      errors.push_back(where + "empty sample_id");
      continue;
    }
    // Frames sit in columns 3..7; the description file is the last column.
    const std::size_t frame_cols = f.size() >= 4 ? f.size() - 4 : 0;
    std::size_t nonempty = 0;
    for (std::size_t c = 3; c + 1 < f.size(); ++c) nonempty += !f[c].empty();
    if (frame_cols != kFramesPerSample || nonempty != kFramesPerSample) {
      errors.push_back(detail::concat(where, "sample '", s.sample_id, "' has ", nonempty, " frames, expected ",
                                      kFramesPerSample));
      continue;
    }
    try {
      std::size_t used = 0;
      s.location_label = std::stoll(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      errors.push_back(detail::concat(where, "bad location_label '", f[1], "'"));
      continue;
    }
    const auto cat = parse_category(f[2]);
    if (!cat) {
      errors.push_back(detail::concat(where, "unknown category '", f[2], "'"));
      continue;
    }
    s.category = *cat;
    for (int k = 0; k < kFramesPerSample; ++k) s.frames[static_cast<std::size_t>(k)] = f[3 + static_cast<std::size_t>(k)];
    s.description_file = f[8];
    if (!seen.insert(s.sample_id).second) {
      errors.push_back(detail::concat(where, "duplicate sample_id '", s.sample_id, "'"));
      continue;
    }
    for (const auto& fr : s.frames)
      if (!fs::exists(root / fr)) missing.push_back(detail::concat(s.sample_id, ": ", (root / fr).string()));
    if (!s.description_file.empty()) {
      const fs::path dp = root / s.description_file;
      if (!fs::exists(dp)) {
        missing.push_back(detail::concat(s.sample_id, ": ", dp.string()));
      } else {
        s.description = detail::read_file_bytes(dp);
        while (!s.description.empty() && (s.description.back() == '\n' || s.description.back() == '\r'))
          s.description.pop_back();
      }
    }
    ds.samples.push_back(std::move(s));
  }
  if (!header) errors.push_back("manifest is empty");
  if (!errors.empty() || !missing.empty()) {
    std::ostringstream msg;
    msg << "dataset " << root.string() << " failed to load";
    for (const auto& e : errors) msg << "\n  " << e;
    for (const auto& m : missing) msg << "\n  missing file " << m;
    throw DataError(msg.str());
  }
  return ds;
}

// Writes manifest.csv and every non-empty description file. Frame files are
// not touched.
inline void save_manifest(const fs::path& root, const std::vector<PlaceSample>& samples) {
  fs::create_directories(root);
  std::ostringstream out;
  out << kManifestHeader << "\n";
  for (const auto& s : samples) {
    out << s.sample_id << ',' << s.location_label << ',' << to_string(s.category);
    for (const auto& f : s.frames) out << ',' << f;
    out << ',' << s.description_file << "\n";
    if (!s.description_file.empty()) {
      const fs::path dp = root / s.description_file;
      fs::create_directories(dp.parent_path());
      detail::write_file_bytes(dp, s.description + "\n");
    }
  }
  detail::write_file_bytes(root / "manifest.csv", out.str());
}

// ---------------------------------------------------------------------------
// Splits

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

enum class SplitGranularity { Sample, Scene };

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

struct SplitSizes {
  std::size_t train, val, test;
};

// Rounded train/val sizes, remainder to test.
inline SplitSizes split_sizes(std::size_t n, const SplitRatios& r) {
  const auto train = static_cast<std::size_t>(std::llround(r.train * static_cast<double>(n)));
  const auto val = static_cast<std::size_t>(std::llround(r.val * static_cast<double>(n)));
  if (train + val > n) throw std::invalid_argument("split ratios overflow the sample count");
  return {train, val, n - train - val};
}

inline DatasetSplit split_dataset(const std::vector<PlaceSample>& samples, const SplitRatios& ratios,
                                  std::uint64_t seed, SplitGranularity granularity = SplitGranularity::Sample) {
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9 || ratios.train < 0 || ratios.val < 0 ||
      ratios.test < 0)
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");
  if (samples.size() < 3) throw std::invalid_argument("split_dataset: need at least 3 samples");
  Rng rng(mix_seed(seed, 0x5911));
  DatasetSplit split;
  if (granularity == SplitGranularity::Sample) {
    std::vector<std::string> ids;
    ids.reserve(samples.size());
    for (const auto& s : samples) ids.push_back(s.sample_id);
    rng.shuffle(ids);
    const auto sz = split_sizes(ids.size(), ratios);
    split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(sz.train));
    split.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(sz.train),
                     ids.begin() + static_cast<std::ptrdiff_t>(sz.train + sz.val));
    split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(sz.train + sz.val), ids.end());
    return split;
  }
  std::map<std::int64_t, std::vector<std::string>> by_label;
  for (const auto& s : samples) by_label[s.location_label].push_back(s.sample_id);
  if (by_label.size() < 3) throw std::invalid_argument("scene-level split needs at least 3 scenes");
  std::vector<std::int64_t> labels;
  for (const auto& [l, _] : by_label) labels.push_back(l);
  rng.shuffle(labels);
  const auto sz = split_sizes(labels.size(), ratios);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& dst = i < sz.train ? split.train : (i < sz.train + sz.val ? split.val : split.test);
    const auto& ids = by_label[labels[i]];
    dst.insert(dst.end(), ids.begin(), ids.end());
  }
  return split;
}

// ---------------------------------------------------------------------------
// P x K batch sampling

struct BatchSpec {
  int labels_per_batch = 4;   // P
  int samples_per_label = 6;  // K

  int batch_size() const { return labels_per_batch * samples_per_label; }
};

// Emits batches of exactly P distinct labels with K instances each. Labels
// are drawn round-robin from a reshuffled queue; instances from a per-label
// reshuffled queue, with replacement only when a label has fewer than K.
class BatchSampler {
 public:
  BatchSampler(const std::vector<std::string>& ids, const std::vector<std::int64_t>& labels, BatchSpec spec,
               std::uint64_t seed)
      : spec_(spec), rng_(mix_seed(seed, 0xba7c)) {
    if (ids.size() != labels.size()) throw std::invalid_argument("BatchSampler: ids/labels size mismatch");
    if (spec.labels_per_batch < 2 || spec.samples_per_label < 2)
      throw std::invalid_argument("BatchSampler: P and K must both be >= 2");
    for (std::size_t i = 0; i < ids.size(); ++i) pools_[labels[i]].ids.push_back(ids[i]);
    if (pools_.size() < 2) throw std::invalid_argument("BatchSampler: need at least 2 labels");
    if (static_cast<int>(pools_.size()) < spec.labels_per_batch)
      throw std::invalid_argument(detail::concat("BatchSampler: ", pools_.size(), " labels < P = ",
                                                 spec.labels_per_batch));
    for (auto& [l, p] : pools_) label_order_.push_back(l);
    n_samples_ = ids.size();
  }

  std::size_t batches_per_epoch() const {
    return std::max<std::size_t>(1, n_samples_ / static_cast<std::size_t>(spec_.batch_size()));
  }

  struct Batch {
    std::vector<std::string> ids;
    std::vector<std::int64_t> labels;
  };

  Batch next() {
    Batch b;
    std::vector<std::int64_t> chosen;
    while (static_cast<int>(chosen.size()) < spec_.labels_per_batch) {
      if (label_cursor_ >= label_queue_.size()) refill_labels();
      const std::int64_t l = label_queue_[label_cursor_++];
      if (std::find(chosen.begin(), chosen.end(), l) != chosen.end()) {
        deferred_.push_back(l);
        continue;
      }
      chosen.push_back(l);
    }
    for (std::int64_t l : chosen) {
      Pool& pool = pools_.at(l);
      const auto k = static_cast<std::size_t>(spec_.samples_per_label);
      if (pool.ids.size() < k) {
        for (std::size_t q = 0; q < k; ++q) {
          b.ids.push_back(pool.ids[static_cast<std::size_t>(rng_.below(pool.ids.size()))]);
          b.labels.push_back(l);
        }
        continue;
      }
      std::vector<std::string> picked;
      while (picked.size() < k) {
        if (pool.cursor >= pool.queue.size()) {
          pool.queue = pool.ids;
          rng_.shuffle(pool.queue);
          pool.cursor = 0;
        }
        const std::string& id = pool.queue[pool.cursor++];
        if (std::find(picked.begin(), picked.end(), id) == picked.end()) picked.push_back(id);
      }
      for (auto& id : picked) {
        b.ids.push_back(std::move(id));
        b.labels.push_back(l);
      }
    }
    return b;
  }

  std::vector<Batch> epoch() {
    std::vector<Batch> out;
    for (std::size_t i = 0; i < batches_per_epoch(); ++i) out.push_back(next());
    return out;
  }

 private:
  struct Pool {
    std::vector<std::string> ids;
    std::vector<std::string> queue;
    std::size_t cursor = 0;
  };

  void refill_labels() {
    std::vector<std::int64_t> fresh = label_order_;
    rng_.shuffle(fresh);
    label_queue_ = std::move(deferred_);
    deferred_.clear();
    label_queue_.insert(label_queue_.end(), fresh.begin(), fresh.end());
    label_cursor_ = 0;
  }

  BatchSpec spec_;
  Rng rng_;
  std::map<std::int64_t, Pool> pools_;
  std::vector<std::int64_t> label_order_;
  std::vector<std::int64_t> label_queue_;
  std::vector<std::int64_t> deferred_;
  std::size_t label_cursor_ = 0;
  std::size_t n_samples_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic toy dataset

struct ToyDatasetSpec {
  int n_labels = 8;
  int samples_per_label = 10;
  Resolution resolution{64, 64};
  std::uint64_t seed = 0;
  std::int64_t window_us = 33000;
};

namespace detail {

struct Primitive {
  enum Kind { Segment, Box, Ring } kind;
  double a, b, c, d;  // segment: x0,y0,x1,y1; box: x0,y0,x1,y1; ring: cx,cy,r,-
};

inline const std::array<const char*, 16> kLandmarks = {
    "tower", "fountain", "gate", "bridge", "statue", "kiosk", "arch", "pillar",
    "bench", "signpost", "tree", "lamppost", "fence", "stairway", "billboard", "dome"};

inline const std::array<const char*, 3> kCategoryPhrases = {
    "among dense campus buildings", "in an open park", "along a city road"};

inline std::vector<Primitive> toy_scene(int label, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5ce0 + static_cast<std::uint64_t>(label)));
  std::vector<Primitive> prims;
  const int count = 4 + static_cast<int>(rng.below(3));
  for (int i = 0; i < count; ++i) {
    const auto kind = static_cast<Primitive::Kind>(rng.below(3));
    switch (kind) {
      case Primitive::Segment:
        prims.push_back({kind, rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9),
                         rng.uniform(0.1, 0.9)});
        break;
      case Primitive::Box: {
        const double x0 = rng.uniform(0.1, 0.6), y0 = rng.uniform(0.1, 0.6);
        prims.push_back({kind, x0, y0, x0 + rng.uniform(0.15, 0.3), y0 + rng.uniform(0.15, 0.3)});
        break;
      }
      case Primitive::Ring:
        prims.push_back({kind, rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), rng.uniform(0.06, 0.18), 0.0});
        break;
    }
  }
  return prims;
}

// Points along the primitive outlines with their unit normals, in
// normalised coordinates.
inline std::vector<std::array<double, 4>> outline_points(const std::vector<Primitive>& prims, double step) {
  std::vector<std::array<double, 4>> pts;
  auto segment = [&](double x0, double y0, double x1, double y1) {
    const double len = std::hypot(x1 - x0, y1 - y0);
    if (len <= 0) return;
    const double nx = -(y1 - y0) / len, ny = (x1 - x0) / len;
    const int n = std::max(1, static_cast<int>(len / step));
    for (int i = 0; i <= n; ++i) {
      const double u = static_cast<double>(i) / n;
      pts.push_back({x0 + u * (x1 - x0), y0 + u * (y1 - y0), nx, ny});
    }
  };
  for (const auto& p : prims) {
    switch (p.kind) {
      case Primitive::Segment: segment(p.a, p.b, p.c, p.d); break;
      case Primitive::Box:
        segment(p.a, p.b, p.c, p.b);
        segment(p.c, p.b, p.c, p.d);
        segment(p.c, p.d, p.a, p.d);
        segment(p.a, p.d, p.a, p.b);
        break;
      case Primitive::Ring: {
        const int n = std::max(8, static_cast<int>(2 * 3.141592653589793 * p.c / step));
        for (int i = 0; i < n; ++i) {
          const double th = 2 * 3.141592653589793 * i / n;
          pts.push_back({p.a + p.c * std::cos(th), p.b + p.c * std::sin(th), std::cos(th), std::sin(th)});
        }
        break;
      }
    }
  }
  return pts;
}

inline std::string toy_description(int label, const std::vector<Primitive>& prims, Rng& rng, std::uint64_t seed) {
  int segs = 0, boxes = 0, rings = 0;
  for (const auto& p : prims) (p.kind == Primitive::Segment ? segs : p.kind == Primitive::Box ? boxes : rings)++;
  Rng lr(mix_seed(seed, 0x7e47 + static_cast<std::uint64_t>(label)));
  const char* l1 = kLandmarks[lr.below(kLandmarks.size())];
  const char* l2 = kLandmarks[lr.below(kLandmarks.size())];
  std::vector<std::string> clauses = {
      detail::concat("a ", l1, " stands ", kCategoryPhrases[static_cast<std::size_t>(label % 3)]),
      detail::concat("a ", l2, " is visible nearby"),
      detail::concat(segs, " straight edges, ", boxes, " rectangular structures and ", rings, " round shapes"),
  };
  rng.shuffle(clauses);
  std::string text = "The scene shows ";
  for (std::size_t i = 0; i < clauses.size(); ++i) text += (i ? "; " : "") + clauses[i];
  return text + ".";
}

}  // namespace detail

// Renders one frame's events: outline points shifted by the viewpoint
// offset and per-frame motion, polarity from the sign of the motion along
// the edge normal, plus uniform background noise.
inline EventStream toy_frame_events(const std::vector<detail::Primitive>& prims, const ToyDatasetSpec& spec,
                                    double off_x, double off_y, double scale, double vx, double vy, int frame,
                                    Rng& rng) {
  const int w = spec.resolution.width, h = spec.resolution.height;
  const double step = 0.5 / std::max(w, h);
  const auto pts = detail::outline_points(prims, step);
  struct Ev {
    std::int64_t t;
    int x, y, p;
  };
  std::vector<Ev> evs;
  const double mx = off_x + vx * frame, my = off_y + vy * frame;
  for (const auto& pt : pts) {
    const double cx = 0.5 + (pt[0] - 0.5) * scale;
    const double cy = 0.5 + (pt[1] - 0.5) * scale;
    const int x = static_cast<int>(std::floor(cx * w + mx));
    const int y = static_cast<int>(std::floor(cy * h + my));
    if (x < 0 || y < 0 || x >= w || y >= h) continue;
    if (rng.uniform() < 0.2) continue;
    const double along = pt[2] * vx + pt[3] * vy;
    int p = along >= 0 ? 1 : -1;
    if (rng.uniform() < 0.1) p = -p;
    const int n = 1 + static_cast<int>(rng.below(2));
    for (int q = 0; q < n; ++q) evs.push_back({static_cast<std::int64_t>(rng.below(spec.window_us)), x, y, p});
  }
  const std::size_t noise = evs.size() / 10;
  for (std::size_t q = 0; q < noise; ++q)
    evs.push_back({static_cast<std::int64_t>(rng.below(spec.window_us)), static_cast<int>(rng.below(w)),
                   static_cast<int>(rng.below(h)), rng.below(2) ? 1 : -1});
  std::stable_sort(evs.begin(), evs.end(), [](const Ev& a, const Ev& b) { return a.t < b.t; });
  EventStream s{spec.resolution, {}};
  s.events.reserve(evs.size());
  for (const auto& e : evs)
    s.events.push_back({e.t, static_cast<std::uint16_t>(e.x), static_cast<std::uint16_t>(e.y),
                        static_cast<std::int8_t>(e.p)});
  return s;
}

// Generates n_labels x samples_per_label samples under `root`. Refuses a
// non-empty target directory unless `force` is set.
inline Dataset synthesize_toy_dataset(const fs::path& root, const ToyDatasetSpec& spec, bool force = false) {
  if (spec.n_labels < 2) throw std::invalid_argument("synthesize_toy_dataset: need at least 2 labels");
  if (spec.samples_per_label < 1) throw std::invalid_argument("synthesize_toy_dataset: need samples");
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force) throw DataError(detail::concat("refusing to overwrite non-empty directory ", root.string()));
    fs::remove_all(root);
  }
  fs::create_directories(root / "frames");
  fs::create_directories(root / "text");
  std::vector<PlaceSample> samples;
  for (int label = 0; label < spec.n_labels; ++label) {
    const auto prims = detail::toy_scene(label, spec.seed);
    for (int i = 0; i < spec.samples_per_label; ++i) {
      Rng rng(mix_seed(spec.seed, (static_cast<std::uint64_t>(label) << 20) + static_cast<std::uint64_t>(i)));
      PlaceSample s;
      char id[32];
      std::snprintf(id, sizeof id, "L%03d_S%03d", label, i);
      s.sample_id = id;
      s.location_label = label;
      s.category = static_cast<Category>(label % 3);
      const double off_x = rng.uniform(-2.0, 2.0), off_y = rng.uniform(-2.0, 2.0);
      const double scale = rng.uniform(0.95, 1.05);
      const double angle = rng.uniform(0.0, 2 * 3.141592653589793);
      const double vx = std::cos(angle) * 0.6, vy = std::sin(angle) * 0.6;
      for (int f = 0; f < kFramesPerSample; ++f) {
        const auto stream = toy_frame_events(prims, spec, off_x, off_y, scale, vx, vy, f, rng);
        const std::string rel = detail::concat("frames/", s.sample_id, "_f", f, ".evt");
        save_event_file(root / rel, stream);
        s.frames[static_cast<std::size_t>(f)] = rel;
      }
      s.description = detail::toy_description(label, prims, rng, spec.seed);
      s.description_file = detail::concat("text/", s.sample_id, ".txt");
      samples.push_back(std::move(s));
    }
  }
  save_manifest(root, samples);
  return Dataset{root, std::move(samples)};
}

}  // namespace sgvpr

#pragma once

// Joint-objective training (Multi-Similarity + gamma * symmetric InfoNCE),
// Adam with coupled weight decay, step learning-rate schedule,
// validation-driven checkpointing, evaluation and ablation sweeps.

#include <cmath>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgvpr/config.hpp"
#include "sgvpr/losses.hpp"
#include "sgvpr/model.hpp"
#include "sgvpr/retrieval.hpp"

namespace sgvpr {

// ---------------------------------------------------------------------------
// Backends and model from configuration

inline std::shared_ptr<VisualBackend> make_visual_backend(const PipelineConfig& c) {
  if (c.visual_backend == "toy")
    return std::make_shared<ToyVisualBackend>(c.image_side, c.patch_size, c.visual_dim, mix_seed(c.backend_seed, 1));
  throw ConfigError("backend.visual: unknown backend '" + c.visual_backend + "' (available: toy)");
}

inline std::shared_ptr<TextBackend> make_text_backend(const PipelineConfig& c) {
  if (c.text_backend == "toy")
    return std::make_shared<ToyTextBackend>(c.text_dim, c.token_length, mix_seed(c.backend_seed, 2));
  throw ConfigError("backend.text: unknown backend '" + c.text_backend + "' (available: toy)");
}

inline SgVprModel build_model(const PipelineConfig& c) {
  ModelOptions o;
  o.shared_dim = c.shared_dim;
  o.rho = c.rho;
  o.alpha_init = c.alpha_init;
  o.gem_p = c.gem_p;
  o.learnable_p = c.learnable_p;
  o.mode = c.mode;
  o.clip_percentile = c.clip_percentile;
  o.seed = c.seed;
  SgVprModel model(make_visual_backend(c), make_text_backend(c), o);
  model.visual().set_trainable(c.trainable);
  return model;
}

// ---------------------------------------------------------------------------
// Sample cache. Images are always kept; native encodings are only reused
// while the visual backbone is frozen.

struct EncodedSample {
  const PlaceSample* sample = nullptr;
  std::array<ImageTensor, kFramesPerSample> images;
  std::array<VisualEncoding, kFramesPerSample> natives;
  TextEncoding text;
};

class SampleStore {
 public:
  SampleStore(const Dataset& ds, const SgVprModel& model) : ds_(&ds) {
    for (const auto& s : ds.samples) {
      EncodedSample e;
      e.sample = &s;
      for (int k = 0; k < kFramesPerSample; ++k) {
        e.images[k] = model.prepare(load_frame_file(ds.frame_path(s, k)));
        e.natives[k] = model.encode_image(e.images[k]);
      }
      e.text = model.encode_text(s.description);
      by_id_.emplace(s.sample_id, std::move(e));
    }
  }

  const EncodedSample& at(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw DataError("unknown sample id '" + id + "'");
    return it->second;
  }

  // Re-encodes the frames when the backbone is trainable.
  SampleForward forward(const SgVprModel& model, const std::string& id) const {
    const EncodedSample& e = at(id);
    if (!model.visual().trainable()) return model.forward_sample(e.natives, e.text);
    std::array<VisualEncoding, kFramesPerSample> fresh;
    for (int k = 0; k < kFramesPerSample; ++k) fresh[k] = model.encode_image(e.images[k]);
    return model.forward_sample(fresh, e.text);
  }

  const Dataset& dataset() const { return *ds_; }

 private:
  const Dataset* ds_;
  std::unordered_map<std::string, EncodedSample> by_id_;
};

// ---------------------------------------------------------------------------
// Optimiser

// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  explicit Adam(Eigen::Index n, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(Vec::Zero(n)), v_(Vec::Zero(n)), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(Vec& params, Vec grad, double lr) {
    ++t_;
    grad += wd_ * params;
    m_ = b1_ * m_ + (1 - b1_) * grad;
    v_ = b2_ * v_ + (1 - b2_) * grad.cwiseAbs2();
    const double c1 = 1 - std::pow(b1_, t_);
    const double c2 = 1 - std::pow(b2_, t_);
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

  int steps() const { return t_; }

 private:
  Vec m_, v_;
  double wd_, b1_, b2_, eps_;
  int t_ = 0;
};

// lr(e) = lr0 * gamma^floor(e / step), epochs counted from 0.
inline double step_lr(double lr0, int epoch, int step, double gamma) {
  return lr0 * std::pow(gamma, epoch / step);
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Binary layout (little-endian): "SGCK", u32 version, u64 config hash,
// i32 epoch, f64 best val R@1, u32 config length, canonical config text,
// u64 parameter count, f64 parameters.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t config_hash = 0;
  int epoch = -1;
  double best_val_recall1 = 0.0;
  std::string config_text;
  Vec params;

  bool operator==(const Checkpoint& o) const {
    return config_hash == o.config_hash && epoch == o.epoch &&
           std::memcmp(&best_val_recall1, &o.best_val_recall1, sizeof(double)) == 0 && config_text == o.config_text &&
           params.size() == o.params.size() &&
           std::memcmp(params.data(), o.params.data(), sizeof(double) * static_cast<std::size_t>(params.size())) == 0;
  }
};

inline std::string encode_checkpoint(const Checkpoint& c) {
  std::string buf = "SGCK";
  auto f64 = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    detail::put_le(buf, bits, 8);
  };
  detail::put_le(buf, kCheckpointVersion, 4);
  detail::put_le(buf, c.config_hash, 8);
  detail::put_le(buf, static_cast<std::uint32_t>(c.epoch), 4);
  f64(c.best_val_recall1);
  detail::put_le(buf, c.config_text.size(), 4);
  buf += c.config_text;
  detail::put_le(buf, static_cast<std::uint64_t>(c.params.size()), 8);
  for (Eigen::Index i = 0; i < c.params.size(); ++i) f64(c.params(i));
  return buf;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 36 || bytes.compare(0, 4, "SGCK") != 0) throw DataError("not an SGCK checkpoint");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t off = 4;
  auto take = [&](int n) {
    if (bytes.size() - off < static_cast<std::size_t>(n)) throw DataError("checkpoint truncated");
    const std::uint64_t v = detail::get_le(p + off, n);
    off += static_cast<std::size_t>(n);
    return v;
  };
  auto f64 = [&] {
    const std::uint64_t bits = take(8);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  };
  const auto version = take(4);
  if (version != kCheckpointVersion) throw DataError(detail::concat("unsupported checkpoint version ", version));
  Checkpoint c;
  c.config_hash = take(8);
  c.epoch = static_cast<std::int32_t>(static_cast<std::uint32_t>(take(4)));
  c.best_val_recall1 = f64();
  const auto len = static_cast<std::size_t>(take(4));
  if (bytes.size() - off < len) throw DataError("checkpoint truncated");
  c.config_text = bytes.substr(off, len);
  off += len;
  const auto n = take(8);
  if ((bytes.size() - off) / 8 != n || (bytes.size() - off) % 8 != 0) throw DataError("checkpoint parameter size mismatch");
  c.params.resize(static_cast<Eigen::Index>(n));
  for (std::uint64_t i = 0; i < n; ++i) c.params(static_cast<Eigen::Index>(i)) = f64();
  return c;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& c) { detail::write_file_bytes(path, encode_checkpoint(c)); }

inline Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(detail::read_file_bytes(path)); }

// Rebuilds the model a checkpoint was trained with.
inline SgVprModel model_from_checkpoint(const Checkpoint& ck) {
  const PipelineConfig c = parse_config_text(ck.config_text);
  if (config_hash(c) != ck.config_hash) throw DataError("checkpoint config hash does not match its config text");
  SgVprModel model = build_model(c);
  model.unflatten(ck.params);
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalProtocol {
  std::vector<std::string> database{"train", "val"};
  std::vector<std::string> queries{"test"};
  bool exclude_self = true;
};

inline std::vector<std::string> parse_split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + "+") {
    if (c == '+' || c == ',') {
      const auto t = detail::trim(cur);
      if (!t.empty()) {
        if (t != "train" && t != "val" && t != "test" && t != "all")
          throw ConfigError("unknown split '" + t + "' (expected train, val, test or all)");
        out.push_back(t);
      }
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (out.empty()) throw ConfigError("empty split list");
  return out;
}

inline EvalProtocol protocol_from_config(const PipelineConfig& c) {
  return {parse_split_list(c.database), parse_split_list(c.queries), c.exclude_self};
}

inline std::vector<std::string> ids_of(const DatasetSplit& split, const Dataset& ds, const std::vector<std::string>& names) {
  std::vector<std::string> ids;
  for (const auto& n : names) {
    if (n == "all") {
      for (const auto& s : ds.samples) ids.push_back(s.sample_id);
      continue;
    }
    const auto& src = n == "train" ? split.train : n == "val" ? split.val : split.test;
    ids.insert(ids.end(), src.begin(), src.end());
  }
  return ids;
}

inline std::vector<IndexEntry> describe_ids(const SgVprModel& model, const SampleStore& store,
                                            const std::vector<std::string>& ids) {
  std::vector<IndexEntry> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const SampleForward f = store.forward(model, id);
    out.push_back({id, store.at(id).sample->location_label, f.descriptor});
  }
  return out;
}

inline RecallReport evaluate_ids(const SgVprModel& model, const SampleStore& store,
                                 const std::vector<std::string>& database_ids, const std::vector<std::string>& query_ids,
                                 bool exclude_self, const std::vector<int>& ns = kDefaultRecallNs) {
  const DescriptorIndex index = build_index(describe_ids(model, store, database_ids));
  std::vector<Query> queries;
  for (const auto& e : describe_ids(model, store, query_ids))
    queries.push_back({e.id, e.label, to_string(store.at(e.id).sample->category), e.descriptor});
  return recall_at_n(index, queries, ns, exclude_self);
}

inline RecallReport evaluate(const SgVprModel& model, const SampleStore& store, const DatasetSplit& split,
                             const EvalProtocol& protocol) {
  const Dataset& ds = store.dataset();
  return evaluate_ids(model, store, ids_of(split, ds, protocol.database), ids_of(split, ds, protocol.queries),
                      protocol.exclude_self);
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  double val_recall1 = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> history;
  std::vector<double> batch_losses;
};

using TrainLogger = std::function<void(const EpochLog&)>;

inline DatasetSplit split_from_config(const Dataset& ds, const PipelineConfig& c) {
  return split_dataset(ds.samples, c.ratios, c.split_seed, c.split_granularity);
}

// Trains the head (and the backbone if configured trainable). The returned
// checkpoint holds the epoch with the best validation Recall@1 (validation
// queries against the training database).
inline TrainResult train(SgVprModel& model, const SampleStore& store, const DatasetSplit& split, const PipelineConfig& c,
                         const TrainLogger& log = {}) {
  validate_config(c);
  if (split.val.empty()) throw DataError("training needs a non-empty validation split");
  std::vector<std::int64_t> train_labels;
  for (const auto& id : split.train) train_labels.push_back(store.at(id).sample->location_label);
  BatchSampler sampler(split.train, train_labels, BatchSpec{c.batch_p, c.batch_k}, c.seed);

  Vec params = model.flatten();
  Adam adam(params.size(), c.weight_decay);
  const std::string config_text = canonical_config_text(c);
  TrainResult result;
  result.best.config_hash = config_hash(c);
  result.best.config_text = config_text;
  bool have_best = false;

  for (int epoch = 0; epoch < c.epochs; ++epoch) {
    const double lr = step_lr(c.lr, epoch, c.sched_step, c.sched_gamma);
    double loss_sum = 0.0;
    const auto batches = sampler.epoch();
    for (const auto& batch : batches) {
      const auto b = static_cast<Eigen::Index>(batch.ids.size());
      std::vector<SampleForward> fw;
      fw.reserve(batch.ids.size());
      Mat desc(b, model.descriptor_dim());
      Mat vtok(b, c.shared_dim), ttok(b, c.shared_dim);
      for (Eigen::Index i = 0; i < b; ++i) {
        fw.push_back(store.forward(model, batch.ids[static_cast<std::size_t>(i)]));
        desc.row(i) = fw.back().descriptor.transpose();
        vtok.row(i) = fw.back().visual_token.transpose();
        ttok.row(i) = fw.back().text_proj.sentence.transpose();
      }
      const LossWithGrad ms = ms_loss(desc, batch.labels, c.ms);
      const InfoNceResult con = infonce_loss(vtok, ttok, c.contrastive.tau);
      const double loss = total_loss(ms.value, con.value, c.contrastive.gamma);
      if (!std::isfinite(loss)) {
        std::string ids;
        for (const auto& id : batch.ids) ids += " " + id;
        throw NumericalError(detail::concat("non-finite loss at epoch ", epoch, "; batch:", ids));
      }
      loss_sum += loss;
      result.batch_losses.push_back(loss);

      HeadGrads g = model.zero_grads();
      const double gamma = c.contrastive.gamma;
      for (Eigen::Index i = 0; i < b; ++i) {
        const auto& enc = store.at(batch.ids[static_cast<std::size_t>(i)]);
        model.backward_sample(fw[static_cast<std::size_t>(i)], ms.grad.row(i).transpose(),
                              gamma * con.grad_v.row(i).transpose(), gamma * con.grad_t.row(i).transpose(), g,
                              &enc.images);
      }
      Vec grad = model.flatten(g);
      if (!grad.allFinite()) throw NumericalError(detail::concat("non-finite gradient at epoch ", epoch));
      adam.step(params, grad, lr);
      model.unflatten(params);
    }

    const RecallReport val = evaluate_ids(model, store, split.train, split.val, true, {1});
    EpochLog entry{epoch, lr, loss_sum / static_cast<double>(batches.size()), val.recall_at.at(1)};
    result.history.push_back(entry);
    if (log) log(entry);
    if (!have_best || entry.val_recall1 > result.best.best_val_recall1) {
      have_best = true;
      result.best.epoch = epoch;
      result.best.best_val_recall1 = entry.val_recall1;
      result.best.params = params;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Ablation

enum class AblationAxis { Rho, Gamma, FusionMode };

inline std::optional<AblationAxis> parse_axis(std::string_view s) {
  if (s == "rho") return AblationAxis::Rho;
  if (s == "gamma") return AblationAxis::Gamma;
  if (s == "fusion_mode") return AblationAxis::FusionMode;
  return std::nullopt;
}

inline const std::vector<double> kRhoGrid = {0.15, 0.20, 0.25, 0.30};
inline const std::vector<double> kGammaGrid = {0.10, 0.15, 0.20, 0.25};
inline const std::vector<FusionMode> kFusionRows = {FusionMode::VisionOnly, FusionMode::GlobalOnly, FusionMode::LocalOnly,
                                                    FusionMode::Full};

struct AblationRow {
  std::string setting;
  double r1 = 0, r5 = 0, r10 = 0;
};

struct AblationTable {
  std::string axis;
  std::vector<AblationRow> rows;

  // Recall columns in percent.
  std::string to_csv() const {
    std::ostringstream out;
    out << axis << ",R@1,R@5,R@10\n";
    out.setf(std::ios::fixed);
    out.precision(2);
    for (const auto& r : rows) {
      const bool quote = r.setting.find(',') != std::string::npos || r.setting.find(' ') != std::string::npos;
      out << (quote ? "\"" + r.setting + "\"" : r.setting) << ',' << 100 * r.r1 << ',' << 100 * r.r5 << ','
          << 100 * r.r10 << "\n";
    }
    return out.str();
  }
};

inline std::string format_setting(double v) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(2);
  o << v;
  return o.str();
}

// Trains and evaluates one configuration per value with a shared seed.
// `values` is ignored for the fusion-mode axis, which always runs the four
// table rows in order.
inline AblationTable ablate(const Dataset& ds, const PipelineConfig& base, AblationAxis axis, std::vector<double> values,
                            const std::function<void(const std::string&)>& progress = {}) {
  AblationTable table;
  std::vector<PipelineConfig> configs;
  std::vector<std::string> settings;
  switch (axis) {
    case AblationAxis::Rho:
      table.axis = "rho";
      if (values.empty()) values = kRhoGrid;
      for (double v : values) {
        if (!(v > 0 && v <= 1)) throw ConfigError(detail::concat("rho value ", v, " outside (0, 1]"));
        PipelineConfig c = base;
        c.rho = v;
        configs.push_back(c);
        settings.push_back(format_setting(v));
      }
      break;
    case AblationAxis::Gamma:
      table.axis = "gamma";
      if (values.empty()) values = kGammaGrid;
      for (double v : values) {
        if (!(v >= 0)) throw ConfigError(detail::concat("gamma value ", v, " is negative"));
        PipelineConfig c = base;
        c.contrastive.gamma = v;
        configs.push_back(c);
        settings.push_back(format_setting(v));
      }
      break;
    case AblationAxis::FusionMode:
      table.axis = "method";
      for (FusionMode m : kFusionRows) {
        PipelineConfig c = base;
        c.mode = m;
        configs.push_back(c);
        settings.push_back(table_label(m));
      }
      break;
  }
  const SgVprModel probe = build_model(base);
  const SampleStore store(ds, probe);
  const DatasetSplit split = split_from_config(ds, base);
  const EvalProtocol protocol = protocol_from_config(base);
  for (std::size_t i = 0; i < configs.size(); ++i) {
    SgVprModel model = build_model(configs[i]);
    const TrainResult tr = train(model, store, split, configs[i]);
    model.unflatten(tr.best.params);
    const RecallReport rep = evaluate(model, store, split, protocol);
    table.rows.push_back({settings[i], rep.recall_at.at(1), rep.recall_at.at(5), rep.recall_at.at(10)});
    if (progress) progress(settings[i]);
  }
  return table;
}

}  // namespace sgvpr

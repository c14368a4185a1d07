#pragma once

// Pipeline configuration: INI-style text with flat sections
//
//   [dataset] [backend] [fusion] [aggregation] [loss] [train] [eval]
//
// Every key is declared once in config_keys(); parsing, overrides
// (`section.key=value`) and the canonical text used for hashing all go
// through that table, so unknown keys are caught in one place.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "sgvpr/common.hpp"
#include "sgvpr/dataset.hpp"
#include "sgvpr/losses.hpp"
#include "sgvpr/model.hpp"

namespace sgvpr {

struct PipelineConfig {
  // [dataset]
  std::string dataset_root;
  std::uint64_t split_seed = 0;
  SplitGranularity split_granularity = SplitGranularity::Sample;
  SplitRatios ratios;
  std::int64_t window_us = kDefaultWindowUs;
  double clip_percentile = kDefaultClipPercentile;

  // [backend]
  std::string visual_backend = "toy";
  std::string text_backend = "toy";
  int shared_dim = 64;
  std::uint64_t backend_seed = 0;
  int image_side = 224;
  int patch_size = 16;
  int visual_dim = 64;
  int text_dim = 64;
  int token_length = 77;
  bool trainable = false;

  // [fusion]
  double rho = 0.25;
  double alpha_init = 0.0;
  FusionMode mode = FusionMode::Full;

  // [aggregation]
  double gem_p = kDefaultGemP;
  bool learnable_p = false;

  // [loss]
  MSParams ms;
  ContrastiveParams contrastive;

  // [train]
  double lr = 1e-4;
  double weight_decay = 1e-3;
  int batch_p = 4;
  int batch_k = 6;
  int sched_step = 3;
  double sched_gamma = 0.5;
  int epochs = 30;
  std::uint64_t seed = 0;
  std::string checkpoint;

  // [eval]
  std::string database = "train+val";
  std::string queries = "test";
  bool exclude_self = true;
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const char* b = s.data();
  const char* e = s.data() + s.size();
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e) throw ConfigError(concat(key, ": cannot parse '", s, "'"));
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(concat(key, ": expected a boolean, got '", s, "'"));
}

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

struct ConfigKey {
  std::string name;  // section.key
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using C = PipelineConfig;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto str = [&](std::string name, std::string C::*m) {
      k.push_back({name, [m](C& c, const std::string& v) { c.*m = v; }, [m](const C& c) { return c.*m; }});
    };
    auto dbl = [&](std::string name, auto getter) {
      k.push_back({name, [name, getter](C& c, const std::string& v) { getter(c) = detail::parse_number<double>(name, v); },
                   [getter](const C& c) { return detail::format_double(getter(const_cast<C&>(c))); }});
    };
    auto num = [&](std::string name, auto getter) {
      using T = std::remove_reference_t<decltype(getter(std::declval<C&>()))>;
      k.push_back({name, [name, getter](C& c, const std::string& v) { getter(c) = detail::parse_number<T>(name, v); },
                   [getter](const C& c) { return std::to_string(getter(const_cast<C&>(c))); }});
    };
    auto flag = [&](std::string name, bool C::*m) {
      k.push_back({name, [name, m](C& c, const std::string& v) { c.*m = detail::parse_bool(name, v); },
                   [m](const C& c) { return std::string(c.*m ? "true" : "false"); }});
    };

    str("dataset.root", &C::dataset_root);
    num("dataset.split_seed", [](C& c) -> std::uint64_t& { return c.split_seed; });
    k.push_back({"dataset.split_granularity",
                 [](C& c, const std::string& v) {
                   if (v == "sample") c.split_granularity = SplitGranularity::Sample;
                   else if (v == "scene") c.split_granularity = SplitGranularity::Scene;
                   else throw ConfigError("dataset.split_granularity: expected sample|scene, got '" + v + "'");
                 },
                 [](const C& c) { return std::string(c.split_granularity == SplitGranularity::Sample ? "sample" : "scene"); }});
    dbl("dataset.train_ratio", [](C& c) -> double& { return c.ratios.train; });
    dbl("dataset.val_ratio", [](C& c) -> double& { return c.ratios.val; });
    dbl("dataset.test_ratio", [](C& c) -> double& { return c.ratios.test; });
    num("dataset.window_us", [](C& c) -> std::int64_t& { return c.window_us; });
    dbl("dataset.clip_percentile", [](C& c) -> double& { return c.clip_percentile; });

    str("backend.visual", &C::visual_backend);
    str("backend.text", &C::text_backend);
    num("backend.shared_dim", [](C& c) -> int& { return c.shared_dim; });
    num("backend.seed", [](C& c) -> std::uint64_t& { return c.backend_seed; });
    num("backend.image_side", [](C& c) -> int& { return c.image_side; });
    num("backend.patch_size", [](C& c) -> int& { return c.patch_size; });
    num("backend.visual_dim", [](C& c) -> int& { return c.visual_dim; });
    num("backend.text_dim", [](C& c) -> int& { return c.text_dim; });
    num("backend.token_length", [](C& c) -> int& { return c.token_length; });
    flag("backend.trainable", &C::trainable);

    dbl("fusion.rho", [](C& c) -> double& { return c.rho; });
    dbl("fusion.alpha_init", [](C& c) -> double& { return c.alpha_init; });
    k.push_back({"fusion.mode",
                 [](C& c, const std::string& v) {
                   const auto m = parse_fusion_mode(v);
                   if (!m) throw ConfigError("fusion.mode: expected vision_only|global|local|full, got '" + v + "'");
                   c.mode = *m;
                 },
                 [](const C& c) { return to_string(c.mode); }});

    dbl("aggregation.gem_p", [](C& c) -> double& { return c.gem_p; });
    flag("aggregation.learnable_p", &C::learnable_p);

    dbl("loss.ms_alpha", [](C& c) -> double& { return c.ms.alpha; });
    dbl("loss.ms_beta", [](C& c) -> double& { return c.ms.beta; });
    dbl("loss.ms_lambda", [](C& c) -> double& { return c.ms.lambda; });
    dbl("loss.tau", [](C& c) -> double& { return c.contrastive.tau; });
    dbl("loss.gamma", [](C& c) -> double& { return c.contrastive.gamma; });

    dbl("train.lr", [](C& c) -> double& { return c.lr; });
    dbl("train.weight_decay", [](C& c) -> double& { return c.weight_decay; });
    num("train.batch_p", [](C& c) -> int& { return c.batch_p; });
    num("train.batch_k", [](C& c) -> int& { return c.batch_k; });
    num("train.sched_step", [](C& c) -> int& { return c.sched_step; });
    dbl("train.sched_gamma", [](C& c) -> double& { return c.sched_gamma; });
    num("train.epochs", [](C& c) -> int& { return c.epochs; });
    num("train.seed", [](C& c) -> std::uint64_t& { return c.seed; });
    str("train.checkpoint", &C::checkpoint);

    str("eval.database", &C::database);
    str("eval.queries", &C::queries);
    flag("eval.exclude_self", &C::exclude_self);
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_config_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

inline void validate_config(const PipelineConfig& c) {
  std::vector<std::string> bad;
  auto need = [&](bool ok, const char* what) {
    if (!ok) bad.emplace_back(what);
  };
  need(c.window_us > 0, "dataset.window_us must be > 0");
  need(c.clip_percentile > 0 && c.clip_percentile <= 1, "dataset.clip_percentile must be in (0, 1]");
  need(std::abs(c.ratios.train + c.ratios.val + c.ratios.test - 1.0) < 1e-9, "dataset ratios must sum to 1");
  need(c.shared_dim > 0, "backend.shared_dim must be > 0");
  need(c.image_side > 0 && c.patch_size > 0 && c.image_side % c.patch_size == 0,
       "backend.image_side must be a positive multiple of backend.patch_size");
  need(c.visual_dim > 0 && c.text_dim > 0 && c.token_length > 0, "backend dims must be > 0");
  need(c.rho > 0 && c.rho <= 1, "fusion.rho must be in (0, 1]");
  need(c.gem_p >= 1, "aggregation.gem_p must be >= 1");
  need(c.ms.alpha > 0 && c.ms.beta > 0 && c.ms.lambda > 0, "loss.ms_* must be > 0");
  need(c.contrastive.tau > 0, "loss.tau must be > 0");
  need(c.contrastive.gamma >= 0, "loss.gamma must be >= 0");
  need(c.lr > 0 && c.weight_decay >= 0, "train.lr must be > 0 and train.weight_decay >= 0");
  need(c.batch_p >= 2 && c.batch_k >= 2, "train.batch_p and train.batch_k must be >= 2");
  need(c.sched_step > 0 && c.sched_gamma > 0, "train.sched_step and train.sched_gamma must be > 0");
  need(c.epochs >= 1, "train.epochs must be >= 1");
  if (!bad.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ConfigError(msg);
  }
}

// Applies `section.key=value` assignments; all unknown keys and all bad
// values are reported together.
inline void apply_overrides(PipelineConfig& c, const std::vector<std::string>& assignments) {
  std::vector<std::string> errors;
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) {
      errors.push_back("malformed override '" + a + "' (expected section.key=value)");
      continue;
    }
    const std::string key = detail::trim(a.substr(0, eq));
    const std::string value = detail::trim(a.substr(eq + 1));
    const ConfigKey* k = find_config_key(key);
    if (!k) {
      errors.push_back("unknown key '" + key + "'");
      continue;
    }
    try {
      k->set(c, value);
    } catch (const ConfigError& e) {
      errors.emplace_back(e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration keys:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

inline PipelineConfig parse_config_text(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(detail::concat("config parse error: ", e.message(), " (line ", e.line(), ")"));
  }
  std::vector<std::string> assignments;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      assignments.push_back(section + "=" + body.data());  // key outside a section
      continue;
    }
    for (const auto& [key, value] : body) assignments.push_back(section + "." + key + "=" + value.data());
  }
  PipelineConfig c;
  apply_overrides(c, assignments);
  return c;
}

inline PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& overrides = {}) {
  PipelineConfig c = parse_config_text(detail::read_file_bytes(path));
  apply_overrides(c, overrides);
  validate_config(c);
  return c;
}

// Canonical INI text: every key, declaration order, grouped by section.
inline std::string canonical_config_text(const PipelineConfig& c) {
  std::ostringstream out;
  std::string current;
  for (const auto& k : config_keys()) {
    const auto dot = k.name.find('.');
    const std::string section = k.name.substr(0, dot);
    if (section != current) {
      if (!current.empty()) out << "\n";
      out << "[" << section << "]\n";
      current = section;
    }
    out << k.name.substr(dot + 1) << " = " << k.get(c) << "\n";
  }
  return out.str();
}

// Hash of the model-defining configuration. Dataset location, checkpoint
// path and evaluation protocol do not change the learned parameters and are
// left out.
inline std::uint64_t config_hash(const PipelineConfig& c) {
  PipelineConfig h = c;
  h.dataset_root.clear();
  h.checkpoint.clear();
  h.database.clear();
  h.queries.clear();
  return fnv1a64(canonical_config_text(h));
}

}  // namespace sgvpr

#pragma once

// Command-line front end. run_cli() is the whole program; the executable
// only forwards argv and the standard streams.

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sgvpr/trainer.hpp"

namespace sgvpr {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

namespace cli_detail {

inline fs::path dataset_root(const std::string& flag, const std::string& from_config) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  if (const char* env = std::getenv("EPRBENCH_ROOT"); env && *env) return env;
  throw ConfigError("no dataset root: pass --dataset, set dataset.root or EPRBENCH_ROOT");
}

inline PipelineConfig config_for(const std::string& path, const std::vector<std::string>& overrides,
                                 std::optional<std::uint64_t> seed) {
  PipelineConfig c;
  if (path.empty()) {
    apply_overrides(c, overrides);
  } else {
    c = parse_config_text(detail::read_file_bytes(path));
    apply_overrides(c, overrides);
  }
  if (seed) c.seed = *seed;
  validate_config(c);
  return c;
}

inline void print_report(std::ostream& out, const RecallReport& rep) {
  out << "queries " << rep.query_count << "\n";
  out << std::fixed << std::setprecision(2);
  for (const auto& [n, r] : rep.recall_at) out << "R@" << n << " " << 100 * r << "\n";
  for (const auto& [cat, m] : rep.per_category) {
    out << cat;
    for (const auto& [n, r] : m) out << " R@" << n << "=" << 100 * r;
    out << "\n";
  }
  out << rep.to_json().dump() << "\n";
  out.unsetf(std::ios::floatfield);
}

}  // namespace cli_detail

inline int cmd_convert(const std::string& events, const fs::path& out_dir, std::int64_t dt, int size,
                       std::ostream& out, std::ostream& err) {
  const EventStream stream = load_event_file(events);
  validate_stream(stream);
  const auto slices = slice_stream(stream, dt);
  if (slices.empty()) {
    err << "warning: " << events << " holds no events; nothing written\n";
    return kExitOk;
  }
  fs::create_directories(out_dir);
  const std::string stem = fs::path(events).stem().string();
  for (std::size_t k = 0; k < slices.size(); ++k) {
    EventFrame frame = accumulate_frame(slices[k]);
    if (size > 0 && (frame.values.rows() != size || frame.values.cols() != size)) {
      frame.values = resize_bilinear(frame.values, size, size).array().round().matrix();
      frame.resolution = {size, size};
    }
    const fs::path path = out_dir / (stem + "_" + std::to_string(k) + ".png");
    save_frame_png(path, frame);
    out << path.string() << "\n";
  }
  return kExitOk;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Text-guided event-camera place recognition"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::vector<std::string> overrides;
  std::string config_path, dataset_flag, checkpoint_path, out_path;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* c, bool with_config) {
    c->add_option("--seed", seed, "Seed for all randomness");
    if (with_config) {
      c->add_option("--config", config_path, "INI configuration file");
      c->add_option("--override", overrides, "section.key=value (repeatable)")->take_all();
      c->add_option("--dataset", dataset_flag, "Dataset root (default: dataset.root, then $EPRBENCH_ROOT)");
    }
  };

  auto* convert = app.add_subcommand("convert", "Slice an event file into 16-bit PNG frames");
  std::string events_path;
  std::int64_t dt = kDefaultWindowUs;
  int size = 0;
  convert->add_option("--events", events_path, "Event file (.csv or .evt)")->required();
  convert->add_option("--out", out_path, "Output directory")->required();
  convert->add_option("--dt", dt, "Window length in microseconds")->check(CLI::PositiveNumber);
  convert->add_option("--size", size, "Resample frames to SxS (default: sensor size)")->check(CLI::PositiveNumber);
  common(convert, false);

  auto* synth = app.add_subcommand("synth", "Write a synthetic toy dataset");
  ToyDatasetSpec toy;
  bool force = false;
  synth->add_option("--out", out_path, "Dataset root to create")->required();
  synth->add_option("--labels", toy.n_labels, "Number of places")->check(CLI::Range(2, 100000));
  synth->add_option("--samples", toy.samples_per_label, "Samples per place")->check(CLI::PositiveNumber);
  synth->add_option("--width", toy.resolution.width, "Sensor width")->check(CLI::Range(8, 4096));
  synth->add_option("--height", toy.resolution.height, "Sensor height")->check(CLI::Range(8, 4096));
  synth->add_flag("--force", force, "Replace a non-empty directory");
  common(synth, false);

  auto* train_cmd = app.add_subcommand("train", "Train and write the best checkpoint");
  common(train_cmd, true);
  train_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint output (default: train.checkpoint)");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and print Recall@N");
  common(eval_cmd, true);
  eval_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint (default: train.checkpoint)");

  auto* index_cmd = app.add_subcommand("index", "Describe every dataset sample into a DSC0 file");
  index_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint")->required();
  index_cmd->add_option("--dataset", dataset_flag, "Dataset root (default: $EPRBENCH_ROOT)");
  index_cmd->add_option("--out", out_path, "DSC0 output file")->required();
  common(index_cmd, false);

  auto* query_cmd = app.add_subcommand("query", "Rank database entries for one sample");
  std::string index_path, sample_id, text;
  std::vector<std::string> frames;
  std::size_t topn = 10;
  bool keep_self = false;
  query_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint")->required();
  query_cmd->add_option("--dataset", dataset_flag, "Dataset root (default: $EPRBENCH_ROOT)");
  query_cmd->add_option("--index", index_path, "DSC0 database (default: describe the whole dataset)");
  query_cmd->add_option("--topn", topn, "Number of results")->check(CLI::PositiveNumber);
  auto* by_id = query_cmd->add_option("--sample", sample_id, "Query with a dataset sample");
  auto* by_frames = query_cmd->add_option("--frames", frames, "Five frame files")->expected(kFramesPerSample);
  query_cmd->add_option("--text", text, "Description for --frames");
  query_cmd->add_flag("--keep-self", keep_self, "Do not skip the entry with the query's id");
  by_id->excludes(by_frames);
  common(query_cmd, false);

  auto* ablate_cmd = app.add_subcommand("ablate", "Sweep one setting and write a CSV table");
  std::string axis_name;
  std::vector<double> values;
  common(ablate_cmd, true);
  ablate_cmd->add_option("--axis", axis_name, "rho | gamma | fusion_mode")->required();
  ablate_cmd->add_option("--values", values, "Values to sweep (default: the standard grid)");
  ablate_cmd->add_option("--out", out_path, "CSV output (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*convert) return cmd_convert(events_path, out_path, dt, size, out, err);

    if (*synth) {
      if (seed) toy.seed = *seed;
      const Dataset ds = synthesize_toy_dataset(out_path, toy, force);
      out << "wrote " << ds.samples.size() << " samples to " << out_path << "\n";
      return kExitOk;
    }

    if (*train_cmd) {
      PipelineConfig c = cli_detail::config_for(config_path, overrides, seed);
      const fs::path root = cli_detail::dataset_root(dataset_flag, c.dataset_root);
      const fs::path ck_path = !checkpoint_path.empty() ? fs::path(checkpoint_path) : fs::path(c.checkpoint);
      if (ck_path.empty()) throw ConfigError("no checkpoint path: pass --checkpoint or set train.checkpoint");
      const Dataset ds = load_dataset(root);
      SgVprModel model = build_model(c);
      const SampleStore store(ds, model);
      const DatasetSplit split = split_from_config(ds, c);
      const TrainResult tr = train(model, store, split, c, [&](const EpochLog& e) {
        out << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.mean_loss << " val_R@1 " << e.val_recall1 << "\n";
      });
      if (ck_path.has_parent_path()) fs::create_directories(ck_path.parent_path());
      save_checkpoint(ck_path, tr.best);
      out << "best epoch " << tr.best.epoch << " val_R@1 " << tr.best.best_val_recall1 << " -> " << ck_path.string()
          << "\n";
      return kExitOk;
    }

    if (*eval_cmd) {
      PipelineConfig c = cli_detail::config_for(config_path, overrides, seed);
      const fs::path ck_path = !checkpoint_path.empty() ? fs::path(checkpoint_path) : fs::path(c.checkpoint);
      if (ck_path.empty()) throw ConfigError("no checkpoint: pass --checkpoint or set train.checkpoint");
      const Checkpoint ck = load_checkpoint(ck_path);
      const SgVprModel model = model_from_checkpoint(ck);
      // Splits and protocol come from the evaluation config; the model from the checkpoint.
      const PipelineConfig trained = parse_config_text(ck.config_text);
      if (config_hash(trained) != config_hash(c) && !config_path.empty())
        err << "note: checkpoint was trained with a different configuration\n";
      const Dataset ds = load_dataset(cli_detail::dataset_root(dataset_flag, c.dataset_root));
      const SampleStore store(ds, model);
      const RecallReport rep = evaluate(model, store, split_from_config(ds, c), protocol_from_config(c));
      cli_detail::print_report(out, rep);
      return kExitOk;
    }

    if (*index_cmd) {
      const SgVprModel model = model_from_checkpoint(load_checkpoint(checkpoint_path));
      const Dataset ds = load_dataset(cli_detail::dataset_root(dataset_flag, ""));
      const SampleStore store(ds, model);
      std::vector<std::string> ids;
      for (const auto& s : ds.samples) ids.push_back(s.sample_id);
      const DescriptorIndex index = build_index(describe_ids(model, store, ids));
      save_index(out_path, index);
      out << "indexed " << index.size() << " samples (dim " << index.dim() << ") -> " << out_path << "\n";
      return kExitOk;
    }

    if (*query_cmd) {
      if (sample_id.empty() && frames.empty()) throw ConfigError("query needs --sample or --frames");
      const SgVprModel model = model_from_checkpoint(load_checkpoint(checkpoint_path));
      std::optional<Dataset> ds;
      std::optional<SampleStore> store;
      auto need_store = [&] {
        if (!store) {
          ds = load_dataset(cli_detail::dataset_root(dataset_flag, ""));
          store.emplace(*ds, model);
        }
        return &*store;
      };
      DescriptorIndex index;
      if (!index_path.empty()) {
        index = load_index(index_path);
      } else {
        const SampleStore* st = need_store();
        std::vector<std::string> ids;
        for (const auto& s : ds->samples) ids.push_back(s.sample_id);
        index = build_index(describe_ids(model, *st, ids));
      }
      Vec q;
      if (!sample_id.empty()) {
        q = need_store()->forward(model, sample_id).descriptor;
      } else {
        std::array<ImageTensor, kFramesPerSample> images;
        for (int k = 0; k < kFramesPerSample; ++k) images[k] = model.prepare(load_frame_file(frames[k]));
        q = model.describe_sample(images, text);
      }
      if (q.size() != index.dim())
        throw DataError(detail::concat("checkpoint descriptor dim ", q.size(), " does not match index dim ", index.dim()));
      const std::string* ex = (!keep_self && !sample_id.empty()) ? &sample_id : nullptr;
      out << std::fixed << std::setprecision(6);
      int rank = 1;
      for (const ScoredId& r : query_top_n(index, q, topn, ex))
        out << rank++ << " " << r.id << " " << r.label << " " << r.score << "\n";
      return kExitOk;
    }

    if (*ablate_cmd) {
      PipelineConfig c = cli_detail::config_for(config_path, overrides, seed);
      const auto axis = parse_axis(axis_name);
      if (!axis) throw ConfigError("--axis must be rho, gamma or fusion_mode");
      const Dataset ds = load_dataset(cli_detail::dataset_root(dataset_flag, c.dataset_root));
      const AblationTable table = ablate(ds, c, *axis, values, [&](const std::string& s) { err << "done " << s << "\n"; });
      if (out_path.empty()) {
        out << table.to_csv();
      } else {
        detail::write_file_bytes(out_path, table.to_csv());
        out << "wrote " << out_path << "\n";
      }
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace sgvpr

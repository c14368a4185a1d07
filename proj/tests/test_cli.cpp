#include <gtest/gtest.h>

#include <cstdlib>
#include <iomanip>
#include <sstream>

#include "sgvpr/cli.hpp"
#include "support.hpp"

using namespace sgvpr;

namespace {

struct cli_result {
  int code;
  std::string out, err;
};

cli_result run(std::vector<std::string> args) {
  args.insert(args.begin(), "sgvpr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

const char* kTinyConfig =
    "[backend]\nimage_side = 32\npatch_size = 8\nshared_dim = 16\nvisual_dim = 16\ntext_dim = 16\ntoken_length = 16\n"
    "[train]\nbatch_p = 2\nbatch_k = 3\nepochs = 2\nlr = 0.001\n";

class CliWorld : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test_support::TempDir("cli");
    detail::write_file_bytes(*dir_ / "tiny.ini", kTinyConfig);
    const cli_result s = run({"synth", "--out", (*dir_ / "toy").string(), "--labels", "4", "--samples", "5", "--width", "32",
                       "--height", "32", "--seed", "3"});
    ASSERT_EQ(s.code, 0) << s.err;
    const cli_result t = run({"train", "--config", cfg(), "--dataset", root(), "--checkpoint", ckpt()});
    ASSERT_EQ(t.code, 0) << t.err;
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::string cfg() { return (*dir_ / "tiny.ini").string(); }
  static std::string root() { return (*dir_ / "toy").string(); }
  static std::string ckpt() { return (*dir_ / "run" / "tiny.sgck").string(); }

  static test_support::TempDir* dir_;
};

test_support::TempDir* CliWorld::dir_ = nullptr;

}  // namespace

TEST(cli_convert, one_png_per_window_matching_accumulation) {
  test_support::TempDir dir("convert");
  Rng rng(5);
  EventStream s = test_support::random_stream(rng, 3000, {40, 30}, 3000);
  s.events.front().t = 0;
  s.events.back().t = 2999;
  save_event_file(dir / "rec.csv", s);
  const cli_result r = run({"convert", "--events", (dir / "rec.csv").string(), "--out", (dir / "frames").string(), "--dt",
                     "1000"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto paths = lines(r.out);
  ASSERT_EQ(paths.size(), 3u);
  const auto slices = slice_stream(load_event_file(dir / "rec.csv"), 1000);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(fs::path(paths[k]).filename().string(), "rec_" + std::to_string(k) + ".png");
    const EventFrame png = load_frame_png(paths[k]);
    EXPECT_EQ(png.values, accumulate_frame(slices[k]).values);
  }
}

TEST(cli_convert, empty_stream_warns_and_writes_nothing) {
  test_support::TempDir dir("convert_empty");
  save_event_file(dir / "none.csv", EventStream{{16, 16}, {}});
  const cli_result r = run({"convert", "--events", (dir / "none.csv").string(), "--out", (dir / "frames").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_TRUE(r.out.empty());
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "frames"));
}

TEST_F(CliWorld, train_writes_checkpoint) {
  ASSERT_TRUE(fs::exists(ckpt()));
  const Checkpoint ck = load_checkpoint(ckpt());
  EXPECT_EQ(ck.config_hash, config_hash(load_config(cfg())));
  EXPECT_GE(ck.epoch, 0);
}

TEST_F(CliWorld, eval_output_is_reproducible) {
  const cli_result a = run({"eval", "--config", cfg(), "--dataset", root(), "--checkpoint", ckpt()});
  const cli_result b = run({"eval", "--config", cfg(), "--dataset", root(), "--checkpoint", ckpt()});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const auto ls = lines(a.out);
  ASSERT_GE(ls.size(), 5u);
  EXPECT_EQ(ls[0].rfind("queries ", 0), 0u);
  EXPECT_EQ(ls[1].rfind("R@1 ", 0), 0u);
  const auto j = nlohmann::json::parse(ls.back());
  EXPECT_TRUE(j["recall"].contains("R@10"));
}

TEST_F(CliWorld, index_and_query_agree_with_library) {
  const std::string dsc = (*dir_ / "db.dsc").string();
  const cli_result ix = run({"index", "--checkpoint", ckpt(), "--dataset", root(), "--out", dsc});
  ASSERT_EQ(ix.code, 0) << ix.err;
  const DescriptorIndex index = load_index(dsc);
  EXPECT_EQ(index.size(), 20u);

  const Dataset ds = load_dataset(root());
  const std::string id = ds.samples[7].sample_id;
  const cli_result self = run({"query", "--checkpoint", ckpt(), "--dataset", root(), "--index", dsc, "--sample", id,
                        "--topn", "3", "--keep-self"});
  ASSERT_EQ(self.code, 0) << self.err;
  const auto self_lines = lines(self.out);
  ASSERT_EQ(self_lines.size(), 3u);
  EXPECT_EQ(self_lines[0].rfind("1 " + id + " ", 0), 0u);

  const cli_result q = run({"query", "--checkpoint", ckpt(), "--dataset", root(), "--index", dsc, "--sample", id, "--topn", "5"});
  ASSERT_EQ(q.code, 0) << q.err;
  const SgVprModel model = model_from_checkpoint(load_checkpoint(ckpt()));
  const SampleStore store(ds, model);
  std::ostringstream expect;
  expect << std::fixed << std::setprecision(6);
  int rank = 1;
  for (const auto& r : query_top_n(index, store.forward(model, id).descriptor, 5, &id))
    expect << rank++ << " " << r.id << " " << r.label << " " << r.score << "\n";
  EXPECT_EQ(q.out, expect.str());

  const cli_result direct = run({"query", "--checkpoint", ckpt(), "--dataset", root(), "--sample", id, "--topn", "5"});
  EXPECT_EQ(direct.out, q.out);
}

TEST_F(CliWorld, ablate_writes_four_row_csv) {
  const std::string csv = (*dir_ / "rho.csv").string();
  const cli_result r = run({"ablate", "--config", cfg(), "--dataset", root(), "--axis", "rho", "--override", "train.epochs=1",
                     "--out", csv});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ls = lines(detail::read_file_bytes(csv));
  ASSERT_EQ(ls.size(), 5u);
  EXPECT_EQ(ls[0], "rho,R@1,R@5,R@10");
  EXPECT_EQ(ls[1].rfind("0.15,", 0), 0u);
}

TEST_F(CliWorld, dataset_root_falls_back_to_environment) {
  ::setenv("EPRBENCH_ROOT", root().c_str(), 1);
  const cli_result a = run({"eval", "--config", cfg(), "--checkpoint", ckpt()});
  ::unsetenv("EPRBENCH_ROOT");
  const cli_result b = run({"eval", "--config", cfg(), "--dataset", root(), "--checkpoint", ckpt()});
  EXPECT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const cli_result none = run({"eval", "--config", cfg(), "--checkpoint", ckpt()});
  EXPECT_EQ(none.code, 1);
}

TEST_F(CliWorld, exit_codes_follow_error_kind) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);

  const cli_result bad = run({"train", "--config", cfg(), "--dataset", root(), "--checkpoint", ckpt(), "--override",
                       "fusion.rhoo=1", "train.lr=fast"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("fusion.rhoo"), std::string::npos);
  EXPECT_NE(bad.err.find("train.lr"), std::string::npos);

  EXPECT_EQ(run({"eval", "--config", cfg(), "--dataset", (*dir_ / "missing").string(), "--checkpoint", ckpt()}).code, 2);
  EXPECT_EQ(run({"eval", "--config", cfg(), "--dataset", root(), "--checkpoint", cfg()}).code, 2);

  const cli_result nan = run({"train", "--config", cfg(), "--dataset", root(), "--checkpoint",
                       (*dir_ / "nan.sgck").string(), "--override", "loss.tau=1e-320"});
  EXPECT_EQ(nan.code, 3) << nan.err;
  EXPECT_FALSE(fs::exists(*dir_ / "nan.sgck"));
}

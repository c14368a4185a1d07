#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "sgvpr/common.hpp"
#include "sgvpr/event_repr.hpp"

namespace test_support {

namespace fs = std::filesystem;

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("sgvpr_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// Time-ordered random stream with events spread over `span_us`.
inline sgvpr::EventStream random_stream(sgvpr::Rng& rng, int n, sgvpr::Resolution res, std::int64_t span_us) {
  sgvpr::EventStream s{res, {}};
  std::vector<std::int64_t> ts;
  for (int i = 0; i < n; ++i) ts.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(span_us))));
  std::sort(ts.begin(), ts.end());
  for (int i = 0; i < n; ++i) {
    sgvpr::Event e;
    e.t = ts[static_cast<std::size_t>(i)];
    e.x = static_cast<std::uint16_t>(rng.below(static_cast<std::uint64_t>(res.width)));
    e.y = static_cast<std::uint16_t>(rng.below(static_cast<std::uint64_t>(res.height)));
    e.p = rng.uniform() < 0.5 ? 1 : -1;
    s.events.push_back(e);
  }
  return s;
}

}  // namespace test_support

#pragma once

// Exhaustive cosine retrieval and label-based Recall@N.
//
// DSC0 descriptor file (little-endian):
//   "DSC0", u32 M, u32 d, then M records of
//   u32 id_len, id bytes (utf-8), i64 label, d x f32.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgvpr/common.hpp"
#include "sgvpr/event_io.hpp"

namespace sgvpr {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct IndexEntry {
  std::string id;
  std::int64_t label = 0;
  Vec descriptor;
};

inline constexpr double kIndexNormTolerance = 1e-3;

class DescriptorIndex {
 public:
  DescriptorIndex() = default;

  explicit DescriptorIndex(const std::vector<IndexEntry>& entries) {
    if (entries.empty()) return;
    dim_ = static_cast<int>(entries.front().descriptor.size());
    matrix_.resize(static_cast<Eigen::Index>(entries.size()), dim_);
    for (const IndexEntry& e : entries) {
      if (e.descriptor.size() != dim_)
        throw DataError(detail::concat("descriptor '", e.id, "' has dim ", e.descriptor.size(),
                                       ", index dim is ", dim_));
      const double n = e.descriptor.norm();
      if (!(std::abs(n - 1.0) <= kIndexNormTolerance))
        throw DataError(detail::concat("descriptor '", e.id, "' is not unit norm (", n, ")"));
      append(e.id, e.label, e.descriptor.cast<float>());
    }
  }

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  int dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<std::int64_t>& labels() const { return labels_; }
  const MatF& matrix() const { return matrix_; }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = position_.find(id);
    if (it == position_.end()) return std::nullopt;
    return it->second;
  }

  // Row scores accumulate in double from the stored float rows.
  double score(std::size_t row, const Vec& q) const {
    double s = 0.0;
    for (int d = 0; d < dim_; ++d) s += static_cast<double>(matrix_(static_cast<Eigen::Index>(row), d)) * q(d);
    return s;
  }

  bool operator==(const DescriptorIndex& o) const {
    return ids_ == o.ids_ && labels_ == o.labels_ && dim_ == o.dim_ && matrix_ == o.matrix_;
  }

  // Raw rows, used by the file reader (rows already float).
  static DescriptorIndex from_rows(std::vector<std::string> ids, std::vector<std::int64_t> labels, MatF rows) {
    DescriptorIndex idx;
    idx.dim_ = static_cast<int>(rows.cols());
    idx.matrix_.resize(0, idx.dim_);
    idx.matrix_ = std::move(rows);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!idx.position_.emplace(ids[i], i).second) throw DataError(detail::concat("duplicate id '", ids[i], "'"));
    }
    idx.ids_ = std::move(ids);
    idx.labels_ = std::move(labels);
    return idx;
  }

 private:
  void append(const std::string& id, std::int64_t label, const Eigen::VectorXf& row) {
    if (!position_.emplace(id, ids_.size()).second) throw DataError(detail::concat("duplicate id '", id, "'"));
    matrix_.row(static_cast<Eigen::Index>(ids_.size())) = row.transpose();
    ids_.push_back(id);
    labels_.push_back(label);
  }

  std::vector<std::string> ids_;
  std::vector<std::int64_t> labels_;
  std::unordered_map<std::string, std::size_t> position_;
  MatF matrix_;
  int dim_ = 0;
};

inline DescriptorIndex build_index(const std::vector<IndexEntry>& entries) { return DescriptorIndex(entries); }

struct ScoredId {
  std::string id;
  std::int64_t label = 0;
  double score = 0.0;
  std::size_t row = 0;
};

// Top-n rows by score, descending; ties keep insertion order. Rows whose
// id equals `exclude_id` are skipped.
inline std::vector<ScoredId> query_top_n(const DescriptorIndex& index, const Vec& q, std::size_t n,
                                         const std::string* exclude_id = nullptr) {
  if (index.empty()) throw DataError("query on empty index");
  if (n < 1) throw std::invalid_argument("query_top_n: n must be >= 1");
  if (q.size() != index.dim())
    throw DataError(detail::concat("query dim ", q.size(), " != index dim ", index.dim()));
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (exclude_id && index.ids()[r] == *exclude_id) continue;
    scored.emplace_back(index.score(r, q), r);
  }
  const std::size_t take = std::min(n, scored.size());
  auto better = [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
  std::vector<ScoredId> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t r = scored[i].second;
    out.push_back({index.ids()[r], index.labels()[r], scored[i].first, r});
  }
  return out;
}

struct Query {
  std::string id;  // may be empty; used for self-exclusion
  std::int64_t label = 0;
  std::string category;  // may be empty
  Vec descriptor;
};

struct RecallReport {
  std::map<int, double> recall_at;
  std::map<std::string, std::map<int, double>> per_category;
  std::size_t query_count = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["queries"] = query_count;
    for (const auto& [n, r] : recall_at) j["recall"]["R@" + std::to_string(n)] = r;
    for (const auto& [cat, m] : per_category)
      for (const auto& [n, r] : m) j["per_category"][cat]["R@" + std::to_string(n)] = r;
    return j;
  }
};

inline const std::vector<int> kDefaultRecallNs = {1, 5, 10};

inline RecallReport recall_at_n(const DescriptorIndex& index, const std::vector<Query>& queries,
                                const std::vector<int>& ns = kDefaultRecallNs, bool exclude_self = true) {
  if (queries.empty()) throw std::invalid_argument("recall_at_n: no queries");
  if (ns.empty()) throw std::invalid_argument("recall_at_n: no N values");
  const int max_n = *std::max_element(ns.begin(), ns.end());
  std::map<int, std::size_t> hits;
  std::map<std::string, std::map<int, std::size_t>> cat_hits;
  std::map<std::string, std::size_t> cat_count;
  for (const Query& q : queries) {
    const std::string* ex = (exclude_self && !q.id.empty()) ? &q.id : nullptr;
    const auto top = query_top_n(index, q.descriptor, static_cast<std::size_t>(max_n), ex);
    // First rank (1-based) whose label matches; 0 when none does.
    std::size_t first = 0;
    for (std::size_t r = 0; r < top.size(); ++r)
      if (top[r].label == q.label) {
        first = r + 1;
        break;
      }
    if (!q.category.empty()) ++cat_count[q.category];
    for (int n : ns) {
      const bool hit = first != 0 && first <= static_cast<std::size_t>(n);
      hits[n] += hit;
      if (!q.category.empty()) cat_hits[q.category][n] += hit;
    }
  }
  RecallReport rep;
  rep.query_count = queries.size();
  for (int n : ns) rep.recall_at[n] = static_cast<double>(hits[n]) / static_cast<double>(queries.size());
  for (const auto& [cat, count] : cat_count)
    for (int n : ns) rep.per_category[cat][n] = static_cast<double>(cat_hits[cat][n]) / static_cast<double>(count);
  return rep;
}

// ---------------------------------------------------------------------------
// DSC0 files

inline std::string encode_index(const DescriptorIndex& index) {
  std::string buf = "DSC0";
  detail::put_le(buf, index.size(), 4);
  detail::put_le(buf, static_cast<std::uint64_t>(index.dim()), 4);
  for (std::size_t r = 0; r < index.size(); ++r) {
    const std::string& id = index.ids()[r];
    detail::put_le(buf, id.size(), 4);
    buf += id;
    detail::put_le(buf, static_cast<std::uint64_t>(index.labels()[r]), 8);
    for (int d = 0; d < index.dim(); ++d) {
      std::uint32_t bits;
      const float f = index.matrix()(static_cast<Eigen::Index>(r), d);
      std::memcpy(&bits, &f, sizeof bits);
      detail::put_le(buf, bits, 4);
    }
  }
  return buf;
}

inline DescriptorIndex decode_index(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "DSC0") != 0) throw DataError("not a DSC0 descriptor file");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto m = static_cast<std::size_t>(detail::get_le(p + 4, 4));
  const auto d = static_cast<int>(detail::get_le(p + 8, 4));
  std::size_t off = 12;
  auto need = [&](std::size_t n) {
    if (bytes.size() - off < n) throw DataError("DSC0 file truncated");
  };
  std::vector<std::string> ids;
  std::vector<std::int64_t> labels;
  MatF rows(static_cast<Eigen::Index>(m), d);
  for (std::size_t r = 0; r < m; ++r) {
    need(4);
    const auto len = static_cast<std::size_t>(detail::get_le(p + off, 4));
    off += 4;
    need(len + 8 + 4 * static_cast<std::size_t>(d));
    ids.emplace_back(bytes.substr(off, len));
    off += len;
    labels.push_back(static_cast<std::int64_t>(detail::get_le(p + off, 8)));
    off += 8;
    for (int k = 0; k < d; ++k) {
      const auto bits = static_cast<std::uint32_t>(detail::get_le(p + off, 4));
      float f;
      std::memcpy(&f, &bits, sizeof f);
      rows(static_cast<Eigen::Index>(r), k) = f;
      off += 4;
    }
  }
  if (off != bytes.size()) throw DataError("DSC0 file has trailing bytes");
  return DescriptorIndex::from_rows(std::move(ids), std::move(labels), std::move(rows));
}

inline void save_index(const fs::path& path, const DescriptorIndex& index) {
  detail::write_file_bytes(path, encode_index(index));
}

inline DescriptorIndex load_index(const fs::path& path) { return decode_index(detail::read_file_bytes(path)); }

}  // namespace sgvpr

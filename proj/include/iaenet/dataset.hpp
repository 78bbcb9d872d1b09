// Labeled window datasets and their binary shard / JSON index form.
//
// Shard layout (little-endian):
//   "MUAE" | u32 version | per window: W*D f32 | S f32 | C u8 labels | u64 anchor
// Case membership lives in the index JSON as contiguous runs of windows.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaenet/common.hpp"
#include "iaenet/labels.hpp"
#include "iaenet/preprocess.hpp"
#include "iaenet/schema.hpp"

namespace iaenet {

static_assert(std::endian::native == std::endian::little, "shard I/O assumes a little-endian host");

inline constexpr char kShardMagic[4] = {'M', 'U', 'A', 'E'};
inline constexpr std::uint32_t kShardVersion = 1;

/// Structure-of-arrays window store. Windows of one case are contiguous.
struct Dataset {
  std::size_t w = kWindow, d = kDynamic, s = kStatic, c = kEvents;
  std::vector<float> x_d;               // n * w * d
  std::vector<float> x_s;               // n * s
  std::vector<std::uint8_t> labels;     // n * c
  std::vector<std::uint64_t> anchors;   // n
  std::vector<std::uint32_t> case_of;   // n, index into case_ids
  std::vector<std::string> case_ids;

  std::size_t size() const { return anchors.size(); }
  bool empty() const { return anchors.empty(); }

  std::span<const float> window_x_d(std::size_t i) const { return {x_d.data() + i * w * d, w * d}; }
  std::span<const float> window_x_s(std::size_t i) const { return {x_s.data() + i * s, s}; }
  std::span<const std::uint8_t> window_labels(std::size_t i) const { return {labels.data() + i * c, c}; }
  const std::string& case_id(std::size_t i) const { return case_ids[case_of[i]]; }

  void reserve(std::size_t n) {
    x_d.reserve(n * w * d);
    x_s.reserve(n * s);
    labels.reserve(n * c);
    anchors.reserve(n);
    case_of.reserve(n);
  }

  /// Appends a window; opens a new case run when the case id changes.
  void push(std::span<const float> wx_d, std::span<const float> wx_s,
            std::span<const std::uint8_t> y, std::uint64_t anchor, const std::string& cid) {
    require(wx_d.size() == w * d && wx_s.size() == s && y.size() == c, "dataset: window shape mismatch");
    if (case_ids.empty() || case_ids.back() != cid) case_ids.push_back(cid);
    x_d.insert(x_d.end(), wx_d.begin(), wx_d.end());
    x_s.insert(x_s.end(), wx_s.begin(), wx_s.end());
    labels.insert(labels.end(), y.begin(), y.end());
    anchors.push_back(anchor);
    case_of.push_back(static_cast<std::uint32_t>(case_ids.size() - 1));
  }

  /// Subset by window index, keeping order.
  Dataset select(std::span<const std::size_t> idx) const {
    Dataset out;
    out.w = w; out.d = d; out.s = s; out.c = c;
    out.reserve(idx.size());
    for (std::size_t i : idx)
      out.push(window_x_d(i), window_x_s(i), window_labels(i), anchors[i], case_id(i));
    return out;
  }

  /// Fraction of positive windows per class.
  std::vector<double> positive_rates() const {
    std::vector<double> r(c, 0.0);
    if (empty()) return r;
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t k = 0; k < c; ++k) r[k] += labels[i * c + k];
    for (auto& v : r) v /= static_cast<double>(size());
    return r;
  }

  bool operator==(const Dataset&) const = default;
};

/// Labels and windows processed cases at the given lead time.
inline Dataset build_dataset(std::span<const CaseRecord> cases, const NormStats& stats,
                             std::size_t lead_steps, std::size_t stride_steps = 1,
                             LabelMode mode = {}) {
  Dataset ds;
  std::size_t total = 0;
  for (const auto& rec : cases)
    total += window_count(rec.n_samples(), lead_steps, stride_steps, mode.horizon_samples);
  ds.reserve(total);
  std::vector<float> xd(kWindow * kDynamic);
  for (const auto& rec : cases) {
    const std::size_t n = window_count(rec.n_samples(), lead_steps, stride_steps, mode.horizon_samples);
    const auto statics = NormStats::normalize_statics(rec.statics);
    std::array<float, kStatic> xs{};
    for (std::size_t i = 0; i < kStatic; ++i) xs[i] = static_cast<float>(statics[i]);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t anchor = first_anchor() + k * stride_steps;
      fill_window(rec, stats, anchor, xd);
      const LabelVector y = label_window(rec, anchor, lead_steps, mode);
      ds.push(xd, xs, y.y, anchor, rec.case_id);
    }
  }
  return ds;
}

namespace detail {
template <class T>
void write_pod(std::ostream& os, const T* p, std::size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(sizeof(T) * n));
}
template <class T>
void read_pod(std::istream& is, T* p, std::size_t n) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(sizeof(T) * n));
  if (!is) throw Error("shard: truncated file");
}
}  // namespace detail

inline void write_shard(const std::string& path, const Dataset& ds) {
  require(ds.w == kWindow && ds.d == kDynamic && ds.s == kStatic && ds.c == kEvents,
          "shard: only the standard 15x15 / 5 / 6 layout is serializable");
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "cannot open " + path);
  os.write(kShardMagic, 4);
  detail::write_pod(os, &kShardVersion, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    detail::write_pod(os, ds.window_x_d(i).data(), ds.w * ds.d);
    detail::write_pod(os, ds.window_x_s(i).data(), ds.s);
    detail::write_pod(os, ds.window_labels(i).data(), ds.c);
    detail::write_pod(os, &ds.anchors[i], 1);
  }
  require(static_cast<bool>(os), "write failed: " + path);
}

/// Per-case window runs, as stored in the index JSON.
inline nlohmann::json case_runs(const Dataset& ds) {
  nlohmann::json runs = nlohmann::json::array();
  std::size_t i = 0;
  while (i < ds.size()) {
    std::size_t j = i;
    while (j < ds.size() && ds.case_of[j] == ds.case_of[i]) ++j;
    runs.push_back({{"case_id", ds.case_id(i)}, {"first", i}, {"count", j - i}});
    i = j;
  }
  return runs;
}

/// Reads a shard; `runs` (from the index) restores case ids.
inline Dataset read_shard(const std::string& path, std::size_t window_count_expected,
                          const nlohmann::json& runs) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "cannot open " + path);
  char magic[4];
  detail::read_pod(is, magic, 4);
  require(std::memcmp(magic, kShardMagic, 4) == 0, path + ": bad magic");
  std::uint32_t version = 0;
  detail::read_pod(is, &version, 1);
  require(version == kShardVersion, path + ": unsupported shard version");

  std::vector<std::string> id_of(window_count_expected);
  for (const auto& r : runs) {
    const auto first = r.at("first").get<std::size_t>();
    const auto count = r.at("count").get<std::size_t>();
    require(first + count <= window_count_expected, path + ": index run out of range");
    for (std::size_t k = first; k < first + count; ++k) id_of[k] = r.at("case_id").get<std::string>();
  }

  Dataset ds;
  ds.reserve(window_count_expected);
  std::vector<float> xd(kWindow * kDynamic), xs(kStatic);
  std::array<std::uint8_t, kEvents> y{};
  for (std::size_t i = 0; i < window_count_expected; ++i) {
    std::uint64_t anchor = 0;
    detail::read_pod(is, xd.data(), xd.size());
    detail::read_pod(is, xs.data(), xs.size());
    detail::read_pod(is, y.data(), y.size());
    detail::read_pod(is, &anchor, 1);
    ds.push(xd, xs, y, anchor, id_of[i]);
  }
  is.peek();
  require(is.eof(), path + ": trailing bytes after last window");
  return ds;
}

}  // namespace iaenet

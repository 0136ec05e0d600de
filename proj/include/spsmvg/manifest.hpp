#pragma once

// Pairwise-preference manifests and series-level splitting.
//
//   #sps-manifest v1
//   @img<TAB>id<TAB>path[<TAB>deep_feature_path]
//   series_id<TAB>image_a<TAB>image_b<TAB>y
//
// Relative paths resolve against the manifest's directory. Blank lines and
// further '#' lines are ignored.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "spsmvg/errors.hpp"
#include "spsmvg/rng.hpp"
#include "spsmvg/training.hpp"

namespace spsmvg {

inline constexpr const char *manifest_header = "#sps-manifest v1";

struct ImageEntry {
  std::string id;
  std::string path;      // as written in the manifest
  std::string deep_path; // empty when absent
  friend bool operator==(const ImageEntry &, const ImageEntry &) = default;
};

struct PairSample {
  std::string series_id;
  std::string image_a;
  std::string image_b;
  int y = 0; // 1: image_a preferred
  friend bool operator==(const PairSample &, const PairSample &) = default;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ImageEntry> images;
  std::vector<PairSample> pairs;

  const ImageEntry *find_image(const std::string &id) const {
    for (const auto &e : images)
      if (e.id == id)
        return &e;
    return nullptr;
  }

  std::filesystem::path resolve(const std::string &p) const {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  /// Series ids in order of first appearance.
  std::vector<std::string> series_ids() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto &p : pairs)
      if (seen.insert(p.series_id).second)
        out.push_back(p.series_id);
    return out;
  }

  /// Image ids of one series in order of first appearance in its pairs.
  std::vector<std::string> series_images(const std::string &series) const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto &p : pairs) {
      if (p.series_id != series)
        continue;
      for (const auto *id : {&p.image_a, &p.image_b})
        if (seen.insert(*id).second)
          out.push_back(*id);
    }
    return out;
  }
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string &line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos)
      break;
    start = tab + 1;
  }
  return out;
}

inline std::string where(const std::string &name, std::size_t line) {
  return name + ":" + std::to_string(line) + ": ";
}

} // namespace detail

/// Checks referential integrity, label coherence and series membership.
/// `lines` maps pair index to source line for error messages (may be empty).
inline void validate_manifest(const Manifest &m, const std::string &name = "<manifest>",
                              const std::vector<std::size_t> &lines = {}) {
  auto line_of = [&](std::size_t i) { return i < lines.size() ? lines[i] : i + 1; };
  std::unordered_map<std::string, std::string> image_series;
  std::map<std::tuple<std::string, std::string, std::string>, int> seen;
  for (std::size_t i = 0; i < m.pairs.size(); ++i) {
    const auto &p = m.pairs[i];
    const auto at = detail::where(name, line_of(i));
    if (p.y != 0 && p.y != 1)
      throw ManifestError(at + "label must be 0 or 1");
    if (p.image_a == p.image_b)
      throw ManifestError(at + "pair compares image '" + p.image_a + "' with itself");
    for (const auto *id : {&p.image_a, &p.image_b}) {
      if (!m.find_image(*id))
        throw ManifestError(at + "image '" + *id + "' is not in the image registry");
      auto [it, inserted] = image_series.emplace(*id, p.series_id);
      if (!inserted && it->second != p.series_id)
        throw ManifestError(at + "pair spans series '" + it->second + "' and '" + p.series_id + "' (image '" +
                            *id + "')");
    }
    if (!seen.emplace(std::tuple{p.series_id, p.image_a, p.image_b}, p.y).second)
      throw ManifestError(at + "duplicate pair (" + p.series_id + ", " + p.image_a + ", " + p.image_b + ")");
    auto rev = seen.find(std::tuple{p.series_id, p.image_b, p.image_a});
    if (rev != seen.end() && rev->second == p.y)
      throw ManifestError(at + "inconsistent labels: (" + p.image_a + ", " + p.image_b + ") and its reverse both have y=" +
                          std::to_string(p.y));
  }
}

inline Manifest parse_manifest(std::istream &in, const std::string &name, const std::filesystem::path &base_dir) {
  Manifest m;
  m.base_dir = base_dir;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::size_t> pair_lines;
  if (!std::getline(in, line))
    throw ManifestError(name + ": empty manifest");
  ++lineno;
  if (!line.empty() && line.back() == '\r')
    line.pop_back();
  if (line != manifest_header)
    throw ManifestError(detail::where(name, 1) + "expected header '" + manifest_header + "'");
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty() || line[0] == '#')
      continue;
    const auto at = detail::where(name, lineno);
    auto fields = detail::split_tabs(line);
    if (fields[0] == "@img") {
      if (fields.size() != 3 && fields.size() != 4)
        throw ManifestError(at + "image line needs id, path and optional deep-feature path");
      ImageEntry e{fields[1], fields[2], fields.size() == 4 ? fields[3] : ""};
      if (e.id.empty() || e.path.empty())
        throw ManifestError(at + "empty image id or path");
      if (!ids.insert(e.id).second)
        throw ManifestError(at + "duplicate image id '" + e.id + "'");
      m.images.push_back(std::move(e));
      continue;
    }
    if (fields.size() != 4)
      throw ManifestError(at + "pair line needs 4 tab-separated fields, got " + std::to_string(fields.size()));
    if (fields[3] != "0" && fields[3] != "1")
      throw ManifestError(at + "label must be 0 or 1, got '" + fields[3] + "'");
    if (fields[0].empty())
      throw ManifestError(at + "empty series id");
    m.pairs.push_back({fields[0], fields[1], fields[2], fields[3] == "1" ? 1 : 0});
    pair_lines.push_back(lineno);
  }
  validate_manifest(m, name, pair_lines);
  return m;
}

inline Manifest load_manifest(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ManifestError(path.string() + ": cannot open manifest");
  return parse_manifest(in, path.string(), path.parent_path());
}

inline std::string format_manifest(const Manifest &m) {
  std::ostringstream out;
  out << manifest_header << '\n';
  for (const auto &e : m.images) {
    out << "@img\t" << e.id << '\t' << e.path;
    if (!e.deep_path.empty())
      out << '\t' << e.deep_path;
    out << '\n';
  }
  for (const auto &p : m.pairs)
    out << p.series_id << '\t' << p.image_a << '\t' << p.image_b << '\t' << p.y << '\n';
  return out.str();
}

inline void save_manifest(const std::filesystem::path &path, const Manifest &m) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw ManifestError(path.string() + ": cannot write manifest");
  out << format_manifest(m);
}

// ---------------------------------------------------------------------------
// Series-level split
// ---------------------------------------------------------------------------

struct SplitSpec {
  std::array<double, 3> fractions{0.8, 0.1, 0.1}; // train, val, test
  std::uint64_t seed = 1;

  void validate() const {
    double sum = 0.0;
    for (double f : fractions) {
      if (!(f > 0.0))
        throw ConfigError("split fractions must be positive");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ConfigError("split fractions must sum to 1");
  }
};

/// Keeps only the pairs whose series is selected, and the images they reference.
inline Manifest subset_by_series(const Manifest &m, const std::set<std::string> &series) {
  Manifest out;
  out.base_dir = m.base_dir;
  std::set<std::string> used;
  for (const auto &p : m.pairs)
    if (series.count(p.series_id)) {
      out.pairs.push_back(p);
      used.insert(p.image_a);
      used.insert(p.image_b);
    }
  for (const auto &e : m.images)
    if (used.count(e.id))
      out.images.push_back(e);
  return out;
}

/// Shuffles whole series with a seeded generator and hands out bucket sizes by
/// largest-remainder rounding of the fractions (every bucket gets at least one).
inline std::array<Manifest, 3> split_by_series(const Manifest &m, const SplitSpec &spec) {
  spec.validate();
  auto series = m.series_ids();
  const std::size_t n = series.size();
  if (n < 3)
    throw ConfigError("need at least 3 series to split, got " + std::to_string(n));

  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    const double exact = spec.fractions[b] * static_cast<double>(n);
    counts[b] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[b] = exact - static_cast<double>(counts[b]);
    assigned += counts[b];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t b = 1; b < 3; ++b)
      if (remainder[b] > remainder[best])
        best = b;
    ++counts[best];
    remainder[best] = -1.0;
    ++assigned;
  }
  for (std::size_t b = 0; b < 3; ++b) {
    while (counts[b] == 0) {
      std::size_t donor = 0;
      for (std::size_t d = 1; d < 3; ++d)
        if (counts[d] > counts[donor])
          donor = d;
      --counts[donor];
      ++counts[b];
    }
  }

  Rng rng(mix_seed(spec.seed, 0x5e71e5));
  rng.shuffle(series);
  std::array<Manifest, 3> out;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < 3; ++b) {
    std::set<std::string> chosen(series.begin() + static_cast<std::ptrdiff_t>(pos),
                                 series.begin() + static_cast<std::ptrdiff_t>(pos + counts[b]));
    pos += counts[b];
    out[b] = subset_by_series(m, chosen);
  }
  return out;
}

} // namespace spsmvg

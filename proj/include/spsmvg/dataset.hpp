#pragma once

// Manifest -> in-memory Dataset: decode every referenced image once, run the
// configured extractors (reading/writing the feature cache when one is set)
// and load each image's deep feature file.

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <thread>
#include <vector>

#include "spsmvg/errors.hpp"
#include "spsmvg/image.hpp"
#include "spsmvg/manifest.hpp"
#include "spsmvg/training.hpp"
#include "spsmvg/views.hpp"

namespace spsmvg {

/// SPS_CACHE_DIR wins over the fallback when set and non-empty.
inline std::optional<std::filesystem::path> cache_dir_from_env(std::optional<std::filesystem::path> fallback = {}) {
  if (const char *env = std::getenv("SPS_CACHE_DIR"); env && *env)
    return std::filesystem::path(env);
  return fallback;
}

struct ExtractOptions {
  std::optional<std::filesystem::path> cache_dir;
  std::size_t jobs = 1;
};

/// Raw views of one image in config order.
inline std::vector<RawView> load_image_views(const Manifest &m, const ImageEntry &entry, const ViewConfig &cfg,
                                             const std::optional<std::filesystem::path> &cache_dir) {
  std::vector<RawView> out;
  std::optional<Image> img;
  const auto image_path = m.resolve(entry.path);
  for (auto kind : cfg.views) {
    if (kind == ViewKind::deep) {
      if (entry.deep_path.empty())
        throw ManifestError("image '" + entry.id + "' has no deep feature path in the registry");
      out.push_back(load_precomputed(m.resolve(entry.deep_path), cfg.deep_dim));
      continue;
    }
    if (cache_dir) {
      const auto cached = cache_path(*cache_dir, kind, image_path);
      if (std::filesystem::exists(cached)) {
        out.push_back(read_view_file(cached, kind, cfg.raw_dim(kind)));
        continue;
      }
    }
    if (!img)
      img = decode_image(image_path);
    out.push_back(extract_view(*img, kind, cfg));
    if (cache_dir)
      write_view_file(cache_path(*cache_dir, kind, image_path), out.back());
  }
  return out;
}

namespace detail {

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first error.
template <class Fn> void parallel_for(std::size_t n, std::size_t jobs, Fn &&fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < std::min(jobs, n); ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error)
            error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto &w : workers)
    w.join();
  if (error)
    std::rethrow_exception(error);
}

} // namespace detail

inline Dataset build_dataset(const Manifest &m, const ViewConfig &cfg, const ExtractOptions &opts = {}) {
  cfg.validate();
  Dataset d;
  std::map<std::string, std::size_t> series_index, image_index;
  std::vector<const ImageEntry *> entries;
  for (const auto &p : m.pairs) {
    if (series_index.emplace(p.series_id, d.series_ids.size()).second)
      d.series_ids.push_back(p.series_id);
    for (const auto *id : {&p.image_a, &p.image_b}) {
      if (image_index.count(*id))
        continue;
      const auto *entry = m.find_image(*id);
      if (!entry)
        throw ManifestError("image '" + *id + "' is not in the image registry");
      image_index.emplace(*id, entries.size());
      entries.push_back(entry);
      d.image_ids.push_back(*id);
    }
    d.pairs.push_back({series_index[p.series_id], image_index[p.image_a], image_index[p.image_b], p.y});
  }
  d.images.resize(entries.size());
  detail::parallel_for(entries.size(), opts.jobs,
                       [&](std::size_t i) { d.images[i] = load_image_views(m, *entries[i], cfg, opts.cache_dir); });
  return d;
}

/// Restricts a dataset built with `full` views to the `subset` (both in canonical order).
inline Dataset select_views(const Dataset &d, const std::vector<ViewKind> &full, const std::vector<ViewKind> &subset) {
  std::vector<std::size_t> pick;
  for (auto k : subset) {
    auto it = std::find(full.begin(), full.end(), k);
    if (it == full.end())
      throw ConfigError("view '" + std::string(to_string(k)) + "' was not extracted");
    pick.push_back(static_cast<std::size_t>(it - full.begin()));
  }
  Dataset out = d;
  for (auto &views : out.images) {
    std::vector<RawView> chosen;
    for (auto i : pick)
      chosen.push_back(views[i]);
    views = std::move(chosen);
  }
  return out;
}

/// Images of each series (dataset indices, first-appearance order).
inline std::vector<std::vector<std::size_t>> series_members(const Dataset &d) {
  std::vector<std::vector<std::size_t>> out(d.series_ids.size());
  std::vector<std::set<std::size_t>> seen(d.series_ids.size());
  for (const auto &p : d.pairs)
    for (auto img : {p.first, p.second})
      if (seen[p.series].insert(img).second)
        out[p.series].push_back(img);
  return out;
}

/// Ground-truth best photo of each series, as a position in series_members():
/// the member that wins every labelled comparison it takes part in, if exactly
/// one such member exists.
inline std::vector<std::optional<std::size_t>> labelled_winners(const Dataset &d) {
  const auto members = series_members(d);
  std::vector<std::optional<std::size_t>> out(members.size());
  std::map<std::size_t, bool> undefeated;
  for (const auto &p : d.pairs) {
    const auto winner = p.y == 1 ? p.first : p.second;
    const auto loser = p.y == 1 ? p.second : p.first;
    undefeated.try_emplace(winner, true);
    undefeated[loser] = false;
  }
  for (std::size_t s = 0; s < members.size(); ++s) {
    std::size_t count = 0;
    for (std::size_t k = 0; k < members[s].size(); ++k)
      if (undefeated[members[s][k]]) {
        ++count;
        out[s] = k;
      }
    if (count != 1)
      out[s].reset();
  }
  return out;
}

} // namespace spsmvg

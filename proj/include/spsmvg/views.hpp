#pragma once

// Feature extraction unit: classical per-image extractors, the precomputed
// deep-feature loader, and the trainable projection of each raw view into the
// shared C-dimensional space that makes up one image's view matrix.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spsmvg/errors.hpp"
#include "spsmvg/image.hpp"
#include "spsmvg/numerics.hpp"

namespace spsmvg {

enum class ViewKind { deep = 0, color = 1, hsv = 2, sift = 3 };

inline std::string_view to_string(ViewKind k) {
  switch (k) {
  case ViewKind::deep: return "deep";
  case ViewKind::color: return "color";
  case ViewKind::hsv: return "hsv";
  case ViewKind::sift: return "sift";
  }
  return "?";
}

inline ViewKind parse_view_kind(std::string_view s) {
  if (s == "deep") return ViewKind::deep;
  if (s == "color") return ViewKind::color;
  if (s == "hsv") return ViewKind::hsv;
  if (s == "sift") return ViewKind::sift;
  throw ConfigError("unknown view '" + std::string(s) + "' (expected deep, color, hsv or sift)");
}

/// Parses a comma-separated view list such as "deep,color,hsv".
inline std::vector<ViewKind> parse_view_set(std::string_view s) {
  std::vector<ViewKind> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    out.push_back(parse_view_kind(s.substr(0, comma)));
    if (comma == std::string_view::npos)
      break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

inline std::string view_set_string(const std::vector<ViewKind> &views) {
  std::string out;
  for (auto k : views) {
    if (!out.empty())
      out += ',';
    out += to_string(k);
  }
  return out;
}

struct RawView {
  ViewKind kind = ViewKind::deep;
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
  friend bool operator==(const RawView &, const RawView &) = default;
};

struct ViewConfig {
  std::vector<ViewKind> views{ViewKind::deep, ViewKind::color, ViewKind::hsv, ViewKind::sift};
  std::size_t color_bins = 8;
  std::size_t hue_bins = 16;
  std::size_t orient_bins = 8;
  std::size_t deep_dim = 32;
  std::size_t common_dim = 16; // C

  std::size_t view_count() const { return views.size(); }

  std::size_t raw_dim(ViewKind k) const {
    switch (k) {
    case ViewKind::deep: return deep_dim;
    case ViewKind::color: return 3 * color_bins;
    case ViewKind::hsv: return 4 + hue_bins;
    case ViewKind::sift: return orient_bins;
    }
    return 0;
  }

  /// Deep first, then the remaining views in canonical order without repeats.
  void validate() const {
    if (views.size() < 2)
      throw ConfigError("view set needs at least two views, got " + std::to_string(views.size()));
    if (views.front() != ViewKind::deep)
      throw ConfigError("view set must start with the deep view: " + view_set_string(views));
    for (std::size_t i = 1; i < views.size(); ++i)
      if (static_cast<int>(views[i]) <= static_cast<int>(views[i - 1]))
        throw ConfigError("view set must be in canonical order deep,color,hsv,sift without repeats: " +
                          view_set_string(views));
    if (color_bins < 2)
      throw ConfigError("color_bins must be >= 2");
    if (hue_bins < 1)
      throw ConfigError("hue_bins must be >= 1");
    if (orient_bins < 4)
      throw ConfigError("orient_bins must be >= 4");
    if (deep_dim == 0 || common_dim == 0)
      throw ConfigError("deep_dim and common_dim must be positive");
  }
};

// ---------------------------------------------------------------------------
// Extractors
// ---------------------------------------------------------------------------

namespace detail {

inline void l1_normalize(std::span<double> block) {
  double sum = 0.0;
  for (double v : block)
    sum += v;
  if (sum > 0.0)
    for (double &v : block)
      v /= sum;
}

inline std::size_t value_bin(std::uint8_t v, std::size_t bins) { return static_cast<std::size_t>(v) * bins / 256; }

} // namespace detail

/// Per-channel RGB histograms, each block L1-normalized: [R bins | G bins | B bins].
inline RawView extract_color_hist(const Image &img, std::size_t bins_per_channel) {
  if (bins_per_channel < 2)
    throw ConfigError("color histogram needs at least 2 bins per channel");
  RawView out{ViewKind::color, std::vector<double>(3 * bins_per_channel, 0.0)};
  for (const auto &p : img.pixels) {
    out.values[detail::value_bin(p.r, bins_per_channel)] += 1.0;
    out.values[bins_per_channel + detail::value_bin(p.g, bins_per_channel)] += 1.0;
    out.values[2 * bins_per_channel + detail::value_bin(p.b, bins_per_channel)] += 1.0;
  }
  for (std::size_t c = 0; c < 3; ++c)
    detail::l1_normalize(std::span(out.values).subspan(c * bins_per_channel, bins_per_channel));
  return out;
}

struct Hsv {
  double h = 0.0; // degrees in [0, 360); 0 for achromatic pixels
  double s = 0.0; // [0, 1]
  double v = 0.0; // [0, 1]
};

inline Hsv rgb_to_hsv(Rgb p) {
  const int mx = std::max({p.r, p.g, p.b});
  const int mn = std::min({p.r, p.g, p.b});
  const int delta = mx - mn;
  Hsv out;
  out.v = mx / 255.0;
  out.s = mx == 0 ? 0.0 : static_cast<double>(delta) / mx;
  if (delta == 0)
    return out;
  double h;
  if (mx == p.r)
    h = 60.0 * static_cast<double>(p.g - p.b) / delta;
  else if (mx == p.g)
    h = 60.0 * (2.0 + static_cast<double>(p.b - p.r) / delta);
  else
    h = 60.0 * (4.0 + static_cast<double>(p.r - p.g) / delta);
  if (h < 0.0)
    h += 360.0;
  out.h = h >= 360.0 ? 0.0 : h;
  return out;
}

/// [S mean, S std, V mean, V std, hue histogram]. Hue is circular, so it is
/// summarized only by the histogram; achromatic pixels count as hue 0.
inline RawView extract_hsv_stats(const Image &img, std::size_t hue_bins = 16) {
  RawView out{ViewKind::hsv, std::vector<double>(4 + hue_bins, 0.0)};
  double s_sum = 0.0, s_sq = 0.0, v_sum = 0.0, v_sq = 0.0;
  for (const auto &p : img.pixels) {
    const Hsv hsv = rgb_to_hsv(p);
    s_sum += hsv.s;
    s_sq += hsv.s * hsv.s;
    v_sum += hsv.v;
    v_sq += hsv.v * hsv.v;
    auto bin = static_cast<std::size_t>(hsv.h / 360.0 * static_cast<double>(hue_bins));
    out.values[4 + std::min(bin, hue_bins - 1)] += 1.0;
  }
  const auto n = static_cast<double>(img.pixels.size());
  const double s_mean = s_sum / n, v_mean = v_sum / n;
  out.values[0] = s_mean;
  out.values[1] = std::sqrt(std::max(0.0, s_sq / n - s_mean * s_mean));
  out.values[2] = v_mean;
  out.values[3] = std::sqrt(std::max(0.0, v_sq / n - v_mean * v_mean));
  detail::l1_normalize(std::span(out.values).subspan(4));
  return out;
}

/// Global magnitude-weighted gradient-orientation histogram over [0, 2pi),
/// computed with central differences on interior pixels of the luma image.
/// A flat image has no gradient mass and maps to the uniform histogram.
inline RawView extract_grad_orient(const Image &img, std::size_t orient_bins) {
  if (orient_bins < 4)
    throw ConfigError("orientation histogram needs at least 4 bins");
  if (img.width < 3 || img.height < 3)
    throw DegenerateViewError("gradient orientation view needs an image of at least 3x3, got " +
                              std::to_string(img.width) + "x" + std::to_string(img.height));
  std::vector<double> luma(img.pixels.size());
  for (std::size_t i = 0; i < luma.size(); ++i) {
    const auto &p = img.pixels[i];
    luma[i] = 0.299 * p.r + 0.587 * p.g + 0.114 * p.b;
  }
  auto at = [&](std::size_t x, std::size_t y) { return luma[y * img.width + x]; };
  constexpr double two_pi = 2.0 * std::numbers::pi;
  RawView out{ViewKind::sift, std::vector<double>(orient_bins, 0.0)};
  double total = 0.0;
  for (std::size_t y = 1; y + 1 < img.height; ++y) {
    for (std::size_t x = 1; x + 1 < img.width; ++x) {
      const double gx = at(x + 1, y) - at(x - 1, y);
      const double gy = at(x, y + 1) - at(x, y - 1);
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0)
        continue;
      double angle = std::atan2(gy, gx);
      if (angle < 0.0)
        angle += two_pi;
      auto bin = static_cast<std::size_t>(angle * static_cast<double>(orient_bins) / two_pi);
      out.values[bin % orient_bins] += mag;
      total += mag;
    }
  }
  if (total == 0.0)
    std::fill(out.values.begin(), out.values.end(), 1.0 / static_cast<double>(orient_bins));
  else
    detail::l1_normalize(out.values);
  return out;
}

inline RawView extract_view(const Image &img, ViewKind kind, const ViewConfig &cfg) {
  switch (kind) {
  case ViewKind::color: return extract_color_hist(img, cfg.color_bins);
  case ViewKind::hsv: return extract_hsv_stats(img, cfg.hue_bins);
  case ViewKind::sift: return extract_grad_orient(img, cfg.orient_bins);
  case ViewKind::deep: break;
  }
  throw ConfigError("the deep view is not extracted from pixels; load it with load_precomputed");
}

// ---------------------------------------------------------------------------
// View files: line 1 "dim <N>", line 2 N space-separated reals.
// ---------------------------------------------------------------------------

inline RawView read_view_file(const std::filesystem::path &path, ViewKind kind,
                              std::optional<std::size_t> expected_dim = std::nullopt) {
  std::ifstream in(path);
  if (!in)
    throw IngestionError(path.string() + ": cannot open view file");
  std::string tag;
  long long declared = -1;
  if (!(in >> tag >> declared) || tag != "dim" || declared <= 0)
    throw IngestionError(path.string() + ": expected header 'dim <N>'");
  const auto dim = static_cast<std::size_t>(declared);
  if (expected_dim && *expected_dim != dim)
    throw ManifestError(path.string() + ": declared dim " + std::to_string(dim) + " but expected " +
                        std::to_string(*expected_dim));
  RawView out{kind, {}};
  out.values.reserve(dim);
  std::string token;
  while (in >> token) {
    double v = 0.0;
    const char *first = token.data();
    const char *last = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
      throw IngestionError(path.string() + ": unparsable value '" + token + "' at offset " +
                           std::to_string(out.values.size()));
    if (!std::isfinite(v))
      throw IngestionError(path.string() + ": non-finite value at offset " + std::to_string(out.values.size()));
    out.values.push_back(v);
  }
  if (out.values.size() != dim)
    throw ManifestError(path.string() + ": declared dim " + std::to_string(dim) + " but file holds " +
                        std::to_string(out.values.size()) + " values");
  return out;
}

/// Loads an externally computed deep-feature vector.
inline RawView load_precomputed(const std::filesystem::path &path, std::size_t expected_dim) {
  if (!std::filesystem::exists(path))
    throw IngestionError(path.string() + ": deep feature file not found");
  return read_view_file(path, ViewKind::deep, expected_dim);
}

inline std::string format_view(const RawView &v) {
  std::string out = "dim " + std::to_string(v.dim()) + "\n";
  char buf[32];
  for (std::size_t i = 0; i < v.values.size(); ++i) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v.values[i]);
    if (i)
      out += ' ';
    out.append(buf, ptr);
  }
  out += '\n';
  return out;
}

inline void write_view_file(const std::filesystem::path &path, const RawView &v) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  // Write to a sibling temp file and rename, so concurrent writers of the same
  // key never expose a half-written file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out)
      throw IngestionError(path.string() + ": cannot write view file");
    out << format_view(v);
  }
  std::filesystem::rename(tmp, path);
}

/// `<cache>/<extractor>/<image-stem>.view`
inline std::filesystem::path cache_path(const std::filesystem::path &cache_dir, ViewKind kind,
                                        const std::filesystem::path &image_path) {
  return cache_dir / std::string(to_string(kind)) / (image_path.stem().string() + ".view");
}

// ---------------------------------------------------------------------------
// Projection into the common space and the view matrix.
// ---------------------------------------------------------------------------

/// Trainable affine map raw view -> C: row = W v + b.
struct Projection {
  ParamTensor weight; // C x dim
  ParamTensor bias;   // C x 1

  Projection() = default;
  Projection(std::size_t common_dim, std::size_t raw_dim) : weight(common_dim, raw_dim), bias(common_dim, 1) {}

  std::size_t in_dim() const { return weight.value.cols(); }
  std::size_t out_dim() const { return weight.value.rows(); }
};

inline std::vector<double> project_view(const RawView &v, const Projection &proj) {
  if (proj.in_dim() != v.dim())
    throw ConfigError("projection for view '" + std::string(to_string(v.kind)) + "' expects dim " +
                      std::to_string(proj.in_dim()) + ", got " + std::to_string(v.dim()));
  std::vector<double> out(proj.out_dim());
  for (std::size_t c = 0; c < out.size(); ++c) {
    double s = proj.bias.value[c];
    auto w = proj.weight.value.row(c);
    for (std::size_t k = 0; k < v.dim(); ++k)
      s += w[k] * v.values[k];
    out[c] = s;
  }
  return out;
}

// Accumulates dW += g v^T, db += g for one projected row with upstream g.
inline void project_view_backward(const RawView &v, std::span<const double> upstream, Projection &proj) {
  for (std::size_t c = 0; c < proj.out_dim(); ++c) {
    const double g = upstream[c];
    if (g == 0.0)
      continue;
    proj.bias.grad[c] += g;
    auto gw = proj.weight.grad.row(c);
    for (std::size_t k = 0; k < v.dim(); ++k)
      gw[k] += g * v.values[k];
  }
}

/// The l x C matrix of projected views for one image; row 0 is the deep (central) view.
struct ViewMatrix {
  Matrix values;
  std::size_t central_index = 0;

  std::size_t view_count() const { return values.rows(); }
  std::size_t common_dim() const { return values.cols(); }
};

inline ViewMatrix build_view_matrix(std::span<const RawView> raws, std::span<const Projection> projections,
                                    const ViewConfig &config) {
  if (std::none_of(raws.begin(), raws.end(), [](const RawView &r) { return r.kind == ViewKind::deep; }))
    throw ConfigError("view list has no deep view");
  if (raws.size() != config.views.size())
    throw ConfigError("expected " + std::to_string(config.views.size()) + " raw views, got " +
                      std::to_string(raws.size()));
  if (projections.size() != raws.size())
    throw ConfigError("expected one projection per view");
  for (std::size_t i = 0; i < raws.size(); ++i)
    if (raws[i].kind != config.views[i])
      throw ConfigError("raw view " + std::to_string(i) + " is '" + std::string(to_string(raws[i].kind)) +
                        "' but the configuration expects '" + std::string(to_string(config.views[i])) + "'");
  ViewMatrix vm{Matrix(raws.size(), config.common_dim), 0};
  for (std::size_t i = 0; i < raws.size(); ++i) {
    const auto row = project_view(raws[i], projections[i]);
    if (row.size() != config.common_dim)
      throw ConfigError("projection output dim does not match common_dim");
    if (std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; }))
      throw DegenerateViewError("projected view '" + std::string(to_string(raws[i].kind)) +
                                "' is the zero vector; cosine similarity is undefined");
    std::copy(row.begin(), row.end(), vm.values.row(i).begin());
  }
  return vm;
}

inline void build_view_matrix_backward(std::span<const RawView> raws, const Matrix &upstream,
                                       std::span<Projection> projections) {
  for (std::size_t i = 0; i < raws.size(); ++i)
    project_view_backward(raws[i], upstream.row(i), projections[i]);
}

} // namespace spsmvg

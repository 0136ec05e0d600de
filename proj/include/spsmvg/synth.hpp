#pragma once

// Desk-scale synthetic corpus. Each series shares a smooth random colour
// field; each photo in it carries a latent quality q in [0, 1] that lowers
// noise and lifts brightness in the pixels and moves the fabricated deep
// vector along a fixed "quality" direction. Labels are y = [q_a > q_b].

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "spsmvg/errors.hpp"
#include "spsmvg/image.hpp"
#include "spsmvg/manifest.hpp"
#include "spsmvg/rng.hpp"
#include "spsmvg/views.hpp"

namespace spsmvg {

struct SynthSpec {
  std::size_t series = 40;
  std::size_t photos = 4;
  std::size_t width = 32;
  std::size_t height = 32;
  std::size_t deep_dim = 32;
  std::uint64_t seed = 7;
  // Two photos of one series whose qualities differ by less than this count as tied and are re-drawn.
  double min_quality_gap = 0.05;

  void validate() const {
    if (series == 0)
      throw ConfigError("synthetic corpus needs at least one series");
    if (photos < 2 || photos > 8)
      throw ConfigError("photos per series must lie in [2, 8], got " + std::to_string(photos));
    if (width < 3 || height < 3)
      throw ConfigError("synthetic images must be at least 3x3");
    if (deep_dim == 0)
      throw ConfigError("deep_dim must be positive");
  }
};

struct SynthCorpus {
  Manifest manifest;
  std::vector<std::vector<double>> quality; // [series][photo]
};

inline std::string synth_series_id(std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%03zu", s);
  return buf;
}

inline std::string synth_image_id(std::size_t s, std::size_t k) {
  return synth_series_id(s) + "_p" + std::to_string(k);
}

namespace detail {

inline std::vector<double> draw_qualities(Rng &rng, std::size_t m, double min_gap) {
  std::vector<double> q(m);
  for (std::size_t i = 0; i < m; ++i) {
    bool tied;
    do {
      q[i] = rng.unit();
      tied = false;
      for (std::size_t j = 0; j < i; ++j)
        tied = tied || std::abs(q[i] - q[j]) < min_gap;
    } while (tied);
  }
  return q;
}

struct ColorField {
  double base[3];
  double amp[3][2];
  double freq[2][2];
  double phase[3][2];

  explicit ColorField(Rng &rng) {
    for (int c = 0; c < 3; ++c) {
      base[c] = rng.uniform(60.0, 190.0);
      for (int k = 0; k < 2; ++k) {
        amp[c][k] = rng.uniform(10.0, 40.0);
        phase[c][k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      }
    }
    for (int k = 0; k < 2; ++k)
      for (int d = 0; d < 2; ++d)
        freq[k][d] = rng.uniform(0.5, 2.0);
  }

  double at(int c, double u, double v) const {
    double val = base[c];
    for (int k = 0; k < 2; ++k)
      val += amp[c][k] * std::sin(2.0 * std::numbers::pi * (freq[k][0] * u + freq[k][1] * v) + phase[c][k]);
    return val;
  }
};

/// Unit vector along which deep features encode quality. It depends only on
/// the dimension, so corpora with different seeds share one feature space.
inline std::vector<double> quality_direction(std::size_t dim) {
  Rng rng(mix_seed(dim, 0xd1ec7));
  std::vector<double> direction(dim);
  double norm = 0.0;
  for (auto &d : direction) {
    d = rng.normal();
    norm += d * d;
  }
  for (auto &d : direction)
    d /= std::sqrt(norm);
  return direction;
}

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

} // namespace detail

/// Writes images/<id>.ppm, deep/<id>.view and manifest.tsv under out_dir.
inline SynthCorpus gen_synthetic(const SynthSpec &spec, const std::filesystem::path &out_dir) {
  spec.validate();
  const auto direction = detail::quality_direction(spec.deep_dim);
  Rng rng(mix_seed(spec.seed, 0x57));

  SynthCorpus corpus;
  corpus.manifest.base_dir = out_dir;
  for (std::size_t s = 0; s < spec.series; ++s) {
    const detail::ColorField field(rng);
    std::vector<double> deep_base(spec.deep_dim);
    for (auto &v : deep_base)
      v = 0.5 * rng.normal();
    const auto q = detail::draw_qualities(rng, spec.photos, spec.min_quality_gap);
    corpus.quality.push_back(q);

    for (std::size_t k = 0; k < spec.photos; ++k) {
      Image img(spec.width, spec.height);
      const double gain = 0.75 + 0.25 * q[k];
      const double noise = 70.0 * (1.0 - q[k]);
      for (std::size_t y = 0; y < spec.height; ++y) {
        for (std::size_t x = 0; x < spec.width; ++x) {
          const double u = static_cast<double>(x) / static_cast<double>(spec.width);
          const double v = static_cast<double>(y) / static_cast<double>(spec.height);
          auto &px = img.at(x, y);
          px.r = detail::to_byte(gain * field.at(0, u, v) + noise * rng.normal());
          px.g = detail::to_byte(gain * field.at(1, u, v) + noise * rng.normal());
          px.b = detail::to_byte(gain * field.at(2, u, v) + noise * rng.normal());
        }
      }
      RawView deep{ViewKind::deep, std::vector<double>(spec.deep_dim)};
      for (std::size_t i = 0; i < spec.deep_dim; ++i)
        deep.values[i] = deep_base[i] + 2.0 * q[k] * direction[i] + 0.02 * rng.normal();

      const auto id = synth_image_id(s, k);
      const std::string image_rel = "images/" + id + ".ppm";
      const std::string deep_rel = "deep/" + id + ".view";
      write_ppm(out_dir / image_rel, img);
      write_view_file(out_dir / deep_rel, deep);
      corpus.manifest.images.push_back({id, image_rel, deep_rel});
    }
    for (std::size_t i = 0; i < spec.photos; ++i) {
      for (std::size_t j = i + 1; j < spec.photos; ++j) {
        const bool flip = rng.unit() < 0.5;
        const std::size_t a = flip ? j : i, b = flip ? i : j;
        corpus.manifest.pairs.push_back(
            {synth_series_id(s), synth_image_id(s, a), synth_image_id(s, b), q[a] > q[b] ? 1 : 0});
      }
    }
  }
  save_manifest(out_dir / "manifest.tsv", corpus.manifest);
  return corpus;
}

} // namespace spsmvg

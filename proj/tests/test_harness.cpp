#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "spsmvg/spsmvg.hpp"

using namespace spsmvg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string &name) {
  auto dir = fs::temp_directory_path() / ("spsmvg_test_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Manifest parse(const std::string &text) {
  std::istringstream in(text);
  return parse_manifest(in, "m.tsv", "/data");
}

const std::string registry = "#sps-manifest v1\n@img\ta\ta.png\tdeep/a.view\n@img\tb\tb.png\n@img\tc\tc.png\n";

std::vector<std::uint8_t> file_bytes(const fs::path &p) { return detail::read_file_bytes(p); }

Manifest many_series(std::size_t n) {
  Manifest m;
  for (std::size_t s = 0; s < n; ++s) {
    const auto a = "s" + std::to_string(s) + "a", b = "s" + std::to_string(s) + "b";
    m.images.push_back({a, a + ".png", ""});
    m.images.push_back({b, b + ".png", ""});
    m.pairs.push_back({"s" + std::to_string(s), a, b, static_cast<int>(s % 2)});
  }
  return m;
}

} // namespace

TEST_CASE("manifest parsing") {
  const auto m = parse(registry + "# comment\n\nser1\ta\tb\t1\nser1\tb\tc\t0\n");
  CHECK(m.images.size() == 3);
  CHECK(m.images[0].deep_path == "deep/a.view");
  CHECK(m.images[1].deep_path.empty());
  REQUIRE(m.pairs.size() == 2);
  CHECK(m.pairs[1] == PairSample{"ser1", "b", "c", 0});
  CHECK(m.resolve("a.png") == fs::path("/data/a.png"));
  CHECK(m.resolve("/abs/x.png") == fs::path("/abs/x.png"));
  CHECK(m.series_images("ser1") == std::vector<std::string>{"a", "b", "c"});
  CHECK(parse(format_manifest(m)).pairs == m.pairs);
}

TEST_CASE("manifest errors carry the line number") {
  auto fails_with = [](const std::string &text, const std::string &needle) {
    CHECK_THROWS_WITH(parse(text), Catch::Matchers::ContainsSubstring(needle));
  };
  fails_with("ser\ta\tb\t1\n", "header");
  fails_with(registry + "ser\ta\tb\t2\n", "m.tsv:5: label must be 0 or 1");
  fails_with(registry + "ser\ta\ta\t1\n", "itself");
  fails_with(registry + "ser\ta\tzz\t1\n", "'zz' is not in the image registry");
  fails_with(registry + "s1\ta\tb\t1\ns2\tb\tc\t1\n", "m.tsv:6: pair spans series");
  fails_with(registry + "s\ta\tb\t1\ns\ta\tb\t1\n", "duplicate pair");
  fails_with(registry + "s\ta\tb\t1\ns\tb\ta\t1\n", "inconsistent labels");
  fails_with(registry + "s\ta\tb\n", "4 tab-separated fields");
  fails_with(registry + "@img\ta\tagain.png\n", "duplicate image id");
  CHECK_NOTHROW(parse(registry + "s\ta\tb\t1\ns\tb\ta\t0\n"));
  CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.tsv"), ManifestError);
}

TEST_CASE("series-level split") {
  SECTION("exact fractions") {
    const auto parts = split_by_series(many_series(10), {});
    CHECK(parts[0].series_ids().size() == 8);
    CHECK(parts[1].series_ids().size() == 1);
    CHECK(parts[2].series_ids().size() == 1);
  }
  SECTION("disjoint, complete, and deterministic") {
    const auto m = many_series(23);
    const auto a = split_by_series(m, {{0.6, 0.2, 0.2}, 4});
    const auto b = split_by_series(m, {{0.6, 0.2, 0.2}, 4});
    std::set<std::string> all;
    std::size_t total = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(a[k].series_ids() == b[k].series_ids());
      CHECK_FALSE(a[k].series_ids().empty());
      for (const auto &s : a[k].series_ids())
        all.insert(s);
      total += a[k].pairs.size();
      CHECK_NOTHROW(validate_manifest(a[k]));
      CHECK(a[k].images.size() == 2 * a[k].pairs.size());
    }
    CHECK(all.size() == 23);
    CHECK(total == m.pairs.size());
    CHECK(a[0].series_ids().size() + a[1].series_ids().size() + a[2].series_ids().size() == 23);
    const auto c = split_by_series(m, {{0.6, 0.2, 0.2}, 5});
    CHECK(a[0].series_ids() != c[0].series_ids());
  }
  SECTION("small and invalid inputs") {
    const auto three = split_by_series(many_series(3), {});
    for (const auto &part : three)
      CHECK(part.series_ids().size() == 1);
    CHECK_THROWS_AS(split_by_series(many_series(2), {}), ConfigError);
    CHECK_THROWS_AS(split_by_series(many_series(10), {{0.5, 0.5, 0.0}, 1}), ConfigError);
    CHECK_THROWS_AS(split_by_series(many_series(10), {{0.5, 0.3, 0.3}, 1}), ConfigError);
  }
}

TEST_CASE("synthetic corpus") {
  const auto dir = scratch_dir("synth");
  SynthSpec spec;
  spec.series = 4;
  spec.photos = 3;
  const auto corpus = gen_synthetic(spec, dir / "a");
  CHECK(corpus.manifest.images.size() == 12);
  CHECK(corpus.manifest.pairs.size() == 12);
  std::size_t ppm = 0, views = 0;
  for (const auto &e : fs::recursive_directory_iterator(dir / "a")) {
    ppm += e.path().extension() == ".ppm";
    views += e.path().extension() == ".view";
  }
  CHECK(ppm == 12);
  CHECK(views == 12);
  for (const auto &s : corpus.manifest.series_ids())
    CHECK(corpus.manifest.series_images(s).size() == 3);

  SECTION("labels follow the latent quality") {
    for (const auto &p : corpus.manifest.pairs) {
      const std::size_t s = std::stoul(p.series_id.substr(1));
      const std::size_t a = std::stoul(p.image_a.substr(p.image_a.find("_p") + 2));
      const std::size_t b = std::stoul(p.image_b.substr(p.image_b.find("_p") + 2));
      CHECK(p.y == (corpus.quality[s][a] > corpus.quality[s][b] ? 1 : 0));
      CHECK(std::abs(corpus.quality[s][a] - corpus.quality[s][b]) >= spec.min_quality_gap);
    }
  }
  SECTION("regeneration is byte-identical") {
    gen_synthetic(spec, dir / "b");
    for (const auto &e : fs::recursive_directory_iterator(dir / "a")) {
      if (!e.is_regular_file())
        continue;
      const auto rel = fs::relative(e.path(), dir / "a");
      CHECK(file_bytes(e.path()) == file_bytes(dir / "b" / rel));
    }
  }
  SECTION("the loaded manifest builds a dataset") {
    ViewConfig vc;
    vc.deep_dim = spec.deep_dim;
    const auto d = build_dataset(load_manifest(dir / "a" / "manifest.tsv"), vc);
    CHECK(d.images.size() == 12);
    CHECK(d.pairs.size() == 12);
    CHECK(series_members(d).size() == 4);
    const auto winners = labelled_winners(d);
    const auto all_members = series_members(d);
    for (std::size_t s = 0; s < 4; ++s) {
      REQUIRE(winners[s].has_value());
      const auto &members = all_members[s];
      const auto &id = d.image_ids[members[*winners[s]]];
      const std::size_t k = std::stoul(id.substr(id.find("_p") + 2));
      const auto &q = corpus.quality[s];
      CHECK(q[k] == *std::max_element(q.begin(), q.end()));
    }
  }
  spec.photos = 9;
  CHECK_THROWS_AS(gen_synthetic(spec, dir / "c"), ConfigError);
}

TEST_CASE("feature cache") {
  const auto dir = scratch_dir("cache");
  SynthSpec spec;
  spec.series = 2;
  spec.photos = 2;
  gen_synthetic(spec, dir / "corpus");
  const auto m = load_manifest(dir / "corpus" / "manifest.tsv");
  ViewConfig vc;
  const auto direct = build_dataset(m, vc);
  const auto cached = build_dataset(m, vc, {dir / "cache", 3});
  CHECK(cached.images == direct.images);
  CHECK(fs::exists(dir / "cache" / "color" / "s000_p0.view"));
  CHECK(fs::exists(dir / "cache" / "sift" / "s001_p1.view"));
  // A second pass reads the cache instead of the images.
  fs::remove_all(dir / "corpus" / "images");
  CHECK(build_dataset(m, vc, {dir / "cache", 1}).images == direct.images);
  CHECK_THROWS_AS(build_dataset(m, vc), IngestionError);

  ::setenv("SPS_CACHE_DIR", "/tmp/from-env", 1);
  CHECK(cache_dir_from_env() == fs::path("/tmp/from-env"));
  ::unsetenv("SPS_CACHE_DIR");
  CHECK_FALSE(cache_dir_from_env().has_value());
}

TEST_CASE("view subsets") {
  Dataset d;
  d.images = {{{ViewKind::deep, {1}}, {ViewKind::color, {2}}, {ViewKind::hsv, {3}}, {ViewKind::sift, {4}}}};
  const ViewConfig full;
  const auto sub = select_views(d, full.views, {ViewKind::deep, ViewKind::hsv, ViewKind::sift});
  REQUIRE(sub.images[0].size() == 3);
  CHECK(sub.images[0][1].kind == ViewKind::hsv);
  CHECK_THROWS_AS(select_views(sub, {ViewKind::deep, ViewKind::hsv}, {ViewKind::deep, ViewKind::color}), ConfigError);
}

TEST_CASE("checkpoints") {
  const auto dir = scratch_dir("ckpt");
  ViewConfig vc;
  vc.deep_dim = 6;
  vc.common_dim = 8;
  const auto model = ModelConfig::defaults(vc, PoolingMode::avg);
  TrainConfig train;
  train.seed = 42;
  train.epochs = 3;
  auto params = init_params(model, 42);
  params.fc3_w.value[1] = -0.375f;
  const auto ck = make_checkpoint(model, train, 3, params);
  save_checkpoint(dir / "m.ckpt", ck);

  SECTION("round trip is bit-exact") {
    const auto back = load_checkpoint(dir / "m.ckpt", model);
    CHECK(back.params.values_equal(params));
    CHECK(back.model.hyper == model.hyper);
    CHECK(back.model.lambda == model.lambda);
    CHECK(back.train == train);
    CHECK(back.epoch == 3);
    CHECK(back.rng_state == shuffle_seed(42, 3));
    CHECK(encode_checkpoint(back) == file_bytes(dir / "m.ckpt"));
  }
  SECTION("corruption is detected") {
    auto bytes = file_bytes(dir / "m.ckpt");
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_WITH(decode_checkpoint(truncated), Catch::Matchers::ContainsSubstring("truncated"));
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), CheckpointError);
    auto bad_version = bytes;
    bad_version[6] = 99;
    CHECK_THROWS_WITH(decode_checkpoint(bad_version), Catch::Matchers::ContainsSubstring("version"));
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_checkpoint(trailing), CheckpointError);
    // Inflate the element count of the first tensor.
    const std::string name = "proj0.weight";
    auto it = std::search(bytes.begin(), bytes.end(), name.begin(), name.end());
    REQUIRE(it != bytes.end());
    auto corrupted = bytes;
    corrupted[static_cast<std::size_t>(it - bytes.begin()) + name.size() + 8] ^= 0x40;
    CHECK_THROWS_AS(decode_checkpoint(corrupted), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), CheckpointError);
  }
  SECTION("a different architecture is refused") {
    auto other = model;
    other.hyper.pooling = PoolingMode::max;
    CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt", other), ConfigError);
    ViewConfig fewer = vc;
    fewer.views = {ViewKind::deep, ViewKind::color};
    CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt", ModelConfig::defaults(fewer, PoolingMode::avg)), ConfigError);
  }
}

TEST_CASE("training runs are reproducible and resumable") {
  const auto dir = scratch_dir("resume");
  SynthSpec spec;
  spec.series = 3;
  spec.photos = 3;
  spec.width = spec.height = 12;
  gen_synthetic(spec, dir);
  ViewConfig vc;
  vc.common_dim = 8;
  const auto data = build_dataset(load_manifest(dir / "manifest.tsv"), vc);
  const auto model = ModelConfig::defaults(vc);
  TrainConfig train;
  train.epochs = 6;
  train.batch_size = 4;

  const auto full = run_training(data, &data, model, train);
  const auto again = run_training(data, &data, model, train);
  CHECK(encode_checkpoint(make_checkpoint(model, train, 6, full.params)) ==
        encode_checkpoint(make_checkpoint(model, train, 6, again.params)));
  CHECK(full.history.size() == 6);
  CHECK(full.history[0].validation.has_value());

  TrainConfig first_half = train;
  first_half.epochs = 2;
  const auto part = run_training(data, nullptr, model, first_half);
  save_checkpoint(dir / "part.ckpt", make_checkpoint(model, first_half, 2, part.params));
  const auto ck = load_checkpoint(dir / "part.ckpt", model);
  const auto resumed = run_training(data, nullptr, model, train, &ck);
  CHECK(resumed.epochs_done == 6);
  CHECK(resumed.history.size() == 4);
  CHECK(resumed.params.values_equal(full.params));

  TrainConfig other_seed = train;
  other_seed.seed = 2;
  CHECK_THROWS_AS(run_training(data, nullptr, model, other_seed, &ck), ConfigError);
}

TEST_CASE("report formatting") {
  EpochReport r;
  r.epoch = 3;
  r.lr = 0.025;
  r.train.loss = 0.5;
  r.train.accuracy = 0.75;
  r.train.f1 = 0.8;
  CHECK(format_epoch_line(r) == "epoch 3 lr 0.025 loss 0.500000 acc 0.7500 f1 0.8000");

  SeriesRanking s;
  s.series_id = "s001";
  s.image_ids = {"x", "y"};
  s.result.scores = {0.25, 0.75};
  s.result.order = {1, 0};
  s.result.best = 1;
  const auto j = nlohmann::json::parse(ranking_json_line(s));
  CHECK(j["series_id"] == "s001");
  CHECK(j["best"] == 1);
  CHECK(j["best_image"] == "y");
  CHECK(j["order"] == nlohmann::json({1, 0}));
  CHECK_FALSE(j.contains("converged"));

  std::vector<AblationRow> rows;
  for (auto mode : {PoolingMode::null, PoolingMode::max})
    for (const auto &views : three_view_combinations())
      rows.push_back({mode, views, Metrics{0.1, 0.5, 0.25}});
  const auto table = format_ablation_table(rows);
  CHECK(std::count(table.begin(), table.end(), '\n') == 8);
  CHECK(table.find("| null    | V + C + H |   50.000 |   25.000 |") != std::string::npos);
  CHECK(table.find("|         | V + H + S |") != std::string::npos);
}

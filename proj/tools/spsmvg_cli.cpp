// spsmvg: command-line front end for the series photo selection pipeline.
//
// Exit status: 0 success, 1 validation error (bad flags, manifests, files,
// configuration), 2 runtime failure (divergence, failed gradient check, ...).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spsmvg/spsmvg.hpp"

namespace fs = std::filesystem;
using namespace spsmvg;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_validation = 1;
constexpr int exit_runtime = 2;

struct ModelFlags {
  std::string views = "deep,color,hsv,sift";
  std::string pooling = "max_avg";
  std::optional<double> lambda;
  std::size_t common_dim = 16;
  std::size_t deep_dim = 32;

  void add(CLI::App *cmd) {
    cmd->add_option("--views", views, "Comma-separated view set (deep first)")->capture_default_str();
    cmd->add_option("--pooling", pooling, "Attention pooling: null, max, avg, max_avg")->capture_default_str();
    cmd->add_option("--lambda", lambda, "Graph edge threshold in [0,1) (default 1/l)");
    cmd->add_option("--common-dim", common_dim, "Common view dimension C")->capture_default_str();
    cmd->add_option("--deep-dim", deep_dim, "Dimension of precomputed deep features")->capture_default_str();
  }

  ModelConfig build() const {
    ViewConfig vc;
    vc.views = parse_view_set(views);
    vc.common_dim = common_dim;
    vc.deep_dim = deep_dim;
    vc.validate();
    auto cfg = ModelConfig::defaults(vc, parse_pooling_mode(pooling));
    if (lambda)
      cfg.lambda = *lambda;
    cfg.validate();
    return cfg;
  }
};

struct TrainFlags {
  TrainConfig cfg;

  void add(CLI::App *cmd) {
    cmd->add_option("--epochs", cfg.epochs, "Epoch budget")->capture_default_str();
    cmd->add_option("--batch-size", cfg.batch_size, "Pairs per SGD step")->capture_default_str();
    cmd->add_option("--lr", cfg.lr0, "Initial learning rate")->capture_default_str();
    cmd->add_option("--weight-decay", cfg.weight_decay, "Weight decay (biases excluded)")->capture_default_str();
    cmd->add_option("--decay-factor", cfg.decay_factor, "Learning-rate step decay factor")->capture_default_str();
    cmd->add_option("--decay-every", cfg.decay_every, "Epochs between learning-rate decays")->capture_default_str();
    cmd->add_option("--seed", cfg.seed, "Seed for initialization and shuffling")->capture_default_str();
  }
};

struct DataFlags {
  std::string manifest;
  std::optional<std::string> cache;
  std::size_t jobs = 1;

  void add(CLI::App *cmd, bool manifest_required = true) {
    auto *opt = cmd->add_option("--manifest", manifest, "Manifest file");
    if (manifest_required)
      opt->required();
    cmd->add_option("--cache", cache, "Feature cache directory (falls back to SPS_CACHE_DIR)");
    cmd->add_option("--jobs", jobs, "Extraction worker threads")->capture_default_str();
  }

  ExtractOptions options() const {
    ExtractOptions o;
    o.cache_dir = cache ? std::optional<fs::path>(*cache) : cache_dir_from_env();
    o.jobs = jobs;
    return o;
  }
};

std::array<double, 3> parse_fractions(const std::string &s) {
  std::array<double, 3> out{};
  std::stringstream ss(s);
  std::string tok;
  std::size_t i = 0;
  while (std::getline(ss, tok, ',')) {
    if (i >= 3)
      throw ConfigError("--split takes three comma-separated fractions");
    try {
      out[i++] = std::stod(tok);
    } catch (const std::exception &) {
      throw ConfigError("--split: cannot parse '" + tok + "'");
    }
  }
  if (i != 3)
    throw ConfigError("--split takes three comma-separated fractions");
  return out;
}

void print_metrics(const char *label, const Metrics &m) {
  std::printf("%s accuracy %.4f f1 %.4f loss %.6f pairs %zu\n", label, m.accuracy, m.f1, m.loss, m.count());
}

int cmd_synth(const fs::path &out, const SynthSpec &spec) {
  const auto corpus = gen_synthetic(spec, out);
  std::printf("wrote %zu images, %zu pairs to %s\n", corpus.manifest.images.size(), corpus.manifest.pairs.size(),
              (out / "manifest.tsv").string().c_str());
  return exit_ok;
}

int cmd_extract(const DataFlags &data, const ModelFlags &model) {
  auto opts = data.options();
  if (!opts.cache_dir)
    throw ConfigError("extract needs --cache or SPS_CACHE_DIR");
  const auto manifest = load_manifest(data.manifest);
  const auto cfg = model.build();
  const auto ds = build_dataset(manifest, cfg.views, opts);
  std::printf("extracted %zu images into %s\n", ds.images.size(), opts.cache_dir->string().c_str());
  return exit_ok;
}

struct TrainCommand {
  DataFlags data;
  ModelFlags model;
  TrainFlags train;
  std::string out = "model.ckpt";
  std::string split = "0.8,0.1,0.1";
  std::uint64_t split_seed = 1;
  bool no_split = false;
  std::optional<std::string> val_manifest;
  std::optional<std::string> resume;
  bool quiet = false;

  int run(CLI::App &cmd) const {
    const auto manifest = load_manifest(data.manifest);
    ModelConfig mcfg = model.build();
    TrainConfig tcfg = train.cfg;
    std::optional<Checkpoint> resume_ck;
    if (resume) {
      resume_ck = load_checkpoint(*resume);
      mcfg = resume_ck->model;
      const auto epochs = tcfg.epochs;
      tcfg = resume_ck->train;
      if (cmd.count("--epochs"))
        tcfg.epochs = epochs;
    }
    tcfg.validate();

    Manifest train_m = manifest, val_m, test_m;
    if (!no_split) {
      auto parts = split_by_series(manifest, {parse_fractions(split), split_seed});
      train_m = std::move(parts[0]);
      val_m = std::move(parts[1]);
      test_m = std::move(parts[2]);
    }
    if (val_manifest)
      val_m = load_manifest(*val_manifest);

    const auto opts = data.options();
    const auto train_ds = build_dataset(train_m, mcfg.views, opts);
    const auto val_ds = val_m.pairs.empty() ? Dataset{} : build_dataset(val_m, mcfg.views, opts);
    const auto run = run_training(train_ds, val_ds.empty() ? nullptr : &val_ds, mcfg, tcfg,
                                  resume_ck ? &*resume_ck : nullptr, [&](const EpochReport &r) {
                                    if (!quiet)
                                      std::printf("%s\n", format_epoch_line(r).c_str());
                                  });
    save_checkpoint(out, make_checkpoint(mcfg, tcfg, run.epochs_done, run.params));
    if (!test_m.pairs.empty())
      print_metrics("test", evaluate(build_dataset(test_m, mcfg.views, opts), run.params, mcfg));
    std::printf("saved checkpoint %s (epoch %zu)\n", out.c_str(), run.epochs_done);
    return exit_ok;
  }
};

int cmd_eval(const DataFlags &data, const std::string &checkpoint) {
  const auto ck = load_checkpoint(checkpoint);
  const auto ds = build_dataset(load_manifest(data.manifest), ck.model.views, data.options());
  print_metrics("eval", evaluate(ds, ck.params, ck.model));
  return exit_ok;
}

int cmd_rank(const DataFlags &data, const std::string &checkpoint) {
  const auto ck = load_checkpoint(checkpoint);
  const auto ds = build_dataset(load_manifest(data.manifest), ck.model.views, data.options());
  const auto rankings = rank_dataset(ds, ck.params, ck.model);
  std::vector<SeriesResult> results;
  std::vector<std::size_t> truth;
  for (const auto &r : rankings) {
    std::printf("%s\n", ranking_json_line(r).c_str());
    if (r.labelled_best) {
      results.push_back(r.result);
      truth.push_back(*r.labelled_best);
    }
  }
  if (!results.empty())
    std::fprintf(stderr, "selection rate %.4f over %zu labelled series\n", selection_rate(results, truth),
                 results.size());
  return exit_ok;
}

int cmd_gradcheck(const GradcheckSpec &spec, const std::string &pooling) {
  std::vector<PoolingMode> modes;
  if (pooling == "all")
    modes.assign(std::begin(all_pooling_modes), std::end(all_pooling_modes));
  else
    modes.push_back(parse_pooling_mode(pooling));
  double worst = 0.0;
  for (auto mode : modes) {
    const auto r = run_gradcheck(spec, mode);
    std::printf("pooling %-7s params %zu max_rel_error %.3e (%s[%zu]) %.2fs\n", std::string(to_string(mode)).c_str(),
                r.parameters, r.max_rel_error, r.worst_tensor.c_str(), r.worst_index, r.seconds);
    worst = std::max(worst, r.max_rel_error);
  }
  std::printf("max relative error %.3e\n", worst);
  return worst <= 1e-4 ? exit_ok : exit_runtime;
}

struct AblateCommand {
  DataFlags data;
  TrainFlags train;
  std::optional<std::string> heldout;
  std::string split = "0.8,0.1,0.1";
  std::uint64_t split_seed = 1;
  std::size_t deep_dim = 32;
  std::size_t common_dim = 16;

  int run() const {
    const auto manifest = load_manifest(data.manifest);
    Manifest train_m, heldout_m;
    if (heldout) {
      train_m = manifest;
      heldout_m = load_manifest(*heldout);
    } else {
      auto parts = split_by_series(manifest, {parse_fractions(split), split_seed});
      train_m = std::move(parts[0]);
      heldout_m = std::move(parts[2]);
    }
    ViewConfig full;
    full.deep_dim = deep_dim;
    full.common_dim = common_dim;
    const auto opts = data.options();
    const auto tr = build_dataset(train_m, full, opts);
    const auto ho = build_dataset(heldout_m, full, opts);
    const auto rows = run_ablation(tr, ho, full, train.cfg, three_view_combinations(), all_pooling_modes);
    std::printf("%s", format_ablation_table(rows).c_str());
    return exit_ok;
  }
};

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Series photo selection with multi-view graph learning"};
  app.set_config("--config", "", "Read options from an INI/TOML config file");
  app.require_subcommand(1);

  fs::path synth_out;
  SynthSpec synth_spec;
  std::size_t synth_size = 32;
  auto *synth = app.add_subcommand("synth", "Generate a synthetic series corpus");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--series", synth_spec.series, "Number of series")->capture_default_str();
  synth->add_option("--photos", synth_spec.photos, "Photos per series (2-8)")->capture_default_str();
  synth->add_option("--size", synth_size, "Image width and height")->capture_default_str();
  synth->add_option("--deep-dim", synth_spec.deep_dim, "Fabricated deep feature dimension")->capture_default_str();
  synth->add_option("--seed", synth_spec.seed, "Generator seed")->capture_default_str();

  DataFlags extract_data;
  ModelFlags extract_model;
  auto *extract = app.add_subcommand("extract", "Populate the feature cache for every image in a manifest");
  extract_data.add(extract);
  extract_model.add(extract);

  TrainCommand train_cmd;
  auto *train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd.data.add(train);
  train_cmd.model.add(train);
  train_cmd.train.add(train);
  train->add_option("--out", train_cmd.out, "Checkpoint path")->capture_default_str();
  train->add_option("--split", train_cmd.split, "Series-level train,val,test fractions")->capture_default_str();
  train->add_option("--split-seed", train_cmd.split_seed, "Seed of the series split")->capture_default_str();
  train->add_flag("--no-split", train_cmd.no_split, "Train on every pair of the manifest");
  train->add_option("--val-manifest", train_cmd.val_manifest, "Separate validation manifest");
  train->add_option("--resume", train_cmd.resume, "Continue from a checkpoint");
  train->add_flag("--quiet", train_cmd.quiet, "Suppress per-epoch lines");

  DataFlags eval_data;
  std::string eval_ckpt;
  auto *eval = app.add_subcommand("eval", "Print pairwise accuracy and F1 of a checkpoint");
  eval_data.add(eval);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required();

  DataFlags rank_data;
  std::string rank_ckpt;
  auto *rank = app.add_subcommand("rank", "Rank every series; prints one JSON object per series");
  rank_data.add(rank);
  rank->add_option("--checkpoint", rank_ckpt, "Checkpoint path")->required();

  GradcheckSpec gc_spec;
  std::string gc_pooling = "all";
  auto *gradcheck = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  gradcheck->add_option("--seed", gc_spec.seed, "Seed")->capture_default_str();
  gradcheck->add_option("--pooling", gc_pooling, "Pooling mode or 'all'")->capture_default_str();
  gradcheck->add_option("--eps", gc_spec.eps, "Finite-difference step")->capture_default_str();

  AblateCommand ablate_cmd;
  auto *ablate = app.add_subcommand("ablate", "Pooling mode x view set grid on held-out pairs");
  ablate_cmd.data.add(ablate);
  ablate_cmd.train.add(ablate);
  ablate->add_option("--heldout", ablate_cmd.heldout, "Held-out manifest (default: test split of --manifest)");
  ablate->add_option("--split", ablate_cmd.split, "Series-level fractions when no --heldout")->capture_default_str();
  ablate->add_option("--split-seed", ablate_cmd.split_seed, "Seed of the series split")->capture_default_str();
  ablate->add_option("--deep-dim", ablate_cmd.deep_dim, "Deep feature dimension")->capture_default_str();
  ablate->add_option("--common-dim", ablate_cmd.common_dim, "Common view dimension C")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return exit_validation;
  }

  try {
    if (*synth) {
      synth_spec.width = synth_spec.height = synth_size;
      return cmd_synth(synth_out, synth_spec);
    }
    if (*extract)
      return cmd_extract(extract_data, extract_model);
    if (*train)
      return train_cmd.run(*train);
    if (*eval)
      return cmd_eval(eval_data, eval_ckpt);
    if (*rank)
      return cmd_rank(rank_data, rank_ckpt);
    if (*gradcheck)
      return cmd_gradcheck(gc_spec, gc_pooling);
    if (*ablate)
      return ablate_cmd.run();
  } catch (const ValidationError &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_validation;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return exit_runtime;
  }
  return exit_validation;
}

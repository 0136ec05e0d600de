#pragma once

// End-to-end drivers shared by the CLI and the acceptance suite: a resumable
// training run, the pooling x view-set ablation grid, and per-series ranking.

#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spsmvg/checkpoint.hpp"
#include "spsmvg/dataset.hpp"
#include "spsmvg/ranking.hpp"
#include "spsmvg/training.hpp"

namespace spsmvg {

struct EpochReport {
  std::size_t epoch = 0;
  double lr = 0.0;
  Metrics train;
  std::optional<Metrics> validation;
};

inline std::string format_epoch_line(const EpochReport &r) {
  char buf[256];
  int n = std::snprintf(buf, sizeof(buf), "epoch %zu lr %.6g loss %.6f acc %.4f f1 %.4f", r.epoch, r.lr, r.train.loss,
                        r.train.accuracy, r.train.f1);
  std::string out(buf, static_cast<std::size_t>(n));
  if (r.validation) {
    n = std::snprintf(buf, sizeof(buf), " val_loss %.6f val_acc %.4f val_f1 %.4f", r.validation->loss,
                      r.validation->accuracy, r.validation->f1);
    out.append(buf, static_cast<std::size_t>(n));
  }
  return out;
}

inline Checkpoint make_checkpoint(const ModelConfig &model, const TrainConfig &train, std::size_t epochs_done,
                                  const ModelParams &params) {
  return {model, train, static_cast<std::uint32_t>(epochs_done), shuffle_seed(train.seed, epochs_done), params};
}

struct TrainRun {
  ModelParams params;
  std::size_t epochs_done = 0;
  std::vector<EpochReport> history;
};

/// Trains from scratch, or continues `resume` up to train.epochs. Resuming is
/// exact because every epoch's shuffle derives from (seed, epoch) and the
/// parameters at an epoch boundary are already at checkpoint precision.
inline TrainRun run_training(const Dataset &train_set, const Dataset *validation, const ModelConfig &model,
                             const TrainConfig &train, const Checkpoint *resume = nullptr,
                             const std::function<void(const EpochReport &)> &on_epoch = {}) {
  model.validate();
  train.validate();
  TrainRun run;
  if (resume) {
    if (!(resume->model.hyper == model.hyper) || resume->model.views.views != model.views.views)
      throw ConfigError("resume checkpoint was trained with a different architecture");
    if (resume->train.seed != train.seed)
      throw ConfigError("resume checkpoint was trained with a different seed");
    run.params = resume->params;
    run.epochs_done = resume->epoch;
  } else {
    run.params = init_params(model, train.seed);
  }
  for (std::size_t epoch = run.epochs_done; epoch < train.epochs; ++epoch) {
    EpochReport r;
    r.epoch = epoch;
    r.lr = lr_schedule(epoch, train);
    r.train = train_epoch(train_set, run.params, model, train, epoch);
    if (validation && !validation->empty())
      r.validation = evaluate(*validation, run.params, model);
    run.epochs_done = epoch + 1;
    if (on_epoch)
      on_epoch(r);
    run.history.push_back(std::move(r));
  }
  return run;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct AblationRow {
  PoolingMode pooling;
  std::vector<ViewKind> views;
  Metrics heldout;
};

/// Three-view combinations of the deep view with two shallow views.
inline std::vector<std::vector<ViewKind>> three_view_combinations() {
  using K = ViewKind;
  return {{K::deep, K::color, K::hsv}, {K::deep, K::color, K::sift}, {K::deep, K::hsv, K::sift}};
}

inline std::vector<AblationRow> run_ablation(const Dataset &train_full, const Dataset &heldout_full,
                                             const ViewConfig &full_views, const TrainConfig &train,
                                             const std::vector<std::vector<ViewKind>> &view_sets,
                                             std::span<const PoolingMode> modes,
                                             const std::function<void(const AblationRow &)> &on_row = {}) {
  std::vector<AblationRow> rows;
  for (auto mode : modes) {
    for (const auto &views : view_sets) {
      ViewConfig vc = full_views;
      vc.views = views;
      const auto model = ModelConfig::defaults(vc, mode);
      const auto tr = select_views(train_full, full_views.views, views);
      const auto ho = select_views(heldout_full, full_views.views, views);
      const auto run = run_training(tr, nullptr, model, train);
      rows.push_back({mode, views, evaluate(ho, run.params, model)});
      if (on_row)
        on_row(rows.back());
    }
  }
  return rows;
}

inline std::string view_set_label(const std::vector<ViewKind> &views) {
  std::string out;
  for (auto k : views) {
    if (!out.empty())
      out += " + ";
    switch (k) {
    case ViewKind::deep: out += "V"; break;
    case ViewKind::color: out += "C"; break;
    case ViewKind::hsv: out += "H"; break;
    case ViewKind::sift: out += "S"; break;
    }
  }
  return out;
}

/// Pooling | Views | Accuracy | F1, one block per pooling mode, percentages.
inline std::string format_ablation_table(const std::vector<AblationRow> &rows) {
  std::string out = "| Pooling | Views     | Accuracy | F1 Score |\n|---------|-----------|----------|----------|\n";
  char buf[128];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const bool first_of_block = i == 0 || rows[i - 1].pooling != rows[i].pooling;
    const std::string mode = first_of_block ? std::string(to_string(rows[i].pooling)) : "";
    std::snprintf(buf, sizeof(buf), "| %-7s | %-9s | %8.3f | %8.3f |\n", mode.c_str(),
                  view_set_label(rows[i].views).c_str(), 100.0 * rows[i].heldout.accuracy, 100.0 * rows[i].heldout.f1);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ranking
// ---------------------------------------------------------------------------

struct SeriesRanking {
  std::string series_id;
  std::vector<std::string> image_ids;
  SeriesResult result;
  std::optional<std::size_t> labelled_best;
};

inline std::vector<SeriesRanking> rank_dataset(const Dataset &d, const ModelParams &params, const ModelConfig &cfg) {
  const auto members = series_members(d);
  const auto winners = labelled_winners(d);
  std::vector<SeriesRanking> out;
  for (std::size_t s = 0; s < members.size(); ++s) {
    if (members[s].size() < 2)
      continue;
    std::vector<std::vector<RawView>> photos;
    SeriesRanking r;
    r.series_id = d.series_ids[s];
    for (auto img : members[s]) {
      photos.push_back(d.images[img]);
      r.image_ids.push_back(d.image_ids[img]);
    }
    r.result = rank_series(pairwise_probs(photos, params, cfg));
    r.labelled_best = winners[s];
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string ranking_json_line(const SeriesRanking &r) {
  nlohmann::json j;
  j["series_id"] = r.series_id;
  j["images"] = r.image_ids;
  j["scores"] = r.result.scores;
  j["order"] = r.result.order;
  j["best"] = r.result.best;
  j["best_image"] = r.image_ids[r.result.best];
  if (!r.result.converged)
    j["converged"] = false;
  return j.dump();
}

} // namespace spsmvg

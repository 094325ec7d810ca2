#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adagcd/pipeline/checkpoint.hpp"
#include "adagcd/pipeline/evaluate.hpp"
#include "adagcd/pipeline/metrics.hpp"
#include "adagcd/pipeline/model.hpp"
#include "adagcd/pipeline/optimizer.hpp"

namespace adagcd {

struct TrainResult {
  std::unique_ptr<Model> model;
  DataBundle data;
  std::vector<StepMetrics> steps;
  std::vector<StepMetrics> epochs;  // per-epoch means
  std::vector<std::string> history;  // records as written to the log
  std::optional<ClusterReport> report;
  std::size_t eval_k = 0;
};

// Losses of one training batch, built on `t`.
struct BatchLosses {
  Var l_rec;
  Var l_sup;
  Var l_unsup;
  Var overall;
  Var sparsity;
  Var objective;
  double kept = 0.0;
  bool has_labeled = false;
};

inline BatchLosses batch_losses(Tape& t, const Model& model, const DataBundle& data,
                                const std::vector<InstanceId>& batch, std::size_t epoch) {
  const PipelineConfig& cfg = model.config();
  std::vector<Var> z1, z2, recs, keep_probs;
  std::vector<Var> sup_rows1, sup_rows2;
  std::vector<ClassId> sup_labels;
  double kept = 0.0;
  for (InstanceId id : batch) {
    const auto uid = static_cast<std::uint64_t>(id);
    const auto views = model.training_views(data, id, derive_seed(cfg.seed, {0xA06, epoch, uid}));
    for (int v = 0; v < 2; ++v) {
      const FeatureVars fv = model.encode(t, v == 0 ? views.first : views.second);
      const InstanceOutput out =
          model.forward(t, fv, derive_seed(cfg.seed, {0x7A41, epoch, uid, static_cast<std::uint64_t>(v)}),
                        cfg.clusterer.selection_mode);
      (v == 0 ? z1 : z2).push_back(out.z);
      recs.push_back(out.l_rec);
      keep_probs.push_back(out.slots.keep_prob);
      for (double m : out.slots.keep_mask.value().data()) kept += m;
    }
    if (data.split.is_labeled(id)) {
      sup_rows1.push_back(z1.back());
      sup_rows2.push_back(z2.back());
      sup_labels.push_back(data.split.class_of(id));
    }
  }
  BatchLosses l;
  l.kept = kept / static_cast<double>(2 * batch.size());
  l.l_rec = ad::mean(ad::concat_rows(recs));
  l.l_unsup = unsup_contrastive(ad::concat_rows(z1), ad::concat_rows(z2), cfg.loss.temperature_u);
  l.has_labeled = !sup_labels.empty();
  if (l.has_labeled) {
    std::vector<Var> rows = sup_rows1;
    rows.insert(rows.end(), sup_rows2.begin(), sup_rows2.end());
    std::vector<ClassId> labels = sup_labels;
    labels.insert(labels.end(), sup_labels.begin(), sup_labels.end());
    l.l_sup = sup_contrastive(ad::concat_rows(rows), labels, cfg.loss.temperature_s);
  } else {
    l.l_sup = t.constant(Matrix(1, 1, 0.0));
  }
  l.overall = overall_loss(t, l.l_rec, l.l_sup, l.l_unsup, cfg.loss);
  l.sparsity = cfg.clusterer.sparsity_weight > 0.0
                   ? ad::scale(ad::mean(ad::concat_rows(keep_probs)), cfg.clusterer.sparsity_weight)
                   : t.constant(Matrix(1, 1, 0.0));
  l.objective = ad::add(l.overall, l.sparsity);
  return l;
}

inline void check_finite(const BatchLosses& l, std::size_t epoch, std::size_t step) {
  const std::pair<const char*, const Var*> parts[] = {
      {"l_rec", &l.l_rec}, {"l_sup", &l.l_sup}, {"l_unsup", &l.l_unsup}, {"sparsity", &l.sparsity}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v->scalar()))
      throw NumericError(std::string("non-finite loss component ") + name + " at epoch " + std::to_string(epoch) +
                         " step " + std::to_string(step));
}

using EpochCallback = std::function<void(const StepMetrics&)>;

// Trains from scratch. Per-epoch records go to output.log (and per-step ones
// when output.log_steps is set); a checkpoint is written every
// output.checkpoint_every epochs and after the final evaluation.
inline TrainResult train(const PipelineConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  TrainResult res;
  res.data = load_data(cfg);
  res.model = std::make_unique<Model>(cfg);
  Model& model = *res.model;
  std::vector<Parameter*> params;
  for (Parameter* p : model.store().all())
    if (p->trainable) params.push_back(p);
  Optimizer opt(cfg.optim);

  const std::vector<InstanceId> ids = res.data.ids();
  if (ids.size() < 2) throw ConfigError("training needs at least 2 instances");
  const std::size_t B = std::min(cfg.optim.batch_size, ids.size());
  std::size_t batches_per_epoch = ids.size() / B;
  if (ids.size() % B >= 2) ++batches_per_epoch;  // a trailing batch of one is dropped
  const std::size_t total_steps = batches_per_epoch * cfg.optim.epochs;

  auto log = [&](const Record& r) {
    res.history.push_back(r.line());
    append_line(cfg.output.log, r.line());
  };

  std::size_t global_step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.optim.epochs; ++epoch) {
    std::vector<InstanceId> order = ids;
    Rng shuffle_rng(derive_seed(cfg.seed, {0x5EED, epoch}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::vector<StepMetrics> epoch_steps;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const auto first = order.begin() + static_cast<std::ptrdiff_t>(b * B);
      const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min((b + 1) * B, order.size()));
      const std::vector<InstanceId> batch(first, last);
      const double lr = scheduled_lr(cfg.optim, global_step, total_steps);

      Tape t(true);
      model.store().zero_grad();
      const BatchLosses l = batch_losses(t, model, res.data, batch, epoch);
      check_finite(l, epoch, b);
      t.backward(l.objective);
      opt.step(params, lr);

      StepMetrics s;
      s.epoch = epoch;
      s.step = global_step;
      s.l_rec = l.l_rec.scalar();
      s.l_sup = l.l_sup.scalar();
      s.l_unsup = l.l_unsup.scalar();
      s.overall = l.overall.scalar();
      s.sparsity = l.sparsity.scalar();
      s.objective = l.objective.scalar();
      s.kept = l.kept;
      s.lr = lr;
      s.has_labeled = l.has_labeled;
      res.steps.push_back(s);
      epoch_steps.push_back(s);
      if (cfg.output.log_steps) append_line(cfg.output.log, s.record("step").line());
      ++global_step;
    }
    const StepMetrics e = average(epoch_steps, epoch);
    res.epochs.push_back(e);
    log(e.record("epoch"));
    if (on_epoch) on_epoch(e);
    const bool last_epoch = epoch == cfg.optim.epochs;
    if (!cfg.output.checkpoint.empty() && cfg.output.checkpoint_every > 0 &&
        (epoch % cfg.output.checkpoint_every == 0 || last_epoch))
      save_checkpoint(model, epoch, res.history, cfg.output.checkpoint);
  }

  if (cfg.output.eval_after_train) {
    res.eval_k = default_k(cfg, res.data.split);
    res.report = evaluate(model, res.data, res.eval_k);
    log(report_record(*res.report, res.eval_k));
    if (!cfg.output.checkpoint.empty())
      save_checkpoint(model, cfg.optim.epochs, res.history, cfg.output.checkpoint);
  }
  return res;
}

}  // namespace adagcd

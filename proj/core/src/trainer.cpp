#include "mstdp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mstdp/rng.hpp"

namespace mstdp {

namespace {

double batch_loss_and_grads(const Model& model, const std::vector<TrainSample>& samples,
                            const std::vector<std::size_t>& batch, bool with_grads) {
  Tape t;
  Value table = model.location_table(t);
  Value acc;
  for (std::size_t i : batch) {
    Value l = model.sample_loss(t, table, samples[i]);
    acc = acc.valid() ? t.add(acc, l) : l;
  }
  Value loss = t.scale(acc, 1.0 / static_cast<double>(batch.size()));
  double v = loss.val()(0, 0);
  if (!std::isfinite(v)) throw NumericError("training loss is not finite");
  if (with_grads) t.backward(loss);
  return v;
}

} // namespace

double evaluate_loss(const Model& model, const std::vector<TrainSample>& samples) {
  if (samples.empty()) throw ContractError("evaluate_loss: no samples");
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  return batch_loss_and_grads(model, samples, all, false);
}

double next_day_slot_accuracy(const Model& model, const std::vector<TrainSample>& samples,
                              const Tensor& frozen_table) {
  if (samples.empty()) throw ContractError("accuracy: no samples");
  std::int64_t hit = 0, total = 0;
  int T = model.config().T;
  for (const auto& s : samples) {
    Model::Decoded d = model.decode_chains(s.window, frozen_table);
    DurationChain dur = Model::repair_durations(d.raw_durations, T);
    std::vector<CellId> pred = recouple(d.loc, dur, T);
    std::vector<CellId> actual = recouple(s.target.loc, s.target.dur, T);
    for (int i = 0; i < T; ++i) {
      hit += pred[static_cast<std::size_t>(i)] == actual[static_cast<std::size_t>(i)] ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

TrainResult train_model(Model& model, const std::vector<TrainSample>& train,
                        const std::vector<TrainSample>& val, const TrainConfig& cfg,
                        std::ostream* log_csv) {
  if (train.empty()) throw ContractError("train: no training samples");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ContractError("train: bad schedule");
  if (cfg.use_clip && cfg.clip_norm <= 0) throw ContractError("train: bad clip norm");

  AdamConfig adam;
  adam.lr = cfg.lr;

  TrainResult result;
  ParameterStore best;
  bool have_best = false;
  if (log_csv) *log_csv << "epoch,train_loss,val_acc\n";

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = make_rng(cfg.seed, 3'000'000 + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(at),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      model.params().zero_grads();
      loss_sum += batch_loss_and_grads(model, train, batch, true);
      ++n_batches;
      if (cfg.use_clip) {
        double norm = model.params().grad_norm();
        if (norm > cfg.clip_norm) model.params().scale_grads(cfg.clip_norm / norm);
      }
      model.params().adam_step(adam);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(n_batches);
    if (!val.empty()) {
      Tensor frozen = model.location_table_frozen();
      entry.val_acc = next_day_slot_accuracy(model, val, frozen);
    }
    result.log.push_back(entry);
    if (log_csv)
      *log_csv << entry.epoch << ',' << entry.train_loss << ',' << entry.val_acc << '\n';

    bool improved = !have_best || (val.empty() ? true : entry.val_acc > result.best_val_acc);
    if (improved) {
      best = model.params();
      have_best = true;
      result.best_val_acc = entry.val_acc;
      result.best_epoch = epoch;
    } else if (cfg.patience > 0 && epoch - result.best_epoch >= cfg.patience) {
      break;
    }
  }

  model.params() = std::move(best);
  return result;
}

void save_checkpoint(const std::filesystem::path& file, const Model& model,
                     const std::string& meta_text) {
  save_params(model.params(), config_to_text(model.config()), meta_text, file);
}

Model load_checkpoint(const std::filesystem::path& file, HeteroGraph graph, NodeFeatures feats) {
  LoadedParams loaded = load_params(file);
  ModelConfig cfg = config_from_text(loaded.config_text);
  return Model(cfg, std::move(graph), std::move(feats), std::move(loaded.store));
}

} // namespace mstdp

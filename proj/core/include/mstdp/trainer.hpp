#pragma once

#include <ostream>

#include "mstdp/model.hpp"

namespace mstdp {

struct TrainConfig {
  double lr = 1e-4;
  int epochs = 50;
  int batch_size = 32;
  int patience = 10; // epochs without val improvement before stopping; 0 disables
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
  bool use_clip = true;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  int best_epoch = -1;
  double best_val_acc = 0.0;
  std::vector<EpochLog> log;
};

// Teacher-forced Adam training with per-epoch validation accuracy. The model
// is left holding the best-validation parameters. Throws NumericError if the
// loss stops being finite. log_csv, when given, receives one line per epoch.
TrainResult train_model(Model& model, const std::vector<TrainSample>& train,
                        const std::vector<TrainSample>& val, const TrainConfig& cfg,
                        std::ostream* log_csv = nullptr);

// Mean batch loss without updating parameters.
double evaluate_loss(const Model& model, const std::vector<TrainSample>& samples);

// Fraction of matching slots over full greedy next-day predictions.
double next_day_slot_accuracy(const Model& model, const std::vector<TrainSample>& samples,
                              const Tensor& frozen_table);

void save_checkpoint(const std::filesystem::path& file, const Model& model,
                     const std::string& meta_text);
Model load_checkpoint(const std::filesystem::path& file, HeteroGraph graph, NodeFeatures feats);

} // namespace mstdp

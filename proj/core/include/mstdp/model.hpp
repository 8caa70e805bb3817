#pragma once

#include <array>
#include <optional>

#include "mstdp/dataset.hpp"
#include "mstdp/geo_graph.hpp"
#include "mstdp/layers.hpp"
#include "mstdp/trajectory.hpp"

namespace mstdp {

struct ModelConfig {
  int T = 24;
  int max_chain_len = 24;
  int d_el = 512;  // location embedding width (graph output)
  int d_et = 512;  // duration embedding width
  int d_hl = 1024; // daily location encoder width
  int d_ht = 512;  // daily duration encoder width
  int d_zl = 0;    // weekly location width; 0 means d_hl
  int d_zt = 0;    // weekly duration width; 0 means d_ht
  int d_region = 64;
  int n_heads = 8;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int n_gnn_layers = 2;
  int ff_mult = 2;
  double lambda = 1.0;
  double gat_slope = 0.2;
  double fuse_slope = 0.01;

  ModelConfig resolved() const; // fills the 0 defaults
  void validate() const;        // throws ContractError
};

std::string config_to_text(const ModelConfig& cfg);
ModelConfig config_from_text(const std::string& text);

// Decoupled seven-day window, ready for encoding. weekdays are defined for
// absent days too (from the day index).
struct WindowChains {
  std::array<std::optional<DecoupledDay>, 7> days;
  std::array<int, 7> weekdays{};

  int present_count() const;
};

WindowChains window_chains(const HistoryWindow& window, const DatasetHeader& header);

// One supervised example: predict day (window.end + 1) from the window.
struct TrainSample {
  UserId user = 0;
  int target_day = 0;
  int target_weekday = 0;
  WindowChains window;
  DecoupledDay target;
};

// Samples whose target day lies in `days`. Windows may reach back before the
// range. Users without any window day are skipped.
std::vector<TrainSample> make_samples(const Histories& histories, DayRange days,
                                      const DatasetHeader& header);

class Model {
 public:
  Model(ModelConfig cfg, HeteroGraph graph, NodeFeatures feats, std::uint64_t seed);
  Model(ModelConfig cfg, HeteroGraph graph, NodeFeatures feats, ParameterStore store);

  const ModelConfig& config() const { return cfg_; }
  const HeteroGraph& graph() const { return graph_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  int n_cells() const { return graph_.n_cells; }
  // Input vocabulary: cells, then start / end / padding tokens.
  int in_sos() const { return n_cells(); }
  int in_eos() const { return n_cells() + 1; }
  int in_pad() const { return n_cells() + 2; }
  // Output classes: cells, then end-of-chain.
  int out_eos() const { return n_cells(); }
  int n_out_classes() const { return n_cells() + 1; }

  struct GnnProbe {
    std::vector<Value> alphas;            // one per layer per flow level
    std::vector<std::vector<int>> segs;   // destination segment of each entry
    std::vector<int> n_segs;
  };

  // Multi-scale graph pass over all nodes; rows are cells then admins.
  Value graph_embed(Tape& t, GnnProbe* probe = nullptr) const;
  // Cell embeddings plus the three special token rows: (C + 3) x d_el.
  Value location_table(Tape& t, GnnProbe* probe = nullptr) const;
  Tensor location_table_frozen() const;

  Value duration_embedding(Tape& t, const DurationChain& dur) const;
  Value daily_encode_loc(Tape& t, Value emb, AttentionProbe* probe = nullptr) const;
  Value daily_encode_dur(Tape& t, Value emb, AttentionProbe* probe = nullptr) const;

  struct WeeklyOut {
    Value z_loc;
    Value z_dur;
  };
  // Day vectors may hold arbitrary values at absent positions; the output
  // depends only on present days.
  WeeklyOut weekly_encode(Tape& t, const std::array<Value, 7>& h_loc,
                          const std::array<Value, 7>& h_dur, const std::array<bool, 7>& present,
                          const std::array<int, 7>& weekdays,
                          AttentionProbe* probe = nullptr) const;
  WeeklyOut encode_window(Tape& t, Value loc_table, const WindowChains& window,
                          AttentionProbe* probe = nullptr) const;

  // Teacher-forced decoder logits for [SOS] + prefix: (|prefix|+1) rows over
  // n_out_classes() columns.
  Value spatial_logits(Tape& t, Value z_loc, Value loc_table, const std::vector<CellId>& prefix,
                       AttentionProbe* probe = nullptr) const;
  // Scalar slot counts for each predicted location embedding row.
  Value temporal_durations(Tape& t, Value z_dur, Value pred_emb,
                           AttentionProbe* probe = nullptr) const;

  // Cross entropy of the location chain plus lambda times the duration loss.
  Value sample_loss(Tape& t, Value loc_table, const TrainSample& sample) const;

  struct Decoded {
    LocationChain loc;
    std::vector<double> raw_durations;
    bool truncated = false;
  };
  Decoded decode_chains(const WindowChains& window, const Tensor& frozen_table) const;

  // Clamps to at least one slot each and rounds so the total is exactly T.
  static DurationChain repair_durations(const std::vector<double>& raw, int T);

  DailyTrajectory predict_next_day(const UserHistory& history, int k, const Tensor& frozen_table,
                                   const DatasetHeader& header) const;
  // Seven days ahead; each day conditions on earlier predictions.
  std::vector<DailyTrajectory> predict_next_week(const UserHistory& history, int k,
                                                 const Tensor& frozen_table,
                                                 const DatasetHeader& header) const;

 private:
  ModelConfig cfg_;
  HeteroGraph graph_;
  // Mutable because const forward passes register tape leaves that later
  // receive gradients.
  mutable ParameterStore store_;

  // Precomputed graph structure.
  std::vector<std::shared_ptr<const SparseTensor>> sage_mats_; // adj_cell, adj_admin, inclusion
  struct FlowLevelData {
    std::vector<int> entry_src;  // message source per entry (edges then selves)
    std::vector<int> entry_dst;  // destination per entry
    std::vector<int> seg;        // compact destination segment per entry
    int n_segments = 0;
    std::size_t n_edges = 0;     // entries [0, n_edges) are non-self edges
    Tensor feats;                // (n_edges + level size) x 24, log1p counts
  };
  std::array<FlowLevelData, 2> flow_levels_; // cell level, admin level
  Tensor occupancy_; // (C + A) x 24, log1p

  Tensor pe_hl_, pe_ht_, pe_zl_, pe_zt_;

  void build_structures(const NodeFeatures& feats);
  void init_params(std::uint64_t seed);
  void check_params() const;
  Value gat_level(Tape& t, Value x, int layer, int level, GnnProbe* probe) const;
  Value encoder_stack(Tape& t, Value x, const std::string& prefix, const Tensor* keep_mask,
                      AttentionProbe* probe) const;
};

} // namespace mstdp

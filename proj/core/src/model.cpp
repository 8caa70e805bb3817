#include "mstdp/model.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "mstdp/rng.hpp"

namespace mstdp {

using ordered_json = nlohmann::ordered_json;

ModelConfig ModelConfig::resolved() const {
  ModelConfig c = *this;
  if (c.d_zl == 0) c.d_zl = c.d_hl;
  if (c.d_zt == 0) c.d_zt = c.d_ht;
  return c;
}

void ModelConfig::validate() const {
  ModelConfig c = resolved();
  if (c.T != 24 && c.T != 48) throw ContractError("config: T must be 24 or 48");
  if (c.max_chain_len < 1 || c.max_chain_len > c.T)
    throw ContractError("config: max_chain_len must be in [1, T]");
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw ContractError(std::string("config: ") + what + " must be positive");
  };
  positive(c.d_el, "d_el");
  positive(c.d_et, "d_et");
  positive(c.d_hl, "d_hl");
  positive(c.d_ht, "d_ht");
  positive(c.d_zl, "d_zl");
  positive(c.d_zt, "d_zt");
  positive(c.d_region, "d_region");
  positive(c.n_heads, "n_heads");
  positive(c.n_enc_layers, "n_enc_layers");
  positive(c.n_dec_layers, "n_dec_layers");
  positive(c.n_gnn_layers, "n_gnn_layers");
  positive(c.ff_mult, "ff_mult");
  for (int d : {c.d_hl, c.d_ht, c.d_zl, c.d_zt}) {
    if (d % 2 != 0) throw ContractError("config: encoder widths must be even");
    if (d % c.n_heads != 0)
      throw ContractError("config: encoder widths must be divisible by n_heads");
  }
  if (c.lambda < 0) throw ContractError("config: lambda must be non-negative");
  if (c.gat_slope <= 0 || c.gat_slope >= 1 || c.fuse_slope <= 0 || c.fuse_slope >= 1)
    throw ContractError("config: activation slopes must be in (0, 1)");
}

std::string config_to_text(const ModelConfig& cfg) {
  ordered_json j;
  j["T"] = cfg.T;
  j["max_chain_len"] = cfg.max_chain_len;
  j["d_el"] = cfg.d_el;
  j["d_et"] = cfg.d_et;
  j["d_hl"] = cfg.d_hl;
  j["d_ht"] = cfg.d_ht;
  j["d_zl"] = cfg.d_zl;
  j["d_zt"] = cfg.d_zt;
  j["d_region"] = cfg.d_region;
  j["n_heads"] = cfg.n_heads;
  j["n_enc_layers"] = cfg.n_enc_layers;
  j["n_dec_layers"] = cfg.n_dec_layers;
  j["n_gnn_layers"] = cfg.n_gnn_layers;
  j["ff_mult"] = cfg.ff_mult;
  j["lambda"] = cfg.lambda;
  j["gat_slope"] = cfg.gat_slope;
  j["fuse_slope"] = cfg.fuse_slope;
  return j.dump(2);
}

ModelConfig config_from_text(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ContractError("config: bad json: " + std::string(e.what()));
  }
  ModelConfig cfg;
  try {
    cfg.T = j.at("T").get<int>();
    cfg.max_chain_len = j.at("max_chain_len").get<int>();
    cfg.d_el = j.at("d_el").get<int>();
    cfg.d_et = j.at("d_et").get<int>();
    cfg.d_hl = j.at("d_hl").get<int>();
    cfg.d_ht = j.at("d_ht").get<int>();
    cfg.d_zl = j.at("d_zl").get<int>();
    cfg.d_zt = j.at("d_zt").get<int>();
    cfg.d_region = j.at("d_region").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.n_enc_layers = j.at("n_enc_layers").get<int>();
    cfg.n_dec_layers = j.at("n_dec_layers").get<int>();
    cfg.n_gnn_layers = j.at("n_gnn_layers").get<int>();
    cfg.ff_mult = j.at("ff_mult").get<int>();
    cfg.lambda = j.at("lambda").get<double>();
    cfg.gat_slope = j.at("gat_slope").get<double>();
    cfg.fuse_slope = j.at("fuse_slope").get<double>();
  } catch (const std::exception& e) {
    throw ContractError("config: missing field: " + std::string(e.what()));
  }
  cfg.validate();
  return cfg;
}

int WindowChains::present_count() const {
  int n = 0;
  for (const auto& d : days) n += d.has_value() ? 1 : 0;
  return n;
}

WindowChains window_chains(const HistoryWindow& window, const DatasetHeader& header) {
  WindowChains wc;
  for (int i = 0; i < 7; ++i) {
    auto ui = static_cast<std::size_t>(i);
    wc.weekdays[ui] = header.weekday_of(window.end_day - 6 + i);
    if (window.present[ui]) wc.days[ui] = decouple(*window.days[ui]);
  }
  return wc;
}

std::vector<TrainSample> make_samples(const Histories& histories, DayRange days,
                                      const DatasetHeader& header) {
  std::vector<TrainSample> out;
  for (const auto& [user, hist] : histories) {
    for (int d = days.begin; d < days.end; ++d) {
      auto it = hist.days.find(d);
      if (it == hist.days.end()) continue;
      HistoryWindow w = history_window(hist, d - 1);
      if (w.present_count() == 0) continue;
      TrainSample s;
      s.user = user;
      s.target_day = d;
      s.target_weekday = header.weekday_of(d);
      s.window = window_chains(w, header);
      s.target = decouple(it->second);
      out.push_back(std::move(s));
    }
  }
  return out;
}

namespace {

double log1p_count(std::int64_t c) { return std::log1p(static_cast<double>(c)); }

std::shared_ptr<const SparseTensor> row_mean_matrix(
    const std::vector<std::pair<int, int>>& neighbor_of, int n) {
  // neighbor_of holds directed (row, col) entries; each row averages its cols.
  std::vector<int> deg(static_cast<std::size_t>(n), 0);
  for (auto [r, c] : neighbor_of) {
    (void)c;
    deg[static_cast<std::size_t>(r)] += 1;
  }
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(neighbor_of.size());
  for (auto [r, c] : neighbor_of)
    trips.emplace_back(r, c, 1.0 / deg[static_cast<std::size_t>(r)]);
  auto m = std::make_shared<SparseTensor>(n, n);
  m->setFromTriplets(trips.begin(), trips.end());
  return m;
}

} // namespace

Model::Model(ModelConfig cfg, HeteroGraph graph, NodeFeatures feats, std::uint64_t seed)
    : cfg_(cfg.resolved()), graph_(std::move(graph)) {
  cfg_.validate();
  graph_.validate();
  build_structures(feats);
  init_params(seed);
}

Model::Model(ModelConfig cfg, HeteroGraph graph, NodeFeatures feats, ParameterStore store)
    : cfg_(cfg.resolved()), graph_(std::move(graph)), store_(std::move(store)) {
  cfg_.validate();
  graph_.validate();
  build_structures(feats);
  check_params();
}

void Model::build_structures(const NodeFeatures& feats) {
  int C = graph_.n_cells;
  int A = graph_.n_admins;
  int N = C + A;
  if (feats.cell_occupancy.size() != static_cast<std::size_t>(C) ||
      feats.admin_occupancy.size() != static_cast<std::size_t>(A))
    throw ContractError("model: occupancy size does not match graph");

  occupancy_ = Tensor::Zero(N, 24);
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < 24; ++h)
      occupancy_(c, h) = log1p_count(feats.cell_occupancy[static_cast<std::size_t>(c)]
                                                         [static_cast<std::size_t>(h)]);
  for (int a = 0; a < A; ++a)
    for (int h = 0; h < 24; ++h)
      occupancy_(C + a, h) = log1p_count(feats.admin_occupancy[static_cast<std::size_t>(a)]
                                                              [static_cast<std::size_t>(h)]);

  std::vector<std::pair<int, int>> rel;
  for (auto [a, b] : graph_.cell_adj) {
    rel.emplace_back(a, b);
    rel.emplace_back(b, a);
  }
  sage_mats_.push_back(row_mean_matrix(rel, N));
  rel.clear();
  for (auto [a, b] : graph_.admin_adj) {
    rel.emplace_back(C + a, C + b);
    rel.emplace_back(C + b, C + a);
  }
  sage_mats_.push_back(row_mean_matrix(rel, N));
  rel.clear();
  for (auto [c, a] : graph_.inclusion) {
    rel.emplace_back(c, C + a);
    rel.emplace_back(C + a, c);
  }
  sage_mats_.push_back(row_mean_matrix(rel, N));

  for (int level = 0; level < 2; ++level) {
    FlowLevelData& fl = flow_levels_[static_cast<std::size_t>(level)];
    const auto& edges = level == 0 ? graph_.cell_flow : graph_.admin_flow;
    int base = level == 0 ? 0 : C;
    int n_level = level == 0 ? C : A;
    std::vector<const FlowEdge*> self_edge(static_cast<std::size_t>(n_level), nullptr);
    std::vector<const FlowEdge*> plain;
    for (const auto& e : edges) {
      if (e.src == e.dst)
        self_edge[static_cast<std::size_t>(e.src)] = &e;
      else
        plain.push_back(&e);
    }
    fl.n_edges = plain.size();
    fl.n_segments = n_level;
    fl.feats = Tensor::Zero(static_cast<Eigen::Index>(plain.size()) + n_level, 24);
    for (std::size_t i = 0; i < plain.size(); ++i) {
      fl.entry_src.push_back(base + plain[i]->src);
      fl.entry_dst.push_back(base + plain[i]->dst);
      fl.seg.push_back(plain[i]->dst);
      for (int h = 0; h < 24; ++h)
        fl.feats(static_cast<Eigen::Index>(i), h) =
            log1p_count(plain[i]->counts[static_cast<std::size_t>(h)]);
    }
    for (int v = 0; v < n_level; ++v) {
      fl.entry_src.push_back(base + v);
      fl.entry_dst.push_back(base + v);
      fl.seg.push_back(v);
      if (self_edge[static_cast<std::size_t>(v)]) {
        for (int h = 0; h < 24; ++h)
          fl.feats(static_cast<Eigen::Index>(fl.n_edges) + v, h) =
              log1p_count(self_edge[static_cast<std::size_t>(v)]->counts
                                   [static_cast<std::size_t>(h)]);
      }
    }
  }

  pe_hl_ = sinusoidal_table(cfg_.T + 2, cfg_.d_hl);
  pe_ht_ = sinusoidal_table(cfg_.T + 2, cfg_.d_ht);
  // Weekly tokens combine two encodings: rows 0..6 mark the calendar weekday,
  // rows 7..13 mark the position inside the window. Weekday alone would make
  // a complete window of a perfectly periodic user look identical no matter
  // which day comes next.
  pe_zl_ = sinusoidal_table(14, cfg_.d_zl);
  pe_zt_ = sinusoidal_table(14, cfg_.d_zt);
}

namespace {

void create_gnn_params(ParameterStore& s, Rng& rng, const ModelConfig& cfg, int n_nodes,
                       int n_cells) {
  (void)n_cells;
  s.create("gnn.embed_region", n_nodes, cfg.d_region) = gaussian(n_nodes, cfg.d_region, 0.1, rng);
  for (int l = 0; l < cfg.n_gnn_layers; ++l) {
    int din = l == 0 ? cfg.d_region + 24 : cfg.d_el;
    int dout = cfg.d_el;
    std::string p = "gnn.l" + std::to_string(l);
    for (const char* rel : {".self", ".adj_cell", ".adj_admin", ".incl"})
      s.create(p + rel, din, dout) = xavier_uniform(din, dout, rng);
    for (const char* level : {".flow_cell", ".flow_admin"}) {
      s.create(p + level + ".wp", din, dout) = xavier_uniform(din, dout, rng);
      s.create(p + level + ".wq", din, dout) = xavier_uniform(din, dout, rng);
      s.create(p + level + ".wf", 24, dout) = xavier_uniform(24, dout, rng);
      s.create(p + level + ".a", 3 * dout, 1) = xavier_uniform(3 * dout, 1, rng);
    }
  }
}

void create_all_params(ParameterStore& s, Rng& rng, const ModelConfig& cfg, int n_nodes,
                       int n_cells) {
  create_gnn_params(s, rng, cfg, n_nodes, n_cells);
  s.create("vocab.special", 3, cfg.d_el) = gaussian(3, cfg.d_el, 0.1, rng);
  s.create("dur.embed", cfg.T, cfg.d_et) = gaussian(cfg.T, cfg.d_et, 0.1, rng);

  init_linear(s, rng, "daily_loc.in", cfg.d_el, cfg.d_hl);
  for (int i = 0; i < cfg.n_enc_layers; ++i)
    init_encoder_block(s, rng, "daily_loc.b" + std::to_string(i), cfg.d_hl, cfg.n_heads,
                       cfg.ff_mult);
  init_linear(s, rng, "daily_dur.in", cfg.d_et, cfg.d_ht);
  for (int i = 0; i < cfg.n_enc_layers; ++i)
    init_encoder_block(s, rng, "daily_dur.b" + std::to_string(i), cfg.d_ht, cfg.n_heads,
                       cfg.ff_mult);

  init_linear(s, rng, "weekly_loc.in", cfg.d_hl, cfg.d_zl);
  for (int i = 0; i < cfg.n_enc_layers; ++i)
    init_encoder_block(s, rng, "weekly_loc.b" + std::to_string(i), cfg.d_zl, cfg.n_heads,
                       cfg.ff_mult);
  init_linear(s, rng, "weekly_dur.in", cfg.d_ht + cfg.d_hl, cfg.d_zt);
  for (int i = 0; i < cfg.n_enc_layers; ++i)
    init_encoder_block(s, rng, "weekly_dur.b" + std::to_string(i), cfg.d_zt, cfg.n_heads,
                       cfg.ff_mult);

  init_linear(s, rng, "spd.in", cfg.d_el, cfg.d_hl);
  init_linear(s, rng, "spd.mem", cfg.d_zl, cfg.d_hl);
  for (int i = 0; i < cfg.n_dec_layers; ++i)
    init_decoder_block(s, rng, "spd.b" + std::to_string(i), cfg.d_hl, cfg.d_hl, cfg.n_heads,
                       cfg.ff_mult);
  init_linear(s, rng, "spd.out", cfg.d_hl, n_cells + 1);

  init_linear(s, rng, "tmd.adjust", cfg.d_el, cfg.d_ht);
  init_linear(s, rng, "tmd.in", cfg.d_ht + cfg.d_zt, cfg.d_ht);
  for (int i = 0; i < cfg.n_dec_layers; ++i)
    init_encoder_block(s, rng, "tmd.b" + std::to_string(i), cfg.d_ht, cfg.n_heads, cfg.ff_mult);
  init_linear(s, rng, "tmd.out", cfg.d_ht, 1);
}

} // namespace

void Model::init_params(std::uint64_t seed) {
  Rng rng = make_rng(seed, 42);
  create_all_params(store_, rng, cfg_, graph_.n_nodes(), graph_.n_cells);
}

void Model::check_params() const {
  ParameterStore expected;
  Rng rng = make_rng(0, 42);
  create_all_params(expected, rng, cfg_, graph_.n_nodes(), graph_.n_cells);
  auto have = store_.names();
  auto want = expected.names();
  if (have != want) throw ContractError("model: checkpoint parameters do not match config");
  for (const auto& name : want) {
    const Tensor& a = store_.value(name);
    const Tensor& b = expected.value(name);
    if (a.rows() != b.rows() || a.cols() != b.cols())
      throw ContractError("model: shape mismatch for parameter " + name);
  }
}

Value Model::gat_level(Tape& t, Value x, int layer, int level, GnnProbe* probe) const {
  const FlowLevelData& fl = flow_levels_[static_cast<std::size_t>(level)];
  std::string base =
      "gnn.l" + std::to_string(layer) + (level == 0 ? ".flow_cell" : ".flow_admin");
  Value hp = t.matmul(x, t.param(store_, base + ".wp"));
  Value hq = t.matmul(x, t.param(store_, base + ".wq"));
  Value fe = t.matmul(t.constant(fl.feats), t.param(store_, base + ".wf"));

  std::vector<int> edge_src(fl.entry_src.begin(),
                            fl.entry_src.begin() + static_cast<std::ptrdiff_t>(fl.n_edges));
  std::vector<int> self_src(fl.entry_src.begin() + static_cast<std::ptrdiff_t>(fl.n_edges),
                            fl.entry_src.end());
  Value msgs;
  if (edge_src.empty()) {
    msgs = t.gather_rows(hp, self_src);
  } else {
    Value from_edges = t.gather_rows(hq, edge_src);
    Value from_self = t.gather_rows(hp, self_src);
    msgs = t.concat_rows({from_edges, from_self});
  }
  Value dst_h = t.gather_rows(hp, fl.entry_dst);
  Value logits = t.leaky_relu(
      t.matmul(t.concat_cols({dst_h, msgs, fe}), t.param(store_, base + ".a")), cfg_.gat_slope);
  Value alpha = t.segment_softmax(logits, fl.seg, fl.n_segments);
  if (probe) {
    probe->alphas.push_back(alpha);
    probe->segs.push_back(fl.seg);
    probe->n_segs.push_back(fl.n_segments);
  }
  Value weighted = t.mul_cols(msgs, alpha);
  return t.scatter_add_rows(weighted, fl.entry_dst, graph_.n_nodes());
}

Value Model::graph_embed(Tape& t, GnnProbe* probe) const {
  Value x = t.concat_cols({t.param(store_, "gnn.embed_region"), t.constant(occupancy_)});
  for (int l = 0; l < cfg_.n_gnn_layers; ++l) {
    std::string p = "gnn.l" + std::to_string(l);
    Value acc = t.matmul(x, t.param(store_, p + ".self"));
    const char* rels[3] = {".adj_cell", ".adj_admin", ".incl"};
    for (int r = 0; r < 3; ++r) {
      Value neigh = t.spmm(sage_mats_[static_cast<std::size_t>(r)], x);
      acc = t.add(acc, t.matmul(neigh, t.param(store_, p + rels[r])));
    }
    acc = t.add(acc, gat_level(t, x, l, 0, probe));
    acc = t.add(acc, gat_level(t, x, l, 1, probe));
    x = t.leaky_relu(acc, cfg_.fuse_slope);
  }
  return x;
}

Value Model::location_table(Tape& t, GnnProbe* probe) const {
  Value all = graph_embed(t, probe);
  Value cells = t.slice_rows(all, 0, graph_.n_cells);
  Value special = t.param(store_, "vocab.special");
  return t.concat_rows({cells, special});
}

Tensor Model::location_table_frozen() const {
  Tape t;
  return location_table(t).val();
}

Value Model::duration_embedding(Tape& t, const DurationChain& dur) const {
  std::vector<int> idx;
  idx.reserve(dur.size());
  for (int d : dur.durations) {
    if (d < 1 || d > cfg_.T) throw ContractError("duration embedding: value out of [1, T]");
    idx.push_back(d - 1);
  }
  return t.gather_rows(t.param(store_, "dur.embed"), idx);
}

Value Model::encoder_stack(Tape& t, Value x, const std::string& prefix, const Tensor* keep_mask,
                           AttentionProbe* probe) const {
  for (int i = 0; i < cfg_.n_enc_layers; ++i)
    x = encoder_block(t, x, store_, prefix + ".b" + std::to_string(i), cfg_.n_heads, keep_mask,
                      probe);
  return x;
}

Value Model::daily_encode_loc(Tape& t, Value emb, AttentionProbe* probe) const {
  Value x = linear(t, emb, store_, "daily_loc.in");
  x = t.add_const(x, pe_hl_.middleRows(0, emb.rows()));
  x = encoder_stack(t, x, "daily_loc", nullptr, probe);
  return t.mean_rows(x);
}

Value Model::daily_encode_dur(Tape& t, Value emb, AttentionProbe* probe) const {
  Value x = linear(t, emb, store_, "daily_dur.in");
  x = t.add_const(x, pe_ht_.middleRows(0, emb.rows()));
  x = encoder_stack(t, x, "daily_dur", nullptr, probe);
  return t.mean_rows(x);
}

Model::WeeklyOut Model::weekly_encode(Tape& t, const std::array<Value, 7>& h_loc,
                                      const std::array<Value, 7>& h_dur,
                                      const std::array<bool, 7>& present,
                                      const std::array<int, 7>& weekdays,
                                      AttentionProbe* probe) const {
  bool any = false;
  for (bool p : present) any = any || p;
  if (!any) throw ContractError("weekly encoder: no present days");
  for (int w : weekdays)
    if (w < 0 || w > 6) throw ContractError("weekly encoder: bad weekday");

  Tensor keep = Tensor::Zero(7, 7);
  std::vector<double> pool_w(7, 0.0);
  for (int i = 0; i < 7; ++i) {
    pool_w[static_cast<std::size_t>(i)] = present[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    for (int j = 0; j < 7; ++j)
      keep(i, j) = present[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
  }

  auto stream = [&](const std::vector<Value>& rows, const std::string& prefix, const Tensor& pe) {
    Value x = linear(t, t.concat_rows(rows), store_, prefix + ".in");
    Tensor pe_rows(7, pe.cols());
    for (int i = 0; i < 7; ++i)
      pe_rows.row(i) = pe.row(weekdays[static_cast<std::size_t>(i)]) + pe.row(7 + i);
    x = t.add_const(x, pe_rows);
    x = encoder_stack(t, x, prefix, &keep, probe);
    return t.mean_rows(x, pool_w);
  };

  std::vector<Value> loc_rows(h_loc.begin(), h_loc.end());
  std::vector<Value> dur_rows;
  dur_rows.reserve(7);
  for (int i = 0; i < 7; ++i) {
    auto ui = static_cast<std::size_t>(i);
    dur_rows.push_back(t.concat_cols({h_dur[ui], h_loc[ui]}));
  }

  WeeklyOut out;
  out.z_loc = stream(loc_rows, "weekly_loc", pe_zl_);
  out.z_dur = stream(dur_rows, "weekly_dur", pe_zt_);
  return out;
}

Model::WeeklyOut Model::encode_window(Tape& t, Value loc_table, const WindowChains& window,
                                      AttentionProbe* probe) const {
  if (window.present_count() == 0) throw ContractError("encode: empty history window");
  std::array<Value, 7> h_loc, h_dur;
  std::array<bool, 7> present{};
  for (int i = 0; i < 7; ++i) {
    auto ui = static_cast<std::size_t>(i);
    if (window.days[ui].has_value()) {
      const DecoupledDay& day = *window.days[ui];
      std::vector<int> idx;
      idx.reserve(day.loc.size());
      for (CellId c : day.loc.locations) {
        if (c < 0 || c >= n_cells()) throw ContractError("encode: cell id out of range");
        idx.push_back(c);
      }
      Value loc_emb = t.gather_rows(loc_table, idx);
      h_loc[ui] = daily_encode_loc(t, loc_emb, probe);
      h_dur[ui] = daily_encode_dur(t, duration_embedding(t, day.dur), probe);
      present[ui] = true;
    } else {
      h_loc[ui] = t.zeros(1, cfg_.d_hl);
      h_dur[ui] = t.zeros(1, cfg_.d_ht);
    }
  }
  return weekly_encode(t, h_loc, h_dur, present, window.weekdays, probe);
}

Value Model::spatial_logits(Tape& t, Value z_loc, Value loc_table,
                            const std::vector<CellId>& prefix, AttentionProbe* probe) const {
  std::vector<int> tokens;
  tokens.reserve(prefix.size() + 1);
  tokens.push_back(in_sos());
  for (CellId c : prefix) {
    if (c < 0 || c >= n_cells()) throw ContractError("decode: prefix cell out of range");
    tokens.push_back(c);
  }
  Value emb = t.gather_rows(loc_table, tokens);
  Value x = linear(t, emb, store_, "spd.in");
  x = t.add_const(x, pe_hl_.middleRows(0, emb.rows()));
  Value mem = linear(t, z_loc, store_, "spd.mem");
  Tensor mask = causal_mask(emb.rows());
  for (int i = 0; i < cfg_.n_dec_layers; ++i)
    x = decoder_block(t, x, mem, store_, "spd.b" + std::to_string(i), cfg_.n_heads, &mask, probe);
  return linear(t, x, store_, "spd.out");
}

Value Model::temporal_durations(Tape& t, Value z_dur, Value pred_emb,
                                AttentionProbe* probe) const {
  Value s = linear(t, pred_emb, store_, "tmd.adjust");
  Value z = t.broadcast_rows(z_dur, pred_emb.rows());
  Value x = linear(t, t.concat_cols({s, z}), store_, "tmd.in");
  x = t.add_const(x, pe_ht_.middleRows(0, pred_emb.rows()));
  for (int i = 0; i < cfg_.n_dec_layers; ++i)
    x = encoder_block(t, x, store_, "tmd.b" + std::to_string(i), cfg_.n_heads, nullptr, probe);
  return linear(t, x, store_, "tmd.out");
}

Value Model::sample_loss(Tape& t, Value loc_table, const TrainSample& sample) const {
  WeeklyOut z = encode_window(t, loc_table, sample.window);
  const auto& chain = sample.target.loc.locations;
  if (chain.empty()) throw ContractError("loss: empty target chain");
  if (sample.target.dur.size() != chain.size())
    throw ContractError("loss: target chain length mismatch");

  Value logits = spatial_logits(t, z.z_loc, loc_table, chain);
  std::vector<int> targets(chain.begin(), chain.end());
  targets.push_back(out_eos());
  Value ce = t.cross_entropy_mean(logits, targets);

  std::vector<int> emb_idx(chain.begin(), chain.end());
  Value pred_emb = t.gather_rows(loc_table, emb_idx);
  Value durs = temporal_durations(t, z.z_dur, pred_emb);
  std::vector<double> dur_targets(sample.target.dur.durations.begin(),
                                  sample.target.dur.durations.end());
  Value hb = t.huber_mean(durs, dur_targets);

  return t.add(ce, t.scale(hb, cfg_.lambda));
}

Model::Decoded Model::decode_chains(const WindowChains& window, const Tensor& frozen_table) const {
  Tensor z_loc, z_dur;
  {
    Tape enc;
    WeeklyOut z = encode_window(enc, enc.constant(frozen_table), window);
    z_loc = z.z_loc.val();
    z_dur = z.z_dur.val();
  }

  Decoded out;
  std::vector<CellId>& chain = out.loc.locations;
  while (true) {
    Tape t;
    Value logits = spatial_logits(t, t.constant(z_loc), t.constant(frozen_table), chain);
    Eigen::Index last = logits.rows() - 1;
    const Tensor& lv = logits.val();
    // The first step must emit a location; a day always has at least one.
    Eigen::Index limit = chain.empty() ? n_cells() : n_out_classes();
    Eigen::Index best = 0;
    double best_v = lv(last, 0);
    for (Eigen::Index c = 1; c < limit; ++c)
      if (lv(last, c) > best_v) {
        best_v = lv(last, c);
        best = c;
      }
    if (best == out_eos()) break;
    chain.push_back(static_cast<CellId>(best));
    if (static_cast<int>(chain.size()) >= cfg_.max_chain_len) {
      out.truncated = true;
      break;
    }
  }

  Tape t;
  std::vector<int> idx(chain.begin(), chain.end());
  Value pred_emb = t.gather_rows(t.constant(frozen_table), idx);
  Value durs = temporal_durations(t, t.constant(z_dur), pred_emb);
  out.raw_durations.resize(chain.size());
  for (std::size_t i = 0; i < chain.size(); ++i)
    out.raw_durations[i] = durs.val()(static_cast<Eigen::Index>(i), 0);
  return out;
}

DurationChain Model::repair_durations(const std::vector<double>& raw, int T) {
  auto n = static_cast<int>(raw.size());
  if (n < 1) throw ContractError("repair: empty durations");
  if (n > T) throw ContractError("repair: more visits than slots");

  std::vector<double> c(raw.size());
  double total = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    c[i] = std::max(raw[i], 1.0);
    if (!std::isfinite(c[i])) throw NumericError("repair: non-finite duration");
    total += c[i];
  }
  double k = T / total;
  std::vector<int> base(raw.size());
  std::vector<double> rem(raw.size());
  int sum = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    double f = c[i] * k;
    base[i] = static_cast<int>(std::floor(f));
    rem[i] = f - base[i];
    if (base[i] < 1) {
      base[i] = 1;
      rem[i] = 0.0;
    }
    sum += base[i];
  }
  while (sum < T) {
    std::size_t pick = 0;
    for (std::size_t i = 1; i < rem.size(); ++i)
      if (rem[i] > rem[pick]) pick = i;
    base[pick] += 1;
    rem[pick] = -1.0; // each entry takes at most one leftover slot per pass
    sum += 1;
    bool all_used = true;
    for (double r : rem) all_used = all_used && r < 0.0;
    if (all_used)
      for (std::size_t i = 0; i < rem.size(); ++i) rem[i] = 0.0;
  }
  while (sum > T) {
    std::size_t pick = raw.size();
    for (std::size_t i = 0; i < base.size(); ++i)
      if (base[i] > 1 && (pick == raw.size() || base[i] > base[pick])) pick = i;
    if (pick == raw.size()) throw ContractError("repair: cannot reach T with min 1 per visit");
    base[pick] -= 1;
    sum -= 1;
  }
  DurationChain out;
  out.durations = std::move(base);
  return out;
}

DailyTrajectory Model::predict_next_day(const UserHistory& history, int k,
                                        const Tensor& frozen_table,
                                        const DatasetHeader& header) const {
  HistoryWindow w = history_window(history, k);
  if (w.present_count() == 0) throw ContractError("predict: no observed days in window");
  Decoded d = decode_chains(window_chains(w, header), frozen_table);
  DurationChain dur = repair_durations(d.raw_durations, cfg_.T);
  DailyTrajectory out;
  out.user = history.user;
  out.day_index = k + 1;
  out.weekday = header.weekday_of(k + 1);
  out.predicted = true;
  out.slots = recouple(d.loc, dur, cfg_.T);
  return out;
}

std::vector<DailyTrajectory> Model::predict_next_week(const UserHistory& history, int k,
                                                      const Tensor& frozen_table,
                                                      const DatasetHeader& header) const {
  UserHistory working = history;
  std::vector<DailyTrajectory> out;
  out.reserve(7);
  for (int i = 0; i < 7; ++i) {
    DailyTrajectory day = predict_next_day(working, k + i, frozen_table, header);
    working.days[day.day_index] = day;
    out.push_back(std::move(day));
  }
  return out;
}

} // namespace mstdp

#include "mstdp/layers.hpp"

#include <cmath>

#include "mstdp/types.hpp"

namespace mstdp {

void init_linear(ParameterStore& store, Rng& rng, const std::string& name, int in, int out) {
  store.create(name + ".w", in, out) = xavier_uniform(in, out, rng);
  store.create(name + ".b", 1, out); // zeros
}

Value linear(Tape& t, Value x, ParameterStore& store, const std::string& name) {
  Value w = t.param(store, name + ".w");
  Value b = t.param(store, name + ".b");
  return t.add_rows(t.matmul(x, w), b);
}

void init_layer_norm(ParameterStore& store, const std::string& name, int dim) {
  store.create(name + ".g", 1, dim).setOnes();
  store.create(name + ".b", 1, dim);
}

Value layer_norm_named(Tape& t, Value x, ParameterStore& store, const std::string& name) {
  return t.layer_norm(x, t.param(store, name + ".g"), t.param(store, name + ".b"));
}

Tensor sinusoidal_table(int max_pos, int dim) {
  if (dim % 2 != 0) throw ContractError("positional table: dim must be even");
  Tensor table(max_pos, dim);
  for (int p = 0; p < max_pos; ++p) {
    for (int i = 0; i < dim / 2; ++i) {
      double w = std::pow(10000.0, -2.0 * i / dim);
      table(p, 2 * i) = std::sin(p * w);
      table(p, 2 * i + 1) = std::cos(p * w);
    }
  }
  return table;
}

Tensor causal_mask(Eigen::Index n) {
  Tensor m = Tensor::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) m(i, j) = 1.0;
  return m;
}

void init_attention(ParameterStore& store, Rng& rng, const std::string& name, int dim,
                    int kv_dim, int n_heads) {
  if (dim % n_heads != 0) throw ContractError("attention: width not divisible by heads");
  init_linear(store, rng, name + ".q", dim, dim);
  init_linear(store, rng, name + ".k", kv_dim, dim);
  init_linear(store, rng, name + ".v", kv_dim, dim);
  init_linear(store, rng, name + ".o", dim, dim);
}

Value multi_head_attention(Tape& t, Value q_in, Value k_in, Value v_in, ParameterStore& store,
                           const std::string& name, int n_heads, const Tensor* keep_mask,
                           AttentionProbe* probe) {
  Value q = linear(t, q_in, store, name + ".q");
  Value k = linear(t, k_in, store, name + ".k");
  Value v = linear(t, v_in, store, name + ".v");
  Eigen::Index dim = q.cols();
  Eigen::Index dh = dim / n_heads;
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Value> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Value qh = t.slice_cols(q, h * dh, dh);
    Value kh = t.slice_cols(k, h * dh, dh);
    Value vh = t.slice_cols(v, h * dh, dh);
    Value scores = t.scale(t.matmul(qh, t.transpose(kh)), inv_sqrt);
    Value alpha = t.row_softmax(scores, keep_mask);
    if (probe) probe->weights.push_back(alpha);
    heads.push_back(t.matmul(alpha, vh));
  }
  Value merged = n_heads == 1 ? heads[0] : t.concat_cols(heads);
  return linear(t, merged, store, name + ".o");
}

void init_encoder_block(ParameterStore& store, Rng& rng, const std::string& name, int dim,
                        int n_heads, int ff_mult) {
  init_attention(store, rng, name + ".attn", dim, dim, n_heads);
  init_layer_norm(store, name + ".ln1", dim);
  init_linear(store, rng, name + ".ff1", dim, dim * ff_mult);
  init_linear(store, rng, name + ".ff2", dim * ff_mult, dim);
  init_layer_norm(store, name + ".ln2", dim);
}

Value encoder_block(Tape& t, Value x, ParameterStore& store, const std::string& name,
                    int n_heads, const Tensor* keep_mask, AttentionProbe* probe) {
  Value attn = multi_head_attention(t, x, x, x, store, name + ".attn", n_heads, keep_mask, probe);
  Value x1 = layer_norm_named(t, t.add(x, attn), store, name + ".ln1");
  Value ff = linear(t, t.relu(linear(t, x1, store, name + ".ff1")), store, name + ".ff2");
  return layer_norm_named(t, t.add(x1, ff), store, name + ".ln2");
}

void init_decoder_block(ParameterStore& store, Rng& rng, const std::string& name, int dim,
                        int mem_dim, int n_heads, int ff_mult) {
  init_attention(store, rng, name + ".self", dim, dim, n_heads);
  init_layer_norm(store, name + ".ln1", dim);
  init_attention(store, rng, name + ".cross", dim, mem_dim, n_heads);
  init_layer_norm(store, name + ".ln2", dim);
  init_linear(store, rng, name + ".ff1", dim, dim * ff_mult);
  init_linear(store, rng, name + ".ff2", dim * ff_mult, dim);
  init_layer_norm(store, name + ".ln3", dim);
}

Value decoder_block(Tape& t, Value x, Value memory, ParameterStore& store,
                    const std::string& name, int n_heads, const Tensor* self_mask,
                    AttentionProbe* probe) {
  Value sa = multi_head_attention(t, x, x, x, store, name + ".self", n_heads, self_mask, probe);
  Value x1 = layer_norm_named(t, t.add(x, sa), store, name + ".ln1");
  Value ca =
      multi_head_attention(t, x1, memory, memory, store, name + ".cross", n_heads, nullptr, probe);
  Value x2 = layer_norm_named(t, t.add(x1, ca), store, name + ".ln2");
  Value ff = linear(t, t.relu(linear(t, x2, store, name + ".ff1")), store, name + ".ff2");
  return layer_norm_named(t, t.add(x2, ff), store, name + ".ln3");
}

} // namespace mstdp

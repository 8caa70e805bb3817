#pragma once

#include <string>
#include <vector>

#include "mstdp/tape.hpp"

namespace mstdp {

// Parameter names are dotted paths; every init_* creates the tensors a
// matching forward function pulls from the store. Init call order is fixed
// by the caller, so one seeded Rng reproduces the whole model.

void init_linear(ParameterStore& store, Rng& rng, const std::string& name, int in, int out);
Value linear(Tape& t, Value x, ParameterStore& store, const std::string& name);

void init_layer_norm(ParameterStore& store, const std::string& name, int dim);
Value layer_norm_named(Tape& t, Value x, ParameterStore& store, const std::string& name);

// Rows are positions: table(p, 2i) = sin(p / 10000^(2i/dim)),
// table(p, 2i+1) = cos(p / 10000^(2i/dim)). dim must be even.
Tensor sinusoidal_table(int max_pos, int dim);

// keep(i, j) = 1 where query i may attend to key j <= i.
Tensor causal_mask(Eigen::Index n);

// Attention weights recorded during a forward pass, one matrix per head per
// attention call, for normalization checks.
struct AttentionProbe {
  std::vector<Value> weights;
};

// dim is the query/model width; kv_dim the key/value input width.
void init_attention(ParameterStore& store, Rng& rng, const std::string& name, int dim,
                    int kv_dim, int n_heads);
Value multi_head_attention(Tape& t, Value q_in, Value k_in, Value v_in, ParameterStore& store,
                           const std::string& name, int n_heads,
                           const Tensor* keep_mask = nullptr, AttentionProbe* probe = nullptr);

void init_encoder_block(ParameterStore& store, Rng& rng, const std::string& name, int dim,
                        int n_heads, int ff_mult);
Value encoder_block(Tape& t, Value x, ParameterStore& store, const std::string& name,
                    int n_heads, const Tensor* keep_mask = nullptr,
                    AttentionProbe* probe = nullptr);

void init_decoder_block(ParameterStore& store, Rng& rng, const std::string& name, int dim,
                        int mem_dim, int n_heads, int ff_mult);
Value decoder_block(Tape& t, Value x, Value memory, ParameterStore& store,
                    const std::string& name, int n_heads, const Tensor* self_mask = nullptr,
                    AttentionProbe* probe = nullptr);

} // namespace mstdp

// SPDX-License-Identifier: Apache-2.0
#include "ddghm/fuse_gate.hpp"

#include <cmath>
#include <stdexcept>

namespace ddghm {

void add_gate_params(ParameterStore& store, int dim, bool full) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  if (full) {
    store.add("gate.w_gen", 2 * dim, dim * dim, bound);
    store.add("gate.b_gen", 1, dim * dim, bound);
    store.add("gate.w_self", dim, dim, bound);
    store.add("gate.v", dim, 1, bound);
    store.add("gate.w_nei", dim, dim, bound);
  }
  store.add("gate.w_gz", 2 * dim, dim, bound);
  store.add("gate.w_gr", 2 * dim, dim, bound);
  store.add("gate.w_gh", 2 * dim, dim, bound);
}

GateParams gate_refs(Tape& tape, ParameterStore& store, bool full) {
  GateParams p;
  p.full = full;
  if (full) {
    p.w_gen = tape.param(store.at("gate.w_gen"));
    p.b_gen = tape.param(store.at("gate.b_gen"));
    p.w_self = tape.param(store.at("gate.w_self"));
    p.v = tape.param(store.at("gate.v"));
    p.w_nei = tape.param(store.at("gate.w_nei"));
  }
  p.w_gz = tape.param(store.at("gate.w_gz"));
  p.w_gr = tape.param(store.at("gate.w_gr"));
  p.w_gh = tape.param(store.at("gate.w_gh"));
  return p;
}

Var sequence_fusion(Tape& tape, Var se_global, Var se_local, Var w_gen, Var b_gen,
                    int dim) {
  (void)tape;
  Var both = concat_cols(se_global, se_local);  // 1 x 2D
  Var flat = add(matmul(both, w_gen), b_gen);   // 1 x D*D
  return reshape(flat, dim, dim);
}

Var self_attentive(Tape& tape, Var h_local, Var h_global, Var w_att, Var w_self, Var v) {
  (void)tape;
  Var self_term = matmul(h_local, w_self);
  Var a_l = matmul(sigmoid(add(matmul(h_local, w_att), self_term)), v);   // 1 x 1
  Var a_g = matmul(sigmoid(add(matmul(h_global, w_att), self_term)), v);  // 1 x 1
  return add(mul_scalar(a_l, h_local), mul_scalar(a_g, h_global));
}

Var neighbour_attentive(Tape& tape, Var h_local, Var h_neigh, Var w_att, Var w_nei) {
  (void)tape;
  Var scores = matmul(matmul(h_neigh, w_nei), transpose(h_local));  // k x 1
  Var alpha = softmax(scores);
  return matmul(transpose(alpha), matmul(h_neigh, w_att));  // 1 x D
}

Var gru_fuse(Tape& tape, Var h_hat, Var h_tilde, Var w_gz, Var w_gr, Var w_gh) {
  (void)tape;
  Var both = concat_cols(h_hat, h_tilde);  // 1 x 2D
  Var z = sigmoid(matmul(both, w_gz));
  Var r = sigmoid(matmul(both, w_gr));
  Var cand = tanh_(matmul(concat_cols(h_hat, mul(r, h_tilde)), w_gh));
  return add(sub(h_tilde, mul(z, h_tilde)), mul(z, cand));
}

GateOutcome apply_gate(Tape& tape, const TransferContext& ctx, const GateParams& params,
                       int dim) {
  const std::size_t n = ctx.local_rows.size();
  if (n == 0) throw std::invalid_argument("apply_gate: no transferring nodes");
  if (ctx.global_rows.size() != n || ctx.neighbour_rows.size() != n) {
    throw std::invalid_argument("apply_gate: context row lists disagree");
  }

  Var w_att;
  if (params.full) {
    w_att = sequence_fusion(tape, ctx.se_global, ctx.se_local, params.w_gen, params.b_gen,
                            dim);
  }

  GateOutcome out;
  out.empty_neighbourhoods = 0;
  Var stacked;
  for (std::size_t i = 0; i < n; ++i) {
    Var h_l = rows(ctx.h_local, {ctx.local_rows[i]});
    Var h_g = rows(ctx.h_global, {ctx.global_rows[i]});
    Var h_tilde, h_hat;
    if (params.full) {
      h_tilde = self_attentive(tape, h_l, h_g, w_att, params.w_self, params.v);
      if (ctx.neighbour_rows[i].empty()) {
        ++out.empty_neighbourhoods;
        h_hat = tape.constant(Tensor::Zero(1, dim));
      } else {
        Var h_neigh = rows(ctx.h_global, ctx.neighbour_rows[i]);
        h_hat = neighbour_attentive(tape, h_l, h_neigh, w_att, params.w_nei);
      }
    } else {
      h_tilde = h_l;
      h_hat = h_g;
    }
    Var fused = gru_fuse(tape, h_hat, h_tilde, params.w_gz, params.w_gr, params.w_gh);
    stacked = stacked.valid() ? concat_rows(stacked, fused) : fused;
  }
  out.h_local = scatter_rows(ctx.h_local, ctx.local_rows, stacked);
  return out;
}

}  // namespace ddghm

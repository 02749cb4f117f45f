// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "ddghm/autodiff.hpp"

namespace ddghm {

/// Transfer-gate parameters. The full gate owns a fusion generator, two
/// attention heads and a GRU combiner; the plain variant keeps only the GRU.
/// Names: gate.w_gen (2D x D*D), gate.b_gen (1 x D*D), gate.w_self (D x D),
/// gate.v (D x 1), gate.w_nei (D x D), gate.w_gz / w_gr / w_gh (2D x D).
struct GateParams {
  Var w_gen, b_gen, w_self, v, w_nei;  // attention half (full gate only)
  Var w_gz, w_gr, w_gh;                // GRU combiner
  bool full = true;
};

void add_gate_params(ParameterStore& store, int dim, bool full);
GateParams gate_refs(Tape& tape, ParameterStore& store, bool full);

/// Sequence-level fusion: projects the concatenated global/local sequence
/// embeddings through the generator and reshapes the result into the D x D
/// fusion matrix used by both attention heads this timestep.
Var sequence_fusion(Tape& tape, Var se_global, Var se_local, Var w_gen, Var b_gen,
                    int dim);

/// Self-attentive fusion of one node's local and global states (each 1 x D):
/// scalar scores a_l = sigma(h_l W_att + h_l W_self) v and
/// a_g = sigma(h_g W_att + h_l W_self) v blend the two states.
Var self_attentive(Tape& tape, Var h_local, Var h_global, Var w_att, Var w_self, Var v);

/// Neighbour-attentive aggregation: softmax over bilinear scores
/// h_{g,i} W_nei h_l^T of the node's global neighbours (k x D), aggregating
/// their W_att projections.
Var neighbour_attentive(Tape& tape, Var h_local, Var h_neigh, Var w_att, Var w_nei);

/// GRU-style combination of the neighbour aggregate and the self-attentive
/// blend into the transferred state (all 1 x D).
Var gru_fuse(Tape& tape, Var h_hat, Var h_tilde, Var w_gz, Var w_gr, Var w_gh);

/// Everything apply_gate needs about the step: current state matrices, the
/// two sequence embeddings, and per transferring node its row in the local
/// and global state matrices plus its global-neighbour rows.
struct TransferContext {
  Var h_local;   // n_local x D
  Var h_global;  // n_global x D
  Var se_local, se_global;
  std::vector<int> local_rows;
  std::vector<int> global_rows;
  std::vector<std::vector<int>> neighbour_rows;
};

struct GateOutcome {
  Var h_local;               // local states with transferred rows written back
  int empty_neighbourhoods;  // nodes that fell back to a zero neighbour aggregate
};

/// Runs the transfer gate over every node in the context and scatters the
/// fused states into the local state matrix. With params.full == false the
/// attention heads are skipped and the GRU combines the raw global state
/// with the raw local state.
GateOutcome apply_gate(Tape& tape, const TransferContext& ctx, const GateParams& params,
                       int dim);

}  // namespace ddghm

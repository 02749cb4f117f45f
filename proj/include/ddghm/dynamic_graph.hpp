// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ddghm/autodiff.hpp"

namespace ddghm {

/// Immutable-by-convention graph snapshot at one timestep. Nodes are item ids
/// (global ids in the merged graph) in insertion order; edges carry
/// multiplicities. a_out/a_in hold the row-normalized outgoing/incoming
/// adjacency over the node rows; a row with no edges stays zero.
struct GraphSnapshot {
  std::vector<int> nodes;
  std::unordered_map<int, int> node_row;
  std::map<std::pair<int, int>, long> edges;
  int timestamp = 0;
  Tensor a_out, a_in;

  int size() const { return static_cast<int>(nodes.size()); }
  bool has_node(int id) const { return node_row.count(id) != 0; }
  int row_of(int id) const;
};

/// One consumption event with no predecessor: insert the node (if new) and
/// advance the clock. Adjacency is rebuilt; state matrices grow elsewhere.
GraphSnapshot with_node(const GraphSnapshot& g, int node);

/// One consumption event `from -> to`: inserts `to` when unseen, increments
/// the edge multiplicity, renormalizes, and advances the clock. `from` must
/// already be present.
GraphSnapshot extend_snapshot(const GraphSnapshot& g, int from, int to);

/// First-order undirected neighbourhood of `node` (union of in- and
/// out-neighbours, self excluded), ascending by node id.
std::vector<int> neighbours(const GraphSnapshot& g, int node);

/// One `from<TAB>to<TAB>count` line per edge, ordered by (from, to).
std::string dump_edges(const GraphSnapshot& g);

// ---- gated propagation -------------------------------------------------------

/// Gated message passing over a snapshot. Parameter names under `prefix.prop.`:
/// w_h (2D x D), b_h (1 x D), and the three gate pairs w_z/u_z, w_r/u_r,
/// w_o/u_o (each D x D).
struct PropagationParams {
  Var w_h, b_h, w_z, u_z, w_r, u_r, w_o, u_o;
};

void add_propagation_params(ParameterStore& store, const std::string& prefix, int dim);
PropagationParams propagation_refs(Tape& tape, ParameterStore& store,
                                   const std::string& prefix);

/// `steps` rounds of: messages a = [A_in H, A_out H] W_h + b_h, update gate
/// z = sigma(a W_z + h U_z), reset gate r = sigma(a W_r + h U_r), candidate
/// h~ = tanh(a W_o + (r . h) U_o), h <- (1 - z) . h + z . h~.
Var propagate(Tape& tape, const GraphSnapshot& g, Var h, const PropagationParams& p,
              int steps);

// ---- soft-attention readout ---------------------------------------------------

/// Attention readout. Parameter names under `prefix.read.`: w_a1, w_a2 (D x D),
/// c (1 x D), p (D x 1), w_a3 (2D x D).
struct ReadoutParams {
  Var w_a1, w_a2, c, p, w_a3;
};

void add_readout_params(ParameterStore& store, const std::string& prefix, int dim);
ReadoutParams readout_refs(Tape& tape, ParameterStore& store, const std::string& prefix);

/// Soft-attention sequence embedding over the states `h` (n x D).
/// `position_rows` maps each sequence position to its node row (repeats
/// allowed), `last_row` is the row of the most recent item. Scores
/// alpha_k = sigma(h_last W_a1 + h_k W_a2 + c) p, the attended sum is
/// concatenated with h_last and projected through W_a3 to 1 x D.
Var readout(Tape& tape, Var h, const std::vector<int>& position_rows, int last_row,
            const ReadoutParams& p);

/// Row indices of a merged-graph state matrix split by domain. Global ids
/// below `domain_b_offset` belong to domain A.
struct GlobalParts {
  std::vector<int> a_rows, b_rows;  // rows into the global state matrix
  std::vector<int> a_ids, b_ids;    // matching global node ids
};
GlobalParts split_global_nodes(const GraphSnapshot& g, int domain_b_offset);

}  // namespace ddghm

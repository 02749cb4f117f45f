// SPDX-License-Identifier: Apache-2.0
#include "ddghm/dynamic_graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace ddghm {

namespace {

// Rebuild row-normalized adjacency from edge multiplicities. Graphs stay
// small (one per behaviour sequence), so quadratic storage is fine.
void rebuild_adjacency(GraphSnapshot& g) {
  const int n = g.size();
  g.a_out = Tensor::Zero(n, n);
  g.a_in = Tensor::Zero(n, n);
  for (const auto& [edge, count] : g.edges) {
    const int i = g.row_of(edge.first);
    const int j = g.row_of(edge.second);
    g.a_out(i, j) += static_cast<double>(count);
    g.a_in(j, i) += static_cast<double>(count);
  }
  for (int i = 0; i < n; ++i) {
    const double so = g.a_out.row(i).sum();
    if (so > 0) g.a_out.row(i) /= so;
    const double si = g.a_in.row(i).sum();
    if (si > 0) g.a_in.row(i) /= si;
  }
}

void insert_node(GraphSnapshot& g, int node) {
  if (g.has_node(node)) return;
  g.node_row.emplace(node, g.size());
  g.nodes.push_back(node);
}

}  // namespace

int GraphSnapshot::row_of(int id) const {
  auto it = node_row.find(id);
  if (it == node_row.end()) {
    throw std::invalid_argument("graph: unknown node " + std::to_string(id));
  }
  return it->second;
}

GraphSnapshot with_node(const GraphSnapshot& g, int node) {
  GraphSnapshot next = g;
  insert_node(next, node);
  ++next.timestamp;
  rebuild_adjacency(next);
  return next;
}

GraphSnapshot extend_snapshot(const GraphSnapshot& g, int from, int to) {
  if (!g.has_node(from)) {
    throw std::invalid_argument("extend_snapshot: source node " + std::to_string(from) +
                                " not in graph");
  }
  GraphSnapshot next = g;
  insert_node(next, to);
  ++next.edges[{from, to}];
  ++next.timestamp;
  rebuild_adjacency(next);
  return next;
}

std::vector<int> neighbours(const GraphSnapshot& g, int node) {
  if (!g.has_node(node)) {
    throw std::invalid_argument("neighbours: unknown node " + std::to_string(node));
  }
  std::set<int> out;
  for (const auto& [edge, count] : g.edges) {
    (void)count;
    if (edge.first == node && edge.second != node) out.insert(edge.second);
    if (edge.second == node && edge.first != node) out.insert(edge.first);
  }
  return {out.begin(), out.end()};
}

std::string dump_edges(const GraphSnapshot& g) {
  std::ostringstream os;
  for (const auto& [edge, count] : g.edges) {
    os << edge.first << "\t" << edge.second << "\t" << count << "\n";
  }
  return os.str();
}

void add_propagation_params(ParameterStore& store, const std::string& prefix, int dim) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  store.add(prefix + ".prop.w_h", 2 * dim, dim, bound);
  store.add(prefix + ".prop.b_h", 1, dim, bound);
  for (const char* gate : {"z", "r", "o"}) {
    store.add(prefix + ".prop.w_" + std::string(gate), dim, dim, bound);
    store.add(prefix + ".prop.u_" + std::string(gate), dim, dim, bound);
  }
}

PropagationParams propagation_refs(Tape& tape, ParameterStore& store,
                                   const std::string& prefix) {
  PropagationParams p;
  p.w_h = tape.param(store.at(prefix + ".prop.w_h"));
  p.b_h = tape.param(store.at(prefix + ".prop.b_h"));
  p.w_z = tape.param(store.at(prefix + ".prop.w_z"));
  p.u_z = tape.param(store.at(prefix + ".prop.u_z"));
  p.w_r = tape.param(store.at(prefix + ".prop.w_r"));
  p.u_r = tape.param(store.at(prefix + ".prop.u_r"));
  p.w_o = tape.param(store.at(prefix + ".prop.w_o"));
  p.u_o = tape.param(store.at(prefix + ".prop.u_o"));
  return p;
}

Var propagate(Tape& tape, const GraphSnapshot& g, Var h, const PropagationParams& p,
              int steps) {
  if (steps < 1) throw std::invalid_argument("propagate: steps must be >= 1");
  const Tensor& hv = tape.value(h);
  if (hv.rows() != g.size()) {
    throw std::invalid_argument("propagate: state rows " + shape_str(hv) +
                                " vs graph size " + std::to_string(g.size()));
  }
  Var ain = tape.constant(g.a_in);
  Var aout = tape.constant(g.a_out);
  for (int s = 0; s < steps; ++s) {
    Var msg = concat_cols(matmul(ain, h), matmul(aout, h));
    Var a = add_rowvec(matmul(msg, p.w_h), p.b_h);
    Var z = sigmoid(add(matmul(a, p.w_z), matmul(h, p.u_z)));
    Var r = sigmoid(add(matmul(a, p.w_r), matmul(h, p.u_r)));
    Var cand = tanh_(add(matmul(a, p.w_o), matmul(mul(r, h), p.u_o)));
    h = add(sub(h, mul(z, h)), mul(z, cand));
  }
  return h;
}

void add_readout_params(ParameterStore& store, const std::string& prefix, int dim) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  store.add(prefix + ".read.w_a1", dim, dim, bound);
  store.add(prefix + ".read.w_a2", dim, dim, bound);
  store.add(prefix + ".read.c", 1, dim, bound);
  store.add(prefix + ".read.p", dim, 1, bound);
  store.add(prefix + ".read.w_a3", 2 * dim, dim, bound);
}

ReadoutParams readout_refs(Tape& tape, ParameterStore& store, const std::string& prefix) {
  ReadoutParams p;
  p.w_a1 = tape.param(store.at(prefix + ".read.w_a1"));
  p.w_a2 = tape.param(store.at(prefix + ".read.w_a2"));
  p.c = tape.param(store.at(prefix + ".read.c"));
  p.p = tape.param(store.at(prefix + ".read.p"));
  p.w_a3 = tape.param(store.at(prefix + ".read.w_a3"));
  return p;
}

Var readout(Tape& tape, Var h, const std::vector<int>& position_rows, int last_row,
            const ReadoutParams& p) {
  (void)tape;
  if (position_rows.empty()) {
    throw std::invalid_argument("readout: empty position list");
  }
  Var h_pos = rows(h, position_rows);                     // k x D, one row per position
  Var h_last = rows(h, {last_row});                       // 1 x D
  Var scores = add_rowvec(matmul(h_pos, p.w_a2), p.c);    // k x D
  Var query = matmul(h_last, p.w_a1);                     // 1 x D broadcast over rows
  Var alpha = matmul(sigmoid(add_rowvec(scores, query)), p.p);  // k x 1
  Var attended = matmul(transpose(alpha), h_pos);         // 1 x D
  return matmul(concat_cols(attended, h_last), p.w_a3);   // 1 x D
}

GlobalParts split_global_nodes(const GraphSnapshot& g, int domain_b_offset) {
  GlobalParts parts;
  for (int row = 0; row < g.size(); ++row) {
    const int id = g.nodes[static_cast<std::size_t>(row)];
    if (id < domain_b_offset) {
      parts.a_rows.push_back(row);
      parts.a_ids.push_back(id);
    } else {
      parts.b_rows.push_back(row);
      parts.b_ids.push_back(id);
    }
  }
  return parts;
}

}  // namespace ddghm

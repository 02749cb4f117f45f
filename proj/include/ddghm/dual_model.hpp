// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ddghm/data_model.hpp"
#include "ddghm/dynamic_graph.hpp"
#include "ddghm/fuse_gate.hpp"

#include "json.hpp"

namespace ddghm {

struct AblationFlags {
  bool local_only = false;
  bool global_only = false;
  bool plain_gru_gate = false;
  bool no_collaborative = false;
  bool no_contrastive = false;
};

struct ModelConfig {
  int n_items_a = 0;
  int n_items_b = 0;
  int hidden_dim = 16;
  int prop_steps = 1;
  int max_seq_len = 50;
  AblationFlags ablation;
};

nlohmann::json ablation_to_json(const AblationFlags& f);
AblationFlags ablation_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// The dual-graph model: item tables, score biases, per-domain local
/// propagation/readout, shared global propagation with per-domain readout,
/// and the transfer gate. Which blocks exist depends on the ablation flags,
/// so parameter counts differ across variants.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

  int mask_index(Domain d) const {
    return d == Domain::A ? cfg_.n_items_a : cfg_.n_items_b;
  }
  /// Global node ids: domain-A rows first (including MASK), then domain B.
  int global_b_offset() const { return cfg_.n_items_a + 1; }
  int global_id(Domain d, int item) const {
    return d == Domain::A ? item : global_b_offset() + item;
  }
  bool uses_local() const { return !cfg_.ablation.global_only; }
  bool uses_global() const { return !cfg_.ablation.local_only; }
  bool uses_gate() const { return uses_local() && uses_global(); }

 private:
  ModelConfig cfg_;
  ParameterStore store_;
};

/// Replace the given positions of one domain's sequence with the MASK item
/// (an augmentation view; the merged sequence is rewritten consistently).
struct MaskSpec {
  Domain domain = Domain::A;
  std::vector<int> positions;
};

struct RunOptions {
  bool step_predictions = false;
  bool trace = false;
  const MaskSpec* mask = nullptr;
};

/// Next-item logits (full catalog, n_items x 1) collected after each event
/// whose domain still has a successor event.
struct StepPrediction {
  Domain domain = Domain::A;
  Var logits;
  int target = -1;
};

struct GateTraceStep {
  int merged_index = 0;
  Domain domain = Domain::A;
  std::vector<int> transferring;               // local item indices, graph order
  std::vector<std::vector<int>> neighbour_ids; // global ids per transferring node
};

struct SequenceRun {
  bool has_a = false, has_b = false;
  Var se_a, se_b;            // final sequence embeddings, 1 x D
  Var catalog_a, catalog_b;  // final item states, n_items x D (MASK dropped)
  std::vector<StepPrediction> steps;
  std::vector<GateTraceStep> trace;
  int empty_neighbourhoods = 0;

  Var se(Domain d) const { return d == Domain::A ? se_a : se_b; }
  Var catalog(Domain d) const { return d == Domain::A ? catalog_a : catalog_b; }
  bool has(Domain d) const { return d == Domain::A ? has_a : has_b; }
};

/// Keep the most recent `max_len` merged events, restrictions rebuilt.
SequenceTriple truncate_triple(const SequenceTriple& t, int max_len);

/// One full pass over a behaviour triple per the event loop: transfer gate on
/// the pre-step graphs, then local extension + propagation, then global
/// extension + propagation, collecting readouts as requested.
SequenceRun run_sequence(Tape& tape, Model& model, const SequenceTriple& triple,
                         const RunOptions& opts = {});

/// Independent forward passes on one tape; results are invariant to batch
/// composition.
std::vector<SequenceRun> forward_batch(Tape& tape, Model& model,
                                       const std::vector<const SequenceTriple*>& batch,
                                       const RunOptions& opts = {});

// ---- checkpointing -----------------------------------------------------------

/// Versioned format: a "DDGHM-CKPT-1" header line, one JSON metadata line
/// (model config, seed, extra payload, ordered parameter manifest), then the
/// parameter values as little-endian doubles in manifest order.
void save_checkpoint(const std::string& path, const Model& model,
                     const nlohmann::json& extra);

struct LoadedCheckpoint {
  Model model;
  std::uint64_t seed = 0;
  nlohmann::json extra;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace ddghm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <iosfwd>
#include <random>

#include "ddghm/dual_model.hpp"
#include "ddghm/evaluation.hpp"

namespace ddghm {

struct TrainConfig {
  // model
  int hidden_dim = 16;
  int prop_steps = 1;
  int max_seq_len = 50;
  AblationFlags ablation;
  // optimization
  double learning_rate = 0.001;
  int batch_size = 16;
  int epochs = 30;
  // hybrid loss
  double lambda_collaborative = 0.5;
  double lambda_contrastive = 0.5;
  double margin = 1.5;
  int negatives_per_positive = 1;
  double mask_ratio = 0.5;
  // data handling
  double split_train = 0.75, split_val = 0.15, split_test = 0.10;
  std::vector<int> eval_cutoffs = {5, 10, 20};
  // preprocessing (used by the preprocess command only)
  long min_interactions = 10;
  std::int64_t period_length = 0;
  long min_items_per_domain = 5;

  nlohmann::json to_json() const;
  /// Strict parse: unknown keys and out-of-range values are collected and
  /// reported together in one ValidationError.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct LossBreakdown {
  double nll_a = 0.0, nll_b = 0.0;
  double collaborative = 0.0, contrastive = 0.0;
  double total = 0.0;
};

/// softmax over catalog scores for one sequence embedding: n x 1.
Var predict(Tape& tape, Var catalog, Var se, Var bias);

/// Sequence-level negative log-likelihood of each recorded next-item target,
/// summed within a sequence, averaged over `batch_size` sequences.
Var nll_loss(Tape& tape, const std::vector<const SequenceRun*>& runs, Domain domain,
             std::size_t batch_size);

/// One margin pair for the collaborative term. The rank weight is frozen at
/// sampling time (it does not carry gradient).
struct CollabPair {
  std::size_t run_index = 0;
  Domain domain = Domain::A;
  int positive = -1;
  int negative = -1;
  double weight = 1.0;  // log(rank + 1)
};

/// Samples negatives (never in the user's own sequence) and computes exact
/// catalog ranks of each positive by squared-distance sort. Users whose
/// sequences cover the whole catalog contribute nothing.
std::vector<CollabPair> sample_collab_pairs(const std::vector<SequenceRun>& runs,
                                            const std::vector<const SequenceTriple*>& batch,
                                            const Model& model, int negatives_per_positive,
                                            std::mt19937_64& rng,
                                            int* skipped_users = nullptr);

/// Weighted margin loss over the sampled pairs:
/// sum w * max(margin + d2(se, pos) - d2(se, neg), 0).
Var collaborative_loss(Tape& tape, const std::vector<SequenceRun>& runs,
                       const std::vector<CollabPair>& pairs, double margin);

/// In-batch contrastive loss for one domain: anchors are the 2N views (each
/// sequence's original and masked embedding); for each anchor the positive is
/// its partner view and the negatives are the 2(N-1) views of other
/// sequences; dot-product similarity, softmax cross-entropy, averaged over
/// the 2N anchors. view pairs with missing embeddings are excluded.
Var contrastive_domain_loss(Tape& tape, const std::vector<std::pair<Var, Var>>& view_pairs);

struct TotalLoss {
  Var value;
  LossBreakdown parts;
};

struct EpochRow {
  int epoch = 0;
  LossBreakdown loss;
  bool has_val = false;
  // validation metrics at cutoffs 5, 10, 20 (domain-averaged)
  std::array<double, 3> val_hr{}, val_ndcg{}, val_mrr{};
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRow> epochs;
  int best_epoch = 0;
  std::map<std::string, Tensor> best_params;
  int gate_empty_neighbourhoods = 0;
  int collab_skipped_users = 0;
};

/// Mini-batch training with Adam over the hybrid objective. Writes per-epoch
/// progress lines (with wall seconds) to `console` when given. The model is
/// left holding the best-validation parameters (last epoch when there is no
/// validation split). Throws DivergenceError with a parameter-norm dump when
/// the loss stops being finite.
TrainResult train(Model& model, const Dataset& data, const SplitIndices& split,
                  const TrainConfig& cfg, std::uint64_t seed, std::ostream* console);

/// The per-epoch TSV row written to epochs.tsv (no wall-clock column, so two
/// identically-seeded runs produce byte-identical logs).
std::string epoch_tsv_row(const EpochRow& row);
std::string epoch_tsv_header();

}  // namespace ddghm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "ddghm/dual_model.hpp"

#include "json.hpp"

namespace ddghm {

/// 1-based rank of `target` in a descending ordering of `scores` (n x 1).
/// Ties resolve in favour of the smaller item index, so the rank counts
/// strictly-greater scores plus equal scores at smaller indices.
int rank_of_target(const Tensor& scores, int target);

// Single-ground-truth list metrics over 1-based ranks; all error on empty
// input. hr: rank <= k. ndcg: 1/log2(rank+1) when within the cutoff. mrr:
// 1/rank when within the cutoff.
double hr_at_k(const std::vector<int>& ranks, int k);
double ndcg_at_k(const std::vector<int>& ranks, int k);
double mrr_at_k(const std::vector<int>& ranks, int k);

struct DomainEval {
  int evaluated = 0;
  int skipped = 0;  // sequences with fewer than 2 events in this domain
  std::vector<int> ranks;
};

struct EvalReport {
  DomainEval a, b;
  std::vector<int> cutoffs;
  /// metrics["A"]["hr@5"] etc.; a domain with nothing evaluated is absent.
  std::map<std::string, std::map<std::string, double>> metrics;
};

/// Leave-last-out protocol: for each sequence and domain, the final event of
/// that domain is held out, the model runs on the strict merged prefix before
/// it, and the held-out item is ranked against the full domain catalog.
EvalReport evaluate(Model& model, const std::vector<const SequenceTriple*>& triples,
                    const std::vector<int>& cutoffs);

std::string format_metrics_tsv(const EvalReport& report);
nlohmann::json metrics_to_json(const EvalReport& report);

}  // namespace ddghm

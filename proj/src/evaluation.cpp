// SPDX-License-Identifier: Apache-2.0
#include "ddghm/evaluation.hpp"

#include <cmath>
#include <sstream>

namespace ddghm {

int rank_of_target(const Tensor& scores, int target) {
  if (scores.cols() != 1 || scores.rows() < 1) {
    throw std::invalid_argument("rank_of_target: scores must be n x 1, got " +
                                shape_str(scores));
  }
  if (target < 0 || target >= scores.rows()) {
    throw std::invalid_argument("rank_of_target: target out of range");
  }
  const double st = scores(target, 0);
  int rank = 1;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    if (i == target) continue;
    if (scores(i, 0) > st || (scores(i, 0) == st && i < target)) ++rank;
  }
  return rank;
}

namespace {

double mean_over_ranks(const std::vector<int>& ranks, int k, double (*per_item)(int)) {
  if (ranks.empty()) throw std::invalid_argument("metrics: empty rank list");
  if (k < 1) throw std::invalid_argument("metrics: cutoff must be >= 1");
  double acc = 0.0;
  for (int r : ranks) {
    if (r < 1) throw std::invalid_argument("metrics: ranks are 1-based");
    if (r <= k) acc += per_item(r);
  }
  return acc / static_cast<double>(ranks.size());
}

}  // namespace

double hr_at_k(const std::vector<int>& ranks, int k) {
  return mean_over_ranks(ranks, k, [](int) { return 1.0; });
}

double ndcg_at_k(const std::vector<int>& ranks, int k) {
  return mean_over_ranks(ranks, k,
                         [](int r) { return 1.0 / std::log2(static_cast<double>(r) + 1.0); });
}

double mrr_at_k(const std::vector<int>& ranks, int k) {
  return mean_over_ranks(ranks, k, [](int r) { return 1.0 / static_cast<double>(r); });
}

namespace {

// Strict merged prefix before the last event of domain `x`, paired with the
// held-out item. Returns false when the domain has fewer than 2 events.
bool heldout_context(const SequenceTriple& t, Domain x, SequenceTriple& context,
                     int& heldout) {
  int last_pos = -1;
  for (int i = static_cast<int>(t.m.size()) - 1; i >= 0; --i) {
    if (t.m[static_cast<std::size_t>(i)].src == x) {
      last_pos = i;
      break;
    }
  }
  const auto& own = x == Domain::A ? t.a : t.b;
  if (last_pos < 0 || own.size() < 2) return false;
  heldout = t.m[static_cast<std::size_t>(last_pos)].item;
  context = SequenceTriple{};
  context.user = t.user;
  context.m.assign(t.m.begin(), t.m.begin() + last_pos);
  for (const auto& it : context.m) {
    (it.src == Domain::A ? context.a : context.b).push_back(it);
  }
  return true;
}

}  // namespace

EvalReport evaluate(Model& model, const std::vector<const SequenceTriple*>& triples,
                    const std::vector<int>& cutoffs) {
  EvalReport report;
  report.cutoffs = cutoffs;
  for (const SequenceTriple* t : triples) {
    for (Domain x : {Domain::A, Domain::B}) {
      DomainEval& de = x == Domain::A ? report.a : report.b;
      SequenceTriple context;
      int heldout = -1;
      if (!heldout_context(*t, x, context, heldout)) {
        ++de.skipped;
        continue;
      }
      Tape tape;
      SequenceRun run = run_sequence(tape, model, context);
      Var se = run.se(x);
      Var logits = add(matmul(run.catalog(x), transpose(se)),
                       tape.param(model.store().at(x == Domain::A ? "bias.a" : "bias.b")));
      de.ranks.push_back(rank_of_target(tape.value(logits), heldout));
      ++de.evaluated;
    }
  }
  for (Domain x : {Domain::A, Domain::B}) {
    DomainEval& de = x == Domain::A ? report.a : report.b;
    if (de.ranks.empty()) continue;
    auto& m = report.metrics[domain_name(x)];
    for (int k : cutoffs) {
      m["hr@" + std::to_string(k)] = hr_at_k(de.ranks, k);
      m["ndcg@" + std::to_string(k)] = ndcg_at_k(de.ranks, k);
      m["mrr@" + std::to_string(k)] = mrr_at_k(de.ranks, k);
    }
  }
  return report;
}

std::string format_metrics_tsv(const EvalReport& report) {
  std::ostringstream os;
  os << "domain\tmetric";
  for (int k : report.cutoffs) os << "\t@" << k;
  os << "\n";
  os.setf(std::ios::fixed);
  os.precision(6);
  for (const auto& [domain, metrics] : report.metrics) {
    for (const char* name : {"hr", "ndcg", "mrr"}) {
      os << domain << "\t" << name;
      for (int k : report.cutoffs) {
        os << "\t" << metrics.at(std::string(name) + "@" + std::to_string(k));
      }
      os << "\n";
    }
  }
  const auto& a = report.a;
  const auto& b = report.b;
  os << "# evaluated A=" << a.evaluated << " skipped A=" << a.skipped
     << " evaluated B=" << b.evaluated << " skipped B=" << b.skipped << "\n";
  return os.str();
}

nlohmann::json metrics_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["cutoffs"] = report.cutoffs;
  j["counts"] = {{"A", {{"evaluated", report.a.evaluated}, {"skipped", report.a.skipped}}},
                 {"B", {{"evaluated", report.b.evaluated}, {"skipped", report.b.skipped}}}};
  for (const auto& [domain, metrics] : report.metrics) {
    for (const auto& [name, value] : metrics) j["metrics"][domain][name] = value;
  }
  return j;
}

}  // namespace ddghm

// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks. Each check prints one PASS/FAIL line with a
// short detail; the process exits nonzero when any check fails. Training-based
// checks carry wall-clock budgets so regressions in speed also surface here.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "ddghm/cli.hpp"
#include "ddghm/evaluation.hpp"
#include "support/synthetic.hpp"

using namespace ddghm;
using testsupport::ev;
using testsupport::make_triple;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[256];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

ModelConfig model_config_from(const TrainConfig& cfg, int n_a, int n_b) {
  ModelConfig mc;
  mc.n_items_a = n_a;
  mc.n_items_b = n_b;
  mc.hidden_dim = cfg.hidden_dim;
  mc.prop_steps = cfg.prop_steps;
  mc.max_seq_len = cfg.max_seq_len;
  mc.ablation = cfg.ablation;
  return mc;
}

// 1. Published full-dataset benchmark figures need the complete source data and
//    long training runs; at this scale they are out of scope by design, and the
//    property checks below stand in for them.
Outcome scale_statement() {
  return {true, "full-dataset benchmark reproduction out of scope; property checks stand in"};
}

// 2. The full hybrid objective passes a central finite-difference check on the
//    seeded two-user toy instance, and does so inside a minute.
Outcome gradient_fidelity() {
  double elapsed = 0.0;
  const double worst = run_gradcheck(1e-5, 7, &elapsed);
  const bool pass = worst < 1e-4 && elapsed < 60.0;
  return {pass, fmt("max rel err %.3e (< 1e-4), %.1fs (< 60s)", worst, elapsed)};
}

// 3. With every propagation parameter zero, K propagation steps scale the
//    state by exactly (1/2)^K: gates sit at sigmoid(0) and the candidate
//    state vanishes.
Outcome propagation_closed_form() {
  const int dim = 4;
  double worst = 0.0;
  for (int steps : {1, 2, 5}) {
    ParameterStore store(1);
    add_propagation_params(store, "p", dim);
    for (auto& [name, p] : store.params()) p.value.setZero();

    GraphSnapshot g = with_node({}, 0);
    g = extend_snapshot(g, 0, 1);
    g = extend_snapshot(g, 1, 2);
    g = extend_snapshot(g, 2, 0);

    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor h(g.size(), dim);
    for (Eigen::Index i = 0; i < h.rows(); ++i)
      for (Eigen::Index j = 0; j < h.cols(); ++j) h(i, j) = dist(rng);

    Tape tape;
    Var out = propagate(tape, g, tape.constant(h), propagation_refs(tape, store, "p"), steps);
    const Tensor want = std::pow(0.5, steps) * h;
    worst = std::max(worst, (tape.value(out) - want).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-12, fmt("max |h_K - h/2^K| = %.2e (< 1e-12) over K in {1,2,5}", worst)};
}

// 4. Snapshot adjacency equals a brute-force count-and-normalize oracle on 200
//    random walks, and every occupied row is a probability row.
Outcome adjacency_oracle() {
  std::mt19937_64 rng(4242);
  std::uniform_int_distribution<int> len_dist(1, 20);
  std::uniform_int_distribution<int> label(0, 5);
  double worst_row = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int len = len_dist(rng);
    std::vector<int> walk(static_cast<std::size_t>(len));
    for (int& w : walk) w = label(rng);

    GraphSnapshot g = with_node({}, walk[0]);
    for (std::size_t i = 1; i < walk.size(); ++i) {
      g = extend_snapshot(g, walk[i - 1], walk[i]);
    }

    // independent reconstruction: first-appearance node order, transition counts
    std::vector<int> order;
    std::map<int, int> row;
    for (int w : walk) {
      if (row.emplace(w, static_cast<int>(order.size())).second) order.push_back(w);
    }
    const int n = static_cast<int>(order.size());
    Tensor cnt = Tensor::Zero(n, n);
    for (std::size_t i = 1; i < walk.size(); ++i) {
      cnt(row.at(walk[i - 1]), row.at(walk[i])) += 1.0;
    }
    Tensor out = Tensor::Zero(n, n), in = Tensor::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      const double so = cnt.row(i).sum();
      if (so > 0) out.row(i) = cnt.row(i) / so;
      const double si = cnt.col(i).sum();
      if (si > 0) in.row(i) = cnt.col(i).transpose() / si;
    }

    if (g.nodes != order) return {false, fmt("node order mismatch on trial %d", trial)};
    if ((g.a_out - out).cwiseAbs().maxCoeff() != 0.0 ||
        (g.a_in - in).cwiseAbs().maxCoeff() != 0.0) {
      return {false, fmt("adjacency mismatch on trial %d", trial)};
    }
    for (int i = 0; i < n; ++i) {
      if (g.a_out.row(i).sum() > 0) {
        worst_row = std::max(worst_row, std::abs(g.a_out.row(i).sum() - 1.0));
      }
      if (g.a_in.row(i).sum() > 0) {
        worst_row = std::max(worst_row, std::abs(g.a_in.row(i).sum() - 1.0));
      }
    }
  }
  return {worst_row < 1e-12,
          fmt("200 walks exact; occupied row-sum err %.2e (< 1e-12)", worst_row)};
}

// 5. Transfer-gate walkthrough on the five-event weave B0,A0,B1,A1,B2: at the
//    final event the transferring set is {B0,B1} with global neighbour sets
//    {A0} and {A0,A1}.
Outcome gate_walkthrough() {
  ModelConfig mc;
  mc.n_items_a = 6;
  mc.n_items_b = 6;
  mc.hidden_dim = 4;
  Model model(mc, 9);
  SequenceTriple t = make_triple(0, {ev(0, 1, Domain::B), ev(0, 2, Domain::A),
                                     ev(1, 3, Domain::B), ev(1, 4, Domain::A),
                                     ev(2, 5, Domain::B)});
  Tape tape;
  RunOptions opts;
  opts.trace = true;
  SequenceRun run = run_sequence(tape, model, t, opts);
  if (run.trace.size() != 3) {
    return {false, fmt("expected 3 gate firings, saw %zu", run.trace.size())};
  }
  const GateTraceStep& last = run.trace.back();
  const bool pass = last.merged_index == 4 && last.domain == Domain::B &&
                    last.transferring == std::vector<int>{0, 1} &&
                    last.neighbour_ids ==
                        std::vector<std::vector<int>>{{0}, {0, 1}};
  return {pass, "final firing transfers {B0,B1} with neighbours {A0} and {A0,A1}"};
}

// 6. Loss closed forms: all-equal contrastive views cost log(2N-1); the
//    one-pair collaborative hinge with unit distances, rank 1 and margin 1.5
//    costs log(2)*1.5; and every epoch's total decomposes into the four
//    recorded terms.
Outcome loss_closed_forms() {
  double worst = 0.0;

  for (int n : {2, 4, 8}) {
    Tape tape;
    Tensor e(1, 3);
    e << 0.4, -0.2, 0.9;
    Var v = tape.constant(e);
    std::vector<std::pair<Var, Var>> views(static_cast<std::size_t>(n), {v, v});
    const double got = tape.value(contrastive_domain_loss(tape, views))(0, 0);
    worst = std::max(worst, std::abs(got - std::log(2.0 * n - 1.0)));
  }

  {
    Tape tape;
    SequenceRun run;
    run.has_a = true;
    Tensor se(1, 1), cat(2, 1);
    se << 0.0;
    cat << 1.0, -1.0;  // squared distance 1 to both rows
    run.se_a = tape.constant(se);
    run.catalog_a = tape.constant(cat);
    CollabPair pair;
    pair.run_index = 0;
    pair.domain = Domain::A;
    pair.positive = 0;
    pair.negative = 1;
    pair.weight = std::log(2.0);  // rank 1
    std::vector<SequenceRun> runs;
    runs.push_back(std::move(run));
    const double got = tape.value(collaborative_loss(tape, runs, {pair}, 1.5))(0, 0);
    worst = std::max(worst, std::abs(got - std::log(2.0) * 1.5));
  }

  {
    Dataset ds = testsupport::make_memorization(4, 6);
    SplitIndices split;
    split.train = {0, 1, 2, 3};
    TrainConfig cfg;
    cfg.hidden_dim = 8;
    cfg.epochs = 5;
    cfg.batch_size = 16;  // one batch per epoch
    cfg.learning_rate = 0.02;
    cfg.lambda_collaborative = 0.37;
    cfg.lambda_contrastive = 0.21;
    cfg.margin = 1.0;
    Model model(model_config_from(cfg, 6, 6), 5);
    TrainResult tr = train(model, ds, split, cfg, 5, nullptr);
    for (const EpochRow& row : tr.epochs) {
      const double rebuilt = row.loss.nll_a + row.loss.nll_b +
                             cfg.lambda_collaborative * row.loss.collaborative +
                             cfg.lambda_contrastive * row.loss.contrastive;
      worst = std::max(worst, std::abs(row.loss.total - rebuilt));
    }
  }
  return {worst < 1e-10, fmt("max closed-form deviation %.2e (< 1e-10)", worst)};
}

// 7. Memorization: four users, ten items per domain, hidden width 16; training
//    must reach HR@1 >= 0.9 on the train split within 200 epochs and 5 minutes.
Outcome memorization() {
  const auto t0 = std::chrono::steady_clock::now();
  Dataset ds = testsupport::make_memorization(4, 10);
  SplitIndices split;
  split.train = {0, 1, 2, 3};
  TrainConfig cfg;
  cfg.hidden_dim = 16;
  cfg.epochs = 200;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.02;
  cfg.lambda_collaborative = 0.1;
  cfg.lambda_contrastive = 0.1;
  cfg.margin = 1.0;
  Model model(model_config_from(cfg, 10, 10), 7);
  train(model, ds, split, cfg, 7, nullptr);

  std::vector<const SequenceTriple*> subset;
  for (int i : split.train) subset.push_back(&ds.triples[static_cast<std::size_t>(i)]);
  EvalReport report = evaluate(model, subset, {1});
  std::vector<int> ranks = report.a.ranks;
  ranks.insert(ranks.end(), report.b.ranks.begin(), report.b.ranks.end());
  const double hr1 = hr_at_k(ranks, 1);
  const double secs = seconds_since(t0);
  return {hr1 >= 0.9 && secs < 300.0, fmt("train HR@1 = %.3f (>= 0.9), %.1fs (< 300s)", hr1, secs)};
}

// 8. Directional ablation: when domain-B targets are a deterministic function
//    of the most recent domain-A item, the full model must beat the
//    local-only ablation on test HR@5 in at least 8 of 10 seeds.
Outcome cross_domain_ablation() {
  const int n_seeds = 10;
  const int users = 40;
  const int chunks = 4;
  const int patterns = 12;
  int wins = 0;
  for (int s = 0; s < n_seeds; ++s) {
    Dataset ds = testsupport::make_cross_domain(users, chunks, patterns,
                                                1000 + static_cast<std::uint64_t>(s));
    SplitIndices split = split_dataset(ds.triples.size(), 0.7, 0.0, 0.3,
                                       500 + static_cast<std::uint64_t>(s));
    TrainConfig cfg;
    cfg.hidden_dim = 12;
    cfg.epochs = 20;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.03;
    cfg.lambda_collaborative = 0.1;
    cfg.lambda_contrastive = 0.1;
    cfg.margin = 1.0;

    auto test_hr5_b = [&](const AblationFlags& flags) {
      TrainConfig c = cfg;
      c.ablation = flags;
      Model model(model_config_from(c, patterns, patterns + 1),
                  2000 + static_cast<std::uint64_t>(s));
      train(model, ds, split, c, 2000 + static_cast<std::uint64_t>(s), nullptr);
      std::vector<const SequenceTriple*> subset;
      for (int i : split.test) subset.push_back(&ds.triples[static_cast<std::size_t>(i)]);
      EvalReport report = evaluate(model, subset, {5});
      return report.metrics.at("B").at("hr@5");
    };

    AblationFlags full, local;
    local.local_only = true;
    if (test_hr5_b(full) > test_hr5_b(local)) ++wins;
  }
  return {wins >= 8, fmt("full model beat local-only on test HR@5 in %d/10 seeds (>= 8)", wins)};
}

// 9. Metric ordering: over 1000 random rank lists, MRR@K <= NDCG@K <= HR@K and
//    HR@K grows with K.
Outcome metric_ordering() {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> len_dist(1, 30);
  std::uniform_int_distribution<int> rank_dist(1, 60);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> ranks(static_cast<std::size_t>(len_dist(rng)));
    for (int& r : ranks) r = rank_dist(rng);
    double prev_hr = 0.0;
    for (int k : {5, 10, 20}) {
      const double hr = hr_at_k(ranks, k);
      const double ndcg = ndcg_at_k(ranks, k);
      const double mrr = mrr_at_k(ranks, k);
      if (mrr > ndcg + 1e-12 || ndcg > hr + 1e-12 || hr + 1e-12 < prev_hr) {
        return {false, fmt("ordering violated on trial %d at k=%d", trial, k)};
      }
      prev_hr = hr;
    }
  }
  return {true, "MRR <= NDCG <= HR and HR monotone in K over 1000 lists"};
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// 10. Two training runs on identical inputs produce byte-identical epoch logs
//     and checkpoints. Uses the installed binary when DDGHM_BIN is set, the
//     in-process command otherwise.
Outcome determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "ddghm_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);

  {
    Dataset ds = testsupport::make_memorization(5, 6);
    std::ofstream data(dir / "data.tsv", std::ios::binary);
    write_processed(data, ds);
  }
  {
    std::ofstream cfg(dir / "cfg.json", std::ios::binary);
    cfg << R"({"hidden_dim": 6, "epochs": 3, "batch_size": 4, "learning_rate": 0.01,
               "split": [0.6, 0.2, 0.2]})";
  }

  const char* bin = std::getenv("DDGHM_BIN");
  for (const char* run : {"run1", "run2"}) {
    int rc = 0;
    if (bin != nullptr) {
      const std::string cmd = "\"" + std::string(bin) + "\" train --data " +
                              (dir / "data.tsv").string() + " --config " +
                              (dir / "cfg.json").string() + " --out " +
                              (dir / run).string() + " --seed 17 >/dev/null 2>&1";
      const int st = std::system(cmd.c_str());
      rc = (st != -1 && WIFEXITED(st)) ? WEXITSTATUS(st) : -1;
    } else {
      TrainArgs args;
      args.data = (dir / "data.tsv").string();
      args.config = (dir / "cfg.json").string();
      args.outdir = (dir / run).string();
      args.seed = 17;
      std::ostringstream out, err;
      rc = cmd_train(args, out, err);
    }
    if (rc != 0) {
      fs::remove_all(dir);
      return {false, fmt("training run %s exited with %d", run, rc)};
    }
  }

  const bool logs_equal =
      read_bytes(dir / "run1/epochs.tsv") == read_bytes(dir / "run2/epochs.tsv");
  const bool ckpt_equal =
      !read_bytes(dir / "run1/model.ckpt").empty() &&
      read_bytes(dir / "run1/model.ckpt") == read_bytes(dir / "run2/model.ckpt");
  fs::remove_all(dir);
  return {logs_equal && ckpt_equal,
          fmt("epoch logs %s, checkpoints %s", logs_equal ? "identical" : "DIFFER",
              ckpt_equal ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  struct Check {
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Check> checks = {
      {"scale substitution", scale_statement},
      {"gradient fidelity", gradient_fidelity},
      {"propagation closed form", propagation_closed_form},
      {"adjacency oracle", adjacency_oracle},
      {"gate walkthrough", gate_walkthrough},
      {"loss closed forms", loss_closed_forms},
      {"memorization", memorization},
      {"cross-domain ablation", cross_domain_ablation},
      {"metric ordering", metric_ordering},
      {"determinism", determinism},
  };

  int failures = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    Outcome o;
    try {
      o = checks[i].fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("[%2zu/10] %s  %-25s %s\n", i + 1, o.pass ? "PASS" : "FAIL",
                checks[i].name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %zu/10 passed\n", checks.size() - failures);
  return failures == 0 ? 0 : 1;
}

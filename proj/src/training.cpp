// SPDX-License-Identifier: Apache-2.0
#include "ddghm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace ddghm {

nlohmann::json TrainConfig::to_json() const {
  return {{"hidden_dim", hidden_dim},
          {"prop_steps", prop_steps},
          {"max_seq_len", max_seq_len},
          {"ablation", ablation_to_json(ablation)},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"lambda_collaborative", lambda_collaborative},
          {"lambda_contrastive", lambda_contrastive},
          {"margin", margin},
          {"negatives_per_positive", negatives_per_positive},
          {"mask_ratio", mask_ratio},
          {"split", {split_train, split_val, split_test}},
          {"eval_cutoffs", eval_cutoffs},
          {"min_interactions", min_interactions},
          {"period_length", period_length},
          {"min_items_per_domain", min_items_per_domain}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  std::vector<std::string> errors;
  auto fail = [&errors](const std::string& msg) { errors.push_back(msg); };

  static const std::set<std::string> known = {
      "hidden_dim",   "prop_steps",          "max_seq_len",
      "ablation",     "learning_rate",       "batch_size",
      "epochs",       "lambda_collaborative", "lambda_contrastive",
      "margin",       "negatives_per_positive", "mask_ratio",
      "split",        "eval_cutoffs",        "min_interactions",
      "period_length", "min_items_per_domain"};
  if (!j.is_object()) {
    throw ValidationError("config: expected a JSON object");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (known.count(it.key()) == 0) fail("unknown config key '" + it.key() + "'");
  }

  auto get_num = [&](const char* key, auto& slot, double lo, double hi, bool integral) {
    if (!j.count(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number() || (integral && !v.is_number_integer())) {
      fail(std::string(key) + ": expected a " + (integral ? "whole " : "") + "number");
      return;
    }
    const double x = v.get<double>();
    if (x < lo || x > hi) {
      std::ostringstream os;
      os << key << ": " << x << " outside [" << lo << ", " << hi << "]";
      fail(os.str());
      return;
    }
    slot = static_cast<std::decay_t<decltype(slot)>>(x);
  };

  get_num("hidden_dim", c.hidden_dim, 1, 4096, true);
  get_num("prop_steps", c.prop_steps, 1, 64, true);
  get_num("max_seq_len", c.max_seq_len, 1, 100000, true);
  get_num("learning_rate", c.learning_rate, 0.0, 10.0, false);
  get_num("batch_size", c.batch_size, 1, 100000, true);
  get_num("epochs", c.epochs, 1, 1000000, true);
  get_num("lambda_collaborative", c.lambda_collaborative, 0.0, 1e6, false);
  get_num("lambda_contrastive", c.lambda_contrastive, 0.0, 1e6, false);
  get_num("margin", c.margin, 0.0, 1e6, false);
  get_num("negatives_per_positive", c.negatives_per_positive, 1, 1000, true);
  get_num("mask_ratio", c.mask_ratio, 0.0, 1.0, false);
  if (j.count("mask_ratio") && c.mask_ratio <= 0.0) fail("mask_ratio: must be > 0");
  get_num("min_interactions", c.min_interactions, 1, 1000000, true);
  get_num("period_length", c.period_length, 0, std::numeric_limits<double>::max(), true);
  get_num("min_items_per_domain", c.min_items_per_domain, 1, 1000000, true);

  if (j.count("ablation")) {
    const auto& ab = j.at("ablation");
    if (!ab.is_object()) {
      fail("ablation: expected an object of booleans");
    } else {
      static const std::set<std::string> flags = {"local_only", "global_only",
                                                  "plain_gru_gate", "no_collaborative",
                                                  "no_contrastive"};
      for (auto it = ab.begin(); it != ab.end(); ++it) {
        if (flags.count(it.key()) == 0) {
          fail("ablation: unknown flag '" + it.key() + "'");
        } else if (!it.value().is_boolean()) {
          fail("ablation." + it.key() + ": expected a boolean");
        }
      }
      c.ablation = ablation_from_json(ab);
      if (c.ablation.local_only && c.ablation.global_only) {
        fail("ablation: local_only and global_only are mutually exclusive");
      }
    }
  }
  if (j.count("split")) {
    const auto& s = j.at("split");
    if (!s.is_array() || s.size() != 3) {
      fail("split: expected [train, val, test]");
    } else {
      double r[3] = {0, 0, 0};
      bool ok = true;
      for (int i = 0; i < 3; ++i) {
        if (!s[static_cast<std::size_t>(i)].is_number()) {
          fail("split: entries must be numbers");
          ok = false;
          break;
        }
        r[i] = s[static_cast<std::size_t>(i)].get<double>();
        if (r[i] < 0) {
          fail("split: ratios must be non-negative");
          ok = false;
        }
      }
      if (ok && r[0] + r[1] + r[2] <= 0) {
        fail("split: ratios must not all be zero");
        ok = false;
      }
      if (ok) {
        c.split_train = r[0];
        c.split_val = r[1];
        c.split_test = r[2];
      }
    }
  }
  if (j.count("eval_cutoffs")) {
    const auto& e = j.at("eval_cutoffs");
    if (!e.is_array() || e.empty()) {
      fail("eval_cutoffs: expected a non-empty array");
    } else {
      std::vector<int> ks;
      for (const auto& v : e) {
        if (!v.is_number_integer() || v.get<int>() < 1) {
          fail("eval_cutoffs: entries must be integers >= 1");
          ks.clear();
          break;
        }
        ks.push_back(v.get<int>());
      }
      if (!ks.empty()) c.eval_cutoffs = ks;
    }
  }

  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ValidationError(msg);
  }
  return c;
}

Var predict(Tape& tape, Var catalog, Var se, Var bias) {
  (void)tape;
  return softmax(add(matmul(catalog, transpose(se)), bias));
}

Var nll_loss(Tape& tape, const std::vector<const SequenceRun*>& runs, Domain domain,
             std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("nll_loss: empty batch");
  Var acc;
  for (const SequenceRun* run : runs) {
    for (const StepPrediction& sp : run->steps) {
      if (sp.domain != domain) continue;
      Var nll = sub(logsumexp(sp.logits), element(sp.logits, sp.target, 0));
      acc = acc.valid() ? add(acc, nll) : nll;
    }
  }
  if (!acc.valid()) return tape.constant(Tensor::Zero(1, 1));
  return scale(acc, 1.0 / static_cast<double>(batch_size));
}

std::vector<CollabPair> sample_collab_pairs(const std::vector<SequenceRun>& runs,
                                            const std::vector<const SequenceTriple*>& batch,
                                            const Model& model, int negatives_per_positive,
                                            std::mt19937_64& rng, int* skipped_users) {
  if (runs.size() != batch.size()) {
    throw std::invalid_argument("sample_collab_pairs: runs/batch size mismatch");
  }
  if (negatives_per_positive < 1) {
    throw std::invalid_argument("sample_collab_pairs: need at least one negative");
  }
  std::vector<CollabPair> pairs;
  for (std::size_t u = 0; u < runs.size(); ++u) {
    for (Domain x : {Domain::A, Domain::B}) {
      if (!runs[u].has(x)) continue;
      const auto& seq = x == Domain::A ? batch[u]->a : batch[u]->b;
      const int n_items =
          x == Domain::A ? model.config().n_items_a : model.config().n_items_b;
      std::set<int> own;
      for (const auto& it : seq) own.insert(it.item);
      std::vector<int> complement;
      complement.reserve(static_cast<std::size_t>(n_items));
      for (int i = 0; i < n_items; ++i) {
        if (own.count(i) == 0) complement.push_back(i);
      }
      if (complement.empty()) {
        if (skipped_users != nullptr) ++(*skipped_users);
        continue;
      }
      // Frozen geometry for rank weights: squared distances from the current
      // values of the sequence embedding to every catalog row.
      const Tensor& cat = runs[u].catalog(x).tape->value(runs[u].catalog(x));
      const Tensor& se = runs[u].se(x).tape->value(runs[u].se(x));
      Eigen::VectorXd d2(n_items);
      for (int i = 0; i < n_items; ++i) {
        d2(i) = (cat.row(i) - se.row(0)).squaredNorm();
      }
      std::uniform_int_distribution<std::size_t> pick(0, complement.size() - 1);
      for (int p : own) {  // std::set: ascending, deterministic
        int rank = 1;
        for (int i = 0; i < n_items; ++i) {
          if (i == p) continue;
          if (d2(i) < d2(p) || (d2(i) == d2(p) && i < p)) ++rank;
        }
        const double w = std::log(static_cast<double>(rank) + 1.0);
        for (int k = 0; k < negatives_per_positive; ++k) {
          pairs.push_back({u, x, p, complement[pick(rng)], w});
        }
      }
    }
  }
  return pairs;
}

Var collaborative_loss(Tape& tape, const std::vector<SequenceRun>& runs,
                       const std::vector<CollabPair>& pairs, double margin) {
  Var acc;
  for (const CollabPair& pr : pairs) {
    const SequenceRun& run = runs.at(pr.run_index);
    Var se = run.se(pr.domain);
    Var cat = run.catalog(pr.domain);
    Var dp = sub(se, rows(cat, {pr.positive}));
    Var dn = sub(se, rows(cat, {pr.negative}));
    Var hinge = relu(shift(sub(dot(dp, dp), dot(dn, dn)), margin));
    acc = acc.valid() ? add(acc, scale(hinge, pr.weight)) : scale(hinge, pr.weight);
  }
  if (!acc.valid()) return tape.constant(Tensor::Zero(1, 1));
  return acc;
}

Var contrastive_domain_loss(Tape& tape, const std::vector<std::pair<Var, Var>>& view_pairs) {
  const std::size_t n = view_pairs.size();
  if (n == 0) return tape.constant(Tensor::Zero(1, 1));
  std::vector<Var> views;
  views.reserve(2 * n);
  for (const auto& [orig, masked] : view_pairs) {
    if (!orig.valid() || !masked.valid()) {
      throw std::invalid_argument("contrastive: invalid view embedding");
    }
    views.push_back(orig);
    views.push_back(masked);
  }
  Var acc;
  for (std::size_t a = 0; a < views.size(); ++a) {
    const std::size_t partner = a ^ 1;
    Var scores = dot(views[a], views[partner]);  // positive goes first
    for (std::size_t o = 0; o < views.size(); ++o) {
      if (o == a || o == partner) continue;
      scores = concat_rows(scores, dot(views[a], views[o]));
    }
    Var anchor_loss = sub(logsumexp(scores), element(scores, 0, 0));
    acc = acc.valid() ? add(acc, anchor_loss) : anchor_loss;
  }
  return scale(acc, 1.0 / static_cast<double>(views.size()));
}

namespace {

std::string norm_dump(const ParameterStore& store) {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(3);
  for (const auto& [name, p] : store.params()) {
    os << "\n  " << name << " |value|=" << p.value.norm() << " |grad|=" << p.grad.norm();
  }
  return os.str();
}

std::string fmt6(double x) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << x;
  return os.str();
}

// Sample ceil(ratio * len) distinct positions.
std::vector<int> sample_mask_positions(int len, double ratio, std::mt19937_64& rng) {
  int k = static_cast<int>(std::ceil(ratio * static_cast<double>(len)));
  k = std::max(1, std::min(k, len));
  std::vector<int> all(static_cast<std::size_t>(len));
  std::iota(all.begin(), all.end(), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, len - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
  }
  all.resize(static_cast<std::size_t>(k));
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

std::string epoch_tsv_header() {
  return "epoch\tnll_a\tnll_b\tcollaborative\tcontrastive\ttotal"
         "\tval_hr@5\tval_hr@10\tval_hr@20"
         "\tval_ndcg@5\tval_ndcg@10\tval_ndcg@20"
         "\tval_mrr@5\tval_mrr@10\tval_mrr@20";
}

std::string epoch_tsv_row(const EpochRow& row) {
  std::ostringstream os;
  os << row.epoch << "\t" << fmt6(row.loss.nll_a) << "\t" << fmt6(row.loss.nll_b) << "\t"
     << fmt6(row.loss.collaborative) << "\t" << fmt6(row.loss.contrastive) << "\t"
     << fmt6(row.loss.total);
  if (row.has_val) {
    for (const auto& vals : {row.val_hr, row.val_ndcg, row.val_mrr}) {
      for (double v : vals) os << "\t" << fmt6(v);
    }
  } else {
    for (int i = 0; i < 9; ++i) os << "\t-";
  }
  return os.str();
}

TrainResult train(Model& model, const Dataset& data, const SplitIndices& split,
                  const TrainConfig& cfg, std::uint64_t seed, std::ostream* console) {
  std::vector<const SequenceTriple*> train_ptr, val_ptr;
  for (int i : split.train) train_ptr.push_back(&data.triples.at(static_cast<std::size_t>(i)));
  for (int i : split.val) val_ptr.push_back(&data.triples.at(static_cast<std::size_t>(i)));
  if (train_ptr.empty()) throw DataError("train: training split is empty");

  AdamState adam(cfg.learning_rate);
  std::mt19937_64 rng_shuffle(seed ^ 0x5DEECE66DULL);
  std::mt19937_64 rng_mask(seed ^ 0x9E3779B97F4A7C15ULL);
  std::mt19937_64 rng_neg(seed ^ 0xD1B54A32D192ED03ULL);

  const bool use_col =
      !cfg.ablation.no_collaborative && cfg.lambda_collaborative > 0.0;
  const bool use_con = !cfg.ablation.no_contrastive && cfg.lambda_contrastive > 0.0;

  TrainResult result;
  double best_score = -std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_ptr.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng_shuffle);

    LossBreakdown epoch_sum;
    int n_batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      // Work on pre-truncated triples so mask positions line up with what the
      // model actually consumes.
      std::vector<SequenceTriple> truncs;
      truncs.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        truncs.push_back(truncate_triple(*train_ptr[order[i]], cfg.max_seq_len));
      }
      std::vector<const SequenceTriple*> batch;
      for (const auto& t : truncs) batch.push_back(&t);

      Tape tape;
      RunOptions ro;
      ro.step_predictions = true;
      std::vector<SequenceRun> runs = forward_batch(tape, model, batch, ro);
      for (const auto& r : runs) result.gate_empty_neighbourhoods += r.empty_neighbourhoods;

      std::vector<const SequenceRun*> run_ptrs;
      for (const auto& r : runs) run_ptrs.push_back(&r);
      Var la = nll_loss(tape, run_ptrs, Domain::A, batch.size());
      Var lb = nll_loss(tape, run_ptrs, Domain::B, batch.size());
      Var total = add(la, lb);

      LossBreakdown parts;
      parts.nll_a = tape.value(la)(0, 0);
      parts.nll_b = tape.value(lb)(0, 0);

      if (use_col) {
        auto pairs = sample_collab_pairs(runs, batch, model, cfg.negatives_per_positive,
                                         rng_neg, &result.collab_skipped_users);
        Var lc = collaborative_loss(tape, runs, pairs, cfg.margin);
        parts.collaborative = tape.value(lc)(0, 0);
        total = add(total, scale(lc, cfg.lambda_collaborative));
      }
      if (use_con) {
        Var lcon;
        for (Domain x : {Domain::A, Domain::B}) {
          std::vector<std::pair<Var, Var>> view_pairs;
          for (std::size_t u = 0; u < batch.size(); ++u) {
            const auto& seq = x == Domain::A ? batch[u]->a : batch[u]->b;
            if (seq.empty() || !runs[u].has(x)) continue;
            MaskSpec spec;
            spec.domain = x;
            spec.positions =
                sample_mask_positions(static_cast<int>(seq.size()), cfg.mask_ratio, rng_mask);
            RunOptions mro;
            mro.mask = &spec;
            SequenceRun masked = run_sequence(tape, model, *batch[u], mro);
            result.gate_empty_neighbourhoods += masked.empty_neighbourhoods;
            view_pairs.emplace_back(runs[u].se(x), masked.se(x));
          }
          Var ld = contrastive_domain_loss(tape, view_pairs);
          lcon = lcon.valid() ? add(lcon, ld) : ld;
        }
        parts.contrastive = tape.value(lcon)(0, 0);
        total = add(total, scale(lcon, cfg.lambda_contrastive));
      }

      parts.total = tape.value(total)(0, 0);
      if (!std::isfinite(parts.total) || !std::isfinite(parts.nll_a) ||
          !std::isfinite(parts.nll_b) || !std::isfinite(parts.collaborative) ||
          !std::isfinite(parts.contrastive)) {
        throw DivergenceError("loss is not finite in epoch " + std::to_string(epoch) +
                              "; parameter norms:" + norm_dump(model.store()));
      }
      tape.backward(total);
      adam_step(model.store(), adam);

      epoch_sum.nll_a += parts.nll_a;
      epoch_sum.nll_b += parts.nll_b;
      epoch_sum.collaborative += parts.collaborative;
      epoch_sum.contrastive += parts.contrastive;
      epoch_sum.total += parts.total;
      ++n_batches;
    }

    EpochRow row;
    row.epoch = epoch;
    const double nb = static_cast<double>(n_batches);
    row.loss = {epoch_sum.nll_a / nb, epoch_sum.nll_b / nb, epoch_sum.collaborative / nb,
                epoch_sum.contrastive / nb, epoch_sum.total / nb};

    if (!val_ptr.empty()) {
      const std::vector<int> cutoffs = {5, 10, 20};
      EvalReport rep = evaluate(model, val_ptr, cutoffs);
      int domains = 0;
      for (const auto& [domain, metrics] : rep.metrics) {
        for (std::size_t c = 0; c < cutoffs.size(); ++c) {
          const std::string k = "@" + std::to_string(cutoffs[c]);
          row.val_hr[c] += metrics.at("hr" + k);
          row.val_ndcg[c] += metrics.at("ndcg" + k);
          row.val_mrr[c] += metrics.at("mrr" + k);
        }
        ++domains;
      }
      if (domains > 0) {
        row.has_val = true;
        for (std::size_t c = 0; c < cutoffs.size(); ++c) {
          row.val_hr[c] /= domains;
          row.val_ndcg[c] /= domains;
          row.val_mrr[c] /= domains;
        }
      }
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const double score = row.has_val ? row.val_hr[1] : static_cast<double>(epoch);
    if (score > best_score) {
      best_score = score;
      result.best_epoch = epoch;
      result.best_params.clear();
      for (const auto& [name, p] : model.store().params()) result.best_params[name] = p.value;
    }

    if (console != nullptr) {
      (*console) << epoch_tsv_row(row) << "\t" << fmt6(row.seconds) << "s" << std::endl;
    }
    result.epochs.push_back(row);
  }

  for (const auto& [name, value] : result.best_params) {
    model.store().at(name).value = value;
  }
  return result;
}

}  // namespace ddghm

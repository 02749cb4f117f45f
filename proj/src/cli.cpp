// SPDX-License-Identifier: Apache-2.0
#include "ddghm/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace ddghm {

namespace {

// Catch the module-level error types and translate them to exit codes so
// every subcommand reports failures the same way.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

nlohmann::json manifest_json(const std::string& command, const nlohmann::json& config,
                             std::uint64_t seed,
                             const std::map<std::string, std::string>& inputs,
                             const std::vector<std::string>& outputs,
                             const std::string& started, const std::string& finished) {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config;
  j["seed"] = seed;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["started"] = started;
  j["finished"] = finished;
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("short write: " + path);
}

Dataset read_processed_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file: " + path);
  return read_processed(in);
}

std::vector<const SequenceTriple*> select_split(const Dataset& ds, const SplitIndices& split,
                                                const std::string& which) {
  std::vector<int> idx;
  if (which == "train") {
    idx = split.train;
  } else if (which == "val") {
    idx = split.val;
  } else if (which == "test") {
    idx = split.test;
  } else if (which == "all") {
    for (std::size_t i = 0; i < ds.triples.size(); ++i) idx.push_back(static_cast<int>(i));
  } else {
    throw ValidationError("unknown split '" + which + "' (want train, val, test or all)");
  }
  std::vector<const SequenceTriple*> out;
  for (int i : idx) out.push_back(&ds.triples.at(static_cast<std::size_t>(i)));
  return out;
}

}  // namespace

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config is not valid JSON: " + std::string(e.what()));
  }
  return TrainConfig::from_json(j);
}

std::string fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open for digest: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (!in) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016" PRIx64, h);
  return hex;
}

std::string iso8601_utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int cmd_preprocess(const PreprocessArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    TrainConfig cfg = load_config_file(args.config);
    if (cfg.period_length <= 0) {
      throw ValidationError("config: period_length must be set (> 0) for preprocessing");
    }
    std::ifstream in(args.input);
    if (!in) throw DataError("cannot open input log: " + args.input);
    ParseResult parsed = parse_log(in);
    out << "read " << parsed.lines_read << " lines (" << parsed.comment_lines
        << " comments), " << parsed.events.size() << " events, " << parsed.rejected
        << " rejected\n";
    for (const auto& d : parsed.diagnostics) err << "reject: " << d << "\n";
    if (parsed.events.empty()) throw DataError("input holds no usable events");

    PreprocessConfig pc;
    pc.min_interactions = cfg.min_interactions;
    pc.period_length = cfg.period_length;
    pc.min_items_per_domain = cfg.min_items_per_domain;
    Dataset ds;
    try {
      ds = preprocess(parsed.events, pc);
    } catch (const DataError&) {
      throw;  // message already carries the stage statistics
    }
    out << ds.stats.to_string();
    std::ostringstream body;
    write_processed(body, ds);
    write_text_file(args.output, body.str());
    out << "wrote " << ds.triples.size() << " sequences to " << args.output << "\n";
    return kExitOk;
  });
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    const std::string started = iso8601_utc_now();
    TrainConfig cfg = load_config_file(args.config);
    Dataset ds = read_processed_file(args.data);
    SplitIndices split = split_dataset(ds.triples.size(), cfg.split_train, cfg.split_val,
                                       cfg.split_test, args.seed);

    ModelConfig mc;
    mc.n_items_a = ds.vocab_a.size();
    mc.n_items_b = ds.vocab_b.size();
    mc.hidden_dim = cfg.hidden_dim;
    mc.prop_steps = cfg.prop_steps;
    mc.max_seq_len = cfg.max_seq_len;
    mc.ablation = cfg.ablation;
    Model model(mc, args.seed);

    out << "training on " << split.train.size() << " sequences (" << split.val.size()
        << " val, " << split.test.size() << " test), " << model.store().parameter_count()
        << " parameters\n";
    out << epoch_tsv_header() << "\tseconds\n";
    TrainResult tr = train(model, ds, split, cfg, args.seed, &out);

    std::filesystem::create_directories(args.outdir);
    const std::string epochs_path = args.outdir + "/epochs.tsv";
    {
      std::ostringstream body;
      body << epoch_tsv_header() << "\n";
      for (const auto& row : tr.epochs) body << epoch_tsv_row(row) << "\n";
      write_text_file(epochs_path, body.str());
    }
    const std::string ckpt_path = args.outdir + "/model.ckpt";
    nlohmann::json extra;
    extra["train_config"] = cfg.to_json();
    extra["data_digest"] = fnv1a64_file(args.data);
    extra["best_epoch"] = tr.best_epoch;
    save_checkpoint(ckpt_path, model, extra);

    const std::string manifest_path = args.outdir + "/manifest.json";
    nlohmann::json manifest = manifest_json(
        "train", cfg.to_json(), args.seed,
        {{args.data, fnv1a64_file(args.data)}, {args.config, fnv1a64_file(args.config)}},
        {epochs_path, ckpt_path}, started, iso8601_utc_now());
    write_text_file(manifest_path, manifest.dump(2) + "\n");

    out << "best epoch " << tr.best_epoch << "; wrote " << ckpt_path << "\n";
    if (tr.gate_empty_neighbourhoods > 0) {
      err << "note: " << tr.gate_empty_neighbourhoods
          << " transfer-gate nodes had no global neighbours\n";
    }
    if (tr.collab_skipped_users > 0) {
      err << "note: " << tr.collab_skipped_users
          << " user-domain pairs had no negative candidates\n";
    }
    return kExitOk;
  });
}

int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    LoadedCheckpoint ckpt = load_checkpoint(args.checkpoint);
    Dataset ds = read_processed_file(args.data);
    if (ds.vocab_a.size() != ckpt.model.config().n_items_a ||
        ds.vocab_b.size() != ckpt.model.config().n_items_b) {
      throw DataError("data vocabulary does not match the checkpointed model");
    }
    TrainConfig cfg;
    if (ckpt.extra.count("train_config")) {
      cfg = TrainConfig::from_json(ckpt.extra.at("train_config"));
    }
    SplitIndices split = split_dataset(ds.triples.size(), cfg.split_train, cfg.split_val,
                                       cfg.split_test, ckpt.seed);
    auto subset = select_split(ds, split, args.split);
    if (subset.empty()) throw DataError("split '" + args.split + "' is empty");
    EvalReport report = evaluate(ckpt.model, subset, cfg.eval_cutoffs);
    out << format_metrics_tsv(report);
    if (!args.output.empty()) {
      nlohmann::json j = metrics_to_json(report);
      j["split"] = args.split;
      j["checkpoint"] = args.checkpoint;
      write_text_file(args.output, j.dump(2) + "\n");
    }
    return kExitOk;
  });
}

GradcheckSetup gradcheck_setup() {
  GradcheckSetup s;
  auto ev = [](int item, std::int64_t ts, Domain d) {
    SeqItem it;
    it.item = item;
    it.ts = ts;
    it.src = d;
    return it;
  };
  SequenceTriple u0;
  u0.user = 0;
  u0.a = {ev(0, 10, Domain::A), ev(1, 30, Domain::A), ev(2, 50, Domain::A)};
  u0.b = {ev(0, 20, Domain::B), ev(1, 40, Domain::B)};
  u0.m = merge_chronological(u0.a, u0.b);
  SequenceTriple u1;
  u1.user = 1;
  u1.a = {ev(3, 15, Domain::A), ev(4, 35, Domain::A)};
  u1.b = {ev(2, 5, Domain::B), ev(3, 25, Domain::B), ev(4, 45, Domain::B)};
  u1.m = merge_chronological(u1.a, u1.b);
  s.triples = {u0, u1};

  s.cfg.hidden_dim = 6;
  s.cfg.prop_steps = 1;
  s.cfg.max_seq_len = 50;
  s.cfg.lambda_collaborative = 0.5;
  s.cfg.lambda_contrastive = 0.5;
  s.cfg.margin = 1.0;
  s.cfg.negatives_per_positive = 1;
  s.cfg.mask_ratio = 0.3;
  return s;
}

double run_gradcheck(double eps, std::uint64_t seed, double* elapsed_seconds) {
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckSetup setup = gradcheck_setup();
  const TrainConfig& cfg = setup.cfg;

  ModelConfig mc;
  mc.n_items_a = 6;
  mc.n_items_b = 6;
  mc.hidden_dim = cfg.hidden_dim;
  mc.prop_steps = cfg.prop_steps;
  mc.max_seq_len = cfg.max_seq_len;
  Model model(mc, seed);

  std::vector<const SequenceTriple*> batch;
  for (const auto& t : setup.triples) batch.push_back(&t);

  // Freeze every stochastic choice up front so finite differences see a
  // deterministic function of the parameters.
  std::mt19937_64 rng(seed ^ 0xA5A5A5A5ULL);
  std::vector<MaskSpec> masks;
  for (const auto* t : batch) {
    for (Domain x : {Domain::A, Domain::B}) {
      const auto& seq = x == Domain::A ? t->a : t->b;
      MaskSpec spec;
      spec.domain = x;
      const int len = static_cast<int>(seq.size());
      const int k = std::max(1, static_cast<int>(std::ceil(cfg.mask_ratio * len)));
      std::vector<int> all(static_cast<std::size_t>(len));
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), rng);
      all.resize(static_cast<std::size_t>(std::min(k, len)));
      std::sort(all.begin(), all.end());
      spec.positions = all;
      masks.push_back(spec);
    }
  }
  std::vector<CollabPair> pairs;
  {
    Tape tape;
    auto runs = forward_batch(tape, model, batch, {});
    pairs = sample_collab_pairs(runs, batch, model, cfg.negatives_per_positive, rng);
  }

  auto builder = [&](Tape& tape, ParameterStore& store) -> Var {
    (void)store;  // the builder closes over the owning model
    RunOptions ro;
    ro.step_predictions = true;
    std::vector<SequenceRun> runs = forward_batch(tape, model, batch, ro);
    std::vector<const SequenceRun*> run_ptrs;
    for (const auto& r : runs) run_ptrs.push_back(&r);
    Var total = add(nll_loss(tape, run_ptrs, Domain::A, batch.size()),
                    nll_loss(tape, run_ptrs, Domain::B, batch.size()));
    total = add(total, scale(collaborative_loss(tape, runs, pairs, cfg.margin),
                             cfg.lambda_collaborative));
    Var lcon;
    for (Domain x : {Domain::A, Domain::B}) {
      std::vector<std::pair<Var, Var>> views;
      for (std::size_t u = 0; u < batch.size(); ++u) {
        const MaskSpec& spec = masks[u * 2 + (x == Domain::A ? 0 : 1)];
        RunOptions mro;
        mro.mask = &spec;
        SequenceRun masked = run_sequence(tape, model, *batch[u], mro);
        views.emplace_back(runs[u].se(x), masked.se(x));
      }
      Var ld = contrastive_domain_loss(tape, views);
      lcon = lcon.valid() ? add(lcon, ld) : ld;
    }
    total = add(total, scale(lcon, cfg.lambda_contrastive));
    return total;
  };

  const double worst = grad_check(builder, model.store(), eps);
  if (elapsed_seconds != nullptr) {
    *elapsed_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return worst;
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() {
    if (args.eps < 1e-7 || args.eps > 1e-3) {
      throw ValidationError("gradcheck: eps must be in [1e-7, 1e-3]");
    }
    double elapsed = 0.0;
    const double worst = run_gradcheck(args.eps, args.seed, &elapsed);
    out.setf(std::ios::scientific);
    out.precision(3);
    out << "max relative gradient error " << worst << " (threshold 1.000e-04) in ";
    out.unsetf(std::ios::scientific);
    out.setf(std::ios::fixed);
    out.precision(1);
    out << elapsed << "s\n";
    if (worst >= 1e-4) {
      err << "gradient check failed\n";
      return kExitDivergence;
    }
    out << "gradient check passed\n";
    return kExitOk;
  });
}

}  // namespace ddghm

// SPDX-License-Identifier: Apache-2.0
#include "ddghm/dual_model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace ddghm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

nlohmann::json ablation_to_json(const AblationFlags& f) {
  return {{"local_only", f.local_only},
          {"global_only", f.global_only},
          {"plain_gru_gate", f.plain_gru_gate},
          {"no_collaborative", f.no_collaborative},
          {"no_contrastive", f.no_contrastive}};
}

AblationFlags ablation_from_json(const nlohmann::json& j) {
  AblationFlags f;
  f.local_only = j.value("local_only", false);
  f.global_only = j.value("global_only", false);
  f.plain_gru_gate = j.value("plain_gru_gate", false);
  f.no_collaborative = j.value("no_collaborative", false);
  f.no_contrastive = j.value("no_contrastive", false);
  return f;
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"n_items_a", c.n_items_a},     {"n_items_b", c.n_items_b},
          {"hidden_dim", c.hidden_dim},   {"prop_steps", c.prop_steps},
          {"max_seq_len", c.max_seq_len}, {"ablation", ablation_to_json(c.ablation)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_items_a = j.at("n_items_a").get<int>();
  c.n_items_b = j.at("n_items_b").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.prop_steps = j.at("prop_steps").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  if (j.count("ablation")) c.ablation = ablation_from_json(j.at("ablation"));
  return c;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
  if (cfg.n_items_a < 1 || cfg.n_items_b < 1) {
    throw ValidationError("model: both item vocabularies must be non-empty");
  }
  if (cfg.hidden_dim < 1 || cfg.prop_steps < 1 || cfg.max_seq_len < 1) {
    throw ValidationError("model: hidden_dim, prop_steps and max_seq_len must be >= 1");
  }
  if (cfg.ablation.local_only && cfg.ablation.global_only) {
    throw ValidationError("model: local_only and global_only are mutually exclusive");
  }
  const int d = cfg.hidden_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  // Registration order is fixed: it determines the RNG draw sequence.
  store_.add("embed.a", cfg.n_items_a + 1, d, bound);  // trailing row is MASK
  store_.add("embed.b", cfg.n_items_b + 1, d, bound);
  store_.add("bias.a", cfg.n_items_a, 1, bound);
  store_.add("bias.b", cfg.n_items_b, 1, bound);
  if (uses_local()) {
    add_propagation_params(store_, "local_a", d);
    add_propagation_params(store_, "local_b", d);
    add_readout_params(store_, "local_a", d);
    add_readout_params(store_, "local_b", d);
  }
  if (uses_global()) {
    add_propagation_params(store_, "global", d);
    add_readout_params(store_, "global_a", d);
    add_readout_params(store_, "global_b", d);
  }
  if (uses_gate()) {
    add_gate_params(store_, d, !cfg.ablation.plain_gru_gate);
  }
}

SequenceTriple truncate_triple(const SequenceTriple& t, int max_len) {
  if (max_len < 1) throw ValidationError("truncate: max_len must be >= 1");
  if (static_cast<int>(t.m.size()) <= max_len) return t;
  SequenceTriple out;
  out.user = t.user;
  out.m.assign(t.m.end() - max_len, t.m.end());
  for (const auto& it : out.m) (it.src == Domain::A ? out.a : out.b).push_back(it);
  return out;
}

namespace {

struct LocalTrack {
  GraphSnapshot g;
  Var h;
  std::vector<int> positions;
  int last_row = -1;
  int last_item = -1;
};

struct GlobalTrack {
  GraphSnapshot g;
  Var h;
  std::vector<int> pos_a, pos_b;
  int last_row_a = -1, last_row_b = -1;
  int last_gid = -1;

  std::vector<int>& pos(Domain d) { return d == Domain::A ? pos_a : pos_b; }
  int& last_row(Domain d) { return d == Domain::A ? last_row_a : last_row_b; }
};

// Rewrite the chosen positions of one domain (and the matching merged
// occurrences) to the MASK item.
SequenceTriple apply_mask(const SequenceTriple& t, const MaskSpec& mask, int mask_item) {
  SequenceTriple out = t;
  auto& seq = mask.domain == Domain::A ? out.a : out.b;
  for (int pos : mask.positions) {
    if (pos < 0 || pos >= static_cast<int>(seq.size())) {
      throw std::invalid_argument("mask position " + std::to_string(pos) + " out of range");
    }
    seq[static_cast<std::size_t>(pos)].item = mask_item;
  }
  int occ = 0;
  for (auto& it : out.m) {
    if (it.src != mask.domain) continue;
    for (int pos : mask.positions) {
      if (occ == pos) it.item = mask_item;
    }
    ++occ;
  }
  return out;
}

}  // namespace

SequenceRun run_sequence(Tape& tape, Model& model, const SequenceTriple& triple,
                         const RunOptions& opts) {
  const ModelConfig& cfg = model.config();
  if (triple.m.empty()) throw std::invalid_argument("run_sequence: empty sequence");
  validate_triple(triple, cfg.n_items_a, cfg.n_items_b);
  SequenceTriple eff = truncate_triple(triple, cfg.max_seq_len);
  if (opts.mask != nullptr) {
    eff = apply_mask(eff, *opts.mask, model.mask_index(opts.mask->domain));
  }

  ParameterStore& store = model.store();
  const int d = cfg.hidden_dim;

  Var table_a = tape.param(store.at("embed.a"));
  Var table_b = tape.param(store.at("embed.b"));
  auto table = [&](Domain x) { return x == Domain::A ? table_a : table_b; };
  Var global_table;
  if (model.uses_global()) global_table = concat_rows(table_a, table_b);

  PropagationParams prop_local[2];
  ReadoutParams ro_local[2];
  if (model.uses_local()) {
    prop_local[0] = propagation_refs(tape, store, "local_a");
    prop_local[1] = propagation_refs(tape, store, "local_b");
    ro_local[0] = readout_refs(tape, store, "local_a");
    ro_local[1] = readout_refs(tape, store, "local_b");
  }
  PropagationParams prop_global;
  ReadoutParams ro_global[2];
  if (model.uses_global()) {
    prop_global = propagation_refs(tape, store, "global");
    ro_global[0] = readout_refs(tape, store, "global_a");
    ro_global[1] = readout_refs(tape, store, "global_b");
  }
  GateParams gate;
  if (model.uses_gate()) gate = gate_refs(tape, store, !cfg.ablation.plain_gru_gate);

  LocalTrack local[2];
  GlobalTrack global;
  SequenceRun run;

  // Target of the next same-domain event, per merged position.
  std::vector<int> next_target(eff.m.size(), -1);
  {
    int seen[2] = {-1, -1};
    for (int t = static_cast<int>(eff.m.size()) - 1; t >= 0; --t) {
      const auto& e = eff.m[static_cast<std::size_t>(t)];
      next_target[static_cast<std::size_t>(t)] = seen[static_cast<int>(e.src)];
      seen[static_cast<int>(e.src)] = e.item;
    }
  }

  auto domain_se = [&](Domain x) -> Var {
    const int xi = static_cast<int>(x);
    if (model.uses_local()) {
      return readout(tape, local[xi].h, local[xi].positions, local[xi].last_row,
                     ro_local[xi]);
    }
    return readout(tape, global.h, global.pos(x), global.last_row(x), ro_global[xi]);
  };

  auto domain_catalog = [&](Domain x) -> Var {
    const int xi = static_cast<int>(x);
    const int n = x == Domain::A ? cfg.n_items_a : cfg.n_items_b;
    std::vector<int> ids;
    Var states;
    if (model.uses_local()) {
      ids = local[xi].g.nodes;
      states = local[xi].h;
    } else {
      const int offset = model.global_b_offset();
      std::vector<int> grows;
      for (int row = 0; row < global.g.size(); ++row) {
        const int gid = global.g.nodes[static_cast<std::size_t>(row)];
        const bool is_a = gid < offset;
        if ((x == Domain::A) != is_a) continue;
        grows.push_back(row);
        ids.push_back(is_a ? gid : gid - offset);
      }
      states = rows(global.h, grows);
    }
    Var full = scatter_rows(table(x), ids, states);  // (n+1) x D, MASK row last
    std::vector<int> keep(static_cast<std::size_t>(n));
    std::iota(keep.begin(), keep.end(), 0);
    return rows(full, keep);
  };

  for (std::size_t t = 0; t < eff.m.size(); ++t) {
    const SeqItem& e = eff.m[t];
    const Domain x = e.src;
    const int xi = static_cast<int>(x);
    const int item = e.item;

    // Transfer gate over the pre-step graphs: every node of the current
    // local graph receives a fused state before the new event lands.
    if (model.uses_gate() && local[xi].h.valid()) {
      Var se_l = readout(tape, local[xi].h, local[xi].positions, local[xi].last_row,
                         ro_local[xi]);
      Var se_g = readout(tape, global.h, global.pos(x), global.last_row(x), ro_global[xi]);
      TransferContext ctx;
      ctx.h_local = local[xi].h;
      ctx.h_global = global.h;
      ctx.se_local = se_l;
      ctx.se_global = se_g;
      GateTraceStep tr;
      for (int row = 0; row < local[xi].g.size(); ++row) {
        const int lid = local[xi].g.nodes[static_cast<std::size_t>(row)];
        const int gid = model.global_id(x, lid);
        ctx.local_rows.push_back(row);
        ctx.global_rows.push_back(global.g.row_of(gid));
        std::vector<int> nrows;
        std::vector<int> nids = neighbours(global.g, gid);
        nrows.reserve(nids.size());
        for (int nid : nids) nrows.push_back(global.g.row_of(nid));
        ctx.neighbour_rows.push_back(std::move(nrows));
        if (opts.trace) {
          tr.transferring.push_back(lid);
          tr.neighbour_ids.push_back(std::move(nids));
        }
      }
      GateOutcome out = apply_gate(tape, ctx, gate, d);
      local[xi].h = out.h_local;
      run.empty_neighbourhoods += out.empty_neighbourhoods;
      if (opts.trace) {
        tr.merged_index = static_cast<int>(t);
        tr.domain = x;
        run.trace.push_back(std::move(tr));
      }
    }

    if (model.uses_local()) {
      auto& lt = local[xi];
      if (!lt.g.has_node(item)) {
        Var emb = rows(table(x), {item});
        lt.h = lt.h.valid() ? concat_rows(lt.h, emb) : emb;
      }
      lt.g = lt.last_item >= 0 ? extend_snapshot(lt.g, lt.last_item, item)
                               : with_node(lt.g, item);
      lt.h = propagate(tape, lt.g, lt.h, prop_local[xi], cfg.prop_steps);
      const int row = lt.g.row_of(item);
      lt.positions.push_back(row);
      lt.last_row = row;
      lt.last_item = item;
    }

    if (model.uses_global()) {
      const int gid = model.global_id(x, item);
      if (!global.g.has_node(gid)) {
        Var emb = rows(global_table, {gid});
        global.h = global.h.valid() ? concat_rows(global.h, emb) : emb;
      }
      global.g = global.last_gid >= 0 ? extend_snapshot(global.g, global.last_gid, gid)
                                      : with_node(global.g, gid);
      global.h = propagate(tape, global.g, global.h, prop_global, cfg.prop_steps);
      const int row = global.g.row_of(gid);
      global.pos(x).push_back(row);
      global.last_row(x) = row;
      global.last_gid = gid;
    }

    if (opts.step_predictions && next_target[t] >= 0) {
      Var se = domain_se(x);
      Var logits = add(matmul(domain_catalog(x), transpose(se)),
                       tape.param(store.at(x == Domain::A ? "bias.a" : "bias.b")));
      run.steps.push_back({x, logits, next_target[t]});
    }
  }

  if (!eff.a.empty()) {
    run.has_a = true;
    run.se_a = domain_se(Domain::A);
    run.catalog_a = domain_catalog(Domain::A);
  }
  if (!eff.b.empty()) {
    run.has_b = true;
    run.se_b = domain_se(Domain::B);
    run.catalog_b = domain_catalog(Domain::B);
  }
  return run;
}

std::vector<SequenceRun> forward_batch(Tape& tape, Model& model,
                                       const std::vector<const SequenceTriple*>& batch,
                                       const RunOptions& opts) {
  std::vector<SequenceRun> out;
  out.reserve(batch.size());
  for (const SequenceTriple* t : batch) out.push_back(run_sequence(tape, model, *t, opts));
  return out;
}

void save_checkpoint(const std::string& path, const Model& model,
                     const nlohmann::json& extra) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  nlohmann::json meta;
  meta["model"] = model_config_to_json(model.config());
  meta["seed"] = model.store().seed();
  meta["extra"] = extra;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [name, p] : model.store().params()) {
    manifest.push_back({{"name", name},
                        {"rows", static_cast<long>(p.value.rows())},
                        {"cols", static_cast<long>(p.value.cols())}});
  }
  meta["params"] = manifest;
  out << "DDGHM-CKPT-1\n" << meta.dump() << "\n";
  for (const auto& [name, p] : model.store().params()) {
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(sizeof(double)) * p.value.size());
  }
  if (!out) throw DataError("short write while saving checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::string header, meta_line;
  if (!std::getline(in, header) || header != "DDGHM-CKPT-1") {
    throw DataError("not a DDGHM-CKPT-1 checkpoint: " + path);
  }
  if (!std::getline(in, meta_line)) throw DataError("checkpoint truncated: " + path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint metadata unreadable: " + std::string(e.what()));
  }
  ModelConfig cfg = model_config_from_json(meta.at("model"));
  const auto seed = meta.at("seed").get<std::uint64_t>();
  LoadedCheckpoint result{Model(cfg, seed), seed, meta.value("extra", nlohmann::json())};

  std::size_t filled = 0;
  for (const auto& entry : meta.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    const long rows = entry.at("rows").get<long>();
    const long cols = entry.at("cols").get<long>();
    if (!result.model.store().contains(name)) {
      throw DataError("checkpoint parameter unknown to this model: " + name);
    }
    Parameter& p = result.model.store().at(name);
    if (p.value.rows() != rows || p.value.cols() != cols) {
      throw DataError("checkpoint shape mismatch for " + name);
    }
    in.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(sizeof(double)) * p.value.size());
    if (!in) throw DataError("checkpoint truncated while reading " + name);
    ++filled;
  }
  if (filled != result.model.store().params().size()) {
    throw DataError("checkpoint parameter manifest incomplete");
  }
  char extra_byte;
  if (in.read(&extra_byte, 1)) throw DataError("trailing bytes after checkpoint payload");
  return result;
}

}  // namespace ddghm

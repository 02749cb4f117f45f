// SPDX-License-Identifier: Apache-2.0
// Dataset builders shared by the unit and acceptance tests.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ddghm/data_model.hpp"

namespace ddghm::testsupport {

inline SeqItem ev(int item, std::int64_t ts, Domain d) {
  SeqItem it;
  it.item = item;
  it.ts = ts;
  it.src = d;
  return it;
}

inline SequenceTriple make_triple(int user, const std::vector<SeqItem>& merged) {
  SequenceTriple t;
  t.user = user;
  t.m = merged;
  for (const auto& it : merged) (it.src == Domain::A ? t.a : t.b).push_back(it);
  return t;
}

inline Dataset wrap_dataset(std::vector<SequenceTriple> triples, int n_a, int n_b) {
  Dataset ds;
  for (int i = 0; i < n_a; ++i) {
    ds.vocab_a.index["a" + std::to_string(i)] = i;
    ds.vocab_a.items.push_back("a" + std::to_string(i));
    ds.vocab_a.counts.push_back(0);
  }
  for (int i = 0; i < n_b; ++i) {
    ds.vocab_b.index["b" + std::to_string(i)] = i;
    ds.vocab_b.items.push_back("b" + std::to_string(i));
    ds.vocab_b.counts.push_back(0);
  }
  for (auto& t : triples) {
    for (const auto& it : t.a) ds.vocab_a.counts.at(static_cast<std::size_t>(it.item))++;
    for (const auto& it : t.b) ds.vocab_b.counts.at(static_cast<std::size_t>(it.item))++;
  }
  ds.triples = std::move(triples);
  ds.stats.sequences = ds.triples.size();
  ds.stats.items_a = static_cast<std::size_t>(n_a);
  ds.stats.items_b = static_cast<std::size_t>(n_b);
  return ds;
}

/// Per-user cyclic item patterns, alternating domains. Every user's history
/// is distinct, so next items are memorizable from context alone.
inline Dataset make_memorization(int users, int items_per_domain) {
  std::vector<SequenceTriple> triples;
  for (int u = 0; u < users; ++u) {
    std::vector<SeqItem> merged;
    std::int64_t ts = 0;
    for (int i = 0; i < 5; ++i) {
      merged.push_back(ev((u + i) % items_per_domain, ts, Domain::A));
      ts += 7;
      merged.push_back(ev((3 * u + i) % items_per_domain, ts, Domain::B));
      ts += 7;
    }
    triples.push_back(make_triple(u, merged));
  }
  return wrap_dataset(std::move(triples), items_per_domain, items_per_domain);
}

/// Chunked cross-domain traffic where each chunk is [A:k, B:buffer, B:k+1]
/// with k drawn uniformly. The final B item of a chunk is a deterministic
/// function of the chunk's A item, while the B-only history gives no clue, so
/// predicting it requires information to cross domains.
inline Dataset make_cross_domain(int users, int chunks, int patterns, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, patterns - 1);
  std::vector<SequenceTriple> triples;
  for (int u = 0; u < users; ++u) {
    std::vector<SeqItem> merged;
    std::int64_t ts = 0;
    for (int c = 0; c < chunks; ++c) {
      const int k = pick(rng);
      merged.push_back(ev(k, ts, Domain::A));
      merged.push_back(ev(0, ts + 1, Domain::B));
      merged.push_back(ev(1 + k, ts + 2, Domain::B));
      ts += 10;
    }
    triples.push_back(make_triple(u, merged));
  }
  return wrap_dataset(std::move(triples), patterns, patterns + 1);
}

}  // namespace ddghm::testsupport

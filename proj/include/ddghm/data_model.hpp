// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "ddghm/errors.hpp"

namespace ddghm {

enum class Domain : int { A = 0, B = 1 };

inline char domain_char(Domain d) { return d == Domain::A ? 'A' : 'B'; }
inline const char* domain_name(Domain d) { return d == Domain::A ? "A" : "B"; }

/// One interaction inside a sequence: per-domain item index, timestamp, and
/// the domain the event came from (meaningful in merged sequences).
struct SeqItem {
  int item = -1;
  std::int64_t ts = 0;
  Domain src = Domain::A;
};

inline bool operator==(const SeqItem& x, const SeqItem& y) {
  return x.item == y.item && x.ts == y.ts && x.src == y.src;
}

/// Aligned (S_A, S_B, S_M) triple for one user-window. S_M interleaves both
/// domains chronologically; its restriction to either domain equals that
/// domain's sequence.
struct SequenceTriple {
  int user = -1;
  std::vector<SeqItem> a, b, m;
};

/// One raw log row, post-parse.
struct RawEvent {
  std::string user;
  std::string item;
  double rating = 0.0;
  std::int64_t ts = 0;
  Domain domain = Domain::A;
  std::size_t line = 0;
};

struct ParseResult {
  std::vector<RawEvent> events;
  std::size_t lines_read = 0;
  std::size_t comment_lines = 0;
  std::size_t rejected = 0;
  std::vector<std::string> diagnostics;  // first few reject reasons, with line numbers
};

/// Per-domain item vocabulary: contiguous indices over surviving items,
/// assigned in lexicographic item-id order.
struct Vocab {
  std::vector<std::string> items;            // index -> external id
  std::vector<long> counts;                  // index -> interaction count
  std::unordered_map<std::string, int> index;

  int size() const { return static_cast<int>(items.size()); }
};

struct PreprocessConfig {
  long min_interactions = 10;     // per user per domain, and per item
  std::int64_t period_length = 0; // window width in timestamp units; required > 0
  long min_items_per_domain = 5;  // events per domain for a window to survive
};

struct PreprocessStats {
  std::size_t events_in = 0;
  std::size_t users_raw = 0, items_a_raw = 0, items_b_raw = 0;
  std::size_t users_overlap = 0, events_overlap = 0;
  std::size_t filter_rounds = 0;
  std::size_t users_filtered = 0, items_a_filtered = 0, items_b_filtered = 0,
              events_filtered = 0;
  std::size_t windows_formed = 0, windows_kept = 0;
  std::size_t sequences = 0;
  std::size_t items_a = 0, items_b = 0;
  double avg_len_a = 0.0, avg_len_b = 0.0, avg_len_m = 0.0;

  std::string to_string() const;
};

/// Provenance for sequence ids: which raw user and time window produced them.
struct SequenceOrigin {
  std::string user;
  std::int64_t window = 0;
};

struct Dataset {
  Vocab vocab_a, vocab_b;
  std::vector<SequenceTriple> triples;   // triple i has user id i
  std::vector<SequenceOrigin> origins;   // parallel to triples; may be empty
  PreprocessStats stats;
};

struct SplitIndices {
  std::vector<int> train, val, test;
};

/// Reads `user item rating timestamp domain` TSV rows. `#`-prefixed and blank
/// lines are skipped; malformed rows are rejected and reported, not fatal.
ParseResult parse_log(std::istream& in);

/// Stable chronological merge of two per-domain sequences. Inputs must be
/// time-ordered; ties are broken domain-A-first (then input order).
std::vector<SeqItem> merge_chronological(const std::vector<SeqItem>& a,
                                         const std::vector<SeqItem>& b);

/// Overlap filter, iterated min-interaction filter, windowing, and sequence
/// assembly. Throws DataError (with the stats block in the message) when no
/// sequence survives.
Dataset preprocess(const std::vector<RawEvent>& events, const PreprocessConfig& cfg);

/// Seeded shuffle then contiguous cut. Ratios are normalized; counts use
/// round-half-away rounding with the remainder going to test. Throws
/// DataError when fewer than 3 triples exist.
SplitIndices split_dataset(std::size_t n_triples, double train_ratio, double val_ratio,
                           double test_ratio, std::uint64_t seed);

/// Throws DataError if the triple violates ordering or restriction equality.
void validate_triple(const SequenceTriple& t, int n_items_a, int n_items_b);

void write_processed(std::ostream& out, const Dataset& ds);
Dataset read_processed(std::istream& in);

}  // namespace ddghm

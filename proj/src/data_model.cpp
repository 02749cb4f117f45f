// SPDX-License-Identifier: Apache-2.0
#include "ddghm/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

namespace ddghm {

namespace {

constexpr std::size_t kMaxDiagnostics = 25;

void chomp(std::string& s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
}

std::vector<std::string> split_tabs(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

bool parse_int64(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtoll(s.c_str(), &end, 10);
  return end == s.c_str() + s.size();
}

// Deterministic total order on a user's raw events.
bool event_before(const RawEvent& x, const RawEvent& y) {
  if (x.ts != y.ts) return x.ts < y.ts;
  if (x.domain != y.domain) return x.domain == Domain::A;
  if (x.item != y.item) return x.item < y.item;
  return x.line < y.line;
}

}  // namespace

ParseResult parse_log(std::istream& in) {
  ParseResult r;
  std::string line;
  std::size_t lineno = 0;
  auto reject = [&r](std::size_t ln, const std::string& why) {
    ++r.rejected;
    if (r.diagnostics.size() < kMaxDiagnostics) {
      r.diagnostics.push_back("line " + std::to_string(ln) + ": " + why);
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    ++r.lines_read;
    chomp(line);
    if (line.empty() || line[0] == '#') {
      ++r.comment_lines;
      continue;
    }
    auto f = split_tabs(line);
    if (f.size() != 5) {
      reject(lineno, "expected 5 tab-separated fields, got " + std::to_string(f.size()));
      continue;
    }
    RawEvent ev;
    ev.user = f[0];
    ev.item = f[1];
    ev.line = lineno;
    if (ev.user.empty() || ev.item.empty()) {
      reject(lineno, "empty user or item id");
      continue;
    }
    if (!parse_double(f[2], ev.rating)) {
      reject(lineno, "bad rating '" + f[2] + "'");
      continue;
    }
    if (!parse_int64(f[3], ev.ts)) {
      reject(lineno, "bad timestamp '" + f[3] + "'");
      continue;
    }
    if (f[4] == "A") {
      ev.domain = Domain::A;
    } else if (f[4] == "B") {
      ev.domain = Domain::B;
    } else {
      reject(lineno, "bad domain '" + f[4] + "' (want A or B)");
      continue;
    }
    r.events.push_back(std::move(ev));
  }
  return r;
}

std::vector<SeqItem> merge_chronological(const std::vector<SeqItem>& a,
                                         const std::vector<SeqItem>& b) {
  std::vector<SeqItem> out;
  out.reserve(a.size() + b.size());
  // std::merge is stable and takes from the first range on ties, which
  // encodes the domain-A-first tie rule.
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out),
             [](const SeqItem& x, const SeqItem& y) { return x.ts < y.ts; });
  return out;
}

std::string PreprocessStats::to_string() const {
  std::ostringstream os;
  os << "events in:            " << events_in << "\n"
     << "raw users/items:      " << users_raw << " users, " << items_a_raw << " A items, "
     << items_b_raw << " B items\n"
     << "after overlap filter: " << users_overlap << " users, " << events_overlap
     << " events\n"
     << "after min-interaction filter (" << filter_rounds << " rounds): " << users_filtered
     << " users, " << items_a_filtered << " A items, " << items_b_filtered << " B items, "
     << events_filtered << " events\n"
     << "windows:              " << windows_formed << " formed, " << windows_kept
     << " kept\n"
     << "sequences:            " << sequences << "\n"
     << "vocabulary:           " << items_a << " A items, " << items_b << " B items\n";
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "avg length:           A " << avg_len_a << ", B " << avg_len_b << ", merged "
     << avg_len_m << "\n";
  return os.str();
}

Dataset preprocess(const std::vector<RawEvent>& events, const PreprocessConfig& cfg) {
  if (cfg.period_length <= 0) {
    throw ValidationError("preprocess: period_length must be positive");
  }
  if (cfg.min_interactions < 1 || cfg.min_items_per_domain < 1) {
    throw ValidationError("preprocess: thresholds must be at least 1");
  }

  Dataset ds;
  PreprocessStats& st = ds.stats;
  st.events_in = events.size();
  {
    std::set<std::string> users;
    std::set<std::string> ia, ib;
    for (const auto& e : events) {
      users.insert(e.user);
      (e.domain == Domain::A ? ia : ib).insert(e.item);
    }
    st.users_raw = users.size();
    st.items_a_raw = ia.size();
    st.items_b_raw = ib.size();
  }

  // Stage 1: keep users active in both domains.
  std::vector<RawEvent> kept;
  {
    std::map<std::string, std::pair<long, long>> per_user;
    for (const auto& e : events) {
      auto& c = per_user[e.user];
      (e.domain == Domain::A ? c.first : c.second)++;
    }
    for (const auto& e : events) {
      const auto& c = per_user[e.user];
      if (c.first > 0 && c.second > 0) kept.push_back(e);
    }
    std::set<std::string> u;
    for (const auto& e : kept) u.insert(e.user);
    st.users_overlap = u.size();
    st.events_overlap = kept.size();
  }

  // Stage 2: iterate "drop rare items, then drop thin users" to a fixed point.
  // Dropping an item can push a user below the threshold and vice versa.
  while (true) {
    ++st.filter_rounds;
    bool changed = false;
    std::map<std::pair<int, std::string>, long> item_counts;
    for (const auto& e : kept) item_counts[{static_cast<int>(e.domain), e.item}]++;
    std::vector<RawEvent> next;
    next.reserve(kept.size());
    for (const auto& e : kept) {
      if (item_counts[{static_cast<int>(e.domain), e.item}] >= cfg.min_interactions) {
        next.push_back(e);
      } else {
        changed = true;
      }
    }
    kept.swap(next);
    std::map<std::string, std::pair<long, long>> per_user;
    for (const auto& e : kept) {
      auto& c = per_user[e.user];
      (e.domain == Domain::A ? c.first : c.second)++;
    }
    next.clear();
    for (const auto& e : kept) {
      const auto& c = per_user[e.user];
      if (c.first >= cfg.min_interactions && c.second >= cfg.min_interactions) {
        next.push_back(e);
      } else {
        changed = true;
      }
    }
    kept.swap(next);
    if (!changed) break;
  }
  {
    std::set<std::string> u;
    std::set<std::string> ia, ib;
    for (const auto& e : kept) {
      u.insert(e.user);
      (e.domain == Domain::A ? ia : ib).insert(e.item);
    }
    st.users_filtered = u.size();
    st.items_a_filtered = ia.size();
    st.items_b_filtered = ib.size();
    st.events_filtered = kept.size();
  }

  // Stage 3/4: per-user windows of cfg.period_length anchored at the user's
  // first surviving event; windows thin in either domain are dropped.
  std::map<std::string, std::vector<RawEvent>> by_user;
  for (const auto& e : kept) by_user[e.user].push_back(e);
  struct Window {
    std::string user;
    std::int64_t index;
    std::vector<RawEvent> events;
  };
  std::vector<Window> windows;
  for (auto& [user, evs] : by_user) {
    std::sort(evs.begin(), evs.end(), event_before);
    const std::int64_t t0 = evs.front().ts;
    std::map<std::int64_t, Window> slots;
    for (const auto& e : evs) {
      const std::int64_t k = (e.ts - t0) / cfg.period_length;
      auto& w = slots[k];
      w.user = user;
      w.index = k;
      w.events.push_back(e);
    }
    for (auto& [k, w] : slots) {
      ++st.windows_formed;
      long na = 0, nb = 0;
      for (const auto& e : w.events) (e.domain == Domain::A ? na : nb)++;
      if (na >= cfg.min_items_per_domain && nb >= cfg.min_items_per_domain) {
        ++st.windows_kept;
        windows.push_back(std::move(w));
      }
    }
  }

  // Stage 5: vocabulary over surviving events, then index-space sequences.
  std::map<std::string, long> ca, cb;
  for (const auto& w : windows) {
    for (const auto& e : w.events) (e.domain == Domain::A ? ca : cb)[e.item]++;
  }
  auto build_vocab = [](const std::map<std::string, long>& counts) {
    Vocab v;
    for (const auto& [id, n] : counts) {  // std::map: lexicographic order
      v.index[id] = static_cast<int>(v.items.size());
      v.items.push_back(id);
      v.counts.push_back(n);
    }
    return v;
  };
  ds.vocab_a = build_vocab(ca);
  ds.vocab_b = build_vocab(cb);
  st.items_a = ca.size();
  st.items_b = cb.size();

  std::size_t len_a = 0, len_b = 0;
  for (auto& w : windows) {
    SequenceTriple t;
    t.user = static_cast<int>(ds.triples.size());
    for (const auto& e : w.events) {  // already event-ordered
      SeqItem it;
      it.ts = e.ts;
      it.src = e.domain;
      if (e.domain == Domain::A) {
        it.item = ds.vocab_a.index.at(e.item);
        t.a.push_back(it);
      } else {
        it.item = ds.vocab_b.index.at(e.item);
        t.b.push_back(it);
      }
      t.m.push_back(it);
    }
    len_a += t.a.size();
    len_b += t.b.size();
    ds.origins.push_back({w.user, w.index});
    ds.triples.push_back(std::move(t));
  }
  st.sequences = ds.triples.size();
  if (!ds.triples.empty()) {
    st.avg_len_a = static_cast<double>(len_a) / static_cast<double>(ds.triples.size());
    st.avg_len_b = static_cast<double>(len_b) / static_cast<double>(ds.triples.size());
    st.avg_len_m =
        static_cast<double>(len_a + len_b) / static_cast<double>(ds.triples.size());
  }

  if (ds.triples.empty()) {
    throw DataError("dataset exhausted by preprocessing; nothing to train on\n" +
                    st.to_string());
  }
  return ds;
}

SplitIndices split_dataset(std::size_t n, double train_ratio, double val_ratio,
                           double test_ratio, std::uint64_t seed) {
  if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0 ||
      train_ratio + val_ratio + test_ratio <= 0) {
    throw ValidationError("split: ratios must be non-negative with a positive sum");
  }
  if (n < 3) {
    throw DataError("split: need at least 3 sequences, have " + std::to_string(n));
  }
  const double total = train_ratio + val_ratio + test_ratio;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  auto nd = static_cast<double>(n);
  std::size_t n_train = static_cast<std::size_t>(std::llround(nd * train_ratio / total));
  std::size_t n_val = static_cast<std::size_t>(std::llround(nd * val_ratio / total));
  if (n_train > n) n_train = n;
  if (n_train + n_val > n) n_val = n - n_train;

  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<long>(n_train));
  s.val.assign(order.begin() + static_cast<long>(n_train),
               order.begin() + static_cast<long>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<long>(n_train + n_val), order.end());
  return s;
}

void validate_triple(const SequenceTriple& t, int n_items_a, int n_items_b) {
  auto check_seq = [&](const std::vector<SeqItem>& s, const char* which) {
    std::int64_t prev = std::numeric_limits<std::int64_t>::min();
    for (const auto& it : s) {
      const int limit = it.src == Domain::A ? n_items_a : n_items_b;
      if (it.item < 0 || it.item >= limit) {
        throw DataError("sequence " + std::to_string(t.user) + " (" + which + "): item index " +
                        std::to_string(it.item) + " out of range");
      }
      if (it.ts < prev) {
        throw DataError("sequence " + std::to_string(t.user) + " (" + which +
                        "): timestamps not ordered");
      }
      prev = it.ts;
    }
  };
  for (const auto& it : t.a) {
    if (it.src != Domain::A) throw DataError("domain-A sequence holds a B event");
  }
  for (const auto& it : t.b) {
    if (it.src != Domain::B) throw DataError("domain-B sequence holds an A event");
  }
  check_seq(t.a, "A");
  check_seq(t.b, "B");
  check_seq(t.m, "M");
  // Restriction equality: the merged sequence is exactly the interleave.
  std::vector<SeqItem> ra, rb;
  for (const auto& it : t.m) (it.src == Domain::A ? ra : rb).push_back(it);
  if (!(ra == t.a) || !(rb == t.b)) {
    throw DataError("sequence " + std::to_string(t.user) +
                    ": merged sequence does not restrict to the per-domain sequences");
  }
}

void write_processed(std::ostream& out, const Dataset& ds) {
  out << "# ddghm-processed v1\n";
  auto dump_vocab = [&out](const Vocab& v, char dom) {
    out << "# items\t" << dom << "\t" << v.size() << "\n";
    for (int i = 0; i < v.size(); ++i) {
      out << "# item\t" << dom << "\t" << i << "\t" << v.items[static_cast<std::size_t>(i)]
          << "\t" << v.counts[static_cast<std::size_t>(i)] << "\n";
    }
  };
  dump_vocab(ds.vocab_a, 'A');
  dump_vocab(ds.vocab_b, 'B');
  if (!ds.origins.empty()) {
    for (std::size_t i = 0; i < ds.origins.size(); ++i) {
      out << "# sequence\t" << i << "\t" << ds.origins[i].user << "\t"
          << ds.origins[i].window << "\n";
    }
  }
  auto dump_seq = [&out](int user, char dom, const std::vector<SeqItem>& s) {
    out << user << "\t" << dom << "\t";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out << ",";
      out << s[i].item << ":" << s[i].ts << ":" << domain_char(s[i].src);
    }
    out << "\n";
  };
  for (const auto& t : ds.triples) {
    dump_seq(t.user, 'A', t.a);
    dump_seq(t.user, 'B', t.b);
    dump_seq(t.user, 'M', t.m);
  }
}

namespace {

std::vector<SeqItem> parse_items(const std::string& field, std::size_t lineno) {
  std::vector<SeqItem> out;
  if (field.empty()) return out;
  std::stringstream ss(field);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    SeqItem it;
    const auto p1 = tok.find(':');
    const auto p2 = tok.rfind(':');
    if (p1 == std::string::npos || p2 == p1) {
      throw DataError("line " + std::to_string(lineno) + ": bad item token '" + tok + "'");
    }
    std::int64_t idx = 0, ts = 0;
    if (!parse_int64(tok.substr(0, p1), idx) || !parse_int64(tok.substr(p1 + 1, p2 - p1 - 1), ts)) {
      throw DataError("line " + std::to_string(lineno) + ": bad item token '" + tok + "'");
    }
    const std::string src = tok.substr(p2 + 1);
    if (src != "A" && src != "B") {
      throw DataError("line " + std::to_string(lineno) + ": bad source tag '" + src + "'");
    }
    it.item = static_cast<int>(idx);
    it.ts = ts;
    it.src = src == "A" ? Domain::A : Domain::B;
    out.push_back(it);
  }
  return out;
}

}  // namespace

Dataset read_processed(std::istream& in) {
  Dataset ds;
  bool saw_header = false;
  std::string line;
  std::size_t lineno = 0;
  // pending sequences per user id, in the A/B/M line order
  int pending_user = -1;
  int pending_have = 0;
  SequenceTriple pending;

  auto flush_pending = [&]() {
    if (pending_user < 0) return;
    if (pending_have != 3) {
      throw DataError("sequence " + std::to_string(pending_user) +
                      ": expected A, B and M lines");
    }
    pending.user = static_cast<int>(ds.triples.size());
    ds.triples.push_back(pending);
    pending = SequenceTriple{};
    pending_user = -1;
    pending_have = 0;
  };

  while (std::getline(in, line)) {
    ++lineno;
    chomp(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto f = split_tabs(line.size() > 2 ? line.substr(2) : "");
      if (!f.empty() && f[0] == "ddghm-processed v1") saw_header = true;
      if (f.size() == 3 && f[0] == "items") {
        // size hint only; actual vocab comes from the item lines
      } else if (f.size() == 5 && f[0] == "item") {
        Vocab& v = f[1] == "A" ? ds.vocab_a : ds.vocab_b;
        std::int64_t idx = 0, count = 0;
        if ((f[1] != "A" && f[1] != "B") || !parse_int64(f[2], idx) ||
            !parse_int64(f[4], count) || idx != v.size()) {
          throw DataError("line " + std::to_string(lineno) + ": bad vocabulary entry");
        }
        v.index[f[3]] = static_cast<int>(v.items.size());
        v.items.push_back(f[3]);
        v.counts.push_back(count);
      } else if (f.size() == 4 && f[0] == "sequence") {
        ds.origins.push_back({f[2], 0});
        parse_int64(f[3], ds.origins.back().window);
      }
      continue;
    }
    auto f = split_tabs(line);
    if (f.size() != 3) {
      throw DataError("line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
    }
    std::int64_t uid = 0;
    if (!parse_int64(f[0], uid)) {
      throw DataError("line " + std::to_string(lineno) + ": bad user id '" + f[0] + "'");
    }
    if (pending_user != static_cast<int>(uid)) {
      flush_pending();
      pending_user = static_cast<int>(uid);
    }
    auto items = parse_items(f[2], lineno);
    if (f[1] == "A") {
      pending.a = std::move(items);
    } else if (f[1] == "B") {
      pending.b = std::move(items);
    } else if (f[1] == "M") {
      pending.m = std::move(items);
    } else {
      throw DataError("line " + std::to_string(lineno) + ": bad sequence kind '" + f[1] + "'");
    }
    ++pending_have;
  }
  flush_pending();
  if (!saw_header) throw DataError("not a ddghm processed file (missing header)");
  if (ds.triples.empty()) throw DataError("processed file holds no sequences");
  ds.stats.sequences = ds.triples.size();
  ds.stats.items_a = static_cast<std::size_t>(ds.vocab_a.size());
  ds.stats.items_b = static_cast<std::size_t>(ds.vocab_b.size());
  for (const auto& t : ds.triples) validate_triple(t, ds.vocab_a.size(), ds.vocab_b.size());
  return ds;
}

}  // namespace ddghm

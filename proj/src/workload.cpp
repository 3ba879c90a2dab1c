#include "ctxreuse/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "ctxreuse/error.hpp"

namespace ctxreuse {

DocId Interner::intern(std::string_view name) {
  auto it = ids_.find(std::string(name));
  if (it != ids_.end()) return it->second;
  const DocId id{names_.size()};
  names_.emplace_back(name);
  ids_.emplace(names_.back(), id);
  return id;
}

std::optional<DocId> Interner::find(std::string_view name) const {
  auto it = ids_.find(std::string(name));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Interner::name(DocId id) const {
  if (raw(id) >= names_.size()) {
    throw PreconditionError("doc id " + std::to_string(raw(id)) + " was never interned");
  }
  return names_[raw(id)];
}

Context to_context(const TraceRecord& record) {
  Context ctx;
  ctx.docs = record.retrieved;
  ctx.session_id = record.session_id;
  ctx.turn = record.turn;
  for (DocId d : record.retrieved) {
    auto it = record.doc_tokens.find(d);
    ctx.token_counts[d] = it == record.doc_tokens.end() ? kDefaultDocTokens : it->second;
  }
  return ctx;
}

void WorkloadSpec::validate() const {
  if (n_docs == 0 || n_sessions == 0 || turns_per_session == 0 || k == 0) {
    throw PreconditionError("workload counts must be positive");
  }
  if (k > n_docs) {
    throw PreconditionError("k (" + std::to_string(k) + ") exceeds the corpus size (" +
                            std::to_string(n_docs) + ")");
  }
  if (zipf_s < 0.0) throw PreconditionError("zipf_s must be non-negative");
  if (intra_session_overlap < 0.0 || intra_session_overlap > 1.0) {
    throw PreconditionError("intra_session_overlap must lie in [0, 1]");
  }
  if (doc_tokens <= 0) throw PreconditionError("doc_tokens must be positive");
  if (order_noise < 0.0) throw PreconditionError("order_noise must be non-negative");
}

ZipfSampler::ZipfSampler(std::size_t n, double s) : weights_(n), cumulative_(n) {
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    weights_[r] = 1.0 / std::pow(static_cast<double>(r + 1), s);
    total += weights_[r];
    cumulative_[r] = total;
  }
  for (std::size_t r = 0; r < n; ++r) {
    weights_[r] /= total;
    cumulative_[r] /= total;
  }
}

std::size_t ZipfSampler::operator()(std::mt19937_64& rng) const {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  if (it == cumulative_.end()) return cumulative_.size() - 1;
  return static_cast<std::size_t>(it - cumulative_.begin());
}

double ZipfSampler::cdf(std::size_t rank) const {
  if (rank >= cumulative_.size()) return 1.0;
  return cumulative_[rank];
}

namespace {

// Draws `count` distinct popularity-weighted ranks not marked in `taken`.
std::vector<std::size_t> sample_fresh(const ZipfSampler& zipf, std::size_t count,
                                      std::vector<bool>& taken, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 200 * (count + 1);
  while (out.size() < count && attempts < max_attempts) {
    ++attempts;
    const std::size_t r = zipf(rng);
    if (taken[r]) continue;
    taken[r] = true;
    out.push_back(r);
  }
  // Rejection stalls when the popular head is exhausted; finish with an
  // exact weighted draw over what is left.
  while (out.size() < count) {
    double total = 0.0;
    for (std::size_t r = 0; r < zipf.size(); ++r) {
      if (!taken[r]) total += zipf.weight(r);
    }
    if (total <= 0.0) break;
    double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t pick = zipf.size();
    for (std::size_t r = 0; r < zipf.size(); ++r) {
      if (taken[r]) continue;
      pick = r;
      u -= zipf.weight(r);
      if (u < 0.0) break;
    }
    taken[pick] = true;
    out.push_back(pick);
  }
  return out;
}

void rank_by_relevance(std::vector<std::size_t>& docs, const ZipfSampler& zipf, double noise,
                       std::mt19937_64& rng) {
  std::lognormal_distribution<double> jitter(0.0, noise);
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(docs.size());
  for (std::size_t d : docs) {
    const double j = noise > 0.0 ? jitter(rng) : 1.0;
    scored.emplace_back(zipf.weight(d) * j, d);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; i < docs.size(); ++i) docs[i] = scored[i].second;
}

std::string session_name(std::size_t s) { return "s" + std::to_string(s); }

}  // namespace

Trace generate(const WorkloadSpec& spec) {
  spec.validate();
  Trace trace;
  for (std::size_t d = 0; d < spec.n_docs; ++d) trace.interner.intern("doc" + std::to_string(d));
  const ZipfSampler zipf(spec.n_docs, spec.zipf_s);
  const std::size_t overlap_docs =
      static_cast<std::size_t>(std::llround(spec.intra_session_overlap * static_cast<double>(spec.k)));

  std::vector<bool> taken(spec.n_docs, false);
  for (std::size_t s = 0; s < spec.n_sessions; ++s) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> history;  // first-seen order
    std::vector<bool> in_history(spec.n_docs, false);
    for (std::size_t t = 0; t < spec.turns_per_session; ++t) {
      std::fill(taken.begin(), taken.end(), false);
      std::vector<std::size_t> docs;
      if (t > 0) {
        const std::size_t reuse = std::min(overlap_docs, history.size());
        std::vector<std::size_t> pool = history;
        for (std::size_t i = 0; i < reuse; ++i) {
          std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
          std::swap(pool[i], pool[pick(rng)]);
          docs.push_back(pool[i]);
        }
        for (std::size_t d : history) taken[d] = true;
      }
      const std::size_t fresh_needed = spec.k - docs.size();
      std::vector<std::size_t> fresh = sample_fresh(zipf, fresh_needed, taken, rng);
      docs.insert(docs.end(), fresh.begin(), fresh.end());
      rank_by_relevance(docs, zipf, spec.order_noise, rng);

      TraceRecord rec;
      rec.session_id = session_name(s);
      rec.turn = static_cast<std::uint32_t>(t);
      for (std::size_t d : docs) {
        const DocId id{d};
        rec.retrieved.push_back(id);
        rec.doc_tokens[id] = spec.doc_tokens;
        if (!in_history[d]) {
          in_history[d] = true;
          history.push_back(d);
        }
      }
      trace.records.push_back(std::move(rec));
    }
  }
  // Round-robin by turn so every session's turn t precedes any turn t+1.
  std::stable_sort(trace.records.begin(), trace.records.end(),
                   [](const TraceRecord& a, const TraceRecord& b) { return a.turn < b.turn; });
  return trace;
}

void write_trace(std::ostream& out, const Trace& trace) {
  for (const TraceRecord& rec : trace.records) {
    nlohmann::json retrieved = nlohmann::json::array();
    nlohmann::json tokens = nlohmann::json::object();
    for (DocId d : rec.retrieved) retrieved.push_back(trace.interner.name(d));
    for (const auto& [d, n] : rec.doc_tokens) tokens[trace.interner.name(d)] = n;
    nlohmann::json line = {
        {"session_id", rec.session_id},
        {"turn", rec.turn},
        {"retrieved", std::move(retrieved)},
        {"doc_tokens", std::move(tokens)},
    };
    if (rec.query) line["query"] = *rec.query;
    out << line.dump() << '\n';
  }
}

void save_trace(const std::filesystem::path& path, const Trace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_trace(out, trace);
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<TraceRecord> read_trace(std::istream& in, Interner& interner) {
  std::vector<TraceRecord> records;
  std::unordered_map<std::string, std::uint32_t> next_turn;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    TraceRecord rec;
    try {
      rec.session_id = j.at("session_id").get<std::string>();
      rec.turn = j.at("turn").get<std::uint32_t>();
      if (j.contains("query") && !j.at("query").is_null()) rec.query = j.at("query").get<std::string>();
      const auto names = j.at("retrieved").get<std::vector<std::string>>();
      const auto tokens = j.value("doc_tokens", std::map<std::string, TokenCount>{});
      std::unordered_set<DocId> seen;
      for (const std::string& name : names) {
        const DocId id = interner.intern(name);
        if (!seen.insert(id).second) {
          throw ValidationError("session '" + rec.session_id + "' turn " + std::to_string(rec.turn) +
                                ": document '" + name + "' retrieved twice");
        }
        rec.retrieved.push_back(id);
        auto it = tokens.find(name);
        const TokenCount n = it == tokens.end() ? kDefaultDocTokens : it->second;
        if (n <= 0) {
          throw ValidationError("session '" + rec.session_id + "' turn " + std::to_string(rec.turn) +
                                ": document '" + name + "' has a non-positive token count");
        }
        rec.doc_tokens[id] = n;
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    auto [it, fresh] = next_turn.try_emplace(rec.session_id, 0);
    if (rec.turn != it->second) {
      throw ValidationError("session '" + rec.session_id + "' turn " + std::to_string(rec.turn) +
                            ": expected turn " + std::to_string(it->second));
    }
    ++it->second;
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<TraceRecord> load_trace(const std::filesystem::path& path, Interner& interner) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open trace " + path.string());
  return read_trace(in, interner);
}

Trace load_trace(const std::filesystem::path& path) {
  Trace trace;
  trace.records = load_trace(path, trace.interner);
  return trace;
}

TraceStats compute_stats(const std::vector<TraceRecord>& records, std::size_t corpus_size) {
  TraceStats st;
  st.records = records.size();
  if (records.empty()) return st;

  std::unordered_map<DocId, std::size_t> freq;
  std::unordered_map<std::string, std::unordered_set<DocId>> history;
  std::unordered_map<DocId, std::size_t> first_turn_freq;
  std::size_t first_turns = 0;
  std::size_t retrieved = 0;
  double overlap_sum = 0.0;
  std::size_t overlap_turns = 0;
  for (const TraceRecord& rec : records) {
    retrieved += rec.retrieved.size();
    for (DocId d : rec.retrieved) ++freq[d];
    auto& seen = history[rec.session_id];
    if (rec.turn > 0 && !rec.retrieved.empty()) {
      std::size_t repeated = 0;
      for (DocId d : rec.retrieved) repeated += seen.count(d);
      overlap_sum += static_cast<double>(repeated) / static_cast<double>(rec.retrieved.size());
      ++overlap_turns;
    }
    if (rec.turn == 0) {
      ++first_turns;
      for (DocId d : rec.retrieved) ++first_turn_freq[d];
    }
    seen.insert(rec.retrieved.begin(), rec.retrieved.end());
  }
  st.sessions = history.size();
  st.distinct_docs = freq.size();
  st.mean_retrieved = static_cast<double>(retrieved) / static_cast<double>(records.size());

  std::vector<std::size_t> counts;
  counts.reserve(freq.size());
  for (const auto& [d, c] : freq) counts.push_back(c);
  std::sort(counts.begin(), counts.end(), std::greater<>());
  const std::size_t corpus = std::max(corpus_size, counts.size());
  const auto top = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(corpus)));
  std::size_t head = 0;
  for (std::size_t i = 0; i < std::min(top, counts.size()); ++i) head += counts[i];
  st.top20_share = retrieved == 0 ? 0.0 : static_cast<double>(head) / static_cast<double>(retrieved);

  st.intra_session_overlap = overlap_turns == 0 ? 0.0 : overlap_sum / static_cast<double>(overlap_turns);

  if (first_turns >= 2) {
    // Sum over pairs of |A n B| is sum over docs of C(f, 2).
    double shared_pairs = 0.0;
    for (const auto& [d, f] : first_turn_freq) {
      shared_pairs += static_cast<double>(f) * static_cast<double>(f - 1) / 2.0;
    }
    const double pairs = static_cast<double>(first_turns) * static_cast<double>(first_turns - 1) / 2.0;
    double first_turn_docs = 0.0;
    for (const TraceRecord& rec : records) {
      if (rec.turn == 0) first_turn_docs += static_cast<double>(rec.retrieved.size());
    }
    const double mean_k = first_turn_docs / static_cast<double>(first_turns);
    st.cross_session_overlap = shared_pairs / pairs / mean_k;
  }
  return st;
}

double calibrate_zipf(WorkloadSpec spec, double target_top20_share, double tolerance) {
  if (target_top20_share <= 0.0 || target_top20_share >= 1.0) {
    throw PreconditionError("target share must lie in (0, 1)");
  }
  auto share_at = [&](double s) {
    spec.zipf_s = s;
    return compute_stats(generate(spec).records, spec.n_docs).top20_share;
  };
  double lo = 0.0;
  double hi = 4.0;
  if (share_at(hi) < target_top20_share) return hi;
  for (int iter = 0; iter < 40; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double share = share_at(mid);
    if (std::abs(share - target_top20_share) <= tolerance && share >= target_top20_share) return mid;
    if (share < target_top20_share) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

}  // namespace ctxreuse

#include "mcsearch/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

#include "mcsearch/filtering.h"

namespace mcsearch {

std::size_t rank_of_true(std::span<const double> scores,
                         std::size_t true_index) {
  if (true_index >= scores.size()) throw Error("true index outside score list");
  const double t = scores[true_index];
  std::size_t above = 0;
  for (double s : scores)
    if (s > t) ++above;
  return above + 1;
}

MrrResult mrr(const TestSet& set, const PairScorer& scorer,
              const MrrOptions& options) {
  const std::size_t n = set.size();
  if (n == 0) throw Error("MRR over an empty test set");

  std::vector<std::string> codes;
  codes.reserve(n);
  for (const auto& e : set.entries) codes.push_back(e.code);

  std::vector<RankRecord> ranks(n);
  std::vector<std::exception_ptr> errors(n);
  auto rank_query = [&](std::size_t i) {
    try {
      const auto& entry = set.entries[i];
      std::vector<double> scores(n);
      for (std::size_t j = 0; j < n; ++j) {
        scores[j] = scorer(entry.query, codes[j]);
        if (!std::isfinite(scores[j]))
          throw Error("scorer returned a non-finite value for query " +
                      std::to_string(i) + " ('" + entry.id + "') and code " +
                      std::to_string(j));
      }
      ranks[i] = {entry.id, rank_of_true(scores, i), scores[i]};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, n);
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) rank_query(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += threads) rank_query(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  // Summed in query order regardless of thread count.
  double total = 0.0;
  for (const auto& r : ranks) total += 1.0 / static_cast<double>(r.rank);
  MrrResult result;
  result.per_set = {total / static_cast<double>(n)};
  result.mean = result.per_set.front();
  result.n_queries = n;
  result.ranks.push_back(std::move(ranks));
  return result;
}

MrrResult mrr_mean(std::span<const TestSet> sets, const PairScorer& scorer,
                   const MrrOptions& options) {
  if (sets.empty()) throw Error("MRR needs at least one test set");
  MrrResult result;
  double sum = 0.0;
  for (const auto& set : sets) {
    auto one = mrr(set, scorer, options);
    result.per_set.push_back(one.mean);
    result.n_queries += one.n_queries;
    result.ranks.push_back(std::move(one.ranks.front()));
    sum += one.mean;
  }
  result.mean = sum / static_cast<double>(sets.size());
  return result;
}

double compute_agreement(std::span<const int> human,
                         std::span<const int> original) {
  if (human.size() != original.size())
    throw Error("label vectors differ in length (" +
                std::to_string(human.size()) + " vs " +
                std::to_string(original.size()) + ")");
  if (human.empty()) throw Error("agreement over zero labels");
  std::size_t same = 0;
  for (std::size_t i = 0; i < human.size(); ++i) {
    if ((human[i] != 0 && human[i] != 1) ||
        (original[i] != 0 && original[i] != 1))
      throw Error("labels must be 0 or 1");
    if (human[i] == original[i]) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(human.size());
}

std::string ScoreCache::key(std::string_view query, std::string_view code) {
  std::string k = std::to_string(query.size());
  k.push_back(':');
  k.append(query);
  k.append(code);
  return k;
}

std::optional<double> ScoreCache::get(std::string_view query,
                                      std::string_view code) const {
  auto k = key(query, code);
  std::shared_lock lock(mu_);
  auto it = scores_.find(k);
  if (it == scores_.end()) return std::nullopt;
  return it->second;
}

void ScoreCache::put(std::string_view query, std::string_view code,
                     double score) {
  auto k = key(query, code);
  std::unique_lock lock(mu_);
  scores_.emplace(std::move(k), score);
}

std::size_t ScoreCache::size() const {
  std::shared_lock lock(mu_);
  return scores_.size();
}

PairScorer memoize(PairScorer scorer, std::shared_ptr<ScoreCache> cache) {
  return [scorer = std::move(scorer), cache = std::move(cache)](
             std::string_view query, std::string_view code) {
    if (auto hit = cache->get(query, code)) return *hit;
    double s = scorer(query, code);
    cache->put(query, code, s);
    return s;
  };
}

void MrrTable::set(const std::string& row, const std::string& column,
                   double value) {
  auto col = std::find(columns.begin(), columns.end(), column);
  std::size_t c = static_cast<std::size_t>(col - columns.begin());
  if (col == columns.end()) {
    columns.push_back(column);
    for (auto& r : rows) r.second.emplace_back();
  }
  auto it = std::find_if(rows.begin(), rows.end(),
                         [&](const auto& r) { return r.first == row; });
  if (it == rows.end()) {
    rows.emplace_back(row, std::vector<std::optional<double>>(columns.size()));
    it = std::prev(rows.end());
  }
  it->second[c] = value;
}

void write_mrr_table(std::ostream& out, const MrrTable& table,
                     const std::optional<ArtifactHeader>& header) {
  if (header) out << header->line() << '\n';
  out << "nl";
  for (const auto& c : table.columns) out << '\t' << c;
  out << '\n';
  char buf[32];
  for (const auto& [name, cells] : table.rows) {
    out << name;
    for (const auto& v : cells) {
      if (v) {
        std::snprintf(buf, sizeof buf, "%.3f", *v);
        out << '\t' << buf;
      } else {
        out << "\t-";
      }
    }
    out << '\n';
  }
}

void write_rank_records(std::ostream& out, const MrrResult& result,
                        const std::optional<ArtifactHeader>& header) {
  if (header) out << header->line() << '\n';
  out << "set\tquery_index\tquery_id\trank\ttrue_score\n";
  for (std::size_t s = 0; s < result.ranks.size(); ++s)
    for (std::size_t i = 0; i < result.ranks[s].size(); ++i) {
      const auto& r = result.ranks[s][i];
      out << s << '\t' << i << '\t' << tsv_escape(r.query_id) << '\t' << r.rank
          << '\t' << format_real(r.true_score) << '\n';
    }
}

}  // namespace mcsearch

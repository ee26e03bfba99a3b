#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mcsearch/common.h"
#include "mcsearch/corpus.h"

namespace mcsearch {

// Relevance of `code` for `query`; larger is better. Must be deterministic
// and safe to call from several threads.
using PairScorer =
    std::function<double(std::string_view query, std::string_view code)>;

inline constexpr std::string_view kTiePolicyStrictGreater = "strict-greater";

struct RankRecord {
  std::string query_id;
  std::size_t rank = 0;
  double true_score = 0.0;
};

struct MrrResult {
  std::vector<double> per_set;
  double mean = 0.0;
  std::size_t n_queries = 0;
  std::string tie_policy{kTiePolicyStrictGreater};
  // ranks[s][i] belongs to query i of set s.
  std::vector<std::vector<RankRecord>> ranks;
};

struct MrrOptions {
  std::size_t threads = 1;
};

// 1 + number of scores strictly greater than scores[true_index]; tied
// distractors never push the true code down.
std::size_t rank_of_true(std::span<const double> scores,
                         std::size_t true_index);

// Each query is ranked against every code of the set (its own code plus
// size - 1 distractors); MRR is the mean of 1 / rank.
MrrResult mrr(const TestSet& set, const PairScorer& scorer,
              const MrrOptions& options = {});

// Unweighted mean of per-set MRR.
MrrResult mrr_mean(std::span<const TestSet> sets, const PairScorer& scorer,
                   const MrrOptions& options = {});

// Fraction of positions where the two 0/1 label vectors agree.
double compute_agreement(std::span<const int> human,
                         std::span<const int> original);

// Memoizes (query, code) -> score. Concurrent lookups, serialized inserts.
class ScoreCache {
 public:
  std::optional<double> get(std::string_view query,
                            std::string_view code) const;
  void put(std::string_view query, std::string_view code, double score);
  std::size_t size() const;

 private:
  static std::string key(std::string_view query, std::string_view code);

  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, double> scores_;
};

PairScorer memoize(PairScorer scorer, std::shared_ptr<ScoreCache> cache);

// Rows are natural languages, columns test corpora; missing cells print "-".
struct MrrTable {
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, std::vector<std::optional<double>>>> rows;

  void set(const std::string& row, const std::string& column, double value);
};

void write_mrr_table(std::ostream& out, const MrrTable& table,
                     const std::optional<ArtifactHeader>& header = std::nullopt);

// Columns: set, query_index, query_id, rank, true_score.
void write_rank_records(std::ostream& out, const MrrResult& result,
                        const std::optional<ArtifactHeader>& header = std::nullopt);

}  // namespace mcsearch

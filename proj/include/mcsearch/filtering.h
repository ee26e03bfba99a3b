#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mcsearch/common.h"
#include "mcsearch/corpus.h"

namespace mcsearch {

struct BleuTokenization {
  // ASCII case folding; non-ASCII text is compared as-is.
  bool lowercase = true;
};

// Splits on Unicode white space (UTF-8 input).
std::vector<std::string> bleu_tokenize(std::string_view text,
                                       const BleuTokenization& opts = {});

struct UnigramBleu {
  std::size_t clipped_matches = 0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
  double precision = 0.0;
  double brevity_penalty = 0.0;
  double score = 0.0;
};

// BLEU with n = 1 and no smoothing: clipped unigram precision times
// min(1, exp(1 - r / c)). An empty candidate scores 0; an empty reference
// throws.
UnigramBleu unigram_bleu_detail(std::span<const std::string> candidate,
                                std::span<const std::string> reference);
double unigram_bleu(std::span<const std::string> candidate,
                    std::span<const std::string> reference);

// Scores a back-translation (candidate) against its English original
// (reference).
double round_trip_bleu(std::string_view original, std::string_view round_trip,
                       const BleuTokenization& opts = {});

struct ScoredRecord {
  CorpusRecord record;
  double bleu1 = 0.0;
};

// Records whose score is strictly greater than `threshold`, input order
// preserved.
std::vector<CorpusRecord> filter_by_threshold(
    std::span<const ScoredRecord> scored, double threshold);

using SweepKey = std::pair<NaturalLanguage, Partition>;

struct FilterRow {
  NaturalLanguage nl = NaturalLanguage::kEn;
  Partition split = Partition::kTrain;
  std::size_t total = 0;
  // Index-aligned with FilterReport::thresholds.
  std::vector<std::size_t> retained;
};

struct FilterReport {
  std::vector<double> thresholds;
  std::vector<FilterRow> rows;

  const FilterRow* find(NaturalLanguage nl, Partition split) const;
};

FilterReport threshold_sweep(
    const std::map<SweepKey, std::vector<double>>& scores,
    std::span<const double> thresholds);

// One block per split; rows are natural languages and columns thresholds.
void write_filter_report(std::ostream& out, const FilterReport& report,
                         const std::optional<ArtifactHeader>& header = std::nullopt);

// "id<TAB>bleu1" per line.
void write_scores(std::ostream& out, std::span<const ScoredRecord> scored,
                  const std::optional<ArtifactHeader>& header = std::nullopt);
std::vector<std::pair<std::string, double>> parse_scores(std::istream& in);
std::vector<std::pair<std::string, double>> load_scores(
    const std::filesystem::path& path);

// "0.2..0.7" (step 0.1), "0.1..0.9:0.2", or a comma list "0.2,0.4". Values
// are rounded to 1e-9 so that decimal steps do not accumulate drift.
std::vector<double> parse_thresholds(std::string_view spec);

// Shortest decimal text that reads back to the same double.
std::string format_real(double value);

}  // namespace mcsearch

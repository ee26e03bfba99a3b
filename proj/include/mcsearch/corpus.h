#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcsearch/common.h"

namespace mcsearch {

// One docstring/code pair. On disk: one JSON object per line with the keys
// id, docstring, code, pl, nl, url, partition.
struct CorpusRecord {
  std::string id;
  std::string docstring;
  std::string code;
  ProgrammingLanguage pl = ProgrammingLanguage::kGo;
  NaturalLanguage nl = NaturalLanguage::kEn;
  std::string url;
  Partition partition = Partition::kTrain;

  bool operator==(const CorpusRecord&) const = default;
};

// Labelled fine-tuning instance; label is 1 iff `query` is the docstring
// originally paired with `code`. On disk: keys label, query, code, nl, pl.
struct PairExample {
  std::string query;
  std::string code;
  int label = 0;
  NaturalLanguage nl = NaturalLanguage::kEn;
  ProgrammingLanguage pl = ProgrammingLanguage::kGo;

  bool operator==(const PairExample&) const = default;
};

struct TestEntry {
  std::string id;
  std::string query;
  std::string code;

  bool operator==(const TestEntry&) const = default;
};

// Ordered pool of positive pairs; every code is a distractor for every
// other query. Codes are pairwise distinct.
struct TestSet {
  std::vector<TestEntry> entries;
  std::uint64_t seed = 0;

  std::size_t size() const { return entries.size(); }
};

inline constexpr std::size_t kDefaultTestSetSize = 1000;
inline constexpr std::size_t kDefaultTestSetCount = 3;

struct DataRegime {
  enum class Kind { kNoPretraining, kAllToOne, kAllToAll };

  Kind kind = Kind::kNoPretraining;
  std::vector<NaturalLanguage> natural_languages;
  std::vector<ProgrammingLanguage> programming_languages;

  static DataRegime no_pretraining();
  static DataRegime all_to_one(ProgrammingLanguage pl);
  static DataRegime all_to_all();
  // Accepts "no-pretraining", "all-to-all" and "all-to-one:<pl>".
  static DataRegime parse(std::string_view name);

  std::string name() const;
  void validate() const;
};

struct LoadStats {
  std::size_t lines = 0;
  std::size_t loaded = 0;
  std::size_t malformed = 0;
  std::size_t invalid = 0;
  std::size_t duplicate_ids = 0;
  // First few skip reasons, prefixed with the 1-based line number.
  std::vector<std::string> diagnostics;

  std::size_t skipped() const { return malformed + invalid + duplicate_ids; }
};

struct LoadedCorpus {
  std::vector<CorpusRecord> records;
  LoadStats stats;
  std::optional<ArtifactHeader> header;
};

LoadedCorpus load_corpus(
    const std::filesystem::path& path,
    std::optional<ProgrammingLanguage> expected_pl = std::nullopt);
LoadedCorpus parse_corpus(
    std::istream& in,
    std::optional<ProgrammingLanguage> expected_pl = std::nullopt);

void write_corpus(std::ostream& out, std::span<const CorpusRecord> records,
                  const std::optional<ArtifactHeader>& header = std::nullopt);
void write_corpus(const std::filesystem::path& path,
                  std::span<const CorpusRecord> records,
                  const std::optional<ArtifactHeader>& header = std::nullopt);

// Reason the record breaks a per-record invariant, or nullopt if it is
// valid. Id uniqueness is checked by the loader.
std::optional<std::string> record_violation(const CorpusRecord& record);

std::vector<PairExample> make_finetune_pairs(
    std::span<const CorpusRecord> records, std::uint64_t seed);

void write_pairs(std::ostream& out, std::span<const PairExample> pairs,
                 const std::optional<ArtifactHeader>& header = std::nullopt);
std::vector<PairExample> parse_pairs(std::istream& in);
std::vector<PairExample> load_pairs(const std::filesystem::path& path);

// Reads the line format distributed with CodeBERT's code-search data:
//   label<CODESPLIT>url<CODESPLIT>func_name<CODESPLIT>docstring<CODESPLIT>code
std::vector<PairExample> load_codesplit_pairs(
    const std::filesystem::path& path, NaturalLanguage nl,
    ProgrammingLanguage pl, LoadStats* stats = nullptr);

std::vector<TestSet> sample_test_sets(std::span<const CorpusRecord> records,
                                      std::size_t count, std::size_t size,
                                      std::uint64_t seed);

void write_test_sets(std::ostream& out, std::span<const TestSet> sets,
                     const std::optional<ArtifactHeader>& header = std::nullopt);
std::vector<TestSet> parse_test_sets(std::istream& in);
std::vector<TestSet> load_test_sets(const std::filesystem::path& path);

using CorpusGroups =
    std::map<std::pair<NaturalLanguage, ProgrammingLanguage>,
             std::vector<CorpusRecord>>;

CorpusGroups group_by_language(std::span<const CorpusRecord> records);

// Concatenates the (nl, pl) groups selected by `regime`, nl-major in tag
// order. Missing groups are an error naming the group.
std::vector<CorpusRecord> assemble_pretraining(const CorpusGroups& groups,
                                               const DataRegime& regime);

struct AuditRow {
  std::size_t row = 0;
  std::string query;
  std::string code;
};

struct AuditSheet {
  std::vector<AuditRow> rows;
  // Original labels, index-aligned with rows; kept out of the sheet.
  std::vector<int> answers;
};

AuditSheet audit_sample(std::span<const PairExample> pairs, std::size_t n,
                        std::uint64_t seed);

// Sheet columns: row, query, code, human_label (left blank).
// Answer file columns: row, label.
void write_audit_sheet(std::ostream& sheet, const AuditSheet& audit,
                       const std::optional<ArtifactHeader>& header = std::nullopt);
void write_audit_answers(std::ostream& answers, const AuditSheet& audit,
                         const std::optional<ArtifactHeader>& header = std::nullopt);

// Reads the `label` column of an answer file or the filled-in
// `human_label` column of a sheet, in row order.
std::vector<int> read_label_column(std::istream& in,
                                   std::string_view column);

// Backslash escapes for tab, newline, carriage return and backslash.
std::string tsv_escape(std::string_view field);
std::string tsv_unescape(std::string_view field);

}  // namespace mcsearch

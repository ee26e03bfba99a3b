#include "mcsearch/corpus.h"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "mcsearch/rng.h"

namespace mcsearch {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::size_t kMaxDiagnostics = 20;

void note(LoadStats& stats, std::size_t line_no, const std::string& reason) {
  if (stats.diagnostics.size() < kMaxDiagnostics)
    stats.diagnostics.push_back("line " + std::to_string(line_no) + ": " +
                                reason);
}

bool is_comment_or_blank(std::string_view line) {
  auto t = trim(line);
  return t.empty() || t.front() == '#';
}

std::string require_string(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw Error(std::string("missing field '") + key + "'");
  if (!it->is_string())
    throw Error(std::string("field '") + key + "' is not a string");
  return it->get<std::string>();
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

void maybe_header(std::ostream& out,
                  const std::optional<ArtifactHeader>& header) {
  if (header) out << header->line() << '\n';
}

std::string dump(const ordered_json& j) {
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

DataRegime DataRegime::no_pretraining() {
  return DataRegime{Kind::kNoPretraining, {}, {}};
}

DataRegime DataRegime::all_to_one(ProgrammingLanguage pl) {
  return DataRegime{
      Kind::kAllToOne,
      {std::begin(kAllNaturalLanguages), std::end(kAllNaturalLanguages)},
      {pl}};
}

DataRegime DataRegime::all_to_all() {
  return DataRegime{
      Kind::kAllToAll,
      {std::begin(kAllNaturalLanguages), std::end(kAllNaturalLanguages)},
      {std::begin(kAllProgrammingLanguages),
       std::end(kAllProgrammingLanguages)}};
}

DataRegime DataRegime::parse(std::string_view name) {
  if (name == "no-pretraining") return no_pretraining();
  if (name == "all-to-all") return all_to_all();
  constexpr std::string_view kOne = "all-to-one:";
  if (name.substr(0, kOne.size()) == kOne)
    return all_to_one(require_programming_language(name.substr(kOne.size())));
  throw Error("unknown data regime: " + std::string(name) +
              " (expected no-pretraining, all-to-one:<pl> or all-to-all)");
}

std::string DataRegime::name() const {
  switch (kind) {
    case Kind::kNoPretraining: return "no-pretraining";
    case Kind::kAllToAll: return "all-to-all";
    case Kind::kAllToOne:
      return "all-to-one:" +
             (programming_languages.empty()
                  ? std::string("?")
                  : std::string(to_string(programming_languages.front())));
  }
  return "?";
}

void DataRegime::validate() const {
  switch (kind) {
    case Kind::kNoPretraining:
      return;
    case Kind::kAllToOne:
      if (programming_languages.size() != 1)
        throw Error("all-to-one regime needs exactly one programming language");
      break;
    case Kind::kAllToAll:
      if (programming_languages.size() != std::size(kAllProgrammingLanguages))
        throw Error("all-to-all regime needs all four programming languages");
      break;
  }
  if (natural_languages.empty())
    throw Error("regime " + name() + " selects no natural language");
}

std::optional<std::string> record_violation(const CorpusRecord& r) {
  if (r.id.empty()) return "empty id";
  if (trim(r.docstring).empty()) return "empty docstring";
  if (trim(r.code).empty()) return "empty code";
  return std::nullopt;
}

LoadedCorpus parse_corpus(std::istream& in,
                          std::optional<ProgrammingLanguage> expected_pl) {
  LoadedCorpus out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("# ", 0) == 0) {
      out.header = ArtifactHeader::parse(line);
      continue;
    }
    if (is_comment_or_blank(line)) continue;
    ++out.stats.lines;

    CorpusRecord rec;
    std::string pl_tag, nl_tag, part_tag;
    try {
      auto j = nlohmann::json::parse(line);
      if (!j.is_object()) throw Error("line is not a JSON object");
      rec.id = require_string(j, "id");
      rec.docstring = require_string(j, "docstring");
      rec.code = require_string(j, "code");
      pl_tag = require_string(j, "pl");
      nl_tag = require_string(j, "nl");
      part_tag = require_string(j, "partition");
      if (auto it = j.find("url"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) throw Error("field 'url' is not a string");
        rec.url = it->get<std::string>();
      }
    } catch (const std::exception& e) {
      ++out.stats.malformed;
      note(out.stats, line_no, e.what());
      continue;
    }

    auto pl = parse_programming_language(pl_tag);
    auto nl = parse_natural_language(nl_tag);
    auto part = parse_partition(part_tag);
    std::optional<std::string> violation;
    if (!pl) violation = "unsupported pl '" + pl_tag + "'";
    else if (!nl) violation = "unsupported nl '" + nl_tag + "'";
    else if (!part) violation = "unknown partition '" + part_tag + "'";
    else if (expected_pl && *pl != *expected_pl)
      violation = "pl '" + pl_tag + "' where " +
                  std::string(to_string(*expected_pl)) + " was expected";
    if (!violation) {
      rec.pl = *pl;
      rec.nl = *nl;
      rec.partition = *part;
      violation = record_violation(rec);
    }
    if (violation) {
      ++out.stats.invalid;
      note(out.stats, line_no, *violation);
      continue;
    }
    if (!seen.insert(rec.id).second) {
      ++out.stats.duplicate_ids;
      note(out.stats, line_no, "duplicate id '" + rec.id + "'");
      continue;
    }
    out.records.push_back(std::move(rec));
  }
  out.stats.loaded = out.records.size();
  return out;
}

LoadedCorpus load_corpus(const std::filesystem::path& path,
                         std::optional<ProgrammingLanguage> expected_pl) {
  auto in = open_input(path);
  return parse_corpus(in, expected_pl);
}

void write_corpus(std::ostream& out, std::span<const CorpusRecord> records,
                  const std::optional<ArtifactHeader>& header) {
  maybe_header(out, header);
  for (const auto& r : records) {
    ordered_json j;
    j["id"] = r.id;
    j["docstring"] = r.docstring;
    j["code"] = r.code;
    j["pl"] = to_string(r.pl);
    j["nl"] = to_string(r.nl);
    j["url"] = r.url;
    j["partition"] = to_string(r.partition);
    out << dump(j) << '\n';
  }
}

void write_corpus(const std::filesystem::path& path,
                  std::span<const CorpusRecord> records,
                  const std::optional<ArtifactHeader>& header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_corpus(out, records, header);
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<PairExample> make_finetune_pairs(
    std::span<const CorpusRecord> records, std::uint64_t seed) {
  if (records.size() < 2)
    throw Error("make_finetune_pairs needs at least 2 records, got " +
                std::to_string(records.size()));
  const auto nl = records.front().nl;
  const auto pl = records.front().pl;
  for (const auto& r : records)
    if (r.nl != nl || r.pl != pl)
      throw Error("make_finetune_pairs: records mix languages (" +
                  std::string(to_string(nl)) + "/" +
                  std::string(to_string(pl)) + " vs " +
                  std::string(to_string(r.nl)) + "/" +
                  std::string(to_string(r.pl)) + ")");

  // A usable negative must differ from the positive in both docstring and
  // code, otherwise it would be a mislabelled positive.
  auto usable = [&](std::size_t i, std::size_t j) {
    return records[j].code != records[i].code &&
           records[j].docstring != records[i].docstring;
  };

  SplitMix64 rng(seed);
  std::vector<PairExample> pairs;
  pairs.reserve(records.size() * 2);
  const std::size_t n = records.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = records[i];
    pairs.push_back({r.docstring, r.code, 1, nl, pl});

    std::optional<std::size_t> pick;
    for (int attempt = 0; attempt < 64 && !pick; ++attempt) {
      // Uniform over j != i.
      std::size_t j = static_cast<std::size_t>(rng.uniform(n - 1));
      if (j >= i) ++j;
      if (usable(i, j)) pick = j;
    }
    if (!pick) {
      std::vector<std::size_t> candidates;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && usable(i, j)) candidates.push_back(j);
      if (candidates.empty())
        throw Error("make_finetune_pairs: no non-matching code for record '" +
                    r.id + "'");
      pick = candidates[rng.uniform(candidates.size())];
    }
    pairs.push_back({r.docstring, records[*pick].code, 0, nl, pl});
  }
  return pairs;
}

void write_pairs(std::ostream& out, std::span<const PairExample> pairs,
                 const std::optional<ArtifactHeader>& header) {
  maybe_header(out, header);
  for (const auto& p : pairs) {
    ordered_json j;
    j["label"] = p.label;
    j["query"] = p.query;
    j["code"] = p.code;
    j["nl"] = to_string(p.nl);
    j["pl"] = to_string(p.pl);
    out << dump(j) << '\n';
  }
}

std::vector<PairExample> parse_pairs(std::istream& in) {
  std::vector<PairExample> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_comment_or_blank(line)) continue;
    try {
      auto j = nlohmann::json::parse(line);
      PairExample p;
      p.label = j.at("label").get<int>();
      if (p.label != 0 && p.label != 1) throw Error("label must be 0 or 1");
      p.query = require_string(j, "query");
      p.code = require_string(j, "code");
      p.nl = require_natural_language(require_string(j, "nl"));
      p.pl = require_programming_language(require_string(j, "pl"));
      pairs.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw Error("pair file line " + std::to_string(line_no) + ": " +
                  e.what());
    }
  }
  return pairs;
}

std::vector<PairExample> load_pairs(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_pairs(in);
}

std::vector<PairExample> load_codesplit_pairs(
    const std::filesystem::path& path, NaturalLanguage nl,
    ProgrammingLanguage pl, LoadStats* stats) {
  static constexpr std::string_view kSep = "<CODESPLIT>";
  auto in = open_input(path);
  LoadStats local;
  std::vector<PairExample> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++local.lines;
    std::vector<std::string_view> fields;
    std::string_view rest = line;
    for (;;) {
      auto pos = rest.find(kSep);
      fields.push_back(rest.substr(0, pos));
      if (pos == std::string_view::npos) break;
      rest.remove_prefix(pos + kSep.size());
    }
    if (fields.size() != 5 || (fields[0] != "0" && fields[0] != "1")) {
      ++local.malformed;
      note(local, line_no, "expected 5 <CODESPLIT> fields with a 0/1 label");
      continue;
    }
    if (trim(fields[3]).empty() || trim(fields[4]).empty()) {
      ++local.invalid;
      note(local, line_no, "empty docstring or code");
      continue;
    }
    pairs.push_back({std::string(fields[3]), std::string(fields[4]),
                     fields[0] == "1" ? 1 : 0, nl, pl});
  }
  local.loaded = pairs.size();
  if (stats) *stats = std::move(local);
  return pairs;
}

std::vector<TestSet> sample_test_sets(std::span<const CorpusRecord> records,
                                      std::size_t count, std::size_t size,
                                      std::uint64_t seed) {
  if (size == 0) throw Error("test set size must be positive");
  if (records.size() < size)
    throw Error("test pool has " + std::to_string(records.size()) +
                " records, fewer than the requested set size " +
                std::to_string(size));
  for (const auto& r : records)
    if (r.partition != Partition::kTest)
      throw Error("record '" + r.id + "' is from the " +
                  std::string(to_string(r.partition)) +
                  " partition; test sets are drawn from test data only");

  SplitMix64 master(seed);
  std::vector<TestSet> sets;
  sets.reserve(count);
  std::vector<std::size_t> order(records.size());
  for (std::size_t s = 0; s < count; ++s) {
    SplitMix64 rng = master.fork(s);
    std::iota(order.begin(), order.end(), std::size_t{0});
    TestSet set;
    set.seed = seed;
    set.entries.reserve(size);
    std::unordered_set<std::string_view> codes;
    // Incremental Fisher-Yates: position k receives a uniform draw from the
    // unvisited tail. Duplicate codes are passed over, which resamples.
    for (std::size_t k = 0; k < order.size() && set.entries.size() < size;
         ++k) {
      std::size_t j = k + static_cast<std::size_t>(rng.uniform(order.size() - k));
      std::swap(order[k], order[j]);
      const auto& r = records[order[k]];
      if (!codes.insert(r.code).second) continue;
      set.entries.push_back({r.id, r.docstring, r.code});
    }
    if (set.entries.size() < size)
      throw Error("test pool has only " + std::to_string(codes.size()) +
                  " distinct codes, fewer than the requested set size " +
                  std::to_string(size));
    sets.push_back(std::move(set));
  }
  return sets;
}

void write_test_sets(std::ostream& out, std::span<const TestSet> sets,
                     const std::optional<ArtifactHeader>& header) {
  maybe_header(out, header);
  for (std::size_t s = 0; s < sets.size(); ++s) {
    for (const auto& e : sets[s].entries) {
      ordered_json j;
      j["set"] = s;
      j["seed"] = sets[s].seed;
      j["id"] = e.id;
      j["query"] = e.query;
      j["code"] = e.code;
      out << dump(j) << '\n';
    }
  }
}

std::vector<TestSet> parse_test_sets(std::istream& in) {
  std::vector<TestSet> sets;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_comment_or_blank(line)) continue;
    try {
      auto j = nlohmann::json::parse(line);
      auto s = j.at("set").get<std::size_t>();
      if (s > sets.size())
        throw Error("set index " + std::to_string(s) + " out of sequence");
      if (s == sets.size()) {
        sets.emplace_back();
        sets.back().seed = j.value("seed", std::uint64_t{0});
      }
      sets[s].entries.push_back({j.value("id", std::string()),
                                 require_string(j, "query"),
                                 require_string(j, "code")});
    } catch (const std::exception& e) {
      throw Error("test set file line " + std::to_string(line_no) + ": " +
                  e.what());
    }
  }
  return sets;
}

std::vector<TestSet> load_test_sets(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_test_sets(in);
}

CorpusGroups group_by_language(std::span<const CorpusRecord> records) {
  CorpusGroups groups;
  for (const auto& r : records) groups[{r.nl, r.pl}].push_back(r);
  return groups;
}

std::vector<CorpusRecord> assemble_pretraining(const CorpusGroups& groups,
                                               const DataRegime& regime) {
  regime.validate();
  std::vector<CorpusRecord> out;
  if (regime.kind == DataRegime::Kind::kNoPretraining) return out;
  for (auto nl : regime.natural_languages) {
    for (auto pl : regime.programming_languages) {
      auto it = groups.find({nl, pl});
      if (it == groups.end())
        throw Error("regime " + regime.name() + " needs missing group " +
                    std::string(to_string(nl)) + "/" +
                    std::string(to_string(pl)));
      out.insert(out.end(), it->second.begin(), it->second.end());
    }
  }
  return out;
}

AuditSheet audit_sample(std::span<const PairExample> pairs, std::size_t n,
                        std::uint64_t seed) {
  if (n > pairs.size())
    throw Error("audit sample of " + std::to_string(n) + " exceeds the " +
                std::to_string(pairs.size()) + " available pairs");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(seed);
  AuditSheet sheet;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t j = k + static_cast<std::size_t>(rng.uniform(order.size() - k));
    std::swap(order[k], order[j]);
    const auto& p = pairs[order[k]];
    sheet.rows.push_back({k + 1, p.query, p.code});
    sheet.answers.push_back(p.label);
  }
  return sheet;
}

std::string tsv_escape(std::string_view field) {
  std::string out;
  out.reserve(field.size());
  for (char c : field) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string tsv_unescape(std::string_view field) {
  std::string out;
  out.reserve(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (field[i] != '\\' || i + 1 == field.size()) {
      out.push_back(field[i]);
      continue;
    }
    switch (field[++i]) {
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      default: out.push_back(field[i]);
    }
  }
  return out;
}

void write_audit_sheet(std::ostream& sheet, const AuditSheet& audit,
                       const std::optional<ArtifactHeader>& header) {
  maybe_header(sheet, header);
  sheet << "row\tquery\tcode\thuman_label\n";
  for (const auto& r : audit.rows)
    sheet << r.row << '\t' << tsv_escape(r.query) << '\t' << tsv_escape(r.code)
          << "\t\n";
}

void write_audit_answers(std::ostream& answers, const AuditSheet& audit,
                         const std::optional<ArtifactHeader>& header) {
  maybe_header(answers, header);
  answers << "row\tlabel\n";
  for (std::size_t i = 0; i < audit.rows.size(); ++i)
    answers << audit.rows[i].row << '\t' << audit.answers[i] << '\n';
}

std::vector<int> read_label_column(std::istream& in,
                                   std::string_view column) {
  std::string line;
  std::optional<std::size_t> col;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("#", 0) == 0) continue;
    auto fields = split_tabs(line);
    if (!col) {
      auto it = std::find(fields.begin(), fields.end(), column);
      if (it == fields.end())
        throw Error("label table has no '" + std::string(column) + "' column");
      col = static_cast<std::size_t>(it - fields.begin());
      continue;
    }
    if (trim(line).empty()) continue;
    if (*col >= fields.size())
      throw Error("label row is missing column '" + std::string(column) + "'");
    auto v = trim(fields[*col]);
    if (v != "0" && v != "1")
      throw Error("label '" + std::string(v) + "' is not 0 or 1");
    labels.push_back(v == "1" ? 1 : 0);
  }
  if (!col) throw Error("label table is empty");
  return labels;
}

}  // namespace mcsearch

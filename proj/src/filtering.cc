#include "mcsearch/filtering.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

namespace mcsearch {

namespace {

// Length of the UTF-8 white-space sequence starting at s[i], or 0.
std::size_t whitespace_at(std::string_view s, std::size_t i) {
  auto b = static_cast<unsigned char>(s[i]);
  if (b == ' ' || (b >= 0x09 && b <= 0x0d)) return 1;
  auto at = [&](std::size_t k) {
    return i + k < s.size() ? static_cast<unsigned char>(s[i + k]) : 0u;
  };
  if (b == 0xc2 && (at(1) == 0x85 || at(1) == 0xa0)) return 2;
  if (b == 0xe1 && at(1) == 0x9a && at(2) == 0x80) return 3;  // U+1680
  if (b == 0xe2 && at(1) == 0x80) {
    auto c = at(2);
    // U+2000..U+200A, U+2028, U+2029, U+202F
    if ((c >= 0x80 && c <= 0x8a) || c == 0xa8 || c == 0xa9 || c == 0xaf)
      return 3;
  }
  if (b == 0xe2 && at(1) == 0x81 && at(2) == 0x9f) return 3;  // U+205F
  if (b == 0xe3 && at(1) == 0x80 && at(2) == 0x80) return 3;  // U+3000
  return 0;
}

double round9(double v) { return std::round(v * 1e9) / 1e9; }

double parse_real(std::string_view text) {
  text = trim(text);
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw Error("not a number: '" + std::string(text) + "'");
  return v;
}

}  // namespace

std::vector<std::string> bleu_tokenize(std::string_view text,
                                       const BleuTokenization& opts) {
  std::vector<std::string> tokens;
  std::string current;
  for (std::size_t i = 0; i < text.size();) {
    if (std::size_t w = whitespace_at(text, i)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
      i += w;
      continue;
    }
    char c = text[i++];
    if (opts.lowercase && c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    current.push_back(c);
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

UnigramBleu unigram_bleu_detail(std::span<const std::string> candidate,
                                std::span<const std::string> reference) {
  if (reference.empty()) throw Error("unigram BLEU: empty reference");
  UnigramBleu out;
  out.candidate_length = candidate.size();
  out.reference_length = reference.size();
  if (candidate.empty()) return out;

  std::unordered_map<std::string_view, std::size_t> ref_counts;
  for (const auto& t : reference) ++ref_counts[t];
  std::unordered_map<std::string_view, std::size_t> cand_counts;
  for (const auto& t : candidate) ++cand_counts[t];
  for (const auto& [tok, count] : cand_counts) {
    auto it = ref_counts.find(tok);
    if (it != ref_counts.end()) out.clipped_matches += std::min(count, it->second);
  }

  const double c = static_cast<double>(out.candidate_length);
  const double r = static_cast<double>(out.reference_length);
  out.precision = static_cast<double>(out.clipped_matches) / c;
  out.brevity_penalty = c >= r ? 1.0 : std::exp(1.0 - r / c);
  out.score = out.brevity_penalty * out.precision;
  return out;
}

double unigram_bleu(std::span<const std::string> candidate,
                    std::span<const std::string> reference) {
  return unigram_bleu_detail(candidate, reference).score;
}

double round_trip_bleu(std::string_view original, std::string_view round_trip,
                       const BleuTokenization& opts) {
  auto ref = bleu_tokenize(original, opts);
  auto cand = bleu_tokenize(round_trip, opts);
  return unigram_bleu(cand, ref);
}

std::vector<CorpusRecord> filter_by_threshold(
    std::span<const ScoredRecord> scored, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw Error("filter threshold must lie in [0, 1], got " +
                format_real(threshold));
  std::vector<CorpusRecord> kept;
  for (const auto& s : scored)
    if (s.bleu1 > threshold) kept.push_back(s.record);
  return kept;
}

const FilterRow* FilterReport::find(NaturalLanguage nl,
                                    Partition split) const {
  for (const auto& row : rows)
    if (row.nl == nl && row.split == split) return &row;
  return nullptr;
}

FilterReport threshold_sweep(
    const std::map<SweepKey, std::vector<double>>& scores,
    std::span<const double> thresholds) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i - 1] < thresholds[i]))
      throw Error("threshold list must be strictly ascending");
  for (double t : thresholds)
    if (!(t >= 0.0 && t <= 1.0))
      throw Error("filter threshold must lie in [0, 1], got " + format_real(t));

  FilterReport report;
  report.thresholds.assign(thresholds.begin(), thresholds.end());
  for (const auto& [key, values] : scores) {
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    FilterRow row{key.first, key.second, values.size(), {}};
    for (double t : thresholds) {
      // Strictly greater than t.
      auto it = std::upper_bound(sorted.begin(), sorted.end(), t);
      row.retained.push_back(static_cast<std::size_t>(sorted.end() - it));
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_filter_report(std::ostream& out, const FilterReport& report,
                         const std::optional<ArtifactHeader>& header) {
  if (header) out << header->line() << '\n';
  for (auto split : {Partition::kTrain, Partition::kValid, Partition::kTest}) {
    bool any = std::any_of(report.rows.begin(), report.rows.end(),
                           [&](const FilterRow& r) { return r.split == split; });
    if (!any) continue;
    out << to_string(split) << "\ttotal";
    for (double t : report.thresholds) out << '\t' << format_real(t);
    out << '\n';
    for (const auto& row : report.rows) {
      if (row.split != split) continue;
      out << to_string(row.nl) << '\t' << row.total;
      for (auto n : row.retained) out << '\t' << n;
      out << '\n';
    }
  }
}

void write_scores(std::ostream& out, std::span<const ScoredRecord> scored,
                  const std::optional<ArtifactHeader>& header) {
  if (header) out << header->line() << '\n';
  for (const auto& s : scored)
    out << tsv_escape(s.record.id) << '\t' << format_real(s.bleu1) << '\n';
}

std::vector<std::pair<std::string, double>> parse_scores(std::istream& in) {
  std::vector<std::pair<std::string, double>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line.front() == '#') continue;
    auto tab = line.rfind('\t');
    if (tab == std::string::npos)
      throw Error("score file line " + std::to_string(line_no) +
                  ": expected id<TAB>bleu1");
    double v = parse_real(std::string_view(line).substr(tab + 1));
    if (!(v >= 0.0 && v <= 1.0))
      throw Error("score file line " + std::to_string(line_no) +
                  ": bleu1 outside [0, 1]");
    out.emplace_back(tsv_unescape(std::string_view(line).substr(0, tab)), v);
  }
  return out;
}

std::vector<std::pair<std::string, double>> load_scores(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return parse_scores(in);
}

std::vector<double> parse_thresholds(std::string_view spec) {
  spec = trim(spec);
  std::vector<double> out;
  if (auto dots = spec.find(".."); dots != std::string_view::npos) {
    double lo = parse_real(spec.substr(0, dots));
    auto rest = spec.substr(dots + 2);
    double step = 0.1;
    if (auto colon = rest.find(':'); colon != std::string_view::npos) {
      step = parse_real(rest.substr(colon + 1));
      rest = rest.substr(0, colon);
    }
    double hi = parse_real(rest);
    if (!(step > 0) || hi < lo) throw Error("bad threshold range");
    auto count = static_cast<std::size_t>(std::llround((hi - lo) / step)) + 1;
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(round9(lo + static_cast<double>(i) * step));
  } else {
    std::size_t start = 0;
    while (start <= spec.size()) {
      auto comma = spec.find(',', start);
      out.push_back(round9(parse_real(spec.substr(start, comma - start))));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
  }
  return out;
}

std::string format_real(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

}  // namespace mcsearch

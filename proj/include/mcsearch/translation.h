#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mcsearch/common.h"
#include "mcsearch/corpus.h"

namespace mcsearch {

inline constexpr int kDefaultBeamSize = 3;

struct TranslationRequest {
  std::vector<std::string> texts;
  NaturalLanguage source = NaturalLanguage::kEn;
  NaturalLanguage target = NaturalLanguage::kJa;
  int beam_size = kDefaultBeamSize;

  void validate() const;
};

// Thrown by a backend when a batch cannot be translated.
class BackendError : public Error {
 public:
  using Error::Error;
};

// A machine translation service. One call is one backend round trip.
class Translator {
 public:
  virtual ~Translator() = default;

  virtual std::vector<std::string> translate(std::span<const std::string> texts,
                                             NaturalLanguage source,
                                             NaturalLanguage target,
                                             int beam_size) = 0;
};

// Reverses the code points of every white-space delimited token whenever
// source != target. The transform is its own inverse, so any round trip
// through a pivot language returns the input byte for byte.
class ReversibleMockTranslator : public Translator {
 public:
  std::vector<std::string> translate(std::span<const std::string> texts,
                                     NaturalLanguage source,
                                     NaturalLanguage target,
                                     int beam_size) override;

  std::size_t calls() const { return calls_.load(); }
  std::size_t texts_seen() const { return texts_.load(); }

 protected:
  static std::string reverse_tokens(std::string_view text);

  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> texts_{0};
};

// Like ReversibleMockTranslator, but translating into English also drops
// every fifth token (1-based positions 5, 10, ...) and joins the remaining
// tokens with single spaces.
class LossyMockTranslator : public ReversibleMockTranslator {
 public:
  std::vector<std::string> translate(std::span<const std::string> texts,
                                     NaturalLanguage source,
                                     NaturalLanguage target,
                                     int beam_size) override;

  static std::string drop_every_fifth(std::string_view text);
};

// JSON over HTTP. Request body:
//   {"texts": [...], "source_lang": "en", "target_lang": "ja", "beam_size": 3}
// Response body: {"translations": [...]} in request order.
class HttpTranslator : public Translator {
 public:
  // url: http://host[:port][/path]
  explicit HttpTranslator(std::string url,
                          std::chrono::milliseconds timeout =
                              std::chrono::seconds(60));

  std::vector<std::string> translate(std::span<const std::string> texts,
                                     NaturalLanguage source,
                                     NaturalLanguage target,
                                     int beam_size) override;

 private:
  std::string scheme_host_port_;
  std::string path_;
  std::chrono::milliseconds timeout_;
};

std::string translation_request_body(std::span<const std::string> texts,
                                     NaturalLanguage source,
                                     NaturalLanguage target, int beam_size);
std::vector<std::string> parse_translation_response(std::string_view body,
                                                    std::size_t expected);

// Content-addressed store of translations, optionally persisted to an
// append-only file with one {"key": ..., "value": ...} object per line.
// Reads may run concurrently; writes are serialized.
class TranslationCache {
 public:
  TranslationCache() = default;
  explicit TranslationCache(const std::filesystem::path& file);

  static std::string key(std::string_view text, NaturalLanguage source,
                         NaturalLanguage target, int beam_size);

  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, const std::string& value);
  bool contains(const std::string& key) const;
  std::size_t size() const;

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, std::string> entries_;
  std::optional<std::ofstream> log_;
};

enum class ErrorPolicy {
  kMark,   // failed texts come back with an error marker
  kAbort,  // any failure throws after all batches have run
};

struct BatchOptions {
  std::size_t batch_size = 32;
  std::size_t max_attempts = 3;
  std::chrono::milliseconds retry_delay{100};  // doubled after each failure
  std::size_t max_concurrency = 4;
  ErrorPolicy on_error = ErrorPolicy::kMark;
};

struct TranslationOutcome {
  std::optional<std::string> text;
  std::string error;  // non-empty iff text is empty
  bool from_cache = false;

  bool ok() const { return text.has_value(); }
};

std::vector<TranslationOutcome> translate_batch(const TranslationRequest& req,
                                                Translator& backend,
                                                TranslationCache* cache,
                                                const BatchOptions& opts = {});

struct BacktranslationTriple {
  std::string id;
  std::string original;
  std::string pivot;
  std::string round_trip;
  std::string error;  // set when either leg failed

  bool ok() const { return error.empty(); }
};

std::vector<BacktranslationTriple> backtranslate_corpus(
    std::span<const CorpusRecord> records, NaturalLanguage pivot,
    Translator& backend, TranslationCache* cache, const BatchOptions& opts = {},
    int beam_size = kDefaultBeamSize);

void write_triples(std::ostream& out, NaturalLanguage pivot,
                   std::span<const BacktranslationTriple> triples,
                   const std::optional<ArtifactHeader>& header = std::nullopt);
std::vector<BacktranslationTriple> load_triples(
    const std::filesystem::path& path);

struct CoverageRow {
  NaturalLanguage source = NaturalLanguage::kEn;
  NaturalLanguage target = NaturalLanguage::kEn;
  std::size_t cached = 0;
  std::size_t missing = 0;
};

// For each target language t, counts English docstrings whose en->t
// translation is cached, and those whose t->en back-translation is cached
// (which needs the forward leg first).
std::vector<CoverageRow> translation_coverage_report(
    std::span<const CorpusRecord> records, const TranslationCache& cache,
    std::span<const NaturalLanguage> targets,
    int beam_size = kDefaultBeamSize);

}  // namespace mcsearch

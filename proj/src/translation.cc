#include "mcsearch/translation.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace mcsearch {

namespace {

bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

// Splits a UTF-8 token into code points (continuation bytes stay attached).
std::vector<std::string_view> code_points(std::string_view token) {
  std::vector<std::string_view> cps;
  std::size_t i = 0;
  while (i < token.size()) {
    std::size_t j = i + 1;
    while (j < token.size() &&
           (static_cast<unsigned char>(token[j]) & 0xc0) == 0x80)
      ++j;
    cps.push_back(token.substr(i, j - i));
    i = j;
  }
  return cps;
}

}  // namespace

void TranslationRequest::validate() const {
  if (source == target)
    throw Error("translation source and target are both " +
                std::string(to_string(source)));
  if (texts.empty()) throw Error("translation request has no texts");
  if (beam_size <= 0) throw Error("beam size must be positive");
}

std::string ReversibleMockTranslator::reverse_tokens(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_ascii_space(text[i])) {
      out.push_back(text[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !is_ascii_space(text[j])) ++j;
    auto cps = code_points(text.substr(i, j - i));
    for (auto it = cps.rbegin(); it != cps.rend(); ++it) out.append(*it);
    i = j;
  }
  return out;
}

std::vector<std::string> ReversibleMockTranslator::translate(
    std::span<const std::string> texts, NaturalLanguage source,
    NaturalLanguage target, int) {
  ++calls_;
  texts_ += texts.size();
  std::vector<std::string> out;
  out.reserve(texts.size());
  for (const auto& t : texts)
    out.push_back(source == target ? t : reverse_tokens(t));
  return out;
}

std::string LossyMockTranslator::drop_every_fifth(std::string_view text) {
  std::string out;
  std::size_t index = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_ascii_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_ascii_space(text[j])) ++j;
    if (j > i) {
      ++index;
      if (index % 5 != 0) {
        if (!out.empty()) out.push_back(' ');
        out.append(text.substr(i, j - i));
      }
    }
    i = j;
  }
  return out;
}

std::vector<std::string> LossyMockTranslator::translate(
    std::span<const std::string> texts, NaturalLanguage source,
    NaturalLanguage target, int beam_size) {
  auto out =
      ReversibleMockTranslator::translate(texts, source, target, beam_size);
  if (target == NaturalLanguage::kEn && source != target)
    for (auto& t : out) t = drop_every_fifth(t);
  return out;
}

std::string translation_request_body(std::span<const std::string> texts,
                                     NaturalLanguage source,
                                     NaturalLanguage target, int beam_size) {
  nlohmann::ordered_json j;
  j["texts"] = std::vector<std::string>(texts.begin(), texts.end());
  j["source_lang"] = to_string(source);
  j["target_lang"] = to_string(target);
  j["beam_size"] = beam_size;
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::vector<std::string> parse_translation_response(std::string_view body,
                                                    std::size_t expected) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const std::exception& e) {
    throw BackendError(std::string("translation response is not JSON: ") +
                       e.what());
  }
  auto it = j.find("translations");
  if (it == j.end() || !it->is_array())
    throw BackendError("translation response lacks a 'translations' array");
  std::vector<std::string> out;
  for (const auto& t : *it) {
    if (!t.is_string())
      throw BackendError("translation response holds a non-string entry");
    out.push_back(t.get<std::string>());
  }
  if (out.size() != expected)
    throw BackendError("translation response has " +
                       std::to_string(out.size()) + " entries for " +
                       std::to_string(expected) + " texts");
  return out;
}

HttpTranslator::HttpTranslator(std::string url,
                               std::chrono::milliseconds timeout)
    : timeout_(timeout) {
  constexpr std::string_view kScheme = "http://";
  if (url.rfind(kScheme, 0) != 0)
    throw Error("translator url must start with http://: " + url);
  auto slash = url.find('/', kScheme.size());
  if (slash == std::string::npos) {
    scheme_host_port_ = url;
    path_ = "/translate";
  } else {
    scheme_host_port_ = url.substr(0, slash);
    path_ = url.substr(slash);
  }
}

std::vector<std::string> HttpTranslator::translate(
    std::span<const std::string> texts, NaturalLanguage source,
    NaturalLanguage target, int beam_size) {
  httplib::Client client(scheme_host_port_);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  auto usecs =
      std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  auto res = client.Post(path_,
                         translation_request_body(texts, source, target,
                                                  beam_size),
                         "application/json");
  if (!res)
    throw BackendError("translator request failed: " +
                       httplib::to_string(res.error()));
  if (res->status != 200)
    throw BackendError("translator returned HTTP " +
                       std::to_string(res->status));
  return parse_translation_response(res->body, texts.size());
}

TranslationCache::TranslationCache(const std::filesystem::path& file) {
  if (std::filesystem::exists(file)) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error("cannot open translation cache " + file.string());
    std::string line;
    std::size_t line_no = 0;
    std::optional<std::uintmax_t> torn_at;
    std::streamoff start = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!trim(line).empty() && line.front() != '#') {
        try {
          auto j = nlohmann::json::parse(line);
          entries_[j.at("key").get<std::string>()] =
              j.at("value").get<std::string>();
        } catch (const std::exception& e) {
          // A torn final line from an interrupted run is dropped.
          if (in.peek() != std::char_traits<char>::eof())
            throw Error("translation cache line " + std::to_string(line_no) +
                        ": " + e.what());
          torn_at = static_cast<std::uintmax_t>(start);
        }
      }
      start = in.tellg();
    }
    in.close();
    if (torn_at) std::filesystem::resize_file(file, *torn_at);
  }
  log_.emplace(file, std::ios::binary | std::ios::app);
  if (!*log_) throw Error("cannot append to translation cache " + file.string());
}

std::string TranslationCache::key(std::string_view text, NaturalLanguage source,
                                  NaturalLanguage target, int beam_size) {
  // JSON array encoding keeps field boundaries unambiguous.
  nlohmann::json j = nlohmann::json::array(
      {std::string(text), to_string(source), to_string(target), beam_size});
  return sha256_hex(
      j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace));
}

std::optional<std::string> TranslationCache::get(const std::string& key) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

bool TranslationCache::contains(const std::string& key) const {
  std::shared_lock lock(mu_);
  return entries_.count(key) != 0;
}

std::size_t TranslationCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

void TranslationCache::put(const std::string& key, const std::string& value) {
  std::unique_lock lock(mu_);
  entries_.insert_or_assign(key, value);
  if (log_) {
    nlohmann::ordered_json j;
    j["key"] = key;
    j["value"] = value;
    *log_ << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace)
          << '\n';
    log_->flush();
  }
}

std::vector<TranslationOutcome> translate_batch(const TranslationRequest& req,
                                                Translator& backend,
                                                TranslationCache* cache,
                                                const BatchOptions& opts) {
  req.validate();
  if (opts.batch_size == 0 || opts.max_attempts == 0 ||
      opts.max_concurrency == 0)
    throw Error("batch size, attempts and concurrency must be positive");

  std::vector<TranslationOutcome> out(req.texts.size());
  std::vector<std::string> keys(req.texts.size());
  // Distinct uncached texts, in first-seen order, and where they go.
  std::vector<std::string> pending;
  std::unordered_map<std::string, std::size_t> pending_index;
  std::vector<std::optional<std::size_t>> slot(req.texts.size());

  for (std::size_t i = 0; i < req.texts.size(); ++i) {
    keys[i] = TranslationCache::key(req.texts[i], req.source, req.target,
                                    req.beam_size);
    if (cache) {
      if (auto hit = cache->get(keys[i])) {
        out[i].text = std::move(*hit);
        out[i].from_cache = true;
        continue;
      }
    }
    auto [it, inserted] = pending_index.emplace(keys[i], pending.size());
    if (inserted) pending.push_back(req.texts[i]);
    slot[i] = it->second;
  }

  const std::size_t n_batches =
      (pending.size() + opts.batch_size - 1) / opts.batch_size;
  std::vector<std::vector<std::string>> results(n_batches);
  std::vector<std::string> failures(n_batches);

  auto run_batch = [&](std::size_t b) {
    std::size_t begin = b * opts.batch_size;
    std::size_t end = std::min(pending.size(), begin + opts.batch_size);
    std::span<const std::string> texts(pending.data() + begin, end - begin);
    auto delay = opts.retry_delay;
    for (std::size_t attempt = 1;; ++attempt) {
      try {
        auto translated =
            backend.translate(texts, req.source, req.target, req.beam_size);
        if (translated.size() != texts.size())
          throw BackendError("backend returned " +
                             std::to_string(translated.size()) +
                             " translations for " +
                             std::to_string(texts.size()) + " texts");
        results[b] = std::move(translated);
        return;
      } catch (const std::exception& e) {
        if (attempt >= opts.max_attempts) {
          failures[b] = "failed after " + std::to_string(attempt) +
                        " attempts: " + e.what();
          return;
        }
      }
      if (delay.count() > 0) std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  };

  // Bounded fan-out: at most max_concurrency batches in flight.
  for (std::size_t wave = 0; wave < n_batches; wave += opts.max_concurrency) {
    std::size_t wave_end = std::min(n_batches, wave + opts.max_concurrency);
    if (wave_end - wave == 1) {
      run_batch(wave);
      continue;
    }
    std::vector<std::future<void>> inflight;
    for (std::size_t b = wave; b < wave_end; ++b)
      inflight.push_back(std::async(std::launch::async, run_batch, b));
    for (auto& f : inflight) f.get();
  }

  if (cache) {
    for (std::size_t b = 0; b < n_batches; ++b) {
      if (!failures[b].empty()) continue;
      for (std::size_t k = 0; k < results[b].size(); ++k) {
        const auto& text = pending[b * opts.batch_size + k];
        cache->put(TranslationCache::key(text, req.source, req.target,
                                         req.beam_size),
                   results[b][k]);
      }
    }
  }

  std::size_t failed = 0;
  std::string first_error;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!slot[i]) continue;
    std::size_t p = *slot[i];
    std::size_t b = p / opts.batch_size;
    if (!failures[b].empty()) {
      out[i].error = failures[b];
      if (failed++ == 0) first_error = failures[b];
    } else {
      out[i].text = results[b][p % opts.batch_size];
    }
  }
  if (failed > 0 && opts.on_error == ErrorPolicy::kAbort)
    throw BackendError(std::to_string(failed) + " of " +
                       std::to_string(out.size()) +
                       " texts untranslated; " + first_error);
  return out;
}

std::vector<BacktranslationTriple> backtranslate_corpus(
    std::span<const CorpusRecord> records, NaturalLanguage pivot,
    Translator& backend, TranslationCache* cache, const BatchOptions& opts,
    int beam_size) {
  std::vector<BacktranslationTriple> triples;
  if (records.empty()) return triples;
  if (pivot == NaturalLanguage::kEn)
    throw Error("back-translation pivot must differ from en");
  for (const auto& r : records)
    if (r.nl != NaturalLanguage::kEn)
      throw Error("back-translation needs English records; '" + r.id +
                  "' is " + std::string(to_string(r.nl)));

  TranslationRequest forward;
  forward.source = NaturalLanguage::kEn;
  forward.target = pivot;
  forward.beam_size = beam_size;
  for (const auto& r : records) forward.texts.push_back(r.docstring);
  auto pivots = translate_batch(forward, backend, cache, opts);

  TranslationRequest back;
  back.source = pivot;
  back.target = NaturalLanguage::kEn;
  back.beam_size = beam_size;
  std::vector<std::size_t> back_index;
  for (std::size_t i = 0; i < pivots.size(); ++i) {
    if (!pivots[i].ok()) continue;
    back.texts.push_back(*pivots[i].text);
    back_index.push_back(i);
  }
  std::vector<TranslationOutcome> rounds;
  if (!back.texts.empty()) rounds = translate_batch(back, backend, cache, opts);

  triples.resize(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    triples[i].id = records[i].id;
    triples[i].original = records[i].docstring;
    if (pivots[i].ok())
      triples[i].pivot = *pivots[i].text;
    else
      triples[i].error = "forward: " + pivots[i].error;
  }
  for (std::size_t k = 0; k < back_index.size(); ++k) {
    auto& t = triples[back_index[k]];
    if (rounds[k].ok())
      t.round_trip = *rounds[k].text;
    else
      t.error = "backward: " + rounds[k].error;
  }
  return triples;
}

void write_triples(std::ostream& out, NaturalLanguage pivot,
                   std::span<const BacktranslationTriple> triples,
                   const std::optional<ArtifactHeader>& header) {
  if (header) out << header->line() << '\n';
  for (const auto& t : triples) {
    if (!t.ok()) continue;
    nlohmann::ordered_json j;
    j["id"] = t.id;
    j["pivot_lang"] = to_string(pivot);
    j["original_en"] = t.original;
    j["pivot"] = t.pivot;
    j["round_trip_en"] = t.round_trip;
    out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace)
        << '\n';
  }
}

std::vector<BacktranslationTriple> load_triples(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<BacktranslationTriple> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || line.front() == '#') continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(),
                     j.at("original_en").get<std::string>(),
                     j.at("pivot").get<std::string>(),
                     j.at("round_trip_en").get<std::string>(),
                     {}});
    } catch (const std::exception& e) {
      throw Error("triple file line " + std::to_string(line_no) + ": " +
                  e.what());
    }
  }
  return out;
}

std::vector<CoverageRow> translation_coverage_report(
    std::span<const CorpusRecord> records, const TranslationCache& cache,
    std::span<const NaturalLanguage> targets, int beam_size) {
  std::vector<CoverageRow> rows;
  for (auto target : targets) {
    CoverageRow fwd{NaturalLanguage::kEn, target, 0, 0};
    CoverageRow bwd{target, NaturalLanguage::kEn, 0, 0};
    for (const auto& r : records) {
      auto pivot = cache.get(TranslationCache::key(
          r.docstring, NaturalLanguage::kEn, target, beam_size));
      if (!pivot) {
        ++fwd.missing;
        ++bwd.missing;
        continue;
      }
      ++fwd.cached;
      if (cache.contains(TranslationCache::key(*pivot, target,
                                               NaturalLanguage::kEn,
                                               beam_size)))
        ++bwd.cached;
      else
        ++bwd.missing;
    }
    rows.push_back(fwd);
    rows.push_back(bwd);
  }
  return rows;
}

}  // namespace mcsearch

#include <gtest/gtest.h>

#include <atomic>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "mcsearch/translation.h"
#include "synthetic.h"
#include "test_util.h"

namespace mcsearch {
namespace {

using testing::make_record;

TranslationRequest request(std::vector<std::string> texts,
                           NaturalLanguage target = NaturalLanguage::kJa) {
  TranslationRequest r;
  r.texts = std::move(texts);
  r.target = target;
  return r;
}

// Fails the first `failures` calls, then delegates to the reversible mock.
class FlakyTranslator : public ReversibleMockTranslator {
 public:
  explicit FlakyTranslator(int failures) : failures_(failures) {}

  std::vector<std::string> translate(std::span<const std::string> texts,
                                     NaturalLanguage s, NaturalLanguage t,
                                     int beam) override {
    if (attempts_++ < failures_) throw BackendError("service unavailable");
    return ReversibleMockTranslator::translate(texts, s, t, beam);
  }
  int attempts() const { return attempts_; }

 private:
  int failures_;
  std::atomic<int> attempts_{0};
};

BatchOptions fast_options() {
  BatchOptions o;
  o.retry_delay = std::chrono::milliseconds(0);
  return o;
}

TEST(Request, Validation) {
  auto r = request({"a"});
  EXPECT_NO_THROW(r.validate());
  EXPECT_EQ(r.beam_size, 3);
  r.target = NaturalLanguage::kEn;
  EXPECT_THROW(r.validate(), Error);
  EXPECT_THROW(request({}).validate(), Error);
}

TEST(MockTranslator, ReversesTokensDeterministically) {
  ReversibleMockTranslator mock;
  TranslationCache cache;
  auto out = translate_batch(request({"set status field"}), mock, &cache);
  ASSERT_EQ(out.size(), 1u);
  ASSERT_TRUE(out[0].ok());
  EXPECT_EQ(*out[0].text, "tes sutats dleif");
  ReversibleMockTranslator again;
  EXPECT_EQ(*translate_batch(request({"set status field"}), again, nullptr)[0].text,
            *out[0].text);
}

TEST(MockTranslator, ReversesCodePointsNotBytes) {
  ReversibleMockTranslator mock;
  std::vector<std::string> in = {"値を 設定"};
  auto out = mock.translate(in, NaturalLanguage::kJa, NaturalLanguage::kEn, 3);
  EXPECT_EQ(out[0], "を値 定設");
}

TEST(TranslateBatch, CacheHitMakesNoBackendCall) {
  ReversibleMockTranslator mock;
  TranslationCache cache;
  auto req = request({"returns the value", "opens a file"});
  translate_batch(req, mock, &cache);
  EXPECT_EQ(mock.calls(), 1u);
  auto again = translate_batch(req, mock, &cache);
  EXPECT_EQ(mock.calls(), 1u);
  for (const auto& o : again) EXPECT_TRUE(o.from_cache);
}

TEST(TranslateBatch, PreservesOrderAcrossBatchesAndDuplicates) {
  ReversibleMockTranslator mock;
  std::vector<std::string> texts;
  for (int i = 0; i < 100; ++i) texts.push_back("text" + std::to_string(i % 37));
  auto opts = fast_options();
  opts.batch_size = 8;
  opts.max_concurrency = 3;
  auto out = translate_batch(request(texts), mock, nullptr, opts);
  ASSERT_EQ(out.size(), texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    std::string expected(texts[i].rbegin(), texts[i].rend());
    EXPECT_EQ(*out[i].text, expected);
  }
  EXPECT_EQ(mock.texts_seen(), 37u);  // duplicates are sent once
  EXPECT_EQ(mock.calls(), 5u);
}

TEST(TranslateBatch, RetriesThenSucceeds) {
  FlakyTranslator flaky(2);
  auto out = translate_batch(request({"a b"}), flaky, nullptr, fast_options());
  EXPECT_TRUE(out[0].ok());
  EXPECT_EQ(flaky.attempts(), 3);
}

TEST(TranslateBatch, MarksOrAbortsAfterBoundedAttempts) {
  FlakyTranslator down(1000);
  TranslationCache cache;
  auto opts = fast_options();
  auto out = translate_batch(request({"a", "b"}), down, &cache, opts);
  EXPECT_EQ(down.attempts(), 3);
  for (const auto& o : out) {
    EXPECT_FALSE(o.ok());
    EXPECT_NE(o.error.find("3 attempts"), std::string::npos);
  }
  EXPECT_EQ(cache.size(), 0u);  // failures are not cached

  opts.on_error = ErrorPolicy::kAbort;
  EXPECT_THROW(translate_batch(request({"a"}), down, nullptr, opts),
               BackendError);
}

TEST(TranslationCache, KeyCoversEveryField) {
  auto k = TranslationCache::key("x", NaturalLanguage::kEn,
                                 NaturalLanguage::kJa, 3);
  EXPECT_EQ(k.size(), 64u);
  EXPECT_NE(k, TranslationCache::key("x", NaturalLanguage::kEn,
                                     NaturalLanguage::kFr, 3));
  EXPECT_NE(k, TranslationCache::key("x", NaturalLanguage::kEn,
                                     NaturalLanguage::kJa, 4));
  EXPECT_NE(k, TranslationCache::key("x ", NaturalLanguage::kEn,
                                     NaturalLanguage::kJa, 3));
}

TEST(TranslationCache, PersistsAndToleratesTornTail) {
  testing::TempDir dir;
  auto file = dir / "cache.jsonl";
  {
    TranslationCache cache(file);
    cache.put("k1", "v1");
    cache.put("k2", "値");
  }
  {
    std::ofstream app(file, std::ios::app);
    app << R"({"key": "k3", "val)";  // interrupted write
  }
  {
    TranslationCache cache(file);
    EXPECT_EQ(cache.size(), 2u);
    EXPECT_EQ(cache.get("k2"), "値");
    cache.put("k4", "v4");
  }
  TranslationCache reopened(file);
  EXPECT_EQ(reopened.size(), 3u);
  EXPECT_EQ(reopened.get("k4"), "v4");
}

TEST(TranslationCache, ConcurrentReadsAndWrites) {
  TranslationCache cache;
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&cache, t] {
      for (int i = 0; i < 500; ++i) {
        cache.put(std::to_string(t * 1000 + i), "v");
        cache.get(std::to_string(i));
      }
    });
  for (auto& th : threads) th.join();
  EXPECT_EQ(cache.size(), 2000u);
}

TEST(Backtranslate, ReversibleMockIsIdentity) {
  auto records = testing::docstring_fixture(30, 4);
  ReversibleMockTranslator mock;
  TranslationCache cache;
  auto triples = backtranslate_corpus(records, NaturalLanguage::kFr, mock,
                                      &cache, fast_options());
  ASSERT_EQ(triples.size(), records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_TRUE(triples[i].ok());
    EXPECT_EQ(triples[i].round_trip, records[i].docstring);
    EXPECT_EQ(triples[i].id, records[i].id);
  }
  EXPECT_TRUE(backtranslate_corpus({}, NaturalLanguage::kFr, mock, &cache)
                  .empty());
}

TEST(Backtranslate, LossyMockDiffersExactlyOnLongDocstrings) {
  auto records = testing::docstring_fixture(100, 6);
  LossyMockTranslator lossy;
  auto triples = backtranslate_corpus(records, NaturalLanguage::kJa, lossy,
                                      nullptr, fast_options());
  for (std::size_t i = 0; i < records.size(); ++i) {
    // Simulate the lossy mock: every fifth token vanishes on the way back.
    std::istringstream words(records[i].docstring);
    std::vector<std::string> tokens;
    for (std::string w; words >> w;) tokens.push_back(w);
    std::string expected;
    for (std::size_t k = 0; k < tokens.size(); ++k) {
      if ((k + 1) % 5 == 0) continue;
      if (!expected.empty()) expected += ' ';
      expected += tokens[k];
    }
    EXPECT_EQ(triples[i].round_trip, expected);
    EXPECT_EQ(triples[i].round_trip != triples[i].original, tokens.size() >= 5);
  }
}

TEST(Backtranslate, RejectsNonEnglishRecords) {
  std::vector<CorpusRecord> records = {make_record(
      "a", "説明", "c", Partition::kTrain, NaturalLanguage::kJa)};
  ReversibleMockTranslator mock;
  EXPECT_THROW(backtranslate_corpus(records, NaturalLanguage::kFr, mock, nullptr),
               Error);
}

TEST(Backtranslate, TriplesFileRoundTrip) {
  testing::TempDir dir;
  auto records = testing::docstring_fixture(10, 1);
  LossyMockTranslator lossy;
  auto triples = backtranslate_corpus(records, NaturalLanguage::kZh, lossy,
                                      nullptr, fast_options());
  {
    std::ofstream out(dir / "t.jsonl");
    write_triples(out, NaturalLanguage::kZh, triples, ArtifactHeader{"h", 2});
  }
  auto back = load_triples(dir / "t.jsonl");
  ASSERT_EQ(back.size(), triples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].original, triples[i].original);
    EXPECT_EQ(back[i].round_trip, triples[i].round_trip);
  }
}

TEST(Coverage, EmptyHalfAndFullCache) {
  auto records = testing::docstring_fixture(20, 9);
  for (std::size_t i = 0; i < records.size(); ++i)
    records[i].docstring += " #" + std::to_string(i);  // distinct texts
  NaturalLanguage targets[] = {NaturalLanguage::kJa};
  TranslationCache cache;
  auto rows = translation_coverage_report(records, cache, targets);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].cached, 0u);
  EXPECT_EQ(rows[0].missing, 20u);

  ReversibleMockTranslator mock;
  std::vector<CorpusRecord> half(records.begin(), records.begin() + 10);
  backtranslate_corpus(half, NaturalLanguage::kJa, mock, &cache);
  rows = translation_coverage_report(records, cache, targets);
  for (const auto& r : rows) {
    EXPECT_EQ(r.cached, 10u);
    EXPECT_EQ(r.missing, 10u);
  }
  backtranslate_corpus(records, NaturalLanguage::kJa, mock, &cache);
  rows = translation_coverage_report(records, cache, targets);
  for (const auto& r : rows) EXPECT_EQ(r.cached + r.missing, 20u);
  EXPECT_EQ(rows[1].cached, 20u);
}

TEST(Wire, RequestBodyAndResponseParsing) {
  std::vector<std::string> texts = {"a", "b"};
  auto body = nlohmann::json::parse(translation_request_body(
      texts, NaturalLanguage::kEn, NaturalLanguage::kZh, 3));
  EXPECT_EQ(body["texts"], nlohmann::json({"a", "b"}));
  EXPECT_EQ(body["source_lang"], "en");
  EXPECT_EQ(body["target_lang"], "zh");
  EXPECT_EQ(body["beam_size"], 3);
  EXPECT_EQ(parse_translation_response(R"({"translations":["x","y"]})", 2),
            (std::vector<std::string>{"x", "y"}));
  EXPECT_THROW(parse_translation_response(R"({"translations":["x"]})", 2),
               BackendError);
  EXPECT_THROW(parse_translation_response("<html>", 1), BackendError);
}

// A local stand-in for the translation service that answers from a fixed
// table, so the transport is exercised without a real MT model.
class StubService {
 public:
  StubService() {
    server_.Post("/translate", [this](const httplib::Request& req,
                                      httplib::Response& res) {
      ++requests_;
      auto body = nlohmann::json::parse(req.body);
      last_beam_ = body["beam_size"].get<int>();
      nlohmann::json out = nlohmann::json::array();
      for (const auto& t : body["texts"]) {
        auto it = table_.find(t.get<std::string>());
        out.push_back(it == table_.end() ? t.get<std::string>() : it->second);
      }
      res.set_content(nlohmann::json{{"translations", out}}.dump(),
                      "application/json");
    });
    server_.Post("/broken", [](const httplib::Request&, httplib::Response& res) {
      res.status = 503;
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubService() {
    server_.stop();
    thread_.join();
  }

  std::string url(const std::string& path = "") const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }
  void set(std::string from, std::string to) { table_[from] = to; }
  int requests() const { return requests_; }
  int last_beam() const { return last_beam_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::map<std::string, std::string> table_;
  std::atomic<int> requests_{0};
  std::atomic<int> last_beam_{0};
};

TEST(HttpTranslator, CarriesTheSetStatusExample) {
  StubService service;
  service.set("SetStatus sets the Status field s value .",
              "SetStatus は、Status フィールドの値を設定します。");
  HttpTranslator http(service.url());
  TranslationCache cache;
  auto out = translate_batch(
      request({"SetStatus sets the Status field s value ."}), http, &cache);
  ASSERT_TRUE(out[0].ok());
  EXPECT_EQ(*out[0].text, "SetStatus は、Status フィールドの値を設定します。");
  EXPECT_EQ(service.last_beam(), 3);
  translate_batch(request({"SetStatus sets the Status field s value ."}), http,
                  &cache);
  EXPECT_EQ(service.requests(), 1);
}

TEST(HttpTranslator, HttpErrorsBecomeMarkedFailures) {
  StubService service;
  HttpTranslator http(service.url("/broken"));
  auto out = translate_batch(request({"x"}), http, nullptr, fast_options());
  EXPECT_FALSE(out[0].ok());
  EXPECT_NE(out[0].error.find("503"), std::string::npos);
  EXPECT_THROW(HttpTranslator("ftp://host"), Error);
}

}  // namespace
}  // namespace mcsearch

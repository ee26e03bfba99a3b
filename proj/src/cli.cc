#include "mcsearch/cli.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "CLI11.hpp"
#include "mcsearch/corpus.h"
#include "mcsearch/eval.h"
#include "mcsearch/filtering.h"
#include "mcsearch/model.h"
#include "mcsearch/rng.h"
#include "mcsearch/tokenizer.h"
#include "mcsearch/training.h"
#include "mcsearch/translation.h"

namespace mcsearch {

namespace {

namespace fs = std::filesystem;

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::uint64_t seed = 0;
  std::string config_hash;

  ArtifactHeader header() const { return {config_hash, seed}; }
};

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void require_file(const fs::path& path) {
  if (!fs::exists(path)) throw Error("input not found: " + path.string());
}

std::string format3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string first_line(std::string_view text, std::size_t limit = 100) {
  auto nl = text.find('\n');
  auto line = text.substr(0, nl);
  if (line.size() > limit) return std::string(line.substr(0, limit)) + "...";
  return std::string(line);
}

void report_load(Context& ctx, const fs::path& path, const LoadStats& stats) {
  ctx.out << path.string() << ": " << stats.loaded << " records loaded, "
          << stats.skipped() << " skipped (" << stats.malformed
          << " malformed, " << stats.invalid << " invalid, "
          << stats.duplicate_ids << " duplicate ids)\n";
  for (const auto& d : stats.diagnostics) ctx.err << "  skip " << d << '\n';
}

// ---- backend selection shared by translate / backtranslate -------------

struct BackendOptions {
  std::string backend = "mock";
  std::string url;
  std::string cache;
  std::size_t batch_size = 32;
  int beam_size = kDefaultBeamSize;
  std::size_t max_attempts = 3;
  std::size_t concurrency = 4;
  std::size_t retry_delay_ms = 100;
  std::string on_error = "skip";

  void add_to(CLI::App* app) {
    app->add_option("--backend", backend, "mock, mock-lossy or http")
        ->check(CLI::IsMember({"mock", "mock-lossy", "http"}))
        ->capture_default_str();
    app->add_option("--url", url, "translation service url (http backend)");
    app->add_option("--cache", cache, "append-only translation cache file");
    app->add_option("--batch-size", batch_size)->capture_default_str();
    app->add_option("--beam-size", beam_size)->capture_default_str();
    app->add_option("--max-attempts", max_attempts)->capture_default_str();
    app->add_option("--concurrency", concurrency)->capture_default_str();
    app->add_option("--retry-delay-ms", retry_delay_ms)->capture_default_str();
    app->add_option("--on-error", on_error, "skip or abort")
        ->check(CLI::IsMember({"skip", "abort"}))
        ->capture_default_str();
  }

  std::unique_ptr<Translator> make_backend() const {
    if (backend == "mock") return std::make_unique<ReversibleMockTranslator>();
    if (backend == "mock-lossy") return std::make_unique<LossyMockTranslator>();
    if (url.empty()) throw Error("--url is required for the http backend");
    return std::make_unique<HttpTranslator>(url);
  }

  std::unique_ptr<TranslationCache> make_cache() const {
    if (cache.empty()) return std::make_unique<TranslationCache>();
    if (fs::path(cache).has_parent_path())
      fs::create_directories(fs::path(cache).parent_path());
    return std::make_unique<TranslationCache>(fs::path(cache));
  }

  BatchOptions batch() const {
    BatchOptions b;
    b.batch_size = batch_size;
    b.max_attempts = max_attempts;
    b.max_concurrency = concurrency;
    b.retry_delay = std::chrono::milliseconds(retry_delay_ms);
    b.on_error = on_error == "abort" ? ErrorPolicy::kAbort : ErrorPolicy::kMark;
    return b;
  }
};

// ---- model / training flags ---------------------------------------------

struct ModelOptions {
  EncoderConfig config;

  void add_to(CLI::App* app) {
    app->add_option("--layers", config.layers)->capture_default_str();
    app->add_option("--heads", config.heads)->capture_default_str();
    app->add_option("--hidden", config.hidden)->capture_default_str();
    app->add_option("--ffn", config.ffn)->capture_default_str();
    app->add_option("--max-len", config.max_len)->capture_default_str();
    app->add_option("--dropout", config.dropout)->capture_default_str();
  }
};

struct TrainOptions {
  TrainConfig config;

  explicit TrainOptions(TrainConfig defaults) : config(defaults) {}

  void add_to(CLI::App* app) {
    app->add_option("--batch-size", config.batch_size)->capture_default_str();
    app->add_option("--lr", config.learning_rate)->capture_default_str();
    app->add_option("--epochs", config.max_epochs)->capture_default_str();
    app->add_option("--steps", config.max_steps,
                    "exact number of updates (0: use --epochs)")
        ->capture_default_str();
  }
};

// ---- scorers for evaluate -------------------------------------------------

PairScorer oracle_scorer(std::span<const TestSet> sets) {
  auto truth = std::make_shared<std::unordered_map<std::string, std::string>>();
  for (const auto& s : sets)
    for (const auto& e : s.entries) (*truth)[e.query] = e.code;
  return [truth](std::string_view q, std::string_view c) {
    auto it = truth->find(std::string(q));
    return it != truth->end() && it->second == c ? 1.0 : 0.0;
  };
}

PairScorer random_scorer(std::uint64_t seed) {
  return [seed](std::string_view q, std::string_view c) {
    std::uint64_t h = seed ^ 0xcbf29ce484222325ULL;
    auto mix = [&h](std::string_view s) {
      for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ULL;
      h = (h ^ 0xff) * 0x100000001b3ULL;
    };
    mix(q);
    mix(c);
    return SplitMix64(h).uniform_real();
  };
}

std::vector<CorpusRecord> load_many(Context& ctx,
                                    const std::vector<std::string>& paths) {
  std::vector<CorpusRecord> all;
  for (const auto& p : paths) {
    require_file(p);
    auto loaded = load_corpus(p);
    report_load(ctx, p, loaded.stats);
    all.insert(all.end(), std::make_move_iterator(loaded.records.begin()),
               std::make_move_iterator(loaded.records.end()));
  }
  return all;
}

// ---- subcommands ------------------------------------------------------------

struct Stage {
  CLI::App* app = nullptr;
  std::function<void(Context&)> run;
};

Stage add_ingest(CLI::App& root) {
  struct Opts {
    std::string input, output, format = "jsonl", pl, nl = "en";
    std::string pairs_out, test_sets_out, audit_out, audit_answers;
    std::size_t test_set_count = kDefaultTestSetCount;
    std::size_t test_set_size = kDefaultTestSetSize;
    std::size_t audit_size = 45;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand(
      "ingest", "Validate a corpus file and derive pairs, test sets or audits");
  app->add_option("--input", o->input)->required();
  app->add_option("--format", o->format, "jsonl or codesplit")
      ->check(CLI::IsMember({"jsonl", "codesplit"}))
      ->capture_default_str();
  app->add_option("--pl", o->pl, "expected programming language");
  app->add_option("--nl", o->nl, "natural language of a codesplit file")
      ->capture_default_str();
  app->add_option("--output", o->output, "normalized corpus file");
  app->add_option("--pairs-out", o->pairs_out, "balanced fine-tuning pairs");
  app->add_option("--test-sets-out", o->test_sets_out, "sampled MRR test sets");
  app->add_option("--test-set-count", o->test_set_count)->capture_default_str();
  app->add_option("--test-set-size", o->test_set_size)->capture_default_str();
  app->add_option("--audit-out", o->audit_out, "annotation sheet (TSV)");
  app->add_option("--audit-answers", o->audit_answers,
                  "withheld original labels (TSV)");
  app->add_option("--audit-size", o->audit_size)->capture_default_str();

  auto run = [o](Context& ctx) {
    require_file(o->input);
    std::optional<ProgrammingLanguage> pl;
    if (!o->pl.empty()) pl = require_programming_language(o->pl);
    std::vector<PairExample> pairs;
    std::vector<CorpusRecord> records;
    if (o->format == "codesplit") {
      if (!pl) throw Error("--pl is required for codesplit input");
      LoadStats stats;
      pairs = load_codesplit_pairs(o->input, require_natural_language(o->nl),
                                   *pl, &stats);
      report_load(ctx, o->input, stats);
      if (!o->output.empty() || !o->test_sets_out.empty())
        throw Error("codesplit input holds labelled pairs, not records");
      if (!o->pairs_out.empty()) {
        auto out = open_output(o->pairs_out);
        write_pairs(out, pairs, ctx.header());
      }
    } else {
      auto loaded = load_corpus(o->input, pl);
      report_load(ctx, o->input, loaded.stats);
      records = std::move(loaded.records);
      if (!o->output.empty()) {
        auto out = open_output(o->output);
        write_corpus(out, records, ctx.header());
      }
      if (!o->pairs_out.empty() || !o->audit_out.empty()) {
        pairs = make_finetune_pairs(records, ctx.seed);
        ctx.out << "pairs: " << pairs.size() << " ("
                << pairs.size() / 2 << " positive)\n";
      }
      if (!o->pairs_out.empty()) {
        auto out = open_output(o->pairs_out);
        write_pairs(out, pairs, ctx.header());
      }
      if (!o->test_sets_out.empty()) {
        auto sets = sample_test_sets(records, o->test_set_count,
                                     o->test_set_size, ctx.seed);
        auto out = open_output(o->test_sets_out);
        write_test_sets(out, sets, ctx.header());
        ctx.out << "test sets: " << sets.size() << " x " << o->test_set_size
                << '\n';
      }
    }
    if (!o->audit_out.empty()) {
      auto sheet = audit_sample(pairs, o->audit_size, ctx.seed);
      auto out = open_output(o->audit_out);
      write_audit_sheet(out, sheet, ctx.header());
      if (!o->audit_answers.empty()) {
        auto ans = open_output(o->audit_answers);
        write_audit_answers(ans, sheet, ctx.header());
      }
      ctx.out << "audit sheet: " << sheet.rows.size() << " rows\n";
    }
  };
  return {app, run};
}

Stage add_translate(CLI::App& root) {
  struct Opts {
    std::string input, output, target;
    BackendOptions backend;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand(
      "translate", "Translate English docstrings into another language");
  app->add_option("--input", o->input, "English corpus")->required();
  app->add_option("--target", o->target, "fr, ja or zh")->required();
  app->add_option("--output", o->output, "translated corpus")->required();
  o->backend.add_to(app);

  auto run = [o](Context& ctx) {
    require_file(o->input);
    auto target = require_natural_language(o->target);
    auto loaded = load_corpus(o->input);
    report_load(ctx, o->input, loaded.stats);
    auto backend = o->backend.make_backend();
    auto cache = o->backend.make_cache();
    std::vector<CorpusRecord> translated;
    if (!loaded.records.empty()) {
      TranslationRequest req;
      req.source = NaturalLanguage::kEn;
      req.target = target;
      req.beam_size = o->backend.beam_size;
      for (const auto& r : loaded.records) {
        if (r.nl != NaturalLanguage::kEn)
          throw Error("record '" + r.id + "' is not English");
        req.texts.push_back(r.docstring);
      }
      auto outcomes =
          translate_batch(req, *backend, cache.get(), o->backend.batch());
      std::size_t failed = 0;
      for (std::size_t i = 0; i < outcomes.size(); ++i) {
        if (!outcomes[i].ok()) {
          ++failed;
          continue;
        }
        auto r = loaded.records[i];
        r.docstring = *outcomes[i].text;
        r.nl = target;
        if (record_violation(r)) {
          ++failed;
          continue;
        }
        translated.push_back(std::move(r));
      }
      ctx.out << "translated " << translated.size() << " of "
              << outcomes.size() << " docstrings (" << failed
              << " skipped)\n";
    }
    auto out = open_output(o->output);
    write_corpus(out, translated, ctx.header());
  };
  return {app, run};
}

Stage add_backtranslate(CLI::App& root) {
  struct Opts {
    std::string input, output, pivot;
    bool coverage = false;
    BackendOptions backend;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand(
      "backtranslate", "Round-trip English docstrings through a pivot language");
  app->add_option("--input", o->input, "English corpus")->required();
  app->add_option("--pivot", o->pivot, "fr, ja or zh")->required();
  app->add_option("--output", o->output, "triples file (JSONL)")->required();
  app->add_flag("--coverage", o->coverage, "print cache coverage first");
  o->backend.add_to(app);

  auto run = [o](Context& ctx) {
    require_file(o->input);
    auto pivot = require_natural_language(o->pivot);
    auto loaded = load_corpus(o->input);
    report_load(ctx, o->input, loaded.stats);
    auto backend = o->backend.make_backend();
    auto cache = o->backend.make_cache();
    if (o->coverage) {
      NaturalLanguage targets[] = {pivot};
      for (const auto& row : translation_coverage_report(
               loaded.records, *cache, targets, o->backend.beam_size))
        ctx.out << "coverage " << to_string(row.source) << "->"
                << to_string(row.target) << ": " << row.cached << " cached, "
                << row.missing << " missing\n";
    }
    auto triples = backtranslate_corpus(loaded.records, pivot, *backend,
                                        cache.get(), o->backend.batch(),
                                        o->backend.beam_size);
    auto ok = std::count_if(triples.begin(), triples.end(),
                            [](const auto& t) { return t.ok(); });
    ctx.out << "back-translated " << ok << " of " << triples.size()
            << " docstrings\n";
    auto out = open_output(o->output);
    write_triples(out, pivot, triples, ctx.header());
  };
  return {app, run};
}

Stage add_filter(CLI::App& root) {
  struct Opts {
    std::string triples, corpus, output, scores_out, report_out;
    std::string thresholds = "0.2..0.7";
    double threshold = -1.0;
    std::string nl = "ja", split = "train";
    bool no_lowercase = false;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand(
      "filter", "Score back-translations with unigram BLEU and filter by threshold");
  app->add_option("--triples", o->triples, "back-translation triples")
      ->required();
  app->add_option("--corpus", o->corpus,
                  "translated corpus to filter (joined on id)");
  app->add_option("--output", o->output, "records scoring above --threshold");
  app->add_option("--threshold", o->threshold, "retention threshold");
  app->add_option("--thresholds", o->thresholds, "sweep, e.g. 0.2..0.7")
      ->capture_default_str();
  app->add_option("--nl", o->nl, "language label of the report row")
      ->capture_default_str();
  app->add_option("--split", o->split, "train, valid or test")
      ->capture_default_str();
  app->add_option("--scores-out", o->scores_out, "id<TAB>bleu1 file");
  app->add_option("--report-out", o->report_out, "threshold sweep table");
  app->add_flag("--no-lowercase", o->no_lowercase,
                "compare tokens case-sensitively");

  auto run = [o](Context& ctx) {
    require_file(o->triples);
    auto nl = require_natural_language(o->nl);
    auto split = parse_partition(o->split);
    if (!split) throw Error("unknown split: " + o->split);
    BleuTokenization tok{!o->no_lowercase};
    auto triples = load_triples(o->triples);

    std::unordered_map<std::string, const CorpusRecord*> by_id;
    std::vector<CorpusRecord> records;
    if (!o->corpus.empty()) {
      require_file(o->corpus);
      auto loaded = load_corpus(o->corpus);
      report_load(ctx, o->corpus, loaded.stats);
      records = std::move(loaded.records);
      for (const auto& r : records) by_id[r.id] = &r;
    }
    std::vector<ScoredRecord> scored;
    scored.reserve(triples.size());
    std::size_t unmatched = 0;
    for (const auto& t : triples) {
      ScoredRecord s;
      if (!by_id.empty()) {
        auto it = by_id.find(t.id);
        if (it == by_id.end()) {
          ++unmatched;
          continue;
        }
        s.record = *it->second;
      } else {
        s.record.id = t.id;
        s.record.docstring = t.pivot;
        s.record.nl = nl;
        s.record.partition = *split;
      }
      s.bleu1 = round_trip_bleu(t.original, t.round_trip, tok);
      scored.push_back(std::move(s));
    }
    if (unmatched)
      ctx.err << unmatched << " triples have no record in " << o->corpus
              << '\n';
    ctx.out << "scored " << scored.size() << " back-translations\n";

    if (!o->scores_out.empty()) {
      auto out = open_output(o->scores_out);
      write_scores(out, scored, ctx.header());
    }
    auto thresholds = parse_thresholds(o->thresholds);
    std::map<SweepKey, std::vector<double>> by_key;
    auto& values = by_key[{nl, *split}];
    for (const auto& s : scored) values.push_back(s.bleu1);
    auto report = threshold_sweep(by_key, thresholds);
    if (!o->report_out.empty()) {
      auto out = open_output(o->report_out);
      write_filter_report(out, report, ctx.header());
    }
    write_filter_report(ctx.out, report);

    if (!o->output.empty()) {
      if (o->threshold < 0) throw Error("--output needs --threshold");
      auto kept = filter_by_threshold(scored, o->threshold);
      auto out = open_output(o->output);
      write_corpus(out, kept, ctx.header());
      ctx.out << "retained " << kept.size() << " of " << scored.size()
              << " records above " << format_real(o->threshold) << '\n';
    }
  };
  return {app, run};
}

Stage add_sweep_report(CLI::App& root) {
  struct Opts {
    std::vector<std::string> scores;
    std::string thresholds = "0.1..0.9";
    std::string output;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand(
      "sweep-report", "Combine score files into one threshold sweep table");
  app->add_option("--scores", o->scores, "nl:split:path, repeatable")
      ->required();
  app->add_option("--thresholds", o->thresholds)->capture_default_str();
  app->add_option("--output", o->output, "report file (TSV)");

  auto run = [o](Context& ctx) {
    std::map<SweepKey, std::vector<double>> by_key;
    for (const auto& spec : o->scores) {
      auto a = spec.find(':');
      auto b = spec.find(':', a == std::string::npos ? a : a + 1);
      if (a == std::string::npos || b == std::string::npos)
        throw Error("--scores expects nl:split:path, got " + spec);
      auto nl = require_natural_language(spec.substr(0, a));
      auto split = parse_partition(spec.substr(a + 1, b - a - 1));
      if (!split) throw Error("unknown split in " + spec);
      auto path = spec.substr(b + 1);
      require_file(path);
      auto& values = by_key[{nl, *split}];
      for (const auto& [id, v] : load_scores(path)) values.push_back(v);
    }
    auto report = threshold_sweep(by_key, parse_thresholds(o->thresholds));
    if (!o->output.empty()) {
      auto out = open_output(o->output);
      write_filter_report(out, report, ctx.header());
    }
    write_filter_report(ctx.out, report);
  };
  return {app, run};
}

Stage add_pretrain(CLI::App& root) {
  struct Opts {
    std::vector<std::string> corpora;
    std::string regime = "all-to-all";
    std::string vocab_in, vocab_out, output, loss_curve;
    std::size_t vocab_size = kDefaultVocabSize;
    ModelOptions model;
    TrainOptions train{TrainConfig::pretrain_defaults()};
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand(
      "pretrain", "Train the vocabulary and masked-LM pre-train the encoder");
  app->add_option("--corpus", o->corpora, "corpus files, repeatable")
      ->required();
  app->add_option("--regime", o->regime,
                  "no-pretraining, all-to-one:<pl> or all-to-all")
      ->capture_default_str();
  app->add_option("--vocab-in", o->vocab_in, "reuse an existing vocabulary");
  app->add_option("--vocab-out", o->vocab_out, "where to store the vocabulary");
  app->add_option("--vocab-size", o->vocab_size)->capture_default_str();
  app->add_option("--output", o->output, "checkpoint file")->required();
  app->add_option("--loss-curve", o->loss_curve, "step<TAB>loss file");
  app->add_option("--mask-rate", o->train.config.mask_rate)
      ->capture_default_str();
  o->model.add_to(app);
  o->train.add_to(app);

  auto run = [o](Context& ctx) {
    auto regime = DataRegime::parse(o->regime);
    auto records = load_many(ctx, o->corpora);

    std::optional<Vocabulary> vocab;
    if (!o->vocab_in.empty()) {
      require_file(o->vocab_in);
      vocab = Vocabulary::load(fs::path(o->vocab_in));
    } else {
      std::vector<std::string> texts;
      for (const auto& r : records) {
        texts.push_back(r.docstring);
        texts.push_back(r.code);
      }
      vocab = Vocabulary::train(texts, o->vocab_size, ctx.seed);
      if (o->vocab_out.empty())
        throw Error("--vocab-out is required when training a vocabulary");
      vocab->save(fs::path(o->vocab_out), ctx.header());
      ctx.out << "vocabulary: " << vocab->size() << " tokens\n";
    }

    auto config = o->model.config;
    config.vocab_size = vocab->size();
    config.seed = ctx.seed;
    EncoderModel model(config);

    auto corpus = assemble_pretraining(group_by_language(records), regime);
    ctx.out << "regime " << regime.name() << ": " << corpus.size()
            << " pre-training pairs\n";
    TrainResult result;
    if (!corpus.empty()) {
      std::vector<EncodedSequence> encoded;
      encoded.reserve(corpus.size());
      for (const auto& r : corpus)
        encoded.push_back(encode_pair(r.docstring, r.code, *vocab,
                                      config.max_len));
      auto train = o->train.config;
      train.seed = ctx.seed;
      result = pretrain_mlm(model, encoded, train);
      ctx.out << "steps: " << result.steps << ", skipped sequences: "
              << result.skipped_sequences;
      if (!result.curve.empty())
        ctx.out << ", loss " << format_real(result.curve.front().loss)
                << " -> " << format_real(result.curve.back().loss);
      ctx.out << '\n';
    }
    model.save(fs::path(o->output), ctx.header());
    if (!o->loss_curve.empty()) {
      auto out = open_output(o->loss_curve);
      write_loss_curve(out, result.curve, ctx.header());
    }
  };
  return {app, run};
}

Stage add_finetune(CLI::App& root) {
  struct Opts {
    std::string checkpoint, vocab, corpus, pairs, output, loss_curve;
    TrainOptions train{TrainConfig::finetune_defaults()};
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand(
      "finetune", "Fine-tune the [CLS] relevance classifier on one language pair");
  app->add_option("--checkpoint", o->checkpoint, "pre-trained checkpoint")
      ->required();
  app->add_option("--vocab", o->vocab)->required();
  auto* corpus =
      app->add_option("--corpus", o->corpus, "records; pairs are derived");
  auto* pairs = app->add_option("--pairs", o->pairs, "labelled pair file");
  corpus->excludes(pairs);
  app->add_option("--output", o->output, "fine-tuned checkpoint")->required();
  app->add_option("--loss-curve", o->loss_curve, "step<TAB>loss file");
  o->train.add_to(app);

  auto run = [o](Context& ctx) {
    require_file(o->checkpoint);
    require_file(o->vocab);
    auto model = EncoderModel::load(fs::path(o->checkpoint));
    auto vocab = Vocabulary::load(fs::path(o->vocab));
    std::vector<PairExample> pairs;
    if (!o->pairs.empty()) {
      require_file(o->pairs);
      pairs = load_pairs(o->pairs);
    } else if (!o->corpus.empty()) {
      require_file(o->corpus);
      auto loaded = load_corpus(o->corpus);
      report_load(ctx, o->corpus, loaded.stats);
      pairs = make_finetune_pairs(loaded.records, ctx.seed);
    } else {
      throw Error("finetune needs --corpus or --pairs");
    }
    auto train = o->train.config;
    train.seed = ctx.seed;
    auto result = finetune_pairs(model, vocab, pairs, train);
    ctx.out << "fine-tuned on " << pairs.size() << " pairs: " << result.steps
            << " steps, " << result.epochs << " epochs\n";
    model.save(fs::path(o->output), ctx.header());
    if (!o->loss_curve.empty()) {
      auto out = open_output(o->loss_curve);
      write_loss_curve(out, result.curve, ctx.header());
    }
  };
  return {app, run};
}

Stage add_evaluate(CLI::App& root) {
  struct Opts {
    std::string scorer = "model", checkpoint, vocab, test_sets, corpus;
    std::size_t count = kDefaultTestSetCount, size = kDefaultTestSetSize;
    std::size_t threads = 1;
    std::string ranks_out, table_out, row = "en", column = "test";
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("evaluate", "Mean reciprocal rank over test sets");
  app->add_option("--scorer", o->scorer, "model, oracle or random")
      ->check(CLI::IsMember({"model", "oracle", "random"}))
      ->capture_default_str();
  app->add_option("--checkpoint", o->checkpoint);
  app->add_option("--vocab", o->vocab);
  auto* sets = app->add_option("--test-sets", o->test_sets, "test set file");
  auto* corpus = app->add_option("--corpus", o->corpus,
                                 "test-partition corpus to sample sets from");
  sets->excludes(corpus);
  app->add_option("--count", o->count)->capture_default_str();
  app->add_option("--size", o->size)->capture_default_str();
  app->add_option("--threads", o->threads)->capture_default_str();
  app->add_option("--ranks-out", o->ranks_out, "per-query rank dump");
  app->add_option("--table-out", o->table_out, "MRR table (TSV)");
  app->add_option("--row", o->row, "table row label")->capture_default_str();
  app->add_option("--column", o->column, "table column label")
      ->capture_default_str();

  auto run = [o](Context& ctx) {
    std::vector<TestSet> sets;
    if (!o->test_sets.empty()) {
      require_file(o->test_sets);
      sets = load_test_sets(o->test_sets);
    } else if (!o->corpus.empty()) {
      require_file(o->corpus);
      auto loaded = load_corpus(o->corpus);
      report_load(ctx, o->corpus, loaded.stats);
      sets = sample_test_sets(loaded.records, o->count, o->size, ctx.seed);
    } else {
      throw Error("evaluate needs --test-sets or --corpus");
    }

    std::optional<EncoderModel> model;
    std::optional<Vocabulary> vocab;
    std::unique_ptr<CrossEncoderScorer> cross;
    PairScorer scorer;
    if (o->scorer == "oracle") {
      scorer = oracle_scorer(sets);
    } else if (o->scorer == "random") {
      scorer = random_scorer(ctx.seed);
    } else {
      if (o->checkpoint.empty() || o->vocab.empty())
        throw Error("the model scorer needs --checkpoint and --vocab");
      require_file(o->checkpoint);
      require_file(o->vocab);
      model = EncoderModel::load(fs::path(o->checkpoint));
      vocab = Vocabulary::load(fs::path(o->vocab));
      cross = std::make_unique<CrossEncoderScorer>(*model, *vocab);
      scorer = [&c = *cross](std::string_view q, std::string_view code) {
        return c.score(q, code);
      };
    }
    auto result = mrr_mean(sets, memoize(scorer, std::make_shared<ScoreCache>()),
                           {o->threads});
    for (std::size_t s = 0; s < result.per_set.size(); ++s)
      ctx.out << "set " << s << ": MRR " << format3(result.per_set[s]) << " ("
              << sets[s].size() << " queries)\n";
    ctx.out << "MRR " << format3(result.mean) << '\n';
    if (!o->ranks_out.empty()) {
      auto out = open_output(o->ranks_out);
      write_rank_records(out, result, ctx.header());
    }
    if (!o->table_out.empty()) {
      MrrTable table;
      table.set(o->row, o->column, result.mean);
      auto out = open_output(o->table_out);
      write_mrr_table(out, table, ctx.header());
    }
  };
  return {app, run};
}

Stage add_search(CLI::App& root) {
  struct Opts {
    std::string checkpoint, vocab, corpus, query;
    std::size_t top_k = 10;
  };
  auto o = std::make_shared<Opts>();
  auto* app = root.add_subcommand("search", "Rank a corpus's codes for a query");
  app->add_option("--checkpoint", o->checkpoint)->required();
  app->add_option("--vocab", o->vocab)->required();
  app->add_option("--corpus", o->corpus)->required();
  app->add_option("--query", o->query)->required();
  app->add_option("--top-k", o->top_k)->capture_default_str();

  auto run = [o](Context& ctx) {
    require_file(o->checkpoint);
    require_file(o->vocab);
    require_file(o->corpus);
    auto model = EncoderModel::load(fs::path(o->checkpoint));
    auto vocab = Vocabulary::load(fs::path(o->vocab));
    auto loaded = load_corpus(o->corpus);
    CrossEncoderScorer scorer(model, vocab);
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i = 0; i < loaded.records.size(); ++i)
      ranked.emplace_back(scorer.score(o->query, loaded.records[i].code), i);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    ctx.out << "rank\tscore\tid\tcode\n";
    for (std::size_t k = 0; k < std::min(o->top_k, ranked.size()); ++k) {
      const auto& r = loaded.records[ranked[k].second];
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", ranked[k].first);
      ctx.out << k + 1 << '\t' << buf << '\t' << tsv_escape(r.id) << '\t'
              << tsv_escape(first_line(r.code)) << '\n';
    }
  };
  return {app, run};
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Multilingual code search toolkit", std::string(kToolName)};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.set_config("--config", "", "key = value settings file");
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "seed for every sampling decision")
      ->capture_default_str();

  std::vector<Stage> stages = {
      add_ingest(app),   add_translate(app), add_backtranslate(app),
      add_filter(app),   add_sweep_report(app), add_pretrain(app),
      add_finetune(app), add_evaluate(app),  add_search(app)};

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    out << kToolName << ' ' << kToolVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    err << "run '" << kToolName << " --help' for usage\n";
    return kExitUsage;
  }

  for (auto& stage : stages) {
    if (!stage.app->parsed()) continue;
    Context ctx{out, err, seed, {}};
    std::string canonical = stage.app->get_name() + "\n" +
                            stage.app->config_to_str(true, false) +
                            "seed=" + std::to_string(seed) + "\n";
    ctx.config_hash = sha256_hex(canonical).substr(0, 16);
    err << kToolName << ' ' << stage.app->get_name()
        << " config=" << ctx.config_hash << " seed=" << seed << '\n';
    try {
      stage.run(ctx);
    } catch (const std::exception& e) {
      err << kToolName << ' ' << stage.app->get_name()
          << ": error: " << e.what() << '\n';
      return kExitStageFailure;
    }
    return kExitOk;
  }
  return kExitUsage;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace mcsearch

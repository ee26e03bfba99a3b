#include "mcsearch/tokenizer.h"

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <queue>
#include <sstream>

namespace mcsearch {

namespace {

constexpr std::string_view kSpecialNames[] = {"[PAD]", "[UNK]", "[CLS]",
                                              "[SEP]", "[MASK]"};
constexpr std::string_view kMagic = "mcsearch-vocab 1";

std::uint64_t pair_key(TokenId a, TokenId b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

std::string to_hex(std::string_view bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : bytes) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 0xf]);
  }
  return out;
}

std::string from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw Error("bad hex digit in vocabulary file");
  };
  if (hex.size() % 2) throw Error("odd-length hex in vocabulary file");
  std::string out;
  for (std::size_t i = 0; i < hex.size(); i += 2)
    out.push_back(static_cast<char>(nibble(hex[i]) * 16 + nibble(hex[i + 1])));
  return out;
}

}  // namespace

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::string_view> chunks;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = i;
    while (j < text.size() && is_space(text[j])) ++j;
    while (j < text.size() && !is_space(text[j])) ++j;
    chunks.push_back(text.substr(i, j - i));
    i = j;
  }
  return chunks;
}

Vocabulary::Vocabulary() {
  tokens_.reserve(kFirstMergeId);
  for (auto name : kSpecialNames) tokens_.emplace_back(name);
  for (int b = 0; b < 256; ++b) tokens_.emplace_back(1, static_cast<char>(b));
}

void Vocabulary::add_merge(TokenId left, TokenId right) {
  merge_rank_.emplace(pair_key(left, right),
                      static_cast<TokenId>(merges_.size()));
  merges_.emplace_back(left, right);
  tokens_.push_back(tokens_[left] + tokens_[right]);
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw Error("token id " + std::to_string(id) + " outside vocabulary of " +
                std::to_string(tokens_.size()));
  return tokens_[id];
}

Vocabulary Vocabulary::train(std::span<const std::string> texts,
                             std::size_t vocab_size, std::uint64_t seed) {
  if (vocab_size <= static_cast<std::size_t>(kFirstMergeId))
    throw Error("vocab size must exceed " + std::to_string(kFirstMergeId) +
                " (specials plus byte alphabet)");
  bool any = std::any_of(texts.begin(), texts.end(),
                         [](const std::string& t) { return !t.empty(); });
  if (!any) throw Error("cannot train a vocabulary on an empty corpus");

  Vocabulary vocab;
  vocab.seed_ = seed;

  std::unordered_map<std::string_view, std::size_t> chunk_index;
  std::vector<std::vector<TokenId>> words;
  std::vector<std::int64_t> freq;
  for (const auto& text : texts) {
    for (auto chunk : pretokenize(text)) {
      auto [it, inserted] = chunk_index.emplace(chunk, words.size());
      if (inserted) {
        std::vector<TokenId> syms;
        for (unsigned char c : chunk) syms.push_back(kFirstByteId + c);
        words.push_back(std::move(syms));
        freq.push_back(0);
      }
      ++freq[it->second];
    }
  }

  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> where;

  struct Candidate {
    std::int64_t count;
    TokenId left, right;
  };
  // Max count first, then lexicographically smallest (left, right) bytes.
  auto worse = [&vocab](const Candidate& a, const Candidate& b) {
    if (a.count != b.count) return a.count < b.count;
    const auto& al = vocab.tokens_[a.left];
    const auto& bl = vocab.tokens_[b.left];
    if (al != bl) return al > bl;
    return vocab.tokens_[a.right] > vocab.tokens_[b.right];
  };
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(worse)> heap(
      worse);

  auto account = [&](std::size_t w, std::int64_t sign, bool index) {
    const auto& syms = words[w];
    for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
      auto key = pair_key(syms[k], syms[k + 1]);
      auto& c = counts[key];
      c += sign * freq[w];
      if (index) where[key].push_back(w);
    }
  };
  for (std::size_t w = 0; w < words.size(); ++w) account(w, +1, true);
  for (const auto& [key, c] : counts)
    heap.push({c, static_cast<TokenId>(key >> 32),
               static_cast<TokenId>(key & 0xffffffffu)});

  std::vector<std::size_t> stamp(words.size(), 0);
  const std::size_t target_merges = vocab_size - kFirstMergeId;
  while (vocab.merges_.size() < target_merges && !heap.empty()) {
    auto top = heap.top();
    heap.pop();
    auto key = pair_key(top.left, top.right);
    auto it = counts.find(key);
    if (it == counts.end() || it->second != top.count) continue;  // stale
    if (top.count <= 0) break;

    const TokenId merged = static_cast<TokenId>(vocab.tokens_.size());
    vocab.add_merge(top.left, top.right);
    const std::size_t round = vocab.merges_.size();

    std::unordered_map<std::uint64_t, std::int64_t> before;
    auto touched = std::move(where[key]);
    where.erase(key);
    for (auto w : touched) {
      if (stamp[w] == round) continue;
      stamp[w] = round;
      auto& syms = words[w];
      bool present = false;
      for (std::size_t k = 0; k + 1 < syms.size(); ++k)
        if (syms[k] == top.left && syms[k + 1] == top.right) present = true;
      if (!present) continue;

      for (std::size_t k = 0; k + 1 < syms.size(); ++k)
        before.emplace(pair_key(syms[k], syms[k + 1]), 0);
      account(w, -1, false);
      std::vector<TokenId> next;
      next.reserve(syms.size());
      for (std::size_t k = 0; k < syms.size(); ++k) {
        if (k + 1 < syms.size() && syms[k] == top.left &&
            syms[k + 1] == top.right) {
          next.push_back(merged);
          ++k;
        } else {
          next.push_back(syms[k]);
        }
      }
      syms = std::move(next);
      for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
        auto nk = pair_key(syms[k], syms[k + 1]);
        before.emplace(nk, 0);
        if (syms[k] == merged || syms[k + 1] == merged) where[nk].push_back(w);
      }
      account(w, +1, false);
    }
    counts.erase(key);
    for (const auto& [k, unused] : before) {
      auto c = counts.find(k);
      if (c == counts.end()) continue;
      if (c->second <= 0) {
        counts.erase(c);
        continue;
      }
      heap.push({c->second, static_cast<TokenId>(k >> 32),
                 static_cast<TokenId>(k & 0xffffffffu)});
    }
  }
  return vocab;
}

void Vocabulary::encode_chunk(std::string_view chunk,
                              std::vector<TokenId>& out) const {
  std::vector<TokenId> syms;
  syms.reserve(chunk.size());
  for (unsigned char c : chunk) syms.push_back(kFirstByteId + c);
  while (syms.size() > 1) {
    TokenId best_rank = std::numeric_limits<TokenId>::max();
    for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
      auto it = merge_rank_.find(pair_key(syms[k], syms[k + 1]));
      if (it != merge_rank_.end()) best_rank = std::min(best_rank, it->second);
    }
    if (best_rank == std::numeric_limits<TokenId>::max()) break;
    auto [left, right] = merges_[best_rank];
    const TokenId merged = kFirstMergeId + best_rank;
    std::size_t w = 0;
    for (std::size_t k = 0; k < syms.size(); ++k) {
      if (k + 1 < syms.size() && syms[k] == left && syms[k + 1] == right) {
        syms[w++] = merged;
        ++k;
      } else {
        syms[w++] = syms[k];
      }
    }
    syms.resize(w);
  }
  out.insert(out.end(), syms.begin(), syms.end());
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (auto chunk : pretokenize(text)) encode_chunk(chunk, ids);
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (auto id : ids) {
    const auto& t = token(id);
    if (!is_special(id)) out += t;
  }
  return out;
}

void Vocabulary::save(std::ostream& out,
                      const std::optional<ArtifactHeader>& header) const {
  if (header) out << header->line() << '\n';
  out << kMagic << '\n';
  out << "seed " << seed_ << '\n';
  out << "merges " << merges_.size() << '\n';
  for (auto [l, r] : merges_) out << l << ' ' << r << '\n';
  out << "tokens " << tokens_.size() << '\n';
  for (std::size_t id = 0; id < tokens_.size(); ++id) {
    out << id << '\t';
    if (is_special(static_cast<TokenId>(id)))
      out << tokens_[id];
    else
      out << to_hex(tokens_[id]);
    out << '\n';
  }
}

void Vocabulary::save(const std::filesystem::path& path,
                      const std::optional<ArtifactHeader>& header) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  save(out, header);
  if (!out) throw Error("write failed: " + path.string());
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::string line;
  auto next_line = [&]() -> std::string& {
    do {
      if (!std::getline(in, line)) throw Error("truncated vocabulary file");
    } while (!line.empty() && line.front() == '#');
    return line;
  };
  if (next_line() != kMagic) throw Error("not a vocabulary file");

  Vocabulary vocab;
  std::string word;
  std::size_t n = 0;
  {
    std::istringstream ss(next_line());
    if (!(ss >> word >> vocab.seed_) || word != "seed")
      throw Error("vocabulary file: expected seed line");
  }
  {
    std::istringstream ss(next_line());
    if (!(ss >> word >> n) || word != "merges")
      throw Error("vocabulary file: expected merges line");
  }
  for (std::size_t k = 0; k < n; ++k) {
    std::istringstream ss(next_line());
    TokenId l = 0, r = 0;
    if (!(ss >> l >> r)) throw Error("vocabulary file: bad merge line");
    auto limit = static_cast<TokenId>(vocab.tokens_.size());
    if (l < kFirstByteId || r < kFirstByteId || l >= limit || r >= limit)
      throw Error("vocabulary file: merge refers to an unknown token");
    vocab.add_merge(l, r);
  }
  {
    std::istringstream ss(next_line());
    if (!(ss >> word >> n) || word != "tokens" || n != vocab.tokens_.size())
      throw Error("vocabulary file: token table size does not match merges");
  }
  for (std::size_t id = 0; id < n; ++id) {
    auto& l = next_line();
    auto tab = l.find('\t');
    if (tab == std::string::npos || l.substr(0, tab) != std::to_string(id))
      throw Error("vocabulary file: bad token line " + std::to_string(id));
    std::string_view value = std::string_view(l).substr(tab + 1);
    std::string bytes = is_special(static_cast<TokenId>(id))
                            ? std::string(value)
                            : from_hex(value);
    if (bytes != vocab.tokens_[id])
      throw Error("vocabulary file: token " + std::to_string(id) +
                  " disagrees with the merge list");
  }
  return vocab;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return load(in);
}

std::size_t EncodedSequence::content_length() const {
  std::size_t n = attention_mask.size();
  while (n > 0 && attention_mask[n - 1] == 0) --n;
  return n;
}

EncodedSequence encode_pair(std::string_view query, std::string_view code,
                            const Vocabulary& vocab, std::size_t max_len) {
  if (max_len < 3)
    throw Error("max_len must leave room for [CLS] and two [SEP] tokens");
  auto q = vocab.encode(query);
  auto c = vocab.encode(code);
  const std::size_t budget = max_len - 3;
  if (q.size() + c.size() > budget) {
    if (q.size() > budget) q.resize(budget);
    c.resize(budget - q.size());
  }
  EncodedSequence seq;
  seq.ids.reserve(max_len);
  seq.ids.push_back(kClsId);
  seq.ids.insert(seq.ids.end(), q.begin(), q.end());
  seq.ids.push_back(kSepId);
  seq.ids.insert(seq.ids.end(), c.begin(), c.end());
  seq.ids.push_back(kSepId);
  seq.attention_mask.assign(seq.ids.size(), 1);
  seq.ids.resize(max_len, kPadId);
  seq.attention_mask.resize(max_len, 0);
  return seq;
}

}  // namespace mcsearch

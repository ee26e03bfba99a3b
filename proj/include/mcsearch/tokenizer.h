#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mcsearch/common.h"

namespace mcsearch {

using TokenId = std::int32_t;

// Reserved ids, stable across save/load. Byte b maps to kFirstByteId + b,
// learned merges follow in merge order.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kMaskId = 4;
inline constexpr TokenId kNumSpecialTokens = 5;
inline constexpr TokenId kFirstByteId = kNumSpecialTokens;
inline constexpr TokenId kFirstMergeId = kFirstByteId + 256;

inline constexpr std::size_t kDefaultVocabSize = 8192;
inline constexpr std::size_t kDefaultMaxLen = 256;

// Byte-level BPE vocabulary. Text is pre-split into chunks of leading
// white space plus one run of non-space bytes; merges never cross chunks,
// so decode(encode(x)) == x for every byte string x.
class Vocabulary {
 public:
  // Learns up to vocab_size - kFirstMergeId merges, most frequent pair
  // first with ties broken by the lexicographic order of the pair's bytes.
  // Stops early once no adjacent pair remains. `seed` is recorded only;
  // training is deterministic.
  static Vocabulary train(std::span<const std::string> texts,
                          std::size_t vocab_size, std::uint64_t seed = 0);

  std::size_t size() const { return tokens_.size(); }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::pair<TokenId, TokenId>>& merges() const {
    return merges_;
  }

  static bool is_special(TokenId id) { return id >= 0 && id < kNumSpecialTokens; }
  // Raw bytes for ordinary tokens, bracketed names for special ones.
  const std::string& token(TokenId id) const;

  std::vector<TokenId> encode(std::string_view text) const;
  // Special ids are dropped; ids outside [0, size()) throw.
  std::string decode(std::span<const TokenId> ids) const;

  void save(std::ostream& out,
            const std::optional<ArtifactHeader>& header = std::nullopt) const;
  void save(const std::filesystem::path& path,
            const std::optional<ArtifactHeader>& header = std::nullopt) const;
  static Vocabulary load(std::istream& in);
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && merges_ == other.merges_;
  }

 private:
  Vocabulary();
  void add_merge(TokenId left, TokenId right);
  void encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const;

  std::vector<std::string> tokens_;
  std::vector<std::pair<TokenId, TokenId>> merges_;
  std::unordered_map<std::uint64_t, TokenId> merge_rank_;
  std::uint64_t seed_ = 0;
};

// Splits text into BPE chunks (see Vocabulary).
std::vector<std::string_view> pretokenize(std::string_view text);

struct EncodedSequence {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> attention_mask;

  std::size_t size() const { return ids.size(); }
  // Index one past the last attended position.
  std::size_t content_length() const;
};

// [CLS] query [SEP] code [SEP], trimmed to max_len by cutting the code
// tail first and the query tail second, then padded with PAD to max_len.
EncodedSequence encode_pair(std::string_view query, std::string_view code,
                            const Vocabulary& vocab,
                            std::size_t max_len = kDefaultMaxLen);

}  // namespace mcsearch

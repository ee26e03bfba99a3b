#include "mcsearch/common.h"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <memory>

namespace mcsearch {

std::string_view to_string(NaturalLanguage nl) {
  switch (nl) {
    case NaturalLanguage::kEn: return "en";
    case NaturalLanguage::kFr: return "fr";
    case NaturalLanguage::kJa: return "ja";
    case NaturalLanguage::kZh: return "zh";
  }
  return "?";
}

std::string_view to_string(ProgrammingLanguage pl) {
  switch (pl) {
    case ProgrammingLanguage::kGo: return "go";
    case ProgrammingLanguage::kJava: return "java";
    case ProgrammingLanguage::kPhp: return "php";
    case ProgrammingLanguage::kPython: return "python";
  }
  return "?";
}

std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::kTrain: return "train";
    case Partition::kValid: return "valid";
    case Partition::kTest: return "test";
  }
  return "?";
}

std::optional<NaturalLanguage> parse_natural_language(std::string_view tag) {
  for (auto nl : kAllNaturalLanguages)
    if (to_string(nl) == tag) return nl;
  return std::nullopt;
}

std::optional<ProgrammingLanguage> parse_programming_language(
    std::string_view tag) {
  for (auto pl : kAllProgrammingLanguages)
    if (to_string(pl) == tag) return pl;
  return std::nullopt;
}

std::optional<Partition> parse_partition(std::string_view tag) {
  for (auto p : {Partition::kTrain, Partition::kValid, Partition::kTest})
    if (to_string(p) == tag) return p;
  return std::nullopt;
}

NaturalLanguage require_natural_language(std::string_view tag) {
  auto nl = parse_natural_language(tag);
  if (!nl) throw Error("unknown natural language tag: " + std::string(tag));
  return *nl;
}

ProgrammingLanguage require_programming_language(std::string_view tag) {
  auto pl = parse_programming_language(tag);
  if (!pl)
    throw Error("unknown programming language tag: " + std::string(tag));
  return *pl;
}

std::string ArtifactHeader::line() const {
  std::string out = "# ";
  out += kToolName;
  out += ' ';
  out += kToolVersion;
  out += " config=" + config_hash + " seed=" + std::to_string(seed);
  return out;
}

std::optional<ArtifactHeader> ArtifactHeader::parse(std::string_view line) {
  std::string prefix = "# " + std::string(kToolName) + " ";
  if (line.substr(0, prefix.size()) != prefix) return std::nullopt;
  auto cfg = line.find(" config=");
  auto sd = line.find(" seed=");
  if (cfg == std::string_view::npos || sd == std::string_view::npos ||
      sd < cfg)
    return std::nullopt;
  ArtifactHeader h;
  h.config_hash = std::string(line.substr(cfg + 8, sd - cfg - 8));
  auto seed_text = trim(line.substr(sd + 6));
  auto [ptr, ec] = std::from_chars(
      seed_text.data(), seed_text.data() + seed_text.size(), h.seed);
  if (ec != std::errc() || ptr != seed_text.data() + seed_text.size())
    return std::nullopt;
  return h;
}

std::string sha256_hex(std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(
      EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1)
    throw Error("sha256 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xf]);
  }
  return out;
}

std::string_view trim(std::string_view s) {
  auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
           c == '\v';
  };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace mcsearch

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mcsearch {

inline constexpr std::string_view kToolName = "mcsearch";
inline constexpr std::string_view kToolVersion = "0.3.1";

// Raised for contract violations and unrecoverable stage failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class NaturalLanguage { kEn, kFr, kJa, kZh };
enum class ProgrammingLanguage { kGo, kJava, kPhp, kPython };
enum class Partition { kTrain, kValid, kTest };

inline constexpr NaturalLanguage kAllNaturalLanguages[] = {
    NaturalLanguage::kEn, NaturalLanguage::kFr, NaturalLanguage::kJa,
    NaturalLanguage::kZh};
inline constexpr ProgrammingLanguage kAllProgrammingLanguages[] = {
    ProgrammingLanguage::kGo, ProgrammingLanguage::kJava,
    ProgrammingLanguage::kPhp, ProgrammingLanguage::kPython};

std::string_view to_string(NaturalLanguage nl);
std::string_view to_string(ProgrammingLanguage pl);
std::string_view to_string(Partition p);

std::optional<NaturalLanguage> parse_natural_language(std::string_view tag);
std::optional<ProgrammingLanguage> parse_programming_language(
    std::string_view tag);
std::optional<Partition> parse_partition(std::string_view tag);

// Throwing variants for CLI and config parsing.
NaturalLanguage require_natural_language(std::string_view tag);
ProgrammingLanguage require_programming_language(std::string_view tag);

// Provenance line written as the first line of every artifact file:
//   # mcsearch <version> config=<hash> seed=<seed>
struct ArtifactHeader {
  std::string config_hash;
  std::uint64_t seed = 0;

  std::string line() const;
  static std::optional<ArtifactHeader> parse(std::string_view line);
};

// Lower-case hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

std::string_view trim(std::string_view s);

}  // namespace mcsearch

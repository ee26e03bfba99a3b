#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mcsearch {

inline constexpr int kExitOk = 0;
inline constexpr int kExitStageFailure = 1;
inline constexpr int kExitUsage = 2;

// Entry point of the `mcsearch` tool. Subcommands: ingest, translate,
// backtranslate, filter, sweep-report, pretrain, finetune, evaluate,
// search. Settings may also come from `--config FILE` (key = value lines,
// one [section] per subcommand); flags override the file.
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace mcsearch

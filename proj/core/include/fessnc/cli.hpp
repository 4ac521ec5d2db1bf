#pragma once

// Command surface: train, project-check, simulate, bench. Commands are
// library functions returning stable exit codes so both the CLI binary and
// the tests drive the same paths.

#include <cstdint>
#include <optional>
#include <string>

namespace fessnc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNonFiniteLoss = 3;
inline constexpr int kExitModelMismatch = 4;
inline constexpr int kExitDivergence = 5;

// FNV-1a 64-bit digest of the raw config bytes, hex encoded. Equal digests
// mean byte-identical configs.
std::string config_digest(const std::string& bytes);

struct CommandOptions {
  std::string config_path;
  std::string out_dir;  // empty: config value, then $FESSNC_OUT_DIR, then "fessnc_out"
  std::optional<std::uint64_t> seed_override;
  int workers = 0;
  bool quiet = false;
};

int cmd_train(const CommandOptions& opts);
int cmd_project_check(const CommandOptions& opts);
int cmd_simulate(const CommandOptions& opts);
int cmd_bench(const std::string& system, const CommandOptions& opts);

}  // namespace fessnc::cli

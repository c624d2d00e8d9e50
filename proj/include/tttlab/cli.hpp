#pragma once

// Command-line front end. Lives in the library so tests can drive it
// in-process.
//
//   gen-data  synthetic world -> <out>/dataset.ttd
//   split     dataset -> <out>/splits.json
//   train     dataset + splits -> <out>/checkpoints/subset<S>_seed<N>.ckpt
//             and a JSONL epoch log under <out>/logs
//   ttt       checkpoint -> <out>/results/<method>_<split>_subset<S>_seed<N>.json,
//             per-tile predictions and per-batch traces
//   report    <out>/results/*.json -> <out>/report.csv and <out>/report.json
//   pipeline  all of the above
//
// The output directory is --out, else $TTTLAB_OUT_DIR, else ".". Existing
// outputs are only replaced with --force.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include <iosfwd>
#include <string>
#include <vector>

namespace tttlab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

inline constexpr const char* kOutDirEnv = "TTTLAB_OUT_DIR";

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tttlab

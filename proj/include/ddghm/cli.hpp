// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "ddghm/training.hpp"

namespace ddghm {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDivergence = 4;

struct PreprocessArgs {
  std::string input;
  std::string config;
  std::string output;
};

struct TrainArgs {
  std::string data;
  std::string config;
  std::string outdir;
  std::uint64_t seed = 42;
};

struct EvaluateArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";  // train | val | test | all
  std::string output;          // optional metrics JSON path
};

struct GradcheckArgs {
  double eps = 1e-5;
  std::uint64_t seed = 7;
};

int cmd_preprocess(const PreprocessArgs& args, std::ostream& out, std::ostream& err);
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);

/// Parse + validate a JSON config file.
TrainConfig load_config_file(const std::string& path);

/// The seeded two-user toy instance used by the gradient check command.
struct GradcheckSetup {
  std::vector<SequenceTriple> triples;
  TrainConfig cfg;
};
GradcheckSetup gradcheck_setup();

/// Max relative finite-difference error of the full hybrid loss on the toy
/// instance (stochastic choices frozen up front).
double run_gradcheck(double eps, std::uint64_t seed, double* elapsed_seconds = nullptr);

/// FNV-1a 64-bit digest of a file's bytes, as fixed-width hex.
std::string fnv1a64_file(const std::string& path);

std::string iso8601_utc_now();

}  // namespace ddghm

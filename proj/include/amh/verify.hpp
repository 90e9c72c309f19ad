#pragma once

// Seeded oracle suites shared by the CLI `verify` subcommand and the test binaries.

#include "amh/agcrf.hpp"
#include "amh/random.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace amh {

struct SuiteResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t failures = 0;
  double worst = 0;      // largest error seen, in the suite's own metric
  double tolerance = 0;
  std::string detail;    // first failure, if any
  bool pass() const { return failures == 0 && instances > 0; }
};

struct CrfInstance {
  ScaleSet features;
  AgCrfParams params;
  MeanFieldState state;  // random hidden state with a random gate map per pair
};

/// Random AG-CRF instance: S scales in [2, max_scales], sides up to max_side, channels up to
/// max_channels, kernel 1 or 3, kernels uniform in +-kernel_scale.
CrfInstance random_crf_instance(Rng& rng, std::size_t max_scales = 3, Index max_side = 8, Index max_channels = 4,
                                double kernel_scale = 1.0);

std::vector<std::string> suite_names();

/// Runs one suite ("all" is not accepted here). Each instance's report goes to `jsonl` when given.
SuiteResult run_suite(const std::string& name, std::uint64_t seed = 1, std::ostream* jsonl = nullptr);

/// "all" or a single suite name.
std::vector<SuiteResult> run_suites(const std::string& which, std::uint64_t seed = 1, std::ostream* jsonl = nullptr);

std::string format_table(const std::vector<SuiteResult>& results);

}  // namespace amh

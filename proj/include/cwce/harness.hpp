#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cwce/io.hpp"

namespace cwce {

// Runs one recipe end to end (simulate -> fit -> estimate -> emit CSV data)
// and writes a manifest recording the seed, a parameter hash, and a sha256
// checksum per artifact. Rerunning the same config reproduces identical
// checksums. Returns the written file names (manifest last).
std::vector<std::string> run_experiment(const ExperimentConfig& config,
                                        const std::filesystem::path& out_dir);

// Cross-module oracle suite (closed-form CWCE vs Monte-Carlo) over randomized
// cases; returns the number of tolerance breaches (0 = pass). Prints one line
// per kind to stdout when verbose.
int run_validation(std::uint64_t seed, int cases_per_kind, int mc_draws, bool verbose);

// Derived sub-seed for a named stage of an experiment (documented scheme:
// SplitMix64 chain over the stage index).
std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage);

}  // namespace cwce

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vetcode/corpus.hpp"

namespace vetcode {

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;

  std::array<double, 3> as_array() const { return {train, validation, test}; }
};

// Throws Error(invalid_argument) unless all fractions are >= 0 and sum to 1
// within 1e-9.
void validate_fractions(const SplitFractions& fractions);

struct SplitPlan {
  SplitFractions fractions;
  std::uint64_t seed = 0;
  std::map<std::string, SplitTag> assignment;

  std::vector<std::string> ids(SplitTag tag) const;
  std::size_t count(SplitTag tag) const;

  friend bool operator==(const SplitPlan& a, const SplitPlan& b) {
    return a.assignment == b.assignment;
  }
};

// Iterative stratification. Labels are processed rarest-remaining first; each
// record of the current label goes to the split with the largest remaining
// demand for that label, ties broken by remaining capacity and then by a
// seeded Lcg64 draw. Split sizes are fixed up front by largest-remainder
// rounding, and a split whose size target is met accepts no more records.
// A final pass swaps records between splits while that brings per-label
// counts closer to fraction * support; swaps never change split sizes.
SplitPlan stratified_split(const Corpus& corpus, const SplitFractions& fractions,
                           std::uint64_t seed);

// Stratified subsample of the plan's train split with exactly
// round(fraction * |train|) records. fraction must lie in (0, 1].
std::set<std::string> subset_training(const Corpus& corpus, const SplitPlan& plan,
                                      double fraction, std::uint64_t seed);

// Generic engine behind both operations: assigns each of the given record
// indices to one of `targets.size()` bins. Exposed for tests.
std::vector<std::size_t> iterative_stratify(const Corpus& corpus,
                                            const std::vector<std::size_t>& records,
                                            const std::vector<double>& fractions,
                                            std::uint64_t seed);

// JSONL of {"record_id":..., "split":...} in record_id order.
void write_split_plan(std::ostream& out, const SplitPlan& plan);
SplitPlan read_split_plan(std::istream& in);
void save_split_plan(const std::filesystem::path& path, const SplitPlan& plan);
SplitPlan load_split_plan(const std::filesystem::path& path);

}  // namespace vetcode

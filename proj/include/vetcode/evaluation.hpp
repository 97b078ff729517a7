#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "vetcode/corpus.hpp"

namespace vetcode {

struct ClassMetrics {
  std::string code;
  std::size_t support = 0;  // n_i: occurrences in the evaluated targets
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Weighted metrics and exact match are stored as percentages at full
// precision; rounding to two decimals happens only when formatting.
struct EvalReport {
  std::vector<ClassMetrics> classes;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double exact_match = 0.0;
  std::size_t records = 0;
};

// Per-class confusion counts over the inventory; zero denominators give 0.
// Weights are class supports among the targets. Throws Error(shape) when the
// sequences differ in length and Error(validation) for codes outside the
// inventory.
EvalReport evaluate(std::span<const CodeSet> targets, std::span<const CodeSet> predictions,
                    std::span<const std::string> inventory);

// Percentage of records whose predicted set equals the target set.
double exact_match(std::span<const CodeSet> targets, std::span<const CodeSet> predictions);

struct ConfidenceInterval {
  double mean = 0.0;
  double half_width = 0.0;
  std::size_t runs = 0;
  double t_quantile = 0.0;
};

// mean +/- t_{1-(1-level)/2, n-1} * s / sqrt(n) with the n-1 sample deviation.
ConfidenceInterval confidence_interval(std::span<const double> values, double level = 0.95);

// Two-sided Student-t quantile.
double student_t_quantile(double probability, double degrees_of_freedom);

std::string format_percent(double value);  // "%.2f"
// The value format_percent prints, as a double.
double round2(double value);

void write_report_json(std::ostream& out, const EvalReport& report);
// code,support,tp,fp,fn,precision,recall,f1
void write_class_csv(std::ostream& out, const EvalReport& report);
void save_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                 const EvalReport& report);

}  // namespace vetcode

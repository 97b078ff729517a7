#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "vetcode/corpus.hpp"
#include "vetcode/evaluation.hpp"
#include "vetcode/pipeline.hpp"
#include "vetcode/splitter.hpp"
#include "vetcode/terminology.hpp"

namespace vetcode {

// Empty cells are written as NA.
using Cell = std::variant<std::monostate, double, std::int64_t, std::string>;

class AnalysisTable {
 public:
  explicit AnalysisTable(std::vector<std::string> columns);

  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<std::vector<Cell>>& rows() const { return rows_; }
  void add_row(std::vector<Cell> row);
  std::size_t column_index(std::string_view name) const;
  const Cell& at(std::size_t row, std::string_view column) const;

  // Config hash, seeds, corpus fingerprint and study-specific facts.
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<Cell>> rows_;
};

// Reals use six decimals so that reruns produce identical bytes.
void write_csv(std::ostream& out, const AnalysisTable& table);
// Writes <path> and <path>.json with the provenance.
void save_table(const std::filesystem::path& csv_path, const AnalysisTable& table);

// Pearson correlation; nullopt for fewer than two points or zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

// FNV-1a of the corpus's JSONL serialization, as 16 hex digits.
std::string corpus_fingerprint(const Corpus& corpus);

struct FrequencyStudy {
  AnalysisTable table{{"code", "ln_frequency", "class_f1"}};
  std::optional<double> r;
};

// Rows for classes with test support > 0; frequency is counted over the full
// labeled corpus.
FrequencyStudy frequency_study(const Corpus& full_corpus, const EvalReport& report);

struct DepthStudy {
  AnalysisTable table{{"depth", "mean_class_f1", "ci_half_width", "codes"}};
  std::size_t represented = 0;
  std::size_t excluded = 0;  // unreachable or unknown to the terminology
  std::optional<double> r;   // depth vs class F1 over represented codes
};

DepthStudy depth_study(const ConceptGraph& graph, const EvalReport& report);

// Category-level weighted metrics over member classes with support > 0.
// Codes unknown to the terminology count as "Other".
AnalysisTable category_study(const ConceptGraph& graph, const EvalReport& report);

// Called with the partial table after each completed row.
using TableCheckpoint = std::function<void(const AnalysisTable&)>;

AnalysisTable volume_sweep(const Corpus& corpus, const SplitPlan& plan,
                           std::span<const double> fractions, const PipelineConfig& config,
                           std::uint64_t seed, const TableCheckpoint& checkpoint = {});

AnalysisTable field_study(const Corpus& corpus, const SplitPlan& plan,
                          std::span<const std::vector<Section>> permutations,
                          const PipelineConfig& config, std::uint64_t seed,
                          const TableCheckpoint& checkpoint = {});

AnalysisTable frozen_comparison(const Corpus& corpus, const SplitPlan& plan,
                                const PipelineConfig& config, std::uint64_t seed,
                                const TableCheckpoint& checkpoint = {});

std::string fields_label(std::span<const Section> fields);  // "diagnosis+assessment"

}  // namespace vetcode

#include "vetcode/analysis.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "vetcode/error.hpp"
#include "vetcode/rng.hpp"

namespace vetcode {

AnalysisTable::AnalysisTable(std::vector<std::string> columns) : columns_(std::move(columns)) {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (columns_[i] == columns_[j]) {
        throw Error(ErrorKind::duplicate, "duplicate column '" + columns_[i] + "'");
      }
    }
  }
}

void AnalysisTable::add_row(std::vector<Cell> row) {
  if (row.size() != columns_.size()) {
    throw Error(ErrorKind::shape, fmt::format("row has {} cells, table has {} columns", row.size(),
                                              columns_.size()));
  }
  rows_.push_back(std::move(row));
}

std::size_t AnalysisTable::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i] == name) return i;
  }
  throw Error(ErrorKind::not_found, "no column '" + std::string(name) + "'");
}

const Cell& AnalysisTable::at(std::size_t row, std::string_view column) const {
  return rows_.at(row).at(column_index(column));
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct CellWriter {
  std::string operator()(std::monostate) const { return "NA"; }
  std::string operator()(double v) const {
    if (!std::isfinite(v)) return "NA";
    return fmt::format("{:.6f}", v);
  }
  std::string operator()(std::int64_t v) const { return std::to_string(v); }
  std::string operator()(const std::string& v) const { return csv_field(v); }
};

}  // namespace

void write_csv(std::ostream& out, const AnalysisTable& table) {
  for (std::size_t i = 0; i < table.columns().size(); ++i) {
    out << (i ? "," : "") << csv_field(table.columns()[i]);
  }
  out << '\n';
  for (const auto& row : table.rows()) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out << (i ? "," : "") << std::visit(CellWriter{}, row[i]);
    }
    out << '\n';
  }
}

void save_table(const std::filesystem::path& csv_path, const AnalysisTable& table) {
  {
    std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + csv_path.string());
    write_csv(out, table);
  }
  auto sidecar = csv_path;
  sidecar += ".json";
  std::ofstream out(sidecar, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + sidecar.string());
  out << table.provenance.dump(2) << '\n';
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::shape, "pearson: length mismatch");
  const auto n = x.size();
  if (n < 2) return std::nullopt;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::string corpus_fingerprint(const Corpus& corpus) {
  std::ostringstream out;
  write_corpus(out, corpus);
  return fmt::format("{:016x}", fnv1a64(out.str()));
}

FrequencyStudy frequency_study(const Corpus& full_corpus, const EvalReport& report) {
  std::map<std::string, std::size_t> frequency;
  for (const auto& r : full_corpus.records()) {
    for (const auto& c : r.codes) ++frequency[c];
  }
  FrequencyStudy study;
  std::vector<double> x, y;
  for (const auto& m : report.classes) {
    if (m.support == 0) continue;
    const auto it = frequency.find(m.code);
    if (it == frequency.end()) continue;
    const double lf = std::log(static_cast<double>(it->second));
    study.table.add_row({m.code, lf, m.f1});
    x.push_back(lf);
    y.push_back(m.f1);
  }
  study.r = pearson(x, y);
  study.table.provenance["pearson_r"] =
      study.r ? nlohmann::ordered_json(*study.r) : nlohmann::ordered_json(nullptr);
  return study;
}

DepthStudy depth_study(const ConceptGraph& graph, const EvalReport& report) {
  std::map<int, std::vector<double>> by_depth;
  DepthStudy study;
  std::vector<double> x, y;
  for (const auto& m : report.classes) {
    if (m.support == 0) continue;
    const auto d = graph.contains(m.code) ? graph.depth(m.code) : std::nullopt;
    if (!d) {
      ++study.excluded;
      continue;
    }
    ++study.represented;
    by_depth[*d].push_back(m.f1);
    x.push_back(static_cast<double>(*d));
    y.push_back(m.f1);
  }
  for (const auto& [depth, values] : by_depth) {
    double mean = 0;
    for (const double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    Cell half = std::monostate{};
    if (values.size() >= 2) half = confidence_interval(values).half_width;
    study.table.add_row({static_cast<std::int64_t>(depth), mean, half,
                         static_cast<std::int64_t>(values.size())});
  }
  study.r = pearson(x, y);
  study.table.provenance["represented_codes"] = study.represented;
  study.table.provenance["excluded_codes"] = study.excluded;
  study.table.provenance["pearson_r"] =
      study.r ? nlohmann::ordered_json(*study.r) : nlohmann::ordered_json(nullptr);
  return study;
}

AnalysisTable category_study(const ConceptGraph& graph, const EvalReport& report) {
  struct Sums {
    std::size_t classes = 0;
    double support = 0, precision = 0, recall = 0, f1 = 0;
  };
  std::map<std::string, Sums> sums;
  for (const auto& m : report.classes) {
    if (m.support == 0) continue;
    const auto category =
        graph.contains(m.code) ? graph.categorize(m.code) : std::string(kOtherCategory);
    auto& s = sums[category];
    const double n = static_cast<double>(m.support);
    ++s.classes;
    s.support += n;
    s.precision += n * m.precision;
    s.recall += n * m.recall;
    s.f1 += n * m.f1;
  }
  AnalysisTable table({"category", "classes", "support", "precision", "recall", "f1"});
  std::vector<std::string> order(kCategoryPriority.begin(), kCategoryPriority.end());
  order.emplace_back(kOtherCategory);
  for (const auto& category : order) {
    const auto it = sums.find(category);
    if (it == sums.end()) continue;
    const auto& s = it->second;
    table.add_row({category, static_cast<std::int64_t>(s.classes),
                   static_cast<std::int64_t>(s.support), 100.0 * s.precision / s.support,
                   100.0 * s.recall / s.support, 100.0 * s.f1 / s.support});
  }
  return table;
}

namespace {

const std::vector<std::string> kRunColumns = {"f1", "precision", "recall", "exact_match"};

std::vector<std::string> with_run_columns(std::vector<std::string> leading,
                                          std::vector<std::string> trailing = {}) {
  leading.insert(leading.end(), kRunColumns.begin(), kRunColumns.end());
  leading.insert(leading.end(), trailing.begin(), trailing.end());
  return leading;
}

void append_metrics(std::vector<Cell>& row, const EvalReport& report) {
  row.emplace_back(report.f1);
  row.emplace_back(report.precision);
  row.emplace_back(report.recall);
  row.emplace_back(report.exact_match);
}

void base_provenance(AnalysisTable& table, const Corpus& corpus, std::uint64_t seed) {
  table.provenance["corpus"] = corpus_fingerprint(corpus);
  table.provenance["seed"] = seed;
}

}  // namespace

AnalysisTable volume_sweep(const Corpus& corpus, const SplitPlan& plan,
                           std::span<const double> fractions, const PipelineConfig& config,
                           std::uint64_t seed, const TableCheckpoint& checkpoint) {
  for (const double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) {
      throw Error(ErrorKind::invalid_argument, "volume fractions must lie in (0, 1]");
    }
  }
  AnalysisTable table(with_run_columns({"fraction", "train_records"}));
  base_provenance(table, corpus, seed);
  const auto subset_seed = derive_seed(seed, "volume.subset");
  table.provenance["subset_seed"] = subset_seed;
  for (const double f : fractions) {
    const auto subset = subset_training(corpus, plan, f, subset_seed);
    const auto result = run_pipeline(corpus, plan, config, seed, &subset);
    std::vector<Cell> row{f, static_cast<std::int64_t>(subset.size())};
    append_metrics(row, result.test.report);
    table.add_row(std::move(row));
    if (checkpoint) checkpoint(table);
  }
  return table;
}

std::string fields_label(std::span<const Section> fields) {
  std::string out;
  for (const auto f : fields) {
    if (!out.empty()) out += '+';
    out += to_string(f);
  }
  return out;
}

AnalysisTable field_study(const Corpus& corpus, const SplitPlan& plan,
                          std::span<const std::vector<Section>> permutations,
                          const PipelineConfig& config, std::uint64_t seed,
                          const TableCheckpoint& checkpoint) {
  AnalysisTable table(with_run_columns({"fields"}, {"mean_tokens", "truncation_rate"}));
  base_provenance(table, corpus, seed);
  for (const auto& fields : permutations) {
    auto c = config;
    c.input.fields = fields;
    const auto result = run_pipeline(corpus, plan, c, seed);
    std::vector<Cell> row{fields_label(fields)};
    append_metrics(row, result.test.report);
    row.emplace_back(result.input_stats.mean_tokens);
    row.emplace_back(result.input_stats.truncation_rate);
    table.add_row(std::move(row));
    if (checkpoint) checkpoint(table);
  }
  return table;
}

AnalysisTable frozen_comparison(const Corpus& corpus, const SplitPlan& plan,
                                const PipelineConfig& config, std::uint64_t seed,
                                const TableCheckpoint& checkpoint) {
  AnalysisTable table(with_run_columns({"mode"}));
  base_provenance(table, corpus, seed);
  for (const bool frozen : {false, true}) {
    auto c = config;
    c.model.backbone_frozen = frozen;
    const auto result = run_pipeline(corpus, plan, c, seed);
    std::vector<Cell> row{std::string(frozen ? "frozen" : "fine_tuned")};
    append_metrics(row, result.test.report);
    table.add_row(std::move(row));
    if (checkpoint) checkpoint(table);
  }
  return table;
}

}  // namespace vetcode

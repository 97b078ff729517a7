#include "vetcode/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "vetcode/error.hpp"

namespace vetcode {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

EvalReport evaluate(std::span<const CodeSet> targets, std::span<const CodeSet> predictions,
                    std::span<const std::string> inventory) {
  if (targets.size() != predictions.size()) {
    throw Error(ErrorKind::shape, "targets and predictions differ in record count (" +
                                      std::to_string(targets.size()) + " vs " +
                                      std::to_string(predictions.size()) + ")");
  }
  std::map<std::string_view, std::size_t> index;
  EvalReport report;
  report.records = targets.size();
  report.classes.resize(inventory.size());
  for (std::size_t i = 0; i < inventory.size(); ++i) {
    index.emplace(inventory[i], i);
    report.classes[i].code = inventory[i];
  }
  auto lookup = [&](const std::string& code) -> ClassMetrics& {
    const auto it = index.find(code);
    if (it == index.end()) {
      throw Error(ErrorKind::validation, "code '" + code + "' is not in the inventory");
    }
    return report.classes[it->second];
  };
  for (std::size_t j = 0; j < targets.size(); ++j) {
    for (const auto& code : targets[j]) {
      auto& m = lookup(code);
      ++m.support;
      if (predictions[j].contains(code)) {
        ++m.tp;
      } else {
        ++m.fn;
      }
    }
    for (const auto& code : predictions[j]) {
      auto& m = lookup(code);
      if (!targets[j].contains(code)) ++m.fp;
    }
  }
  double weight = 0.0;
  double p = 0.0;
  double r = 0.0;
  double f = 0.0;
  for (auto& m : report.classes) {
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    const auto n = static_cast<double>(m.support);
    weight += n;
    p += n * m.precision;
    r += n * m.recall;
    f += n * m.f1;
  }
  if (weight > 0.0) {
    report.precision = 100.0 * p / weight;
    report.recall = 100.0 * r / weight;
    report.f1 = 100.0 * f / weight;
  }
  report.exact_match = exact_match(targets, predictions);
  return report;
}

double exact_match(std::span<const CodeSet> targets, std::span<const CodeSet> predictions) {
  if (targets.size() != predictions.size()) {
    throw Error(ErrorKind::shape, "targets and predictions differ in record count");
  }
  if (targets.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    if (targets[j] == predictions[j]) ++hits;
  }
  return 100.0 * ratio(hits, targets.size());
}

double student_t_quantile(double probability, double degrees_of_freedom) {
  const boost::math::students_t dist(degrees_of_freedom);
  return boost::math::quantile(dist, probability);
}

ConfidenceInterval confidence_interval(std::span<const double> values, double level) {
  if (values.size() < 2) {
    throw Error(ErrorKind::invalid_argument, "a confidence interval needs at least two values");
  }
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "confidence level must lie in (0, 1)");
  }
  const auto n = static_cast<double>(values.size());
  double mean = 0.0;
  for (const double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  ConfidenceInterval ci;
  ci.mean = mean;
  ci.runs = values.size();
  ci.t_quantile = student_t_quantile(1.0 - (1.0 - level) / 2.0, n - 1.0);
  ci.half_width = ci.t_quantile * sd / std::sqrt(n);
  return ci;
}

std::string format_percent(double value) { return fmt::format("{:.2f}", value); }

double round2(double value) { return std::stod(format_percent(value)); }

void write_report_json(std::ostream& out, const EvalReport& report) {
  nlohmann::ordered_json j;
  j["records"] = report.records;
  j["classes"] = report.classes.size();
  j["weighted_precision"] = round2(report.precision);
  j["weighted_recall"] = round2(report.recall);
  j["weighted_f1"] = round2(report.f1);
  j["exact_match"] = round2(report.exact_match);
  out << j.dump(2) << '\n';
}

void write_class_csv(std::ostream& out, const EvalReport& report) {
  out << "code,support,tp,fp,fn,precision,recall,f1\n";
  for (const auto& m : report.classes) {
    out << fmt::format("{},{},{},{},{},{:.6f},{:.6f},{:.6f}\n", m.code, m.support, m.tp, m.fp,
                       m.fn, m.precision, m.recall, m.f1);
  }
}

void save_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                 const EvalReport& report) {
  std::ofstream json(json_path, std::ios::binary | std::ios::trunc);
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!json || !csv) throw Error(ErrorKind::io, "cannot write evaluation report");
  write_report_json(json, report);
  write_class_csv(csv, report);
}

}  // namespace vetcode

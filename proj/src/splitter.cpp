#include "vetcode/splitter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include <nlohmann/json.hpp>

#include "vetcode/error.hpp"
#include "vetcode/rng.hpp"

namespace vetcode {

namespace {

constexpr double kTieTolerance = 1e-9;

constexpr std::array<SplitTag, 3> kTags = {SplitTag::train, SplitTag::validation,
                                           SplitTag::test};

// Largest-remainder rounding of fractions * n; remainder ties go to the
// lower bin index.
std::vector<std::int64_t> integer_targets(const std::vector<double>& fractions, std::size_t n) {
  std::vector<std::int64_t> target(fractions.size());
  std::vector<double> remainder(fractions.size());
  std::int64_t assigned = 0;
  for (std::size_t s = 0; s < fractions.size(); ++s) {
    const double exact = fractions[s] * static_cast<double>(n);
    target[s] = static_cast<std::int64_t>(std::floor(exact + kTieTolerance));
    remainder[s] = exact - static_cast<double>(target[s]);
    assigned += target[s];
  }
  std::vector<std::size_t> order(fractions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return remainder[a] > remainder[b] + kTieTolerance;
  });
  for (std::size_t i = 0; assigned < static_cast<std::int64_t>(n); ++i, ++assigned) {
    ++target[order[i % order.size()]];
  }
  return target;
}

// Change in sum of squared deviations when one unit of a label with
// deviations (from, to) moves between bins.
double move_cost(double from, double to) { return 2.0 * (to - from) + 2.0; }

// Greedy assignment leaves frequent labels off target, because most of their
// records are placed while rarer labels are processed. Pairs of records in
// different bins are swapped while that lowers the summed squared deviation
// of per-label bin counts from fraction * support. Swaps keep bin sizes.
void refine_by_swaps(const std::vector<std::vector<std::size_t>>& record_labels,
                     const std::vector<double>& fractions, const std::vector<std::size_t>& support,
                     std::vector<std::size_t>& bin_of) {
  constexpr int kMaxPasses = 200;
  const std::size_t bins = fractions.size();
  const std::size_t labels = support.size();
  const std::size_t n = bin_of.size();
  std::vector<std::vector<double>> dev(bins, std::vector<double>(labels));
  for (std::size_t s = 0; s < bins; ++s) {
    for (std::size_t l = 0; l < labels; ++l) dev[s][l] = -fractions[s] * static_cast<double>(support[l]);
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (const auto l : record_labels[r]) dev[bin_of[r]][l] += 1.0;
  }

  std::vector<std::size_t> only_a, only_b;
  auto swap_delta = [&](std::size_t a, std::size_t b) {
    only_a.clear();
    only_b.clear();
    const auto& la = record_labels[a];
    const auto& lb = record_labels[b];
    std::set_difference(la.begin(), la.end(), lb.begin(), lb.end(), std::back_inserter(only_a));
    std::set_difference(lb.begin(), lb.end(), la.begin(), la.end(), std::back_inserter(only_b));
    const auto sa = bin_of[a];
    const auto sb = bin_of[b];
    double delta = 0.0;
    for (const auto l : only_a) delta += move_cost(dev[sa][l], dev[sb][l]);
    for (const auto l : only_b) delta += move_cost(dev[sb][l], dev[sa][l]);
    return delta;
  };

  for (int pass = 0; pass < kMaxPasses; ++pass) {
    bool improved = false;
    for (std::size_t a = 0; a < n; ++a) {
      double best = -kTieTolerance;
      std::size_t best_b = n;
      for (std::size_t b = 0; b < n; ++b) {
        if (bin_of[b] == bin_of[a] || record_labels[a] == record_labels[b]) continue;
        const double delta = swap_delta(a, b);
        if (delta < best) {
          best = delta;
          best_b = b;
        }
      }
      if (best_b == n) continue;
      const auto sa = bin_of[a];
      const auto sb = bin_of[best_b];
      for (const auto l : record_labels[a]) {
        dev[sa][l] -= 1.0;
        dev[sb][l] += 1.0;
      }
      for (const auto l : record_labels[best_b]) {
        dev[sb][l] -= 1.0;
        dev[sa][l] += 1.0;
      }
      std::swap(bin_of[a], bin_of[best_b]);
      improved = true;
    }
    if (!improved) break;
  }
}

}  // namespace

void validate_fractions(const SplitFractions& fractions) {
  const auto f = fractions.as_array();
  double total = 0.0;
  for (const double v : f) {
    if (!(v >= 0.0)) throw Error(ErrorKind::invalid_argument, "split fractions must be >= 0");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorKind::invalid_argument, "split fractions must sum to 1");
  }
}

std::vector<std::string> SplitPlan::ids(SplitTag tag) const {
  std::vector<std::string> out;
  for (const auto& [id, t] : assignment) {
    if (t == tag) out.push_back(id);
  }
  return out;
}

std::size_t SplitPlan::count(SplitTag tag) const {
  return static_cast<std::size_t>(std::count_if(
      assignment.begin(), assignment.end(), [&](const auto& kv) { return kv.second == tag; }));
}

std::vector<std::size_t> iterative_stratify(const Corpus& corpus,
                                            const std::vector<std::size_t>& records,
                                            const std::vector<double>& fractions,
                                            std::uint64_t seed) {
  const std::size_t bins = fractions.size();
  const std::size_t labels = corpus.num_classes();
  Lcg64 lcg(seed);

  std::vector<std::vector<std::size_t>> record_labels(records.size());
  std::vector<std::vector<std::size_t>> label_records(labels);
  std::vector<std::size_t> support(labels, 0);
  for (std::size_t r = 0; r < records.size(); ++r) {
    record_labels[r] = corpus.code_indices(corpus.at(records[r]));
    for (const auto l : record_labels[r]) {
      label_records[l].push_back(r);
      ++support[l];
    }
  }

  std::vector<std::int64_t> capacity = integer_targets(fractions, records.size());
  std::vector<std::vector<double>> demand(bins, std::vector<double>(labels));
  for (std::size_t s = 0; s < bins; ++s) {
    for (std::size_t l = 0; l < labels; ++l) {
      demand[s][l] = fractions[s] * static_cast<double>(support[l]);
    }
  }
  std::vector<std::size_t> remaining = support;
  constexpr auto kUnassigned = static_cast<std::size_t>(-1);
  std::vector<std::size_t> bin_of(records.size(), kUnassigned);

  auto pick_bin = [&](std::optional<std::size_t> label) {
    std::vector<std::size_t> tied;
    for (std::size_t s = 0; s < bins; ++s) {
      if (capacity[s] <= 0) continue;
      if (tied.empty()) {
        tied.push_back(s);
        continue;
      }
      const auto best = tied.front();
      double diff = 0.0;
      if (label) diff = demand[s][*label] - demand[best][*label];
      if (std::abs(diff) <= kTieTolerance) diff = static_cast<double>(capacity[s] - capacity[best]);
      if (diff > 0) {
        tied.assign(1, s);
      } else if (diff == 0) {
        tied.push_back(s);
      }
    }
    if (tied.size() == 1) return tied.front();
    return tied[lcg.choose(tied.size())];
  };

  auto assign = [&](std::size_t r, std::size_t s) {
    bin_of[r] = s;
    --capacity[s];
    for (const auto l : record_labels[r]) {
      demand[s][l] -= 1.0;
      --remaining[l];
    }
  };

  while (true) {
    std::optional<std::size_t> label;
    for (std::size_t l = 0; l < labels; ++l) {
      if (remaining[l] > 0 && (!label || remaining[l] < remaining[*label])) label = l;
    }
    if (!label) break;
    for (const auto r : label_records[*label]) {
      if (bin_of[r] == kUnassigned) assign(r, pick_bin(label));
    }
  }
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (bin_of[r] == kUnassigned) assign(r, pick_bin(std::nullopt));
  }
  refine_by_swaps(record_labels, fractions, support, bin_of);
  return bin_of;
}

SplitPlan stratified_split(const Corpus& corpus, const SplitFractions& fractions,
                           std::uint64_t seed) {
  validate_fractions(fractions);
  if (corpus.empty()) throw Error(ErrorKind::invalid_argument, "cannot split an empty corpus");
  std::vector<std::size_t> records(corpus.size());
  std::iota(records.begin(), records.end(), 0);
  const auto f = fractions.as_array();
  const auto bins = iterative_stratify(corpus, records, {f.begin(), f.end()}, seed);
  SplitPlan plan;
  plan.fractions = fractions;
  plan.seed = seed;
  for (std::size_t r = 0; r < records.size(); ++r) {
    plan.assignment.emplace(corpus.at(r).record_id, kTags[bins[r]]);
  }
  return plan;
}

std::set<std::string> subset_training(const Corpus& corpus, const SplitPlan& plan,
                                      double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorKind::invalid_argument, "training fraction must lie in (0, 1]");
  }
  std::vector<std::size_t> train;
  for (std::size_t r = 0; r < corpus.size(); ++r) {
    const auto it = plan.assignment.find(corpus.at(r).record_id);
    if (it != plan.assignment.end() && it->second == SplitTag::train) train.push_back(r);
  }
  if (train.empty()) throw Error(ErrorKind::invalid_argument, "split plan has no train records");
  std::set<std::string> keep;
  if (fraction == 1.0) {
    for (const auto r : train) keep.insert(corpus.at(r).record_id);
    return keep;
  }
  const auto bins = iterative_stratify(corpus, train, {fraction, 1.0 - fraction}, seed);
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (bins[i] == 0) keep.insert(corpus.at(train[i]).record_id);
  }
  return keep;
}

void write_split_plan(std::ostream& out, const SplitPlan& plan) {
  for (const auto& [id, tag] : plan.assignment) {
    nlohmann::ordered_json j;
    j["record_id"] = id;
    j["split"] = std::string(to_string(tag));
    out << j.dump() << '\n';
  }
}

SplitPlan read_split_plan(std::istream& in) {
  SplitPlan plan;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto id = j.at("record_id").get<std::string>();
      const auto tag = parse_split_tag(j.at("split").get<std::string>());
      if (!plan.assignment.emplace(id, tag).second) {
        throw Error(ErrorKind::duplicate, "duplicate record_id '" + id + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::parse, "split plan line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.kind(), "split plan line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return plan;
}

void save_split_plan(const std::filesystem::path& path, const SplitPlan& plan) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  write_split_plan(out, plan);
}

SplitPlan load_split_plan(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  return read_split_plan(in);
}

}  // namespace vetcode

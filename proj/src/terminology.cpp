#include "vetcode/terminology.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <fstream>
#include <sstream>

#include "vetcode/error.hpp"
#include "vetcode/rng.hpp"

namespace vetcode {

namespace {

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

int category_rank(std::string_view category) {
  for (std::size_t i = 0; i < kCategoryPriority.size(); ++i) {
    if (kCategoryPriority[i] == category) return static_cast<int>(i);
  }
  return -1;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) out.push_back(field);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

// Reads a TSV with a header line; returns data rows. Each row must have
// exactly `columns` fields.
std::vector<std::vector<std::string>> read_tsv(const std::filesystem::path& path,
                                               std::size_t columns) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorKind::parse, path.string() + ": missing header line");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != columns) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(line_no) +
                                        ": expected " + std::to_string(columns) +
                                        " tab-separated fields");
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  return out;
}

}  // namespace

ConceptGraph::ConceptGraph(std::vector<Concept> concepts, const std::vector<Edge>& is_a,
                           std::string root, std::map<std::string, std::string> inactive_map,
                           std::map<std::string, std::string> category_map)
    : concepts_(std::move(concepts)),
      root_(std::move(root)),
      inactive_map_(std::move(inactive_map)),
      category_map_(std::move(category_map)) {
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    if (!is_code_identifier(concepts_[i].code)) {
      throw Error(ErrorKind::validation, "invalid concept code '" + concepts_[i].code + "'");
    }
    if (!index_.emplace(concepts_[i].code, i).second) {
      throw Error(ErrorKind::duplicate, "duplicate concept '" + concepts_[i].code + "'");
    }
    lowered_terms_.push_back(lower_ascii(concepts_[i].term));
  }
  parents_.resize(concepts_.size());
  for (const auto& [child, parent] : is_a) {
    const auto c = index_.find(child);
    const auto p = index_.find(parent);
    if (c == index_.end() || p == index_.end()) {
      throw Error(ErrorKind::not_found, "is-a edge " + child + " -> " + parent +
                                            " references an unknown concept");
    }
    auto& ps = parents_[c->second];
    if (std::find(ps.begin(), ps.end(), p->second) == ps.end()) ps.push_back(p->second);
  }
  for (auto& ps : parents_) std::sort(ps.begin(), ps.end());

  if (!index_.contains(root_)) {
    throw Error(ErrorKind::not_found, "root concept '" + root_ + "' is not defined");
  }
  const auto root_idx = index_.at(root_);
  if (!parents_[root_idx].empty()) {
    throw Error(ErrorKind::validation, "root concept '" + root_ + "' has parents");
  }

  // Kahn's algorithm, parents before children. Depth is settled in the same
  // pass: a node's depth is one more than its shallowest reachable parent.
  const auto n = concepts_.size();
  std::vector<std::vector<std::size_t>> children(n);
  std::vector<std::size_t> pending(n);
  for (std::size_t c = 0; c < n; ++c) {
    pending[c] = parents_[c].size();
    for (const auto p : parents_[c]) children[p].push_back(c);
  }
  std::deque<std::size_t> ready;
  for (std::size_t c = 0; c < n; ++c) {
    if (pending[c] == 0) ready.push_back(c);
  }
  depth_.assign(n, -1);
  std::size_t processed = 0;
  while (!ready.empty()) {
    const auto node = ready.front();
    ready.pop_front();
    ++processed;
    if (node == root_idx) {
      depth_[node] = 0;
    } else {
      for (const auto p : parents_[node]) {
        if (depth_[p] >= 0 && (depth_[node] < 0 || depth_[p] + 1 < depth_[node])) {
          depth_[node] = depth_[p] + 1;
        }
      }
    }
    for (const auto c : children[node]) {
      if (--pending[c] == 0) ready.push_back(c);
    }
  }
  if (processed != n) {
    std::string members;
    for (std::size_t c = 0; c < n; ++c) {
      if (pending[c] > 0) {
        if (!members.empty()) members += ", ";
        members += concepts_[c].code;
      }
    }
    throw Error(ErrorKind::cycle, "is-a relation is cyclic; involved concepts: " + members);
  }

  for (const auto& [from, to] : inactive_map_) {
    if (!index_.contains(from) || !index_.contains(to)) {
      throw Error(ErrorKind::not_found,
                  "inactive mapping " + from + " -> " + to + " references an unknown concept");
    }
    if (concepts_[index_.at(from)].active) {
      throw Error(ErrorKind::validation, "inactive mapping source " + from + " is active");
    }
  }
  for (const auto& [code, category] : category_map_) {
    if (!index_.contains(code)) {
      throw Error(ErrorKind::not_found, "category mapping references unknown concept " + code);
    }
    if (category_rank(category) < 0) {
      throw Error(ErrorKind::validation, "unknown category '" + category + "' for " + code);
    }
  }
}

std::size_t ConceptGraph::index_of(std::string_view code) const {
  const auto it = index_.find(std::string(code));
  if (it == index_.end()) {
    throw Error(ErrorKind::not_found, "unknown concept '" + std::string(code) + "'");
  }
  return it->second;
}

bool ConceptGraph::contains(std::string_view code) const {
  return index_.contains(std::string(code));
}

const Concept& ConceptGraph::concept_of(std::string_view code) const {
  return concepts_[index_of(code)];
}

std::vector<std::string> ConceptGraph::parents(std::string_view code) const {
  std::vector<std::string> out;
  for (const auto p : parents_[index_of(code)]) out.push_back(concepts_[p].code);
  return out;
}

std::vector<ConceptGraph::Edge> ConceptGraph::edges() const {
  std::vector<Edge> out;
  for (std::size_t c = 0; c < concepts_.size(); ++c) {
    for (const auto p : parents_[c]) out.emplace_back(concepts_[c].code, concepts_[p].code);
  }
  return out;
}

std::optional<int> ConceptGraph::depth(std::string_view code) const {
  const int d = depth_[index_of(code)];
  if (d < 0) return std::nullopt;
  return d;
}

std::set<std::string> ConceptGraph::ancestors(std::string_view code) const {
  const auto start = index_of(code);
  std::vector<bool> seen(concepts_.size(), false);
  std::vector<std::size_t> stack(parents_[start].begin(), parents_[start].end());
  std::set<std::string> out;
  while (!stack.empty()) {
    const auto node = stack.back();
    stack.pop_back();
    if (seen[node]) continue;
    seen[node] = true;
    out.insert(concepts_[node].code);
    for (const auto p : parents_[node]) {
      if (!seen[p]) stack.push_back(p);
    }
  }
  return out;
}

CodeSet ConceptGraph::migrate(const CodeSet& codes) const {
  CodeSet out;
  for (const auto& code : codes) {
    std::vector<std::string> chain{code};
    std::string current = code;
    while (true) {
      const auto it = inactive_map_.find(current);
      if (it == inactive_map_.end()) break;
      current = it->second;
      if (std::find(chain.begin(), chain.end(), current) != chain.end()) {
        std::string listing;
        const auto from = std::find(chain.begin(), chain.end(), current);
        for (auto c = from; c != chain.end(); ++c) listing += *c + " -> ";
        throw Error(ErrorKind::cycle, "inactive-to-active mapping cycle: " + listing + current);
      }
      chain.push_back(current);
    }
    out.insert(current);
  }
  return out;
}

std::string ConceptGraph::categorize(std::string_view code) const {
  auto closure = ancestors(code);
  closure.insert(std::string(code));
  int best = -1;
  for (const auto& c : closure) {
    const auto it = category_map_.find(c);
    if (it == category_map_.end()) continue;
    const int rank = category_rank(it->second);
    if (best < 0 || rank < best) best = rank;
  }
  if (best < 0) return std::string(kOtherCategory);
  return std::string(kCategoryPriority[static_cast<std::size_t>(best)]);
}

std::vector<SearchHit> ConceptGraph::search(std::string_view query, std::size_t limit) const {
  if (query.empty() || limit == 0) return {};
  const auto needle = lower_ascii(query);
  struct Ranked {
    std::size_t position;
    std::size_t length;
    std::size_t index;
  };
  std::vector<Ranked> hits;
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    const auto pos = lowered_terms_[i].find(needle);
    if (pos != std::string::npos) hits.push_back({pos, lowered_terms_[i].size(), i});
  }
  std::sort(hits.begin(), hits.end(), [&](const Ranked& a, const Ranked& b) {
    if (a.position != b.position) return a.position < b.position;
    if (a.length != b.length) return a.length < b.length;
    return concepts_[a.index].code < concepts_[b.index].code;
  });
  if (hits.size() > limit) hits.resize(limit);
  std::vector<SearchHit> out;
  out.reserve(hits.size());
  for (const auto& h : hits) out.push_back({concepts_[h.index].code, concepts_[h.index].term});
  return out;
}

Corpus migrate_corpus(const Corpus& corpus, const ConceptGraph& graph) {
  std::vector<ClinicalRecord> records = corpus.records();
  for (auto& r : records) r.codes = graph.migrate(r.codes);
  return Corpus(std::move(records));
}

TerminologyPaths TerminologyPaths::in_directory(const std::filesystem::path& dir) {
  TerminologyPaths p;
  p.concepts = dir / "concepts.tsv";
  p.relationships = dir / "relationships.tsv";
  p.mapping = dir / "mapping.tsv";
  p.categories = dir / "categories.tsv";
  return p;
}

ConceptGraph load_terminology(const TerminologyPaths& paths) {
  std::vector<Concept> concepts;
  for (auto& row : read_tsv(paths.concepts, 3)) {
    if (row[2] != "0" && row[2] != "1") {
      throw Error(ErrorKind::parse, paths.concepts.string() + ": active flag must be 0 or 1");
    }
    concepts.push_back({std::move(row[0]), std::move(row[1]), row[2] == "1"});
  }
  std::vector<ConceptGraph::Edge> edges;
  for (auto& row : read_tsv(paths.relationships, 2)) {
    edges.emplace_back(std::move(row[0]), std::move(row[1]));
  }
  std::map<std::string, std::string> mapping;
  if (!paths.mapping.empty() && std::filesystem::exists(paths.mapping)) {
    for (auto& row : read_tsv(paths.mapping, 2)) mapping[row[0]] = row[1];
  }
  std::map<std::string, std::string> categories;
  if (!paths.categories.empty() && std::filesystem::exists(paths.categories)) {
    for (auto& row : read_tsv(paths.categories, 2)) categories[row[0]] = row[1];
  }
  return ConceptGraph(std::move(concepts), edges, paths.root, std::move(mapping),
                      std::move(categories));
}

void write_terminology(const ConceptGraph& graph, const TerminologyPaths& paths) {
  {
    auto out = open_out(paths.concepts);
    out << "code\tterm\tactive\n";
    for (const auto& c : graph.concepts()) {
      out << c.code << '\t' << c.term << '\t' << (c.active ? 1 : 0) << '\n';
    }
  }
  {
    auto out = open_out(paths.relationships);
    out << "child\tparent\n";
    for (const auto& [child, parent] : graph.edges()) out << child << '\t' << parent << '\n';
  }
  if (!paths.mapping.empty()) {
    auto out = open_out(paths.mapping);
    out << "inactive\tactive\n";
    for (const auto& [from, to] : graph.inactive_map()) out << from << '\t' << to << '\n';
  }
  if (!paths.categories.empty()) {
    auto out = open_out(paths.categories);
    out << "code\tcategory\n";
    for (const auto& [code, cat] : graph.category_map()) out << code << '\t' << cat << '\n';
  }
}

ConceptGraph generate_synthetic_terminology(const SyntheticCorpus& synthetic,
                                            std::uint64_t seed) {
  Rng rng(derive_seed(seed, "synthetic.terminology"));
  std::vector<Concept> concepts;
  std::vector<ConceptGraph::Edge> edges;
  std::map<std::string, std::string> inactive;
  std::map<std::string, std::string> categories;
  std::set<std::string> used;
  for (const auto& sc : synthetic.codes) used.insert(sc.code);

  const std::string root(kClinicalFindingCode);
  concepts.push_back({root, "Clinical finding", true});
  used.insert(root);
  auto fresh_code = [&] {
    while (true) {
      auto c = std::to_string(10000000 + rng.below(90000000));
      if (used.insert(c).second) return c;
    }
  };

  // Group nodes: one per category plus uncategorized groups, each with a
  // short chain of subgroups so codes can land at several depths.
  std::vector<std::pair<std::string, int>> anchors;  // code, depth
  anchors.emplace_back(root, 0);
  auto add_group = [&](const std::string& term, std::optional<std::string_view> category) {
    std::string parent = root;
    int depth = 0;
    const auto levels = 1 + rng.below(3);
    for (std::uint64_t level = 0; level < levels; ++level) {
      const auto code = fresh_code();
      concepts.push_back({code, level == 0 ? term : term + " subtype " + std::to_string(level),
                          true});
      edges.emplace_back(code, parent);
      ++depth;
      anchors.emplace_back(code, depth);
      if (level == 0 && category) categories[code] = std::string(*category);
      parent = code;
    }
  };
  for (const auto cat : kCategoryPriority) add_group(std::string(cat), cat);
  for (int g = 0; g < 4; ++g) add_group("General finding group " + std::to_string(g), std::nullopt);

  std::vector<std::string> active_codes;
  std::vector<std::string> inactive_codes;
  for (std::size_t k = 0; k < synthetic.codes.size(); ++k) {
    const auto& sc = synthetic.codes[k];
    std::string term = sc.templates.front();
    if (!term.empty()) term[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(term[0])));
    // Roughly 7% of codes are retired concepts outside the hierarchy.
    const bool retired = synthetic.codes.size() > 3 && rng.bernoulli(0.07);
    concepts.push_back({sc.code, term, !retired});
    if (retired) {
      inactive_codes.push_back(sc.code);
      continue;
    }
    active_codes.push_back(sc.code);
    const auto& anchor = anchors[1 + rng.below(anchors.size() - 1)];
    std::string parent = anchor.first;
    // Optional intermediate concept pushes the code one level deeper.
    if (rng.bernoulli(0.3)) {
      const auto mid = fresh_code();
      concepts.push_back({mid, term + " (finding group)", true});
      edges.emplace_back(mid, parent);
      parent = mid;
    }
    edges.emplace_back(sc.code, parent);
    if (rng.bernoulli(0.15)) {
      const auto& other = anchors[1 + rng.below(anchors.size() - 1)];
      if (other.first != anchor.first) edges.emplace_back(sc.code, other.first);
    }
  }
  if (!active_codes.empty()) {
    for (const auto& code : inactive_codes) {
      if (rng.bernoulli(0.7)) inactive[code] = active_codes[rng.below(active_codes.size())];
    }
  }
  return ConceptGraph(std::move(concepts), edges, root, std::move(inactive),
                      std::move(categories));
}

}  // namespace vetcode

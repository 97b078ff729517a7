#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vetcode/corpus.hpp"

namespace vetcode {

// DAMNIT-V disease categories in tie-breaking priority order. "Other" is the
// fallback and is never assigned through the category map.
inline constexpr std::array<std::string_view, 9> kCategoryPriority = {
    "Neoplasm and/or hamartoma",
    "Inflammatory disorder",
    "Traumatic or non-traumatic injury",
    "Degenerative disorder",
    "Disorder of cardiovascular system",
    "Metabolic disease",
    "Congenital disease",
    "Poisoning",
    "Nutritional disorder",
};
inline constexpr std::string_view kOtherCategory = "Other";

inline constexpr std::string_view kClinicalFindingCode = "404684003";

struct Concept {
  std::string code;
  std::string term;
  bool active = true;
};

struct SearchHit {
  std::string code;
  std::string term;

  friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

// Immutable SNOMED-style is-a DAG with inactive-to-active and category maps.
class ConceptGraph {
 public:
  using Edge = std::pair<std::string, std::string>;  // child, parent

  ConceptGraph() = default;
  // Validates endpoints, acyclicity, root, and both maps; throws Error.
  ConceptGraph(std::vector<Concept> concepts, const std::vector<Edge>& is_a,
               std::string root, std::map<std::string, std::string> inactive_map = {},
               std::map<std::string, std::string> category_map = {});

  bool contains(std::string_view code) const;
  const Concept& concept_of(std::string_view code) const;
  const std::string& root() const { return root_; }
  std::size_t size() const { return concepts_.size(); }
  const std::vector<Concept>& concepts() const { return concepts_; }
  std::vector<std::string> parents(std::string_view code) const;
  std::vector<Edge> edges() const;
  const std::map<std::string, std::string>& inactive_map() const { return inactive_map_; }
  const std::map<std::string, std::string>& category_map() const { return category_map_; }

  // Shortest is-a path length up to the root; nullopt when unreachable.
  std::optional<int> depth(std::string_view code) const;
  // Transitive is-a closure, excluding the code itself.
  std::set<std::string> ancestors(std::string_view code) const;
  // Replaces inactive codes by their active targets (to a fixed point).
  CodeSet migrate(const CodeSet& codes) const;
  // Highest-priority category among the code and its ancestors, else "Other".
  std::string categorize(std::string_view code) const;
  // Case-insensitive substring match on preferred terms, ranked by
  // (match position, term length, code).
  std::vector<SearchHit> search(std::string_view query, std::size_t limit) const;

 private:
  std::size_t index_of(std::string_view code) const;

  std::vector<Concept> concepts_;
  std::vector<std::string> lowered_terms_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<int> depth_;  // -1 = unreachable
  std::string root_;
  std::map<std::string, std::string> inactive_map_;
  std::map<std::string, std::string> category_map_;
};

// The corpus with every record's codes passed through graph.migrate.
Corpus migrate_corpus(const Corpus& corpus, const ConceptGraph& graph);

struct TerminologyPaths {
  std::filesystem::path concepts;
  std::filesystem::path relationships;
  std::filesystem::path mapping;     // optional; empty path = none
  std::filesystem::path categories;  // optional; empty path = none
  std::string root = std::string(kClinicalFindingCode);

  // Conventional file names inside one directory.
  static TerminologyPaths in_directory(const std::filesystem::path& dir);
};

// Tab-separated files with a required header line.
ConceptGraph load_terminology(const TerminologyPaths& paths);
void write_terminology(const ConceptGraph& graph, const TerminologyPaths& paths);

// A toy hierarchy over a synthetic corpus's codes: category groups under the
// root, codes at depths 1-6, a few multi-parent codes, and some inactive codes
// that sit outside the hierarchy with inactive-to-active mappings.
ConceptGraph generate_synthetic_terminology(const SyntheticCorpus& synthetic,
                                            std::uint64_t seed);

}  // namespace vetcode

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vetcode {

// Sections of a medical summary that may feed the classifier input.
enum class Section {
  diagnosis,
  assessment,
  presenting_complaint,
  history,
  physical_exam,
  procedures_treatments,
};

inline constexpr std::size_t kSectionCount = 6;
inline constexpr std::array<Section, kSectionCount> kAllSections = {
    Section::diagnosis,    Section::assessment,    Section::presenting_complaint,
    Section::history,      Section::physical_exam, Section::procedures_treatments};

std::string_view to_string(Section section);
// Throws Error(invalid_argument) naming the field when `name` is not a section.
Section parse_section(std::string_view name);
std::vector<Section> parse_sections(std::span<const std::string> names);

enum class SplitTag { train, validation, test };

std::string_view to_string(SplitTag tag);
SplitTag parse_split_tag(std::string_view name);

using CodeSet = std::set<std::string>;

struct ClinicalRecord {
  std::string record_id;
  std::array<std::string, kSectionCount> sections;
  CodeSet codes;
  std::optional<SplitTag> split;

  const std::string& section(Section s) const {
    return sections[static_cast<std::size_t>(s)];
  }
  std::string& section(Section s) { return sections[static_cast<std::size_t>(s)]; }

  friend bool operator==(const ClinicalRecord&, const ClinicalRecord&) = default;
};

bool is_code_identifier(std::string_view code);

// An ordered record collection plus the dense code inventory. The inventory
// is the lexicographically sorted union of all record codes.
class Corpus {
 public:
  Corpus() = default;
  // Validates ids and codes; throws Error(duplicate) on a repeated record_id.
  explicit Corpus(std::vector<ClinicalRecord> records);

  const std::vector<ClinicalRecord>& records() const { return records_; }
  const std::vector<std::string>& inventory() const { return inventory_; }
  std::size_t size() const { return records_.size(); }
  std::size_t num_classes() const { return inventory_.size(); }
  bool empty() const { return records_.empty(); }

  std::optional<std::size_t> code_index(std::string_view code) const;
  std::optional<std::size_t> record_index(std::string_view record_id) const;
  const ClinicalRecord& at(std::size_t i) const { return records_.at(i); }

  // Dense class indices of a record's codes, ascending.
  std::vector<std::size_t> code_indices(const ClinicalRecord& record) const;

 private:
  std::vector<ClinicalRecord> records_;
  std::vector<std::string> inventory_;
  std::map<std::string, std::size_t, std::less<>> code_index_;
  std::map<std::string, std::size_t, std::less<>> record_index_;
};

// Minimal normalization: XML entities and numeric character references are
// decoded, letters lowercased, whitespace runs collapsed and trimmed. Applied
// to a fixed point so that clean_text is idempotent.
std::string clean_text(std::string_view raw);

// Space-joins the nonempty named sections in order and cleans the result.
std::string build_input(const ClinicalRecord& record,
                        std::span<const Section> fields);
std::string build_input(const ClinicalRecord& record,
                        std::span<const std::string> field_names);

// JSONL record (de)serialization. One object per line.
ClinicalRecord record_from_json_line(std::string_view line);
std::string record_to_json_line(const ClinicalRecord& record);

Corpus read_corpus(std::istream& in);
Corpus load_corpus(const std::filesystem::path& path);
void write_corpus(std::ostream& out, const Corpus& corpus);
void export_corpus(const std::filesystem::path& path, const Corpus& corpus);

struct GeneratorConfig {
  std::int64_t records = 1000;
  std::int64_t codes = 50;
  double zipf_exponent = 1.2;
  double mean_codes_per_visit = 2.0;
  double noise_rate = 0.1;
  int assessment_min_words = 30;
  int assessment_max_words = 60;
  double assessment_mention_rate = 0.5;
};

// Per-code vocabulary of the synthetic generator. Surface forms are the
// 2-4 synonym templates; the first is the preferred term.
struct SyntheticCode {
  std::string code;
  std::vector<std::string> templates;
};

struct SyntheticCorpus {
  Corpus corpus;
  // Indexed by Zipf rank (0 = most frequent).
  std::vector<SyntheticCode> codes;
};

// Throws Error(config) for codes < 1, records < 0 or out-of-range rates.
SyntheticCorpus generate_synthetic(const GeneratorConfig& config,
                                   std::uint64_t seed);

// Zipf pmf over ranks 1..n (index 0 is rank 1).
std::vector<double> zipf_pmf(std::size_t n, double exponent);

}  // namespace vetcode

#include "vetcode/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vetcode/error.hpp"
#include "vetcode/rng.hpp"

namespace vetcode {

namespace {

constexpr std::array<std::string_view, kSectionCount> kSectionNames = {
    "diagnosis", "assessment",    "presenting_complaint",
    "history",   "physical_exam", "procedures_treatments"};

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Decodes the entity starting at text[0] == '&'. Returns the number of input
// bytes consumed, or 0 if the text does not start with a known entity.
std::size_t decode_entity(std::string_view text, std::string& out) {
  const auto semi = text.find(';');
  if (semi == std::string_view::npos || semi < 2 || semi > 10) return 0;
  const std::string_view body = text.substr(1, semi - 1);
  static constexpr std::array<std::pair<std::string_view, char>, 5> kNamed = {{
      {"amp", '&'}, {"lt", '<'}, {"gt", '>'}, {"quot", '"'}, {"apos", '\''}}};
  for (const auto& [name, ch] : kNamed) {
    if (body == name) {
      out.push_back(ch);
      return semi + 1;
    }
  }
  if (body[0] != '#') return 0;
  std::string_view digits = body.substr(1);
  int base = 10;
  if (!digits.empty() && (digits[0] == 'x' || digits[0] == 'X')) {
    base = 16;
    digits.remove_prefix(1);
  }
  if (digits.empty()) return 0;
  std::uint32_t cp = 0;
  for (char c : digits) {
    int v;
    if (c >= '0' && c <= '9') {
      v = c - '0';
    } else if (base == 16 && c >= 'a' && c <= 'f') {
      v = c - 'a' + 10;
    } else if (base == 16 && c >= 'A' && c <= 'F') {
      v = c - 'A' + 10;
    } else {
      return 0;
    }
    cp = cp * base + v;
    if (cp > 0x10FFFF) return 0;
  }
  if (cp == 0 || (cp >= 0xD800 && cp <= 0xDFFF)) return 0;
  append_utf8(out, cp);
  return semi + 1;
}

std::string decode_entities(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    if (text[i] == '&') {
      if (const auto used = decode_entity(text.substr(i), out)) {
        i += used;
        continue;
      }
    }
    out.push_back(text[i++]);
  }
  return out;
}

void lowercase_ascii(std::string& text) {
  for (char& c : text) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
}

std::string collapse_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

}  // namespace

std::string_view to_string(Section section) {
  return kSectionNames[static_cast<std::size_t>(section)];
}

Section parse_section(std::string_view name) {
  for (std::size_t i = 0; i < kSectionCount; ++i) {
    if (kSectionNames[i] == name) return static_cast<Section>(i);
  }
  throw Error(ErrorKind::invalid_argument,
              "unknown section name '" + std::string(name) + "'");
}

std::vector<Section> parse_sections(std::span<const std::string> names) {
  std::vector<Section> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(parse_section(n));
  return out;
}

std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::validation: return "validation";
    case SplitTag::test: return "test";
  }
  return "train";
}

SplitTag parse_split_tag(std::string_view name) {
  if (name == "train") return SplitTag::train;
  if (name == "validation") return SplitTag::validation;
  if (name == "test") return SplitTag::test;
  throw Error(ErrorKind::invalid_argument, "unknown split '" + std::string(name) + "'");
}

bool is_code_identifier(std::string_view code) {
  return !code.empty() &&
         std::all_of(code.begin(), code.end(), [](char c) { return c >= '0' && c <= '9'; });
}

Corpus::Corpus(std::vector<ClinicalRecord> records) : records_(std::move(records)) {
  std::set<std::string> codes;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.record_id.empty()) {
      throw Error(ErrorKind::validation, "record at position " + std::to_string(i) +
                                             " has an empty record_id");
    }
    if (!record_index_.emplace(r.record_id, i).second) {
      throw Error(ErrorKind::duplicate, "duplicate record_id '" + r.record_id + "'");
    }
    for (const auto& c : r.codes) {
      if (!is_code_identifier(c)) {
        throw Error(ErrorKind::validation,
                    "record '" + r.record_id + "' has invalid code '" + c + "'");
      }
      codes.insert(c);
    }
  }
  inventory_.assign(codes.begin(), codes.end());
  for (std::size_t i = 0; i < inventory_.size(); ++i) code_index_.emplace(inventory_[i], i);
}

std::optional<std::size_t> Corpus::code_index(std::string_view code) const {
  const auto it = code_index_.find(code);
  if (it == code_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> Corpus::record_index(std::string_view record_id) const {
  const auto it = record_index_.find(record_id);
  if (it == record_index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> Corpus::code_indices(const ClinicalRecord& record) const {
  std::vector<std::size_t> out;
  out.reserve(record.codes.size());
  for (const auto& c : record.codes) {
    if (const auto idx = code_index(c)) out.push_back(*idx);
  }
  return out;
}

std::string clean_text(std::string_view raw) {
  std::string current(raw);
  while (true) {
    std::string next = current;
    lowercase_ascii(next);
    next = decode_entities(next);
    lowercase_ascii(next);
    next = collapse_whitespace(next);
    if (next == current) return next;
    current = std::move(next);
  }
}

std::string build_input(const ClinicalRecord& record, std::span<const Section> fields) {
  if (fields.empty()) throw Error(ErrorKind::invalid_argument, "no input fields given");
  std::string joined;
  for (const auto f : fields) {
    const auto& text = record.section(f);
    if (text.empty()) continue;
    if (!joined.empty()) joined.push_back(' ');
    joined += text;
  }
  return clean_text(joined);
}

std::string build_input(const ClinicalRecord& record, std::span<const std::string> field_names) {
  const auto fields = parse_sections(field_names);
  return build_input(record, fields);
}

ClinicalRecord record_from_json_line(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::parse, "record is not a JSON object");
  ClinicalRecord r;
  for (const auto& [key, value] : j.items()) {
    if (key == "record_id") {
      if (!value.is_string()) throw Error(ErrorKind::parse, "record_id must be a string");
      r.record_id = value.get<std::string>();
    } else if (key == "sections") {
      if (!value.is_object()) throw Error(ErrorKind::parse, "sections must be an object");
      for (const auto& [name, text] : value.items()) {
        Section s;
        try {
          s = parse_section(name);
        } catch (const Error&) {
          throw Error(ErrorKind::parse, "unknown section '" + name + "'");
        }
        if (!text.is_string()) {
          throw Error(ErrorKind::parse, "section '" + name + "' must be a string");
        }
        r.section(s) = text.get<std::string>();
      }
    } else if (key == "codes") {
      if (!value.is_array()) throw Error(ErrorKind::parse, "codes must be an array");
      for (const auto& c : value) {
        if (!c.is_string()) throw Error(ErrorKind::parse, "codes must be strings");
        auto code = c.get<std::string>();
        if (!is_code_identifier(code)) {
          throw Error(ErrorKind::parse, "invalid code identifier '" + code + "'");
        }
        r.codes.insert(std::move(code));
      }
    } else if (key == "split") {
      if (!value.is_string()) throw Error(ErrorKind::parse, "split must be a string");
      try {
        r.split = parse_split_tag(value.get<std::string>());
      } catch (const Error& e) {
        throw Error(ErrorKind::parse, e.what());
      }
    } else {
      throw Error(ErrorKind::parse, "unknown key '" + key + "'");
    }
  }
  if (r.record_id.empty()) throw Error(ErrorKind::parse, "missing or empty record_id");
  return r;
}

std::string record_to_json_line(const ClinicalRecord& record) {
  nlohmann::ordered_json j;
  j["record_id"] = record.record_id;
  nlohmann::ordered_json sections = nlohmann::ordered_json::object();
  for (const auto s : kAllSections) {
    if (!record.section(s).empty()) sections[std::string(to_string(s))] = record.section(s);
  }
  j["sections"] = std::move(sections);
  j["codes"] = nlohmann::ordered_json::array();
  for (const auto& c : record.codes) j["codes"].push_back(c);
  if (record.split) j["split"] = std::string(to_string(*record.split));
  return j.dump();
}

Corpus read_corpus(std::istream& in) {
  std::vector<ClinicalRecord> records;
  std::set<std::string, std::less<>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ClinicalRecord r;
    try {
      r = record_from_json_line(line);
    } catch (const Error& e) {
      throw Error(ErrorKind::parse, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert(r.record_id).second) {
      throw Error(ErrorKind::duplicate, "line " + std::to_string(line_no) +
                                            ": duplicate record_id '" + r.record_id + "'");
    }
    records.push_back(std::move(r));
  }
  return Corpus(std::move(records));
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open corpus file " + path.string());
  return read_corpus(in);
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& r : corpus.records()) out << record_to_json_line(r) << '\n';
}

void export_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write corpus file " + path.string());
  write_corpus(out, corpus);
  if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic corpus generator

std::vector<double> zipf_pmf(std::size_t n, double exponent) {
  std::vector<double> p(n);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    p[k] = std::pow(static_cast<double>(k + 1), -exponent);
    total += p[k];
  }
  for (auto& v : p) v /= total;
  return p;
}

namespace {

constexpr std::array<std::string_view, 96> kFillerWords = {
    "patient", "presented", "owner", "reports", "the", "was", "with", "and",
    "examination", "normal", "stable", "recommended", "recheck", "weeks", "appetite",
    "eating", "drinking", "today", "history", "of", "no", "changes", "noted",
    "discussed", "plan", "monitor", "at", "home", "continue", "medication",
    "bloodwork", "within", "limits", "radiographs", "performed", "unremarkable",
    "bright", "alert", "responsive", "hydrated", "weight", "body", "condition",
    "score", "temperature", "heart", "rate", "respiratory", "clinic", "visit",
    "follow", "up", "in", "two", "days", "sedation", "was", "uneventful",
    "recovered", "well", "from", "anesthesia", "discharged", "to", "instructions",
    "given", "for", "care", "likely", "consistent", "findings", "further",
    "diagnostics", "declined", "by", "client", "prognosis", "fair", "good",
    "guarded", "treatment", "started", "response", "expected", "this", "week",
    "signs", "improved", "since", "last", "overall", "doing", "better", "than"};

constexpr std::array<std::string_view, 8> kModifiers = {
    "chronic", "acute", "left", "right", "bilateral", "suspected", "mild", "severe"};

constexpr std::array<std::string_view, 8> kHeadNouns = {
    "disease", "disorder", "syndrome", "injury", "infection", "mass", "lesion", "fracture"};

constexpr std::array<std::string_view, 14> kOnsets = {
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
constexpr std::array<std::string_view, 10> kNuclei = {
    "a", "e", "i", "o", "u", "ae", "io", "ou", "ei", "y"};
constexpr std::array<std::string_view, 6> kCodas = {"", "n", "r", "s", "x", "th"};

std::string pseudo_word(Rng& rng) {
  std::string w;
  const auto syllables = 2 + rng.below(3);
  for (std::uint64_t i = 0; i < syllables; ++i) {
    w += kOnsets[rng.below(kOnsets.size())];
    w += kNuclei[rng.below(kNuclei.size())];
  }
  w += kCodas[rng.below(kCodas.size())];
  return w;
}

template <std::size_t N>
std::string_view pick(Rng& rng, const std::array<std::string_view, N>& words) {
  return words[rng.below(N)];
}

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

std::size_t sample_index(Rng& rng, const std::vector<double>& weights, double total) {
  double u = rng.uniform() * total;
  std::size_t last = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last = i;
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return last;
}

}  // namespace

SyntheticCorpus generate_synthetic(const GeneratorConfig& config, std::uint64_t seed) {
  if (config.codes < 1) throw Error(ErrorKind::config, "generator needs at least one code");
  if (config.records < 0) throw Error(ErrorKind::config, "generator record count is negative");
  if (config.zipf_exponent < 0.0) throw Error(ErrorKind::config, "Zipf exponent must be >= 0");
  if (config.mean_codes_per_visit < 1.0) {
    throw Error(ErrorKind::config, "mean codes per visit must be >= 1");
  }
  if (config.noise_rate < 0.0 || config.noise_rate > 1.0) {
    throw Error(ErrorKind::config, "noise rate must lie in [0, 1]");
  }
  if (config.assessment_mention_rate < 0.0 || config.assessment_mention_rate > 1.0) {
    throw Error(ErrorKind::config, "assessment mention rate must lie in [0, 1]");
  }
  if (config.assessment_min_words < 0 ||
      config.assessment_max_words < config.assessment_min_words) {
    throw Error(ErrorKind::config, "invalid assessment length range");
  }

  const auto num_codes = static_cast<std::size_t>(config.codes);
  Rng vocab_rng(derive_seed(seed, "synthetic.vocabulary"));
  Rng record_rng(derive_seed(seed, "synthetic.records"));

  SyntheticCorpus out;
  std::set<std::string> used_ids;
  std::set<std::string> used_words(kFillerWords.begin(), kFillerWords.end());
  used_words.insert(kModifiers.begin(), kModifiers.end());
  used_words.insert(kHeadNouns.begin(), kHeadNouns.end());
  auto fresh_word = [&] {
    while (true) {
      auto w = pseudo_word(vocab_rng);
      if (used_words.insert(w).second) return w;
    }
  };
  out.codes.reserve(num_codes);
  for (std::size_t k = 0; k < num_codes; ++k) {
    SyntheticCode sc;
    do {
      sc.code = std::to_string(100000000 + vocab_rng.below(900000000));
    } while (!used_ids.insert(sc.code).second);
    const auto n_templates = 2 + vocab_rng.below(3);
    for (std::uint64_t t = 0; t < n_templates; ++t) {
      std::string tmpl;
      if (vocab_rng.bernoulli(0.3)) {
        tmpl += pick(vocab_rng, kModifiers);
        tmpl += ' ';
      }
      tmpl += fresh_word();
      if (vocab_rng.bernoulli(0.3)) tmpl += " " + fresh_word();
      if (vocab_rng.bernoulli(0.5)) {
        tmpl += ' ';
        tmpl += pick(vocab_rng, kHeadNouns);
      }
      sc.templates.push_back(std::move(tmpl));
    }
    out.codes.push_back(std::move(sc));
  }

  const auto pmf = zipf_pmf(num_codes, config.zipf_exponent);
  const double geometric_p = 1.0 / config.mean_codes_per_visit;
  const int width = static_cast<int>(std::to_string(std::max<std::int64_t>(config.records, 1)).size());

  auto filler = [&](std::string& text, std::uint64_t count) {
    for (std::uint64_t i = 0; i < count; ++i) {
      if (!text.empty()) text += ' ';
      text += pick(record_rng, kFillerWords);
    }
  };

  std::vector<ClinicalRecord> records;
  records.reserve(static_cast<std::size_t>(config.records));
  for (std::int64_t n = 0; n < config.records; ++n) {
    ClinicalRecord r;
    std::string id = std::to_string(n + 1);
    r.record_id = "v" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;

    std::size_t count = 1;
    while (count < num_codes && !record_rng.bernoulli(geometric_p)) ++count;

    std::vector<double> weights = pmf;
    double total = 1.0;
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < count; ++i) {
      const auto idx = sample_index(record_rng, weights, total);
      chosen.push_back(idx);
      total -= weights[idx];
      weights[idx] = 0.0;
    }

    std::string diagnosis;
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      const auto& sc = out.codes[chosen[i]];
      if (record_rng.bernoulli(config.noise_rate)) filler(diagnosis, 1 + record_rng.below(3));
      if (!diagnosis.empty()) diagnosis += record_rng.bernoulli(0.2) ? " &amp; " : ", ";
      std::string surface = sc.templates[record_rng.below(sc.templates.size())];
      if (record_rng.bernoulli(0.3)) surface = capitalize(std::move(surface));
      diagnosis += surface;
      r.codes.insert(sc.code);
    }
    if (record_rng.bernoulli(config.noise_rate)) filler(diagnosis, 1 + record_rng.below(3));
    r.section(Section::diagnosis) = std::move(diagnosis);

    const auto span = static_cast<std::uint64_t>(config.assessment_max_words -
                                                 config.assessment_min_words + 1);
    const auto n_words = static_cast<std::uint64_t>(config.assessment_min_words) +
                         record_rng.below(span);
    std::vector<std::string> pieces;
    for (std::uint64_t i = 0; i < n_words; ++i) pieces.emplace_back(pick(record_rng, kFillerWords));
    for (const auto idx : chosen) {
      if (!record_rng.bernoulli(config.assessment_mention_rate)) continue;
      const auto& sc = out.codes[idx];
      const auto pos = record_rng.below(pieces.size() + 1);
      pieces.insert(pieces.begin() + static_cast<std::ptrdiff_t>(pos),
                    sc.templates[record_rng.below(sc.templates.size())]);
    }
    std::string assessment;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      if (i) assessment += (i % 12 == 0) ? ".\n" : " ";
      assessment += (i % 12 == 0) ? capitalize(pieces[i]) : pieces[i];
    }
    r.section(Section::assessment) = std::move(assessment);

    std::string complaint;
    filler(complaint, 3 + record_rng.below(5));
    r.section(Section::presenting_complaint) = std::move(complaint);
    records.push_back(std::move(r));
  }
  out.corpus = Corpus(std::move(records));
  return out;
}

}  // namespace vetcode

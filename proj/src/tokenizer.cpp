#include "vetcode/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "vetcode/error.hpp"

namespace vetcode {

namespace {

bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c >= 0x80;
}

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

constexpr std::string_view kHeaderReserved = "pad=0,unk=1,start=2";

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
    } else if (is_word_byte(c)) {
      const auto start = i;
      while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
      out.emplace_back(text.substr(start, i - start));
    } else {
      out.emplace_back(1, text[i]);
      ++i;
    }
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> surface_tokens, std::size_t max_len)
    : max_len_(max_len) {
  if (max_len == 0) throw Error(ErrorKind::invalid_argument, "max_len must be positive");
  tokens_ = {"<pad>", "<unk>", "<s>"};
  for (auto& t : surface_tokens) {
    if (t.empty()) throw Error(ErrorKind::invalid_argument, "empty vocabulary token");
    const auto id = static_cast<TokenId>(tokens_.size());
    if (!ids_.emplace(t, id).second) {
      throw Error(ErrorKind::duplicate, "duplicate vocabulary token '" + t + "'");
    }
    tokens_.push_back(std::move(t));
  }
}

TokenId Vocabulary::id_of(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnknownId : it->second;
}

Vocabulary build_vocab(std::span<const std::string> texts, std::size_t min_count,
                       std::size_t max_size, std::size_t max_len) {
  if (min_count == 0 || max_size == 0) {
    throw Error(ErrorKind::invalid_argument, "min_count and max_size must be positive");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto& w : split_words(text)) ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [token, count] : counts) {
    if (count >= min_count) ranked.emplace_back(token, count);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t cap = max_size > static_cast<std::size_t>(kReservedCount)
                              ? max_size - kReservedCount
                              : 0;
  if (ranked.size() > cap) ranked.resize(cap);
  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [token, count] : ranked) tokens.push_back(std::move(token));
  return Vocabulary(std::move(tokens), max_len);
}

Encoding encode(const Vocabulary& vocab, std::string_view text) {
  Encoding enc;
  const auto words = split_words(text);
  enc.token_count = words.size();
  enc.truncated = words.size() + 1 > vocab.max_len();
  const auto keep = std::min(words.size(), vocab.max_len() - 1);
  enc.ids.reserve(keep + 1);
  enc.ids.push_back(kStartId);
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto id = vocab.id_of(words[i]);
    if (id == kUnknownId) ++enc.unknown_count;
    if (i < keep) enc.ids.push_back(id);
  }
  return enc;
}

CorpusStats corpus_stats(const Vocabulary& vocab, std::span<const std::string> texts) {
  CorpusStats stats;
  if (texts.empty()) return stats;
  std::size_t tokens = 0;
  std::size_t truncated = 0;
  std::size_t unknown = 0;
  for (const auto& t : texts) {
    const auto enc = encode(vocab, t);
    tokens += enc.token_count;
    unknown += enc.unknown_count;
    truncated += enc.truncated ? 1 : 0;
  }
  stats.mean_tokens = static_cast<double>(tokens) / static_cast<double>(texts.size());
  stats.truncation_rate = static_cast<double>(truncated) / static_cast<double>(texts.size());
  stats.unknown_rate = tokens ? static_cast<double>(unknown) / static_cast<double>(tokens) : 0.0;
  return stats;
}

void write_vocab(std::ostream& out, const Vocabulary& vocab) {
  out << "#max_len=" << vocab.max_len() << '\t' << kHeaderReserved << '\n';
  TokenId id = kReservedCount;
  for (const auto& t : vocab.surface_tokens()) out << t << '\t' << id++ << '\n';
}

Vocabulary read_vocab(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("#max_len=", 0) != 0) {
    throw Error(ErrorKind::parse, "vocabulary header missing");
  }
  const auto tab = line.find('\t');
  if (tab == std::string::npos || line.substr(tab + 1) != kHeaderReserved) {
    throw Error(ErrorKind::parse, "vocabulary header has unexpected reserved ids");
  }
  std::size_t max_len = 0;
  try {
    max_len = std::stoul(line.substr(9, tab - 9));
  } catch (const std::exception&) {
    throw Error(ErrorKind::parse, "vocabulary header has an invalid max_len");
  }
  std::vector<std::string> tokens;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto sep = line.find('\t');
    if (sep == std::string::npos) {
      throw Error(ErrorKind::parse, "vocabulary line " + std::to_string(line_no) + " lacks an id");
    }
    const auto expected = tokens.size() + kReservedCount;
    if (line.substr(sep + 1) != std::to_string(expected)) {
      throw Error(ErrorKind::parse, "vocabulary line " + std::to_string(line_no) +
                                        ": ids must be dense and ascending");
    }
    tokens.push_back(line.substr(0, sep));
  }
  return Vocabulary(std::move(tokens), max_len);
}

void save_vocab(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  write_vocab(out, vocab);
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  return read_vocab(in);
}

}  // namespace vetcode

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vetcode {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnknownId = 1;
inline constexpr TokenId kStartId = 2;
inline constexpr TokenId kReservedCount = 3;
inline constexpr std::size_t kDefaultMaxLen = 256;

// Word-level splitting: runs of letters, digits and non-ASCII bytes form
// words; every other printable ASCII character is a token of its own;
// whitespace separates.
std::vector<std::string> split_words(std::string_view text);

// Corpus-built word vocabulary. Ids 0-2 are reserved (padding, unknown,
// sequence start); surface tokens are numbered densely from 3. Input text is
// expected to be cleaned, so the vocabulary is always lowercase.
class Vocabulary {
 public:
  Vocabulary() : Vocabulary({}, kDefaultMaxLen) {}
  Vocabulary(std::vector<std::string> surface_tokens, std::size_t max_len);

  std::size_t size() const { return tokens_.size(); }
  std::size_t max_len() const { return max_len_; }
  TokenId id_of(std::string_view token) const;
  const std::string& token_of(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  // Surface tokens in id order (ids 3..V-1).
  std::span<const std::string> surface_tokens() const {
    return std::span<const std::string>(tokens_).subspan(kReservedCount);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.max_len_ == b.max_len_ && a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::size_t max_len_;
};

// Tokens with count >= min_count, most frequent first, ties lexicographic,
// at most max_size - 3 surface tokens.
Vocabulary build_vocab(std::span<const std::string> texts, std::size_t min_count,
                       std::size_t max_size, std::size_t max_len = kDefaultMaxLen);

struct Encoding {
  std::vector<TokenId> ids;  // starts with kStartId, size <= max_len
  bool truncated = false;
  std::size_t token_count = 0;    // words before truncation, start excluded
  std::size_t unknown_count = 0;  // of those, out-of-vocabulary

  friend bool operator==(const Encoding&, const Encoding&) = default;
};

Encoding encode(const Vocabulary& vocab, std::string_view text);

struct CorpusStats {
  double mean_tokens = 0.0;
  double truncation_rate = 0.0;
  double unknown_rate = 0.0;
};

CorpusStats corpus_stats(const Vocabulary& vocab, std::span<const std::string> texts);

// Two tab-separated columns (token, id) after a header row of the form
// "#max_len=<n>\tpad=0,unk=1,start=2".
void write_vocab(std::ostream& out, const Vocabulary& vocab);
Vocabulary read_vocab(std::istream& in);
void save_vocab(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary load_vocab(const std::filesystem::path& path);

}  // namespace vetcode

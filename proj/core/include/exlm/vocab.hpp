#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace exlm {

enum class SourceKind { text, smiles, synthetic };
enum class TokenizeMode { text, smiles };

struct TokenSequence {
  std::vector<int> ids;
  SourceKind source = SourceKind::text;

  int length() const { return static_cast<int>(ids.size()); }
};

// Raised by tokenize_smiles when a character cannot be consumed.
class SmilesError : public std::runtime_error {
 public:
  SmilesError(std::size_t offset, std::string message)
      : std::runtime_error(std::move(message)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Token <-> id table. Ids are dense, the seven reserved tokens occupy
// 0..6 in a fixed order, and construction is deterministic for a given
// corpus and frequency cutoff.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kBos = 5;
  static constexpr int kEos = 6;
  static constexpr int kNumSpecials = 7;

  static const std::array<std::string, kNumSpecials>& special_tokens();

  Vocabulary();

  int size() const { return static_cast<int>(tokens_.size()); }

  // -1 when absent.
  int id_of(std::string_view token) const;

  const std::string& token(int id) const;
  std::int64_t frequency(int id) const;
  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }

  // One `token<TAB>frequency` per line, specials first with frequency 0.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend Vocabulary build_vocab(std::span<const std::string> corpus, TokenizeMode mode,
                                std::int64_t min_freq);

 private:
  struct TransparentHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view sv) const {
      return std::hash<std::string_view>{}(sv);
    }
  };

  void add(std::string token, std::int64_t freq);

  std::vector<std::string> tokens_;
  std::vector<std::int64_t> freqs_;
  std::unordered_map<std::string, int, TransparentHash, std::equal_to<>> ids_;
};

// Lowercases and splits on whitespace runs.
std::vector<std::string> tokenize_text(std::string_view raw);

// Tokenizes a SMILES string with the standard atom/bond/ring regular
// expression, applied left to right. Throws SmilesError when a character
// is not consumed.
std::vector<std::string> tokenize_smiles(std::string_view raw);

std::vector<std::string> tokenize(std::string_view raw, TokenizeMode mode);

// Counts tokens over the corpus and keeps those with frequency >= min_freq,
// ordered by (frequency desc, token asc) after the specials. Corpus tokens
// that collide with a special literal are not duplicated; encode() maps
// them to [UNK].
Vocabulary build_vocab(std::span<const std::string> corpus, TokenizeMode mode,
                       std::int64_t min_freq);

TokenSequence encode(std::span<const std::string> tokens, const Vocabulary& vocab,
                     SourceKind source);

std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab);

}  // namespace exlm

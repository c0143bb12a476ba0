#include "exlm/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <sstream>

#include "exlm/io.hpp"

namespace exlm {

const std::array<std::string, Vocabulary::kNumSpecials>& Vocabulary::special_tokens() {
  static const std::array<std::string, kNumSpecials> specials = {
      "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[BOS]", "[EOS]"};
  return specials;
}

Vocabulary::Vocabulary() {
  for (const auto& s : special_tokens()) add(s, 0);
}

void Vocabulary::add(std::string token, std::int64_t freq) {
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
  freqs_.push_back(freq);
}

int Vocabulary::id_of(std::string_view token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? -1 : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::int64_t Vocabulary::frequency(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("id out of range: " + std::to_string(id));
  }
  return freqs_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ostringstream out;
  for (int id = 0; id < size(); ++id) {
    out << tokens_[static_cast<std::size_t>(id)] << '\t'
        << freqs_[static_cast<std::size_t>(id)] << '\n';
  }
  write_file_atomic(path, out.str());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  Vocabulary vocab;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error("vocab file: missing tab on line " + std::to_string(i + 1));
    }
    std::string token = line.substr(0, tab);
    const std::int64_t freq = std::stoll(line.substr(tab + 1));
    if (i < kNumSpecials) {
      if (token != special_tokens()[i]) {
        throw std::runtime_error("vocab file: line " + std::to_string(i + 1) +
                                 " expected special token " + special_tokens()[i]);
      }
      continue;  // constructor already added it
    }
    if (vocab.id_of(token) >= 0) {
      throw std::runtime_error("vocab file: duplicate token on line " + std::to_string(i + 1));
    }
    vocab.add(std::move(token), freq);
  }
  return vocab;
}

std::vector<std::string> tokenize_text(std::string_view raw) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

namespace {

const std::regex& smiles_pattern() {
  // Atom-bracket / two-letter halogens / organic subset / bonds / branches /
  // ring closures, tried in this order so the longest alternative wins.
  static const std::regex re(
      R"((\[[^\]]+]|Br?|Cl?|N|O|S|P|F|I|b|c|n|o|s|p|\(|\)|\.|=|#|-|\+|\\|\/|:|~|@|\?|>|\*|\$|%[0-9]{2}|[0-9]))",
      std::regex::ECMAScript | std::regex::optimize);
  return re;
}

}  // namespace

std::vector<std::string> tokenize_smiles(std::string_view raw) {
  std::vector<std::string> tokens;
  std::size_t offset = 0;
  std::cmatch m;
  const char* cursor = raw.data();
  const char* end = raw.data() + raw.size();
  while (cursor != end) {
    if (!std::regex_search(cursor, end, m, smiles_pattern(),
                           std::regex_constants::match_continuous)) {
      throw SmilesError(offset, "unparseable SMILES at offset " + std::to_string(offset));
    }
    tokens.emplace_back(m[0].first, m[0].second);
    offset += static_cast<std::size_t>(m[0].length());
    cursor = m[0].second;
  }
  return tokens;
}

std::vector<std::string> tokenize(std::string_view raw, TokenizeMode mode) {
  return mode == TokenizeMode::text ? tokenize_text(raw) : tokenize_smiles(raw);
}

Vocabulary build_vocab(std::span<const std::string> corpus, TokenizeMode mode,
                       std::int64_t min_freq) {
  if (min_freq < 1) {
    throw std::invalid_argument("min_freq must be >= 1");
  }
  std::unordered_map<std::string, std::int64_t> counts;
  std::size_t total_tokens = 0;
  for (const auto& raw : corpus) {
    for (auto& tok : tokenize(raw, mode)) {
      ++counts[std::move(tok)];
      ++total_tokens;
    }
  }
  if (total_tokens == 0) {
    throw std::runtime_error("empty corpus");
  }

  Vocabulary vocab;
  std::vector<std::pair<std::string, std::int64_t>> entries;
  entries.reserve(counts.size());
  const auto& specials = Vocabulary::special_tokens();
  for (auto& [tok, freq] : counts) {
    if (freq < min_freq) continue;
    if (std::find(specials.begin(), specials.end(), tok) != specials.end()) {
      continue;  // collision with a special literal; encode maps it to [UNK]
    }
    entries.emplace_back(tok, freq);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (auto& [tok, freq] : entries) vocab.add(std::move(tok), freq);
  return vocab;
}

TokenSequence encode(std::span<const std::string> tokens, const Vocabulary& vocab,
                     SourceKind source) {
  if (tokens.empty()) {
    throw std::invalid_argument("length >= 1 violated");
  }
  TokenSequence seq;
  seq.source = source;
  seq.ids.reserve(tokens.size());
  const auto& specials = Vocabulary::special_tokens();
  for (const auto& tok : tokens) {
    // Corpus text that spells a reserved literal maps to [UNK] rather than
    // aliasing the reserved id.
    if (std::find(specials.begin(), specials.end(), tok) != specials.end()) {
      seq.ids.push_back(Vocabulary::kUnk);
      continue;
    }
    const int id = vocab.id_of(tok);
    seq.ids.push_back(id >= 0 ? id : Vocabulary::kUnk);
  }
  return seq;
}

std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab) {
  std::vector<std::string> tokens;
  tokens.reserve(seq.ids.size());
  for (int id : seq.ids) {
    if (id < 0 || id >= vocab.size()) {
      throw std::out_of_range("id out of range: " + std::to_string(id));
    }
    tokens.push_back(vocab.token(id));
  }
  return tokens;
}

}  // namespace exlm

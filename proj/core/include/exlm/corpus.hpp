#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "exlm/vocab.hpp"

namespace exlm {

// Template-based synthetic corpus: each record instantiates one template by
// filling its slots. A coupled template draws one filler index shared by
// all slots, giving exact control over joint slot statistics; an uncoupled
// template draws each slot independently.
struct SyntheticSpec {
  struct Slot {
    std::vector<std::string> fillers;
    std::vector<double> weights;
  };
  struct Template {
    double weight = 1.0;
    std::vector<std::string> tokens;  // "{0}", "{1}", ... mark slot positions
    std::vector<Slot> slots;
    bool coupled = false;
  };
  std::uint64_t seed = 0;
  std::int64_t count = 0;
  std::vector<Template> templates;

  void validate() const;
  static SyntheticSpec from_json_file(const std::filesystem::path& path);
};

// Deterministic in (spec, spec.seed). Each record derives its own stream
// from the record index, so generation can be sharded freely.
std::vector<std::string> generate_lines(const SyntheticSpec& spec);

std::vector<TokenSequence> generate(const SyntheticSpec& spec, const Vocabulary& vocab);

void save_lines(const std::filesystem::path& path, std::span<const std::string> lines);

struct LoadedCorpus {
  std::vector<std::string> lines;
  std::size_t blank_lines = 0;
};

LoadedCorpus load_lines(const std::filesystem::path& path);

// Tokenizes + encodes one record per line. Tokenizer failures carry the
// 1-based line number.
std::vector<TokenSequence> load_corpus(const std::filesystem::path& path, TokenizeMode mode,
                                       const Vocabulary& vocab);

}  // namespace exlm

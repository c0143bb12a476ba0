#include "exlm/corpus.hpp"

#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "exlm/io.hpp"
#include "exlm/rng.hpp"

namespace exlm {

void SyntheticSpec::validate() const {
  if (templates.empty()) {
    throw std::invalid_argument("synthetic spec needs at least one template");
  }
  for (const auto& t : templates) {
    if (t.weight <= 0.0) throw std::invalid_argument("template weight must be positive");
    if (t.slots.empty()) {
      throw std::invalid_argument("every template needs at least one slot");
    }
    std::size_t markers = 0;
    for (const auto& tok : t.tokens) {
      if (tok.size() >= 3 && tok.front() == '{' && tok.back() == '}') ++markers;
    }
    if (markers != t.slots.size()) {
      throw std::invalid_argument("slot markers do not match slot count");
    }
    for (const auto& s : t.slots) {
      if (s.fillers.empty()) throw std::invalid_argument("empty fillers");
      if (s.weights.size() != s.fillers.size()) {
        throw std::invalid_argument("filler/weight size mismatch");
      }
      for (double w : s.weights) {
        if (w <= 0.0) throw std::invalid_argument("filler weights must be positive");
      }
    }
    if (t.coupled) {
      for (const auto& s : t.slots) {
        if (s.fillers.size() != t.slots.front().fillers.size()) {
          throw std::invalid_argument("coupled template needs equal-length filler lists");
        }
      }
    }
  }
}

SyntheticSpec SyntheticSpec::from_json_file(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(read_file(path));
  SyntheticSpec spec;
  spec.seed = j.value("seed", 0ULL);
  spec.count = j.at("count").get<std::int64_t>();
  for (const auto& jt : j.at("templates")) {
    SyntheticSpec::Template t;
    t.weight = jt.value("weight", 1.0);
    t.tokens = jt.at("tokens").get<std::vector<std::string>>();
    t.coupled = jt.value("coupled", false);
    for (const auto& js : jt.at("slots")) {
      SyntheticSpec::Slot s;
      s.fillers = js.at("fillers").get<std::vector<std::string>>();
      if (js.contains("weights")) {
        s.weights = js.at("weights").get<std::vector<double>>();
      } else {
        s.weights.assign(s.fillers.size(), 1.0);
      }
      t.slots.push_back(std::move(s));
    }
    spec.templates.push_back(std::move(t));
  }
  spec.validate();
  return spec;
}

namespace {

std::size_t weighted_pick(std::span<const double> weights, Rng& rng) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double r = rng.uniform01() * total;
  for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
    r -= weights[i];
    if (r < 0.0) return i;
  }
  return weights.size() - 1;
}

}  // namespace

std::vector<std::string> generate_lines(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<double> template_weights;
  template_weights.reserve(spec.templates.size());
  for (const auto& t : spec.templates) template_weights.push_back(t.weight);

  std::vector<std::string> lines;
  lines.reserve(static_cast<std::size_t>(std::max<std::int64_t>(spec.count, 0)));
  for (std::int64_t idx = 0; idx < spec.count; ++idx) {
    Rng rng(Rng::derive(spec.seed, 0xC0, static_cast<std::uint64_t>(idx)));
    const auto& t = spec.templates[weighted_pick(template_weights, rng)];

    std::vector<std::size_t> choice(t.slots.size());
    if (t.coupled) {
      const std::size_t shared = weighted_pick(t.slots.front().weights, rng);
      std::fill(choice.begin(), choice.end(), shared);
    } else {
      for (std::size_t s = 0; s < t.slots.size(); ++s) {
        choice[s] = weighted_pick(t.slots[s].weights, rng);
      }
    }

    std::ostringstream line;
    std::size_t slot = 0;
    for (std::size_t i = 0; i < t.tokens.size(); ++i) {
      const auto& tok = t.tokens[i];
      if (i) line << ' ';
      if (tok.size() >= 3 && tok.front() == '{' && tok.back() == '}') {
        line << t.slots[slot].fillers[choice[slot]];
        ++slot;
      } else {
        line << tok;
      }
    }
    lines.push_back(line.str());
  }
  return lines;
}

std::vector<TokenSequence> generate(const SyntheticSpec& spec, const Vocabulary& vocab) {
  std::vector<TokenSequence> out;
  for (const auto& line : generate_lines(spec)) {
    out.push_back(encode(tokenize_text(line), vocab, SourceKind::synthetic));
  }
  return out;
}

void save_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ostringstream buf;
  for (const auto& line : lines) buf << line << '\n';
  write_file_atomic(path, buf.str());
}

LoadedCorpus load_lines(const std::filesystem::path& path) {
  LoadedCorpus corpus;
  corpus.lines = read_lines(path, &corpus.blank_lines);
  return corpus;
}

std::vector<TokenSequence> load_corpus(const std::filesystem::path& path, TokenizeMode mode,
                                       const Vocabulary& vocab) {
  const auto corpus = load_lines(path);
  std::vector<TokenSequence> out;
  out.reserve(corpus.lines.size());
  for (std::size_t i = 0; i < corpus.lines.size(); ++i) {
    try {
      const auto toks = tokenize(corpus.lines[i], mode);
      out.push_back(encode(toks, vocab,
                           mode == TokenizeMode::text ? SourceKind::text : SourceKind::smiles));
    } catch (const std::exception& e) {
      throw std::runtime_error("line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace exlm

#include "exlm/masking.hpp"

#include <cmath>
#include <stdexcept>

namespace exlm {

MaskedSample apply_mask(const TokenSequence& seq, double p, Rng& rng) {
  if (seq.ids.empty()) {
    throw std::invalid_argument("length >= 1 violated");
  }
  if (!(p > 0.0 && p < 1.0)) {
    throw std::invalid_argument("mask ratio must lie in (0,1)");
  }
  MaskedSample out;
  out.original = seq;
  out.corrupted = seq;
  for (int i = 0; i < seq.length(); ++i) {
    if (rng.bernoulli(p)) {
      out.masked_positions.push_back(i);
    }
  }
  if (out.masked_positions.empty()) {
    out.masked_positions.push_back(0);
    out.forced_mask = true;
  }
  out.targets.reserve(out.masked_positions.size());
  for (int pos : out.masked_positions) {
    out.targets.push_back(seq.ids[static_cast<std::size_t>(pos)]);
    out.corrupted.ids[static_cast<std::size_t>(pos)] = Vocabulary::kMask;
  }
  return out;
}

RepeatedMaskedSample repeat_and_mask(const TokenSequence& seq, int k_rep, double p, Rng& rng) {
  if (k_rep < 1) {
    throw std::invalid_argument("k_rep must be >= 1");
  }
  RepeatedMaskedSample out;
  out.base = seq;
  out.k_rep = k_rep;
  TokenSequence repeated;
  repeated.source = seq.source;
  repeated.ids.reserve(seq.ids.size() * static_cast<std::size_t>(k_rep));
  out.group_of.reserve(repeated.ids.capacity());
  for (int i = 0; i < seq.length(); ++i) {
    for (int c = 0; c < k_rep; ++c) {
      repeated.ids.push_back(seq.ids[static_cast<std::size_t>(i)]);
      out.group_of.push_back(i);
    }
  }
  out.sample = apply_mask(repeated, p, rng);
  return out;
}

double corruption_proportion(const RepeatedMaskedSample& rs) {
  const int n = rs.base.length();
  std::vector<int> masked_copies(static_cast<std::size_t>(n), 0);
  for (int pos : rs.sample.masked_positions) {
    ++masked_copies[static_cast<std::size_t>(rs.group_of[static_cast<std::size_t>(pos)])];
  }
  int corrupted = 0;
  for (int count : masked_copies) {
    if (count == rs.k_rep) ++corrupted;
  }
  return static_cast<double>(corrupted) / static_cast<double>(n);
}

CorruptionMoments expected_corruption(double p, int k_rep, int n) {
  if (!(p > 0.0 && p < 1.0) || k_rep < 1 || n < 1) {
    throw std::invalid_argument("expected_corruption: bad arguments");
  }
  const double mean = std::pow(p, k_rep);
  return {mean, mean * (1.0 - mean) / static_cast<double>(n)};
}

}  // namespace exlm

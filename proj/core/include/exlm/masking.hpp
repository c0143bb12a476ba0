#pragma once

#include <vector>

#include "exlm/rng.hpp"
#include "exlm/vocab.hpp"

namespace exlm {

// A training sample: the original sequence, its corrupted copy with [MASK]
// at the masked positions, and the target tokens aligned with those
// positions.
struct MaskedSample {
  TokenSequence original;
  TokenSequence corrupted;
  std::vector<int> masked_positions;  // strictly increasing
  std::vector<int> targets;           // targets[j] = original[masked_positions[j]]
  bool forced_mask = false;           // true when the zero-draw fallback fired

  int num_masked() const { return static_cast<int>(masked_positions.size()); }
};

// Repeat-then-mask construction: every base token owns k_rep contiguous
// copies in the repeated sequence, and masking runs over the copies.
struct RepeatedMaskedSample {
  TokenSequence base;
  int k_rep = 1;
  MaskedSample sample;        // over the repeated sequence
  std::vector<int> group_of;  // repeated index -> base index
};

// Masks each position independently with probability p. If no position is
// drawn, position 0 is force-masked so every sample has at least one
// target.
MaskedSample apply_mask(const TokenSequence& seq, double p, Rng& rng);

RepeatedMaskedSample repeat_and_mask(const TokenSequence& seq, int k_rep, double p, Rng& rng);

// Fraction of base tokens whose every copy is masked.
double corruption_proportion(const RepeatedMaskedSample& rs);

struct CorruptionMoments {
  double mean;
  double variance;
};

// Closed forms: mean = p^k, variance = p^k (1 - p^k) / n.
CorruptionMoments expected_corruption(double p, int k_rep, int n);

}  // namespace exlm

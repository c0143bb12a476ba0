#pragma once

#include <vector>

#include "exlm/masking.hpp"

namespace exlm {

// 2D position: real tokens sit at (original index, 0), the c-th clone of a
// mask at original index i sits at (i, c) with c in 1..k.
struct Pos2d {
  int seq_pos = 0;
  int clone_idx = 0;

  bool operator==(const Pos2d&) const = default;
};

// The corrupted sequence with every [MASK] replaced by k contiguous clone
// slots. Clones share the [MASK] id and are told apart by clone_idx.
struct ExpandedSequence {
  std::vector<int> ids;
  std::vector<Pos2d> pos2d;
  std::vector<int> origin;  // expanded index -> original index

  int length() const { return static_cast<int>(ids.size()); }
};

// Ordering of the DAG's emitting nodes plus the virtual BOS/EOS slots.
// Node indices used by transition matrices run 0..L+1 with 0 = BOS,
// 1..L = emitting nodes in (mask_rank, clone_idx) order, L+1 = EOS.
struct LatticeLayout {
  struct NodeOrigin {
    int mask_rank;       // index into masked_positions
    int clone_idx;       // 1..k
    int expanded_index;  // row of the expanded sequence / hidden states
  };

  std::vector<NodeOrigin> node_origin;  // size L
  std::vector<int> group_of_node;       // size L, = mask_rank
  int num_groups = 0;

  int num_nodes() const { return static_cast<int>(node_origin.size()); }
  int bos_index() const { return 0; }
  int eos_index() const { return num_nodes() + 1; }
  int total_nodes() const { return num_nodes() + 2; }
};

ExpandedSequence expand_masks(const MaskedSample& ms, int k);

LatticeLayout build_layout(const ExpandedSequence& es);

}  // namespace exlm

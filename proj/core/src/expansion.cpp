#include "exlm/expansion.hpp"

#include <stdexcept>

namespace exlm {

ExpandedSequence expand_masks(const MaskedSample& ms, int k) {
  if (k < 1) {
    throw std::invalid_argument("expansion k must be >= 1");
  }
  const int n = ms.corrupted.length();
  const int masks = ms.num_masked();
  ExpandedSequence es;
  const std::size_t expanded_len =
      static_cast<std::size_t>(n) + static_cast<std::size_t>(k - 1) * masks;
  es.ids.reserve(expanded_len);
  es.pos2d.reserve(expanded_len);
  es.origin.reserve(expanded_len);

  std::size_t next_mask = 0;
  for (int i = 0; i < n; ++i) {
    const bool is_masked = next_mask < ms.masked_positions.size() &&
                           ms.masked_positions[next_mask] == i;
    if (is_masked) {
      for (int c = 1; c <= k; ++c) {
        es.ids.push_back(Vocabulary::kMask);
        es.pos2d.push_back({i, c});
        es.origin.push_back(i);
      }
      ++next_mask;
    } else {
      es.ids.push_back(ms.corrupted.ids[static_cast<std::size_t>(i)]);
      es.pos2d.push_back({i, 0});
      es.origin.push_back(i);
    }
  }
  return es;
}

LatticeLayout build_layout(const ExpandedSequence& es) {
  LatticeLayout layout;
  int mask_rank = -1;
  int last_origin = -1;
  for (int t = 0; t < es.length(); ++t) {
    const int clone = es.pos2d[static_cast<std::size_t>(t)].clone_idx;
    if (clone == 0) continue;
    if (clone == 1 && es.origin[static_cast<std::size_t>(t)] != last_origin) {
      ++mask_rank;
      last_origin = es.origin[static_cast<std::size_t>(t)];
    }
    layout.node_origin.push_back({mask_rank, clone, t});
    layout.group_of_node.push_back(mask_rank);
  }
  layout.num_groups = mask_rank + 1;
  return layout;
}

}  // namespace exlm

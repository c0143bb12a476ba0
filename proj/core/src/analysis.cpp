#include "exlm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace exlm {

double distribution_entropy(std::span<const double> dist) {
  double sum = 0.0;
  double bits = 0.0;
  for (double p : dist) {
    if (p < 0.0) {
      throw std::invalid_argument("negative probability in distribution");
    }
    sum += p;
    if (p > 0.0) bits -= p * std::log2(p);
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("distribution does not sum to 1");
  }
  return bits;
}

double distribution_entropy(const Eigen::VectorXd& dist) {
  return distribution_entropy(std::span<const double>(dist.data(),
                                                      static_cast<std::size_t>(dist.size())));
}

double repeated_token_entropy(const std::vector<Eigen::VectorXd>& dists) {
  if (dists.empty()) {
    throw std::invalid_argument("no distributions given");
  }
  double total = 0.0;
  for (const auto& d : dists) total += distribution_entropy(d);
  return total / static_cast<double>(dists.size());
}

std::vector<int> entropy_filter(const RepeatedMaskedSample& rs) {
  const int n = rs.base.length();
  std::vector<int> masked_copies(static_cast<std::size_t>(n), 0);
  for (int pos : rs.sample.masked_positions) {
    ++masked_copies[static_cast<std::size_t>(rs.group_of[static_cast<std::size_t>(pos)])];
  }
  std::vector<int> eligible;
  for (int i = 0; i < n; ++i) {
    if (masked_copies[static_cast<std::size_t>(i)] == rs.k_rep) eligible.push_back(i);
  }
  return eligible;
}

CaseStudyExport export_case(const LatticeHeadsOut& heads, const LatticeLayout& layout,
                            const AdjacencyMask& adj, const Vocabulary& vocab, int top_q,
                            double edge_min) {
  if (top_q < 1) {
    throw std::invalid_argument("top_q must be >= 1");
  }
  CaseStudyExport ex;
  const int L = layout.num_nodes();
  ex.num_groups = layout.num_groups;
  ex.bos_index = layout.bos_index();
  ex.eos_index = layout.eos_index();

  const int vocab_size = static_cast<int>(heads.emission.cols());
  std::vector<int> order(static_cast<std::size_t>(vocab_size));
  for (int u = 1; u <= L; ++u) {
    const auto& origin = layout.node_origin[static_cast<std::size_t>(u - 1)];
    CaseStudyExport::Node node;
    node.index = u;
    node.group = origin.mask_rank;
    node.clone = origin.clone_idx;

    std::iota(order.begin(), order.end(), 0);
    const auto row = heads.emission.row(u - 1);
    const int q = std::min(top_q, vocab_size);
    std::partial_sort(order.begin(), order.begin() + q, order.end(), [&](int a, int b) {
      if (row(a) != row(b)) return row(a) > row(b);
      return a < b;  // ties by token id ascending
    });
    for (int j = 0; j < q; ++j) {
      node.top_tokens.emplace_back(vocab.token(order[static_cast<std::size_t>(j)]),
                                   row(order[static_cast<std::size_t>(j)]));
    }
    ex.nodes.push_back(std::move(node));
  }

  for (int v = 0; v < adj.total; ++v) {
    for (int u : adj.successors[static_cast<std::size_t>(v)]) {
      const double w = heads.transition(v, u);
      if (w >= edge_min) {
        ex.edges.push_back({v, u, w});
      }
    }
  }
  return ex;
}

std::string case_export_to_json(const CaseStudyExport& ex) {
  nlohmann::ordered_json j;
  j["num_groups"] = ex.num_groups;
  j["bos_index"] = ex.bos_index;
  j["eos_index"] = ex.eos_index;
  j["nodes"] = nlohmann::ordered_json::array();
  for (const auto& node : ex.nodes) {
    nlohmann::ordered_json n;
    n["index"] = node.index;
    n["group"] = node.group;
    n["clone"] = node.clone;
    n["top_tokens"] = nlohmann::ordered_json::array();
    for (const auto& [tok, prob] : node.top_tokens) {
      n["top_tokens"].push_back({{"token", tok}, {"prob", prob}});
    }
    j["nodes"].push_back(std::move(n));
  }
  j["edges"] = nlohmann::ordered_json::array();
  for (const auto& e : ex.edges) {
    j["edges"].push_back({{"from", e.from}, {"to", e.to}, {"weight", e.weight}});
  }
  return j.dump(2) + "\n";
}

}  // namespace exlm

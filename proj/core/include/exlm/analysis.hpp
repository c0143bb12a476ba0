#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "exlm/lattice_heads.hpp"
#include "exlm/masking.hpp"
#include "exlm/vocab.hpp"

namespace exlm {

enum class EntropyFilter { fully_masked_only, all_masked_positions };

struct EntropyReport {
  std::vector<double> per_token_bits;
  double mean_bits = 0.0;
  EntropyFilter filter = EntropyFilter::fully_masked_only;
};

// Base-2 Shannon entropy of a probability vector; 0*log0 counts as 0.
// Throws on negative entries or when the vector is far from normalized.
double distribution_entropy(std::span<const double> dist);
double distribution_entropy(const Eigen::VectorXd& dist);

// Mean of the per-copy entropies for the k masked copies of one base token.
double repeated_token_entropy(const std::vector<Eigen::VectorXd>& dists);

// Base-token indices whose every copy is masked; only those enter the
// repeated-token entropy statistic.
std::vector<int> entropy_filter(const RepeatedMaskedSample& rs);

struct CaseStudyExport {
  struct Node {
    int index;       // lattice index 1..L
    int group;       // mask rank
    int clone;       // 1..k
    std::vector<std::pair<std::string, double>> top_tokens;  // prob desc, id asc
  };
  struct Edge {
    int from, to;
    double weight;
  };
  int num_groups = 0;
  int bos_index = 0;
  int eos_index = 0;
  std::vector<Node> nodes;
  std::vector<Edge> edges;  // allowed pairs with weight >= edge_min
};

// Deterministic export of the DAG: per-node top-q tokens (ties broken by
// token id ascending) and every allowed edge at or above edge_min.
CaseStudyExport export_case(const LatticeHeadsOut& heads, const LatticeLayout& layout,
                            const AdjacencyMask& adj, const Vocabulary& vocab, int top_q,
                            double edge_min);

// Stable JSON rendering of the export (byte-identical for equal inputs).
std::string case_export_to_json(const CaseStudyExport& ex);

}  // namespace exlm

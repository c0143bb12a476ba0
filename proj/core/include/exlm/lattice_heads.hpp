#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "exlm/encoder.hpp"
#include "exlm/expansion.hpp"

namespace exlm {

enum class DagVariant { dense, sparse };

// Boolean edge structure over the L+2 lattice nodes (BOS, emitting nodes,
// EOS). Edges always point forward in layout order; BOS has no incoming
// and EOS no outgoing edges. Edges that cannot sit on any complete path of
// exactly num_groups emissions are excluded, which is what forces rows
// with a single legal successor (and the k=1 chain) to carry probability 1.
// The sparse variant additionally forbids transitions inside one mask
// group, which reduces it to the group-successor chain.
struct AdjacencyMask {
  int total;  // L + 2
  DagVariant variant = DagVariant::dense;
  std::vector<std::uint8_t> allowed;          // total*total, row-major
  std::vector<std::vector<int>> successors;    // per node, ascending
  std::vector<std::vector<int>> predecessors;  // per node, ascending

  bool is_allowed(int v, int u) const {
    return allowed[static_cast<std::size_t>(v) * static_cast<std::size_t>(total) +
                   static_cast<std::size_t>(u)] != 0;
  }
  std::size_t edge_count() const;
};

AdjacencyMask build_adjacency(const LatticeLayout& layout, DagVariant variant);

// Row-stochastic transition matrix E over allowed successors plus the
// per-node emission table P; log views are exact logs of the softmax
// (disallowed transitions are 0 linear / -inf log).
struct LatticeHeadsOut {
  Eigen::MatrixXd transition;       // (L+2) x (L+2)
  Eigen::MatrixXd log_transition;   // -inf at disallowed entries
  Eigen::MatrixXd emission;         // L x V
  Eigen::MatrixXd log_emission;
};

// Node feature matrix: row 0 the learned BOS state, rows 1..L the hidden
// states of the clone slots in layout order, row L+1 the learned EOS state.
Eigen::MatrixXd gather_node_features(const HiddenStates& hidden, const LatticeLayout& layout,
                                     const ModelWeights& w);

// Row softmax over the allowed successors only; disallowed entries come out
// exactly 0 (-inf in the log view). Throws "dead-end node" for a non-EOS
// row without successors.
void masked_row_softmax(const Eigen::MatrixXd& logits, const AdjacencyMask& adj,
                        Eigen::MatrixXd& out, Eigen::MatrixXd& log_out);

// Plain row softmax with exact log view.
void row_softmax(const Eigen::MatrixXd& logits, Eigen::MatrixXd& out,
                 Eigen::MatrixXd& log_out);

// E = row-softmax(Q K^T / sqrt(d)) restricted to allowed successors, with
// Q = N W_Q^T and K = N W_K^T over the node features N. Throws
// "dead-end node" if a non-EOS row ends up with no successor.
void compute_transitions(const Eigen::MatrixXd& node_features, const Eigen::MatrixXd& w_q,
                         const Eigen::MatrixXd& w_k, const AdjacencyMask& adj,
                         Eigen::MatrixXd& transition, Eigen::MatrixXd& log_transition);

// P = row-softmax(H_nodes W_P^T) over the emitting rows of the features.
void compute_emissions(const Eigen::MatrixXd& node_features, const Eigen::MatrixXd& w_p,
                       Eigen::MatrixXd& emission, Eigen::MatrixXd& log_emission);

LatticeHeadsOut compute_lattice_heads(const HiddenStates& hidden, const LatticeLayout& layout,
                                      const ModelWeights& w, const AdjacencyMask& adj);

// Chains loss gradients taken at the transition/emission logit boundary
// back to W_Q, W_K, W_P, the BOS/EOS states and the hidden-state rows.
// d_hidden must be preallocated to the hidden-state shape; contributions
// are accumulated.
void lattice_heads_backward(const Eigen::MatrixXd& node_features, const LatticeLayout& layout,
                            const ModelWeights& w, const Eigen::MatrixXd& d_transition_logits,
                            const Eigen::MatrixXd& d_emission_logits, ModelWeights& grads,
                            Eigen::MatrixXd& d_hidden);

}  // namespace exlm

#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "exlm/lattice_heads.hpp"

namespace exlm {

// Log-space forward/backward tables over the lattice. Row 0 is the BOS
// initialization; row i covers the state after emitting the first i
// targets. Structurally unreachable cells hold -inf.
struct AlignmentLattice {
  Eigen::MatrixXd log_alpha;  // (M+1) x (L+2)
  Eigen::MatrixXd log_beta;   // (M+1) x (L+2)
  double log_z = 0.0;
  std::vector<int> targets;
};

// alpha[i][u] = logsumexp over allowed v<u of (alpha[i-1][v] + logE[v][u])
//             + logP[u][y_i],
// with alpha[0][BOS] = 0; log Z folds the EOS transition:
// logZ = logsumexp_u(alpha[M][u] + logE[u][EOS]).
// Throws "infeasible lattice" when no complete path exists.
void forward_lattice(const Eigen::MatrixXd& log_emission, const Eigen::MatrixXd& log_transition,
                     std::span<const int> targets, const AdjacencyMask& adj,
                     Eigen::MatrixXd& log_alpha, double& log_z);

// beta[M][u] = logE[u][EOS];
// beta[i][u] = logsumexp over allowed v>u of
//              (logE[u][v] + logP[v][y_{i+1}] + beta[i+1][v]).
// beta[0][BOS] recomputes log Z.
void backward_lattice(const Eigen::MatrixXd& log_emission, const Eigen::MatrixXd& log_transition,
                      std::span<const int> targets, const AdjacencyMask& adj,
                      Eigen::MatrixXd& log_beta);

AlignmentLattice forward_backward(const Eigen::MatrixXd& log_emission,
                                  const Eigen::MatrixXd& log_transition,
                                  std::span<const int> targets, const AdjacencyMask& adj);

// States-alignment loss: -log Z.
double sa_loss(const Eigen::MatrixXd& log_emission, const Eigen::MatrixXd& log_transition,
               std::span<const int> targets, const AdjacencyMask& adj);

struct SaGradients {
  Eigen::MatrixXd d_emission;    // d(-logZ)/dP, L x V
  Eigen::MatrixXd d_transition;  // d(-logZ)/dE, (L+2) x (L+2); 0 at disallowed
};

// Derivatives of the negative log-likelihood w.r.t. the probability tables:
//   d(-logZ)/dP[u][y] = -sum_{i: y_i = y} alpha[i][u] beta[i][u] / (Z P[u][y])
//   d(-logZ)/dE[v][u] = -sum_i alpha[i-1][v] P[u][y_i] beta[i][u] / Z
// (the EOS column uses -alpha[M][u] / Z). Everything is evaluated in log
// space from the tables.
SaGradients sa_gradients(const AlignmentLattice& lattice, const Eigen::MatrixXd& log_emission,
                         const Eigen::MatrixXd& log_transition, const AdjacencyMask& adj);

struct SaLogitGradients {
  Eigen::MatrixXd d_transition_logits;  // (L+2) x (L+2), 0 at disallowed
  Eigen::MatrixXd d_emission_logits;    // L x V
};

// Gradients of -log Z chained through the two row softmaxes, expressed via
// node/edge occupancies (numerically safe where P or E underflow).
SaLogitGradients sa_logit_gradients(const AlignmentLattice& lattice,
                                    const Eigen::MatrixXd& emission,
                                    const Eigen::MatrixXd& transition,
                                    const Eigen::MatrixXd& log_emission,
                                    const Eigen::MatrixXd& log_transition,
                                    const AdjacencyMask& adj);

// Independent oracle: enumerates every strictly increasing node sequence
// u_1 < ... < u_M whose consecutive pairs (and BOS/EOS hops) are allowed,
// sums the exponentiated path scores and returns -log of the sum. Guarded
// to L <= 12, M <= 5 ("oracle size limit").
double brute_force_loss(const Eigen::MatrixXd& log_emission,
                        const Eigen::MatrixXd& log_transition, std::span<const int> targets,
                        const AdjacencyMask& adj);

struct BestPath {
  std::vector<int> nodes;  // emitting nodes, lattice indexing (1..L)
  double score = 0.0;      // log joint of the single best path
};

// Max-product analogue of the forward recursion; ties resolve to the
// smallest node index.
BestPath best_path(const Eigen::MatrixXd& log_emission, const Eigen::MatrixXd& log_transition,
                   std::span<const int> targets, const AdjacencyMask& adj);

}  // namespace exlm

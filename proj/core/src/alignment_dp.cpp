#include "exlm/alignment_dp.hpp"

#include <cmath>
#include <stdexcept>

#include "exlm/numeric.hpp"

namespace exlm {

namespace {

void check_inputs(const Eigen::MatrixXd& log_emission, const Eigen::MatrixXd& log_transition,
                  std::span<const int> targets, const AdjacencyMask& adj) {
  const int total = adj.total;
  const int L = total - 2;
  if (log_transition.rows() != total || log_transition.cols() != total) {
    throw std::invalid_argument("log_transition shape mismatch");
  }
  if (log_emission.rows() != L) {
    throw std::invalid_argument("log_emission must have one row per emitting node");
  }
  if (targets.empty()) {
    throw std::invalid_argument("at least one target required");
  }
  if (static_cast<int>(targets.size()) > L) {
    throw std::invalid_argument("more targets than emitting nodes");
  }
  for (int y : targets) {
    if (y < 0 || y >= log_emission.cols()) {
      throw std::invalid_argument("target id out of vocabulary range");
    }
  }
}

}  // namespace

void forward_lattice(const Eigen::MatrixXd& log_emission, const Eigen::MatrixXd& log_transition,
                     std::span<const int> targets, const AdjacencyMask& adj,
                     Eigen::MatrixXd& log_alpha, double& log_z) {
  check_inputs(log_emission, log_transition, targets, adj);
  const int total = adj.total;
  const int L = total - 2;
  const int M = static_cast<int>(targets.size());
  const int bos = 0;
  const int eos = total - 1;

  log_alpha = Eigen::MatrixXd::Constant(M + 1, total, kNegInf);
  log_alpha(0, bos) = 0.0;

  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(total));
  for (int i = 1; i <= M; ++i) {
    const int y = targets[static_cast<std::size_t>(i - 1)];
    for (int u = 1; u <= L; ++u) {
      terms.clear();
      for (int v : adj.predecessors[static_cast<std::size_t>(u)]) {
        const double a = log_alpha(i - 1, v);
        if (a == kNegInf) continue;
        terms.push_back(a + log_transition(v, u));
      }
      if (terms.empty()) continue;
      log_alpha(i, u) = logsumexp(terms) + log_emission(u - 1, y);
    }
  }

  terms.clear();
  for (int u : adj.predecessors[static_cast<std::size_t>(eos)]) {
    const double a = log_alpha(M, u);
    if (a == kNegInf) continue;
    terms.push_back(a + log_transition(u, eos));
  }
  log_z = logsumexp(terms);
  if (log_z == kNegInf) {
    throw std::runtime_error("infeasible lattice");
  }
}

void backward_lattice(const Eigen::MatrixXd& log_emission, const Eigen::MatrixXd& log_transition,
                      std::span<const int> targets, const AdjacencyMask& adj,
                      Eigen::MatrixXd& log_beta) {
  check_inputs(log_emission, log_transition, targets, adj);
  const int total = adj.total;
  const int L = total - 2;
  const int M = static_cast<int>(targets.size());
  const int bos = 0;
  const int eos = total - 1;

  log_beta = Eigen::MatrixXd::Constant(M + 1, total, kNegInf);
  for (int u = 1; u <= L; ++u) {
    log_beta(M, u) = log_transition(u, eos);  // -inf where not allowed
  }

  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(total));
  for (int i = M - 1; i >= 0; --i) {
    const int y_next = targets[static_cast<std::size_t>(i)];
    const int lo = i == 0 ? bos : 1;
    for (int u = lo; u <= (i == 0 ? bos : L); ++u) {
      terms.clear();
      for (int v : adj.successors[static_cast<std::size_t>(u)]) {
        if (v == eos) continue;
        const double b = log_beta(i + 1, v);
        if (b == kNegInf) continue;
        terms.push_back(log_transition(u, v) + log_emission(v - 1, y_next) + b);
      }
      if (!terms.empty()) log_beta(i, u) = logsumexp(terms);
    }
  }
}

AlignmentLattice forward_backward(const Eigen::MatrixXd& log_emission,
                                  const Eigen::MatrixXd& log_transition,
                                  std::span<const int> targets, const AdjacencyMask& adj) {
  AlignmentLattice lattice;
  lattice.targets.assign(targets.begin(), targets.end());
  forward_lattice(log_emission, log_transition, targets, adj, lattice.log_alpha,
                  lattice.log_z);
  backward_lattice(log_emission, log_transition, targets, adj, lattice.log_beta);
  return lattice;
}

double sa_loss(const Eigen::MatrixXd& log_emission, const Eigen::MatrixXd& log_transition,
               std::span<const int> targets, const AdjacencyMask& adj) {
  Eigen::MatrixXd log_alpha;
  double log_z = 0.0;
  forward_lattice(log_emission, log_transition, targets, adj, log_alpha, log_z);
  return -log_z;
}

SaGradients sa_gradients(const AlignmentLattice& lattice, const Eigen::MatrixXd& log_emission,
                         const Eigen::MatrixXd& log_transition, const AdjacencyMask& adj) {
  const int total = adj.total;
  const int L = total - 2;
  const int M = static_cast<int>(lattice.targets.size());
  const int eos = total - 1;
  const Eigen::MatrixXd& la = lattice.log_alpha;
  const Eigen::MatrixXd& lb = lattice.log_beta;
  const double log_z = lattice.log_z;

  SaGradients g;
  g.d_emission = Eigen::MatrixXd::Zero(L, log_emission.cols());
  g.d_transition = Eigen::MatrixXd::Zero(total, total);

  // Emissions: occupancy gamma_i(u) already contains one factor of
  // P[u][y_i]; dividing it out in log space keeps the ratio exact.
  for (int u = 1; u <= L; ++u) {
    for (int i = 1; i <= M; ++i) {
      const int y = lattice.targets[static_cast<std::size_t>(i - 1)];
      const double num = la(i, u) + lb(i, u);
      if (num == kNegInf) continue;
      g.d_emission(u - 1, y) -= std::exp(num - log_z - log_emission(u - 1, y));
    }
  }

  // Transitions: paths through (v,u) emitting y_i contribute
  // alpha[i-1][v] P[u][y_i] beta[i][u]; the edge factor is already absent.
  for (int v = 0; v < total - 1; ++v) {
    for (int u : adj.successors[static_cast<std::size_t>(v)]) {
      if (u == eos) {
        const double a = la(M, v);
        if (a != kNegInf) g.d_transition(v, u) -= std::exp(a - log_z);
        continue;
      }
      LogSumExpAcc acc;
      for (int i = 1; i <= M; ++i) {
        const int y = lattice.targets[static_cast<std::size_t>(i - 1)];
        const double a = la(i - 1, v);
        const double b = lb(i, u);
        if (a == kNegInf || b == kNegInf) continue;
        acc.add(a + log_emission(u - 1, y) + b);
      }
      const double num = acc.value();
      if (num != kNegInf) g.d_transition(v, u) -= std::exp(num - log_z);
    }
  }
  return g;
}

SaLogitGradients sa_logit_gradients(const AlignmentLattice& lattice,
                                    const Eigen::MatrixXd& emission,
                                    const Eigen::MatrixXd& transition,
                                    const Eigen::MatrixXd& log_emission,
                                    const Eigen::MatrixXd& log_transition,
                                    const AdjacencyMask& adj) {
  const int total = adj.total;
  const int L = total - 2;
  const int M = static_cast<int>(lattice.targets.size());
  const int eos = total - 1;
  const Eigen::MatrixXd& la = lattice.log_alpha;
  const Eigen::MatrixXd& lb = lattice.log_beta;
  const double log_z = lattice.log_z;

  SaLogitGradients g;
  g.d_transition_logits = Eigen::MatrixXd::Zero(total, total);
  g.d_emission_logits = Eigen::MatrixXd::Zero(L, emission.cols());

  // Node occupancies: gamma_i(u) = exp(alpha[i][u] + beta[i][u] - logZ).
  Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(M + 1, total);
  for (int i = 1; i <= M; ++i) {
    for (int u = 1; u <= L; ++u) {
      const double num = la(i, u) + lb(i, u);
      if (num != kNegInf) gamma(i, u) = std::exp(num - log_z);
    }
  }

  // Emission-logit gradient per row u: P[u][:] * (total occupancy) minus
  // the occupancy mass routed to each emitted target.
  for (int u = 1; u <= L; ++u) {
    double occ = 0.0;
    for (int i = 1; i <= M; ++i) occ += gamma(i, u);
    if (occ == 0.0) continue;
    g.d_emission_logits.row(u - 1) = emission.row(u - 1) * occ;
    for (int i = 1; i <= M; ++i) {
      const int y = lattice.targets[static_cast<std::size_t>(i - 1)];
      g.d_emission_logits(u - 1, y) -= gamma(i, u);
    }
  }

  // Edge occupancies xi(v,u), then the row-softmax chain rule:
  // dT[v][u] = -xi(v,u) + E[v][u] * sum_w xi(v,w).
  Eigen::MatrixXd xi = Eigen::MatrixXd::Zero(total, total);
  for (int v = 0; v < total - 1; ++v) {
    for (int u : adj.successors[static_cast<std::size_t>(v)]) {
      if (u == eos) {
        const double a = la(M, v);
        const double t = log_transition(v, u);
        if (a != kNegInf && t != kNegInf) xi(v, u) = std::exp(a + t - log_z);
        continue;
      }
      LogSumExpAcc acc;
      for (int i = 1; i <= M; ++i) {
        const int y = lattice.targets[static_cast<std::size_t>(i - 1)];
        const double a = la(i - 1, v);
        const double b = lb(i, u);
        if (a == kNegInf || b == kNegInf) continue;
        acc.add(a + log_transition(v, u) + log_emission(u - 1, y) + b);
      }
      const double num = acc.value();
      if (num != kNegInf) xi(v, u) = std::exp(num - log_z);
    }
  }
  for (int v = 0; v < total - 1; ++v) {
    const auto& succ = adj.successors[static_cast<std::size_t>(v)];
    if (succ.empty()) continue;
    double row_mass = 0.0;
    for (int u : succ) row_mass += xi(v, u);
    if (row_mass == 0.0) continue;
    for (int u : succ) {
      g.d_transition_logits(v, u) = transition(v, u) * row_mass - xi(v, u);
    }
  }
  return g;
}

double brute_force_loss(const Eigen::MatrixXd& log_emission,
                        const Eigen::MatrixXd& log_transition, std::span<const int> targets,
                        const AdjacencyMask& adj) {
  check_inputs(log_emission, log_transition, targets, adj);
  const int total = adj.total;
  const int L = total - 2;
  const int M = static_cast<int>(targets.size());
  if (L > 12 || M > 5) {
    throw std::runtime_error("oracle size limit");
  }
  const int bos = 0;
  const int eos = total - 1;

  double sum = 0.0;
  // Depth-first over strictly increasing node choices; score carries the
  // log of transitions and emissions so far.
  auto recurse = [&](auto&& self, int depth, int prev, double score) -> void {
    if (depth == M) {
      if (adj.is_allowed(prev, eos)) {
        sum += std::exp(score + log_transition(prev, eos));
      }
      return;
    }
    const int y = targets[static_cast<std::size_t>(depth)];
    for (int u = prev + 1; u <= L; ++u) {
      if (!adj.is_allowed(prev, u)) continue;
      self(self, depth + 1, u,
           score + log_transition(prev, u) + log_emission(u - 1, y));
    }
  };
  recurse(recurse, 0, bos, 0.0);
  if (sum <= 0.0) {
    throw std::runtime_error("infeasible lattice");
  }
  return -std::log(sum);
}

BestPath best_path(const Eigen::MatrixXd& log_emission, const Eigen::MatrixXd& log_transition,
                   std::span<const int> targets, const AdjacencyMask& adj) {
  check_inputs(log_emission, log_transition, targets, adj);
  const int total = adj.total;
  const int L = total - 2;
  const int M = static_cast<int>(targets.size());
  const int eos = total - 1;

  Eigen::MatrixXd score = Eigen::MatrixXd::Constant(M + 1, total, kNegInf);
  Eigen::MatrixXi back = Eigen::MatrixXi::Constant(M + 1, total, -1);
  score(0, 0) = 0.0;

  for (int i = 1; i <= M; ++i) {
    const int y = targets[static_cast<std::size_t>(i - 1)];
    for (int u = 1; u <= L; ++u) {
      double best = kNegInf;
      int arg = -1;
      for (int v : adj.predecessors[static_cast<std::size_t>(u)]) {
        const double s = score(i - 1, v);
        if (s == kNegInf) continue;
        const double cand = s + log_transition(v, u);
        if (cand > best) {
          best = cand;
          arg = v;
        }
      }
      if (arg >= 0) {
        score(i, u) = best + log_emission(u - 1, y);
        back(i, u) = arg;
      }
    }
  }

  double best = kNegInf;
  int arg = -1;
  for (int u : adj.predecessors[static_cast<std::size_t>(eos)]) {
    const double s = score(M, u);
    if (s == kNegInf) continue;
    const double cand = s + log_transition(u, eos);
    if (cand > best) {
      best = cand;
      arg = u;
    }
  }
  if (arg < 0) {
    throw std::runtime_error("infeasible lattice");
  }

  BestPath out;
  out.score = best;
  out.nodes.resize(static_cast<std::size_t>(M));
  int u = arg;
  for (int i = M; i >= 1; --i) {
    out.nodes[static_cast<std::size_t>(i - 1)] = u;
    u = back(i, u);
  }
  return out;
}

}  // namespace exlm

#include "exlm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "exlm/analysis.hpp"
#include "exlm/io.hpp"
#include "exlm/numeric.hpp"
#include "exlm/rng.hpp"
#include "exlm/threading.hpp"

namespace exlm {

namespace {

constexpr double kAdamEps = 1e-8;

// Seed-derivation tags so the init / batch / mask / eval streams never
// collide.
constexpr std::uint64_t kTagInit = 0x11;
constexpr std::uint64_t kTagBatch = 0x22;
constexpr std::uint64_t kTagMask = 0x33;
constexpr std::uint64_t kTagEval = 0x44;

Objective objective_from_string(const std::string& s) {
  if (s == "exlm") return Objective::exlm;
  if (s == "mlm") return Objective::mlm;
  throw std::invalid_argument("unknown objective: " + s);
}

DagVariant variant_from_string(const std::string& s) {
  if (s == "dense") return DagVariant::dense;
  if (s == "sparse") return DagVariant::sparse;
  throw std::invalid_argument("unknown variant: " + s);
}

// The corrupted sequence as a trivial expansion: positions (j, 0), no clones.
ExpandedSequence plain_sequence(const TokenSequence& seq) {
  ExpandedSequence es;
  es.ids = seq.ids;
  es.pos2d.resize(seq.ids.size());
  es.origin.resize(seq.ids.size());
  for (int t = 0; t < seq.length(); ++t) {
    es.pos2d[static_cast<std::size_t>(t)] = {t, 0};
    es.origin[static_cast<std::size_t>(t)] = t;
  }
  return es;
}

struct SampleWork {
  double loss_sum = 0.0;
  int masked = 0;
  int correct = 0;
  double entropy_sum = 0.0;
  int entropy_count = 0;
  std::optional<ModelWeights> grads;
};

SampleWork process_exlm_sample(const MaskedSample& ms, const ModelWeights& w,
                               const TrainConfig& cfg, bool want_grads, bool want_metrics) {
  SampleWork work;
  ExlmForwardResult f = exlm_forward(ms, w, cfg.expansion, cfg.variant, want_grads);
  work.loss_sum = f.loss_sum;
  work.masked = ms.num_masked();

  if (want_metrics) {
    const BestPath path = best_path(f.heads.log_emission, f.heads.log_transition,
                                    ms.targets, f.adj);
    for (std::size_t j = 0; j < path.nodes.size(); ++j) {
      Eigen::Index argmax = 0;
      f.heads.emission.row(path.nodes[j] - 1).maxCoeff(&argmax);
      if (static_cast<int>(argmax) == ms.targets[j]) ++work.correct;
    }
    for (int u = 1; u <= f.layout.num_nodes(); ++u) {
      work.entropy_sum += distribution_entropy(
          Eigen::VectorXd(f.heads.emission.row(u - 1).transpose()));
      ++work.entropy_count;
    }
  }
  if (want_grads) {
    work.grads = zeros_like(w);
    exlm_backward(f, w, 1.0, *work.grads);
  }
  return work;
}

SampleWork process_mlm_sample(const MaskedSample& ms, const ModelWeights& w,
                              const TrainConfig& cfg, bool want_grads, bool want_metrics) {
  (void)cfg;
  SampleWork work;
  const ExpandedSequence es = plain_sequence(ms.corrupted);
  ForwardCache cache;
  const HiddenStates hidden = encoder_forward(es, w, want_grads ? &cache : nullptr);
  const int m = ms.num_masked();
  work.masked = m;

  // Softmax rows at the masked positions.
  Eigen::MatrixXd probs(m, w.config.vocab_size);
  for (int j = 0; j < m; ++j) {
    const Eigen::RowVectorXd logits =
        hidden.row(ms.masked_positions[static_cast<std::size_t>(j)]) * w.head_p.transpose();
    const double hi = logits.maxCoeff();
    const double log_norm = hi + std::log((logits.array() - hi).exp().sum());
    probs.row(j) = (logits.array() - log_norm).exp();
    work.loss_sum -= logits(ms.targets[static_cast<std::size_t>(j)]) - log_norm;
  }

  if (want_metrics) {
    for (int j = 0; j < m; ++j) {
      Eigen::Index argmax = 0;
      probs.row(j).maxCoeff(&argmax);
      if (static_cast<int>(argmax) == ms.targets[static_cast<std::size_t>(j)]) ++work.correct;
      work.entropy_sum +=
          distribution_entropy(Eigen::VectorXd(probs.row(j).transpose()));
      ++work.entropy_count;
    }
  }

  if (want_grads) {
    work.grads = zeros_like(w);
    Eigen::MatrixXd d_hidden = Eigen::MatrixXd::Zero(hidden.rows(), hidden.cols());
    for (int j = 0; j < m; ++j) {
      Eigen::RowVectorXd d_logits = probs.row(j);
      d_logits(ms.targets[static_cast<std::size_t>(j)]) -= 1.0;
      const int row = ms.masked_positions[static_cast<std::size_t>(j)];
      d_hidden.row(row) += d_logits * w.head_p;
      work.grads->head_p += d_logits.transpose() * hidden.row(row);
    }
    encoder_backward(es, w, cache, d_hidden, *work.grads);
  }
  return work;
}

void accumulate_scaled(ModelWeights& into, const ModelWeights& from, double scale) {
  auto views_into = parameters(into);
  auto views_from = parameters(const_cast<ModelWeights&>(from));
  for (std::size_t i = 0; i < views_into.size(); ++i) {
    Eigen::Map<Eigen::VectorXd> dst(views_into[i].data, views_into[i].size());
    Eigen::Map<const Eigen::VectorXd> src(views_from[i].data, views_from[i].size());
    dst += scale * src;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
    throw std::invalid_argument("mask_ratio must lie in (0,1)");
  }
  if (expansion < 1) throw std::invalid_argument("expansion must be >= 1");
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (mask_policy != "mask_only") {
    throw std::invalid_argument("mask_policy: only \"mask_only\" is supported");
  }
  model.validate();
}

TrainConfig TrainConfig::from_json_file(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(read_file(path));
  TrainConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") cfg.seed = value.get<std::uint64_t>();
    else if (key == "steps") cfg.steps = value.get<int>();
    else if (key == "batch_size") cfg.batch_size = value.get<int>();
    else if (key == "mask_ratio") cfg.mask_ratio = value.get<double>();
    else if (key == "expansion") cfg.expansion = value.get<int>();
    else if (key == "variant") cfg.variant = variant_from_string(value.get<std::string>());
    else if (key == "learning_rate") cfg.learning_rate = value.get<double>();
    else if (key == "adam_beta1") cfg.adam_beta1 = value.get<double>();
    else if (key == "adam_beta2") cfg.adam_beta2 = value.get<double>();
    else if (key == "weight_decay") cfg.weight_decay = value.get<double>();
    else if (key == "clip_norm") cfg.clip_norm = value.get<double>();
    else if (key == "eval_every") cfg.eval_every = value.get<int>();
    else if (key == "objective") cfg.objective = objective_from_string(value.get<std::string>());
    else if (key == "mask_policy") cfg.mask_policy = value.get<std::string>();
    else if (key == "layers") cfg.model.layers = value.get<int>();
    else if (key == "heads") cfg.model.heads = value.get<int>();
    else if (key == "model_dim") cfg.model.model_dim = value.get<int>();
    else if (key == "ffn_dim") cfg.model.ffn_dim = value.get<int>();
    else if (key == "rope_base") cfg.model.rope_base = value.get<double>();
    else throw std::invalid_argument("unknown config key: " + key);
  }
  return cfg;
}

ExlmForwardResult exlm_forward(const MaskedSample& ms, const ModelWeights& w, int k,
                               DagVariant variant, bool need_cache) {
  ExlmForwardResult f;
  f.es = expand_masks(ms, k);
  f.layout = build_layout(f.es);
  f.adj = build_adjacency(f.layout, variant);
  f.hidden = encoder_forward(f.es, w, need_cache ? &f.cache : nullptr);
  f.node_features = gather_node_features(f.hidden, f.layout, w);
  compute_transitions(f.node_features, w.head_q, w.head_k, f.adj, f.heads.transition,
                      f.heads.log_transition);
  compute_emissions(f.node_features, w.head_p, f.heads.emission, f.heads.log_emission);
  f.lattice = forward_backward(f.heads.log_emission, f.heads.log_transition, ms.targets, f.adj);
  f.loss_sum = -f.lattice.log_z;
  return f;
}

void exlm_backward(const ExlmForwardResult& f, const ModelWeights& w, double scale,
                   ModelWeights& grads) {
  SaLogitGradients lg =
      sa_logit_gradients(f.lattice, f.heads.emission, f.heads.transition,
                         f.heads.log_emission, f.heads.log_transition, f.adj);
  lg.d_transition_logits *= scale;
  lg.d_emission_logits *= scale;

  Eigen::MatrixXd d_hidden = Eigen::MatrixXd::Zero(f.hidden.rows(), f.hidden.cols());
  lattice_heads_backward(f.node_features, f.layout, w, lg.d_transition_logits,
                         lg.d_emission_logits, grads, d_hidden);
  encoder_backward(f.es, w, f.cache, d_hidden, grads);
}

double mlm_loss(const HiddenStates& hidden, std::span<const int> masked_positions,
                const Eigen::MatrixXd& w_p, std::span<const int> targets) {
  if (masked_positions.empty() || masked_positions.size() != targets.size()) {
    throw std::invalid_argument("mlm_loss: positions/targets mismatch");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < masked_positions.size(); ++j) {
    const Eigen::RowVectorXd logits = hidden.row(masked_positions[j]) * w_p.transpose();
    const double hi = logits.maxCoeff();
    const double log_norm = hi + std::log((logits.array() - hi).exp().sum());
    total -= logits(targets[j]) - log_norm;
  }
  return total / static_cast<double>(masked_positions.size());
}

BatchStats batch_forward_backward(std::span<const MaskedSample> batch, const ModelWeights& w,
                                  const TrainConfig& cfg, ModelWeights* grads) {
  const bool want_grads = grads != nullptr;
  std::vector<SampleWork> work(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    work[i] = cfg.objective == Objective::exlm
                  ? process_exlm_sample(batch[i], w, cfg, want_grads, true)
                  : process_mlm_sample(batch[i], w, cfg, want_grads, true);
  });

  BatchStats stats;
  double loss_sum = 0.0;
  double entropy_sum = 0.0;
  int entropy_count = 0;
  int correct = 0;
  for (const auto& s : work) {
    loss_sum += s.loss_sum;
    stats.masked_tokens += s.masked;
    correct += s.correct;
    entropy_sum += s.entropy_sum;
    entropy_count += s.entropy_count;
  }
  stats.loss = loss_sum / static_cast<double>(stats.masked_tokens);
  stats.acc = static_cast<double>(correct) / static_cast<double>(stats.masked_tokens);
  stats.entropy_bits = entropy_count ? entropy_sum / entropy_count : 0.0;

  if (want_grads) {
    const double scale = 1.0 / static_cast<double>(stats.masked_tokens);
    for (const auto& s : work) {
      accumulate_scaled(*grads, *s.grads, scale);  // fixed order: deterministic
    }
  }
  return stats;
}

AdamState make_adam_state(const ModelWeights& w) {
  AdamState s;
  const auto n = static_cast<std::size_t>(parameter_count(w));
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  return s;
}

void adam_update(ModelWeights& w, const ModelWeights& grads, AdamState& opt,
                 const TrainConfig& cfg) {
  auto w_views = parameters(w);
  auto g_views = parameters(const_cast<ModelWeights&>(grads));

  double clip_scale = 1.0;
  if (cfg.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& v : g_views) {
      Eigen::Map<const Eigen::VectorXd> g(v.data, v.size());
      sq += g.squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) clip_scale = cfg.clip_norm / norm;
  }

  opt.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(opt.t));

  std::size_t offset = 0;
  for (std::size_t vi = 0; vi < w_views.size(); ++vi) {
    const auto size = static_cast<std::size_t>(w_views[vi].size());
    double* wp = w_views[vi].data;
    const double* gp = g_views[vi].data;
    for (std::size_t i = 0; i < size; ++i) {
      const double g = gp[i] * clip_scale;
      double& m = opt.m[offset + i];
      double& v = opt.v[offset + i];
      m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
      v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g;
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      wp[i] -= cfg.learning_rate *
               (m_hat / (std::sqrt(v_hat) + kAdamEps) + cfg.weight_decay * wp[i]);
    }
    offset += size;
  }
}

BatchStats train_step(std::span<const MaskedSample> batch, ModelWeights& w, AdamState& opt,
                      const TrainConfig& cfg, int step_index) {
  ModelWeights grads = zeros_like(w);
  const BatchStats stats = batch_forward_backward(batch, w, cfg, &grads);
  if (!std::isfinite(stats.loss)) {
    throw std::runtime_error("non-finite loss at step " + std::to_string(step_index));
  }
  adam_update(w, grads, opt, cfg);
  return stats;
}

double gradient_check(const ModelWeights& w, std::span<const MaskedSample> batch,
                      const TrainConfig& cfg, double epsilon, int min_coords,
                      std::uint64_t seed, std::vector<GradCheckRow>* out_rows) {
  ModelWeights grads = zeros_like(w);
  batch_forward_backward(batch, w, cfg, &grads);

  ModelWeights probe = w;  // mutated in place coordinate by coordinate
  auto probe_views = parameters(probe);
  auto grad_views = parameters(grads);

  const auto loss_at = [&]() {
    return batch_forward_backward(batch, probe, cfg, nullptr).loss;
  };

  // Two coordinates from every tensor, then uniform over the rest.
  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  Rng rng(Rng::derive(seed, 0x6C));
  for (std::size_t vi = 0; vi < probe_views.size(); ++vi) {
    const auto size = probe_views[vi].size();
    coords.emplace_back(vi, static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(size))));
    coords.emplace_back(vi, static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(size))));
  }
  const Eigen::Index total = parameter_count(w);
  std::vector<Eigen::Index> tensor_starts(probe_views.size());
  Eigen::Index acc = 0;
  for (std::size_t vi = 0; vi < probe_views.size(); ++vi) {
    tensor_starts[vi] = acc;
    acc += probe_views[vi].size();
  }
  while (static_cast<int>(coords.size()) < min_coords) {
    const auto flat = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(total)));
    std::size_t vi = 0;
    while (vi + 1 < probe_views.size() && tensor_starts[vi + 1] <= flat) ++vi;
    coords.emplace_back(vi, flat - tensor_starts[vi]);
  }

  double max_rel = 0.0;
  for (const auto& [vi, idx] : coords) {
    double* slot = probe_views[vi].data + idx;
    const double saved = *slot;
    *slot = saved + epsilon;
    const double up = loss_at();
    *slot = saved - epsilon;
    const double down = loss_at();
    *slot = saved;

    const double numeric = (up - down) / (2.0 * epsilon);
    const double analytic = grad_views[vi].data[idx];
    const double rel = std::abs(analytic - numeric) /
                       std::max({1.0, std::abs(analytic), std::abs(numeric)});
    max_rel = std::max(max_rel, rel);
    if (out_rows) {
      out_rows->push_back({probe_views[vi].name, idx, analytic, numeric, rel});
    }
  }
  return max_rel;
}

std::vector<MaskedSample> make_batch(std::span<const TokenSequence> corpus,
                                     const TrainConfig& cfg, int step) {
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  Rng pick(Rng::derive(cfg.seed, kTagBatch, static_cast<std::uint64_t>(step)));
  std::vector<MaskedSample> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int j = 0; j < cfg.batch_size; ++j) {
    const auto& seq = corpus[pick.below(corpus.size())];
    Rng mask_rng(Rng::derive(cfg.seed, kTagMask,
                             static_cast<std::uint64_t>(step) * cfg.batch_size +
                                 static_cast<std::uint64_t>(j)));
    batch.push_back(apply_mask(seq, cfg.mask_ratio, mask_rng));
  }
  return batch;
}

EvalStats evaluate(std::span<const TokenSequence> seqs, const ModelWeights& w,
                   const TrainConfig& cfg, std::uint64_t eval_seed) {
  std::vector<MaskedSample> samples;
  samples.reserve(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    Rng rng(Rng::derive(eval_seed, kTagEval, i));
    samples.push_back(apply_mask(seqs[i], cfg.mask_ratio, rng));
  }
  const BatchStats stats = batch_forward_backward(samples, w, cfg, nullptr);
  return {stats.loss, stats.acc, stats.entropy_bits};
}

namespace {

void fill_opt_from_checkpoint(const Checkpoint& ckpt, AdamState& opt) {
  const CheckpointTensor* m = ckpt.find("adam.m");
  const CheckpointTensor* v = ckpt.find("adam.v");
  if (!m || !v) throw std::runtime_error("checkpoint has no optimizer state");
  opt.m = m->data;
  opt.v = v->data;
  opt.t = std::stoll(ckpt.meta.at("adam_t"));
}

}  // namespace

TrainResult run_training(const TrainConfig& cfg, std::span<const TokenSequence> corpus,
                         const std::filesystem::path& out_dir,
                         const std::filesystem::path* resume_prefix,
                         const std::function<void(const MetricsRow&)>& on_row) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("empty corpus");

  ModelWeights weights = ModelWeights::init(cfg.model, Rng::derive(cfg.seed, kTagInit));
  AdamState opt = make_adam_state(weights);
  int start_step = 1;
  if (resume_prefix) {
    const Checkpoint ckpt = load_checkpoint(*resume_prefix);
    weights = weights_from_checkpoint(ckpt);
    opt = make_adam_state(weights);
    fill_opt_from_checkpoint(ckpt, opt);
    start_step = std::stoi(ckpt.meta.at("step")) + 1;
  }

  TrainResult result;
  for (int step = start_step; step <= cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batch = make_batch(corpus, cfg, step);
    const BatchStats stats = train_step(batch, weights, opt, cfg, step);
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    if (step == 1 || step % cfg.eval_every == 0 || step == cfg.steps) {
      const MetricsRow row{step, stats.loss, stats.acc, stats.entropy_bits, wall_ms};
      result.metrics.push_back(row);
      if (on_row) on_row(row);
    }
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_file_atomic(out_dir / "metrics.tsv", metrics_to_tsv(result.metrics));
    Checkpoint ckpt = weights_to_checkpoint(weights);
    ckpt.meta["step"] = std::to_string(cfg.steps);
    ckpt.meta["adam_t"] = std::to_string(opt.t);
    ckpt.meta["objective"] = cfg.objective == Objective::exlm ? "exlm" : "mlm";
    ckpt.meta["expansion"] = std::to_string(cfg.expansion);
    ckpt.meta["variant"] = cfg.variant == DagVariant::dense ? "dense" : "sparse";
    ckpt.meta["seed"] = std::to_string(cfg.seed);
    ckpt.tensors.push_back(
        {"adam.m", {static_cast<std::int64_t>(opt.m.size()), 1}, opt.m});
    ckpt.tensors.push_back(
        {"adam.v", {static_cast<std::int64_t>(opt.v.size()), 1}, opt.v});
    save_checkpoint(ckpt, out_dir / "checkpoint");
  }

  result.weights = std::move(weights);
  result.opt = std::move(opt);
  return result;
}

std::string metrics_to_tsv(std::span<const MetricsRow> rows) {
  std::string out = "step\tloss\tacc\tentropy_bits\twall_ms\n";
  for (const auto& r : rows) {
    out += fmt::format("{}\t{:.10g}\t{:.6g}\t{:.6g}\t{:.3f}\n", r.step, r.loss, r.acc,
                       r.entropy_bits, r.wall_ms);
  }
  return out;
}

}  // namespace exlm

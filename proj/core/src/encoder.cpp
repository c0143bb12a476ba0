#include "exlm/encoder.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "exlm/rng.hpp"

namespace exlm {

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// y = xhat * scale + offset rowwise, with xhat = (x - mean) * rstd.
void layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& scale,
                const Eigen::VectorXd& offset, Eigen::MatrixXd& xhat,
                Eigen::ArrayXd& rstd, Eigen::MatrixXd& out) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  xhat.resize(n, d);
  rstd.resize(n);
  out.resize(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    rstd(r) = rs;
    xhat.row(r) = (x.row(r).array() - mean) * rs;
    out.row(r) = xhat.row(r).cwiseProduct(scale.transpose()) + offset.transpose();
  }
}

void layer_norm_backward(const Eigen::MatrixXd& d_out, const Eigen::MatrixXd& xhat,
                         const Eigen::ArrayXd& rstd, const Eigen::VectorXd& scale,
                         Eigen::MatrixXd& d_x, Eigen::VectorXd& d_scale,
                         Eigen::VectorXd& d_offset) {
  const Eigen::Index n = d_out.rows();
  const Eigen::Index d = d_out.cols();
  d_x.resize(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::RowVectorXd d_xhat = d_out.row(r).cwiseProduct(scale.transpose());
    const double m1 = d_xhat.mean();
    const double m2 = d_xhat.cwiseProduct(xhat.row(r)).mean();
    d_x.row(r) = rstd(r) * (d_xhat.array() - m1 - xhat.row(r).array() * m2);
  }
  d_scale += (d_out.cwiseProduct(xhat)).colwise().sum().transpose();
  d_offset += d_out.colwise().sum().transpose();
}

// a = softmax(s) rowwise with max subtraction.
void softmax_rows(Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double hi = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - hi).exp();
    m.row(r) /= m.row(r).sum();
  }
}

// ds for a = softmax(s): ds = a * (da - <da, a>).
Eigen::MatrixXd softmax_rows_backward(const Eigen::MatrixXd& a, const Eigen::MatrixXd& da) {
  Eigen::MatrixXd ds(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double dot = da.row(r).dot(a.row(r));
    ds.row(r) = a.row(r).cwiseProduct((da.row(r).array() - dot).matrix());
  }
  return ds;
}

void check_finite(const Eigen::MatrixXd& m, int layer_1based) {
  if (!m.allFinite()) {
    throw std::runtime_error("numeric overflow at layer " + std::to_string(layer_1based));
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("layers must be >= 1");
  if (heads < 1) throw std::invalid_argument("heads must be >= 1");
  if (model_dim < 1 || model_dim % (2 * heads) != 0) {
    throw std::invalid_argument("model_dim must be divisible by 2*heads");
  }
  if (head_dim() % 4 != 0) {
    throw std::invalid_argument("head_dim must be divisible by 4 for the axial rotary split");
  }
  if (ffn_dim < 1) throw std::invalid_argument("ffn_dim must be >= 1");
  if (vocab_size < Vocabulary::kNumSpecials) {
    throw std::invalid_argument("vocab_size must cover the reserved tokens");
  }
  if (!(rope_base > 0.0)) throw std::invalid_argument("rope_base must be positive");
  if (dropout != 0.0) {
    throw std::invalid_argument("dropout is reserved and must be 0");
  }
}

ModelWeights ModelWeights::init(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(Rng::derive(seed, 0x1417));
  constexpr double kStd = 0.02;
  auto normal_matrix = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, kStd);
    return m;
  };

  ModelWeights w;
  w.config = cfg;
  const int d = cfg.model_dim;
  w.token_embedding = normal_matrix(cfg.vocab_size, d);
  w.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& l : w.layers) {
    l.attn_q = normal_matrix(d, d);
    l.attn_k = normal_matrix(d, d);
    l.attn_v = normal_matrix(d, d);
    l.attn_out = normal_matrix(d, d);
    l.attn_q_bias = Eigen::VectorXd::Zero(d);
    l.attn_k_bias = Eigen::VectorXd::Zero(d);
    l.attn_v_bias = Eigen::VectorXd::Zero(d);
    l.attn_out_bias = Eigen::VectorXd::Zero(d);
    l.ln1_scale = Eigen::VectorXd::Ones(d);
    l.ln1_offset = Eigen::VectorXd::Zero(d);
    l.ln2_scale = Eigen::VectorXd::Ones(d);
    l.ln2_offset = Eigen::VectorXd::Zero(d);
    l.ffn_in = normal_matrix(cfg.ffn_dim, d);
    l.ffn_in_bias = Eigen::VectorXd::Zero(cfg.ffn_dim);
    l.ffn_out = normal_matrix(d, cfg.ffn_dim);
    l.ffn_out_bias = Eigen::VectorXd::Zero(d);
  }
  w.final_ln_scale = Eigen::VectorXd::Ones(d);
  w.final_ln_offset = Eigen::VectorXd::Zero(d);
  w.head_q = normal_matrix(d, d);
  w.head_k = normal_matrix(d, d);
  w.head_p = normal_matrix(cfg.vocab_size, d);
  w.bos_state = normal_matrix(d, 1);
  w.eos_state = normal_matrix(d, 1);
  return w;
}

ModelWeights zeros_like(const ModelWeights& w) {
  ModelWeights z = w;
  visit_params(z, [](const std::string&, auto& tensor) { tensor.setZero(); });
  return z;
}

std::vector<ParamView> parameters(ModelWeights& w) {
  std::vector<ParamView> out;
  visit_params(w, [&out](const std::string& name, auto& tensor) {
    out.push_back({name, tensor.data(), tensor.rows(), tensor.cols()});
  });
  return out;
}

Eigen::Index parameter_count(const ModelWeights& w) {
  Eigen::Index total = 0;
  visit_params(const_cast<ModelWeights&>(w),
               [&total](const std::string&, auto& tensor) { total += tensor.size(); });
  return total;
}

void rope2d_inplace(RowRef vec, Pos2d pos, double base, bool inverse) {
  const Eigen::Index hd = vec.size();
  const Eigen::Index half = hd / 2;
  const double sign = inverse ? -1.0 : 1.0;
  for (int axis = 0; axis < 2; ++axis) {
    const double position = axis == 0 ? pos.seq_pos : pos.clone_idx;
    const Eigen::Index off = axis * half;
    for (Eigen::Index t = 0; t < half / 2; ++t) {
      const double theta = std::pow(base, -2.0 * static_cast<double>(t) /
                                              static_cast<double>(half));
      const double angle = sign * position * theta;
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      const double x = vec(off + 2 * t);
      const double y = vec(off + 2 * t + 1);
      vec(off + 2 * t) = x * c - y * s;
      vec(off + 2 * t + 1) = x * s + y * c;
    }
  }
}

Eigen::VectorXd rope2d(const Eigen::VectorXd& vec, Pos2d pos, double base) {
  Eigen::RowVectorXd row = vec.transpose();
  rope2d_inplace(row, pos, base);
  return row.transpose();
}

HiddenStates encoder_forward(const ExpandedSequence& es, const ModelWeights& w,
                             ForwardCache* cache) {
  const EncoderConfig& cfg = w.config;
  cfg.validate();
  const int n = es.length();
  if (n == 0) throw std::invalid_argument("empty input sequence");
  const int d = cfg.model_dim;
  const int hd = cfg.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Eigen::MatrixXd x(n, d);
  for (int t = 0; t < n; ++t) {
    const int id = es.ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= cfg.vocab_size) {
      throw std::out_of_range("token id out of range: " + std::to_string(id));
    }
    x.row(t) = w.token_embedding.row(id);
  }

  if (cache) {
    cache->layers.clear();
    cache->layers.resize(w.layers.size());
  }

  for (std::size_t li = 0; li < w.layers.size(); ++li) {
    const LayerWeights& l = w.layers[li];
    LayerCache local;
    LayerCache& c = cache ? cache->layers[li] : local;
    c.x_in = x;

    layer_norm(x, l.ln1_scale, l.ln1_offset, c.ln1_xhat, c.ln1_rstd, c.ln1_out);

    c.q = (c.ln1_out * l.attn_q.transpose()).rowwise() + l.attn_q_bias.transpose();
    c.k = (c.ln1_out * l.attn_k.transpose()).rowwise() + l.attn_k_bias.transpose();
    c.v = (c.ln1_out * l.attn_v.transpose()).rowwise() + l.attn_v_bias.transpose();

    c.q_rot = c.q;
    c.k_rot = c.k;
    for (int t = 0; t < n; ++t) {
      const Pos2d pos = es.pos2d[static_cast<std::size_t>(t)];
      for (int h = 0; h < cfg.heads; ++h) {
        rope2d_inplace(c.q_rot.row(t).segment(h * hd, hd), pos, cfg.rope_base);
        rope2d_inplace(c.k_rot.row(t).segment(h * hd, hd), pos, cfg.rope_base);
      }
    }

    c.attn.assign(static_cast<std::size_t>(cfg.heads), Eigen::MatrixXd());
    c.attn_concat.resize(n, d);
    for (int h = 0; h < cfg.heads; ++h) {
      const auto qh = c.q_rot.middleCols(h * hd, hd);
      const auto kh = c.k_rot.middleCols(h * hd, hd);
      const auto vh = c.v.middleCols(h * hd, hd);
      Eigen::MatrixXd scores = qh * kh.transpose() * attn_scale;
      softmax_rows(scores);
      c.attn[static_cast<std::size_t>(h)] = scores;
      c.attn_concat.middleCols(h * hd, hd) = scores * vh;
    }

    const Eigen::MatrixXd attn_out =
        (c.attn_concat * l.attn_out.transpose()).rowwise() + l.attn_out_bias.transpose();
    c.x_mid = x + attn_out;

    layer_norm(c.x_mid, l.ln2_scale, l.ln2_offset, c.ln2_xhat, c.ln2_rstd, c.ln2_out);
    c.ffn_pre = (c.ln2_out * l.ffn_in.transpose()).rowwise() + l.ffn_in_bias.transpose();
    c.ffn_act = c.ffn_pre.unaryExpr([](double v) { return gelu(v); });
    const Eigen::MatrixXd ffn_out =
        (c.ffn_act * l.ffn_out.transpose()).rowwise() + l.ffn_out_bias.transpose();
    x = c.x_mid + ffn_out;
    check_finite(x, static_cast<int>(li) + 1);
  }

  Eigen::MatrixXd h;
  if (cache) {
    cache->final_in = x;
    layer_norm(x, w.final_ln_scale, w.final_ln_offset, cache->final_xhat,
               cache->final_rstd, h);
  } else {
    Eigen::MatrixXd xhat;
    Eigen::ArrayXd rstd;
    layer_norm(x, w.final_ln_scale, w.final_ln_offset, xhat, rstd, h);
  }
  check_finite(h, static_cast<int>(w.layers.size()) + 1);
  return h;
}

void encoder_backward(const ExpandedSequence& es, const ModelWeights& w,
                      const ForwardCache& cache, const Eigen::MatrixXd& d_hidden,
                      ModelWeights& grads) {
  const EncoderConfig& cfg = w.config;
  const int n = es.length();
  const int d = cfg.model_dim;
  const int hd = cfg.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Eigen::MatrixXd dx;
  layer_norm_backward(d_hidden, cache.final_xhat, cache.final_rstd, w.final_ln_scale, dx,
                      grads.final_ln_scale, grads.final_ln_offset);

  for (std::size_t li = w.layers.size(); li-- > 0;) {
    const LayerWeights& l = w.layers[li];
    const LayerCache& c = cache.layers[li];
    LayerWeights& gl = grads.layers[li];

    // FFN sublayer: x = x_mid + ffn_out(gelu(ffn_in(ln2(x_mid))))
    const Eigen::MatrixXd& d_ffn_out = dx;  // residual branch
    gl.ffn_out += d_ffn_out.transpose() * c.ffn_act;
    gl.ffn_out_bias += d_ffn_out.colwise().sum().transpose();
    Eigen::MatrixXd d_act = d_ffn_out * l.ffn_out;
    Eigen::MatrixXd d_pre =
        d_act.cwiseProduct(c.ffn_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    gl.ffn_in += d_pre.transpose() * c.ln2_out;
    gl.ffn_in_bias += d_pre.colwise().sum().transpose();
    const Eigen::MatrixXd d_ln2_out = d_pre * l.ffn_in;
    Eigen::MatrixXd d_x_mid;
    layer_norm_backward(d_ln2_out, c.ln2_xhat, c.ln2_rstd, l.ln2_scale, d_x_mid,
                        gl.ln2_scale, gl.ln2_offset);
    d_x_mid += dx;  // residual pass-through

    // Attention sublayer: x_mid = x_in + attn_out_proj(concat heads)
    const Eigen::MatrixXd& d_attn_proj = d_x_mid;
    gl.attn_out += d_attn_proj.transpose() * c.attn_concat;
    gl.attn_out_bias += d_attn_proj.colwise().sum().transpose();
    const Eigen::MatrixXd d_concat = d_attn_proj * l.attn_out;

    Eigen::MatrixXd d_q_rot = Eigen::MatrixXd::Zero(n, d);
    Eigen::MatrixXd d_k_rot = Eigen::MatrixXd::Zero(n, d);
    Eigen::MatrixXd d_v = Eigen::MatrixXd::Zero(n, d);
    for (int h = 0; h < cfg.heads; ++h) {
      const auto qh = c.q_rot.middleCols(h * hd, hd);
      const auto kh = c.k_rot.middleCols(h * hd, hd);
      const auto vh = c.v.middleCols(h * hd, hd);
      const Eigen::MatrixXd& probs = c.attn[static_cast<std::size_t>(h)];
      const auto d_oh = d_concat.middleCols(h * hd, hd);
      const Eigen::MatrixXd d_probs = d_oh * vh.transpose();
      d_v.middleCols(h * hd, hd) = probs.transpose() * d_oh;
      const Eigen::MatrixXd d_scores = softmax_rows_backward(probs, d_probs);
      d_q_rot.middleCols(h * hd, hd) = d_scores * kh * attn_scale;
      d_k_rot.middleCols(h * hd, hd) = d_scores.transpose() * qh * attn_scale;
    }

    // Undo the rotation (its transpose) to reach the projection outputs.
    for (int t = 0; t < n; ++t) {
      const Pos2d pos = es.pos2d[static_cast<std::size_t>(t)];
      for (int h = 0; h < cfg.heads; ++h) {
        rope2d_inplace(d_q_rot.row(t).segment(h * hd, hd), pos, cfg.rope_base, true);
        rope2d_inplace(d_k_rot.row(t).segment(h * hd, hd), pos, cfg.rope_base, true);
      }
    }

    gl.attn_q += d_q_rot.transpose() * c.ln1_out;
    gl.attn_q_bias += d_q_rot.colwise().sum().transpose();
    gl.attn_k += d_k_rot.transpose() * c.ln1_out;
    gl.attn_k_bias += d_k_rot.colwise().sum().transpose();
    gl.attn_v += d_v.transpose() * c.ln1_out;
    gl.attn_v_bias += d_v.colwise().sum().transpose();

    const Eigen::MatrixXd d_ln1_out =
        d_q_rot * l.attn_q + d_k_rot * l.attn_k + d_v * l.attn_v;
    Eigen::MatrixXd d_x_in;
    layer_norm_backward(d_ln1_out, c.ln1_xhat, c.ln1_rstd, l.ln1_scale, d_x_in,
                        gl.ln1_scale, gl.ln1_offset);
    dx = d_x_in + d_x_mid;  // residual pass-through
  }

  for (int t = 0; t < n; ++t) {
    grads.token_embedding.row(es.ids[static_cast<std::size_t>(t)]) += dx.row(t);
  }
}

}  // namespace exlm

#include "realign/model.h"

#include <cmath>
#include <limits>

#include "realign/common.h"

namespace realign::policy {

void ModelConfig::validate() const {
  if (vocab_size < 1) throw Error("model config: vocab_size must be positive");
  if (d_model < 1 || n_layers < 0 || n_heads < 1 || d_ff < 1 || context < 1) {
    throw Error("model config: dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw Error("model config: d_model must divide by n_heads");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"d_model", d_model}, {"n_layers", n_layers},
          {"n_heads", n_heads},       {"d_ff", d_ff},       {"context", context}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.context = j.value("context", c.context);
  return c;
}

nlohmann::json AdapterConfig::to_json() const {
  return {{"rank", rank}, {"scale", scale}, {"dropout", dropout}};
}

AdapterConfig AdapterConfig::from_json(const nlohmann::json& j) {
  AdapterConfig c;
  c.rank = j.value("rank", c.rank);
  c.scale = j.value("scale", c.scale);
  c.dropout = j.value("dropout", c.dropout);
  if (c.rank < 1) throw Error("adapter config: rank must be positive");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw Error("adapter config: dropout in [0,1)");
  return c;
}

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

}  // namespace

PolicyParams PolicyParams::init(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const Eigen::Index d = config.d_model, v = config.vocab_size, f = config.d_ff;
  const double std_w = 0.02;
  const double std_resid = 0.02 / std::sqrt(2.0 * std::max(1, config.n_layers));
  PolicyParams p;
  p.config = config;
  p.tok_emb = gaussian(v, d, std_w, rng);
  p.pos_emb = gaussian(config.context, d, std_w, rng);
  for (int l = 0; l < config.n_layers; ++l) {
    DecoderBlock b;
    b.ln1_gain = Matrix::Ones(1, d);
    b.ln1_bias = Matrix::Zero(1, d);
    b.wq = gaussian(d, d, std_w, rng);
    b.wk = gaussian(d, d, std_w, rng);
    b.wv = gaussian(d, d, std_w, rng);
    b.wo = gaussian(d, d, std_resid, rng);
    b.ln2_gain = Matrix::Ones(1, d);
    b.ln2_bias = Matrix::Zero(1, d);
    b.w_ff1 = gaussian(d, f, std_w, rng);
    b.b_ff1 = Matrix::Zero(1, f);
    b.w_ff2 = gaussian(f, d, std_resid, rng);
    b.b_ff2 = Matrix::Zero(1, d);
    p.blocks.push_back(std::move(b));
  }
  p.lnf_gain = Matrix::Ones(1, d);
  p.lnf_bias = Matrix::Zero(1, d);
  p.w_out = gaussian(d, v, std_w, rng);
  p.b_out = Matrix::Zero(1, v);
  p.w_value = gaussian(d, 1, std_w, rng);
  p.b_value = Matrix::Zero(1, 1);
  return p;
}

void PolicyParams::add_adapters(const AdapterConfig& ac, uint64_t seed) {
  if (ac.rank < 1) throw Error("add_adapters: rank must be positive");
  Rng rng(seed);
  const Eigen::Index d = config.d_model;
  for (auto& b : blocks) {
    b.adapters.clear();
    for (int i = 0; i < kNumAdapted; ++i) {
      LowRankAdapter a;
      a.a = gaussian(ac.rank, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
      a.b = Matrix::Zero(d, ac.rank);
      b.adapters.push_back(std::move(a));
    }
  }
  adapter = ac;
}

PolicyParams PolicyParams::zeros_like() const {
  PolicyParams z = *this;
  z.for_each([](const std::string&, Matrix& m, ParamGroup) { m.setZero(); });
  return z;
}

size_t PolicyParams::num_parameters() const {
  size_t n = 0;
  for_each([&](const std::string&, const Matrix& m, ParamGroup) { n += static_cast<size_t>(m.size()); });
  return n;
}

bool PolicyParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Matrix& m, ParamGroup) { ok = ok && m.allFinite(); });
  return ok;
}

std::vector<Matrix*> tensor_list(PolicyParams& p) {
  std::vector<Matrix*> out;
  p.for_each([&](const std::string&, Matrix& m, ParamGroup) { out.push_back(&m); });
  return out;
}

std::vector<const Matrix*> tensor_list(const PolicyParams& p) {
  std::vector<const Matrix*> out;
  p.for_each([&](const std::string&, const Matrix& m, ParamGroup) { out.push_back(&m); });
  return out;
}

void check_tokens(const PolicyParams& params, std::span<const int> tokens) {
  if (tokens.size() > static_cast<size_t>(params.config.context)) {
    throw Error("sequence of length " + std::to_string(tokens.size()) + " exceeds context " +
                std::to_string(params.config.context));
  }
  for (int t : tokens) {
    if (t < 0 || t >= params.config.vocab_size) {
      throw Error("token id " + std::to_string(t) + " outside vocabulary");
    }
  }
}

RowVector log_softmax(const RowVector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

RowVector softmax(const RowVector& logits) {
  RowVector e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

// ---------------------------------------------------------------------------
// Building blocks

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

struct LayerNormCache {
  Matrix xhat;
  Vector rstd;
};

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache* c) {
  const Eigen::Index n = x.rows();
  Matrix xhat(n, x.cols());
  Vector rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const RowVector centered = x.row(i).array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(x.cols());
    rstd(i) = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = centered * rstd(i);
  }
  Matrix y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (c) {
    c->xhat = std::move(xhat);
    c->rstd = std::move(rstd);
  }
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LayerNormCache& c,
                           Matrix& dgain, Matrix& dbias, bool accumulate) {
  if (accumulate) {
    dgain += dy.cwiseProduct(c.xhat).colwise().sum();
    dbias += dy.colwise().sum();
  }
  const Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = dxhat.row(i).cwiseProduct(c.xhat.row(i)).mean();
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

using RowArray = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// tanh of the GELU inner term, elementwise. Uses Eigen's vectorized exp
// instead of libm's scalar tanh; agrees to a few ulps.
Matrix gelu_tanh(const Matrix& u) {
  const auto z = kGeluC * (u.array() + kGeluA * u.array().cube());
  const RowArray e = (-2.0 * z.abs()).exp();
  return (z.sign() * (1.0 - e) / (1.0 + e)).matrix();
}

Matrix gelu(const Matrix& u, const Matrix& t) {
  return (0.5 * u.array() * (1.0 + t.array())).matrix();
}

Matrix gelu_grad(const Matrix& u, const Matrix& t) {
  const auto ua = u.array(), ta = t.array();
  return (0.5 * (1.0 + ta) +
          0.5 * ua * (1.0 - ta.square()) * kGeluC * (1.0 + 3.0 * kGeluA * ua.square()))
      .matrix();
}

struct ProjectionCache {
  Matrix mask;     // empty unless dropout was applied
  Matrix dropped;  // adapter-path input after dropout
  Matrix xa;       // dropped * A^T
};

double adapter_factor(const PolicyParams& p) {
  return p.adapter ? p.adapter->scale / static_cast<double>(p.adapter->rank) : 0.0;
}

Matrix project(const Matrix& x, const Matrix& w, const LowRankAdapter* ad, const PolicyParams& p,
               const ForwardOptions& opt, ProjectionCache* c) {
  Matrix y = x * w;
  if (!ad) return y;
  const double dropout = p.adapter->dropout;
  Matrix dropped;
  Matrix mask;
  if (opt.train && dropout > 0.0) {
    if (!opt.rng) throw Error("forward: train mode requires a random generator");
    mask.resize(x.rows(), x.cols());
    const double keep = 1.0 / (1.0 - dropout);
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mask.data()[i] = opt.rng->bernoulli(dropout) ? 0.0 : keep;
    }
    dropped = x.cwiseProduct(mask);
  } else {
    dropped = x;
  }
  Matrix xa = dropped * ad->a.transpose();
  y.noalias() += adapter_factor(p) * (xa * ad->b.transpose());
  if (c) {
    c->mask = std::move(mask);
    c->dropped = std::move(dropped);
    c->xa = std::move(xa);
  }
  return y;
}

// Returns dx; accumulates weight gradients.
Matrix project_backward(const Matrix& dy, const Matrix& x, const Matrix& w,
                        const LowRankAdapter* ad, LowRankAdapter* dad, const PolicyParams& p,
                        const ProjectionCache& c, Matrix& dw, const GradientMask& mask) {
  if (mask.trunk) dw.noalias() += x.transpose() * dy;
  Matrix dx = dy * w.transpose();
  if (!ad) return dx;
  const double s = adapter_factor(p);
  const Matrix dxa = s * (dy * ad->b);
  if (mask.adapter) {
    dad->b.noalias() += s * (dy.transpose() * c.xa);
    dad->a.noalias() += dxa.transpose() * c.dropped;
  }
  Matrix dd = dxa * ad->a;
  if (c.mask.size() > 0) dd = dd.cwiseProduct(c.mask);
  dx += dd;
  return dx;
}

struct BlockCache {
  Matrix x_in;
  LayerNormCache ln1;
  Matrix a;
  ProjectionCache pq, pk, pv, po;
  Matrix q, k, v;
  std::vector<Matrix> probs;  // per head, n x n
  Matrix ctx;
  LayerNormCache ln2;
  Matrix f;
  Matrix u;
  Matrix t;  // tanh of the GELU inner term
  Matrix g;
};

const LowRankAdapter* adapter_of(const DecoderBlock& b, int which) {
  return b.adapters.empty() ? nullptr : &b.adapters[static_cast<size_t>(which)];
}

// Runs one block over a chunk of rows whose first row sits at absolute
// position `start`. `k_all`/`v_all` receive the keys and values of the chunk
// appended to any prefix already stored in them.
Matrix block_forward(const DecoderBlock& blk, const PolicyParams& p, const Matrix& x,
                     size_t start, Matrix& k_all, Matrix& v_all, const ForwardOptions& opt,
                     BlockCache* c) {
  const Eigen::Index n = x.rows();
  const int heads = p.config.n_heads;
  const Eigen::Index dh = p.config.d_model / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));

  LayerNormCache ln1;
  Matrix a = layer_norm(x, blk.ln1_gain, blk.ln1_bias, c ? &ln1 : nullptr);
  ProjectionCache pq, pk, pv, po;
  Matrix q = project(a, blk.wq, adapter_of(blk, kQuery), p, opt, c ? &pq : nullptr);
  Matrix k = project(a, blk.wk, adapter_of(blk, kKey), p, opt, c ? &pk : nullptr);
  Matrix v = project(a, blk.wv, adapter_of(blk, kValue), p, opt, c ? &pv : nullptr);

  const Eigen::Index prev = k_all.rows();
  k_all.conservativeResize(prev + n, p.config.d_model);
  v_all.conservativeResize(prev + n, p.config.d_model);
  k_all.bottomRows(n) = k;
  v_all.bottomRows(n) = v;
  const Eigen::Index total = prev + n;

  Matrix ctx(n, p.config.d_model);
  std::vector<Matrix> probs;
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index off = h * dh;
    Matrix s = (q.middleCols(off, dh) * k_all.middleCols(off, dh).transpose()) * inv;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index visible = static_cast<Eigen::Index>(start) + i + 1;
      auto row = s.row(i);
      const double m = row.head(visible).maxCoeff();
      row.head(visible) = (row.head(visible).array() - m).exp();
      row.head(visible) /= row.head(visible).sum();
      if (visible < total) row.tail(total - visible).setZero();
    }
    ctx.middleCols(off, dh) = s * v_all.middleCols(off, dh);
    if (c) probs.push_back(std::move(s));
  }
  Matrix h_mid = x + project(ctx, blk.wo, adapter_of(blk, kOutput), p, opt, c ? &po : nullptr);

  LayerNormCache ln2;
  Matrix f = layer_norm(h_mid, blk.ln2_gain, blk.ln2_bias, c ? &ln2 : nullptr);
  Matrix u = (f * blk.w_ff1).rowwise() + blk.b_ff1.row(0);
  Matrix t = gelu_tanh(u);
  Matrix g = gelu(u, t);
  Matrix y = h_mid + ((g * blk.w_ff2).rowwise() + blk.b_ff2.row(0));

  if (c) {
    c->x_in = x;
    c->ln1 = std::move(ln1);
    c->a = std::move(a);
    c->pq = std::move(pq);
    c->pk = std::move(pk);
    c->pv = std::move(pv);
    c->po = std::move(po);
    c->q = std::move(q);
    c->k = std::move(k);
    c->v = std::move(v);
    c->probs = std::move(probs);
    c->ctx = std::move(ctx);
    c->ln2 = std::move(ln2);
    c->f = std::move(f);
    c->u = std::move(u);
    c->t = std::move(t);
    c->g = std::move(g);
  }
  return y;
}

// Full-sequence backward (start = 0). Returns dx.
Matrix block_backward(const DecoderBlock& blk, DecoderBlock& dblk, const PolicyParams& p,
                      const BlockCache& c, const Matrix& dy, const GradientMask& mask) {
  const int heads = p.config.n_heads;
  const Eigen::Index dh = p.config.d_model / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));

  // Feed-forward branch.
  Matrix dh_mid = dy;
  if (mask.trunk) {
    dblk.w_ff2.noalias() += c.g.transpose() * dy;
    dblk.b_ff2 += dy.colwise().sum();
  }
  Matrix du = dy * blk.w_ff2.transpose();
  du = du.cwiseProduct(gelu_grad(c.u, c.t));
  if (mask.trunk) {
    dblk.w_ff1.noalias() += c.f.transpose() * du;
    dblk.b_ff1 += du.colwise().sum();
  }
  const Matrix df = du * blk.w_ff1.transpose();
  dh_mid +=
      layer_norm_backward(df, blk.ln2_gain, c.ln2, dblk.ln2_gain, dblk.ln2_bias, mask.trunk);

  // Attention branch.
  Matrix dx = dh_mid;
  auto dad = [&](int which) -> LowRankAdapter* {
    return dblk.adapters.empty() ? nullptr : &dblk.adapters[static_cast<size_t>(which)];
  };
  const Matrix dctx = project_backward(dh_mid, c.ctx, blk.wo, adapter_of(blk, kOutput),
                                       dad(kOutput), p, c.po, dblk.wo, mask);
  Matrix dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index off = h * dh;
    const Matrix& probs = c.probs[static_cast<size_t>(h)];
    const Matrix dctx_h = dctx.middleCols(off, dh);
    const Matrix dprobs = dctx_h * c.v.middleCols(off, dh).transpose();
    dv.middleCols(off, dh) = probs.transpose() * dctx_h;
    const Vector rowdot = dprobs.cwiseProduct(probs).rowwise().sum();
    const Matrix ds = probs.cwiseProduct(dprobs.colwise() - rowdot) * inv;
    dq.middleCols(off, dh) = ds * c.k.middleCols(off, dh);
    dk.middleCols(off, dh) = ds.transpose() * c.q.middleCols(off, dh);
  }
  Matrix da = project_backward(dq, c.a, blk.wq, adapter_of(blk, kQuery), dad(kQuery), p, c.pq,
                               dblk.wq, mask);
  da += project_backward(dk, c.a, blk.wk, adapter_of(blk, kKey), dad(kKey), p, c.pk, dblk.wk,
                         mask);
  da += project_backward(dv, c.a, blk.wv, adapter_of(blk, kValue), dad(kValue), p, c.pv,
                         dblk.wv, mask);
  dx += layer_norm_backward(da, blk.ln1_gain, c.ln1, dblk.ln1_gain, dblk.ln1_bias, mask.trunk);
  return dx;
}

Matrix embed(const PolicyParams& p, std::span<const int> tokens, size_t start) {
  Matrix x(static_cast<Eigen::Index>(tokens.size()), p.config.d_model);
  for (size_t i = 0; i < tokens.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) =
        p.tok_emb.row(tokens[i]) + p.pos_emb.row(static_cast<Eigen::Index>(start + i));
  }
  return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// ForwardPass

struct ForwardPass::Cache {
  std::vector<int> tokens;
  std::vector<BlockCache> blocks;
  LayerNormCache lnf;
  Matrix z;
};

ForwardPass::~ForwardPass() = default;
ForwardPass::ForwardPass(ForwardPass&&) noexcept = default;
ForwardPass& ForwardPass::operator=(ForwardPass&&) noexcept = default;

ForwardPass::ForwardPass(const PolicyParams& params, std::span<const int> tokens, size_t first,
                         const ForwardOptions& options)
    : params_(&params), first_(first), cache_(std::make_unique<Cache>()) {
  if (tokens.empty()) throw Error("forward: empty token sequence");
  if (first >= tokens.size()) throw Error("forward: first output position out of range");
  check_tokens(params, tokens);
  cache_->tokens.assign(tokens.begin(), tokens.end());
  Matrix x = embed(params, tokens, 0);
  cache_->blocks.resize(params.blocks.size());
  for (size_t l = 0; l < params.blocks.size(); ++l) {
    Matrix k_all(0, params.config.d_model), v_all(0, params.config.d_model);
    x = block_forward(params.blocks[l], params, x, 0, k_all, v_all, options, &cache_->blocks[l]);
  }
  cache_->z = layer_norm(x, params.lnf_gain, params.lnf_bias, &cache_->lnf);
  const auto rows = static_cast<Eigen::Index>(tokens.size() - first);
  const auto z_out = cache_->z.bottomRows(rows);
  logits_ = (z_out * params.w_out).rowwise() + params.b_out.row(0);
  values_ = (z_out * params.w_value).col(0).array() + params.b_value(0, 0);
}

void ForwardPass::backward(const Matrix& dlogits, const Vector& dvalues, PolicyParams& grads,
                           const GradientMask& mask) const {
  const PolicyParams& p = *params_;
  const Cache& c = *cache_;
  const Eigen::Index n = static_cast<Eigen::Index>(c.tokens.size());
  const Eigen::Index rows = n - static_cast<Eigen::Index>(first_);
  if (dlogits.rows() != rows || dlogits.cols() != p.config.vocab_size || dvalues.size() != rows) {
    throw Error("backward: gradient shapes do not match the forward outputs");
  }
  const auto z_out = c.z.bottomRows(rows);
  if (mask.policy_head) {
    grads.w_out.noalias() += z_out.transpose() * dlogits;
    grads.b_out += dlogits.colwise().sum();
  }
  if (mask.value_head) {
    grads.w_value.noalias() += z_out.transpose() * dvalues;
    grads.b_value(0, 0) += dvalues.sum();
  }
  const bool adapters = mask.adapter && !p.blocks.empty() && !p.blocks[0].adapters.empty();
  if (!mask.trunk && !adapters) return;

  Matrix dz = Matrix::Zero(n, p.config.d_model);
  dz.bottomRows(rows) = dlogits * p.w_out.transpose() + dvalues * p.w_value.transpose();
  Matrix dx =
      layer_norm_backward(dz, p.lnf_gain, c.lnf, grads.lnf_gain, grads.lnf_bias, mask.trunk);
  for (size_t l = p.blocks.size(); l-- > 0;) {
    dx = block_backward(p.blocks[l], grads.blocks[l], p, c.blocks[l], dx, mask);
  }
  if (!mask.trunk) return;
  for (Eigen::Index i = 0; i < n; ++i) {
    grads.tok_emb.row(c.tokens[static_cast<size_t>(i)]) += dx.row(i);
    grads.pos_emb.row(i) += dx.row(i);
  }
}

// ---------------------------------------------------------------------------
// IncrementalDecoder

IncrementalDecoder::IncrementalDecoder(const PolicyParams& params)
    : params_(&params),
      keys_(params.blocks.size(), Matrix(0, params.config.d_model)),
      values_(params.blocks.size(), Matrix(0, params.config.d_model)) {}

void IncrementalDecoder::append(std::span<const int> tokens) {
  if (tokens.empty()) return;
  const PolicyParams& p = *params_;
  if (length_ + tokens.size() > static_cast<size_t>(p.config.context)) {
    throw Error("decoder: sequence exceeds context " + std::to_string(p.config.context));
  }
  check_tokens(p, tokens);
  Matrix x = embed(p, tokens, length_);
  const ForwardOptions eval;
  for (size_t l = 0; l < p.blocks.size(); ++l) {
    x = block_forward(p.blocks[l], p, x, length_, keys_[l], values_[l], eval, nullptr);
  }
  const Matrix z = layer_norm(x.bottomRows(1), p.lnf_gain, p.lnf_bias, nullptr);
  last_logits_ = z * p.w_out + p.b_out;
  last_value_ = (z * p.w_value)(0, 0) + p.b_value(0, 0);
  length_ += tokens.size();
}

RowVector logits(const PolicyParams& params, std::span<const int> prefix) {
  if (prefix.empty()) throw Error("logits: empty prefix");
  IncrementalDecoder dec(params);
  dec.append(prefix);
  return dec.last_logits();
}

}  // namespace realign::policy

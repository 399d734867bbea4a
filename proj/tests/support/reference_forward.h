#pragma once

// Loop-based forward pass used as an oracle for the Eigen implementation.
// It reads parameters element by element and shares no code with src/.

#include <cmath>
#include <vector>

#include "realign/model.h"

namespace realign::testing {

using Grid = std::vector<std::vector<double>>;

inline Grid matmul(const Grid& x, const policy::Matrix& w) {
  Grid y(x.size(), std::vector<double>(static_cast<size_t>(w.cols()), 0.0));
  for (size_t i = 0; i < x.size(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index k = 0; k < w.rows(); ++k) y[i][j] += x[i][k] * w(k, j);
  return y;
}

inline Grid layer_norm(const Grid& x, const policy::Matrix& g, const policy::Matrix& b) {
  Grid y = x;
  for (size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mean = 0;
    for (double v : x[i]) mean += v;
    mean /= n;
    double var = 0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= n;
    for (size_t j = 0; j < x[i].size(); ++j)
      y[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * g(0, j) + b(0, j);
  }
  return y;
}

inline Grid adapted(const Grid& x, const policy::Matrix& w, const policy::PolicyParams& p,
                    const policy::DecoderBlock& blk, int which) {
  Grid y = matmul(x, w);
  if (blk.adapters.empty()) return y;
  const auto& ad = blk.adapters[static_cast<size_t>(which)];
  const double s = p.adapter->scale / p.adapter->rank;
  for (size_t i = 0; i < x.size(); ++i)
    for (Eigen::Index o = 0; o < ad.b.rows(); ++o)
      for (Eigen::Index r = 0; r < ad.a.rows(); ++r) {
        double xa = 0;
        for (Eigen::Index k = 0; k < ad.a.cols(); ++k) xa += x[i][k] * ad.a(r, k);
        y[i][o] += s * ad.b(o, r) * xa;
      }
  return y;
}

// Logits for the last position of `tokens`.
inline std::vector<double> reference_logits(const policy::PolicyParams& p,
                                            const std::vector<int>& tokens) {
  const size_t n = tokens.size();
  const size_t d = static_cast<size_t>(p.config.d_model);
  Grid x(n, std::vector<double>(d));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) x[i][j] = p.tok_emb(tokens[i], j) + p.pos_emb(i, j);
  const size_t heads = static_cast<size_t>(p.config.n_heads), dh = d / heads;
  for (const auto& blk : p.blocks) {
    Grid a = layer_norm(x, blk.ln1_gain, blk.ln1_bias);
    Grid q = adapted(a, blk.wq, p, blk, 0), k = adapted(a, blk.wk, p, blk, 1),
         v = adapted(a, blk.wv, p, blk, 2);
    Grid ctx(n, std::vector<double>(d, 0.0));
    for (size_t h = 0; h < heads; ++h)
      for (size_t i = 0; i < n; ++i) {
        std::vector<double> w(i + 1);
        double mx = -1e300;
        for (size_t j = 0; j <= i; ++j) {
          double s = 0;
          for (size_t c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j][h * dh + c];
          w[j] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, w[j]);
        }
        double z = 0;
        for (auto& e : w) z += (e = std::exp(e - mx));
        for (size_t j = 0; j <= i; ++j)
          for (size_t c = 0; c < dh; ++c) ctx[i][h * dh + c] += w[j] / z * v[j][h * dh + c];
      }
    Grid o = adapted(ctx, blk.wo, p, blk, 3);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < d; ++j) x[i][j] += o[i][j];
    Grid f = layer_norm(x, blk.ln2_gain, blk.ln2_bias);
    Grid u = matmul(f, blk.w_ff1);
    for (auto& row : u)
      for (size_t j = 0; j < row.size(); ++j) {
        const double t = row[j] + blk.b_ff1(0, j);
        row[j] = 0.5 * t * (1 + std::tanh(std::sqrt(2 / M_PI) * (t + 0.044715 * t * t * t)));
      }
    Grid y = matmul(u, blk.w_ff2);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < d; ++j) x[i][j] += y[i][j] + blk.b_ff2(0, j);
  }
  Grid z = layer_norm(x, p.lnf_gain, p.lnf_bias);
  Grid last{z.back()};
  Grid out = matmul(last, p.w_out);
  for (size_t j = 0; j < out[0].size(); ++j) out[0][j] += p.b_out(0, j);
  return out[0];
}

}  // namespace realign::testing

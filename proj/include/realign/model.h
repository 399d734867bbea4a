#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "realign/random.h"

namespace realign::policy {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using Vector = Eigen::VectorXd;

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int context = 256;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

// Low-rank adaptation of the attention projections.
struct AdapterConfig {
  int rank = 8;
  double scale = 32.0;
  double dropout = 0.1;

  nlohmann::json to_json() const;
  static AdapterConfig from_json(const nlohmann::json& j);
  bool operator==(const AdapterConfig&) const = default;
};

// Effective delta for a d_in x d_out projection is (scale/rank) * (B A)^T,
// applied to row activations as x A^T B^T.
struct LowRankAdapter {
  Matrix a;  // rank x d_in
  Matrix b;  // d_out x rank
};

enum AdaptedProjection { kQuery = 0, kKey = 1, kValue = 2, kOutput = 3, kNumAdapted = 4 };

struct DecoderBlock {
  Matrix ln1_gain, ln1_bias;  // 1 x d
  Matrix wq, wk, wv, wo;      // d x d, applied as x W
  Matrix ln2_gain, ln2_bias;  // 1 x d
  Matrix w_ff1, b_ff1;        // d x d_ff, 1 x d_ff
  Matrix w_ff2, b_ff2;        // d_ff x d, 1 x d
  std::vector<LowRankAdapter> adapters;  // empty, or one per AdaptedProjection
};

enum class ParamGroup { trunk, policy_head, value_head, adapter };

// Pre-norm decoder-only transformer with a token head and a scalar value head
// sharing the trunk.
struct PolicyParams {
  ModelConfig config;
  std::optional<AdapterConfig> adapter;

  Matrix tok_emb;  // V x d
  Matrix pos_emb;  // context x d
  std::vector<DecoderBlock> blocks;
  Matrix lnf_gain, lnf_bias;  // 1 x d
  Matrix w_out, b_out;        // d x V, 1 x V
  Matrix w_value, b_value;    // d x 1, 1 x 1

  static PolicyParams init(const ModelConfig& config, uint64_t seed);

  // Attaches adapters with random A and zero B, so outputs are unchanged.
  void add_adapters(const AdapterConfig& config, uint64_t seed);

  // Same shapes, all zeros.
  PolicyParams zeros_like() const;

  // Visits every tensor in a fixed order: f(name, matrix, group).
  template <typename F>
  void for_each(F&& f) {
    for_each_impl(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    for_each_impl(*this, f);
  }

  size_t num_parameters() const;
  bool all_finite() const;

 private:
  template <typename Self, typename F>
  static void for_each_impl(Self& p, F& f) {
    f(std::string("tok_emb"), p.tok_emb, ParamGroup::trunk);
    f(std::string("pos_emb"), p.pos_emb, ParamGroup::trunk);
    for (size_t l = 0; l < p.blocks.size(); ++l) {
      auto& b = p.blocks[l];
      const std::string pre = "blocks." + std::to_string(l) + ".";
      f(pre + "ln1_gain", b.ln1_gain, ParamGroup::trunk);
      f(pre + "ln1_bias", b.ln1_bias, ParamGroup::trunk);
      f(pre + "wq", b.wq, ParamGroup::trunk);
      f(pre + "wk", b.wk, ParamGroup::trunk);
      f(pre + "wv", b.wv, ParamGroup::trunk);
      f(pre + "wo", b.wo, ParamGroup::trunk);
      f(pre + "ln2_gain", b.ln2_gain, ParamGroup::trunk);
      f(pre + "ln2_bias", b.ln2_bias, ParamGroup::trunk);
      f(pre + "w_ff1", b.w_ff1, ParamGroup::trunk);
      f(pre + "b_ff1", b.b_ff1, ParamGroup::trunk);
      f(pre + "w_ff2", b.w_ff2, ParamGroup::trunk);
      f(pre + "b_ff2", b.b_ff2, ParamGroup::trunk);
      static constexpr const char* kNames[] = {"q", "k", "v", "o"};
      for (size_t a = 0; a < b.adapters.size(); ++a) {
        f(pre + "adapter." + kNames[a] + ".a", b.adapters[a].a, ParamGroup::adapter);
        f(pre + "adapter." + kNames[a] + ".b", b.adapters[a].b, ParamGroup::adapter);
      }
    }
    f(std::string("lnf_gain"), p.lnf_gain, ParamGroup::trunk);
    f(std::string("lnf_bias"), p.lnf_bias, ParamGroup::trunk);
    f(std::string("w_out"), p.w_out, ParamGroup::policy_head);
    f(std::string("b_out"), p.b_out, ParamGroup::policy_head);
    f(std::string("w_value"), p.w_value, ParamGroup::value_head);
    f(std::string("b_value"), p.b_value, ParamGroup::value_head);
  }
};

// Flat views over all tensors, in for_each order.
std::vector<Matrix*> tensor_list(PolicyParams& p);
std::vector<const Matrix*> tensor_list(const PolicyParams& p);

// Which parameter groups receive gradients in a backward pass.
struct GradientMask {
  bool trunk = true;
  bool policy_head = true;
  bool value_head = true;
  bool adapter = true;

  bool operator()(ParamGroup g) const {
    switch (g) {
      case ParamGroup::trunk: return trunk;
      case ParamGroup::policy_head: return policy_head;
      case ParamGroup::value_head: return value_head;
      case ParamGroup::adapter: return adapter;
    }
    return false;
  }
};

struct ForwardOptions {
  // Enables adapter dropout; requires `rng`.
  bool train = false;
  Rng* rng = nullptr;
};

// A full-sequence forward pass that keeps the activations needed by backward.
class ForwardPass {
 public:
  // Produces logits and values for positions [first, tokens.size()).
  ForwardPass(const PolicyParams& params, std::span<const int> tokens, size_t first,
              const ForwardOptions& options = {});
  ~ForwardPass();
  ForwardPass(ForwardPass&&) noexcept;
  ForwardPass& operator=(ForwardPass&&) noexcept;

  const Matrix& logits() const { return logits_; }
  const Vector& values() const { return values_; }
  size_t first() const { return first_; }

  // Adds dLoss/dParams into `grads` given dLoss/dlogits (rows as in
  // logits()) and dLoss/dvalues. Groups excluded by `mask` are left untouched.
  void backward(const Matrix& dlogits, const Vector& dvalues, PolicyParams& grads,
                const GradientMask& mask = {}) const;

 private:
  struct Cache;
  const PolicyParams* params_;
  size_t first_;
  Matrix logits_;
  Vector values_;
  std::unique_ptr<Cache> cache_;
};

// Inference-only decoding with cached keys and values.
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const PolicyParams& params);

  // Appends tokens; the last row's logits and value become available.
  void append(std::span<const int> tokens);
  void append(int token) { append(std::span<const int>(&token, 1)); }

  const RowVector& last_logits() const { return last_logits_; }
  double last_value() const { return last_value_; }
  size_t length() const { return length_; }

 private:
  const PolicyParams* params_;
  std::vector<Matrix> keys_, values_;
  size_t length_ = 0;
  RowVector last_logits_;
  double last_value_ = 0.0;
};

// Logits for the next token after `prefix`. Throws if the prefix is empty,
// exceeds the context, or holds out-of-range ids.
RowVector logits(const PolicyParams& params, std::span<const int> prefix);

void check_tokens(const PolicyParams& params, std::span<const int> tokens);

RowVector log_softmax(const RowVector& logits);
RowVector softmax(const RowVector& logits);

}  // namespace realign::policy

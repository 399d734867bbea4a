#include "realign/policy.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <numbers>
#include <sstream>

#include "realign/common.h"
#include "realign/hash.h"
#include "realign/optim.h"

namespace realign::policy {

void GenerationConfig::validate() const {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error("generation: top_p must lie in (0, 1]");
  if (!(temperature > 0.0)) throw Error("generation: temperature must be positive");
  if (max_new_tokens < 1) throw Error("generation: max_new_tokens must be positive");
}

nlohmann::json GenerationConfig::to_json() const {
  return {{"top_p", top_p},
          {"temperature", temperature},
          {"max_new_tokens", max_new_tokens},
          {"seed", seed}};
}

GenerationConfig GenerationConfig::from_json(const nlohmann::json& j) {
  GenerationConfig c;
  c.top_p = j.value("top_p", c.top_p);
  c.temperature = j.value("temperature", c.temperature);
  c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::vector<int> nucleus(const RowVector& probs, double top_p) {
  std::vector<int> order(static_cast<size_t>(probs.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return probs(a) > probs(b); });
  double mass = 0.0;
  size_t keep = 0;
  while (keep < order.size()) {
    mass += probs(order[keep]);
    ++keep;
    if (mass >= top_p) break;
  }
  const double cutoff = probs(order[keep - 1]);
  while (keep < order.size() && probs(order[keep]) == cutoff) ++keep;
  order.resize(keep);
  return order;
}

int sample_next(const RowVector& logits, double top_p, double temperature, Rng& rng) {
  const RowVector probs = softmax(logits / temperature);
  const std::vector<int> admitted = nucleus(probs, top_p);
  double total = 0.0;
  for (int id : admitted) total += probs(id);
  double u = rng.uniform() * total;
  for (int id : admitted) {
    u -= probs(id);
    if (u < 0.0) return id;
  }
  return admitted.back();
}

SampledResponse sample_with_stats(const PolicyParams& params, std::span<const int> prompt,
                                  const GenerationConfig& config, Rng& rng) {
  config.validate();
  if (prompt.empty()) throw Error("sample: empty prompt");
  IncrementalDecoder dec(params);
  dec.append(prompt);
  SampledResponse out;
  const auto context = static_cast<size_t>(params.config.context);
  for (int t = 0; t < config.max_new_tokens; ++t) {
    const RowVector& lg = dec.last_logits();
    const int tok = sample_next(lg, config.top_p, config.temperature, rng);
    out.tokens.push_back(tok);
    out.logprobs.push_back(log_softmax(lg)(tok));
    out.values.push_back(dec.last_value());
    if (tok == Vocabulary::kEos || dec.length() >= context) break;
    dec.append(tok);
  }
  return out;
}

TokenIds sample_response(const PolicyParams& params, std::span<const int> prompt,
                         const GenerationConfig& config) {
  Rng rng(config.seed);
  return sample_with_stats(params, prompt, config, rng).tokens;
}

std::vector<double> sequence_logprob(const PolicyParams& params, std::span<const int> prompt,
                                     std::span<const int> response) {
  if (response.empty()) throw Error("sequence_logprob: empty response");
  if (prompt.empty()) throw Error("sequence_logprob: empty prompt");
  check_tokens(params, response);
  TokenIds input(prompt.begin(), prompt.end());
  input.insert(input.end(), response.begin(), response.end() - 1);
  ForwardPass fp(params, input, prompt.size() - 1);
  std::vector<double> out(response.size());
  for (size_t t = 0; t < response.size(); ++t) {
    out[t] = log_softmax(fp.logits().row(static_cast<Eigen::Index>(t)))(response[t]);
  }
  return out;
}

TokenIds encode_prompt(const Vocabulary& vocab, std::string_view argument, PromptMode mode,
                       std::span<const Exemplar> shots) {
  TokenIds ids{Vocabulary::kBos};
  const TokenIds body = vocab.encode(render_prompt(argument, mode, shots));
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'R', 'L', 'G', 'N', 'C', 'K', 'P', 'T'};
constexpr uint32_t kFormatVersion = 1;

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::string_view& in) {
  if (in.size() < sizeof(T)) throw Error("checkpoint: truncated");
  T v;
  std::memcpy(&v, in.data(), sizeof(T));
  in.remove_prefix(sizeof(T));
  return v;
}

}  // namespace

std::string PolicyCheckpoint::serialize() const {
  nlohmann::json header;
  header["model"] = params.config.to_json();
  header["adapter"] = params.adapter ? params.adapter->to_json() : nlohmann::json(nullptr);
  header["vocab"] = vocab.tokens();
  header["step"] = step;
  header["config_hash"] = config_hash;
  header["eval_scores"] = eval_scores ? *eval_scores : nlohmann::json(nullptr);
  nlohmann::json tensors = nlohmann::json::array();
  params.for_each([&](const std::string& name, const Matrix& m, ParamGroup) {
    tensors.push_back({name, m.rows(), m.cols()});
  });
  header["tensors"] = tensors;
  const std::string h = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put(out, kFormatVersion);
  put(out, static_cast<uint64_t>(h.size()));
  out += h;
  params.for_each([&](const std::string&, const Matrix& m, ParamGroup) {
    out.append(reinterpret_cast<const char*>(m.data()),
               static_cast<size_t>(m.size()) * sizeof(double));
  });
  return out;
}

PolicyCheckpoint PolicyCheckpoint::deserialize(std::string_view in) {
  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error("checkpoint: bad magic");
  }
  in.remove_prefix(sizeof(kMagic));
  if (take<uint32_t>(in) != kFormatVersion) throw Error("checkpoint: unsupported version");
  const auto hlen = take<uint64_t>(in);
  if (in.size() < hlen) throw Error("checkpoint: truncated header");
  const auto header = nlohmann::json::parse(in.substr(0, hlen));
  in.remove_prefix(hlen);

  PolicyCheckpoint ck;
  const auto tokens = header.at("vocab").get<std::vector<std::string>>();
  if (tokens.size() < 4) throw Error("checkpoint: vocabulary missing reserved tokens");
  ck.vocab = Vocabulary(std::span(tokens).subspan(4));
  ck.params = PolicyParams::init(ModelConfig::from_json(header.at("model")), 0);
  if (!header.at("adapter").is_null()) {
    ck.params.add_adapters(AdapterConfig::from_json(header["adapter"]), 0);
  }
  ck.step = header.at("step").get<int64_t>();
  ck.config_hash = header.at("config_hash").get<std::string>();
  if (!header.at("eval_scores").is_null()) ck.eval_scores = header["eval_scores"];

  const auto& specs = header.at("tensors");
  size_t i = 0;
  ck.params.for_each([&](const std::string& name, Matrix& m, ParamGroup) {
    if (i >= specs.size() || specs[i].at(0).get<std::string>() != name ||
        specs[i].at(1).get<Eigen::Index>() != m.rows() ||
        specs[i].at(2).get<Eigen::Index>() != m.cols()) {
      throw Error("checkpoint: tensor layout mismatch at " + name);
    }
    const size_t bytes = static_cast<size_t>(m.size()) * sizeof(double);
    if (in.size() < bytes) throw Error("checkpoint: truncated tensor " + name);
    std::memcpy(m.data(), in.data(), bytes);
    in.remove_prefix(bytes);
    ++i;
  });
  if (i != specs.size() || !in.empty()) throw Error("checkpoint: trailing data");
  return ck;
}

void PolicyCheckpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

PolicyCheckpoint PolicyCheckpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

std::string PolicyCheckpoint::digest() const { return sha256_hex(serialize()); }

// ---------------------------------------------------------------------------
// Pretraining

nlohmann::json PretrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"final_learning_rate", final_learning_rate},
          {"holdout_fraction", holdout_fraction},
          {"eval_every", eval_every},
          {"max_grad_norm", max_grad_norm},
          {"seed", seed}};
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j) {
  PretrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.final_learning_rate = j.value("final_learning_rate", c.final_learning_rate);
  c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

TokenIds with_eos(const TokenIds& target) {
  TokenIds t = target;
  if (t.empty() || t.back() != Vocabulary::kEos) t.push_back(Vocabulary::kEos);
  return t;
}

}  // namespace

std::pair<double, size_t> mle_loss_and_grad(const PolicyParams& params, const PretrainPair& pair,
                                            PolicyParams& grads, const ForwardOptions& options) {
  if (pair.prompt.empty()) throw Error("pretrain: empty prompt");
  const TokenIds target = with_eos(pair.target);
  TokenIds input = pair.prompt;
  input.insert(input.end(), target.begin(), target.end() - 1);
  ForwardPass fp(params, input, pair.prompt.size() - 1, options);
  const auto rows = static_cast<Eigen::Index>(target.size());
  Matrix dlogits(rows, params.config.vocab_size);
  double loss = 0.0;
  for (Eigen::Index t = 0; t < rows; ++t) {
    const RowVector lp = log_softmax(fp.logits().row(t));
    const int y = target[static_cast<size_t>(t)];
    loss -= lp(y);
    dlogits.row(t) = lp.array().exp();
    dlogits(t, y) -= 1.0;
  }
  fp.backward(dlogits, Vector::Zero(rows), grads);
  return {loss, target.size()};
}

double mle_loss(const PolicyParams& params, std::span<const PretrainPair> pairs) {
  double loss = 0.0;
  size_t count = 0;
  for (const auto& pair : pairs) {
    const TokenIds target = with_eos(pair.target);
    const auto lp = sequence_logprob(params, pair.prompt, target);
    for (double v : lp) loss -= v;
    count += lp.size();
  }
  if (count == 0) throw Error("mle_loss: no target tokens");
  return loss / static_cast<double>(count);
}

PretrainResult pretrain_mle(const PolicyParams& init, const Vocabulary& vocab,
                            std::span<const PretrainPair> corpus, const PretrainConfig& config) {
  if (corpus.empty()) throw Error("pretrain_mle: empty corpus");
  Rng rng(config.seed);

  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<PretrainPair> train, heldout;
  size_t n_hold = 0;
  if (config.holdout_fraction > 0.0 && corpus.size() >= 2) {
    n_hold = std::clamp<size_t>(
        static_cast<size_t>(std::llround(config.holdout_fraction * static_cast<double>(corpus.size()))),
        1, corpus.size() - 1);
  }
  for (size_t i = 0; i < order.size(); ++i) {
    (i < n_hold ? heldout : train).push_back(corpus[order[i]]);
  }
  if (heldout.empty()) heldout = train;

  PretrainResult result;
  PolicyParams params = init;
  result.initial_loss = mle_loss(params, heldout);
  result.best_loss = result.initial_loss;
  result.history.emplace_back(0, result.initial_loss);
  PolicyParams best = params;
  int best_step = 0;

  Adam adam;
  PolicyParams grads = params.zeros_like();
  const TrainableFilter trainable = all_groups;
  for (int step = 1; step <= config.steps; ++step) {
    grads.for_each([](const std::string&, Matrix& m, ParamGroup) { m.setZero(); });
    size_t tokens = 0;
    ForwardOptions opt{params.adapter.has_value(), &rng};
    for (int b = 0; b < config.batch_size; ++b) {
      const auto& pair = train[rng.below(train.size())];
      tokens += mle_loss_and_grad(params, pair, grads, opt).second;
    }
    const double inv = 1.0 / static_cast<double>(tokens);
    grads.for_each([&](const std::string&, Matrix& m, ParamGroup) { m *= inv; });
    clip_grad_norm(grads, config.max_grad_norm, trainable);
    const double progress = static_cast<double>(step - 1) / std::max(1, config.steps);
    const double lr = config.final_learning_rate +
                      (config.learning_rate - config.final_learning_rate) * 0.5 *
                          (1.0 + std::cos(std::numbers::pi * progress));
    adam.step(params, grads, lr, trainable);

    if (step % std::max(1, config.eval_every) == 0 || step == config.steps) {
      const double loss = mle_loss(params, heldout);
      result.history.emplace_back(step, loss);
      if (loss < result.best_loss) {
        result.best_loss = loss;
        best = params;
        best_step = step;
      }
    }
  }
  result.checkpoint.params = std::move(best);
  result.checkpoint.vocab = vocab;
  result.checkpoint.step = best_step;
  result.checkpoint.eval_scores = nlohmann::json{{"heldout_loss", result.best_loss}};
  return result;
}

}  // namespace realign::policy

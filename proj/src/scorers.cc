#include "realign/scorers.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "realign/common.h"
#include "realign/hash.h"
#include "realign/text.h"

namespace realign::scorers {

PropertyScore::PropertyScore(double value) : value_(value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw Error("property score outside [0,1]: " + std::to_string(value));
  }
}

std::string_view to_string(ScorerKind k) {
  switch (k) {
    case ScorerKind::appropriateness: return "appropriateness";
    case ScorerKind::similarity: return "similarity";
    case ScorerKind::fluency: return "fluency";
  }
  return "";
}

ScorerKind parse_scorer_kind(std::string_view s) {
  if (s == "appropriateness") return ScorerKind::appropriateness;
  if (s == "similarity") return ScorerKind::similarity;
  if (s == "fluency") return ScorerKind::fluency;
  throw Error("unknown scorer kind: " + std::string(s));
}

ScorerDescriptor ScorerDescriptor::make(ScorerKind kind, std::string name,
                                        nlohmann::json parameters) {
  ScorerDescriptor d;
  d.kind = kind;
  d.name = std::move(name);
  d.version = sha256_hex(parameters.dump());
  d.parameters = std::move(parameters);
  return d;
}

nlohmann::json ScorerDescriptor::to_json() const {
  return {{"kind", to_string(kind)}, {"name", name}, {"parameters", parameters},
          {"version", version}};
}

ScorerDescriptor ScorerDescriptor::from_json(const nlohmann::json& j) {
  auto d = make(parse_scorer_kind(j.at("kind").get<std::string>()),
                j.at("name").get<std::string>(), j.at("parameters"));
  if (j.contains("version") && j["version"].get<std::string>() != d.version) {
    throw Error("scorer '" + d.name + "': version hash does not match parameters");
  }
  return d;
}

double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Appropriateness

namespace {

bool is_sentence_end(std::string_view t) {
  return !t.empty() && (t.back() == '.' || t.back() == '!' || t.back() == '?');
}

bool is_all_caps(std::string_view t) {
  int letters = 0;
  for (char c : t) {
    const auto u = static_cast<unsigned char>(c);
    if (std::islower(u)) return false;
    if (std::isupper(u)) ++letters;
  }
  return letters >= 2;
}

bool has_repeated_punct(std::string_view t) {
  for (size_t i = 1; i < t.size(); ++i) {
    const bool a = t[i - 1] == '!' || t[i - 1] == '?';
    const bool b = t[i] == '!' || t[i] == '?';
    if (a && b) return true;
  }
  return false;
}

std::string lexicon_form(std::string_view t) {
  size_t b = 0, e = t.size();
  while (b < e && std::ispunct(static_cast<unsigned char>(t[b]))) ++b;
  while (e > b && std::ispunct(static_cast<unsigned char>(t[e - 1]))) --e;
  std::string s(t.substr(b, e - b));
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

double mean_sentence_length(std::span<const std::string> tokens) {
  size_t sentences = 0;
  for (const auto& t : tokens) sentences += is_sentence_end(t) ? 1 : 0;
  if (!is_sentence_end(tokens.back())) ++sentences;
  return static_cast<double>(tokens.size()) / static_cast<double>(sentences);
}

}  // namespace

AppropriatenessModel::AppropriatenessModel(std::set<std::string> lexicon, FeatureVector weights,
                                           double bias, double length_mean, double length_std)
    : weights_(weights), bias_(bias), length_mean_(length_mean), length_std_(length_std) {
  if (!(length_std > 0.0)) throw Error("appropriateness model: length_std must be positive");
  for (const auto& w : lexicon) lexicon_.insert(lexicon_form(w));
}

bool AppropriatenessModel::is_banned(std::string_view token) const {
  return lexicon_.contains(lexicon_form(token));
}

FeatureVector AppropriatenessModel::features(std::span<const std::string> tokens) const {
  FeatureVector phi{};
  if (tokens.empty()) return phi;
  double banned = 0, caps = 0, punct = 0;
  for (const auto& t : tokens) {
    banned += is_banned(t) ? 1 : 0;
    caps += is_all_caps(t) ? 1 : 0;
    punct += has_repeated_punct(t) ? 1 : 0;
  }
  const double n = static_cast<double>(tokens.size());
  phi[0] = banned / n;
  phi[1] = caps / n;
  phi[2] = punct / n;
  phi[3] = (mean_sentence_length(tokens) - length_mean_) / length_std_;
  return phi;
}

PropertyScore AppropriatenessModel::score(std::span<const std::string> tokens) const {
  const FeatureVector phi = features(tokens);
  double z = bias_;
  for (size_t i = 0; i < kNumAppFeatures; ++i) z += weights_[i] * phi[i];
  return PropertyScore(logistic(z));
}

double AppropriatenessModel::score_text(std::string_view text) const {
  return score(split_whitespace(text)).value();
}

nlohmann::json AppropriatenessModel::parameters() const {
  return {{"lexicon", std::vector<std::string>(lexicon_.begin(), lexicon_.end())},
          {"weights", std::vector<double>(weights_.begin(), weights_.end())},
          {"bias", bias_},
          {"length_mean", length_mean_},
          {"length_std", length_std_}};
}

ScorerDescriptor AppropriatenessModel::descriptor() const {
  return ScorerDescriptor::make(ScorerKind::appropriateness, "logistic-lexicon", parameters());
}

AppropriatenessModel AppropriatenessModel::from_parameters(const nlohmann::json& p) {
  const auto w = p.at("weights").get<std::vector<double>>();
  if (w.size() != kNumAppFeatures) throw Error("appropriateness model: expected 4 weights");
  FeatureVector weights{};
  std::copy(w.begin(), w.end(), weights.begin());
  auto lex = p.at("lexicon").get<std::vector<std::string>>();
  return AppropriatenessModel(std::set<std::string>(lex.begin(), lex.end()), weights,
                              p.at("bias").get<double>(), p.at("length_mean").get<double>(),
                              p.at("length_std").get<double>());
}

AppropriatenessModel fit_appropriateness_classifier(std::span<const LabeledText> labeled,
                                                    std::set<std::string> lexicon,
                                                    const ClassifierTrainingConfig& config) {
  size_t positives = 0;
  for (const auto& ex : labeled) positives += ex.appropriate ? 1 : 0;
  if (positives == 0 || positives == labeled.size()) {
    throw Error("fit_appropriateness_classifier: need examples of both classes");
  }

  // Sentence-length standardization from nonempty training texts.
  double sum = 0, sq = 0, cnt = 0;
  for (const auto& ex : labeled) {
    if (ex.tokens.empty()) continue;
    const double m = mean_sentence_length(ex.tokens);
    sum += m;
    sq += m * m;
    cnt += 1;
  }
  const double mean = cnt > 0 ? sum / cnt : 0.0;
  const double var = cnt > 0 ? sq / cnt - mean * mean : 0.0;
  const double sd = var > 1e-12 ? std::sqrt(var) : 1.0;

  AppropriatenessModel model(std::move(lexicon), config.initial_weights, config.initial_bias,
                             mean, sd);
  if (config.iterations <= 0) return model;

  const size_t n = labeled.size();
  std::vector<FeatureVector> phi(n);
  for (size_t i = 0; i < n; ++i) phi[i] = model.features(labeled[i].tokens);

  // Descent runs in per-feature standardized coordinates and is mapped back,
  // which keeps the step size meaningful for small-valued rate features.
  FeatureVector mu{}, scale{};
  for (size_t k = 0; k < kNumAppFeatures; ++k) {
    double s = 0, s2 = 0;
    for (const auto& f : phi) {
      s += f[k];
      s2 += f[k] * f[k];
    }
    mu[k] = s / static_cast<double>(n);
    const double v = s2 / static_cast<double>(n) - mu[k] * mu[k];
    scale[k] = v > 1e-12 ? std::sqrt(v) : 1.0;
  }
  FeatureVector w{};
  double b = config.initial_bias;
  for (size_t k = 0; k < kNumAppFeatures; ++k) {
    w[k] = config.initial_weights[k] * scale[k];
    b += config.initial_weights[k] * mu[k];
  }
  for (int it = 0; it < config.iterations; ++it) {
    FeatureVector gw{};
    double gb = 0;
    for (size_t i = 0; i < n; ++i) {
      double z = b;
      for (size_t k = 0; k < kNumAppFeatures; ++k) z += w[k] * (phi[i][k] - mu[k]) / scale[k];
      const double err = logistic(z) - (labeled[i].appropriate ? 1.0 : 0.0);
      for (size_t k = 0; k < kNumAppFeatures; ++k) gw[k] += err * (phi[i][k] - mu[k]) / scale[k];
      gb += err;
    }
    for (size_t k = 0; k < kNumAppFeatures; ++k) {
      w[k] -= config.learning_rate * (gw[k] / static_cast<double>(n) + config.l2 * w[k]);
    }
    b -= config.learning_rate * gb / static_cast<double>(n);
  }
  FeatureVector weights{};
  double bias = b;
  for (size_t k = 0; k < kNumAppFeatures; ++k) {
    weights[k] = w[k] / scale[k];
    bias -= weights[k] * mu[k];
  }
  return AppropriatenessModel(model.lexicon(), weights, bias, mean, sd);
}

std::set<std::string> read_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open lexicon " + path);
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Similarity

PropertyScore similarity_score(std::span<const std::string> x, std::span<const std::string> y) {
  if (x.empty() && y.empty()) return PropertyScore(1.0);
  if (x.empty() || y.empty()) return PropertyScore(0.0);
  std::map<std::string_view, long> cx;
  for (const auto& t : x) ++cx[t];
  long overlap = 0;
  for (const auto& t : y) {
    auto it = cx.find(t);
    if (it != cx.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return PropertyScore(0.0);
  // F1 = 2PR/(P+R) with P = o/|y|, R = o/|x| simplifies to 2o/(|x|+|y|),
  // which is symmetric by construction.
  const double f1 = 2.0 * static_cast<double>(overlap) / static_cast<double>(x.size() + y.size());
  return PropertyScore(std::min(1.0, f1));
}

ScorerDescriptor token_f1_descriptor() {
  return ScorerDescriptor::make(ScorerKind::similarity, "token-f1",
                                {{"unit", "whitespace-token"}, {"multiset", true}});
}

// ---------------------------------------------------------------------------
// Fluency

NGramLM::NGramLM(int order, double delta, std::set<std::string> vocabulary)
    : order_(order), delta_(delta), vocabulary_(std::move(vocabulary)) {
  if (order < 1) throw Error("NGramLM: order must be >= 1");
  if (!(delta > 0.0)) throw Error("NGramLM: delta must be positive");
  vocabulary_.insert(std::string(kEos));
  vocabulary_.insert(std::string(kUnk));
  vocabulary_.erase(std::string(kBos));
}

NGramLM NGramLM::train(std::span<const Tokens> corpus, int order, double delta) {
  std::set<std::string> vocab;
  for (const auto& s : corpus) vocab.insert(s.begin(), s.end());
  NGramLM lm(order, delta, std::move(vocab));
  for (const auto& s : corpus) lm.add_sentence(s);
  return lm;
}

std::string NGramLM::map_token(std::string_view t) const {
  std::string s(t);
  return vocabulary_.contains(s) ? s : std::string(kUnk);
}

std::string NGramLM::context_key(std::span<const std::string> history) const {
  std::string key;
  const auto need = static_cast<size_t>(order_ - 1);
  for (size_t i = 0; i < need; ++i) {
    // Position of the i-th context token counted from the left of the window.
    const size_t back = need - i;
    if (i) key += '\x1f';
    key += back > history.size() ? std::string(kBos) : map_token(history[history.size() - back]);
  }
  return key;
}

void NGramLM::add_sentence(std::span<const std::string> tokens) {
  Tokens seq(tokens.begin(), tokens.end());
  seq.emplace_back(kEos);
  for (size_t i = 0; i < seq.size(); ++i) {
    const std::string key = context_key(std::span(seq).first(i));
    const std::string next = i + 1 == seq.size() ? std::string(kEos) : map_token(seq[i]);
    counts_[key][next] += 1.0;
    context_totals_[key] += 1.0;
  }
}

double NGramLM::probability(std::span<const std::string> history, const std::string& next) const {
  const std::string key = context_key(history);
  const std::string w = next == kEos ? std::string(kEos) : map_token(next);
  double c = 0, total = 0;
  if (auto it = counts_.find(key); it != counts_.end()) {
    if (auto jt = it->second.find(w); jt != it->second.end()) c = jt->second;
    total = context_totals_.at(key);
  }
  return (c + delta_) / (total + delta_ * static_cast<double>(vocabulary_.size()));
}

nlohmann::json NGramLM::parameters() const {
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& [ctx, row] : counts_) {
    for (const auto& [w, c] : row) counts.push_back({ctx, w, c});
  }
  return {{"order", order_},
          {"delta", delta_},
          {"vocabulary", std::vector<std::string>(vocabulary_.begin(), vocabulary_.end())},
          {"counts", counts}};
}

ScorerDescriptor NGramLM::descriptor() const {
  return ScorerDescriptor::make(ScorerKind::fluency, "additive-ngram", parameters());
}

NGramLM NGramLM::from_parameters(const nlohmann::json& p) {
  auto vocab = p.at("vocabulary").get<std::vector<std::string>>();
  NGramLM lm(p.at("order").get<int>(), p.at("delta").get<double>(),
             std::set<std::string>(vocab.begin(), vocab.end()));
  for (const auto& e : p.at("counts")) {
    const auto ctx = e.at(0).get<std::string>();
    const auto w = e.at(1).get<std::string>();
    const double c = e.at(2).get<double>();
    if (c < 0) throw Error("NGramLM: negative count");
    lm.counts_[ctx][w] += c;
    lm.context_totals_[ctx] += c;
  }
  return lm;
}

double perplexity(std::span<const std::string> text, const FluencyModel& lm) {
  if (text.empty()) throw Error("perplexity: empty text");
  double nll = 0;
  const std::string eos(kEos);
  for (size_t i = 0; i <= text.size(); ++i) {
    const std::string& next = i < text.size() ? text[i] : eos;
    const double p = lm.probability(text.first(i), next);
    if (!(p > 0.0)) throw Error("perplexity: model assigned zero probability");
    nll -= std::log(p);
  }
  return std::exp(nll / static_cast<double>(text.size() + 1));
}

}  // namespace realign::scorers

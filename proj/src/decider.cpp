// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/decider.hpp"

#include "gill/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace gill {

std::string_view verdict_label(Verdict v) { return v == Verdict::Retrieve ? "ret" : "gen"; }

Verdict parse_verdict(std::string_view label) {
  if (label == "ret") return Verdict::Retrieve;
  if (label == "gen") return Verdict::Generate;
  throw std::invalid_argument("decision label must be \"ret\" or \"gen\", got \"" + std::string(label) + "\"");
}

Eigen::VectorXd build_features(const RowMatrix& img_hidden, double max_cosine) {
  Eigen::VectorXd f(img_hidden.size() + 1);
  f.head(img_hidden.size()) = Eigen::Map<const Eigen::VectorXd>(img_hidden.data(), img_hidden.size());
  f[img_hidden.size()] = max_cosine;
  return f;
}

Eigen::VectorXd build_features(const RowMatrix& img_hidden, const CandidateSet& candidates,
                               const RetrievalHead& head) {
  if (candidates.empty()) throw std::invalid_argument("build_features: empty candidate set");
  return build_features(img_hidden, max_candidate_cosine(img_hidden.row(0).transpose(), candidates, head));
}

Eigen::VectorXd build_features(const DecisionExample& ex) { return build_features(ex.img_hidden, ex.max_cosine); }

// ---------------------------------------------------------------------------
// Logistic decider

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

double LinearDecider::probability(const Eigen::VectorXd& features) const {
  if (features.size() != weight.size()) {
    throw ShapeError("decider: feature width " + std::to_string(features.size()) + " vs weight width " +
                     std::to_string(weight.size()));
  }
  const Eigen::VectorXd z = (features - feature_mean).cwiseQuotient(feature_scale);
  return sigmoid(weight.dot(z) + bias);
}

Verdict LinearDecider::predict(const Eigen::VectorXd& features) const {
  return probability(features) > threshold ? Verdict::Retrieve : Verdict::Generate;
}

DecisionFn LinearDecider::as_decision() const {
  return [d = *this](const RowMatrix& img_hidden, double max_cosine) {
    return d.predict(build_features(img_hidden, max_cosine));
  };
}

namespace {

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_std(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void to_json(nlohmann::json& j, const LinearDecider& d) {
  j = {{"weight", to_std(d.weight)},
       {"bias", d.bias},
       {"feature_mean", to_std(d.feature_mean)},
       {"feature_scale", to_std(d.feature_scale)},
       {"threshold", d.threshold}};
}

void from_json(const nlohmann::json& j, LinearDecider& d) {
  d.weight = from_std(j.at("weight").get<std::vector<double>>());
  d.bias = j.at("bias").get<double>();
  d.feature_mean = from_std(j.at("feature_mean").get<std::vector<double>>());
  d.feature_scale = from_std(j.at("feature_scale").get<std::vector<double>>());
  d.threshold = j.at("threshold").get<double>();
  if (d.feature_mean.size() != d.weight.size() || d.feature_scale.size() != d.weight.size()) {
    throw FormatError("decider: weight, feature_mean and feature_scale widths differ");
  }
  if (!(d.threshold > 0 && d.threshold < 1)) throw FormatError("decider: threshold must lie in (0, 1)");
}

LinearDecider train_decider(const std::vector<Eigen::VectorXd>& features, const std::vector<Verdict>& labels,
                            const DeciderTrainOptions& opts, std::vector<double>* loss_trace) {
  if (features.empty() || features.size() != labels.size()) {
    throw std::invalid_argument("train_decider: need equally many (nonzero) features and labels");
  }
  if (!(opts.threshold > 0 && opts.threshold < 1)) throw std::invalid_argument("train_decider: threshold outside (0, 1)");
  if (opts.epochs < 0 || !(opts.lr > 0)) throw std::invalid_argument("train_decider: epochs >= 0 and lr > 0 required");
  const auto n_ret = std::count(labels.begin(), labels.end(), Verdict::Retrieve);
  if (n_ret == 0 || n_ret == static_cast<std::ptrdiff_t>(labels.size())) {
    throw std::invalid_argument("train_decider: training set holds a single class");
  }

  const auto n = static_cast<Eigen::Index>(features.size());
  const Eigen::Index width = features.front().size();
  RowMatrix x(n, width);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& f = features[static_cast<std::size_t>(i)];
    if (f.size() != width) throw ShapeError("train_decider: ragged feature widths");
    x.row(i) = f.transpose();
    y[i] = labels[static_cast<std::size_t>(i)] == Verdict::Retrieve ? 1.0 : 0.0;
  }

  LinearDecider d;
  d.threshold = opts.threshold;
  d.feature_mean = x.colwise().mean().transpose();
  x.rowwise() -= d.feature_mean.transpose();
  d.feature_scale = (x.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt().transpose();
  for (Eigen::Index c = 0; c < width; ++c) {
    if (d.feature_scale[c] < 1e-12) d.feature_scale[c] = 1.0;
  }
  x = x * d.feature_scale.cwiseInverse().asDiagonal();
  d.weight = Eigen::VectorXd::Zero(width);
  d.bias = 0.0;

  auto loss_of = [&](const Eigen::VectorXd& z) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) total += softplus(z[i]) - y[i] * z[i];
    return total / static_cast<double>(n);
  };
  for (int epoch = 0; epoch <= opts.epochs; ++epoch) {
    const Eigen::VectorXd z = (x * d.weight).array() + d.bias;
    if (loss_trace) loss_trace->push_back(loss_of(z));
    if (epoch == opts.epochs) break;
    Eigen::VectorXd residual(n);
    for (Eigen::Index i = 0; i < n; ++i) residual[i] = sigmoid(z[i]) - y[i];
    d.weight -= opts.lr * (x.transpose() * residual) / static_cast<double>(n);
    d.bias -= opts.lr * residual.mean();
  }
  return d;
}

// ---------------------------------------------------------------------------
// Metrics and baselines

double macro_f1(const std::vector<Verdict>& predictions, const std::vector<Verdict>& labels) {
  if (predictions.empty() || predictions.size() != labels.size()) {
    throw std::invalid_argument("macro_f1: need equally many (nonzero) predictions and labels");
  }
  double sum = 0.0;
  int classes = 0;
  for (Verdict c : {Verdict::Retrieve, Verdict::Generate}) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool p = predictions[i] == c, l = labels[i] == c;
      tp += p && l;
      fp += p && !l;
      fn += !p && l;
    }
    if (tp + fp + fn == 0) continue;
    sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    ++classes;
  }
  return sum / classes;
}

double accuracy(const std::vector<Verdict>& predictions, const std::vector<Verdict>& labels) {
  if (predictions.empty() || predictions.size() != labels.size()) {
    throw std::invalid_argument("accuracy: need equally many (nonzero) predictions and labels");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Verdict heuristic_decide(double max_cosine, double threshold) {
  return max_cosine > threshold ? Verdict::Retrieve : Verdict::Generate;
}

SweepResult sweep_threshold(const std::vector<double>& max_cosines, const std::vector<Verdict>& labels, double step) {
  if (!(step > 0)) throw std::invalid_argument("sweep_threshold: grid step must be positive");
  if (max_cosines.size() != labels.size()) throw std::invalid_argument("sweep_threshold: cosine/label count mismatch");
  SweepResult out;
  const auto points = static_cast<int>(std::floor(1.0 / step + 1e-9));
  std::vector<Verdict> preds(labels.size());
  for (int g = 0; g <= points; ++g) {
    const double t = std::min(1.0, g * step);
    for (std::size_t i = 0; i < labels.size(); ++i) preds[i] = heuristic_decide(max_cosines[i], t);
    const double f1 = macro_f1(preds, labels);
    if (out.grid.empty() || f1 > out.best_f1) {
      out.best_f1 = f1;
      out.best_threshold = t;
    }
    out.grid.emplace_back(t, f1);
  }
  const auto [lo, hi] = std::minmax_element(out.grid.begin(), out.grid.end(),
                                            [](const auto& a, const auto& b) { return a.second < b.second; });
  out.min_f1 = lo->second;
  out.max_f1 = hi->second;
  return out;
}

std::vector<Verdict> always(Verdict v, std::size_t n) { return std::vector<Verdict>(n, v); }

std::vector<Verdict> random_prior_baseline(const std::vector<Verdict>& labels, std::uint64_t seed) {
  if (labels.empty()) throw std::invalid_argument("random_prior_baseline: empty label set");
  const double prior = static_cast<double>(std::count(labels.begin(), labels.end(), Verdict::Retrieve)) /
                       static_cast<double>(labels.size());
  Rng rng = make_rng(seed, 500);
  std::bernoulli_distribution coin(prior);
  std::vector<Verdict> out(labels.size());
  for (auto& v : out) v = coin(rng) ? Verdict::Retrieve : Verdict::Generate;
  return out;
}

std::vector<DecisionExample> synthesize_decision_set(const DecisionSetSpec& spec) {
  if (spec.count < 1 || spec.r < 1 || spec.e < 1) throw std::invalid_argument("decision set: count, r, e must be >= 1");
  if (spec.margin < 0 || spec.margin >= 0.5) throw std::invalid_argument("decision set: margin must lie in [0, 0.5)");
  if (spec.flip_fraction < 0 || spec.flip_fraction > 1) throw std::invalid_argument("decision set: flip_fraction in [0, 1]");
  Rng rng = make_rng(spec.seed, 510);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Cosines are uniform over [-1, 1] minus the band (0.5 - margin, 0.5 + margin].
  const double below = 1.5 - spec.margin, above = 0.5 - spec.margin;
  std::uniform_real_distribution<double> u(0.0, below + above);
  std::vector<DecisionExample> out(static_cast<std::size_t>(spec.count));
  for (auto& ex : out) {
    const double s = u(rng);
    ex.max_cosine = s < below ? -1.0 + s : 0.5 + spec.margin + (s - below);
    ex.max_cosine = std::clamp(ex.max_cosine, -1.0, 1.0);
    ex.label = ex.max_cosine > 0.5 ? Verdict::Retrieve : Verdict::Generate;
    ex.img_hidden.resize(spec.r, spec.e);
    for (Eigen::Index i = 0; i < ex.img_hidden.size(); ++i) ex.img_hidden.data()[i] = normal(rng);
  }
  const auto flips = static_cast<std::size_t>(std::llround(spec.flip_fraction * spec.count));
  std::vector<std::size_t> order(out.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < flips; ++i) {
    auto& ex = out[order[i]];
    ex.label = ex.label == Verdict::Retrieve ? Verdict::Generate : Verdict::Retrieve;
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSONL

std::vector<DecisionRecord> read_decision_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<DecisionRecord> out;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const auto j = nlohmann::json::parse(line);
      for (const auto& [key, _] : j.items()) {
        if (key != "prompt" && key != "label" && key != "features_path") throw FormatError("unknown key \"" + key + "\"");
      }
      DecisionRecord rec;
      rec.prompt = j.at("prompt").get<std::string>();
      rec.label = parse_verdict(j.at("label").get<std::string>());
      if (j.contains("features_path") && !j["features_path"].is_null()) {
        rec.features_path = j["features_path"].get<std::string>();
      }
      out.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return out;
}

void write_decision_records(const std::filesystem::path& path, const std::vector<DecisionRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& rec : records) {
    nlohmann::json j = {{"prompt", rec.prompt}, {"label", verdict_label(rec.label)}};
    if (rec.features_path) j["features_path"] = *rec.features_path;
    out << j.dump() << '\n';
  }
}

}  // namespace gill

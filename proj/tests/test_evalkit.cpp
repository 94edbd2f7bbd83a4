// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/evalkit.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace gill;
namespace fs = std::filesystem;

namespace {

struct Setup {
  FrozenBackbones bb = build_frozen(BackboneConfig{});
  AdapterSet adapters = AdapterSet::init(bb.config, AdapterConfig{});
  EvalCorpus corpus;
  CandidateSet candidates;

  Setup() {
    ShapeworldSpec spec;
    spec.count = 256;
    spec.heldout_count = 8;
    corpus = EvalCorpus::from_shapeworld(synthesize_shapeworld(spec), bb.vocab);
    candidates = build_candidates(bb, adapters.retrieval, corpus.candidates);
  }
};

Setup& setup() {
  static Setup s;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gill_test_evalkit_" + name);
  fs::remove_all(dir);
  return dir;
}

std::vector<Eigen::VectorXd> random_queries(Rng& rng, int n, int e) {
  std::vector<Eigen::VectorXd> out;
  for (int i = 0; i < n; ++i) out.push_back(gaussian_param(rng, {e}, 1.0, false).data());
  return out;
}

}  // namespace

TEST(Evalkit, RecallMatchesNaiveReranking) {
  auto& s = setup();
  Rng rng = make_rng(71, 0);
  const auto queries = random_queries(rng, 100, s.bb.config.e);
  std::vector<int> gold;
  const int n = static_cast<int>(s.candidates.size());
  for (int i = 0; i < 100; ++i) gold.push_back(std::uniform_int_distribution<int>(0, n - 1)(rng));
  const RowMatrix t2i = s.adapters.retrieval.t2i.mat();
  for (int k : {1, 5, 10}) {
    int hits = 0;
    for (int q = 0; q < 100; ++q) {
      const RowMatrix query = oracle::matmul(RowMatrix(queries[static_cast<std::size_t>(q)].transpose()), t2i);
      std::vector<double> scores;
      for (int c = 0; c < n; ++c) {
        scores.push_back(oracle::cosine(query, 0, RowMatrix(s.candidates.at(static_cast<std::size_t>(c)).embedding.transpose()), 0));
      }
      hits += oracle::rank_of(scores, gold[static_cast<std::size_t>(q)]) < k;
    }
    EXPECT_DOUBLE_EQ(recall_at_k(queries, gold, s.candidates, s.adapters.retrieval, k), hits / 100.0) << "k=" << k;
  }
}

TEST(Evalkit, RandomQueriesSitNearChance) {
  auto& s = setup();
  ASSERT_EQ(s.candidates.size(), 128u);
  Rng rng = make_rng(72, 0);
  const auto queries = random_queries(rng, 512, s.bb.config.e);
  std::vector<int> gold;
  for (int i = 0; i < 512; ++i) gold.push_back(std::uniform_int_distribution<int>(0, 127)(rng));
  const double r1 = recall_at_k(queries, gold, s.candidates, s.adapters.retrieval, 1);
  const double r5 = recall_at_k(queries, gold, s.candidates, s.adapters.retrieval, 5);
  const double r10 = recall_at_k(queries, gold, s.candidates, s.adapters.retrieval, 10);
  // Binomial(512, 1/128): mean 4 hits, sd about 2; allow five sd.
  EXPECT_LE(r1 * 512, 4 + 5 * 2);
  EXPECT_LE(r1, r5);
  EXPECT_LE(r5, r10);
  EXPECT_DOUBLE_EQ(recall_at_k(queries, gold, s.candidates, s.adapters.retrieval, 128), 1.0);
}

TEST(Evalkit, RecallInputErrors) {
  auto& s = setup();
  const std::vector<Eigen::VectorXd> one{Eigen::VectorXd::Ones(s.bb.config.e)};
  EXPECT_THROW(recall_at_k(one, {999}, s.candidates, s.adapters.retrieval, 1), std::invalid_argument);
  EXPECT_THROW(recall_at_k(one, {0, 1}, s.candidates, s.adapters.retrieval, 1), std::invalid_argument);
  EXPECT_THROW(recall_at_k({}, {}, s.candidates, s.adapters.retrieval, 1), std::invalid_argument);
}

TEST(Evalkit, EmbedSimilarityProperties) {
  auto& s = setup();
  const Raster& a = s.corpus.train[0].image;
  const Raster& b = s.corpus.train[1].image;
  EXPECT_NEAR(embed_similarity(s.bb, a, a), 1.0, 1e-12);
  EXPECT_NEAR(embed_similarity(s.bb, a, b), embed_similarity(s.bb, b, a), 1e-15);
  Raster neg = a;
  neg.pixels = -a.pixels;
  EXPECT_NEAR(embed_similarity(s.bb, a, neg), -1.0, 1e-12);
  EXPECT_THROW(embed_similarity(s.bb, a, Raster::zeros(4, 4, 3)), ShapeError);
  EXPECT_THROW(embed_similarity(s.bb, a, Raster::zeros(a.height, a.width, a.channels)), std::domain_error);
}

TEST(Evalkit, ConfigDigestIsStableAndSensitive) {
  nlohmann::json a = RunConfig{};
  const nlohmann::json b = RunConfig{};
  EXPECT_EQ(config_digest(a), config_digest(b));
  EXPECT_EQ(config_digest(a).size(), 64u);
  a["train"]["lr"] = 0.5;
  EXPECT_NE(config_digest(a), config_digest(b));
}

TEST(Evalkit, ReportRejectsNonFiniteMetrics) {
  EvalReport r;
  EXPECT_THROW(r.set_metric("x", std::nan("")), std::domain_error);
  EXPECT_THROW(r.set_metric("x", INFINITY), std::domain_error);
  r.set_metric("x", 0.25);
  EXPECT_EQ(r.metric("x"), 0.25);
  EXPECT_THROW(r.metric("y"), std::out_of_range);
  EXPECT_EQ(format_sig6(1.0 / 3.0), "0.333333");
}

TEST(Evalkit, RetrievalReportsAreByteIdentical) {
  auto& s = setup();
  const nlohmann::json cfg = RunConfig{};
  const fs::path d1 = fresh_dir("a"), d2 = fresh_dir("b");
  const EvalReport r1 = evaluate_retrieval(s.bb, s.adapters, s.corpus, "ret", cfg);
  const EvalReport r2 = evaluate_retrieval(s.bb, s.adapters, s.corpus, "ret", cfg);
  r1.write(d1);
  r2.write(d2);
  for (const char* f : {"ret_metrics.csv", "ret_metrics.json", "ret_records.jsonl"}) {
    ASSERT_TRUE(fs::exists(d1 / f)) << f;
    EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
  }
  EXPECT_TRUE(fs::exists(d1 / "ret_timing.json"));
  EXPECT_EQ(r1.records.size(), s.corpus.candidates.size());
  EXPECT_LE(r1.metric("recall_at_1"), r1.metric("recall_at_5"));
  EXPECT_LE(r1.metric("recall_at_5"), r1.metric("recall_at_10"));
  EXPECT_EQ(slurp(d1 / "ret_metrics.csv").substr(0, 13), "metric,value\n");
}

TEST(Evalkit, GenerationReportCoversBothSplits) {
  auto& s = setup();
  const EvalReport r = evaluate_generation(s.bb, s.adapters, s.corpus, "gen", nlohmann::json(RunConfig{}));
  for (const char* split : {"train", "heldout"}) {
    const std::string p(split);
    EXPECT_GE(r.metric(p + "_target_cosine"), -1.0);
    EXPECT_LE(r.metric(p + "_target_cosine"), 1.0);
    EXPECT_GE(r.metric(p + "_l_g"), 0.0);
    EXPECT_LE(std::abs(r.metric(p + "_embed_similarity")), 1.0);
  }
  EXPECT_NEAR(r.metric("train_l_g"), mean_gen_loss(s.bb, s.adapters, s.corpus.train), 1e-12);
}

TEST(Evalkit, ImageTokenSweepEmitsFourRows) {
  ShapeworldSpec spec;
  spec.count = 16;
  spec.distinct = 0;
  spec.heldout_count = 4;
  spec.candidate_count = 8;
  const FrozenBackbones bb = build_frozen(BackboneConfig{});
  const EvalCorpus corpus = EvalCorpus::from_shapeworld(synthesize_shapeworld(spec), bb.vocab);
  RunConfig base;
  base.train.steps = 2;
  base.train.batch_size = 2;
  const AblationResult res = run_ablation(AblationAxis::ImageTokens, base, corpus, "sweep");
  const std::string csv = res.csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "setting,final_l_g,embed_similarity,recall_at_1");
  EXPECT_NE(csv.find("\nr1,"), std::string::npos);
  EXPECT_NE(csv.find("\nr8,"), std::string::npos);
  const fs::path dir = fresh_dir("sweep");
  res.write(dir, "sweep");
  EXPECT_EQ(slurp(dir / "sweep_ablation_r.csv"), csv);
  EXPECT_EQ(run_ablation(AblationAxis::ImageTokens, base, corpus, "sweep").csv(), csv);
}

TEST(Evalkit, MapperAblationCoversEveryVariant) {
  ShapeworldSpec spec;
  spec.count = 16;
  spec.distinct = 0;
  spec.heldout_count = 4;
  spec.candidate_count = 8;
  const FrozenBackbones bb = build_frozen(BackboneConfig{});
  const EvalCorpus corpus = EvalCorpus::from_shapeworld(synthesize_shapeworld(spec), bb.vocab);
  RunConfig base;
  base.train.steps = 1;
  base.train.batch_size = 2;
  const AblationResult res = run_ablation(AblationAxis::Mapper, base, corpus, "m", 2);
  ASSERT_EQ(res.settings.size(), 4u);
  EXPECT_EQ(res.settings[2], "transformer_encoder");
  for (const auto& rep : res.reports) {
    EXPECT_GE(rep.metric("final_l_g"), 0.0);
    EXPECT_GE(rep.metric("final_l_g_std"), 0.0);
  }
  EXPECT_EQ(parse_ablation_axis("r"), AblationAxis::ImageTokens);
  EXPECT_THROW(parse_ablation_axis("depth"), std::invalid_argument);
}

// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: prints one PASS/FAIL line per criterion A1..A10 and exits
// nonzero when any criterion fails. Usage: acceptance [output-dir]

#include "gill/decider.hpp"
#include "gill/evalkit.hpp"
#include "gill/trainer.hpp"
#include "oracles.hpp"
#include "primitive_cases.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

using namespace gill;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

int failures = 0;

void report(const char* id, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << id << ' ' << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Raster random_raster(Rng& rng, const BackboneConfig& cfg) {
  Raster x = Raster::zeros(cfg.H, cfg.W, cfg.C);
  for (auto& p : x.pixels) p = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return x;
}

TargetCache targets_for(const FrozenBackbones& bb, const std::vector<TrainingExample>& pool) {
  std::vector<std::vector<int>> captions;
  for (const auto& ex : pool) captions.push_back(ex.caption);
  return precompute_targets(bb, captions);
}

// ---------------------------------------------------------------------------

void check_gradient_suite() {
  const auto t0 = Clock::now();
  Rng rng = make_rng(1001, 0);
  double prim_max = 0.0;
  int count = 0;
  for (const auto& kind : cases::primitive_kinds()) {
    for (int trial = 0; trial < 6; ++trial, ++count) {
      prim_max = std::max(prim_max, cases::run_primitive_case(kind, rng, trial).error);
    }
  }

  const FrozenBackbones bb = build_frozen(BackboneConfig{});
  const AdapterSet adapters = AdapterSet::init(bb.config, AdapterConfig{});
  ShapeworldSpec spec;
  spec.count = 8;
  spec.distinct = 8;
  spec.candidate_count = 8;
  spec.heldout_count = 1;
  const auto data = EvalCorpus::from_shapeworld(synthesize_shapeworld(spec), bb.vocab).train;
  LossContext ctx{bb, adapters};
  std::vector<Tensor> params;
  for (const auto& p : adapters.parameters()) params.push_back(p.tensor);
  std::vector<std::pair<Raster, std::vector<int>>> batch;
  for (int i = 0; i < 4; ++i) batch.emplace_back(random_raster(rng, bb.config), data[static_cast<std::size_t>(i)].caption);
  const std::vector<std::pair<std::string, std::function<Tensor()>>> losses = {
      {"l_c", [&] { return caption_loss(ctx, batch[0].first, batch[0].second); }},
      {"l_p", [&] { return img_pred_loss(ctx, batch[1].second); }},
      {"l_g", [&] { return gen_loss(ctx, batch[2].second); }},
      {"l_r", [&] { return retrieval_loss(ctx, batch); }},
  };
  std::string per_loss;
  double loss_max = 0.0;
  for (const auto& [name, f] : losses) {
    const double err = check_gradients(f, params, 1e-6, 48);
    loss_max = std::max(loss_max, err);
    per_loss += " " + name + "=" + fmt("%.2e", err);
  }
  const double secs = seconds_since(t0);
  report("A1", prim_max <= 1e-4 && loss_max <= 1e-4 && secs < 120,
         "primitives max rel err " + fmt("%.2e", prim_max) + " over " + std::to_string(count) + " cases; losses" +
             per_loss + "; " + fmt("%.1f", secs) + " s (limits 1e-4, 120 s)");
}

struct MainRun {
  FrozenBackbones bb;
  EvalCorpus corpus;
  TrainState state;
};

MainRun train_main_run(const fs::path& out) {
  RunConfig cfg;
  cfg.train.steps = 2000;
  MainRun run{build_frozen(cfg.backbone), {}, {}};
  run.corpus = EvalCorpus::from_shapeworld(synthesize_shapeworld(ShapeworldSpec{}), run.bb.vocab);
  const TargetCache targets = targets_for(run.bb, run.corpus.train);
  run.state = TrainState::fresh(cfg, run.corpus.train.size());

  const auto t0 = Clock::now();
  const std::string before = run.bb.checksum();
  std::string at_100;
  while (run.state.step < cfg.train.steps) {
    train_one(run.bb, run.state, run.corpus.train, &targets);
    if (run.state.step == 100) at_100 = run.bb.checksum();
  }
  const double secs = seconds_since(t0);
  const std::string after = run.bb.checksum();
  report("A2", before == at_100 && before == after,
         "frozen SHA-256 " + before.substr(0, 16) + "... unchanged after 100 steps: " + (before == at_100 ? "yes" : "no") +
             ", after 2000 steps: " + (before == after ? "yes" : "no"));

  save_checkpoint(out / "main_run.gill", run.state);
  const EvalReport gen = evaluate_generation(run.bb, run.state.adapters, run.corpus, "acceptance-generation",
                                             nlohmann::json(cfg));
  gen.write(out);
  const double train_cos = gen.metric("train_target_cosine"), held_cos = gen.metric("heldout_target_cosine");
  report("A3", train_cos >= 0.95 && held_cos >= 0.90 && secs < 900,
         "mean target cosine train " + fmt("%.4f", train_cos) + " (>= 0.95), held-out " + fmt("%.4f", held_cos) +
             " (>= 0.90); 2000 steps in " + fmt("%.1f", secs) + " s (< 900 s)");

  const EvalReport ret = evaluate_retrieval(run.bb, run.state.adapters, run.corpus, "acceptance-retrieval",
                                            nlohmann::json(cfg));
  ret.write(out);
  const double r1 = ret.metric("recall_at_1"), r5 = ret.metric("recall_at_5");
  report("A4", run.corpus.candidates.size() == 128 && r1 >= 0.9 && r5 >= 0.98,
         std::to_string(run.corpus.candidates.size()) + " candidates: R@1 " + fmt("%.4f", r1) + " (>= 0.9), R@5 " +
             fmt("%.4f", r5) + " (>= 0.98)");
  return run;
}

void check_forcing(const MainRun& run) {
  const auto& vocab = run.bb.vocab;
  const int r = vocab.img_tokens();
  const CandidateSet candidates = build_candidates(run.bb, run.state.adapters.retrieval, run.corpus.candidates);
  const double temperatures[] = {0.7, 1.0, 2.0, 5.0};
  long violations = 0, images = 0, greedy_images = 0;
  for (int i = 0; i < 1000; ++i) {
    DecodeConfig cfg;
    cfg.mode = i % 2 == 0 ? DecodeMode::Greedy : DecodeMode::Sample;
    cfg.temperature = temperatures[(i / 2) % 4];
    cfg.max_new_tokens = 16;
    cfg.seed = static_cast<std::uint64_t>(i);
    MultimodalSequence prompt;
    const auto& caption = run.corpus.train[static_cast<std::size_t>(i) % run.corpus.train.size()].caption;
    prompt.append_text(std::vector<int>(caption.begin(), caption.begin() + 1 + i % static_cast<int>(caption.size())));
    const DecodeResult res = generate_sequence(prompt, cfg, run.state.adapters, run.bb, &candidates);
    const auto& e = res.emitted;
    for (std::size_t t = 0; t < e.size();) {
      if (e[t] == vocab.img_id(1)) {
        ++images;
        greedy_images += cfg.mode == DecodeMode::Greedy;
        for (int j = 2; j <= r; ++j) {
          const std::size_t at = t + static_cast<std::size_t>(j) - 1;
          if (at >= e.size() || e[at] != vocab.img_id(j)) ++violations;
        }
        t += static_cast<std::size_t>(r);
      } else {
        violations += vocab.is_img(e[t]);
        ++t;
      }
    }
    for (const auto& seg : res.sequence.segments()) {
      if (const auto* text = std::get_if<TextSpan>(&seg)) {
        for (int id : text->tokens) violations += vocab.is_img(id);
      }
    }
  }
  report("A5", violations == 0 && images > 0,
         "1000 decodes (500 greedy, 500 sampled): " + std::to_string(images) + " [IMG1] emissions (" +
             std::to_string(greedy_images) + " greedy), " + std::to_string(violations) + " violations");
}

void check_decider() {
  DecisionSetSpec sep;
  sep.count = 300;
  sep.margin = 0.1;
  sep.seed = 77;
  std::vector<Eigen::VectorXd> features;
  std::vector<Verdict> labels;
  for (const auto& ex : synthesize_decision_set(sep)) features.push_back(build_features(ex)), labels.push_back(ex.label);
  const LinearDecider d = train_decider(features, labels);
  std::vector<Verdict> pred;
  for (const auto& f : features) pred.push_back(d.predict(f));
  const double f1_sep = macro_f1(pred, labels);

  std::vector<Verdict> counts(201, Verdict::Generate);
  counts.insert(counts.end(), 110, Verdict::Retrieve);
  const auto always_gen = always(Verdict::Generate, counts.size());
  const double f1_gen = macro_f1(always_gen, counts);
  std::vector<int> label_ints, pred_ints(counts.size(), 0);
  for (Verdict v : counts) label_ints.push_back(v == Verdict::Retrieve);
  const double f1_oracle = oracle::Confusion::from(label_ints, pred_ints).macro_f1();

  DecisionSetSpec clean;
  clean.count = 400;
  clean.seed = 78;
  std::vector<double> cos;
  std::vector<Verdict> clean_labels;
  for (const auto& ex : synthesize_decision_set(clean)) cos.push_back(ex.max_cosine), clean_labels.push_back(ex.label);
  const SweepResult sweep = sweep_threshold(cos, clean_labels);

  const bool a = f1_sep == 1.0;
  const bool b = std::abs(f1_gen - 0.3926) <= 1e-4 && std::abs(f1_gen - f1_oracle) <= 1e-12;
  const bool c = sweep.best_f1 == 1.0 && std::abs(sweep.best_threshold - 0.5) <= 0.05;
  report("A6", a && b && c,
         "(a) separable macro-F1 " + fmt("%.4f", f1_sep) + "; (b) always-gen 201/110 macro-F1 " + fmt("%.4f", f1_gen) +
             " (oracle " + fmt("%.4f", f1_oracle) + "); (c) sweep best F1 " + fmt("%.4f", sweep.best_f1) + " at " +
             fmt("%.2f", sweep.best_threshold));
}

void check_mapper_ablation(const fs::path& out) {
  const FrozenBackbones bb = build_frozen(BackboneConfig{});
  ShapeworldSpec spec;
  spec.caption_template = CaptionTemplate::Pair;
  spec.distinct = 0;
  spec.candidate_count = 64;
  const EvalCorpus corpus = EvalCorpus::from_shapeworld(synthesize_shapeworld(spec), bb.vocab);
  RunConfig base;
  base.train.steps = 1000;
  const AblationResult res = run_ablation(AblationAxis::Mapper, base, corpus, "acceptance");
  res.write(out, "acceptance");
  std::map<std::string, double> lg;
  std::string detail;
  for (std::size_t i = 0; i < res.settings.size(); ++i) {
    lg[res.settings[i]] = res.reports[i].metric("final_l_g");
    detail += res.settings[i] + "=" + fmt("%.5f", lg[res.settings[i]]) + " ";
  }
  const double ratio = lg.at("gill_mapper") / lg.at("linear");
  report("A7", res.settings.size() == 4 && ratio <= 0.5,
         "final l_g after 1000 steps on the two-object task: " + detail + "; gill_mapper/linear " + fmt("%.3f", ratio) +
             " (<= 0.5)");
}

void check_r_sweep(const fs::path& out) {
  const FrozenBackbones bb = build_frozen(BackboneConfig{});
  const EvalCorpus corpus = EvalCorpus::from_shapeworld(synthesize_shapeworld(ShapeworldSpec{}), bb.vocab);
  RunConfig base;
  base.train.steps = 1000;
  const AblationResult res = run_ablation(AblationAxis::ImageTokens, base, corpus, "acceptance");
  res.write(out, "acceptance");
  const std::string csv = res.csv();
  const long rows = std::count(csv.begin(), csv.end(), '\n') - 1;
  std::map<std::string, double> lg;
  std::string detail;
  for (std::size_t i = 0; i < res.settings.size(); ++i) {
    lg[res.settings[i]] = res.reports[i].metric("final_l_g");
    detail += res.settings[i] + "=" + fmt("%.5f", lg[res.settings[i]]) + " ";
  }
  report("A8", rows == 4 && lg.at("r4") <= lg.at("r1") && lg.at("r8") <= lg.at("r1"),
         std::to_string(rows) + "-row CSV; final l_g after 1000 steps: " + detail + "(r4, r8 <= r1)");
}

std::vector<std::string> end_to_end(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  ShapeworldSpec spec;
  spec.count = 64;
  spec.distinct = 32;
  spec.candidate_count = 32;
  spec.heldout_count = 8;
  const ShapeworldData data = synthesize_shapeworld(spec);
  write_shapeworld(dir / "data", spec, data);
  RunConfig cfg;
  cfg.train.steps = 30;
  cfg.train.batch_size = 8;
  const FrozenBackbones bb = build_frozen(cfg.backbone);
  const EvalCorpus corpus = EvalCorpus::load(dir / "data", bb.vocab, cfg.backbone);
  const TargetCache targets = targets_for(bb, corpus.train);
  TrainState state = TrainState::fresh(cfg, corpus.train.size());
  while (state.step < cfg.train.steps) train_one(bb, state, corpus.train, &targets);
  save_checkpoint(dir / "checkpoint.gill", state);
  const AdapterSet adapters = load_adapters(dir / "checkpoint.gill");
  evaluate_retrieval(bb, adapters, corpus, "e2e-retrieval", nlohmann::json(cfg)).write(dir);
  evaluate_generation(bb, adapters, corpus, "e2e-generation", nlohmann::json(cfg)).write(dir);
  std::vector<std::string> files;
  for (const char* f : {"checkpoint.gill", "e2e-retrieval_metrics.csv", "e2e-retrieval_metrics.json",
                        "e2e-retrieval_records.jsonl", "e2e-generation_metrics.csv", "e2e-generation_metrics.json",
                        "e2e-generation_records.jsonl"}) {
    files.push_back(slurp(dir / f));
  }
  return files;
}

void check_determinism(const fs::path& out) {
  const auto a = end_to_end(out / "e2e_a");
  const auto b = end_to_end(out / "e2e_b");
  const bool identical = a == b;

  const FrozenBackbones bb = build_frozen(BackboneConfig{});
  ShapeworldSpec spec;
  spec.count = 64;
  spec.distinct = 32;
  spec.candidate_count = 32;
  const EvalCorpus corpus = EvalCorpus::from_shapeworld(synthesize_shapeworld(spec), bb.vocab);
  const TargetCache targets = targets_for(bb, corpus.train);
  RunConfig cfg;
  cfg.train.batch_size = 8;
  TrainState straight = TrainState::fresh(cfg, corpus.train.size());
  std::vector<double> expected;
  for (int i = 0; i < 20; ++i) expected.push_back(train_one(bb, straight, corpus.train, &targets).total);
  TrainState first = TrainState::fresh(cfg, corpus.train.size());
  for (int i = 0; i < 10; ++i) train_one(bb, first, corpus.train, &targets);
  save_checkpoint(out / "resume_mid.gill", first);
  TrainState resumed = load_checkpoint(out / "resume_mid.gill");
  double worst = 0.0;
  for (int i = 10; i < 20; ++i) {
    worst = std::max(worst, std::abs(train_one(bb, resumed, corpus.train, &targets).total - expected[static_cast<std::size_t>(i)]));
  }
  report("A9", identical && worst <= 1e-5,
         std::string("two seeded end-to-end runs byte-identical (checkpoint + reports): ") + (identical ? "yes" : "no") +
             "; resume max |loss diff| " + fmt("%.2e", worst) + " over steps 11-20 (<= 1e-5)");
}

void check_info_nce() {
  const FrozenBackbones bb = build_frozen(BackboneConfig{});
  const AdapterSet adapters = AdapterSet::init(bb.config, AdapterConfig{});
  const auto& head = adapters.retrieval;
  Rng rng = make_rng(1010, 0);
  auto random = [&](int rows, int cols) { return RowMatrix(gaussian_param(rng, {rows, cols}, 1.0, false).mat()); };

  double single = 0.0;
  for (int i = 0; i < 20; ++i) {
    single = std::max(single, std::abs(retrieval_loss(Tensor::matrix(random(1, bb.config.e)), random(1, bb.config.d), head).item()));
  }
  double perm_diff = 0.0, scale_diff = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 15;
    const RowMatrix h = random(n, bb.config.e), v = random(n, bb.config.d);
    const double base = retrieval_loss(Tensor::matrix(h), v, head).item();
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    RowMatrix hp(n, h.cols()), vp(n, v.cols());
    for (int i = 0; i < n; ++i) hp.row(i) = h.row(perm[static_cast<std::size_t>(i)]), vp.row(i) = v.row(perm[static_cast<std::size_t>(i)]);
    perm_diff = std::max(perm_diff, std::abs(retrieval_loss(Tensor::matrix(hp), vp, head).item() - base));
    const double s = std::exp(std::uniform_real_distribution<double>(-5, 5)(rng));
    scale_diff = std::max(scale_diff, std::abs(retrieval_loss(Tensor::matrix(RowMatrix(h * s)), RowMatrix(v * s), head).item() - base));
  }
  report("A10", single == 0.0 && perm_diff <= 1e-10 && scale_diff <= 1e-9,
         "N=1 loss max " + fmt("%.1e", single) + " (= 0); permutation max diff " + fmt("%.1e", perm_diff) +
             " (<= 1e-10); positive scaling max diff " + fmt("%.1e", scale_diff) + " (<= 1e-9)");
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_out";
  fs::create_directories(out);
  const auto t0 = Clock::now();
  try {
    check_gradient_suite();
    const MainRun run = train_main_run(out);
    check_forcing(run);
    check_decider();
    check_mapper_ablation(out);
    check_r_sweep(out);
    check_determinism(out);
    check_info_nce();
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 2;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed") << " in "
            << fmt("%.0f", seconds_since(t0)) << " s; artifacts in " << out.string() << std::endl;
  return failures == 0 ? 0 : 1;
}

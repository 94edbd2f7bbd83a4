// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/dataset.hpp"
#include "gill/decider.hpp"
#include "gill/evalkit.hpp"
#include "gill/inference.hpp"
#include "gill/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace gill;

namespace {

struct Common {
  bool overwrite = false;
  std::optional<std::uint64_t> seed;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw std::runtime_error("missing file " + path.string());
}

/// Creates `dir`, refusing to touch a non-empty directory unless --overwrite is given (then it is cleared).
void prepare_out(const fs::path& dir, const Common& common) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!common.overwrite) throw std::runtime_error(dir.string() + " is not empty; pass --overwrite to replace it");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void apply_seed(RunConfig& cfg, const Common& common) {
  if (!common.seed) return;
  cfg.backbone.seed = *common.seed;
  cfg.adapter.seed = *common.seed;
  cfg.train.seed = *common.seed;
}

/// "<kind>-<first 12 hex of the config digest>".
std::string run_id_for(const std::string& kind, const json& config) {
  return kind + "-" + config_digest(config).substr(0, 12);
}

void print_metrics(const EvalReport& rep) {
  std::cout << rep.run_id << '\n';
  for (const auto& [name, value] : rep.metrics) std::cout << "  " << name << " = " << format_sig6(value) << '\n';
}

// ---------------------------------------------------------------------------
// gen-data

int run_gen_data(const fs::path& spec_path, const fs::path& out, const Common& common) {
  require_file(spec_path);
  ShapeworldSpec spec = read_json_file(spec_path).get<ShapeworldSpec>();
  if (common.seed) spec.seed = *common.seed;
  const ShapeworldData data = synthesize_shapeworld(spec);
  prepare_out(out, common);
  write_shapeworld(out, spec, data);
  std::cout << "wrote " << data.train.size() << " train, " << data.heldout.size() << " held-out, "
            << data.candidates.size() << " candidates to " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train

int run_train(const fs::path& config_path, const fs::path& data, const fs::path& out, const std::string& resume,
              const Common& common) {
  require_file(config_path);
  require_file(data / "train.jsonl");
  RunConfig cfg = read_json_file(config_path).get<RunConfig>();
  apply_seed(cfg, common);
  cfg.train.validate();

  const FrozenBackbones backbones = build_frozen(cfg.backbone);
  const auto pool = load_examples(data / "train.jsonl", backbones.vocab, cfg.backbone);
  if (pool.empty()) throw std::runtime_error("no training examples in " + (data / "train.jsonl").string());
  std::vector<std::vector<int>> captions;
  for (const auto& ex : pool) captions.push_back(ex.caption);
  const TargetCache targets = precompute_targets(backbones, captions);

  TrainState state = TrainState::fresh(cfg, pool.size());
  if (!resume.empty()) {
    require_file(resume);
    state = load_checkpoint(resume);
    state.config.train.steps = cfg.train.steps;
    if (json(state.config.backbone) != json(cfg.backbone) || json(state.config.adapter) != json(cfg.adapter)) {
      throw std::runtime_error("resume: checkpoint backbone/adapter config differs from " + config_path.string());
    }
  }

  prepare_out(out, common);
  write_json_file(out / "config.json", json(state.config));
  std::ofstream log(out / "losses.csv", std::ios::trunc);
  log << "step,l_c,l_p,l_g,l_r,total\n";
  const std::string checksum_before = backbones.checksum();
  while (state.step < cfg.train.steps) {
    const LossBreakdown b = train_one(backbones, state, pool, &targets);
    log << state.step << ',' << format_sig6(b.l_c) << ',' << format_sig6(b.l_p) << ',' << format_sig6(b.l_g) << ','
        << format_sig6(b.l_r) << ',' << format_sig6(b.total) << '\n';
    if (state.step % 100 == 0 || state.step == cfg.train.steps) {
      std::cout << "step " << state.step << "  l_c " << format_sig6(b.l_c) << "  l_p " << format_sig6(b.l_p)
                << "  l_g " << format_sig6(b.l_g) << "  l_r " << format_sig6(b.l_r) << std::endl;
    }
    if (cfg.train.checkpoint_interval > 0 && state.step % cfg.train.checkpoint_interval == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%06lld.gill", static_cast<long long>(state.step));
      save_checkpoint(out / name, state);
    }
  }
  if (backbones.checksum() != checksum_before) throw std::logic_error("frozen parameters changed during training");
  save_checkpoint(out / "checkpoint.gill", state);
  std::cout << "saved " << (out / "checkpoint.gill").string() << " at step " << state.step << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// eval

int run_eval(const std::string& kind, const fs::path& ckpt, const fs::path& data, const fs::path& out, int seeds,
             const std::string& axis, std::optional<int> steps, const Common& common) {
  require_file(ckpt);
  RunConfig cfg;
  const AdapterSet adapters = load_adapters(ckpt, &cfg);
  const FrozenBackbones backbones = build_frozen(cfg.backbone);
  const EvalCorpus corpus = EvalCorpus::load(data, backbones.vocab, cfg.backbone);
  prepare_out(out, common);

  if (kind == "retrieval") {
    const json config = {{"kind", kind}, {"run", json(cfg)}};
    const EvalReport rep = evaluate_retrieval(backbones, adapters, corpus, run_id_for(kind, config), config);
    rep.write(out);
    print_metrics(rep);
  } else if (kind == "generation") {
    const json config = {{"kind", kind}, {"run", json(cfg)}};
    const EvalReport rep = evaluate_generation(backbones, adapters, corpus, run_id_for(kind, config), config);
    rep.write(out);
    print_metrics(rep);
  } else {
    if (steps) cfg.train.steps = *steps;
    if (common.seed) cfg.adapter.seed = cfg.train.seed = *common.seed;
    const AblationAxis ax = parse_ablation_axis(axis);
    const json config = {{"kind", kind}, {"axis", axis}, {"seeds", seeds}, {"run", json(cfg)}};
    const std::string id = run_id_for("ablation", config);
    const AblationResult result = run_ablation(ax, cfg, corpus, id, seeds);
    result.write(out, id);
    std::cout << result.csv();
  }
  return 0;
}

// ---------------------------------------------------------------------------
// infer

json slot_json(const ImageSlot& slot, const std::string& raster_path) {
  json j = {{"image", raster_path}};
  switch (slot.source) {
    case ImageSource::Input: j["source"] = "input"; break;
    case ImageSource::Retrieved:
      j["source"] = "retrieved";
      j["retrieved_id"] = slot.retrieved_id;
      j["score"] = slot.score;
      break;
    case ImageSource::Generated:
      j["source"] = "generated";
      j["max_cosine"] = slot.score;
      break;
  }
  return j;
}

MultimodalSequence parse_prompt(const json& segments, const fs::path& root, const Vocabulary& vocab) {
  if (!segments.is_array()) throw std::runtime_error("prompt must be a JSON array of segments");
  MultimodalSequence seq;
  for (const auto& seg : segments) {
    if (seg.contains("text") && !seg.contains("image")) {
      seq.append_text(vocab.encode_strict(seg.at("text").get<std::string>()));
    } else if (seg.contains("image") && !seg.contains("text")) {
      ImageSlot slot;
      slot.raster = read_raster(root / seg.at("image").get<std::string>());
      seq.append_image(std::move(slot));
    } else {
      throw std::runtime_error("segment must hold exactly one of \"text\" or \"image\"");
    }
  }
  return seq;
}

int run_infer(const fs::path& ckpt, const fs::path& prompt_path, const fs::path& candidates_dir, const fs::path& out,
              const DecodeConfig& decode, const std::string& decider_path, double threshold, const Common& common) {
  require_file(ckpt);
  require_file(prompt_path);
  RunConfig cfg;
  const AdapterSet adapters = load_adapters(ckpt, &cfg);
  const FrozenBackbones backbones = build_frozen(cfg.backbone);

  CandidateSet candidates;
  if (!candidates_dir.empty()) {
    require_file(candidates_dir / "candidates.jsonl");
    candidates = build_candidates(backbones, adapters.retrieval,
                                  load_examples(candidates_dir / "candidates.jsonl", backbones.vocab, cfg.backbone));
  }
  DecisionFn decide = threshold_decision(threshold);
  if (!decider_path.empty()) {
    require_file(decider_path);
    decide = read_json_file(decider_path).get<LinearDecider>().as_decision();
  }

  std::vector<MultimodalSequence> prompts;
  {
    std::ifstream in(prompt_path);
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        prompts.push_back(parse_prompt(json::parse(line), prompt_path.parent_path(), backbones.vocab));
      } catch (const std::exception& e) {
        throw std::runtime_error(prompt_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  prepare_out(out, common);
  fs::create_directories(out / "images");
  std::ofstream results(out / "outputs.jsonl", std::ios::trunc);
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    DecodeConfig dc = decode;
    dc.seed = decode.seed + p;
    const DecodeResult res = generate_sequence(prompts[p], dc, adapters, backbones, &candidates, decide);
    json segs = json::array();
    std::size_t image_no = 0;
    for (const auto& seg : res.sequence.segments()) {
      if (const auto* text = std::get_if<TextSpan>(&seg)) {
        segs.push_back({{"text", backbones.vocab.decode(text->tokens)}});
      } else {
        const auto& slot = std::get<ImageSlot>(seg);
        char name[64];
        std::snprintf(name, sizeof name, "images/p%04zu_i%02zu.raw", p, image_no++);
        write_raster(out / name, slot.raster);
        segs.push_back(slot_json(slot, name));
      }
    }
    results << json{{"prompt", p}, {"segments", segs}, {"emitted", res.emitted}}.dump() << '\n';
    std::cout << "prompt " << p << ": " << segs.dump() << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// decide

struct DecisionData {
  std::vector<Eigen::VectorXd> features;
  std::vector<double> max_cosines;
  std::vector<Verdict> labels;
  std::vector<std::string> prompts;
};

DecisionData load_decision_data(const fs::path& jsonl, const FrozenBackbones& backbones, const AdapterSet& adapters,
                                const fs::path& candidates_dir) {
  const auto records = read_decision_records(jsonl);
  if (records.empty()) throw std::runtime_error("no decision records in " + jsonl.string());
  const fs::path cand_file = candidates_dir / "candidates.jsonl";
  std::optional<CandidateSet> candidates;
  DecisionData d;
  const int width = backbones.config.r * backbones.config.e + 1;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    Eigen::VectorXd f;
    if (rec.features_path) {
      const auto values = read_json_file(jsonl.parent_path() / *rec.features_path).get<std::vector<double>>();
      f = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
      if (f.size() != width) {
        throw std::runtime_error(jsonl.string() + ":" + std::to_string(i + 1) + ": feature width " +
                                 std::to_string(f.size()) + ", expected " + std::to_string(width));
      }
    } else {
      if (!candidates) {
        require_file(cand_file);
        candidates = build_candidates(backbones, adapters.retrieval,
                                      load_examples(cand_file, backbones.vocab, backbones.config));
      }
      const RowMatrix hidden = caption_img_hidden(backbones, adapters, backbones.vocab.encode_strict(rec.prompt));
      f = build_features(hidden, *candidates, adapters.retrieval);
    }
    d.max_cosines.push_back(f[f.size() - 1]);
    d.features.push_back(std::move(f));
    d.labels.push_back(rec.label);
    d.prompts.push_back(rec.prompt);
  }
  return d;
}

int run_decide(const std::string& mode, const fs::path& data, const fs::path& ckpt, const fs::path& out,
               const std::string& candidates_dir, const std::string& decider_path, const DeciderTrainOptions& opts,
               double sweep_step, const Common& common) {
  require_file(data);
  require_file(ckpt);
  RunConfig cfg;
  const AdapterSet adapters = load_adapters(ckpt, &cfg);
  const FrozenBackbones backbones = build_frozen(cfg.backbone);
  const fs::path cand_dir = candidates_dir.empty() ? data.parent_path() : fs::path(candidates_dir);
  const DecisionData d = load_decision_data(data, backbones, adapters, cand_dir);
  const std::uint64_t seed = common.seed.value_or(cfg.train.seed);

  LinearDecider decider;
  std::vector<double> trace;
  if (mode == "train") {
    decider = train_decider(d.features, d.labels, opts, &trace);
  } else {
    if (decider_path.empty()) throw std::runtime_error("decide eval needs --decider <file>");
    require_file(decider_path);
    decider = read_json_file(decider_path).get<LinearDecider>();
  }
  prepare_out(out, common);

  const json config = {{"kind", "decide-" + mode}, {"run", json(cfg)}, {"seed", seed}, {"data", data.filename().string()}};
  EvalReport rep{run_id_for("decide-" + mode, config), config_digest(config), {}, {}, {}};
  std::vector<Verdict> preds;
  for (std::size_t i = 0; i < d.features.size(); ++i) {
    preds.push_back(decider.predict(d.features[i]));
    rep.records.push_back({{"prompt", d.prompts[i]},
                           {"label", verdict_label(d.labels[i])},
                           {"prediction", verdict_label(preds.back())},
                           {"probability", decider.probability(d.features[i])},
                           {"max_cosine", d.max_cosines[i]}});
  }
  const SweepResult sweep = sweep_threshold(d.max_cosines, d.labels, sweep_step);
  rep.set_metric("linear_macro_f1", macro_f1(preds, d.labels));
  rep.set_metric("linear_accuracy", accuracy(preds, d.labels));
  rep.set_metric("heuristic_best_f1", sweep.best_f1);
  rep.set_metric("heuristic_best_threshold", sweep.best_threshold);
  rep.set_metric("heuristic_min_f1", sweep.min_f1);
  rep.set_metric("heuristic_max_f1", sweep.max_f1);
  rep.set_metric("always_generate_macro_f1", macro_f1(always(Verdict::Generate, d.labels.size()), d.labels));
  rep.set_metric("always_retrieve_macro_f1", macro_f1(always(Verdict::Retrieve, d.labels.size()), d.labels));
  rep.set_metric("random_prior_macro_f1", macro_f1(random_prior_baseline(d.labels, seed), d.labels));
  rep.write(out);

  std::string grid = "threshold,macro_f1\n";
  for (const auto& [t, f1] : sweep.grid) grid += format_sig6(t) + "," + format_sig6(f1) + "\n";
  std::ofstream(out / (rep.run_id + "_sweep.csv"), std::ios::binary) << grid;
  if (mode == "train") {
    write_json_file(out / "decider.json", json(decider));
    std::string loss = "epoch,loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) loss += std::to_string(i) + "," + format_sig6(trace[i]) + "\n";
    std::ofstream(out / (rep.run_id + "_loss.csv"), std::ios::binary) << loss;
  }
  print_metrics(rep);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frozen-LM multimodal adapters at desk scale: data synthesis, training, evaluation, inference"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_flag("--overwrite", common.overwrite, "Replace a non-empty output directory");
  app.add_option("--seed", common.seed, "Seed for every random stream of this invocation");

  std::string spec_path, config_path, data, out, ckpt, prompt, candidates, resume, decider_path;
  int seeds = 1;
  std::string axis = "mapper";
  std::optional<int> steps;

  auto* gen = app.add_subcommand("gen-data", "Synthesize a shapeworld dataset");
  gen->add_option("--spec", spec_path, "Shapeworld spec (JSON)")->required();
  gen->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train the adapters");
  train->add_option("--config", config_path, "Run config (JSON)")->required();
  train->add_option("--data", data, "Dataset directory holding train.jsonl")->required();
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--resume", resume, "Continue from this checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_kind;
  eval->add_option("kind", eval_kind, "retrieval | generation | ablation")
      ->required()
      ->check(CLI::IsMember({"retrieval", "generation", "ablation"}));
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--out", out, "Output directory")->required();
  eval->add_option("--seeds", seeds, "Seeds per ablation setting")->check(CLI::PositiveNumber);
  eval->add_option("--axis", axis, "Ablation axis: mapper | r")->check(CLI::IsMember({"mapper", "r"}));
  eval->add_option("--steps", steps, "Training steps per ablation setting")->check(CLI::NonNegativeNumber);

  auto* infer = app.add_subcommand("infer", "Decode interleaved prompts");
  DecodeConfig decode;
  std::string mode = "greedy";
  double threshold = 0.5;
  infer->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  infer->add_option("--prompt", prompt, "Prompt JSONL, one segment array per line")->required();
  infer->add_option("--candidates", candidates, "Directory holding candidates.jsonl")->required();
  infer->add_option("--out", out, "Output directory")->required();
  infer->add_option("--mode", mode, "greedy | sample")->check(CLI::IsMember({"greedy", "sample"}));
  infer->add_option("--temperature", decode.temperature, "Sampling temperature");
  infer->add_option("--max-new-tokens", decode.max_new_tokens, "Token budget per prompt");
  infer->add_option("--decider", decider_path, "Trained decider (JSON); default is the cosine threshold");
  infer->add_option("--threshold", threshold, "Cosine threshold when no decider is given");

  auto* decide = app.add_subcommand("decide", "Train or evaluate the retrieve-vs-generate decider");
  std::string decide_mode;
  DeciderTrainOptions dopts;
  double sweep_step = 0.01;
  decide->add_option("mode", decide_mode, "train | eval")->required()->check(CLI::IsMember({"train", "eval"}));
  decide->add_option("--data", data, "Decision JSONL")->required();
  decide->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  decide->add_option("--out", out, "Output directory")->required();
  decide->add_option("--candidates", candidates, "Directory holding candidates.jsonl (default: next to --data)");
  decide->add_option("--decider", decider_path, "Decider to evaluate (JSON)");
  decide->add_option("--epochs", dopts.epochs, "Gradient-descent epochs")->check(CLI::NonNegativeNumber);
  decide->add_option("--lr", dopts.lr, "Gradient-descent step size")->check(CLI::PositiveNumber);
  decide->add_option("--sweep-step", sweep_step, "Heuristic threshold grid step")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return run_gen_data(spec_path, out, common);
    if (*train) return run_train(config_path, data, out, resume, common);
    if (*eval) return run_eval(eval_kind, ckpt, data, out, seeds, axis, steps, common);
    if (*infer) {
      decode.mode = mode == "sample" ? DecodeMode::Sample : DecodeMode::Greedy;
      decode.seed = common.seed.value_or(0);
      return run_infer(ckpt, prompt, candidates, out, decode, decider_path, threshold, common);
    }
    if (*decide) return run_decide(decide_mode, data, ckpt, out, candidates, decider_path, dopts, sweep_step, common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

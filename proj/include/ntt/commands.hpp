#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ntt/checkpoint.hpp"
#include "ntt/config.hpp"
#include "ntt/evaluation.hpp"
#include "ntt/taskgen.hpp"

namespace ntt {

/// Bad invocation (exit code 2), as opposed to a runtime failure (exit code 1).
struct UsageError : Error {
  using Error::Error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// ---------------------------------------------------------------------------
// Task metadata: what is needed besides the JSONL rows to realize captions.

struct TaskInfo {
  Vocabulary vocab;
  std::size_t categories = 0;
  std::size_t subcats_per_category = 0;
  CategoryBank bank;  // names only

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["categories"] = categories;
    j["subcats_per_category"] = subcats_per_category;
    j["vocab"] = vocab.words();
    return j;
  }

  static TaskInfo from_json(const nlohmann::json& j) {
    TaskInfo t;
    t.categories = j.at("categories").get<std::size_t>();
    t.subcats_per_category = j.at("subcats_per_category").get<std::size_t>();
    t.vocab = Vocabulary(j.at("vocab").get<std::vector<std::string>>());
    t.bank = CategoryBank::names(t.categories, t.subcats_per_category);
    return t;
  }
};

inline std::string meta_path(const std::string& data_path) { return data_path + ".meta.json"; }

/// Reads the sidecar written by `gen`; without one, infers sizes from the rows
/// and assumes the default grammar vocabulary.
inline TaskInfo load_task_info(const std::string& data_path, const Dataset& ds) {
  std::ifstream in(meta_path(data_path));
  if (in) {
    try {
      return TaskInfo::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw Error("dataset metadata '" + meta_path(data_path) + "': " + e.what());
    }
  }
  int max_cat = -1, max_sub = -1;
  for (const auto& ex : ds.examples) {
    for (const auto& l : ex.regions.labels) {
      max_cat = std::max(max_cat, l.category);
      max_sub = std::max(max_sub, l.subcat);
    }
  }
  if (max_cat < 0) throw Error("dataset: no labelled regions to infer categories from");
  TaskInfo t;
  t.categories = static_cast<std::size_t>(max_cat) + 1;
  const std::size_t subcats = static_cast<std::size_t>(max_sub) + 1;
  t.subcats_per_category = (subcats + t.categories - 1) / t.categories;
  t.vocab = Grammar().vocabulary();
  t.bank = CategoryBank::names(t.categories, t.subcats_per_category);
  return t;
}

inline Dataset load_dataset(const std::string& path) {
  if (path.empty()) throw UsageError("no dataset given (--data)");
  if (!std::filesystem::exists(path)) throw UsageError("dataset '" + path + "' not found");
  return load_jsonl(path);
}

inline Split parse_split_arg(const std::string& s) {
  try {
    return parse_split(s);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

inline std::vector<const Example*> split_or_all(const Dataset& ds, Split s) {
  auto chosen = ds.select(s);
  return chosen.empty() ? ds.all() : chosen;
}

inline nlohmann::ordered_json token_to_json(const Token& t, const RegionSet& regions, const TaskInfo& info) {
  nlohmann::ordered_json j;
  if (t.is_text()) {
    j["t"] = "text";
    j["id"] = t.id;
    j["word"] = info.vocab.word(t.id);
  } else {
    j["t"] = "slot";
    j["region"] = t.region;
    j["subcat"] = t.subcat;
    j["plural"] = t.plural;
    j["word"] = caption_words({t}, regions, info.vocab, info.bank, false).front();
  }
  return j;
}

template <typename J>
J metrics_to_json(const EvalMetrics& m) {
  J j;
  j["bleu1"] = m.bleu1;
  j["bleu4"] = m.bleu4;
  j["slot_precision"] = m.slot_precision;
  j["slot_recall"] = m.slot_recall;
  j["sentinel_accuracy"] = m.sentinel_accuracy;
  return j;
}

/// Model config sized for a dataset.
inline ModelConfig sized_model(const RunConfig& cfg, const Dataset& ds, const TaskInfo& info) {
  ModelConfig mc = cfg.model;
  mc.vocab = info.vocab.size();
  mc.subcats = info.categories * info.subcats_per_category;
  std::size_t max_regions = 1;
  for (const auto& ex : ds.examples) {
    max_regions = std::max(max_regions, ex.regions.count());
    if (ex.regions.V.cols() != mc.dims.d_v || ex.regions.Vbar.cols() != mc.dims.d_c) {
      mc.dims.d_v = ex.regions.V.cols();
      mc.dims.d_c = ex.regions.Vbar.cols();
    }
  }
  mc.dims.max_regions = std::max(mc.dims.max_regions, max_regions);
  return mc;
}

// ---------------------------------------------------------------------------
// gen

inline void cmd_gen(const RunConfig& cfg, const std::string& out_path, std::ostream& log) {
  if (out_path.empty()) throw UsageError("gen: --out is required");
  TaskConfig tc = cfg.task;
  tc.d_v = cfg.model.dims.d_v;
  tc.d_c = cfg.model.dims.d_c;
  GeneratedTask task = generate(cfg.train.seed, tc);
  save_jsonl(out_path, task.dataset);
  TaskInfo info;
  info.vocab = task.vocab;
  info.categories = tc.categories;
  info.subcats_per_category = tc.subcats_per_category;
  nlohmann::ordered_json meta = info.to_json();
  meta["seed"] = cfg.train.seed;
  meta["examples"] = tc.n_examples;
  std::ofstream m(meta_path(out_path));
  if (!m) throw Error("cannot write '" + meta_path(out_path) + "'");
  m << meta.dump(2) << '\n';
  log << "wrote " << task.dataset.examples.size() << " examples to " << out_path << '\n';
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
  std::vector<EpochRecord> log;
  nlohmann::ordered_json metrics;
};

inline nlohmann::ordered_json epoch_to_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["loss"] = r.mean_loss;
  j["accuracy"] = r.accuracy;
  j["sentinel_accuracy"] = r.sentinel_accuracy;
  j["clamped"] = r.clamped;
  return j;
}

/// Trains on the train split and evaluates on `eval_split` each epoch.
/// Writes model.ckpt, train_log.jsonl (header line, then one line per
/// epoch) and metrics.json into out_dir.
inline TrainOutcome cmd_train(const RunConfig& cfg, const std::string& out_dir, Split eval_split, std::ostream& log) {
  if (out_dir.empty()) throw UsageError("train: --out is required");
  const Dataset ds = load_dataset(cfg.data);
  const TaskInfo info = load_task_info(cfg.data, ds);
  const ModelConfig mc = sized_model(cfg, ds, info);
  std::filesystem::create_directories(out_dir);

  CaptionModel model(mc, cfg.train.seed);
  Trainer trainer(model, cfg.train);
  const auto train_set = ds.select(Split::Train);
  if (train_set.empty()) throw Error("train: dataset has no train split");
  const auto eval_set = split_or_all(ds, eval_split);

  const std::string ckpt_path = (std::filesystem::path(out_dir) / "model.ckpt").string();
  std::ofstream train_log((std::filesystem::path(out_dir) / "train_log.jsonl").string());
  if (!train_log) throw Error("cannot write train log in '" + out_dir + "'");
  nlohmann::ordered_json header;
  header["type"] = "header";
  header["model"] = model_config_to_json(mc);
  header["train"] = train_config_to_json(cfg.train);
  header["train_examples"] = train_set.size();
  header["eval_split"] = split_name(eval_split);
  header["eval_examples"] = eval_set.size();
  header["param_count"] = model.params().total_elements();
  train_log << header.dump() << '\n';

  TrainOutcome outcome;
  outcome.log = train(trainer, train_set, eval_set, [&](const EpochRecord& r) {
    nlohmann::ordered_json row{{"type", "epoch"}};
    row.update(epoch_to_json(r));
    train_log << row.dump() << '\n';
    train_log.flush();
    log << "epoch " << r.epoch << "  lr " << r.lr << "  loss " << r.mean_loss << "  acc " << r.accuracy << '\n';
    if (cfg.train.checkpoint_every > 0 && (r.epoch + 1) % cfg.train.checkpoint_every == 0) {
      save_checkpoint(ckpt_path, make_checkpoint(model, &trainer, info.to_json()));
    }
  });
  save_checkpoint(ckpt_path, make_checkpoint(model, &trainer, info.to_json()));

  nlohmann::ordered_json& m = outcome.metrics;
  m["model"] = model_kind_name(mc.kind);
  m["epochs_run"] = outcome.log.size();
  m["param_count"] = model.params().total_elements();
  if (outcome.log.empty()) {
    m["final"] = nullptr;
  } else {
    m["final"] = epoch_to_json(outcome.log.back());
  }
  std::ofstream mf((std::filesystem::path(out_dir) / "metrics.json").string());
  if (!mf) throw Error("cannot write metrics in '" + out_dir + "'");
  mf << m.dump(2) << '\n';
  return outcome;
}

// ---------------------------------------------------------------------------
// eval / generate / trace

struct LoadedModel {
  Checkpoint ck;
  std::unique_ptr<CaptionModel> model;
  TaskInfo info;
};

inline LoadedModel load_model(const std::string& ckpt_path) {
  if (ckpt_path.empty()) throw UsageError("no checkpoint given (--ckpt)");
  if (!std::filesystem::exists(ckpt_path)) throw UsageError("checkpoint '" + ckpt_path + "' not found");
  LoadedModel lm;
  lm.ck = load_checkpoint(ckpt_path);
  lm.model = model_from_checkpoint(lm.ck);
  try {
    lm.info = TaskInfo::from_json(lm.ck.extra);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: task metadata missing or malformed: ") + e.what());
  }
  return lm;
}

inline nlohmann::ordered_json cmd_eval(const std::string& ckpt, const std::string& data, std::size_t beam,
                                       Split split) {
  if (beam < 1) throw UsageError("eval: --beam must be at least 1");
  LoadedModel lm = load_model(ckpt);
  const Dataset ds = load_dataset(data);
  const auto examples = split_or_all(ds, split);
  const EvalMetrics m = evaluate(*lm.model, examples, lm.info.vocab, lm.info.bank, beam);
  nlohmann::ordered_json j;
  j["model"] = model_kind_name(lm.model->kind());
  j["split"] = split_name(split);
  j["examples"] = m.examples;
  j["beam"] = beam;
  j.update(metrics_to_json<nlohmann::ordered_json>(m));
  return j;
}

/// One caption per line; grounded words in brackets.
inline std::vector<std::string> cmd_generate(const std::string& ckpt, const std::string& data, std::size_t n,
                                             std::size_t beam, Split split) {
  if (beam < 1) throw UsageError("generate: --beam must be at least 1");
  LoadedModel lm = load_model(ckpt);
  const Dataset ds = load_dataset(data);
  const auto examples = split_or_all(ds, split);
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < std::min(n, examples.size()); ++i) {
    const auto tokens = beam_decode(*lm.model, examples[i]->regions, beam, lm.model->config().dims.max_len).best.tokens;
    lines.push_back(join_words(caption_words(tokens, examples[i]->regions, lm.info.vocab, lm.info.bank, true)));
  }
  return lines;
}

inline nlohmann::ordered_json values_json(const Var& v) {
  if (!v.valid()) return nullptr;
  return v.value().values();
}

/// Greedy rollout on one example with per-step internals.
inline nlohmann::ordered_json trace_example(const CaptionModel& model, const Example& ex, const TaskInfo& info) {
  Tape tape;
  EncodedRegions enc = model.encode(tape, ex.regions);
  DecoderState state = model.initial_state(tape);
  Token prev = Token::text(Vocabulary::kBos);
  std::vector<Token> caption{prev};
  nlohmann::ordered_json steps = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < model.config().dims.max_len; ++t) {
    StepOutput out = model.step(tape, enc, state, prev, false, nullptr);
    HeadOutputs h = model.heads(enc, out);
    const WordDistribution dist = model.distribution(enc, out, h);
    const ScoredToken chosen = argmax_token(dist);
    nlohmann::ordered_json s;
    s["t"] = t;
    s["input"] = token_to_json(prev, ex.regions, info);
    s["chosen"] = token_to_json(chosen.token, ex.regions, info);
    s["chosen_prob"] = chosen.prob;
    s["p_sentinel"] = dist.p_sentinel;
    s["g1"] = values_json(out.g1);
    s["g2"] = values_json(out.g2);
    s["g3"] = values_json(out.g3);
    nlohmann::ordered_json alpha;
    alpha["v_l"] = values_json(out.att_v_l.alpha);
    alpha["vbar_l"] = values_json(out.att_vbar_l.alpha);
    alpha["v_r"] = values_json(out.att_v_r.alpha);
    alpha["vbar_r"] = values_json(out.att_vbar_r.alpha);
    s["alpha"] = alpha;
    s["p_regions"] = values_json(h.p_r);
    steps.push_back(s);
    caption.push_back(chosen.token);
    state = out.state;
    prev = chosen.token;
    if (is_eos(chosen.token)) break;
  }
  nlohmann::ordered_json j;
  j["model"] = model_kind_name(model.kind());
  j["caption"] = join_words(caption_words(caption, ex.regions, info.vocab, info.bank, true));
  j["steps"] = steps;
  return j;
}

inline nlohmann::ordered_json cmd_trace(const std::string& ckpt, const std::string& data, std::size_t index) {
  LoadedModel lm = load_model(ckpt);
  const Dataset ds = load_dataset(data);
  if (index >= ds.examples.size()) {
    throw UsageError("trace: example index " + std::to_string(index) + " out of range (dataset has " +
                     std::to_string(ds.examples.size()) + ")");
  }
  nlohmann::ordered_json j;
  j["example_index"] = index;
  j.update(trace_example(*lm.model, ds.examples[index], lm.info));
  return j;
}

// ---------------------------------------------------------------------------
// compare

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Mean and sample standard deviation (0 for fewer than two values).
inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return r;
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return r;
}

inline const std::vector<std::string>& compare_metric_names() {
  static const std::vector<std::string> names{"bleu1", "bleu4", "slot_precision", "slot_recall", "sentinel_accuracy"};
  return names;
}

/// Trains and evaluates both decoders for `seeds` consecutive seeds starting
/// at cfg.train.seed, on the test split (val, then everything, as fallbacks).
inline nlohmann::ordered_json cmd_compare(const RunConfig& cfg, std::ostream& log) {
  if (cfg.seeds < 1) throw UsageError("compare: --seeds must be at least 1");
  if (cfg.beam < 1) throw UsageError("compare: --beam must be at least 1");
  const Dataset ds = load_dataset(cfg.data);
  const TaskInfo info = load_task_info(cfg.data, ds);
  const auto train_set = ds.select(Split::Train);
  if (train_set.empty()) throw Error("compare: dataset has no train split");
  Split eval_split = Split::Test;
  if (ds.select(Split::Test).empty()) eval_split = ds.select(Split::Val).empty() ? Split::Train : Split::Val;
  const auto eval_set = ds.select(eval_split);

  nlohmann::ordered_json j;
  j["examples"] = ds.examples.size();
  j["eval_split"] = split_name(eval_split);
  j["eval_examples"] = eval_set.size();
  j["beam"] = cfg.beam;
  j["epochs"] = cfg.train.epochs;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < cfg.seeds; ++i) seeds.push_back(cfg.train.seed + i);
  j["seeds"] = seeds;

  std::map<ModelKind, std::size_t> counts;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (ModelKind kind : {ModelKind::Ntt, ModelKind::Baseline}) {
    RunConfig rc = cfg;
    rc.model.kind = kind;
    const ModelConfig mc = sized_model(rc, ds, info);
    std::map<std::string, std::vector<double>> values;
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (std::uint64_t seed : seeds) {
      CaptionModel model(mc, seed);
      counts[kind] = model.params().total_elements();
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      Trainer trainer(model, tc);
      train(trainer, train_set, {});
      const EvalMetrics m = evaluate(model, eval_set, info.vocab, info.bank, cfg.beam);
      auto mj = metrics_to_json<nlohmann::ordered_json>(m);
      for (const auto& name : compare_metric_names()) values[name].push_back(mj[name].get<double>());
      nlohmann::ordered_json run{{"seed", seed}};
      run.update(mj);
      runs.push_back(run);
      log << model_kind_name(kind) << " seed " << seed << "  bleu4 " << m.bleu4 << '\n';
    }
    nlohmann::ordered_json row;
    row["model"] = model_kind_name(kind);
    row["param_count"] = counts[kind];
    for (const auto& name : compare_metric_names()) {
      const MeanStd ms = mean_std(values[name]);
      row[name] = {{"mean", ms.mean}, {"std", ms.std}};
    }
    row["runs"] = runs;
    rows.push_back(row);
  }
  const double overhead = static_cast<double>(counts[ModelKind::Ntt]) / static_cast<double>(counts[ModelKind::Baseline]) - 1.0;
  rows[0]["param_overhead"] = overhead;
  rows[1]["param_overhead"] = 0.0;
  j["param_overhead"] = overhead;
  j["rows"] = rows;
  return j;
}

/// Fixed-width text rendering of a compare result.
inline std::string format_compare_table(const nlohmann::ordered_json& result) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4);
  s << std::left << std::setw(10) << "model";
  for (const auto& name : compare_metric_names()) s << std::setw(22) << name;
  s << std::setw(12) << "params" << "overhead\n";
  for (const auto& row : result.at("rows")) {
    s << std::setw(10) << row.at("model").get<std::string>();
    for (const auto& name : compare_metric_names()) {
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(4) << row.at(name).at("mean").get<double>() << " +- "
           << row.at(name).at("std").get<double>();
      s << std::setw(22) << cell.str();
    }
    std::ostringstream pct;
    pct << std::fixed << std::setprecision(1) << 100.0 * row.at("param_overhead").get<double>() << "%";
    s << std::setw(12) << row.at("param_count").get<std::size_t>() << pct.str() << '\n';
  }
  return s.str();
}

}  // namespace ntt

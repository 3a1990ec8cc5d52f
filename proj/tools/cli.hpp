// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stan/analysis.hpp"
#include "stan/checkpoint.hpp"
#include "stan/config.hpp"
#include "stan/corpus.hpp"
#include "stan/roster.hpp"
#include "stan/train.hpp"

namespace stan::cli {

enum ExitCode : int {
  ok = 0,
  usage = 2,
  config_error = 3,
  format_error = 4,
  feasibility_error = 5,
  numeric_error = 6,
  dimension_error = 7,
  graft_error = 8,
  input_error = 9,
  internal_error = 10,
};

inline int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return config_error;
    case ErrorKind::format: return format_error;
    case ErrorKind::feasibility: return feasibility_error;
    case ErrorKind::numeric: return numeric_error;
    case ErrorKind::dimension: return dimension_error;
    case ErrorKind::graft: return graft_error;
    case ErrorKind::input:
    case ErrorKind::empty_sequence: return input_error;
  }
  return internal_error;
}

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

inline ResolvedConfig resolve(const CommonArgs& a, std::vector<std::string> extra = {}) {
  std::vector<std::string> all = a.overrides;
  if (a.seed) all.push_back("seed=" + std::to_string(*a.seed));
  all.insert(all.end(), extra.begin(), extra.end());
  return load_config(a.config, all);
}

// Snapshot next to a file output, or inside a directory output.
inline void write_snapshot(const fs::path& out, const ResolvedConfig& rc, bool directory) {
  const fs::path path = directory ? out / "config.resolved.json" : fs::path(out.string() + ".config.json");
  write_text_atomic(path, rc.tree.dump(2) + "\n");
}

inline Corpus corpus_for(const std::string& data_dir, const ExperimentConfig& cfg) {
  return data_dir.empty() ? generate_corpus(cfg.corpus) : load_corpus(data_dir);
}

inline EvalCondition condition_for(const ExperimentConfig& cfg, const std::string& condition,
                                   std::optional<double> sigma_max) {
  EvalCondition c;
  c.kind = condition.empty() ? cfg.eval.condition : condition_from_string(condition);
  c.walk = cfg.eval.walk;
  if (sigma_max) {
    require(*sigma_max >= 0.0, ErrorKind::config, "--sigma-max must be >= 0");
    c.walk = *sigma_max > 0.0 ? WalkConfig::with_sigma_max(*sigma_max, c.walk.gamma_shape, c.walk.gamma_scale)
                              : WalkConfig{0.0, c.walk.gamma_shape, c.walk.gamma_scale, 0.0};
  }
  c.profiles = cfg.eval.profiles;
  c.seed = cfg.seed;
  c.copies = cfg.eval.copies;
  return c;
}

inline int cmd_gen_data(const CommonArgs& a, std::ostream& out) {
  require(!a.out.empty(), ErrorKind::config, "gen-data needs --out");
  std::vector<std::string> extra;
  if (a.seed) extra.push_back("corpus.seed=" + std::to_string(*a.seed));
  const auto rc = resolve(a, extra);
  const auto corpus = generate_corpus(rc.config.corpus);
  save_corpus(a.out, corpus);
  write_snapshot(a.out, rc, true);
  out << "wrote " << corpus.train.size() << " train and " << corpus.test.size() << " test samples to " << a.out << "\n";
  return ok;
}

inline int cmd_noise_preview(const CommonArgs& a, const std::string& kind, std::optional<std::size_t> length,
                             std::optional<double> sigma_max, std::ostream& out) {
  std::vector<std::string> extra;
  if (!kind.empty()) extra.push_back("preview.profile.kind=\"" + kind + "\"");
  if (length) extra.push_back("preview.length=" + std::to_string(*length));
  const auto rc = resolve(a, extra);
  const auto& cfg = rc.config;
  NoiseProfileSpec profile = cfg.preview.profile;
  WalkConfig walk = cfg.train.noise.walk;
  if (sigma_max) {
    profile.sigma_max = *sigma_max;
    walk = *sigma_max > 0.0 ? WalkConfig::with_sigma_max(*sigma_max, walk.gamma_shape, walk.gamma_scale)
                            : WalkConfig{0.0, walk.gamma_shape, walk.gamma_scale, 0.0};
  }
  Prng prng = Prng::derive(cfg.seed, {stream::preview});
  const auto schedule = make_schedule(profile, walk, prng, cfg.preview.length);
  std::ostringstream csv;
  write_schedule_csv(csv, schedule);
  if (a.out.empty()) {
    out << csv.str();
  } else {
    write_text_atomic(a.out, csv.str());
    write_snapshot(a.out, rc, false);
  }
  return ok;
}

inline int cmd_train(const CommonArgs& a, const std::string& data, bool quiet, std::ostream& out) {
  require(!a.out.empty(), ErrorKind::config, "train needs --out");
  const auto rc = resolve(a);
  const auto& cfg = rc.config;
  const Corpus corpus = corpus_for(data, cfg);
  Prng init = Prng::derive(cfg.seed, {stream::init});
  auto model = build_model<float>(cfg.model, init);
  std::string log;
  auto result = train(model, corpus.train, cfg.train, [&](const EpochRecord& r) {
    log += r.to_json().dump() + "\n";
    if (!quiet) out << r.to_json().dump() << "\n" << std::flush;
  });
  CheckpointMeta meta;
  meta.config_hash = rc.hash;
  meta.metrics = {{"best_epoch", result.best_epoch},
                  {"best_valid_nll", result.best_valid_nll},
                  {"epochs_run", result.log.size()},
                  {"train_samples", result.train_samples},
                  {"valid_samples", result.valid_samples},
                  {"excluded_infeasible", result.excluded}};
  meta.provenance = {{"source", "train"}, {"seed", cfg.seed}};
  save_checkpoint(a.out, result.model, meta);
  write_text_atomic(fs::path(a.out) / "train_log.jsonl", log);
  write_snapshot(a.out, rc, true);
  if (result.excluded) out << "excluded " << result.excluded << " infeasible samples\n";
  out << "best epoch " << result.best_epoch << " of " << result.log.size() << ", checkpoint in " << a.out << "\n";
  return ok;
}

inline EvalResult run_eval(const CommonArgs& a, const std::string& data, const std::string& checkpoint,
                           const std::string& condition, std::optional<double> sigma_max, bool traces,
                           ResolvedConfig* resolved = nullptr) {
  require(!checkpoint.empty(), ErrorKind::config, "--checkpoint is required");
  const auto rc = resolve(a);
  if (resolved) *resolved = rc;
  const auto ck = load_checkpoint<float>(checkpoint);
  const Corpus corpus = corpus_for(data, rc.config);
  EvalOptions opt;
  opt.batch_size = rc.config.eval.batch_size;
  opt.keep_traces = traces;
  return evaluate(ck.model, corpus.test, condition_for(rc.config, condition, sigma_max), opt);
}

inline int cmd_eval(const CommonArgs& a, const std::string& data, const std::string& checkpoint,
                    const std::string& condition, std::optional<double> sigma_max, std::ostream& out) {
  ResolvedConfig rc;
  const auto r = run_eval(a, data, checkpoint, condition, sigma_max, false, &rc);
  const std::string text = r.report.to_json().dump(2) + "\n";
  if (a.out.empty()) {
    out << text;
  } else {
    write_text_atomic(a.out, text);
    write_snapshot(a.out, rc, false);
  }
  return ok;
}

inline int cmd_trace(const CommonArgs& a, const std::string& data, const std::string& checkpoint,
                     const std::string& condition, std::optional<double> sigma_max, std::size_t sample,
                     std::ostream& out) {
  ResolvedConfig rc;
  const auto r = run_eval(a, data, checkpoint, condition, sigma_max, true, &rc);
  require(!r.traces.empty(), ErrorKind::input, "trace needs a stan checkpoint");
  require(sample < r.traces.size(), ErrorKind::input,
          "--sample " + std::to_string(sample) + " out of range (" + std::to_string(r.traces.size()) + " samples)");
  const auto& tr = r.traces[sample].trace;
  std::ostringstream csv;
  tr.write_csv(csv);
  nlohmann::ordered_json summary = {{"sample", r.traces[sample].id}};
  if (tr.sensors() == 2) {
    const auto c = correlate_attention(tr);
    summary["pearson_r"] = c.defined ? nlohmann::ordered_json(c.r) : nlohmann::ordered_json(nullptr);
    summary["lag_frames"] = c.lag ? nlohmann::ordered_json(*c.lag) : nlohmann::ordered_json(nullptr);
  }
  if (a.out.empty()) {
    out << csv.str();
  } else {
    write_text_atomic(a.out, csv.str());
    write_snapshot(a.out, rc, false);
    out << summary.dump() << "\n";
  }
  return ok;
}

inline int cmd_graft(const CommonArgs& a, const std::string& front, const std::string& body, std::ostream& out) {
  require(!front.empty() && !body.empty() && !a.out.empty(), ErrorKind::config, "graft needs --front, --body and --out");
  const auto f = load_checkpoint<float>(front);
  const auto b = load_checkpoint<float>(body);
  const auto g = graft(f.model, b.model);
  CheckpointMeta meta;
  meta.provenance = {{"source", "graft"},
                     {"subtrees", {{"sensor.", fs::path(front).lexically_normal().string()},
                                   {"classifier.", fs::path(body).lexically_normal().string()}}},
                     {"front_config_hash", f.meta.config_hash},
                     {"body_config_hash", b.meta.config_hash}};
  save_checkpoint(a.out, g, meta);
  write_text_atomic(fs::path(a.out) / "config.resolved.json",
                    nlohmann::ordered_json({{"front", front}, {"body", body}}).dump(2) + "\n");
  out << "grafted " << g.params.size_with_prefix("sensor.") << " front-end and " << g.params.size_with_prefix("classifier.")
      << " classifier parameters into " << a.out << "\n";
  return ok;
}

inline int cmd_count_params(const CommonArgs& a, const std::string& family, const std::string& gru, std::ostream& out) {
  const GruVariant variant = gru_variant_from_string(gru);
  std::vector<RosterEntry> rows;
  if (!a.config.empty() || !a.overrides.empty()) {
    rows.push_back({"config", resolve(a).config.model});
  } else {
    require(family == "compact" || family == "wide" || family == "all", ErrorKind::config,
            "--family must be compact, wide or all");
    if (family != "wide")
      for (auto& e : audio_roster(RosterFamily::compact, variant)) rows.push_back({"compact/" + e.name, e.spec});
    if (family != "compact")
      for (auto& e : audio_roster(RosterFamily::wide, variant)) rows.push_back({"wide/" + e.name, e.spec});
  }
  nlohmann::ordered_json report = nlohmann::ordered_json::array();
  out << std::left << std::setw(30) << "model" << std::setw(14) << "architecture" << std::setw(9) << "sensors"
      << "parameters\n";
  for (const auto& r : rows) {
    const std::size_t n = count_params(r.spec);
    out << std::left << std::setw(30) << r.name << std::setw(14) << to_string(r.spec.architecture) << std::setw(9)
        << r.spec.sensors.size() << n << "\n";
    report.push_back({{"model", r.name}, {"parameters", n}});
  }
  if (!a.out.empty()) write_text_atomic(a.out, report.dump(2) + "\n");
  return ok;
}

// Entry point shared by the executable and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Sensor transformation attention network toolkit"};
  app.require_subcommand(1);
  CommonArgs common;
  std::string data, checkpoint, condition, front, body, kind, family = "all", gru = "reset_after";
  std::optional<double> sigma_max;
  std::optional<std::size_t> length;
  std::size_t sample = 0;
  bool quiet = false;

  auto add_common = [&](CLI::App* sub, bool with_seed = true) {
    sub->add_option("--config", common.config, "Experiment config (JSON, comments allowed)");
    sub->add_option("--out", common.out, "Output path");
    sub->add_option("--set", common.overrides, "Override a config value: dotted.key=value")->take_all();
    if (with_seed) sub->add_option("--seed", common.seed, "Seed for every random stream of the run");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  add_common(gen);
  auto* preview = app.add_subcommand("noise-preview", "Write a noise schedule as CSV");
  add_common(preview);
  preview->add_option("--kind", kind, "random_walk, sweep, burst, sinusoid or constant");
  preview->add_option("--length", length, "Frames");
  preview->add_option("--sigma-max", sigma_max, "Upper noise level");
  auto* tr = app.add_subcommand("train", "Train a model");
  add_common(tr);
  tr->add_option("--data", data, "Corpus directory (default: generate from config)");
  tr->add_flag("--quiet", quiet, "No per-epoch output");
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev);
  auto* trace = app.add_subcommand("trace", "Write the attention trace of one test sample");
  add_common(trace);
  for (auto* sub : {ev, trace}) {
    sub->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    sub->add_option("--data", data, "Corpus directory (default: generate from config)");
    sub->add_option("--condition", condition, "clean, noisy or profile");
    sub->add_option("--sigma-max", sigma_max, "Upper noise level for the noisy condition");
  }
  trace->add_option("--sample", sample, "Test sample index");
  auto* gr = app.add_subcommand("graft", "Combine a front-end and a classification stage");
  add_common(gr, false);
  gr->add_option("--front", front, "Checkpoint providing sensor.*")->required();
  gr->add_option("--body", body, "Checkpoint providing classifier.*")->required();
  auto* count = app.add_subcommand("count-params", "Parameter counts of the audio rosters or a config model");
  add_common(count, false);
  count->add_option("--family", family, "compact, wide or all");
  count->add_option("--gru", gru, "reset_after or reset_before");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return usage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common, out);
    if (preview->parsed()) return cmd_noise_preview(common, kind, length, sigma_max, out);
    if (tr->parsed()) return cmd_train(common, data, quiet, out);
    if (ev->parsed()) return cmd_eval(common, data, checkpoint, condition, sigma_max, out);
    if (trace->parsed()) return cmd_trace(common, data, checkpoint, condition, sigma_max, sample, out);
    if (gr->parsed()) return cmd_graft(common, front, body, out);
    if (count->parsed()) return cmd_count_params(common, family, gru, out);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error (io): " << e.what() << "\n";
    return input_error;
  }
  return usage;
}

}  // namespace stan::cli

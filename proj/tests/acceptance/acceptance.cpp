// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Trained models are cached in the work
// directory; a fresh directory retrains everything.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "stan/analysis.hpp"
#include "stan/checkpoint.hpp"
#include "stan/config.hpp"
#include "stan/corpus.hpp"
#include "stan/grad_check.hpp"
#include "stan/loss.hpp"
#include "stan/roster.hpp"
#include "stan/train.hpp"
#include "support/oracles.hpp"

using namespace stan;
using namespace stan::oracle;
using Clock = std::chrono::steady_clock;
using Mat = Matrix<double>;

namespace {

// ---------------------------------------------------------------------------
// Pinned tolerances and budgets

constexpr double kReflectTol = 1e-12;
constexpr std::size_t kReflectPoints = 100000;
constexpr std::size_t kCoverageSchedules = 10000;
constexpr std::size_t kCoverageFrames = 200;
constexpr double kCoverageMinShare = 0.05;
constexpr double kNoiseBudget = 10.0;

constexpr double kGradTol = 1e-4;
constexpr double kAffineGradTol = 1e-6;
constexpr double kGradBudget = 120.0;

constexpr double kCtcTol = 1e-9;
constexpr std::size_t kCtcInstances = 300;
constexpr double kCtcBudget = 60.0;

constexpr double kCleanEquivalenceTol = 1e-6;

constexpr double kMaxMedianR = -0.5;
constexpr double kFig2Budget = 15 * 60.0;

constexpr double kDominanceGap = 1.0;
constexpr std::size_t kDominanceFrames = 20;

constexpr std::size_t kSeeds = 3;
constexpr double kCleanSpread = 2.0;
constexpr double kFig5Budget = 90 * 60.0;

constexpr double kGraftCleanTol = 1.0;
constexpr double kGraftBudget = 30 * 60.0;

constexpr double kCompactCountRelTol = 0.01;

constexpr std::uint64_t kEvalSeed = 1000;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Shared experiment state

struct TrainedModel {
  StanModel<float> model;
  double train_seconds = 0.0;
  std::size_t epochs = 0;
};

class Workspace {
 public:
  explicit Workspace(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  const fs::path& dir() const { return dir_; }

  const Corpus& corpus() {
    if (!corpus_) corpus_ = generate_corpus(SyntheticTaskSpec{});
    return *corpus_;
  }

  // Larger clean corpus from the same task (same signatures, more samples).
  const Corpus& large_corpus() {
    if (!large_) {
      SyntheticTaskSpec t;
      t.train_samples = 3000;
      large_ = generate_corpus(t);
    }
    return *large_;
  }

  // Trains `spec` on `samples`, or loads an earlier run with the same inputs.
  const TrainedModel& trained(const std::string& name, const ModelSpec& spec, const TrainConfig& cfg,
                              const std::vector<Sample>& samples, const SyntheticTaskSpec& task) {
    if (auto it = models_.find(name); it != models_.end()) return it->second;
    nlohmann::json key = {{"model", spec}, {"train", cfg}, {"seed", cfg.seed}, {"task", task}};
    const std::string hash = hex64(fnv1a(key.dump()));
    const fs::path path = dir_ / "models" / name;
    if (fs::exists(path / "manifest.json")) {
      auto ck = load_checkpoint<float>(path);
      if (ck.meta.config_hash == hash) {
        std::cerr << "[acceptance] reusing " << name << "\n";
        return models_[name] = {std::move(ck.model), ck.meta.metrics.at("train_seconds").get<double>(),
                                ck.meta.metrics.at("epochs").get<std::size_t>()};
      }
    }
    std::cerr << "[acceptance] training " << name << "\n";
    Prng init = Prng::derive(cfg.seed, {stream::init});
    const auto t0 = Clock::now();
    auto result = train(build_model<float>(spec, init), samples, cfg, [&](const EpochRecord& r) {
      std::cerr << "[acceptance]   " << name << " epoch " << r.epoch << " train " << fmt(r.train_nll) << " valid "
                << fmt(r.valid_nll) << " ser " << fmt(r.valid_ser) << (r.improved ? " *" : "") << "\n";
    });
    const double secs = seconds_since(t0);
    CheckpointMeta meta;
    meta.config_hash = hash;
    meta.metrics = {{"train_seconds", secs}, {"epochs", result.log.size()}, {"best_epoch", result.best_epoch}};
    save_checkpoint(path, result.model, meta);
    return models_[name] = {std::move(result.model), secs, result.log.size()};
  }

 private:
  fs::path dir_;
  std::optional<Corpus> corpus_, large_;
  std::map<std::string, TrainedModel> models_;
};

// Toy models of the directional experiments.
ModelSpec toy_stan(std::size_t sensors) {
  ModelSpec m = default_model_spec();
  m.sensors.assign(sensors, m.sensors[0]);
  return m;
}

ModelSpec toy_concat(std::size_t sensors) {
  ModelSpec m = toy_stan(sensors);
  m.architecture = Architecture::concat;
  for (auto& s : m.sensors) s.attention_units = 0;
  return m;
}

TrainConfig toy_train(std::uint64_t seed) {
  TrainConfig c = default_config().train;
  c.seed = seed;
  return c;
}

const TrainedModel& stan2(Workspace& ws, std::uint64_t seed) {
  return ws.trained("stan2-seed" + std::to_string(seed), toy_stan(2), toy_train(seed), ws.corpus().train,
                    ws.corpus().task);
}

EvalCondition noisy_condition() {
  EvalCondition c;
  c.kind = ConditionKind::noisy;
  c.seed = kEvalSeed;
  return c;
}

EvalCondition clean_condition() {
  EvalCondition c;
  c.seed = kEvalSeed;
  return c;
}

// ---------------------------------------------------------------------------
// 1. Reflection and noise schedules

Outcome criterion_noise() {
  Outcome o;
  Prng prng(101);
  double worst = 0.0;
  std::size_t violations = 0;
  for (std::size_t i = 0; i < kReflectPoints; ++i) {
    const double s = prng.uniform(0.1, 10.0);
    const double a = prng.uniform(-50.0, 50.0);
    const double b = prng.uniform(0.0, 1.0) < 0.5 ? a + prng.uniform(-1e-3, 1e-3) : prng.uniform(-50.0, 50.0);
    const double ra = reflect(a, s), rb = reflect(b, s);
    if (ra < 0.0 || ra > s) ++violations;
    const double lip = std::abs(ra - rb) - std::abs(a - b);
    const double per = std::abs(reflect(a + 2.0 * s, s) - ra);
    const double even = std::abs(reflect(-a, s) - ra);
    worst = std::max({worst, lip, per, even});
  }
  if (worst > kReflectTol) ++violations;

  constexpr double sigma_max = 3.0;
  const WalkConfig walk;
  std::vector<std::size_t> bins(10, 0);
  std::size_t total = 0, out_of_range = 0;
  for (std::size_t k = 0; k < kCoverageSchedules; ++k) {
    Prng p = Prng::derive(17, {k});
    const auto sched = walk_schedule(p, walk, kCoverageFrames);
    for (double v : sched.sigma) {
      if (v < 0.0 || v > sigma_max) ++out_of_range;
      ++bins[std::min<std::size_t>(9, static_cast<std::size_t>(v / (sigma_max / 10.0)))];
      ++total;
    }
  }
  double min_share = 1.0;
  for (auto c : bins) min_share = std::min(min_share, static_cast<double>(c) / static_cast<double>(total));
  o.pass = violations == 0 && out_of_range == 0 && min_share >= kCoverageMinShare;
  std::ostringstream d;
  d << kReflectPoints << " reflect points, max property error " << std::scientific << std::setprecision(1) << worst
    << std::defaultfloat << ", " << out_of_range << " schedule values outside [0,3], smallest decile share "
    << fmt(100.0 * min_share) << "%";
  o.detail = d.str();
  return o;
}

// ---------------------------------------------------------------------------
// 2. Gradients

Mat random_matrix(Eigen::Index r, Eigen::Index c, Prng& prng, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * prng.uniform(-1.0, 1.0);
  return m;
}

void randomize(ParamTree<double>& tree, Prng& prng, double scale = 0.5) {
  for (auto& e : tree.entries())
    for (auto& v : e.value.values()) v = scale * prng.uniform(-1.0, 1.0);
}

double weighted_sum(const Mat& out, const Mat& w) { return (out.array() * w.array()).sum(); }

struct GradCase {
  std::string name;
  double tolerance;
  double error;
};

GradCheckReport run_check(ParamTree<double>& tree, const std::function<double()>& loss, double tol) {
  GradCheckOptions opt;
  opt.tolerance = tol;
  opt.max_per_tensor = 200;
  return grad_check(tree, loss, opt);
}

Outcome criterion_gradients() {
  std::vector<GradCase> cases;
  Prng prng(202);

  for (Activation act : {Activation::identity, Activation::tanh}) {
    DenseLayer layer{"d", 6, 5, act};
    std::vector<ParamSpec> specs;
    layer.declare(specs);
    auto tree = init_params<double>(specs, prng);
    randomize(tree, prng);
    const Mat x = random_matrix(7, 6, prng), w = random_matrix(7, 5, prng);
    DenseCache<double> cache;
    tree.zero_grad();
    layer.forward(tree, x, &cache);
    layer.backward(tree, cache, w);
    const double tol = act == Activation::identity ? kAffineGradTol : kGradTol;
    const auto r = run_check(tree, [&] { return weighted_sum(layer.forward(tree, x), w); }, tol);
    cases.push_back({act == Activation::identity ? "affine" : "dense-tanh", tol, r.max_rel_error});
  }

  for (GruVariant v : {GruVariant::reset_after, GruVariant::reset_before}) {
    GruLayer layer{"g", 4, 5, v};
    std::vector<ParamSpec> specs;
    layer.declare(specs);
    auto tree = init_params<double>(specs, prng);
    randomize(tree, prng);
    const std::size_t T = 6, B = 2;
    const Mat x = random_matrix(T * B, 4, prng), w = random_matrix(T * B, 5, prng);
    GruCache<double> cache;
    tree.zero_grad();
    layer.forward(tree, x, T, B, {}, &cache);
    layer.backward(tree, cache, w);
    const auto r = run_check(tree, [&] { return weighted_sum(layer.forward(tree, x, T, B, {}), w); }, kGradTol);
    cases.push_back({std::string("gru-") + to_string(v), kGradTol, r.max_rel_error});
  }

  {
    RnnStack stack{"c", 4, {5, 3}, true, GruVariant::reset_after};
    std::vector<ParamSpec> specs;
    stack.declare(specs);
    auto tree = init_params<double>(specs, prng);
    randomize(tree, prng);
    const std::size_t T = 5, B = 3;
    const Mat x = random_matrix(T * B, 4, prng);
    const Mat w = random_matrix(T * B, static_cast<Eigen::Index>(stack.out_dim()), prng);
    FrameMask<double> mask = FrameMask<double>::Ones(T * B);
    mask((T - 1) * B + 1) = 0;
    RnnCache<double> cache;
    tree.zero_grad();
    stack.forward(tree, x, T, B, mask, &cache);
    stack.backward(tree, cache, w);
    const auto r = run_check(tree, [&] { return weighted_sum(stack.forward(tree, x, T, B, mask), w); }, kGradTol);
    cases.push_back({"bi-gru-stack", kGradTol, r.max_rel_error});
  }

  {
    CnnTransform cnn{"v", {12, 12, 2}};
    std::vector<ParamSpec> specs;
    cnn.declare(specs);
    auto tree = init_params<double>(specs, prng);
    randomize(tree, prng, 0.3);
    const Mat x = random_matrix(2, 12 * 12 * 2, prng);
    const Mat w = random_matrix(2, static_cast<Eigen::Index>(cnn.out_dim()), prng);
    CnnCache<double> cache;
    tree.zero_grad();
    cnn.forward(tree, x, &cache);
    cnn.backward(tree, cache, w);
    const auto r = run_check(tree, [&] { return weighted_sum(cnn.forward(tree, x), w); }, kGradTol);
    cases.push_back({"conv-pool", kGradTol, r.max_rel_error});
  }

  {
    // affine output layer followed by the CTC softmax
    DenseLayer head{"o", 4, 4, Activation::identity};
    std::vector<ParamSpec> specs;
    head.declare(specs);
    auto tree = init_params<double>(specs, prng);
    randomize(tree, prng);
    const Mat x = random_matrix(6, 4, prng, 2.0);
    const LabelSequence labels{1, 3, 3};
    DenseCache<double> cache;
    tree.zero_grad();
    const Mat logits = head.forward(tree, x, &cache);
    head.backward(tree, cache, ctc_loss(logits, labels).logit_gradients);
    const auto r = run_check(tree, [&] { return ctc_loss(head.forward(tree, x), labels).neg_log_likelihood; }, kGradTol);
    // attention softmax over sensors
    Mat z = random_matrix(5, 3, prng, 2.0);
    const Mat w = random_matrix(5, 3, prng);
    const Mat dz = softmax_rows_backward(softmax_rows(z), w);
    const Mat numeric = numeric_gradient(z, [&](const Mat& m) { return weighted_sum(softmax_rows(m), w); });
    cases.push_back({"softmax-head", kGradTol, std::max(r.max_rel_error, max_relative_error(dz, numeric))});
  }

  std::vector<std::pair<std::string, ModelSpec>> models;
  {
    ModelSpec m;
    m.architecture = Architecture::stan;
    SensorSpec s;
    s.feature_dim = 4;
    s.transform = TransformKind::dense;
    s.transform_units = 3;
    s.attention_units = 3;
    m.sensors.assign(2, s);
    m.classifier = {{4}, false, 3};
    models.emplace_back("stan-dense", m);
    ModelSpec bi = m;
    bi.classifier = {{3, 3}, true, 3};
    for (auto& x : bi.sensors) x.share_group = "audio";
    models.emplace_back("stan-shared-bi", bi);
    ModelSpec video;
    video.architecture = Architecture::stan;
    SensorSpec v;
    v.modality = Modality::image;
    v.image = {8, 8, 1};
    v.transform = TransformKind::cnn;
    v.attention_units = 2;
    video.sensors.assign(2, v);
    video.classifier = {{3}, false, 3};
    models.emplace_back("stan-cnn", video);
  }
  for (const auto& [name, spec] : models) {
    auto model = build_model<double>(spec, prng);
    randomize(model.params, prng);
    const std::size_t dim = spec.sensors[0].input_dim();
    std::vector<std::vector<FeatureSequence>> data(spec.sensors.size());
    for (auto& d : data)
      for (std::size_t len : {5, 4}) {
        FeatureSequence f(len, dim);
        for (Eigen::Index i = 0; i < f.frames.size(); ++i) f.frames.data()[i] = static_cast<float>(prng.normal());
        d.push_back(f);
      }
    std::vector<std::vector<const FeatureSequence*>> ptrs(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      for (const auto& f : data[i]) ptrs[i].push_back(&f);
    const auto batch = make_batch<double>(ptrs);
    const LabelSequence l0{1, 2}, l1{2};
    const std::vector<const LabelSequence*> labels{&l0, &l1};
    ForwardTape<double> tape;
    ForwardOptions<double> opt;
    opt.tape = &tape;
    model.params.zero_grad();
    const auto loss = batch_ctc_loss(forward(model, batch, opt), labels);
    backward(model, tape, loss.dlogits);
    GradCheckOptions gc;
    gc.max_per_tensor = 40;
    const auto r =
        grad_check(model.params, [&] { return batch_ctc_loss(forward(model, batch), labels, false).mean_nll; }, gc);
    cases.push_back({name + "+ctc", kGradTol, r.max_rel_error});
  }

  Outcome o;
  o.pass = true;
  std::ostringstream d;
  for (const auto& c : cases) {
    o.pass = o.pass && c.error < c.tolerance;
    d << (d.tellp() ? ", " : "") << c.name << " " << std::scientific << std::setprecision(1) << c.error;
  }
  o.detail = "max relative errors: " + d.str();
  return o;
}

// ---------------------------------------------------------------------------
// 3. CTC against brute force

Outcome criterion_ctc() {
  Prng prng(303);
  double worst = 0.0;
  for (std::size_t i = 0; i < kCtcInstances; ++i) {
    const auto inst = random_ctc_instance(prng);
    const double dp = ctc_loss(inst.logits, inst.labels).neg_log_likelihood;
    worst = std::max(worst, std::abs(dp - brute_force_ctc(inst.logits, inst.labels)));
  }
  std::ostringstream d;
  d << kCtcInstances << " instances (T<=6, L<=3, classes<=4), max |dp - brute force| " << std::scientific
    << std::setprecision(1) << worst;
  return {worst <= kCtcTol, d.str()};
}

// ---------------------------------------------------------------------------
// 4. Clean equivalence

template <typename Real>
double max_sample_relative_gap(const StanModel<Real>& a, const StanModel<Real>& b, const std::vector<Sample>& test) {
  double worst = 0.0;
  for (std::size_t start = 0; start < test.size(); start += 32) {
    const std::size_t end = std::min(test.size(), start + 32);
    std::vector<const FeatureSequence*> xs;
    for (std::size_t i = start; i < end; ++i) xs.push_back(&test[i].features);
    const auto ra = forward(a, make_batch<Real>(std::vector(a.spec.sensors.size(), xs)));
    const auto rb = forward(b, make_batch<Real>(std::vector(b.spec.sensors.size(), xs)));
    for (std::size_t s = 0; s < xs.size(); ++s) {
      const Matrix<Real> la = SensorBatch<Real>::sample_rows(ra.logits, s, ra.batch, xs[s]->length());
      const Matrix<Real> lb = SensorBatch<Real>::sample_rows(rb.logits, s, rb.batch, xs[s]->length());
      const double scale = static_cast<double>(lb.cwiseAbs().maxCoeff());
      worst = std::max(worst, static_cast<double>((la - lb).cwiseAbs().maxCoeff()) / std::max(scale, 1e-30));
    }
  }
  return worst;
}

template <typename Real>
StanModel<Real> single_counterpart(const StanModel<Real>& stan_model) {
  ModelSpec spec = stan_model.spec;
  spec.architecture = Architecture::single;
  spec.sensors.resize(1);
  spec.sensors[0].attention_units = 0;
  spec.sensors[0].share_group.clear();
  StanModel<Real> out{spec, {}};
  for (const auto& e : stan_model.params.entries())
    if (e.name.starts_with("classifier.")) out.params.add(e.name, e.value);
  return out;
}

Outcome criterion_clean_equivalence(Workspace& ws) {
  const auto& test = ws.corpus().test;
  // Three sensors sharing the trained attention layers of the 2-sensor toy model.
  const auto& trained = stan2(ws, 0).model;
  ModelSpec spec = toy_stan(3);
  for (auto& s : spec.sensors) s.share_group = "audio";
  StanModel<float> stan_model{spec, {}};
  for (const auto& p : ModelLayout(spec).param_specs()) stan_model.params.add(p.name, trained.params.value(p.name));
  const auto single = single_counterpart(stan_model);
  const double gap = max_sample_relative_gap(stan_model, single, test);
  const auto ea = evaluate(stan_model, test, clean_condition(), {});
  const auto eb = evaluate(single, test, clean_condition(), {});
  const bool same = ea.hypotheses == eb.hypotheses && ea.report.ser == eb.report.ser;
  std::ostringstream d;
  d << "shared 3-sensor STAN vs single baseline with the same trained classifier on " << test.size()
    << " clean test samples: max relative logit gap " << std::scientific << std::setprecision(1) << gap
    << std::defaultfloat << ", SER " << fmt(ea.report.ser) << " vs " << fmt(eb.report.ser)
    << (same ? " (identical transcriptions)" : " (transcriptions differ)");
  return {gap <= kCleanEquivalenceTol && same, d.str()};
}

// ---------------------------------------------------------------------------
// 5. Attention follows the noise

Outcome criterion_fig2(Workspace& ws) {
  const auto& m = stan2(ws, 0);
  EvalOptions opt;
  opt.keep_traces = true;
  const auto r = evaluate(m.model, ws.corpus().test, noisy_condition(), opt);
  std::vector<double> rs, lags;
  for (const auto& t : r.traces) {
    const auto c = correlate_attention(t.trace);
    if (c.defined) rs.push_back(c.r);
    if (c.lag) lags.push_back(*c.lag);
  }
  const double med = rs.empty() ? 1.0 : median(rs);
  std::ostringstream d;
  d << "median Pearson r " << fmt(med, 3) << " over " << rs.size() << " noisy test traces, median crossover lag "
    << (lags.empty() ? std::string("n/a") : fmt(median(lags), 1) + " frames") << ", training " << fmt(m.train_seconds, 0)
    << " s (" << m.epochs << " epochs), noisy SER " << fmt(r.report.ser);
  return {med <= kMaxMedianR && m.train_seconds <= kFig2Budget, d.str()};
}

// ---------------------------------------------------------------------------
// 6. Unseen noise profiles

std::vector<std::pair<std::string, std::vector<NoiseProfileSpec>>> unseen_profiles() {
  NoiseProfileSpec burst;
  burst.kind = NoiseKind::burst;
  burst.onset = 40;
  burst.duration = 60;
  burst.level = 3.0;
  burst.base = 0.0;
  NoiseProfileSpec steady;
  steady.kind = NoiseKind::constant;
  steady.level = 1.5;
  NoiseProfileSpec sin_a;
  sin_a.kind = NoiseKind::sinusoid;
  sin_a.offset = 1.5;
  sin_a.amplitude = 1.5;
  sin_a.period = 100;
  sin_a.phase = 0.0;
  NoiseProfileSpec sin_b = sin_a;
  sin_b.phase = std::numbers::pi;
  return {{"sweep", {NoiseProfileSpec::sweep(0.0, 3.0), NoiseProfileSpec::sweep(3.0, 0.0)}},
          {"burst", {burst, steady}},
          {"sinusoid", {sin_a, sin_b}}};
}

Outcome criterion_fig3(Workspace& ws) {
  const auto& m = stan2(ws, 0);
  Outcome o;
  o.pass = true;
  std::ostringstream d;
  for (const auto& [name, profiles] : unseen_profiles()) {
    EvalCondition cond;
    cond.kind = ConditionKind::profile;
    cond.profiles = profiles;
    cond.seed = kEvalSeed;
    EvalOptions opt;
    opt.keep_traces = true;
    const auto r = evaluate(m.model, ws.corpus().test, cond, opt);
    std::size_t intervals = 0, failed = 0;
    double lowest = 1.0, sum = 0.0;
    for (const auto& t : r.traces)
      for (const auto& iv : dominance_intervals(t.trace, kDominanceGap, kDominanceFrames)) {
        ++intervals;
        sum += iv.mean_attention;
        lowest = std::min(lowest, iv.mean_attention);
        if (!(iv.mean_attention > 0.5)) ++failed;
      }
    o.pass = o.pass && intervals > 0 && failed == 0;
    d << (d.tellp() ? "; " : "") << name << ": " << intervals - failed << "/" << intervals
      << " intervals favour the quieter sensor (mean " << fmt(intervals ? sum / static_cast<double>(intervals) : 0, 3)
      << ", min " << fmt(lowest, 3) << ")";
  }
  o.detail = d.str();
  return o;
}

// ---------------------------------------------------------------------------
// 7. STAN vs concatenation over seeds

Outcome criterion_fig5(Workspace& ws) {
  const auto t0 = Clock::now();
  struct Row {
    std::string name;
    std::vector<double> noisy, clean;
  };
  std::vector<Row> rows{{"stan3", {}, {}}, {"stan2", {}, {}}, {"concat2", {}, {}}};
  double train_seconds = 0.0, fetch_seconds = 0.0;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const std::vector<std::pair<std::string, ModelSpec>> specs{
        {"stan3", toy_stan(3)}, {"stan2", toy_stan(2)}, {"concat2", toy_concat(2)}};
    for (std::size_t k = 0; k < specs.size(); ++k) {
      const auto before = Clock::now();
      const auto& m = ws.trained(specs[k].first + "-seed" + std::to_string(seed), specs[k].second, toy_train(seed),
                                 ws.corpus().train, ws.corpus().task);
      fetch_seconds += seconds_since(before);
      train_seconds += m.train_seconds;
      rows[k].noisy.push_back(evaluate(m.model, ws.corpus().test, noisy_condition(), {}).report.ser);
      rows[k].clean.push_back(evaluate(m.model, ws.corpus().test, clean_condition(), {}).report.ser);
    }
  }
  const auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  bool per_seed = true;
  for (std::size_t s = 0; s < kSeeds; ++s) per_seed = per_seed && rows[1].noisy[s] < rows[2].noisy[s];
  const double m3 = mean(rows[0].noisy), m2 = mean(rows[1].noisy), mc = mean(rows[2].noisy);
  double lo = 100.0, hi = 0.0;
  for (const auto& r : rows)
    for (double c : r.clean) {
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
  // cached models count at their recorded training time
  const double runtime = seconds_since(t0) - fetch_seconds + train_seconds;
  std::ostringstream d;
  d << "noisy SER by seed";
  for (const auto& r : rows) {
    d << " " << r.name << " [";
    for (std::size_t s = 0; s < kSeeds; ++s) d << (s ? " " : "") << fmt(r.noisy[s], 1);
    d << "]";
  }
  d << "; means " << fmt(m3) << " <= " << fmt(m2) << " < " << fmt(mc) << "; STAN2 < concat2 in "
    << (per_seed ? "every" : "not every") << " seed; clean SER range [" << fmt(lo) << ", " << fmt(hi) << "]; "
    << fmt(runtime / 60.0, 1) << " min";
  return {per_seed && m3 <= m2 && m2 < mc && hi - lo <= kCleanSpread && runtime <= kFig5Budget, d.str()};
}

// ---------------------------------------------------------------------------
// 8. Grafting

Outcome criterion_graft(Workspace& ws) {
  const auto t0 = Clock::now();
  const auto& front = stan2(ws, 0);
  ModelSpec body_spec = toy_stan(1);
  body_spec.architecture = Architecture::single;
  body_spec.sensors[0].attention_units = 0;
  body_spec.classifier.layers = {64, 64};
  TrainConfig body_cfg = toy_train(0);
  body_cfg.noise.enabled = false;
  const auto& large = ws.large_corpus();
  const auto before = Clock::now();
  const auto& body = ws.trained("body-clean-deep", body_spec, body_cfg, large.train, large.task);
  const double fetch_seconds = seconds_since(before);
  const auto grafted = graft(front.model, body.model);

  bool preserved = true;
  for (const auto& e : grafted.params.entries()) {
    const auto& src = e.name.starts_with("sensor.") ? front.model.params : body.model.params;
    preserved = preserved && e.value.values() == src.value(e.name).values();
  }

  const auto& test = ws.corpus().test;
  auto averaged = noisy_condition();
  averaged.copies = 2;
  const auto g_noisy = evaluate(grafted, test, noisy_condition(), {}).report;
  const auto b_noisy = evaluate(body.model, test, averaged, {}).report;
  const auto g_clean = evaluate(grafted, test, clean_condition(), {}).report;
  const auto b_clean = evaluate(body.model, test, clean_condition(), {}).report;
  const double runtime = seconds_since(t0) - fetch_seconds + body.train_seconds;
  std::ostringstream d;
  d << "noisy SER graft " << fmt(g_noisy.ser) << " vs body on averaged input " << fmt(b_noisy.ser) << " (WER "
    << fmt(g_noisy.wer) << " vs " << fmt(b_noisy.wer) << "); clean SER " << fmt(g_clean.ser) << " vs "
    << fmt(b_clean.ser) << "; tensors preserved: " << (preserved ? "yes" : "no") << "; " << fmt(runtime / 60.0, 1)
    << " min";
  return {preserved && g_noisy.ser < b_noisy.ser && std::abs(g_clean.ser - b_clean.ser) <= kGraftCleanTol &&
              runtime <= kGraftBudget,
          d.str()};
}

// ---------------------------------------------------------------------------
// 9. Parameter accounting

Outcome criterion_params() {
  // Published rows: single, STAN x2, STAN x3, concat x2, concat x3.
  const std::vector<std::size_t> compact_ref{162262, 169544, 173185, 179812, 197362};
  const std::vector<std::size_t> wide_ref{1030012, 1056654, 1062955, 1108052, 1170052};
  const auto counts = [](RosterFamily f) {
    std::vector<std::size_t> out;
    for (const auto& e : audio_roster(f, GruVariant::reset_after)) out.push_back(count_params(e.spec));
    return out;
  };
  const auto c1 = counts(RosterFamily::compact), c3 = counts(RosterFamily::wide);
  const auto delta = [](const std::vector<std::size_t>& v, std::size_t hi, std::size_t lo) {
    return static_cast<long long>(v[hi]) - static_cast<long long>(v[lo]);
  };
  bool pass = true;
  std::ostringstream d;
  // per-sensor growth: STAN x3 - STAN x2 and concat x3 - concat x2
  for (const auto& [label, ours, ref] : {std::tuple{"compact", &c1, &compact_ref}, std::tuple{"wide", &c3, &wide_ref}}) {
    const auto stan_delta = delta(*ours, 2, 1), concat_delta = delta(*ours, 4, 3);
    const bool ok = stan_delta == delta(*ref, 2, 1) && concat_delta == delta(*ref, 4, 3);
    pass = pass && ok;
    d << label << " per-sensor growth STAN " << stan_delta << ", concat " << concat_delta << (ok ? " (exact)" : " (MISMATCH)")
      << "; ";
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < compact_ref.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(c1[i]) - static_cast<double>(compact_ref[i])) /
                                static_cast<double>(compact_ref[i]));
  pass = pass && worst <= kCompactCountRelTol;
  // The reference wide single-sensor count is inconsistent with the other four rows and is only reported.
  bool wide_multi = true;
  for (std::size_t i = 1; i < wide_ref.size(); ++i) wide_multi = wide_multi && c3[i] == wide_ref[i];
  pass = pass && wide_multi;
  d << "compact absolute max relative gap " << std::scientific << std::setprecision(1) << worst << std::defaultfloat
    << " (reset-after GRU); wide multi-sensor rows " << (wide_multi ? "exact" : "MISMATCH") << "; wide single row "
    << c3[0] << " vs reference " << wide_ref[0];
  return {pass, d.str()};
}

// ---------------------------------------------------------------------------
// 10. Byte-identical CLI artifacts

std::vector<fs::path> files_under(const fs::path& dir) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(dir)) return {fs::path()};
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir));
  std::sort(out.begin(), out.end());
  return out;
}

bool identical(const fs::path& a, const fs::path& b) {
  const auto fa = files_under(a), fb = files_under(b);
  if (fa != fb || fa.empty()) return false;
  for (const auto& f : fa)
    if (read_file(f.empty() ? a : a / f) != read_file(f.empty() ? b : b / f)) return false;
  return true;
}

Outcome criterion_reproducibility(const Workspace& ws, const std::string& binary) {
  const fs::path dir = ws.dir() / "repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string small =
      " --set corpus.train_samples=200 corpus.test_samples=20 train.max_epochs=3 train.patience=1 --quiet";
  const std::vector<std::pair<std::string, std::function<std::string(const std::string&)>>> commands{
      {"gen-data", [&](const std::string& out) { return " gen-data --seed 7 --out " + out; }},
      {"noise-preview", [&](const std::string& out) { return " noise-preview --seed 7 --length 500 --out " + out; }},
      {"train", [&](const std::string& out) { return " train --seed 7 --out " + out + small; }},
  };
  bool pass = true;
  std::ostringstream d;
  for (const auto& [name, args] : commands) {
    bool ok = true;
    std::vector<fs::path> outs;
    for (const char* tag : {"a", "b", "c"}) {
      outs.push_back(dir / (name + "-" + tag + (name == "noise-preview" ? ".csv" : "")));
      std::string cmd = "\"" + binary + "\"" + args(outs.back().string());
      // the third run uses another seed and must differ
      if (std::string(tag) == "c") cmd.replace(cmd.find("--seed 7"), 8, "--seed 8");
      ok = ok && std::system((cmd + " > /dev/null").c_str()) == 0;
    }
    const bool same = ok && identical(outs[0], outs[1]);
    const bool differs = ok && !identical(outs[0], outs[2]);
    pass = pass && same && differs;
    std::size_t files = ok ? files_under(outs[0]).size() : 0;
    if (name == "noise-preview") files += fs::exists(outs[0].string() + ".config.json");
    d << (d.tellp() ? ", " : "") << name << " " << (same ? "identical" : "DIFFERENT") << " (" << files << " files"
      << (differs ? "" : ", seed ignored") << ")";
  }
  return {pass, "repeated runs with one seed: " + d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::string workdir = "acceptance_work", binary;
  std::vector<int> only;
  bool reuse = false;
  app.add_option("--workdir", workdir, "Directory for cached models and artifacts");
  app.add_option("--stan-binary", binary, "Path of the stan executable")->required();
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_flag("--reuse", reuse, "Reuse models trained by an earlier run in the work directory");
  CLI11_PARSE(app, argc, argv);

  if (!reuse) fs::remove_all(fs::path(workdir) / "models");
  Workspace ws(workdir);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, [] { return criterion_noise(); }},
      {2, [] { return criterion_gradients(); }},
      {3, [] { return criterion_ctc(); }},
      {7, [&] { return criterion_fig5(ws); }},
      {4, [&] { return criterion_clean_equivalence(ws); }},
      {5, [&] { return criterion_fig2(ws); }},
      {6, [&] { return criterion_fig3(ws); }},
      {8, [&] { return criterion_graft(ws); }},
      {9, [] { return criterion_params(); }},
      {10, [&] { return criterion_reproducibility(ws, binary); }},
  };
  const std::map<int, double> budgets{{1, kNoiseBudget}, {2, kGradBudget}, {3, kCtcBudget}};

  std::map<int, Outcome> results;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    o.seconds = seconds_since(t0);
    if (auto b = budgets.find(id); b != budgets.end() && o.seconds > b->second) {
      o.pass = false;
      o.detail += "; over the " + fmt(b->second, 0) + " s budget";
    }
    std::cerr << "[acceptance] criterion " << id << " done in " << fmt(o.seconds, 1) << " s\n";
    results[id] = o;
  }

  nlohmann::ordered_json report = nlohmann::ordered_json::array();
  bool all = true;
  for (const auto& [id, o] : results) {
    std::cout << "criterion " << std::setw(2) << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << " ["
              << fmt(o.seconds, 1) << " s]\n";
    report.push_back({{"criterion", id}, {"pass", o.pass}, {"detail", o.detail}, {"seconds", o.seconds}});
    all = all && o.pass;
  }
  write_json_atomic(fs::path(workdir) / "acceptance_report.json", report);
  return all ? 0 : 1;
}

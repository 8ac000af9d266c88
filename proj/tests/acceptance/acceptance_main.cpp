// End-to-end acceptance suite. Each check prints one [PASS]/[FAIL] line;
// the process exits non-zero if any check fails.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <climits>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <vector>

#include "attnpain/cli.hpp"
#include "attnpain/data.hpp"
#include "attnpain/harness.hpp"
#include "attnpain/interpret.hpp"
#include "attnpain/metrics.hpp"
#include "attnpain/optim.hpp"
#include "attnpain/vit.hpp"

namespace fs = std::filesystem;
using namespace attnpain;

namespace {

int g_failures = 0;

void report(int number, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %02d %-28s %s\n", pass ? "PASS" : "FAIL", number, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string make_temp_dir(const std::string& tag) {
  static std::mt19937_64 rng(
      static_cast<uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
  const auto dir = fs::temp_directory_path() / ("attnpain_acc_" + tag + "_" +
                                                std::to_string(rng()));
  fs::create_directories(dir);
  return dir.string();
}

// ---------------------------------------------------------------------- 1

void criterion_pspi() {
  const auto t0 = std::chrono::steady_clock::now();
  size_t combos = 0, mismatches = 0;
  int lo = INT_MAX, hi = INT_MIN;
  for (int a4 = 0; a4 <= 5; ++a4)
    for (int a6 = 0; a6 <= 5; ++a6)
      for (int a7 = 0; a7 <= 5; ++a7)
        for (int a9 = 0; a9 <= 5; ++a9)
          for (int a10 = 0; a10 <= 5; ++a10)
            for (int a43 = 0; a43 <= 1; ++a43) {
              ++combos;
              const int expect = a4 + std::max(a6, a7) + std::max(a9, a10) + a43;
              const int got = data::pspi_score({a4, a6, a7, a9, a10, a43});
              if (got != expect) ++mismatches;
              lo = std::min(lo, got);
              hi = std::max(hi, got);
            }
  const double secs = elapsed_s(t0);
  const bool pass =
      combos == 15552 && mismatches == 0 && lo == 0 && hi == 16 && secs < 1.0;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "%zu combinations, %zu mismatches, range [%d,%d], %.3fs", combos,
                mismatches, lo, hi, secs);
  report(1, "pspi-oracle", pass, detail);
}

// ---------------------------------------------------------------------- 2

void criterion_mixup_example() {
  const auto blended = data::blend_labels({1.0, 0.0}, {0.0, 1.0}, 0.8);
  const bool pass = blended[0] == 0.8 && std::abs(blended[1] - 0.2) <= 1e-16 &&
                    blended[0] + blended[1] == 1.0;
  char detail[160];
  std::snprintf(detail, sizeof detail, "lambda=0.8 blend -> [%.17g, %.17g], mass %.17g",
                blended[0], blended[1], blended[0] + blended[1]);
  report(2, "mixup-paper-example", pass, detail);
}

// ---------------------------------------------------------------------- 3

void criterion_architecture() {
  vit::ModelConfig cfg = vit::ModelConfig::paper_preset();
  cfg.dtype = DType::f32;  // halves the memory; the count is dtype-free
  const bool tokens_ok = cfg.tokens() == 197 && cfg.num_patches() == 196;
  vit::ViTModel model = vit::ViTModel::init_parameters(cfg, 0);
  const double count = static_cast<double>(model.trainable_scalar_count());
  const double rel = std::abs(count - 86e6) / 86e6;
  const bool pass = tokens_ok && rel <= 0.03;
  char detail[160];
  std::snprintf(detail, sizeof detail, "tokens=%zu, trainable scalars=%.0f (%.2f%% from 86M)",
                cfg.tokens(), count, rel * 100.0);
  report(3, "architecture-shape", pass, detail);
}

// ---------------------------------------------------------------------- 4

void criterion_gradcheck() {
  const auto t0 = std::chrono::steady_clock::now();
  vit::ModelConfig cfg = vit::ModelConfig::tiny_preset();  // 32px/8, 4L, 4H, 64-dim
  vit::ViTModel model = vit::ViTModel::init_parameters(cfg, 1234);
  model.set_trainable(cfg.num_layers);

  Prng rng(99);
  Tensor xb = Tensor::uniform({1, 1, 32, 32}, 0, 1, rng);
  Tensor yb = Tensor::from_data({1, 2}, {0.0, 1.0});

  for (auto& p : model.params())
    if (p.trainable) p.value.zero_grad();
  backward(cross_entropy(model.forward(xb, false, nullptr).logits, yb));

  struct Target {
    size_t param;
    size_t index;
    double analytic;
  };
  std::vector<Target> targets;
  size_t checked = 0;
  for (size_t pi = 0; pi < model.params().size(); ++pi) {
    const auto& p = model.params()[pi];
    if (!p.trainable) continue;
    for (size_t i = 0; i < p.value.numel(); ++i)
      targets.push_back({pi, i, p.value.grad_item(i)});
  }
  checked = targets.size();

  // Central differences, split across workers with private model copies.
  const size_t nthreads = std::max<unsigned>(1, std::thread::hardware_concurrency());
  std::atomic<size_t> cursor{0};
  std::vector<double> worst_per_thread(nthreads, 0.0);
  auto worker = [&](size_t tid) {
    vit::ViTModel local = model.deep_copy();
    auto eval = [&]() {
      NoGradGuard ng;
      return cross_entropy(local.forward(xb, false, nullptr).logits, yb).value();
    };
    const double h = 1e-5;
    for (;;) {
      const size_t i = cursor.fetch_add(64);
      if (i >= targets.size()) return;
      const size_t end = std::min(targets.size(), i + 64);
      for (size_t k = i; k < end; ++k) {
        Tensor& t = local.params()[targets[k].param].value;
        const double orig = t.item(targets[k].index);
        t.set_item(targets[k].index, orig + h);
        const double up = eval();
        t.set_item(targets[k].index, orig - h);
        const double down = eval();
        t.set_item(targets[k].index, orig);
        const double numeric = (up - down) / (2.0 * h);
        const double a = targets[k].analytic;
        const double rel =
            std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-4});
        worst_per_thread[tid] = std::max(worst_per_thread[tid], rel);
      }
    }
  };
  std::vector<std::thread> pool;
  for (size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker, t);
  for (auto& t : pool) t.join();
  const double worst = *std::max_element(worst_per_thread.begin(), worst_per_thread.end());

  const double secs = elapsed_s(t0);
  const bool pass = worst < 1e-3 && secs < 300.0;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "%zu trainable gradients, max rel err %.3e, %.1fs", checked, worst, secs);
  report(4, "gradient-correctness", pass, detail);
}

// ---------------------------------------------------------------------- 5

void criterion_optimizers() {
  std::string notes;
  bool pass = true;

  {  // Adam first-step identity.
    std::vector<vit::Param> params;
    vit::Param p;
    p.name = "w";
    p.value = Tensor::from_data({1}, {0.0}, DType::f64, true);
    p.trainable = true;
    params.push_back(std::move(p));
    params[0].value.accumulate_grad({1.0});
    optim::AdamConfig cfg;
    cfg.lr = 2e-4;
    optim::Adam adam(cfg);
    adam.step(params);
    const double got = params[0].value.item(0);
    if (std::abs(got + 2e-4) > 1e-11) {
      pass = false;
      notes += " adam-first-step";
    }
  }

  // A 12-layer small-geometry model exercises every unfrozen setting.
  vit::ModelConfig mc = vit::ModelConfig::tiny_preset();
  mc.image_size = 16;
  mc.patch_size = 8;
  mc.hidden_dim = 32;
  mc.num_layers = 12;
  mc.num_heads = 4;
  mc.mlp_dim = 64;

  {  // SAM perturbation norm and closure count on a real model.
    vit::ViTModel model = vit::ViTModel::init_parameters(mc, 7);
    model.set_trainable(2);
    Prng rng(17);
    Tensor xb = Tensor::uniform({2, 1, 16, 16}, 0, 1, rng);
    Tensor yb = Tensor::from_data({2, 2}, {1, 0, 0, 1});

    int calls = 0;
    std::vector<std::vector<double>> w0;
    double norm_at_second = -1.0;
    optim::Sam sam{optim::SamConfig{}};
    auto closure = [&]() {
      ++calls;
      if (calls == 1) {
        for (auto& p : model.params())
          if (p.trainable) w0.push_back(p.value.to_vector());
      } else if (calls == 2) {
        double acc = 0.0;
        size_t k = 0;
        for (auto& p : model.params()) {
          if (!p.trainable) continue;
          const auto now = p.value.to_vector();
          for (size_t i = 0; i < now.size(); ++i) {
            const double d = now[i] - w0[k][i];
            acc += d * d;
          }
          ++k;
        }
        norm_at_second = std::sqrt(acc);
      }
      for (auto& p : model.params())
        if (p.trainable) p.value.zero_grad();
      Tensor loss = cross_entropy(model.forward(xb, false, nullptr).logits, yb);
      backward(loss);
      return loss.value();
    };
    sam.step(model.params(), closure);
    if (calls != 2) {
      pass = false;
      notes += " sam-closure-count";
    }
    if (std::abs(norm_at_second - 0.05) > 1e-9) {
      pass = false;
      notes += " sam-perturbation-norm";
    }
  }

  // Frozen tensors bitwise unchanged after 10 steps at every setting.
  for (size_t unfrozen : {0u, 2u, 6u, 12u}) {
    vit::ViTModel model = vit::ViTModel::init_parameters(mc, 11 + unfrozen);
    model.set_trainable(unfrozen);
    std::vector<std::vector<double>> before;
    for (const auto& p : model.params())
      before.push_back(p.trainable ? std::vector<double>{} : p.value.to_vector());

    Prng rng(23 + unfrozen);
    optim::AdamConfig acfg;
    acfg.lr = 1e-3;
    optim::Adam adam(acfg);
    for (int step = 0; step < 10; ++step) {
      Tensor xb = Tensor::uniform({4, 1, 16, 16}, 0, 1, rng);
      std::vector<double> labels(8, 0.0);
      for (size_t b = 0; b < 4; ++b) labels[b * 2 + rng.below(2)] = 1.0;
      Tensor yb = Tensor::from_data({4, 2}, labels);
      for (auto& p : model.params())
        if (p.trainable) p.value.zero_grad();
      Prng drop(1000 + step);
      backward(cross_entropy(model.forward(xb, true, &drop).logits, yb));
      adam.step(model.params());
    }
    for (size_t i = 0; i < model.params().size(); ++i) {
      if (model.params()[i].trainable) continue;
      if (model.params()[i].value.to_vector() != before[i]) {
        pass = false;
        notes += " frozen-moved-at-n" + std::to_string(unfrozen);
        break;
      }
    }
  }

  report(5, "optimizer-contracts", pass,
         pass ? "adam identity, sam norm/closures, frozen tensors intact"
              : "violations:" + notes);
}

// ---------------------------------------------------------------------- 6

void criterion_metrics() {
  Prng rng(2024);
  size_t instances = 0, f1_bad = 0, auc_bad = 0;
  while (instances < 200) {
    const size_t n = 2 + rng.below(11);
    std::vector<int> truth(n), pred(n);
    std::vector<double> scores(n);
    bool pos = false, neg = false;
    for (size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng.below(2));
      pred[i] = static_cast<int>(rng.below(2));
      scores[i] = static_cast<double>(rng.below(5)) / 4.0;
      pos = pos || truth[i] == 1;
      neg = neg || truth[i] == 0;
    }
    if (!pos || !neg) continue;
    ++instances;

    long tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < n; ++i) {
      if (pred[i] == 1 && truth[i] == 1) ++tp;
      if (pred[i] == 1 && truth[i] == 0) ++fp;
      if (pred[i] == 0 && truth[i] == 1) ++fn;
    }
    const double expect_f1 =
        (2 * tp + fp + fn) > 0 ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn) : 0.0;
    if (metrics::f1_minority(pred, truth).f1 != expect_f1) ++f1_bad;

    double wins = 0.0;
    size_t pairs = 0;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j) {
        if (truth[i] != 1 || truth[j] != 0) continue;
        ++pairs;
        if (scores[i] > scores[j]) wins += 1.0;
        else if (scores[i] == scores[j]) wins += 0.5;
      }
    if (metrics::auc(scores, truth) != wins / static_cast<double>(pairs)) ++auc_bad;
  }
  const double tie = metrics::auc({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0});
  const bool pass = f1_bad == 0 && auc_bad == 0 && tie == 0.5;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "%zu instances, f1 mismatches %zu, auc mismatches %zu, tie auc %.3f",
                instances, f1_bad, auc_bad, tie);
  report(6, "metric-oracles", pass, detail);
}

// ---------------------------------------------------------------------- 7

void criterion_folds() {
  // 25-subject synthetic corpus -> 5 folds of exactly 5, subject-disjoint.
  data::SyntheticParams sp;
  sp.num_subjects = 25;
  sp.videos_per_subject = 1;
  sp.frames_per_video = 8;
  sp.image_size = 8;
  sp.seed = 77;
  data::Corpus corpus = data::gen_synthetic(sp);
  data::FoldAssignment fa = data::make_folds(corpus.subject_pain_counts(), 5, 1);
  bool disjoint_ok = fa.num_folds == 5;
  std::set<std::string> seen;
  for (const auto& fold : fa.members()) {
    disjoint_ok = disjoint_ok && fold.size() == 5;
    for (const auto& s : fold) disjoint_ok = disjoint_ok && seen.insert(s).second;
  }
  disjoint_ok = disjoint_ok && seen.size() == 25;

  // 10-subject/2-fold instances vs the exhaustive balanced-partition optimum.
  Prng rng(4242);
  size_t violations = 0;
  double worst_ratio = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<long> counts(10);
    std::vector<std::pair<std::string, long>> subjects;
    for (size_t i = 0; i < 10; ++i) {
      counts[i] = static_cast<long>(rng.below(51));
      subjects.emplace_back("s" + std::to_string(i), counts[i]);
    }
    data::FoldAssignment two = data::make_folds(subjects, 2, 1000 + trial);
    long totals[2] = {0, 0};
    for (size_t i = 0; i < 10; ++i) totals[two.fold(subjects[i].first)] += counts[i];
    const long spread = std::labs(totals[0] - totals[1]);

    long best = LONG_MAX;
    for (unsigned mask = 0; mask < (1u << 10); ++mask) {
      if (__builtin_popcount(mask) != 5) continue;
      long a = 0;
      for (size_t i = 0; i < 10; ++i)
        if ((mask >> i) & 1u) a += counts[i];
      long total = 0;
      for (long c : counts) total += c;
      best = std::min(best, std::labs(total - 2 * a));
    }
    if (static_cast<double>(spread) > 1.5 * static_cast<double>(best)) ++violations;
    if (best > 0)
      worst_ratio = std::max(worst_ratio, static_cast<double>(spread) / best);
    else if (spread > 0)
      worst_ratio = std::max(worst_ratio, 1e9);
  }
  const bool pass = disjoint_ok && violations == 0;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "5x5 disjoint=%s, 200 instances, violations %zu, worst ratio %.2f",
                disjoint_ok ? "yes" : "no", violations, worst_ratio);
  report(7, "fold-splitter", pass, detail);
}

// ---------------------------------------------------------------------- 8

void criterion_rollout() {
  // Hand-built 3-token, 2-layer stack vs the explicit matrix product.
  const std::vector<double> a1{0.7, 0.2, 0.1, 0.1, 0.6, 0.3, 0.3, 0.3, 0.4};
  const std::vector<double> a2{0.2, 0.5, 0.3, 0.4, 0.4, 0.2, 0.1, 0.1, 0.8};
  interpret::AttentionStack stack;
  stack.layers.push_back(Tensor::from_data({1, 3, 3}, a1));
  stack.layers.push_back(Tensor::from_data({1, 3, 3}, a2));

  auto hat = [](const std::vector<double>& a) {
    std::vector<double> h(9);
    for (size_t i = 0; i < 3; ++i) {
      double row = 0;
      for (size_t j = 0; j < 3; ++j) {
        h[i * 3 + j] = 0.5 * a[i * 3 + j] + (i == j ? 0.5 : 0.0);
        row += h[i * 3 + j];
      }
      for (size_t j = 0; j < 3; ++j) h[i * 3 + j] /= row;
    }
    return h;
  };
  const auto h1 = hat(a1);
  const auto h2 = hat(a2);
  std::vector<double> prod(9, 0.0);
  for (size_t i = 0; i < 3; ++i)
    for (size_t j = 0; j < 3; ++j)
      for (size_t k = 0; k < 3; ++k) prod[i * 3 + j] += h2[i * 3 + k] * h1[k * 3 + j];
  double expect0 = prod[1], expect1 = prod[2];
  const double mx = std::max(expect0, expect1);
  expect0 /= mx;
  expect1 /= mx;

  interpret::SaliencyMap m = interpret::rollout(stack, interpret::Fusion::max);
  const double err =
      std::max(std::abs(m.values[0] - expect0), std::abs(m.values[1] - expect1));

  // Identity stack: all-zero patch map.
  Tensor id = Tensor::zeros({2, 10, 10});
  for (size_t h = 0; h < 2; ++h)
    for (size_t t = 0; t < 10; ++t) id.set_item((h * 10 + t) * 10 + t, 1.0);
  interpret::AttentionStack idstack;
  idstack.layers.push_back(id);
  idstack.layers.push_back(id.detach());
  interpret::SaliencyMap zero = interpret::rollout(idstack, interpret::Fusion::max);
  double zmax = 0.0;
  for (double v : zero.values) zmax = std::max(zmax, std::abs(v));

  const bool pass = err < 1e-9 && zmax == 0.0;
  char detail[160];
  std::snprintf(detail, sizeof detail, "matrix-product err %.2e, identity map max %.1e",
                err, zmax);
  report(8, "rollout-oracle", pass, detail);
}

// ------------------------------------------------------------------- 9+10

harness::ExperimentConfig reference_config(double signal, uint64_t seed) {
  harness::ExperimentConfig cfg;
  cfg.model_kind = harness::ModelKind::vit;
  cfg.preset = "tiny";
  cfg.dtype = "f32";
  cfg.unfrozen_attention_layers = 4;
  cfg.learning_rate = 2e-4;
  cfg.batch_size = 16;
  cfg.epochs = 3;
  cfg.seed = seed;
  cfg.synthetic.num_subjects = 10;
  cfg.synthetic.videos_per_subject = 10;
  cfg.synthetic.frames_per_video = 30;
  cfg.synthetic.signal_strength = signal;
  cfg.synthetic.image_size = 32;
  cfg.synthetic.seed = seed;
  cfg.synthetic_seed_set = true;
  return cfg;
}

void criteria_learnability_and_interpretability() {
  const auto t0 = std::chrono::steady_clock::now();

  // Strong-signal run: tiny preset, 10 subjects, signal 1.0, seed 42.
  harness::ExperimentConfig cfg = reference_config(1.0, 42);
  data::Corpus corpus = harness::load_corpus(cfg);
  data::FoldAssignment folds =
      data::make_folds(corpus.subject_pain_counts(), cfg.num_folds, cfg.seed);
  harness::TrainFoldResult strong = harness::train_fold(cfg, corpus, folds, 0, "acc9");
  const double strong_f1 = strong.fold.f1;

  // Null-signal baseline over 10 seeds; seeds are independent runs, so
  // they share the worker pool.
  std::vector<double> null_f1(10, 0.0), null_baseline(10, 0.0);
  {
    std::atomic<size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= 10) return;
        const uint64_t seed = 42 + i;
        harness::ExperimentConfig null_cfg = reference_config(0.0, seed);
        data::Corpus null_corpus = harness::load_corpus(null_cfg);
        data::FoldAssignment null_folds = data::make_folds(
            null_corpus.subject_pain_counts(), null_cfg.num_folds, null_cfg.seed);
        harness::TrainFoldResult r =
            harness::train_fold(null_cfg, null_corpus, null_folds, 0, "acc9-null");
        null_f1[i] = r.fold.f1;
        // Prevalence-matched coin flip: predicting positive at rate q on a
        // test fold with prevalence q gives F1 = q in expectation.
        long pos = 0, n = 0;
        for (const auto& s : null_corpus.samples)
          if (null_folds.fold(s.subject_id) == 0) {
            pos += s.label;
            ++n;
          }
        null_baseline[i] = static_cast<double>(pos) / static_cast<double>(n);
      }
    };
    const size_t nthreads = std::max<unsigned>(1, std::thread::hardware_concurrency());
    std::vector<std::thread> pool;
    for (size_t t = 0; t < std::min<size_t>(nthreads, 10); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  double null_mean = 0.0, baseline_mean = 0.0;
  for (size_t i = 0; i < 10; ++i) {
    null_mean += null_f1[i] / 10.0;
    baseline_mean += null_baseline[i] / 10.0;
  }
  const double secs = elapsed_s(t0);

  const bool pass9 = strong_f1 >= 0.8 && std::abs(null_mean - baseline_mean) <= 0.1 &&
                     secs < 900.0;
  char detail[200];
  std::snprintf(detail, sizeof detail,
                "signal-1.0 F1 %.3f, null mean F1 %.3f vs baseline %.3f, %.0fs",
                strong_f1, null_mean, baseline_mean, secs);
  report(9, "end-to-end-learnability", pass9, detail);

  // Criterion 10: rollout mass concentrated on the planted AU regions for
  // correctly classified pain samples of the strong run.
  const vit::ModelConfig mc = cfg.model_config();
  Tensor mask = data::au_region_mask(mc.image_size);
  const size_t grid = mc.image_size / mc.patch_size;
  std::vector<double> patch_overlap(grid * grid, 0.0);
  for (size_t py = 0; py < grid; ++py)
    for (size_t px = 0; px < grid; ++px) {
      double acc = 0;
      for (size_t y = 0; y < mc.patch_size; ++y)
        for (size_t x = 0; x < mc.patch_size; ++x)
          acc += mask.item((py * mc.patch_size + y) * mc.image_size + px * mc.patch_size + x);
      patch_overlap[py * grid + px] =
          acc / static_cast<double>(mc.patch_size * mc.patch_size);
    }
  double uniform_mass = 0.0;
  for (double o : patch_overlap) uniform_mass += o / static_cast<double>(grid * grid);

  double ratio_sum = 0.0;
  size_t evaluated = 0;
  {
    NoGradGuard ng;
    for (const auto& s : corpus.samples) {
      if (folds.fold(s.subject_id) != 0 || s.label != 1) continue;
      Tensor xb = Tensor::zeros({1, 1, mc.image_size, mc.image_size}, mc.dtype);
      const auto vals = s.image.to_vector();
      for (size_t i = 0; i < vals.size(); ++i) xb.set_item(i, vals[i]);
      vit::ForwardOutput fwd = strong.model.forward(xb, false, nullptr);
      vit::Prediction pred = vit::predict(fwd.logits);
      if (pred.labels[0] != 1) continue;  // only correctly classified pain
      interpret::SaliencyMap m =
          interpret::rollout(interpret::stack_for_sample(fwd.attentions, 0));
      double total = 0.0;
      for (double v : m.values) total += v;
      if (total == 0.0) continue;
      double mass = 0.0;
      for (size_t p = 0; p < m.values.size(); ++p)
        mass += m.values[p] / total * patch_overlap[p];
      ratio_sum += mass / uniform_mass;
      ++evaluated;
    }
  }
  const double mean_ratio = evaluated > 0 ? ratio_sum / static_cast<double>(evaluated) : 0.0;
  const bool pass10 = evaluated > 0 && mean_ratio >= 2.0;
  std::snprintf(detail, sizeof detail,
                "%zu correctly classified pain samples, mean AU-region mass ratio %.2fx",
                evaluated, mean_ratio);
  report(10, "interpretability-signal", pass10, detail);
}

// --------------------------------------------------------------------- 11

void criterion_sweep_reproducibility() {
  const std::string dir = make_temp_dir("sweep");
  const std::string cfg_path = dir + "/sweep_config.json";
  {
    std::ofstream out(cfg_path);
    out << R"({
  "model_kind": "vit",
  "preset": "tiny",
  "model": {"image_size": 8, "patch_size": 4, "hidden_dim": 32, "num_layers": 12,
            "num_heads": 4, "mlp_dim": 64},
  "dtype": "f32",
  "batch_size": 16,
  "epochs": 1,
  "seed": 42,
  "grid_stride": 1,
  "data": {"synthetic": {"num_subjects": 5, "videos_per_subject": 1,
                         "frames_per_video": 12, "image_size": 8, "seed": 7}}
})";
  }

  const std::string out1 = dir + "/run1";
  const std::string out2 = dir + "/run2";
  const int rc1 = harness::run_cli({"sweep", "--config", cfg_path, "--out", out1});
  const int rc2 = harness::run_cli({"sweep", "--config", cfg_path, "--out", out2});

  auto read_rows = [](const std::string& path) {
    std::ifstream in(path);
    std::vector<std::string> rows;
    std::string line;
    while (std::getline(in, line)) rows.push_back(line);
    return rows;
  };
  auto strip_seconds = [](std::vector<std::string> rows) {
    for (auto& r : rows) r = r.substr(0, r.rfind(','));
    return rows;
  };
  const auto rows1 = read_rows(out1 + "/sweep.csv");
  const auto rows2 = read_rows(out2 + "/sweep.csv");

  std::set<std::string> vit_configs, vivit_configs;
  for (size_t i = 1; i < rows1.size(); ++i) {
    const std::string id = rows1[i].substr(0, rows1[i].find(','));
    if (id.rfind("vivit-", 0) == 0) vivit_configs.insert(id);
    else if (id.rfind("vit-", 0) == 0) vit_configs.insert(id);
  }
  const bool counts_ok = vit_configs.size() == 14 && vivit_configs.size() == 14 &&
                         rows1.size() == 1 + 14 * 5 * 2;
  const bool bytes_ok = strip_seconds(rows1) == strip_seconds(rows2);
  const bool pass = rc1 == 0 && rc2 == 0 && counts_ok && bytes_ok;
  char detail[200];
  std::snprintf(detail, sizeof detail,
                "%zu vit + %zu vivit configurations, %zu rows, byte-identical=%s",
                vit_configs.size(), vivit_configs.size(),
                rows1.empty() ? 0 : rows1.size() - 1, bytes_ok ? "yes" : "no");
  report(11, "harness-reproducibility", pass, detail);
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by number, e.g. "9 10".
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto want = [&](int n) { return only.empty() || only.count(n) > 0; };

  const auto t0 = std::chrono::steady_clock::now();
  if (want(1)) criterion_pspi();
  if (want(2)) criterion_mixup_example();
  if (want(3)) criterion_architecture();
  if (want(4)) criterion_gradcheck();
  if (want(5)) criterion_optimizers();
  if (want(6)) criterion_metrics();
  if (want(7)) criterion_folds();
  if (want(8)) criterion_rollout();
  if (want(9) || want(10)) criteria_learnability_and_interpretability();
  if (want(11)) criterion_sweep_reproducibility();
  std::printf("%d criteria failed (total %.0fs)\n", g_failures, elapsed_s(t0));
  return g_failures == 0 ? 0 : 1;
}

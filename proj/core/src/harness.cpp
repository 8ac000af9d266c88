#include "attnpain/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace attnpain::harness {

using nlohmann::json;

const char* model_kind_name(ModelKind k) { return k == ModelKind::vit ? "vit" : "vivit"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "vit") return ModelKind::vit;
  if (s == "vivit") return ModelKind::vivit;
  throw ValidationError("model_kind must be 'vit' or 'vivit', got '" + s + "'");
}

// ------------------------------------------------------------ JSON config

namespace {

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& ctx) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw ValidationError(ctx + ": unknown key '" + it.key() + "'");
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str(), path);
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text,
                                                  const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(origin + ": invalid JSON: " + e.what());
  }
  ExperimentConfig cfg;
  try {
    check_keys(j,
               {"model_kind", "preset", "model", "dtype", "unfrozen_attention_layers",
                "learning_rate", "use_sam", "mixup_alpha", "mixup_fraction", "batch_size",
                "epochs", "head_dropout", "seed", "num_folds", "test_fold", "grid_stride",
                "data", "sweep"},
               origin);
    if (j.contains("model_kind"))
      cfg.model_kind = model_kind_from_string(j.at("model_kind").get<std::string>());
    if (j.contains("preset")) cfg.preset = j.at("preset").get<std::string>();
    if (j.contains("model")) {
      const json& m = j.at("model");
      check_keys(m,
                 {"image_size", "patch_size", "channels", "hidden_dim", "num_layers",
                  "num_heads", "mlp_dim"},
                 origin + ": model");
      if (m.contains("image_size")) cfg.image_size = m.at("image_size").get<size_t>();
      if (m.contains("patch_size")) cfg.patch_size = m.at("patch_size").get<size_t>();
      if (m.contains("channels")) cfg.channels = m.at("channels").get<size_t>();
      if (m.contains("hidden_dim")) cfg.hidden_dim = m.at("hidden_dim").get<size_t>();
      if (m.contains("num_layers")) cfg.num_layers = m.at("num_layers").get<size_t>();
      if (m.contains("num_heads")) cfg.num_heads = m.at("num_heads").get<size_t>();
      if (m.contains("mlp_dim")) cfg.mlp_dim = m.at("mlp_dim").get<size_t>();
    }
    if (j.contains("dtype")) cfg.dtype = j.at("dtype").get<std::string>();
    if (j.contains("unfrozen_attention_layers"))
      cfg.unfrozen_attention_layers = j.at("unfrozen_attention_layers").get<size_t>();
    if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("use_sam")) cfg.use_sam = j.at("use_sam").get<bool>();
    if (j.contains("mixup_alpha") && !j.at("mixup_alpha").is_null())
      cfg.mixup_alpha = j.at("mixup_alpha").get<double>();
    if (j.contains("mixup_fraction")) cfg.mixup_fraction = j.at("mixup_fraction").get<double>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<size_t>();
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<size_t>();
    if (j.contains("head_dropout")) cfg.head_dropout = j.at("head_dropout").get<double>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
    if (j.contains("num_folds")) cfg.num_folds = j.at("num_folds").get<int>();
    if (j.contains("test_fold")) cfg.test_fold = j.at("test_fold").get<int>();
    if (j.contains("grid_stride")) cfg.grid_stride = j.at("grid_stride").get<size_t>();
    if (j.contains("data")) {
      const json& d = j.at("data");
      check_keys(d, {"manifest", "synthetic"}, origin + ": data");
      if (d.contains("manifest") && d.contains("synthetic"))
        throw ValidationError(origin + ": data: give either manifest or synthetic, not both");
      if (d.contains("manifest")) cfg.manifest_path = d.at("manifest").get<std::string>();
      if (d.contains("synthetic")) {
        const json& s = d.at("synthetic");
        check_keys(s,
                   {"num_subjects", "videos_per_subject", "frames_per_video",
                    "signal_strength", "image_size", "seed"},
                   origin + ": data.synthetic");
        if (s.contains("num_subjects"))
          cfg.synthetic.num_subjects = s.at("num_subjects").get<size_t>();
        if (s.contains("videos_per_subject"))
          cfg.synthetic.videos_per_subject = s.at("videos_per_subject").get<size_t>();
        if (s.contains("frames_per_video"))
          cfg.synthetic.frames_per_video = s.at("frames_per_video").get<size_t>();
        if (s.contains("signal_strength"))
          cfg.synthetic.signal_strength = s.at("signal_strength").get<double>();
        if (s.contains("image_size")) cfg.synthetic.image_size = s.at("image_size").get<size_t>();
        if (s.contains("seed")) {
          cfg.synthetic.seed = s.at("seed").get<uint64_t>();
          cfg.synthetic_seed_set = true;
        }
      }
    }
    if (j.contains("sweep")) {
      const json& s = j.at("sweep");
      check_keys(s, {"layers", "learning_rates", "mixup_alphas"}, origin + ": sweep");
      if (s.contains("layers")) cfg.sweep_layers = s.at("layers").get<std::vector<size_t>>();
      if (s.contains("learning_rates"))
        cfg.sweep_learning_rates = s.at("learning_rates").get<std::vector<double>>();
      if (s.contains("mixup_alphas"))
        cfg.sweep_mixup_alphas = s.at("mixup_alphas").get<std::vector<double>>();
    }
  } catch (const json::exception& e) {
    throw ValidationError(origin + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

vit::ModelConfig ExperimentConfig::model_config() const {
  vit::ModelConfig mc;
  if (preset == "paper") {
    mc = vit::ModelConfig::paper_preset();
  } else if (preset == "tiny") {
    mc = vit::ModelConfig::tiny_preset();
  } else {
    throw ValidationError("preset must be 'tiny' or 'paper', got '" + preset + "'");
  }
  if (image_size) mc.image_size = image_size;
  if (patch_size) mc.patch_size = patch_size;
  if (channels) mc.channels = channels;
  if (hidden_dim) mc.hidden_dim = hidden_dim;
  if (num_layers) mc.num_layers = num_layers;
  if (num_heads) mc.num_heads = num_heads;
  if (mlp_dim) mc.mlp_dim = mlp_dim;
  mc.head_dropout = head_dropout;
  if (dtype == "f32")
    mc.dtype = DType::f32;
  else if (dtype == "f64")
    mc.dtype = DType::f64;
  else
    throw ValidationError("dtype must be 'f32' or 'f64', got '" + dtype + "'");
  mc.validate();
  return mc;
}

void ExperimentConfig::validate() const {
  vit::ModelConfig mc = model_config();
  if (unfrozen_attention_layers > mc.num_layers)
    throw ValidationError("unfrozen_attention_layers " +
                          std::to_string(unfrozen_attention_layers) + " exceeds " +
                          std::to_string(mc.num_layers) + " layers");
  if (learning_rate <= 0.0) throw ValidationError("learning_rate must be positive");
  if (mixup_alpha && *mixup_alpha <= 0.0)
    throw ValidationError("mixup_alpha must be positive");
  if (mixup_fraction < 0.0 || mixup_fraction > 1.0)
    throw ValidationError("mixup_fraction must lie in [0, 1]");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (epochs == 0) throw ValidationError("epochs must be positive");
  if (num_folds < 2) throw ValidationError("num_folds must be at least 2");
  if (test_fold < 0 || test_fold >= num_folds)
    throw ValidationError("test_fold out of range");
  if (grid_stride == 0) throw ValidationError("grid_stride must be positive");
}

data::Corpus load_corpus(const ExperimentConfig& cfg) {
  const vit::ModelConfig mc = cfg.model_config();
  data::Corpus corpus;
  if (!cfg.manifest_path.empty()) {
    corpus = data::load_manifest(cfg.manifest_path);
  } else {
    data::SyntheticParams p = cfg.synthetic;
    if (!cfg.synthetic_seed_set) p.seed = cfg.seed;
    if (p.image_size == 0) p.image_size = mc.image_size;
    corpus = data::gen_synthetic(p);
  }
  if (corpus.channels != mc.channels || corpus.height != mc.image_size ||
      corpus.width != mc.image_size)
    throw ValidationError(
        "corpus frames " + shape_str({corpus.channels, corpus.height, corpus.width}) +
        " do not match model input [" + std::to_string(mc.channels) + "x" +
        std::to_string(mc.image_size) + "x" + std::to_string(mc.image_size) + "]");
  return corpus;
}

// ------------------------------------------------------------- train_fold

namespace {

struct TrainItem {
  Tensor image;  // shared handle into the corpus, never mutated
  int label = 0;
  std::string subject_id;
};

std::vector<TrainItem> corpus_items(const ExperimentConfig& cfg, const data::Corpus& corpus) {
  std::vector<TrainItem> items;
  if (cfg.model_kind == ModelKind::vit) {
    items.reserve(corpus.samples.size());
    for (const auto& s : corpus.samples) items.push_back({s.image, s.label, s.subject_id});
  } else {
    for (auto& g : data::make_grids(corpus, cfg.grid_stride))
      items.push_back({g.image, g.label, g.subject_id});
    if (items.empty())
      throw ValidationError("vivit: no 2x2 grids, videos are shorter than 4 frames");
  }
  return items;
}

Tensor batch_images(const std::vector<const TrainItem*>& items, const vit::ModelConfig& mc) {
  const size_t B = items.size();
  Tensor xb = Tensor::zeros({B, mc.channels, mc.image_size, mc.image_size}, mc.dtype);
  for (size_t b = 0; b < B; ++b) {
    const auto vals = items[b]->image.to_vector();
    const size_t n = vals.size();
    for (size_t i = 0; i < n; ++i) xb.set_item(b * n + i, vals[i]);
  }
  return xb;
}

Tensor batch_mix_images(const std::vector<const data::MixSample*>& items,
                        const vit::ModelConfig& mc) {
  const size_t B = items.size();
  Tensor xb = Tensor::zeros({B, mc.channels, mc.image_size, mc.image_size}, mc.dtype);
  for (size_t b = 0; b < B; ++b) {
    const auto vals = items[b]->image.to_vector();
    const size_t n = vals.size();
    for (size_t i = 0; i < n; ++i) xb.set_item(b * n + i, vals[i]);
  }
  return xb;
}

}  // namespace

TrainFoldResult train_fold(const ExperimentConfig& cfg, const data::Corpus& corpus,
                           const data::FoldAssignment& folds, int test_fold,
                           const std::string& config_id) {
  cfg.validate();
  if (test_fold < 0 || test_fold >= folds.num_folds)
    throw ValidationError("train_fold: test_fold out of range");
  const auto t_start = std::chrono::steady_clock::now();
  const vit::ModelConfig mc = cfg.model_config();
  const std::vector<TrainItem> items = corpus_items(cfg, corpus);

  std::vector<size_t> train_idx, test_idx;
  std::set<std::string> train_subjects, test_subjects;
  for (size_t i = 0; i < items.size(); ++i) {
    if (folds.fold(items[i].subject_id) == test_fold) {
      test_idx.push_back(i);
      test_subjects.insert(items[i].subject_id);
    } else {
      train_idx.push_back(i);
      train_subjects.insert(items[i].subject_id);
    }
  }
  if (test_idx.empty()) throw ValidationError("train_fold: test fold has no samples");
  if (train_idx.empty()) throw ValidationError("train_fold: training split is empty");

  Prng root = Prng(cfg.seed).split(config_id).split(static_cast<uint64_t>(test_fold));

  TrainFoldResult out;
  out.model = vit::ViTModel::init_parameters(mc, root.split("model-init").seed());
  out.model.set_trainable(cfg.unfrozen_attention_layers);

  std::vector<int> train_labels(train_idx.size());
  for (size_t i = 0; i < train_idx.size(); ++i) train_labels[i] = items[train_idx[i]].label;
  const std::vector<size_t> resampled =
      data::oversample(train_idx, train_labels, root.split("oversample").seed());

  optim::AdamConfig acfg;
  acfg.lr = cfg.learning_rate;
  optim::Adam adam(acfg);
  optim::SamConfig scfg;
  scfg.adam = acfg;
  optim::Sam sam(scfg);

  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // No test subject may ever contribute a gradient.
    for (const auto& s : train_subjects)
      if (test_subjects.count(s))
        throw std::logic_error("train_fold: subject " + s + " leaks across the split");

    Prng epoch_rng = root.split("epoch").split(epoch);
    std::vector<size_t> order = resampled;
    {
      Prng shuffle_rng = epoch_rng.split("shuffle");
      shuffle_rng.shuffle(order);
    }

    std::vector<data::MixSample> epoch_items(order.size());
    for (size_t i = 0; i < order.size(); ++i) {
      const TrainItem& it = items[order[i]];
      epoch_items[i].image = it.image;
      epoch_items[i].label = it.label == 1 ? std::array<double, 2>{0.0, 1.0}
                                           : std::array<double, 2>{1.0, 0.0};
      epoch_items[i].subject_id = it.subject_id;
    }
    if (cfg.mixup_alpha)
      epoch_items = data::mixup(epoch_items, *cfg.mixup_alpha, cfg.mixup_fraction,
                                /*same_subject=*/true, epoch_rng.split("mixup").seed());

    Prng dropout_rng = epoch_rng.split("dropout");
    for (size_t start = 0; start < epoch_items.size(); start += cfg.batch_size) {
      const size_t stop = std::min(epoch_items.size(), start + cfg.batch_size);
      std::vector<const data::MixSample*> chunk;
      for (size_t i = start; i < stop; ++i) chunk.push_back(&epoch_items[i]);
      Tensor xb = batch_mix_images(chunk, mc);
      Tensor yb = Tensor::zeros({chunk.size(), 2}, mc.dtype);
      for (size_t b = 0; b < chunk.size(); ++b) {
        yb.set_item(b * 2, chunk[b]->label[0]);
        yb.set_item(b * 2 + 1, chunk[b]->label[1]);
      }

      auto closure = [&]() {
        for (auto& p : out.model.params())
          if (p.trainable) p.value.zero_grad();
        vit::ForwardOutput fwd = out.model.forward(xb, /*training=*/true, &dropout_rng);
        Tensor loss = cross_entropy(fwd.logits, yb);
        backward(loss);
        ++out.closure_calls;
        return loss.value();
      };

      if (cfg.use_sam) {
        out.final_train_loss = sam.step(out.model.params(), closure);
      } else {
        out.final_train_loss = closure();
        adam.step(out.model.params());
      }
      ++out.steps;
    }
  }

  out.fold = evaluate_fold(out.model, cfg, corpus, folds, test_fold);
  out.train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

metrics::FoldResult evaluate_fold(const vit::ViTModel& model, const ExperimentConfig& cfg,
                                  const data::Corpus& corpus,
                                  const data::FoldAssignment& folds, int test_fold) {
  const vit::ModelConfig& mc = model.config();
  const std::vector<TrainItem> items = corpus_items(cfg, corpus);
  std::vector<const TrainItem*> test_items;
  for (const auto& item : items)
    if (folds.fold(item.subject_id) == test_fold) test_items.push_back(&item);
  if (test_items.empty()) throw ValidationError("evaluate_fold: test fold has no samples");

  std::vector<int> pred, truth;
  std::vector<double> probs;
  NoGradGuard ng;
  for (size_t start = 0; start < test_items.size(); start += cfg.batch_size) {
    const size_t stop = std::min(test_items.size(), start + cfg.batch_size);
    std::vector<const TrainItem*> chunk(test_items.begin() + start, test_items.begin() + stop);
    Tensor xb = batch_images(chunk, mc);
    vit::ForwardOutput fwd = model.forward(xb, /*training=*/false, nullptr);
    vit::Prediction p = vit::predict(fwd.logits);
    for (size_t b = 0; b < chunk.size(); ++b) {
      pred.push_back(p.labels[b]);
      probs.push_back(p.pain_probability[b]);
      truth.push_back(chunk[b]->label);
    }
  }

  metrics::FoldResult fold = metrics::f1_minority(pred, truth);
  fold.fold_index = test_fold;
  try {
    fold.auc = metrics::auc(probs, truth);
    fold.auc_defined = true;
  } catch (const ValidationError& e) {
    fold.auc = std::nan("");
    fold.auc_defined = false;
    fold.error = e.what();
  }
  return fold;
}

// -------------------------------------------------------------- run_sweep

namespace {

size_t fold_worker_cap() {
  if (const char* env = std::getenv("ATTN_PAIN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw ValidationError(std::string("ATTN_PAIN_THREADS: invalid value '") + env + "'");
    return static_cast<size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

std::vector<SweepRow> run_config_folds(const ExperimentConfig& cfg, const data::Corpus& corpus,
                                       const data::FoldAssignment& folds,
                                       const std::string& config_id) {
  std::vector<SweepRow> rows(static_cast<size_t>(cfg.num_folds));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int f = next.fetch_add(1);
      if (f >= cfg.num_folds) return;
      SweepRow row;
      row.config_id = config_id;
      row.model_kind = cfg.model_kind;
      row.unfrozen_layers = cfg.unfrozen_attention_layers;
      row.lr = cfg.learning_rate;
      row.sam = cfg.use_sam;
      row.mixup_alpha = cfg.mixup_alpha;
      row.fold = f;
      try {
        TrainFoldResult r = train_fold(cfg, corpus, folds, f, config_id);
        row.result = r.fold;
        row.train_seconds = r.train_seconds;
        row.error = r.fold.error;
      } catch (const std::exception& e) {
        row.error = e.what();
        row.result.f1 = std::nan("");
        row.result.auc = std::nan("");
        row.result.precision = std::nan("");
        row.result.recall = std::nan("");
        row.result.auc_defined = false;
      }
      rows[static_cast<size_t>(f)] = std::move(row);
    }
  };
  const size_t nthreads =
      std::min<size_t>(fold_worker_cap(), static_cast<size_t>(cfg.num_folds));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rows;
}

double mean_f1(const std::vector<SweepRow>& rows) {
  double sum = 0.0;
  size_t n = 0;
  for (const auto& r : rows) {
    if (!r.error.empty() && std::isnan(r.result.f1)) continue;
    sum += r.result.f1;
    ++n;
  }
  return n > 0 ? sum / static_cast<double>(n) : -1.0;
}

}  // namespace

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const data::Corpus& corpus) {
  const vit::ModelConfig mc = base.model_config();
  for (size_t L : base.sweep_layers)
    if (L > mc.num_layers)
      throw ValidationError("sweep: layer value " + std::to_string(L) + " exceeds model's " +
                            std::to_string(mc.num_layers) + " layers");
  const double default_lr = base.learning_rate;

  const data::FoldAssignment folds =
      data::make_folds(corpus.subject_pain_counts(), base.num_folds, base.seed);

  std::vector<SweepRow> all_rows;
  for (ModelKind kind : {ModelKind::vit, ModelKind::vivit}) {
    int config_seq = 0;
    auto run_one = [&](size_t layers, double lr, bool use_sam,
                       std::optional<double> alpha) {
      ExperimentConfig cfg = base;
      cfg.model_kind = kind;
      cfg.unfrozen_attention_layers = layers;
      cfg.learning_rate = lr;
      cfg.use_sam = use_sam;
      cfg.mixup_alpha = alpha;
      char id[32];
      std::snprintf(id, sizeof id, "%s-%02d", model_kind_name(kind), config_seq++);
      std::vector<SweepRow> rows = run_config_folds(cfg, corpus, folds, id);
      for (const auto& r : rows) all_rows.push_back(r);
      return mean_f1(rows);
    };

    // Stage 1: unfrozen attention layers at the default learning rate.
    size_t best_layers = base.sweep_layers.front();
    double best_f1 = -2.0;
    for (size_t L : base.sweep_layers) {
      const double f1 = run_one(L, default_lr, false, std::nullopt);
      if (f1 > best_f1) {
        best_f1 = f1;
        best_layers = L;
      }
    }

    // Stage 2: learning rate, inheriting the stage-1 winner. The default
    // rate was already measured in stage 1 and stays the candidate to beat.
    double best_lr = default_lr;
    for (double lr : base.sweep_learning_rates) {
      if (lr == default_lr) continue;
      const double f1 = run_one(best_layers, lr, false, std::nullopt);
      if (f1 > best_f1) {
        best_f1 = f1;
        best_lr = lr;
      }
    }

    // Stage 3: SAM on/off.
    bool best_sam = false;
    {
      const double f1 = run_one(best_layers, best_lr, true, std::nullopt);
      if (f1 > best_f1) {
        best_f1 = f1;
        best_sam = true;
      }
    }

    // Stage 4: mixup alphas.
    for (double alpha : base.sweep_mixup_alphas)
      run_one(best_layers, best_lr, best_sam, alpha);
  }
  return all_rows;
}

// -------------------------------------------------------------- CSV output

namespace {

std::string fmt_metric(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string sweep_csv_text(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "config_id,model_kind,unfrozen_layers,lr,sam,mixup_alpha,fold,f1,auc,precision,"
        "recall,train_seconds\n";
  for (const auto& r : rows) {
    char seconds[32];
    std::snprintf(seconds, sizeof seconds, "%.3f", r.train_seconds);
    os << r.config_id << "," << model_kind_name(r.model_kind) << "," << r.unfrozen_layers
       << "," << fmt_g(r.lr) << "," << (r.sam ? 1 : 0) << ","
       << (r.mixup_alpha ? fmt_g(*r.mixup_alpha) : "") << "," << r.fold << ","
       << fmt_metric(r.result.f1) << ","
       << (r.result.auc_defined ? fmt_metric(r.result.auc) : "nan") << ","
       << fmt_metric(r.result.precision) << "," << fmt_metric(r.result.recall) << ","
       << seconds << "\n";
  }
  return os.str();
}

std::vector<metrics::RunReport> aggregate_sweep(const std::vector<SweepRow>& rows) {
  std::vector<metrics::RunReport> reports;
  size_t i = 0;
  while (i < rows.size()) {
    size_t j = i;
    std::vector<metrics::FoldResult> folds;
    while (j < rows.size() && rows[j].config_id == rows[i].config_id)
      folds.push_back(rows[j++].result);
    reports.push_back(metrics::aggregate(folds, rows[i].config_id));
    i = j;
  }
  return reports;
}

std::string sweep_summary_text(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "config_id,model_kind,unfrozen_layers,lr,sam,mixup_alpha,f1_mean,f1_std,auc_mean\n";
  size_t i = 0;
  while (i < rows.size()) {
    size_t j = i;
    std::vector<metrics::FoldResult> folds;
    while (j < rows.size() && rows[j].config_id == rows[i].config_id)
      folds.push_back(rows[j++].result);
    const metrics::RunReport rep = metrics::aggregate(folds, rows[i].config_id);
    os << rows[i].config_id << "," << model_kind_name(rows[i].model_kind) << ","
       << rows[i].unfrozen_layers << "," << fmt_g(rows[i].lr) << "," << (rows[i].sam ? 1 : 0)
       << "," << (rows[i].mixup_alpha ? fmt_g(*rows[i].mixup_alpha) : "") << ","
       << fmt_metric(rep.f1_mean) << "," << fmt_metric(rep.f1_std) << ","
       << fmt_metric(rep.auc_mean) << "\n";
    i = j;
  }
  return os.str();
}

void write_sweep_summary(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << sweep_summary_text(rows);
  if (!out) throw IoError(path + ": write failed");
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << sweep_csv_text(rows);
  if (!out) throw IoError(path + ": write failed");

  std::vector<std::string> errors;
  for (const auto& r : rows)
    if (!r.error.empty())
      errors.push_back(r.config_id + ",fold " + std::to_string(r.fold) + ": " + r.error);
  if (!errors.empty()) {
    std::ofstream err(path + ".errors.txt");
    if (!err) throw IoError(path + ".errors.txt: cannot open for writing");
    for (const auto& e : errors) err << e << "\n";
  }
}

}  // namespace attnpain::harness

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "attnpain/checkpoint.hpp"
#include "attnpain/data.hpp"
#include "attnpain/metrics.hpp"
#include "attnpain/optim.hpp"
#include "attnpain/vit.hpp"

namespace attnpain::harness {

enum class ModelKind { vit, vivit };

const char* model_kind_name(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

// One experiment: a model configuration plus the training recipe. Parsed
// from a JSON file (schema in the README); unknown keys are rejected.
struct ExperimentConfig {
  ModelKind model_kind = ModelKind::vit;
  std::string preset = "tiny";  // "tiny" | "paper"
  // 0 = keep the preset's value.
  size_t image_size = 0, patch_size = 0, channels = 0, hidden_dim = 0;
  size_t num_layers = 0, num_heads = 0, mlp_dim = 0;
  std::string dtype = "f64";

  size_t unfrozen_attention_layers = 4;
  double learning_rate = 2e-4;
  bool use_sam = false;
  std::optional<double> mixup_alpha;
  double mixup_fraction = 0.2;
  size_t batch_size = 16;
  size_t epochs = 1;
  double head_dropout = 0.10;
  uint64_t seed = 0;

  int num_folds = 5;
  int test_fold = 0;
  size_t grid_stride = 4;

  std::string manifest_path;  // empty -> synthetic corpus
  data::SyntheticParams synthetic;
  bool synthetic_seed_set = false;  // when false, synthetic.seed follows seed

  // Sweep grid; stage order is layers -> learning rate -> SAM -> mixup.
  std::vector<size_t> sweep_layers{2, 4, 6, 8, 10, 12};
  std::vector<double> sweep_learning_rates{2e-2, 2e-3, 2e-4, 2e-5, 2e-6};
  std::vector<double> sweep_mixup_alphas{0.2, 0.4, 0.8};

  static ExperimentConfig from_json_file(const std::string& path);
  static ExperimentConfig from_json_text(const std::string& text, const std::string& origin);

  vit::ModelConfig model_config() const;
  void validate() const;
};

data::Corpus load_corpus(const ExperimentConfig& cfg);

struct TrainFoldResult {
  metrics::FoldResult fold;
  double train_seconds = 0.0;
  long steps = 0;
  long closure_calls = 0;
  double final_train_loss = 0.0;
  vit::ViTModel model;
};

// Trains on all folds but `test_fold` (oversampled, optionally mixup-
// augmented) and evaluates on the held-out fold. Deterministic given
// (seed, config_id, fold). A single-class test fold yields auc_defined =
// false with the message in FoldResult::error.
TrainFoldResult train_fold(const ExperimentConfig& cfg, const data::Corpus& corpus,
                           const data::FoldAssignment& folds, int test_fold,
                           const std::string& config_id = "train");

// Held-out-fold evaluation of an already-trained model.
metrics::FoldResult evaluate_fold(const vit::ViTModel& model, const ExperimentConfig& cfg,
                                  const data::Corpus& corpus,
                                  const data::FoldAssignment& folds, int test_fold);

struct SweepRow {
  std::string config_id;
  ModelKind model_kind = ModelKind::vit;
  size_t unfrozen_layers = 0;
  double lr = 0.0;
  bool sam = false;
  std::optional<double> mixup_alpha;
  int fold = 0;
  metrics::FoldResult result;
  double train_seconds = 0.0;
  std::string error;
};

// Sequential tuning for both model kinds: 6 layer configs, 4 more
// learning rates, 1 SAM config, 3 mixup alphas — 14 configurations per
// kind, each cross-validated over num_folds folds. Per-config failures
// are recorded, not fatal. Folds may run in parallel, capped by the
// ATTN_PAIN_THREADS environment variable.
std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const data::Corpus& corpus);

// config_id,model_kind,unfrozen_layers,lr,sam,mixup_alpha,fold,f1,auc,
// precision,recall,train_seconds — train_seconds is the only
// run-dependent column. Error notes, if any, go to <path>.errors.txt.
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);
std::string sweep_csv_text(const std::vector<SweepRow>& rows);

// Per-configuration aggregation (mean/std F1, mean AUC over folds):
// config_id,model_kind,unfrozen_layers,lr,sam,mixup_alpha,f1_mean,f1_std,auc_mean
std::vector<metrics::RunReport> aggregate_sweep(const std::vector<SweepRow>& rows);
std::string sweep_summary_text(const std::vector<SweepRow>& rows);
void write_sweep_summary(const std::vector<SweepRow>& rows, const std::string& path);

}  // namespace attnpain::harness

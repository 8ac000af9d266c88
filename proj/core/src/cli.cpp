#include "attnpain/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "attnpain/harness.hpp"
#include "attnpain/interpret.hpp"

namespace fs = std::filesystem;

namespace attnpain::harness {

namespace {

constexpr const char* kUsage =
    "usage: attnpain <subcommand> [flags]\n"
    "\n"
    "subcommands:\n"
    "  gen-data   write the configured synthetic corpus as manifest + PGM images\n"
    "  split      compute subject-disjoint folds for the configured corpus\n"
    "  train      train one configuration on its test fold's complement\n"
    "  sweep      run the 14-configuration sequential sweep for both model kinds\n"
    "  eval       evaluate a checkpoint on the held-out fold\n"
    "  explain    emit attention-map overlays (per-head, last-layer max, rollout)\n"
    "\n"
    "flags:\n"
    "  --config <file>      JSON experiment config (required)\n"
    "  --out <dir>          output directory\n"
    "  --seed <n>           override the config seed\n"
    "  --checkpoint <file>  PVTC checkpoint (eval, explain)\n"
    "  --sample <n>         corpus sample index (explain, default 0)\n"
    "  --fusion <max|mean>  rollout head fusion (explain, default max)\n";

struct CliArgs {
  std::string subcommand;
  std::string config_path;
  std::string out_dir;
  std::string checkpoint_path;
  std::optional<uint64_t> seed;
  size_t sample = 0;
  std::string fusion = "max";
};

CliArgs parse_args(const std::vector<std::string>& args) {
  CliArgs a;
  a.subcommand = args[0];
  for (size_t i = 1; i < args.size(); ++i) {
    const std::string& flag = args[i];
    auto value = [&]() -> const std::string& {
      if (i + 1 >= args.size())
        throw ValidationError("flag " + flag + " needs a value");
      return args[++i];
    };
    if (flag == "--config") {
      a.config_path = value();
    } else if (flag == "--out") {
      a.out_dir = value();
    } else if (flag == "--seed") {
      a.seed = std::stoull(value());
    } else if (flag == "--checkpoint") {
      a.checkpoint_path = value();
    } else if (flag == "--sample") {
      a.sample = std::stoul(value());
    } else if (flag == "--fusion") {
      a.fusion = value();
      if (a.fusion != "max" && a.fusion != "mean")
        throw ValidationError("--fusion must be max or mean");
    } else {
      throw ValidationError("unknown flag " + flag);
    }
  }
  return a;
}

ExperimentConfig load_config(const CliArgs& a) {
  if (a.config_path.empty()) throw ValidationError("--config is required");
  ExperimentConfig cfg = ExperimentConfig::from_json_file(a.config_path);
  if (a.seed) cfg.seed = *a.seed;
  return cfg;
}

void require_out(const CliArgs& a) {
  if (a.out_dir.empty()) throw ValidationError("--out is required for this subcommand");
  std::error_code ec;
  fs::create_directories(a.out_dir, ec);
  if (ec) throw IoError(a.out_dir + ": cannot create output directory");
}

void print_fold(const metrics::FoldResult& r) {
  std::cout << "fold " << r.fold_index << ": f1=" << r.f1;
  if (r.auc_defined)
    std::cout << " auc=" << r.auc;
  else
    std::cout << " auc=undefined";
  std::cout << " precision=" << r.precision << " recall=" << r.recall << " (tp=" << r.tp
            << " fp=" << r.fp << " fn=" << r.fn << " tn=" << r.tn << ")\n";
  if (!r.error.empty()) std::cout << "  note: " << r.error << "\n";
}

int cmd_gen_data(const CliArgs& a) {
  ExperimentConfig cfg = load_config(a);
  if (!cfg.manifest_path.empty())
    throw ValidationError("gen-data: config must describe a synthetic corpus");
  require_out(a);
  data::Corpus corpus = load_corpus(cfg);
  data::save_corpus(corpus, a.out_dir);
  size_t pain = 0;
  for (const auto& s : corpus.samples) pain += static_cast<size_t>(s.label);
  std::cout << "wrote " << corpus.samples.size() << " frames ("
            << static_cast<double>(pain) / static_cast<double>(corpus.samples.size())
            << " pain prevalence) to " << a.out_dir << "/manifest.csv\n";
  return 0;
}

int cmd_split(const CliArgs& a) {
  ExperimentConfig cfg = load_config(a);
  data::Corpus corpus = load_corpus(cfg);
  data::FoldAssignment folds =
      data::make_folds(corpus.subject_pain_counts(), cfg.num_folds, cfg.seed);
  std::ostringstream csv;
  csv << "subject_id,fold\n";
  for (const auto& [sid, f] : folds.fold_of) csv << sid << "," << f << "\n";
  if (!a.out_dir.empty()) {
    require_out(a);
    const std::string path = (fs::path(a.out_dir) / "folds.csv").string();
    std::ofstream out(path);
    if (!out) throw IoError(path + ": cannot open for writing");
    out << csv.str();
    std::cout << "wrote " << path << "\n";
  } else {
    std::cout << csv.str();
  }
  return 0;
}

int cmd_train(const CliArgs& a) {
  ExperimentConfig cfg = load_config(a);
  require_out(a);
  data::Corpus corpus = load_corpus(cfg);
  data::FoldAssignment folds =
      data::make_folds(corpus.subject_pain_counts(), cfg.num_folds, cfg.seed);
  TrainFoldResult r = train_fold(cfg, corpus, folds, cfg.test_fold, "train");

  const std::string ckpt = (fs::path(a.out_dir) / "model.pvtc").string();
  save_checkpoint(r.model, ckpt);

  SweepRow row;
  row.config_id = "train";
  row.model_kind = cfg.model_kind;
  row.unfrozen_layers = cfg.unfrozen_attention_layers;
  row.lr = cfg.learning_rate;
  row.sam = cfg.use_sam;
  row.mixup_alpha = cfg.mixup_alpha;
  row.fold = cfg.test_fold;
  row.result = r.fold;
  row.train_seconds = r.train_seconds;
  write_sweep_csv({row}, (fs::path(a.out_dir) / "fold_result.csv").string());

  print_fold(r.fold);
  std::cout << "steps=" << r.steps << " final_loss=" << r.final_train_loss
            << " checkpoint=" << ckpt << "\n";
  return 0;
}

int cmd_sweep(const CliArgs& a) {
  ExperimentConfig cfg = load_config(a);
  require_out(a);
  data::Corpus corpus = load_corpus(cfg);
  std::vector<SweepRow> rows = run_sweep(cfg, corpus);
  const std::string path = (fs::path(a.out_dir) / "sweep.csv").string();
  write_sweep_csv(rows, path);
  write_sweep_summary(rows, (fs::path(a.out_dir) / "summary.csv").string());
  size_t vit_rows = 0;
  for (const auto& r : rows)
    if (r.model_kind == ModelKind::vit) ++vit_rows;
  std::cout << "wrote " << rows.size() << " rows (" << vit_rows << " vit, "
            << rows.size() - vit_rows << " vivit) to " << path << "\n";
  return 0;
}

int cmd_eval(const CliArgs& a) {
  ExperimentConfig cfg = load_config(a);
  if (a.checkpoint_path.empty()) throw ValidationError("eval: --checkpoint is required");
  data::Corpus corpus = load_corpus(cfg);
  data::FoldAssignment folds =
      data::make_folds(corpus.subject_pain_counts(), cfg.num_folds, cfg.seed);
  vit::ViTModel model = load_checkpoint(a.checkpoint_path);
  validate_checkpoint_config(model, cfg.model_config());
  metrics::FoldResult r = evaluate_fold(model, cfg, corpus, folds, cfg.test_fold);
  print_fold(r);
  if (!a.out_dir.empty()) {
    require_out(a);
    SweepRow row;
    row.config_id = "eval";
    row.model_kind = cfg.model_kind;
    row.unfrozen_layers = cfg.unfrozen_attention_layers;
    row.lr = cfg.learning_rate;
    row.sam = cfg.use_sam;
    row.mixup_alpha = cfg.mixup_alpha;
    row.fold = cfg.test_fold;
    row.result = r;
    write_sweep_csv({row}, (fs::path(a.out_dir) / "eval.csv").string());
  }
  return 0;
}

int cmd_explain(const CliArgs& a) {
  ExperimentConfig cfg = load_config(a);
  if (a.checkpoint_path.empty()) throw ValidationError("explain: --checkpoint is required");
  require_out(a);
  data::Corpus corpus = load_corpus(cfg);
  vit::ViTModel model = load_checkpoint(a.checkpoint_path);
  validate_checkpoint_config(model, cfg.model_config());
  const vit::ModelConfig& mc = model.config();

  // Resolve the sample: a frame for vit, a 2x2 grid for vivit.
  Tensor image;
  std::string sample_id;
  if (cfg.model_kind == ModelKind::vit) {
    if (a.sample >= corpus.samples.size())
      throw ValidationError("explain: --sample out of range (corpus has " +
                            std::to_string(corpus.samples.size()) + " frames)");
    const data::Sample& s = corpus.samples[a.sample];
    image = s.image;
    sample_id = s.subject_id + "-" + s.video_id + "-f" + std::to_string(s.frame_index);
  } else {
    auto grids = data::make_grids(corpus, cfg.grid_stride);
    if (a.sample >= grids.size())
      throw ValidationError("explain: --sample out of range (corpus has " +
                            std::to_string(grids.size()) + " grids)");
    const data::GridSample& g = grids[a.sample];
    image = g.image;
    sample_id =
        g.subject_id + "-" + g.video_id + "-g" + std::to_string(g.last_frame_index);
  }

  Tensor xb = Tensor::zeros({1, mc.channels, mc.image_size, mc.image_size}, mc.dtype);
  const auto vals = image.to_vector();
  for (size_t i = 0; i < vals.size(); ++i) xb.set_item(i, vals[i]);

  NoGradGuard ng;
  vit::ForwardOutput fwd = model.forward(xb, /*training=*/false, nullptr);
  vit::Prediction pred = vit::predict(fwd.logits);
  interpret::AttentionStack stack = interpret::stack_for_sample(fwd.attentions, 0);

  const size_t last = stack.num_layers() - 1;
  const double lo = 0.7, hi = 1.0;
  std::vector<std::string> written;
  for (size_t h = 0; h < stack.num_heads(); ++h) {
    interpret::SaliencyMap m = interpret::head_map(stack, last, h);
    std::string path = (fs::path(a.out_dir) / (sample_id + "_head_" + std::to_string(last) +
                                               "_" + std::to_string(h) + ".ppm"))
                           .string();
    interpret::render_overlay(m, image, lo, hi, path);
    written.push_back(path);
  }
  {
    interpret::SaliencyMap m = interpret::last_layer_max(stack);
    std::string path = (fs::path(a.out_dir) / (sample_id + "_lastmax.ppm")).string();
    interpret::render_overlay(m, image, lo, hi, path);
    written.push_back(path);
  }
  {
    interpret::SaliencyMap m = interpret::rollout(
        stack, a.fusion == "mean" ? interpret::Fusion::mean : interpret::Fusion::max);
    std::string path = (fs::path(a.out_dir) / (sample_id + "_rollout.ppm")).string();
    interpret::render_overlay(m, image, lo, hi, path);
    written.push_back(path);
  }

  std::cout << "sample " << sample_id << ": p(pain)=" << pred.pain_probability[0]
            << " label=" << pred.labels[0] << "\n";
  for (const auto& p : written) std::cout << "wrote " << p << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  if (args.empty()) {
    std::cerr << kUsage;
    return 1;
  }
  try {
    const CliArgs a = parse_args(args);
    if (a.subcommand == "gen-data") return cmd_gen_data(a);
    if (a.subcommand == "split") return cmd_split(a);
    if (a.subcommand == "train") return cmd_train(a);
    if (a.subcommand == "sweep") return cmd_sweep(a);
    if (a.subcommand == "eval") return cmd_eval(a);
    if (a.subcommand == "explain") return cmd_explain(a);
    std::cerr << "unknown subcommand '" << a.subcommand << "'\n" << kUsage;
    return 1;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace attnpain::harness

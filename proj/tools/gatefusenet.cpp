// gatefusenet: synth / train / eval / gradcam.
//
// Exit codes: 0 success, 2 configuration error, 3 I/O or file format error,
// 4 numerical failure (divergence, non-finite values).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "gfn/pipeline.hpp"

using namespace gfn;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct SynthArgs {
  std::string out, config;
  int subjects = 16;
  int size = 32;
  std::uint64_t seed = 0;
  double noise = 1.0;
};

int cmd_synth(const SynthArgs& a) {
  PhantomSpec spec = a.config.empty() ? PhantomSpec{} : load_run_config(a.config).phantom;
  spec.size = a.size;
  scale_noise(spec, a.noise);
  const SynthSummary s = synth_dataset(spec, a.subjects, a.seed, a.out);
  std::cout << s.manifest_path << "\n" << "HC " << s.hc << ", PD " << s.pd << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, config, out;
  int fold = -1;
  bool all_folds = false;
  bool train_all = false;
  std::optional<int> epochs, batch_size;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> widths, fusion, anchor;
  bool no_augment = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.batch_size) cfg.train.batch_size = *a.batch_size;
  if (a.lr) cfg.train.lr = *a.lr;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.widths) cfg.network.set_widths(*a.widths);
  if (a.fusion) cfg.network.fusion = parse_fusion(*a.fusion);
  if (a.anchor) cfg.network.anchor = parse_modality(*a.anchor);
  if (a.no_augment) cfg.train.augment = false;
  cfg.validate();

  const Manifest m = read_manifest(a.data);
  std::vector<FoldSelection> runs;
  if (a.all_folds) {
    for (int f = 0; f < cfg.train.folds; ++f) runs.push_back(select_fold(m, f));
  } else if (a.train_all) {
    runs.push_back(select_fold(m, -1));
  } else {
    runs.push_back(select_fold(m, a.fold));
  }
  int status = 0;
  for (const FoldSelection& sel : runs) {
    const std::string dir = (fs::path(a.out) / sel.name).string();
    std::cout << sel.name << ": " << sel.train.size() << " train, " << sel.val.size()
              << " selection records -> " << dir << "\n";
    const TrainRun run = train_selection(m, sel, cfg, dir, [](const EpochLog& e) {
      std::printf("  epoch %3d  lr %.3e  loss %.5f  val_auc %.4f  val_f1 %.4f  val_acc %.4f\n",
                  e.epoch, e.lr, e.train_loss, e.val_auc, e.val_f1, e.val_acc);
      std::fflush(stdout);
    });
    if (run.result.diverged) {
      std::cerr << "error: " << sel.name << " diverged: " << run.result.divergence
                << " (artifacts kept as .partial)\n";
      status = kExitNumeric;
      continue;
    }
    std::cout << "  best epoch " << run.result.best_epoch << " (score " << run.result.best_score
              << ")\n";
  }
  return status;
}

struct EvalArgs {
  std::string data, ckpt, out;
  std::string split = "test";
  std::optional<std::string> fusion, anchor;
  double threshold = 0.5;
  int batch_size = 4;
};

int cmd_eval(const EvalArgs& a) {
  EvalRequest req;
  req.split = a.split;
  if (a.fusion) req.fusion = parse_fusion(*a.fusion);
  if (a.anchor) req.anchor = parse_modality(*a.anchor);
  req.threshold = a.threshold;
  req.batch_size = a.batch_size;
  const EvalReport r = eval_checkpoint(a.data, a.ckpt, req, a.out);
  const ConfusionReport& c = r.confusion;
  std::printf("n %zu  auc %.4f  aupr %.4f  acc %.4f  f1 %.4f  precision %.4f  recall %.4f  "
              "specificity %.4f  npv %.4f\n",
              r.scores.size(), r.roc.area, r.pr.area, c.accuracy, c.f1, c.precision, c.recall,
              c.specificity, c.npv);
  if (!c.undefined.empty()) {
    std::string u;
    for (const std::string& s : c.undefined) u += " " + s;
    std::printf("undefined (0/0, reported as 0):%s\n", u.c_str());
  }
  return 0;
}

struct CamArgs {
  std::string data, ckpt, ids, out;
  int stage = -1;
};

int cmd_gradcam(const CamArgs& a) {
  std::vector<std::string> ids = split_list(a.ids);
  if (a.ids == "all" || a.ids == "test") {
    const Manifest m = read_manifest(a.data);
    ids.clear();
    for (const SubjectRecord& r : m.records) {
      if (a.ids == "all" || r.split == "test") ids.push_back(r.id);
    }
  }
  const auto rows = gradcam_subjects(a.data, a.ckpt, ids, a.out, a.stage);
  for (const CamSummary& c : rows) {
    std::printf("%s  label %d  SN+GP enrichment %.3f%s\n", c.id.c_str(), c.label,
                c.sn_gp_enrichment, c.zero ? "  (zero map)" : "");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GateFuseNet: gated multimodal fusion classifier on synthetic 3D phantoms"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a phantom dataset and manifest");
  synth->add_option("--out", sa.out, "Output dataset directory")->required();
  synth->add_option("--subjects", sa.subjects, "Number of subjects (>= 2)")->capture_default_str();
  synth->add_option("--size", sa.size, "Volume side length in voxels")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Dataset seed")->capture_default_str();
  synth->add_option("--noise", sa.noise,
                    "Scale on every noise and jitter level (0 = noiseless, 1 = default)")
      ->capture_default_str();
  synth->add_option("--config", sa.config, "JSON config; its \"phantom\" section is used");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train one fold, every fold, or all training data");
  train->add_option("--data", ta.data, "Dataset directory (with manifest.csv)")->required();
  train->add_option("--config", ta.config, "JSON config file (flags override it)");
  auto* fold = train->add_option("--fold", ta.fold, "Cross-validation fold to hold out for selection");
  auto* all = train->add_flag("--all-folds", ta.all_folds, "Train every fold in turn");
  auto* full = train->add_flag("--train-all", ta.train_all,
                               "Train on every non-test record and keep the last epoch");
  fold->excludes(all)->excludes(full);
  all->excludes(full);
  train->add_option("--out", ta.out, "Output directory (one subdirectory per fold)")->required();
  train->add_option("--epochs", ta.epochs, "Override train.epochs (default 30)");
  train->add_option("--batch-size", ta.batch_size, "Override train.batch_size (default 4)");
  train->add_option("--lr", ta.lr, "Override train.lr (default 2e-4)");
  train->add_option("--seed", ta.seed, "Override train.seed (default 0)");
  train->add_option("--widths", ta.widths, "Network widths a/b/c: stem a, one Fusion Module per "
                                          "further entry (default 16/32/64/64)");
  train->add_option("--fusion", ta.fusion, "gated|concat|weighted_average|none (default gated)");
  train->add_option("--anchor", ta.anchor, "ROI|QSM|T1 (default ROI)");
  train->add_flag("--no-augment", ta.no_augment, "Disable training augmentation");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval->add_option("--data", ea.data, "Dataset directory")->required();
  eval->add_option("--ckpt", ea.ckpt, "GFN1 checkpoint")->required();
  eval->add_option("--split", ea.split, "test|train|all|fold<k>")->capture_default_str();
  eval->add_option("--out", ea.out, "Report directory")->required();
  eval->add_option("--fusion", ea.fusion, "Expected fusion strategy (must match the checkpoint)");
  eval->add_option("--anchor", ea.anchor, "Expected anchor modality (must match the checkpoint)");
  eval->add_option("--threshold", ea.threshold, "Decision threshold")->capture_default_str();
  eval->add_option("--batch-size", ea.batch_size, "Inference batch size")->capture_default_str();

  CamArgs ca;
  auto* cam = app.add_subcommand("gradcam", "Write Grad-CAM volumes and a localization table");
  cam->add_option("--data", ca.data, "Dataset directory")->required();
  cam->add_option("--ckpt", ca.ckpt, "GFN1 checkpoint")->required();
  cam->add_option("--ids", ca.ids, "Comma-separated subject ids, or 'test' / 'all'")->required();
  cam->add_option("--out", ca.out, "Output directory")->required();
  cam->add_option("--stage", ca.stage,
                  "Target layer: Fusion Module index (0 = after the stems, -1 = last)")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*train) {
      if (!*fold && !ta.all_folds && !ta.train_all) {
        throw ConfigError("train: give --fold I, --all-folds or --train-all");
      }
      return cmd_train(ta);
    }
    if (*eval) return cmd_eval(ea);
    if (*cam) return cmd_gradcam(ca);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

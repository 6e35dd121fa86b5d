#pragma once

// End-to-end operations behind the command line and the Python module:
// dataset synthesis, fold training, evaluation and Grad-CAM export. Each
// writes its artifacts into one output directory and is byte-reproducible
// for fixed inputs.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gfn/evalkit.hpp"
#include "gfn/phantomdata.hpp"
#include "gfn/trainloop.hpp"
#include "json.hpp"

namespace gfn::inline GFN_ABI {

/// Everything a run needs. File values override defaults; command-line flags
/// override the file.
struct RunConfig {
  PhantomSpec phantom;
  NetworkConfig network;
  TrainPlan train;
  AugmentSpec augment;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Sections "phantom", "network", "train", "augment"; all optional.
void from_json(const nlohmann::json& j, RunConfig& c);

/// Parses a JSON config file. IoError when unreadable, ConfigError when
/// malformed.
RunConfig load_run_config(const std::string& path);

/// Reads a whole file (IoError with the path on failure).
std::string read_text(const std::string& path);
/// Writes a whole file, creating nothing but the file itself.
void write_text(const std::string& path, const std::string& text);

// ---- synth ----------------------------------------------------------------------

struct SynthSummary {
  std::string manifest_path;
  int hc = 0;
  int pd = 0;
};

SynthSummary synth_dataset(const PhantomSpec& spec, int subjects, std::uint64_t seed,
                           const std::string& out_dir);

/// Multiplies every noise and jitter level of the spec by `scale`.
void scale_noise(PhantomSpec& spec, double scale);

// ---- train ----------------------------------------------------------------------

/// Which records train and which select the best epoch.
struct FoldSelection {
  std::string name;  // "fold0".."fold4" or "all"
  std::vector<int> train;
  std::vector<int> val;  // empty: keep the last epoch
};

/// fold >= 0: that fold selects, the other folds train. fold < 0: every
/// non-test record trains and the last epoch is kept.
FoldSelection select_fold(const Manifest& m, int fold);

struct TrainRun {
  std::string dir;
  TrainResult result;
};

/// Trains one selection and writes dir/{best.gfn1, log.csv, run.json}
/// (".partial" names on divergence).
TrainRun train_selection(const Manifest& m, const FoldSelection& sel, const RunConfig& cfg,
                         const std::string& out_dir,
                         const std::function<void(const EpochLog&)>& on_epoch = {});

// ---- eval -----------------------------------------------------------------------

/// Record indices by split name: "test", "train" (every non-test record),
/// "fold<k>" or "all".
std::vector<int> split_records(const Manifest& m, const std::string& split);

struct EvalRequest {
  std::string split = "test";
  std::optional<FusionStrategy> fusion;  // must match the checkpoint
  std::optional<Modality> anchor;        // must match the checkpoint
  double threshold = 0.5;
  int batch_size = 4;
};

/// Field-level differences between the checkpoint and the request / data
/// ("network.fusion: checkpoint gated, requested concat"). Empty = compatible.
std::vector<std::string> checkpoint_mismatches(const CheckpointHeader& h, const EvalRequest& req,
                                               const Manifest& m);

/// Loads the checkpoint, scores the split in eval mode, writes metrics.json,
/// roc.csv, pr.csv, scores.csv and run.json. ConfigError on a mismatch.
EvalReport eval_checkpoint(const std::string& data_dir, const std::string& ckpt,
                           const EvalRequest& req, const std::string& out_dir);

// ---- gradcam --------------------------------------------------------------------

struct CamSummary {
  std::string id;
  int label = 0;
  bool zero = false;
  std::vector<double> nucleus_fraction;  // of the top-decile voxels, per ROI label
  double sn_gp_enrichment = 0;
};

/// Writes cam_<id>.gfnvol per subject and localization.csv. ConfigError
/// listing the valid ids when one is unknown.
std::vector<CamSummary> gradcam_subjects(const std::string& data_dir, const std::string& ckpt,
                                         const std::vector<std::string>& ids,
                                         const std::string& out_dir, int stage = -1);

/// CAM localization of one sample against its own ROI map.
CamSummary localize(const CamMap& cam, const Sample& s, const std::vector<std::string>& names);

/// ROI label names from dataset.json, or the default nuclei names.
std::vector<std::string> roi_names(const std::string& data_dir);

}  // namespace gfn::inline GFN_ABI

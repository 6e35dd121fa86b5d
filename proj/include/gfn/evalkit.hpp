#pragma once

// Thresholded confusion metrics, ROC/PR curves, 3D Grad-CAM and report
// export.

#include <array>
#include <string>
#include <vector>

#include "gfn/netblocks.hpp"
#include "json.hpp"

namespace gfn::inline GFN_ABI {

struct ConfusionReport {
  double threshold = 0.5;
  long tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0, precision = 0, recall = 0, f1 = 0, specificity = 0, ppv = 0, npv = 0;
  /// Names of rates whose denominator was zero (reported as 0).
  std::vector<std::string> undefined;
};

/// score >= threshold predicts positive. Throws ConfigError on an empty set,
/// mismatched lengths or a threshold outside [0,1].
ConfusionReport confusion_metrics(const std::vector<double>& scores,
                                  const std::vector<int>& labels, double threshold = 0.5);

struct CurvePoint {
  double x = 0;  // FPR (ROC) or recall (PR)
  double y = 0;  // TPR (ROC) or precision (PR)
  double threshold = 0;
};

struct Curve {
  std::vector<CurvePoint> points;
  double area = 0;
};

/// Sweep over unique scores, highest first; tied scores form one step.
/// Anchors (0,0) at threshold +inf and (1,1) at the lowest score. AUC by the
/// trapezoid rule. Throws ConfigError unless both classes are present.
Curve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);

/// Same sweep; anchor (recall 0, precision 1) at +inf. AUPR is the step sum
/// of precision times recall increment.
Curve pr_curve(const std::vector<double>& scores, const std::vector<int>& labels);

struct EvalReport {
  ConfusionReport confusion;
  Curve roc;
  Curve pr;
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<int> labels;
};

EvalReport evaluate(const std::vector<double>& scores, const std::vector<int>& labels,
                    const std::vector<std::string>& ids, double threshold = 0.5);

/// metrics.json: threshold, counts, the nine metrics (accuracy, precision,
/// recall, f1, specificity, ppv, npv, auc, aupr), undefined-rate flags.
nlohmann::json metrics_json(const EvalReport& r);

/// Writes metrics.json, roc.csv (fpr,tpr,threshold), pr.csv
/// (recall,precision,threshold) and scores.csv (id,label,score) into dir.
void export_report(const EvalReport& r, const std::string& dir);

// ---- Grad-CAM -------------------------------------------------------------------------

struct CamMap {
  Tensor coarse;     // (1,1,d,h,w) at the target layer
  Tensor upsampled;  // (1,1,D,H,W) at the input grid
  bool zero = false; // every weighted activation was <= 0
};

/// Target layer: anchor stream after Fusion Module `stage` (1-based; 0 = the
/// initial GF block; -1 = last Fusion Module). weights_c = mean over voxels
/// of dlogit/dA_c; map = relu(sum_c weights_c A_c); trilinear upsample
/// (align-corners off); both maps scaled so the max is 1 when nonzero.
/// inputs are one subject's (1,C,D,H,W) tensors indexed by Modality. Runs
/// the net in its current mode (set eval mode first).
CamMap grad_cam(GateFuseNet& net, const std::array<Tensor, 3>& inputs, int stage = -1);

/// The weighting step on its own: activations and gradients (1,C,d,h,w) ->
/// coarse map, max-normalised; `zero` set when nothing is positive.
CamMap cam_from_gradients(const Tensor& activations, const Tensor& gradients);

/// Trilinear resize with half-pixel centres, edge clamped.
Tensor upsample_trilinear(const Tensor& vol, int d, int h, int w);

/// Fraction of the top-decile voxels (by CAM value; ties at the cut-off are
/// included) inside the mask, divided by the mask's volume fraction.
double top_decile_enrichment(const Tensor& cam, const std::vector<bool>& mask);

}  // namespace gfn::inline GFN_ABI

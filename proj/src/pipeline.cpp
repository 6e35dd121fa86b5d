#include "gfn/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace gfn::inline GFN_ABI {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
  phantom.validate();
  network.validate();
  train.validate();
  augment.validate();
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"phantom", c.phantom}, {"network", c.network}, {"train", c.train},
           {"augment", c.augment}};
}

void from_json(const json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "phantom" && key != "network" && key != "train" && key != "augment") {
      throw ConfigError("config: unknown section '" + key + "'");
    }
  }
  if (j.contains("phantom")) from_json(j.at("phantom"), c.phantom);
  if (j.contains("network")) from_json(j.at("network"), c.network);
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("augment")) from_json(j.at("augment"), c.augment);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

RunConfig load_run_config(const std::string& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  RunConfig c;
  from_json(j, c);
  return c;
}

namespace {

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

json dataset_info(const std::string& data_dir) {
  const fs::path p = fs::path(data_dir) / "dataset.json";
  if (!fs::exists(p)) return json::object();
  try {
    return json::parse(read_text(p.string()));
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

std::vector<std::string> ids_of(const Manifest& m, const std::vector<int>& idx) {
  std::vector<std::string> out;
  for (int i : idx) out.push_back(m.records[i].id);
  return out;
}

int input_size(const Manifest& m, const std::vector<int>& idx) {
  if (idx.empty()) return 0;
  VolumeHeader h;
  load_volume((fs::path(m.dir) / m.records[idx.front()].qsm).string(), &h);
  return h.shape[0];
}

}  // namespace

// ---- synth ----------------------------------------------------------------------------

void scale_noise(PhantomSpec& spec, double scale) {
  if (!(scale >= 0)) throw ConfigError("noise scale must be >= 0");
  for (double* v : {&spec.effect_jitter, &spec.baseline_jitter, &spec.scale_jitter,
                    &spec.anatomy_jitter, &spec.qsm_noise, &spec.t1_noise}) {
    *v *= scale;
  }
}

SynthSummary synth_dataset(const PhantomSpec& spec, int subjects, std::uint64_t seed,
                           const std::string& out_dir) {
  const Manifest m = build_manifest(spec, subjects, seed, out_dir);
  SynthSummary s;
  s.manifest_path = (fs::path(out_dir) / "manifest.csv").string();
  for (const SubjectRecord& r : m.records) (r.label ? s.pd : s.hc) += 1;
  return s;
}

// ---- train ----------------------------------------------------------------------------

FoldSelection select_fold(const Manifest& m, int fold) {
  FoldSelection sel;
  if (fold < 0) {
    sel.name = "all";
    sel.train = split_records(m, "train");
    return sel;
  }
  sel.name = "fold" + std::to_string(fold);
  bool any_fold = false;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const std::string& s = m.records[i].split;
    if (s.rfind("fold", 0) != 0) continue;
    any_fold = true;
    (s == sel.name ? sel.val : sel.train).push_back(static_cast<int>(i));
  }
  if (!any_fold) {
    throw ConfigError("dataset has no cross-validation folds (fewer than 10 subjects?); "
                      "train on every record instead");
  }
  if (sel.val.empty()) throw ConfigError("dataset has no records in " + sel.name);
  return sel;
}

TrainRun train_selection(const Manifest& m, const FoldSelection& sel, const RunConfig& cfg,
                         const std::string& out_dir,
                         const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (sel.train.empty()) throw ConfigError("no training records for " + sel.name);
  FoldData data{load_samples(m, sel.train), load_samples(m, sel.val)};
  TrainRun run;
  run.dir = out_dir;
  GateFuseNet net(cfg.network);
  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.augment = cfg.augment;
  opts.on_epoch = on_epoch;
  const int size = input_size(m, sel.train);
  opts.checkpoint_meta = {{"selection", sel.name}, {"input_size", size}, {"seed", cfg.train.seed}};
  make_dir(out_dir);
  run.result = train_fold(net, data, cfg.train, opts);

  const TrainResult& r = run.result;
  const json info{
      {"command", "train"},
      {"selection", sel.name},
      {"config", cfg},
      {"dataset", dataset_info(m.dir)},
      {"input_size", size},
      {"train_ids", ids_of(m, sel.train)},
      {"val_ids", ids_of(m, sel.val)},
      {"result",
       {{"epochs_run", r.log.size()},
        {"best_epoch", r.best_epoch},
        {"best_score", r.best_score},
        {"diverged", r.diverged},
        {"divergence", r.divergence}}}};
  const fs::path dir(out_dir);
  write_text((dir / (r.diverged ? "run.json.partial" : "run.json")).string(), info.dump(2) + "\n");
  return run;
}

// ---- eval -----------------------------------------------------------------------------

std::vector<int> split_records(const Manifest& m, const std::string& split) {
  const bool fold = split.rfind("fold", 0) == 0;
  if (split != "test" && split != "train" && split != "all" && !fold) {
    throw ConfigError("unknown split '" + split + "' (test, train, all, fold<k>)");
  }
  std::vector<int> out;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const std::string& s = m.records[i].split;
    const bool take = split == "all" || (split == "test" && s == "test") ||
                      (split == "train" && s != "test") || (fold && s == split);
    if (take) out.push_back(static_cast<int>(i));
  }
  if (out.empty()) throw ConfigError("split '" + split + "' has no records");
  return out;
}

std::vector<std::string> checkpoint_mismatches(const CheckpointHeader& h, const EvalRequest& req,
                                               const Manifest& m) {
  std::vector<std::string> diff;
  if (req.fusion && *req.fusion != h.config.fusion) {
    diff.push_back("network.fusion: checkpoint " + to_string(h.config.fusion) + ", requested " +
                   to_string(*req.fusion));
  }
  if (req.anchor && *req.anchor != h.config.anchor) {
    diff.push_back("network.anchor: checkpoint " + to_string(h.config.anchor) + ", requested " +
                   to_string(*req.anchor));
  }
  const int size = input_size(m, {0});
  if (h.meta.contains("input_size") && h.meta.at("input_size").get<int>() != size) {
    diff.push_back("input_size: checkpoint " + h.meta.at("input_size").dump() + ", data " +
                   std::to_string(size));
  }
  const json info = dataset_info(m.dir);
  if (info.contains("roi_labels")) {
    const int k = static_cast<int>(info.at("roi_labels").size());
    if (k != h.config.roi_channels) {
      diff.push_back("network.roi_channels: checkpoint " + std::to_string(h.config.roi_channels) +
                     ", data " + std::to_string(k));
    }
  }
  return diff;
}

EvalReport eval_checkpoint(const std::string& data_dir, const std::string& ckpt,
                           const EvalRequest& req, const std::string& out_dir) {
  const Manifest m = read_manifest(data_dir);
  if (m.records.empty()) throw ConfigError("manifest has no records");
  const CheckpointHeader h = read_checkpoint_header(ckpt);
  const std::vector<std::string> diff = checkpoint_mismatches(h, req, m);
  if (!diff.empty()) {
    std::string msg = "checkpoint does not match the request:";
    for (const std::string& d : diff) msg += "\n  " + d;
    throw ConfigError(msg);
  }
  auto net = load_checkpoint(ckpt);
  const std::vector<int> idx = split_records(m, req.split);
  const std::vector<Sample> samples = load_samples(m, idx);
  const std::vector<double> scores = predict(*net, samples, req.batch_size);
  std::vector<int> labels;
  std::vector<std::string> ids;
  for (const Sample& s : samples) {
    labels.push_back(s.label);
    ids.push_back(s.id);
  }
  const EvalReport report = evaluate(scores, labels, ids, req.threshold);
  export_report(report, out_dir);
  const json info{{"command", "eval"},
                  {"split", req.split},
                  {"threshold", req.threshold},
                  {"checkpoint", {{"config", h.config}, {"meta", h.meta}}},
                  {"dataset", dataset_info(data_dir)},
                  {"n", samples.size()}};
  write_text((fs::path(out_dir) / "run.json").string(), info.dump(2) + "\n");
  return report;
}

// ---- gradcam --------------------------------------------------------------------------

std::vector<std::string> roi_names(const std::string& data_dir) {
  const json info = dataset_info(data_dir);
  if (info.contains("roi_labels")) return info.at("roi_labels").get<std::vector<std::string>>();
  std::vector<std::string> names;
  for (const Nucleus& n : default_nuclei()) names.push_back(n.name);
  return names;
}

CamSummary localize(const CamMap& cam, const Sample& s, const std::vector<std::string>& names) {
  const Tensor& map = cam.upsampled;
  const Tensor& roi = s.volumes.roi;
  if (map.size() != roi.size()) throw ConfigError("localize: CAM and ROI grids differ");
  CamSummary out;
  out.id = s.id;
  out.label = s.label;
  out.zero = cam.zero;
  std::vector<Real> sorted(map.data().begin(), map.data().end());
  const std::size_t k = std::max<std::size_t>(1, (sorted.size() + 9) / 10);
  std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end(), std::greater<>());
  const Real cut = sorted[k - 1];
  std::vector<long> hits(names.size(), 0);
  long top = 0;
  std::vector<bool> mask(roi.size(), false);
  for (std::size_t i = 0; i < roi.size(); ++i) {
    const long lab = std::lround(roi[i]);
    if (lab >= 1 && lab <= static_cast<long>(names.size())) {
      const std::string& n = names[lab - 1];
      mask[i] = n.rfind("SN_", 0) == 0 || n.rfind("GP_", 0) == 0;
    }
    if (map[i] >= cut) {
      ++top;
      if (lab >= 1 && lab <= static_cast<long>(names.size())) ++hits[lab - 1];
    }
  }
  for (long h : hits) out.nucleus_fraction.push_back(static_cast<double>(h) / top);
  out.sn_gp_enrichment = top_decile_enrichment(map, mask);
  return out;
}

std::vector<CamSummary> gradcam_subjects(const std::string& data_dir, const std::string& ckpt,
                                         const std::vector<std::string>& ids,
                                         const std::string& out_dir, int stage) {
  const Manifest m = read_manifest(data_dir);
  std::map<std::string, int> by_id;
  for (std::size_t i = 0; i < m.records.size(); ++i) by_id[m.records[i].id] = static_cast<int>(i);
  if (ids.empty()) throw ConfigError("no subject ids given");
  for (const std::string& id : ids) {
    if (!by_id.contains(id)) {
      std::string valid;
      for (const SubjectRecord& r : m.records) valid += (valid.empty() ? "" : ",") + r.id;
      throw ConfigError("unknown subject id '" + id + "'; valid ids: " + valid);
    }
  }
  auto net = load_checkpoint(ckpt);
  net->set_mode(NormMode::eval);
  const int k = net->config().roi_channels;
  const std::vector<std::string> names = roi_names(data_dir);
  make_dir(out_dir);
  std::vector<CamSummary> out;
  std::string csv = "id,label,zero";
  for (const std::string& n : names) csv += "," + n;
  csv += ",sn_gp_enrichment\n";
  for (const std::string& id : ids) {
    const Sample s = load_sample(m, m.records[by_id.at(id)]);
    const CamMap cam =
        grad_cam(*net, {one_hot(s.volumes.roi, k), s.volumes.qsm, s.volumes.t1}, stage);
    save_volume((fs::path(out_dir) / ("cam_" + id + ".gfnvol")).string(), cam.upsampled,
                "gradcam");
    CamSummary c = localize(cam, s, names);
    char buf[32];
    csv += c.id + "," + std::to_string(c.label) + "," + (c.zero ? "1" : "0");
    for (double f : c.nucleus_fraction) {
      std::snprintf(buf, sizeof buf, "%.6f", f);
      csv += std::string(",") + buf;
    }
    std::snprintf(buf, sizeof buf, "%.6f", c.sn_gp_enrichment);
    csv += std::string(",") + buf + "\n";
    out.push_back(std::move(c));
  }
  write_text((fs::path(out_dir) / "localization.csv").string(), csv);
  return out;
}

}  // namespace gfn::inline GFN_ABI

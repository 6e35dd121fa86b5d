#include "gfn/netblocks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "gfn/random.hpp"

namespace gfn::inline GFN_ABI {

using nlohmann::json;

std::string to_string(Modality m) {
  switch (m) {
    case Modality::roi: return "ROI";
    case Modality::qsm: return "QSM";
    case Modality::t1: return "T1";
  }
  return "?";
}

std::string to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::gated: return "gated";
    case FusionStrategy::concat: return "concat";
    case FusionStrategy::weighted_average: return "weighted_average";
    case FusionStrategy::none: return "none";
  }
  return "?";
}

Modality parse_modality(const std::string& s) {
  std::string u = s;
  std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return std::toupper(c); });
  if (u == "ROI") return Modality::roi;
  if (u == "QSM") return Modality::qsm;
  if (u == "T1" || u == "T1W") return Modality::t1;
  throw ConfigError("unknown modality '" + s + "' (expected ROI, QSM or T1)");
}

FusionStrategy parse_fusion(const std::string& s) {
  for (auto f : {FusionStrategy::gated, FusionStrategy::concat,
                 FusionStrategy::weighted_average, FusionStrategy::none}) {
    if (s == to_string(f)) return f;
  }
  throw ConfigError("unknown fusion strategy '" + s +
                    "' (expected gated, concat, weighted_average or none)");
}

// ---- NetworkConfig ----------------------------------------------------------

namespace {

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ConfigError("network." + field + ": " + why);
}

}  // namespace

void NetworkConfig::validate() const {
  require(roi_channels >= 1, "roi_channels", "must be >= 1");
  require(qsm_channels >= 1, "qsm_channels", "must be >= 1");
  require(t1_channels >= 1, "t1_channels", "must be >= 1");
  require(stem_width >= 1, "stem_width", "must be >= 1");
  require(!stage_widths.empty(), "stage_widths", "need at least one fusion stage");
  require(attention_groups >= 1, "attention_groups", "must be >= 1");
  require(stem_width % attention_groups == 0, "attention_groups",
          "must divide the stem width " + std::to_string(stem_width));
  require(amf_eps > 0, "amf_eps", "must be > 0");
  require(cbam_reduction >= 1, "cbam_reduction", "must be >= 1");
  require(cbam_spatial_kernel >= 1 && cbam_spatial_kernel % 2 == 1, "cbam_spatial_kernel",
          "must be odd and >= 1");
  require(bottleneck_groups >= 1, "bottleneck_groups", "must be >= 1");
  require(!decision_dilations.empty(), "decision_dilations", "need at least one block");
  for (int d : decision_dilations) require(d >= 1, "decision_dilations", "must be >= 1");
  for (int w : stage_widths) {
    const std::string ws = std::to_string(w);
    require(w >= 2 && w % 2 == 0, "stage_widths", "width " + ws + " must be even");
    require(w % cbam_reduction == 0, "stage_widths",
            "width " + ws + " not divisible by cbam_reduction " + std::to_string(cbam_reduction));
    require((w / 2) % bottleneck_groups == 0, "bottleneck_groups",
            "must divide half of stage width " + ws);
    require(w % attention_groups == 0, "attention_groups", "must divide stage width " + ws);
  }
}

int NetworkConfig::input_channels(Modality m) const {
  switch (m) {
    case Modality::roi: return roi_channels;
    case Modality::qsm: return qsm_channels;
    case Modality::t1: return t1_channels;
  }
  return 0;
}

void NetworkConfig::set_widths(const std::string& spec) {
  std::vector<int> ws;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, '/')) {
    try {
      std::size_t used = 0;
      ws.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("widths '" + spec + "': '" + item + "' is not an integer");
    }
  }
  if (ws.size() < 2) {
    throw ConfigError("widths '" + spec + "': need stem width and at least one stage width");
  }
  stem_width = ws.front();
  stage_widths.assign(ws.begin() + 1, ws.end());
}

std::string NetworkConfig::widths_string() const {
  std::string s = std::to_string(stem_width);
  for (int w : stage_widths) s += "/" + std::to_string(w);
  return s;
}

void to_json(json& j, const NetworkConfig& c) {
  j = json{{"roi_channels", c.roi_channels},
           {"qsm_channels", c.qsm_channels},
           {"t1_channels", c.t1_channels},
           {"stem_width", c.stem_width},
           {"stage_widths", c.stage_widths},
           {"attention_groups", c.attention_groups},
           {"amf_eps", c.amf_eps},
           {"cbam_reduction", c.cbam_reduction},
           {"cbam_spatial_kernel", c.cbam_spatial_kernel},
           {"bottleneck_groups", c.bottleneck_groups},
           {"decision_dilations", c.decision_dilations},
           {"fusion", to_string(c.fusion)},
           {"anchor", to_string(c.anchor)},
           {"gate_init", c.gate_init}};
}

void from_json(const json& j, NetworkConfig& c) {
  if (!j.is_object()) throw ConfigError("network config must be a JSON object");
  const json defaults = c;
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("network: unknown key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("roi_channels", c.roi_channels);
    get("qsm_channels", c.qsm_channels);
    get("t1_channels", c.t1_channels);
    get("stem_width", c.stem_width);
    get("stage_widths", c.stage_widths);
    get("attention_groups", c.attention_groups);
    get("amf_eps", c.amf_eps);
    get("cbam_reduction", c.cbam_reduction);
    get("cbam_spatial_kernel", c.cbam_spatial_kernel);
    get("bottleneck_groups", c.bottleneck_groups);
    get("decision_dilations", c.decision_dilations);
    get("gate_init", c.gate_init);
    if (j.contains("fusion")) c.fusion = parse_fusion(j.at("fusion").get<std::string>());
    if (j.contains("anchor")) c.anchor = parse_modality(j.at("anchor").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network: ") + e.what());
  }
}

// ---- layers -------------------------------------------------------------------

Conv::Conv(const std::string& name, int in, int out, int kernel, bool with_bias,
           int stride, int dilation, int groups)
    : weight(name + ".weight", Tensor({out, in / groups, kernel, kernel, kernel})),
      spec(ConvSpec::cube(kernel, dilation * (kernel / 2), stride, dilation, groups)) {
  if (in % groups != 0 || out % groups != 0) {
    throw ConfigError(name + ": groups " + std::to_string(groups) + " must divide " +
                      std::to_string(in) + " -> " + std::to_string(out) + " channels");
  }
  if (with_bias) bias.emplace(name + ".bias", Tensor({1, out, 1, 1, 1}));
}

Var Conv::operator()(Tape& t, Var x) {
  std::optional<Var> b;
  if (bias) b = t.param(*bias);
  return conv3d(x, t.param(weight), b, spec);
}

void Conv::collect(ParamList& out) {
  out.push_back(&weight);
  if (bias) out.push_back(&*bias);
}

int Conv::fan_in() const {
  const Shape& s = weight.value.shape();
  return s.c * s.d * s.h * s.w;
}

Linear::Linear(const std::string& name, int in, int out)
    : weight(name + ".weight", Tensor({out, in, 1, 1, 1})),
      bias(name + ".bias", Tensor({1, out, 1, 1, 1})) {}

Var Linear::operator()(Tape& t, Var x) { return linear(x, t.param(weight), t.param(bias)); }

void Linear::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Stem::Stem(const std::string& name, int in, int width)
    : convs{Conv(name + ".conv1", in, width, 3, true),
            Conv(name + ".conv2", width, width, 3, true),
            Conv(name + ".conv3", width, width, 3, true)} {}

Var Stem::operator()(Tape& t, Var x) {
  for (Conv& c : convs) x = elu(c(t, x));
  return maxpool3d_2(x);
}

void Stem::collect(ParamList& out) {
  for (Conv& c : convs) c.collect(out);
}

CBAM::CBAM(const std::string& name, int channels, int reduction, int spatial_kernel)
    : mlp_in(name + ".mlp_in", channels, std::max(1, channels / reduction)),
      mlp_out(name + ".mlp_out", std::max(1, channels / reduction), channels),
      spatial(name + ".spatial", 2, 1, spatial_kernel, false) {}

Var CBAM::operator()(Tape& t, Var x, Trace* trace) {
  auto mlp = [&](Var v) { return mlp_out(t, relu(mlp_in(t, v))); };
  Var ca = sigmoid(add(mlp(global_avg_pool(x)), mlp(global_max_pool(x))));
  Var y = mul(x, ca);
  Var maps[] = {channel_mean(y), channel_max(y)};
  Var sa = sigmoid(spatial(t, concat_channels(maps)));
  if (trace) *trace = Trace{ca, sa};
  return mul(y, sa);
}

void CBAM::collect(ParamList& out) {
  mlp_in.collect(out);
  mlp_out.collect(out);
  spatial.collect(out);
}

Bottleneck::Bottleneck(const std::string& name, int in, int out, int stride, int dilation,
                       const NetworkConfig& cfg)
    : reduce(name + ".reduce", in, out / 2, 1, true),
      grouped(name + ".grouped", out / 2, out / 2, 3, true, stride, dilation,
              cfg.bottleneck_groups),
      expand(name + ".expand", out / 2, out, 1, true),
      cbam(name + ".cbam", out, cfg.cbam_reduction, cfg.cbam_spatial_kernel) {
  if (stride != 1 || in != out) projection.emplace(name + ".projection", in, out, 1, true, stride);
}

Var Bottleneck::operator()(Tape& t, Var x) {
  const int in = reduce.weight.value.shape().c;
  if (x.shape().c != in) {
    throw ConfigError("bottleneck " + reduce.weight.name + ": expects " + std::to_string(in) +
                      " channels, got " + std::to_string(x.shape().c));
  }
  Var h = elu(reduce(t, x));
  h = elu(grouped(t, h));
  h = cbam(t, expand(t, h));
  Var skip = projection ? (*projection)(t, x) : x;
  return elu(add(h, skip));
}

void Bottleneck::collect(ParamList& out) {
  reduce.collect(out);
  grouped.collect(out);
  expand.collect(out);
  cbam.collect(out);
  if (projection) projection->collect(out);
}

AMF::AMF(const std::string& name, int channels, const NetworkConfig& cfg) : eps(cfg.amf_eps) {
  for (Modality m : kModalities) {
    const std::string hn = name + ".head_" + to_string(m);
    heads[static_cast<int>(m)] =
        Head{Conv(hn + ".conv", 3 * channels, channels, 3, false, 1, 1, cfg.attention_groups),
             BatchNormState(hn + ".bn", channels)};
  }
}

Var AMF::operator()(Tape& t, const Triple& x, Trace* trace, const LogitOffsets* offsets) {
  const Shape& s = x[Modality::roi].shape();
  for (Modality m : kModalities) {
    if (x[m].shape() != s) {
      throw ConfigError("AMF: modality " + to_string(m) + " shape " + to_string(x[m].shape()) +
                        " differs from ROI shape " + to_string(s));
    }
  }
  Var cat = concat_channels(x.v);
  std::array<Var, 3> alpha;
  for (int m = 0; m < 3; ++m) {
    Var logits = batchnorm(heads[m].conv(t, cat), heads[m].bn);
    if (offsets && (*offsets)[m] != 0.0) logits = add_scalar(logits, (*offsets)[m]);
    alpha[m] = sigmoid(logits);
  }
  Var denom = add_scalar(add(add(alpha[0], alpha[1]), alpha[2]), eps);
  std::array<Var, 3> norm;
  Var fused;
  for (int m = 0; m < 3; ++m) {
    norm[m] = div(alpha[m], denom);
    Var term = mul(norm[m], x.v[m]);
    fused = m == 0 ? term : add(fused, term);
  }
  if (trace) *trace = Trace{alpha, norm};
  return fused;
}

void AMF::collect(ParamList& out) {
  for (Head& h : heads) {
    h.conv.collect(out);
    out.push_back(&h.bn.gamma);
    out.push_back(&h.bn.beta);
  }
}

void AMF::collect_buffers(BufferList& out) {
  for (Head& h : heads) {
    const std::string base = h.bn.gamma.name.substr(0, h.bn.gamma.name.rfind('.'));
    out.emplace_back(base + ".running_mean", &h.bn.running_mean);
    out.emplace_back(base + ".running_var", &h.bn.running_var);
  }
}

void AMF::set_mode(NormMode mode) {
  for (Head& h : heads) h.bn.mode = mode;
}

ChannelGate::ChannelGate(const std::string& name, int channels, double init)
    : theta(name + ".theta", Tensor({1, channels, 1, 1, 1}, static_cast<Real>(init))) {}

Var ChannelGate::operator()(Tape& t, Var fused, Var anchor) {
  return add(anchor, mul(sigmoid(t.param(theta)), fused));
}

void ChannelGate::collect(ParamList& out) { out.push_back(&theta); }

GFBlock::GFBlock(const std::string& name, int channels, const NetworkConfig& cfg)
    : strategy(cfg.fusion), anchor(cfg.anchor) {
  switch (strategy) {
    case FusionStrategy::gated:
      amf = AMF(name + ".amf", channels, cfg);
      gate = ChannelGate(name + ".gate", channels, cfg.gate_init);
      break;
    case FusionStrategy::concat:
      mix = Conv(name + ".mix", 3 * channels, channels, 1, true);
      break;
    case FusionStrategy::weighted_average:
      modality_logits = Parameter(name + ".modality_logits", Tensor({1, 3, 1, 1, 1}));
      break;
    case FusionStrategy::none:
      break;
  }
}

Triple GFBlock::operator()(Tape& t, const Triple& x, Trace* trace,
                           const AMF::LogitOffsets* offsets) {
  Triple out = x;
  Var fused;
  switch (strategy) {
    case FusionStrategy::gated: {
      AMF::Trace at;
      fused = amf(t, x, &at, offsets);
      out[anchor] = gate(t, fused, x[anchor]);
      if (trace) trace->amf = at;
      break;
    }
    case FusionStrategy::concat:
      fused = mix(t, concat_channels(x.v));
      out[anchor] = add(x[anchor], fused);
      break;
    case FusionStrategy::weighted_average: {
      Var w = softmax_channels(t.param(modality_logits));
      for (int m = 0; m < 3; ++m) {
        Var term = mul(slice_channels(w, m, 1), x.v[m]);
        fused = m == 0 ? term : add(fused, term);
      }
      out[anchor] = add(x[anchor], fused);
      break;
    }
    case FusionStrategy::none:
      break;
  }
  if (trace) trace->fused = fused;
  return out;
}

void GFBlock::collect(ParamList& out) {
  switch (strategy) {
    case FusionStrategy::gated:
      amf.collect(out);
      gate.collect(out);
      break;
    case FusionStrategy::concat: mix.collect(out); break;
    case FusionStrategy::weighted_average: out.push_back(&modality_logits); break;
    case FusionStrategy::none: break;
  }
}

void GFBlock::collect_buffers(BufferList& out) {
  if (strategy == FusionStrategy::gated) amf.collect_buffers(out);
}

void GFBlock::set_mode(NormMode mode) {
  if (strategy == FusionStrategy::gated) amf.set_mode(mode);
}

FusionModule::FusionModule(const std::string& name, int in, int out, const NetworkConfig& cfg)
    : gf(name + ".gf", out, cfg) {
  for (Modality m : kModalities) {
    branches[static_cast<int>(m)] = Bottleneck(name + "." + to_string(m), in, out, 2, 1, cfg);
  }
}

void FusionModule::collect(ParamList& out) {
  for (Bottleneck& b : branches) b.collect(out);
  gf.collect(out);
}

// ---- network --------------------------------------------------------------------

GateFuseNet::GateFuseNet(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (Modality m : kModalities) {
    stems[static_cast<int>(m)] =
        Stem("stem." + to_string(m), cfg_.input_channels(m), cfg_.stem_width);
  }
  stem_gf = GFBlock("stem.gf", cfg_.stem_width, cfg_);
  int in = cfg_.stem_width;
  for (std::size_t i = 0; i < cfg_.stage_widths.size(); ++i) {
    const int out = cfg_.stage_widths[i];
    stages.emplace_back("stage" + std::to_string(i + 1), in, out, cfg_);
    in = out;
  }
  for (std::size_t i = 0; i < cfg_.decision_dilations.size(); ++i) {
    head.emplace_back("head.block" + std::to_string(i + 1), in, in, 1,
                      cfg_.decision_dilations[i], cfg_);
  }
  fc = Linear("head.fc", in, 1);
  init_params(0);
}

Var GateFuseNet::forward(Tape& t, const Triple& inputs, ForwardTrace* trace,
                         const ForwardHooks* hooks) {
  const Shape& ref = inputs[Modality::roi].shape();
  for (Modality m : kModalities) {
    const Shape& s = inputs[m].shape();
    if (s.c != cfg_.input_channels(m)) {
      throw ConfigError(to_string(m) + " input has " + std::to_string(s.c) +
                        " channels, network expects " + std::to_string(cfg_.input_channels(m)));
    }
    if (s.n != ref.n || s.d != ref.d || s.h != ref.h || s.w != ref.w) {
      throw ConfigError(to_string(m) + " input shape " + to_string(s) +
                        " does not match ROI shape " + to_string(ref));
    }
  }
  const AMF::LogitOffsets* offsets =
      hooks && hooks->amf_logit_offsets ? &*hooks->amf_logit_offsets : nullptr;

  Triple x;
  for (Modality m : kModalities) x[m] = stems[static_cast<int>(m)](t, inputs[m]);
  GFBlock::Trace gt;
  x = stem_gf(t, x, &gt, offsets);
  if (trace) {
    trace->stages.push_back(x);
    trace->gf.push_back(gt);
  }
  for (FusionModule& stage : stages) {
    for (int m = 0; m < 3; ++m) x.v[m] = stage.branches[m](t, x.v[m]);
    x = stage.gf(t, x, &gt, offsets);
    if (trace) {
      trace->stages.push_back(x);
      trace->gf.push_back(gt);
    }
  }
  Var a = x[cfg_.anchor];
  for (Bottleneck& b : head) a = b(t, a);
  Var pooled = global_avg_pool(a);
  if (trace) trace->pooled = pooled;
  return fc(t, pooled);
}

ParamList GateFuseNet::parameters() {
  ParamList out;
  for (Stem& s : stems) s.collect(out);
  stem_gf.collect(out);
  for (FusionModule& f : stages) f.collect(out);
  for (Bottleneck& b : head) b.collect(out);
  fc.collect(out);
  return out;
}

BufferList GateFuseNet::buffers() {
  BufferList out;
  stem_gf.collect_buffers(out);
  for (FusionModule& f : stages) f.gf.collect_buffers(out);
  return out;
}

Parameter* GateFuseNet::find_parameter(const std::string& name) {
  for (Parameter* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

void GateFuseNet::set_mode(NormMode mode) {
  mode_ = mode;
  stem_gf.set_mode(mode);
  for (FusionModule& f : stages) f.gf.set_mode(mode);
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void GateFuseNet::init_params(std::uint64_t seed) {
  Rng rng(seed);
  for (Parameter* p : parameters()) {
    Tensor& v = p->value;
    if (ends_with(p->name, ".weight")) {
      const Shape& s = v.shape();
      const double bound = std::sqrt(3.0 / (s.c * s.d * s.h * s.w));
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = static_cast<Real>(static_cast<float>(rng.uniform(-bound, bound)));
      }
    } else if (ends_with(p->name, ".gamma")) {
      v.fill(Real(1));
    } else if (ends_with(p->name, ".theta")) {
      v.fill(static_cast<Real>(cfg_.gate_init));
    } else {
      v.fill(Real(0));  // biases, BN shifts, modality logits
    }
    p->zero_grad();
  }
  for (auto& [name, buf] : buffers()) {
    buf->fill(ends_with(name, ".running_var") ? Real(1) : Real(0));
  }
}

int feature_size(const NetworkConfig& cfg, int size, int stage) {
  int s = size / 2;
  for (int i = 0; i < stage && i < static_cast<int>(cfg.stage_widths.size()); ++i) {
    s = (s - 1) / 2 + 1;
  }
  return s;
}

// ---- checkpoints ------------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void write_f32le(std::ostream& os, const Tensor& t) {
  std::vector<char> buf(t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(t[i]));
    std::memcpy(buf.data() + 4 * i, &bits, 4);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void read_f32le(const char* src, Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, src + 4 * i, 4);
    t[i] = static_cast<Real>(std::bit_cast<float>(bits));
  }
}

json shape_json(const Shape& s) { return json::array({s.n, s.c, s.d, s.h, s.w}); }

struct RawCheckpoint {
  json header;
  std::string payload;
};

RawCheckpoint read_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::string magic;
  std::getline(in, magic);
  if (magic != "GFN1") {
    throw FormatError(path + ": bad magic '" + magic.substr(0, 16) + "', expected 'GFN1'");
  }
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": missing JSON header");
  RawCheckpoint raw;
  try {
    raw.header = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(path + ": header is not valid JSON: " + e.what());
  }
  raw.payload.assign(std::istreambuf_iterator<char>(in), {});
  const auto expected = raw.header.value("payload_bytes", std::size_t{0});
  if (raw.payload.size() != expected) {
    throw FormatError(path + ": payload is " + std::to_string(raw.payload.size()) +
                      " bytes, header declares " + std::to_string(expected));
  }
  return raw;
}

}  // namespace

void save_checkpoint(const std::string& path, GateFuseNet& net, const json& meta) {
  json tensors = json::array();
  std::size_t offset = 0;
  std::vector<const Tensor*> order;
  auto add_entry = [&](const std::string& name, const char* kind, const Tensor& t) {
    tensors.push_back({{"name", name}, {"kind", kind}, {"shape", shape_json(t.shape())},
                       {"offset", offset}});
    offset += t.size() * 4;
    order.push_back(&t);
  };
  for (Parameter* p : net.parameters()) add_entry(p->name, "param", p->value);
  for (auto& [name, buf] : net.buffers()) add_entry(name, "buffer", *buf);
  const json header{{"config", net.config()}, {"tensors", tensors}, {"payload_bytes", offset},
                    {"dtype", "f32le"}, {"meta", meta}};

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << "GFN1\n" << header.dump() << "\n";
  for (const Tensor* t : order) write_f32le(out, *t);
  out.flush();
  if (!out) throw IoError("write failed for checkpoint '" + path + "'");
}

CheckpointHeader read_checkpoint_header(const std::string& path) {
  RawCheckpoint raw = read_raw(path);
  CheckpointHeader h;
  try {
    h.config = raw.header.at("config").get<NetworkConfig>();
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  h.meta = raw.header.value("meta", json::object());
  h.raw = std::move(raw.header);
  return h;
}

std::unique_ptr<GateFuseNet> load_checkpoint(const std::string& path) {
  auto net = std::make_unique<GateFuseNet>(read_checkpoint_header(path).config);
  load_checkpoint_into(path, *net);
  return net;
}

void load_checkpoint_into(const std::string& path, GateFuseNet& net) {
  RawCheckpoint raw = read_raw(path);
  std::map<std::string, json> entries;
  for (const json& e : raw.header.at("tensors")) entries[e.at("name").get<std::string>()] = e;

  std::set<std::string> used;
  auto load = [&](const std::string& name, Tensor& t) {
    auto it = entries.find(name);
    if (it == entries.end()) throw FormatError(path + ": missing tensor '" + name + "'");
    const json& e = it->second;
    const json want = shape_json(t.shape());
    if (e.at("shape") != want) {
      throw FormatError(path + ": tensor '" + name + "' has shape " + e.at("shape").dump() +
                        ", network expects " + want.dump());
    }
    const auto off = e.at("offset").get<std::size_t>();
    if (off + t.size() * 4 > raw.payload.size()) {
      throw FormatError(path + ": tensor '" + name + "' runs past the payload");
    }
    read_f32le(raw.payload.data() + off, t);
    used.insert(name);
  };
  for (Parameter* p : net.parameters()) load(p->name, p->value);
  for (auto& [name, buf] : net.buffers()) load(name, *buf);
  for (const auto& [name, e] : entries) {
    if (!used.contains(name)) throw FormatError(path + ": unexpected tensor '" + name + "'");
  }
}

}  // namespace gfn::inline GFN_ABI

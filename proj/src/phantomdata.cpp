#include "gfn/phantomdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "gfn/trainloop.hpp"

namespace gfn::inline GFN_ABI {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Nucleus> default_nuclei() {
  // Offsets are lateral distances from the midline; susceptibility roughly
  // follows the iron ranking of deep grey matter (GP > SN > STN > PU > CN).
  struct Pair {
    const char* name;
    double dx, y, z;
    std::array<double, 3> r;
    double chi, t1;
    bool pd;
  };
  const Pair pairs[] = {
      {"SN", 0.08, 0.45, 0.32, {0.045, 0.07, 0.05}, 0.12, 0.45, true},
      {"GP", 0.12, 0.52, 0.52, {0.045, 0.09, 0.07}, 0.14, 0.50, true},
      {"PU", 0.23, 0.55, 0.55, {0.06, 0.12, 0.09}, 0.06, 0.60, false},
      {"CN", 0.11, 0.72, 0.66, {0.045, 0.08, 0.07}, 0.05, 0.60, false},
      {"STN", 0.09, 0.50, 0.41, {0.035, 0.04, 0.035}, 0.09, 0.50, false},
  };
  std::vector<Nucleus> out;
  for (const Pair& p : pairs) {
    for (int side : {-1, 1}) {
      out.push_back(Nucleus{std::string(p.name) + (side < 0 ? "_R" : "_L"),
                            {0.5 + side * p.dx, p.y, p.z}, p.r, p.chi, p.t1, p.pd});
    }
  }
  return out;
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

double ellipsoid_r2(const std::array<double, 3>& p, const std::array<double, 3>& c,
                    const std::array<double, 3>& r) {
  double s = 0;
  for (int a = 0; a < 3; ++a) {
    const double t = (p[a] - c[a]) / r[a];
    s += t * t;
  }
  return s;
}

}  // namespace

void PhantomSpec::validate() const {
  require(size >= 4, "phantom.size must be >= 4");
  require(!nuclei.empty(), "phantom.nuclei is empty");
  require(effect > 0, "phantom.effect must be > 0");
  for (double v : {effect_jitter, baseline_jitter, scale_jitter, anatomy_jitter, qsm_noise,
                   t1_noise}) {
    require(v >= 0, "phantom jitter and noise levels must be >= 0");
  }
  for (double r : brain_radii) require(r > 0 && r <= 0.5, "phantom.brain_radii must be in (0, 0.5]");
  // Every nucleus, displaced by three standard deviations of anatomy jitter,
  // must stay inside the brain ellipsoid. Checked on a Fibonacci sphere.
  const std::array<double, 3> mid{0.5, 0.5, 0.5};
  const int n = 400;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (const Nucleus& k : nuclei) {
    for (double r : k.radii) require(r > 0, "nucleus " + k.name + ": radii must be > 0");
    for (int i = 0; i < n; ++i) {
      const double z = 1.0 - 2.0 * (i + 0.5) / n;
      const double rho = std::sqrt(1.0 - z * z);
      const std::array<double, 3> u{rho * std::cos(golden * i), rho * std::sin(golden * i), z};
      std::array<double, 3> p;
      for (int a = 0; a < 3; ++a) {
        p[a] = k.center[a] + u[a] * k.radii[a] + (u[a] >= 0 ? 1 : -1) * 3 * anatomy_jitter;
      }
      require(ellipsoid_r2(p, mid, brain_radii) <= 1.0,
              "nucleus " + k.name + " extends outside the brain mask");
    }
  }
}

PhantomSpec& PhantomSpec::noiseless() {
  effect_jitter = baseline_jitter = scale_jitter = anatomy_jitter = 0;
  qsm_noise = t1_noise = 0;
  return *this;
}

void to_json(json& j, const PhantomSpec& s) {
  json nuclei = json::array();
  for (const Nucleus& k : s.nuclei) {
    nuclei.push_back({{"name", k.name}, {"center", k.center}, {"radii", k.radii},
                      {"susceptibility", k.susceptibility}, {"t1", k.t1},
                      {"pd_affected", k.pd_affected}});
  }
  j = json{{"size", s.size},
           {"nuclei", nuclei},
           {"brain_radii", s.brain_radii},
           {"brain_t1", s.brain_t1},
           {"effect", s.effect},
           {"effect_jitter", s.effect_jitter},
           {"baseline_jitter", s.baseline_jitter},
           {"scale_jitter", s.scale_jitter},
           {"anatomy_jitter", s.anatomy_jitter},
           {"qsm_noise", s.qsm_noise},
           {"t1_noise", s.t1_noise}};
}

void from_json(const json& j, PhantomSpec& s) {
  if (!j.is_object()) throw ConfigError("phantom config must be a JSON object");
  const json defaults = s;
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("phantom: unknown key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("size", s.size);
    get("brain_radii", s.brain_radii);
    get("brain_t1", s.brain_t1);
    get("effect", s.effect);
    get("effect_jitter", s.effect_jitter);
    get("baseline_jitter", s.baseline_jitter);
    get("scale_jitter", s.scale_jitter);
    get("anatomy_jitter", s.anatomy_jitter);
    get("qsm_noise", s.qsm_noise);
    get("t1_noise", s.t1_noise);
    if (j.contains("nuclei")) {
      s.nuclei.clear();
      for (const json& k : j.at("nuclei")) {
        Nucleus n;
        k.at("name").get_to(n.name);
        k.at("center").get_to(n.center);
        k.at("radii").get_to(n.radii);
        k.at("susceptibility").get_to(n.susceptibility);
        k.at("t1").get_to(n.t1);
        k.at("pd_affected").get_to(n.pd_affected);
        s.nuclei.push_back(n);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("phantom: ") + e.what());
  }
}

SubjectVolumes synth_subject(const PhantomSpec& spec, int label, std::uint64_t seed) {
  spec.validate();
  require(label == 0 || label == 1, "label must be 0 or 1");
  Rng rng(seed);
  // Draw order is fixed and label-independent.
  const double scale = std::max(0.1, 1.0 + spec.scale_jitter * rng.normal());
  const double jitter = std::max(0.0, 1.0 + spec.effect_jitter * rng.normal());
  const std::size_t k = spec.nuclei.size();
  std::vector<std::array<double, 3>> centers(k);
  std::vector<double> chi(k);
  for (std::size_t i = 0; i < k; ++i) {
    const Nucleus& n = spec.nuclei[i];
    for (int a = 0; a < 3; ++a) centers[i][a] = n.center[a] + spec.anatomy_jitter * rng.normal();
    chi[i] = n.susceptibility * std::max(0.0, 1.0 + spec.baseline_jitter * rng.normal()) * scale;
    if (label == 1 && n.pd_affected) chi[i] *= 1.0 + spec.effect * jitter;
  }

  const int s = spec.size;
  const Shape shape{1, 1, s, s, s};
  SubjectVolumes v{Tensor(shape), Tensor(shape), Tensor(shape)};
  const std::array<double, 3> mid{0.5, 0.5, 0.5};
  std::size_t idx = 0;
  for (int d = 0; d < s; ++d) {
    for (int h = 0; h < s; ++h) {
      for (int w = 0; w < s; ++w, ++idx) {
        const std::array<double, 3> p{(w + 0.5) / s, (h + 0.5) / s, (d + 0.5) / s};
        // Brain: flat interior with a smooth cosine roll-off at the edge.
        const double r = std::sqrt(ellipsoid_r2(p, mid, spec.brain_radii));
        double t1 = 0;
        if (r < 0.85) {
          t1 = spec.brain_t1;
        } else if (r < 1.0) {
          t1 = spec.brain_t1 * 0.5 * (1 + std::cos(std::numbers::pi * (r - 0.85) / 0.15));
        }
        double qsm = 0;
        int lab = 0;
        for (std::size_t i = 0; i < k; ++i) {
          if (ellipsoid_r2(p, centers[i], spec.nuclei[i].radii) <= 1.0) {
            lab = static_cast<int>(i) + 1;
            qsm = chi[i];
            t1 = spec.nuclei[i].t1;
            break;
          }
        }
        v.qsm[idx] = static_cast<Real>(qsm + spec.qsm_noise * rng.normal());
        v.t1[idx] = static_cast<Real>(t1 + spec.t1_noise * rng.normal());
        v.roi[idx] = static_cast<Real>(lab);
      }
    }
  }
  return v;
}

Tensor one_hot(const Tensor& roi, int k) {
  const Shape s = roi.shape();
  require(s.c == 1, "one_hot: ROI volume must have one channel");
  Tensor out({s.n, k, s.d, s.h, s.w});
  const std::size_t vox = s.spatial();
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < vox; ++i) {
      const double v = roi[n * vox + i];
      const long lab = std::lround(v);
      if (lab < 0 || lab > k || std::abs(v - lab) > 1e-3) {
        throw ConfigError("ROI label " + std::to_string(v) + " outside 0.." + std::to_string(k));
      }
      if (lab > 0) out[(static_cast<std::size_t>(n) * k + (lab - 1)) * vox + i] = Real(1);
    }
  }
  return out;
}

// ---- augmentation ---------------------------------------------------------------

void AugmentSpec::validate() const {
  for (double p : {affine_p, bias_p, noise_p}) {
    require(p >= 0 && p <= 1, "augment probabilities must be in [0, 1]");
  }
  require(max_rotation_deg >= 0 && max_translation >= 0, "augment ranges must be >= 0");
  require(min_scale > 0 && min_scale <= max_scale, "augment scale range must be 0 < min <= max");
  require(bias_coefficient >= 0 && bias_order >= 0, "augment bias field settings must be >= 0");
  require(noise_sigma >= 0, "augment.noise_sigma must be >= 0");
}

AugmentSpec AugmentSpec::none() {
  AugmentSpec a;
  a.affine_p = a.bias_p = a.noise_p = 0;
  return a;
}

void to_json(json& j, const AugmentSpec& s) {
  j = json{{"affine_p", s.affine_p},         {"max_rotation_deg", s.max_rotation_deg},
           {"max_translation", s.max_translation}, {"min_scale", s.min_scale},
           {"max_scale", s.max_scale},       {"bias_p", s.bias_p},
           {"bias_coefficient", s.bias_coefficient}, {"bias_order", s.bias_order},
           {"bias_t1_only", s.bias_t1_only}, {"noise_p", s.noise_p},
           {"noise_sigma", s.noise_sigma}};
}

void from_json(const json& j, AugmentSpec& s) {
  if (!j.is_object()) throw ConfigError("augment config must be a JSON object");
  const json defaults = s;
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("augment: unknown key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("affine_p", s.affine_p);
    get("max_rotation_deg", s.max_rotation_deg);
    get("max_translation", s.max_translation);
    get("min_scale", s.min_scale);
    get("max_scale", s.max_scale);
    get("bias_p", s.bias_p);
    get("bias_coefficient", s.bias_coefficient);
    get("bias_order", s.bias_order);
    get("bias_t1_only", s.bias_t1_only);
    get("noise_p", s.noise_p);
    get("noise_sigma", s.noise_sigma);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("augment: ") + e.what());
  }
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat3 rotation(int axis, double deg) {
  const double t = deg * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  const int i = (axis + 1) % 3, j = (axis + 2) % 3;
  Mat3 m{};
  m[axis][axis] = 1;
  m[i][i] = c;
  m[i][j] = -s;
  m[j][i] = s;
  m[j][j] = c;
  return m;
}

}  // namespace

Tensor affine_resample(const Tensor& vol, const Affine& a, Interp interp) {
  require(a.scale > 0, "affine scale must be > 0");
  const Shape s = vol.shape();
  // R = Rz Ry Rx; the inverse map needs R^T / scale.
  const Mat3 r = matmul(rotation(2, a.rotation_deg[2]),
                        matmul(rotation(1, a.rotation_deg[1]), rotation(0, a.rotation_deg[0])));
  const std::array<int, 3> dims{s.w, s.h, s.d};
  const std::array<double, 3> c{(s.w - 1) / 2.0, (s.h - 1) / 2.0, (s.d - 1) / 2.0};
  Tensor out(s);
  const std::size_t vox = s.spatial();
  auto at = [&](const Real* src, int x, int y, int z) -> double {
    if (x < 0 || y < 0 || z < 0 || x >= s.w || y >= s.h || z >= s.d) return 0.0;
    return src[(static_cast<std::size_t>(z) * s.h + y) * s.w + x];
  };
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const Real* src = vol.ptr() + nc * vox;
    Real* dst = out.ptr() + nc * vox;
    std::size_t idx = 0;
    for (int d = 0; d < s.d; ++d) {
      for (int h = 0; h < s.h; ++h) {
        for (int w = 0; w < s.w; ++w, ++idx) {
          const std::array<double, 3> q{w - c[0] - a.translation[0], h - c[1] - a.translation[1],
                                        d - c[2] - a.translation[2]};
          std::array<double, 3> p;
          for (int i = 0; i < 3; ++i) {
            p[i] = (r[0][i] * q[0] + r[1][i] * q[1] + r[2][i] * q[2]) / a.scale + c[i];
          }
          if (interp == Interp::nearest) {
            dst[idx] = static_cast<Real>(at(src, static_cast<int>(std::lround(p[0])),
                                            static_cast<int>(std::lround(p[1])),
                                            static_cast<int>(std::lround(p[2]))));
            continue;
          }
          const int x0 = static_cast<int>(std::floor(p[0]));
          const int y0 = static_cast<int>(std::floor(p[1]));
          const int z0 = static_cast<int>(std::floor(p[2]));
          if (x0 < -1 || y0 < -1 || z0 < -1 || x0 >= dims[0] || y0 >= dims[1] || z0 >= dims[2]) {
            dst[idx] = 0;
            continue;
          }
          const double fx = p[0] - x0, fy = p[1] - y0, fz = p[2] - z0;
          double v = 0;
          for (int k = 0; k < 8; ++k) {
            const int dx = k & 1, dy = (k >> 1) & 1, dz = (k >> 2) & 1;
            const double wgt = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
            if (wgt != 0) v += wgt * at(src, x0 + dx, y0 + dy, z0 + dz);
          }
          dst[idx] = static_cast<Real>(v);
        }
      }
    }
  }
  return out;
}

Tensor bias_field(const Shape& s, int order, double coefficient, Rng& rng) {
  struct Term {
    int i, j, k;
    double c;
  };
  std::vector<Term> terms;
  for (int i = 0; i <= order; ++i)
    for (int j = 0; i + j <= order; ++j)
      for (int k = 0; i + j + k <= order; ++k)
        terms.push_back({i, j, k, rng.uniform(-coefficient, coefficient)});
  auto norm = [](int i, int n) { return n > 1 ? 2.0 * i / (n - 1) - 1.0 : 0.0; };
  Tensor f({1, 1, s.d, s.h, s.w});
  std::size_t idx = 0;
  for (int d = 0; d < s.d; ++d) {
    for (int h = 0; h < s.h; ++h) {
      for (int w = 0; w < s.w; ++w, ++idx) {
        const double x = norm(w, s.w), y = norm(h, s.h), z = norm(d, s.d);
        double e = 0;
        for (const Term& t : terms) e += t.c * std::pow(x, t.i) * std::pow(y, t.j) * std::pow(z, t.k);
        f[idx] = static_cast<Real>(std::exp(e));
      }
    }
  }
  return f;
}

SubjectVolumes augment(const SubjectVolumes& v, const AugmentSpec& aug, Rng& rng) {
  SubjectVolumes out = v;
  // Every gate draw happens regardless of the outcome of earlier ones.
  if (rng.uniform() < aug.affine_p) {
    Affine a;
    for (double& r : a.rotation_deg) r = rng.uniform(-aug.max_rotation_deg, aug.max_rotation_deg);
    for (double& t : a.translation) t = rng.uniform(-aug.max_translation, aug.max_translation);
    a.scale = rng.uniform(aug.min_scale, aug.max_scale);
    out.qsm = affine_resample(out.qsm, a, Interp::trilinear);
    out.t1 = affine_resample(out.t1, a, Interp::trilinear);
    out.roi = affine_resample(out.roi, a, Interp::nearest);
  }
  if (rng.uniform() < aug.bias_p) {
    const Tensor f = bias_field(out.t1.shape(), aug.bias_order, aug.bias_coefficient, rng);
    for (std::size_t i = 0; i < f.size(); ++i) out.t1[i] *= f[i];
    if (!aug.bias_t1_only) {
      for (std::size_t i = 0; i < f.size(); ++i) out.qsm[i] *= f[i];
    }
  }
  if (rng.uniform() < aug.noise_p) {
    for (std::size_t i = 0; i < out.qsm.size(); ++i) {
      out.qsm[i] += static_cast<Real>(aug.noise_sigma * rng.normal());
    }
    for (std::size_t i = 0; i < out.t1.size(); ++i) {
      out.t1[i] += static_cast<Real>(aug.noise_sigma * rng.normal());
    }
  }
  return out;
}

Tensor crop_or_pad(const Tensor& vol, int d, int h, int w) {
  const Shape s = vol.shape();
  require(d >= 1 && h >= 1 && w >= 1, "crop_or_pad: target size must be >= 1");
  const Shape o{s.n, s.c, d, h, w};
  Tensor out(o);
  // Source index = output index + shift; the shift rounds toward the low
  // side so the extra voxel of an odd difference lands high.
  auto shift = [](int in, int target) {
    const int diff = target - in;
    return diff >= 0 ? -(diff / 2) : (-diff) / 2;
  };
  const int sd = shift(s.d, d), sh = shift(s.h, h), sw = shift(s.w, w);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int z = 0; z < d; ++z) {
        const int iz = z + sd;
        if (iz < 0 || iz >= s.d) continue;
        for (int y = 0; y < h; ++y) {
          const int iy = y + sh;
          if (iy < 0 || iy >= s.h) continue;
          for (int x = 0; x < w; ++x) {
            const int ix = x + sw;
            if (ix >= 0 && ix < s.w) out.at(n, c, z, y, x) = vol.at(n, c, iz, iy, ix);
          }
        }
      }
  return out;
}

// ---- GFNVOL1 ------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "volume I/O assumes a little-endian host");

void save_volume(const std::string& path, const Tensor& vol, const std::string& modality,
                 std::array<double, 3> voxel_size) {
  const Shape s = vol.shape();
  require(s.n == 1 && s.c == 1, "save_volume: expects a (1,1,D,H,W) volume, got " + to_string(s));
  const json header{{"magic", "GFNVOL1"}, {"shape", {s.d, s.h, s.w}},
                    {"voxel_size", voxel_size}, {"dtype", "f32le"}, {"modality", modality}};
  std::vector<char> buf(vol.size() * 4);
  for (std::size_t i = 0; i < vol.size(); ++i) {
    const float f = static_cast<float>(vol[i]);
    std::memcpy(buf.data() + 4 * i, &f, 4);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write volume '" + path + "'");
  out << header.dump() << "\n";
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for volume '" + path + "'");
}

Tensor load_volume(const std::string& path, VolumeHeader* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open volume '" + path + "'");
  std::string line;
  std::getline(in, line);
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception&) {
    throw FormatError(path + ": header is not a GFNVOL1 JSON line");
  }
  VolumeHeader vh;
  try {
    const std::string magic = h.value("magic", std::string{});
    if (magic != "GFNVOL1") {
      throw FormatError(path + ": magic '" + magic + "', expected 'GFNVOL1'");
    }
    const std::string dtype = h.at("dtype").get<std::string>();
    if (dtype != "f32le") throw FormatError(path + ": dtype '" + dtype + "', expected 'f32le'");
    vh.shape = h.at("shape").get<std::array<int, 3>>();
    vh.voxel_size = h.value("voxel_size", std::array<double, 3>{1, 1, 1});
    vh.modality = h.value("modality", std::string{});
  } catch (const json::exception& e) {
    throw FormatError(path + ": bad header: " + e.what());
  }
  for (int v : vh.shape) {
    if (v < 1) throw FormatError(path + ": shape entries must be >= 1");
  }
  const std::string payload(std::istreambuf_iterator<char>(in), {});
  const std::size_t count = static_cast<std::size_t>(vh.shape[0]) * vh.shape[1] * vh.shape[2];
  if (payload.size() != count * 4) {
    throw FormatError(path + ": payload is " + std::to_string(payload.size()) +
                      " bytes, shape [" + std::to_string(vh.shape[0]) + "," +
                      std::to_string(vh.shape[1]) + "," + std::to_string(vh.shape[2]) +
                      "] expects " + std::to_string(count * 4));
  }
  Tensor t({1, 1, vh.shape[0], vh.shape[1], vh.shape[2]});
  for (std::size_t i = 0; i < count; ++i) {
    float f;
    std::memcpy(&f, payload.data() + 4 * i, 4);
    t[i] = static_cast<Real>(f);
  }
  if (header) *header = vh;
  return t;
}

// ---- datasets -----------------------------------------------------------------------

namespace {

std::string subject_id(int i, int n) {
  const int width = std::max<int>(3, static_cast<int>(std::to_string(n - 1).size()));
  std::string num = std::to_string(i);
  return "sub-" + std::string(width - num.size(), '0') + num;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace

Manifest build_manifest(const PhantomSpec& spec, int n_subjects, std::uint64_t seed,
                        const std::string& dir, int folds) {
  require(n_subjects >= 2, "need at least 2 subjects (got " + std::to_string(n_subjects) + ")");
  spec.validate();
  const int n_pd = (n_subjects + 1) / 2;
  std::vector<int> labels(n_subjects, 0);
  std::fill(labels.begin() + (n_subjects - n_pd), labels.end(), 1);
  Rng rng(derive_seed(seed, 0));
  rng.shuffle(labels);

  std::vector<std::string> split(n_subjects, "train");
  if (n_subjects >= 10) {
    const Split sp = split_dataset(labels, seed, folds);
    for (int i : sp.test) split[i] = "test";
    for (std::size_t f = 0; f < sp.folds.size(); ++f) {
      for (int i : sp.folds[f]) split[i] = "fold" + std::to_string(f);
    }
  }

  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "subjects", ec);
  if (ec) throw IoError("cannot create '" + (root / "subjects").string() + "': " + ec.message());

  Manifest m;
  m.dir = dir;
  std::ostringstream csv;
  csv << "id,label,qsm,t1w,roi,split\n";
  for (int i = 0; i < n_subjects; ++i) {
    SubjectRecord r;
    r.id = subject_id(i, n_subjects);
    r.label = labels[i];
    r.qsm = "subjects/" + r.id + "_qsm.gfnvol";
    r.t1w = "subjects/" + r.id + "_t1w.gfnvol";
    r.roi = "subjects/" + r.id + "_roi.gfnvol";
    r.split = split[i];
    const SubjectVolumes v = synth_subject(spec, r.label, derive_seed(seed, 1000 + i));
    save_volume((root / r.qsm).string(), v.qsm, "qsm");
    save_volume((root / r.t1w).string(), v.t1, "t1w");
    save_volume((root / r.roi).string(), v.roi, "roi");
    csv << r.id << ',' << r.label << ',' << r.qsm << ',' << r.t1w << ',' << r.roi << ','
        << r.split << '\n';
    m.records.push_back(r);
  }
  write_text(root / "manifest.csv", csv.str());
  const json info{{"spec", spec},
                  {"subjects", n_subjects},
                  {"seed", seed},
                  {"folds", folds},
                  {"class_counts", {{"HC", n_subjects - n_pd}, {"PD", n_pd}}},
                  {"roi_labels", [&] {
                     json names = json::array();
                     for (const Nucleus& k : spec.nuclei) names.push_back(k.name);
                     return names;
                   }()}};
  write_text(root / "dataset.json", info.dump(2) + "\n");
  return m;
}

Manifest read_manifest(const std::string& dir) {
  const fs::path path = fs::path(dir) / "manifest.csv";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != "id,label,qsm,t1w,roi,split") {
    throw FormatError(path.string() + ": unexpected header '" + line + "'");
  }
  Manifest m;
  m.dir = dir;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 6 || (f[1] != "0" && f[1] != "1")) {
      throw FormatError(path.string() + ": malformed row " + std::to_string(row));
    }
    m.records.push_back({f[0], f[1] == "1" ? 1 : 0, f[2], f[3], f[4], f[5]});
  }
  return m;
}

Sample load_sample(const Manifest& m, const SubjectRecord& r) {
  const fs::path root(m.dir);
  Sample s;
  s.id = r.id;
  s.label = r.label;
  s.volumes.qsm = load_volume((root / r.qsm).string());
  s.volumes.t1 = load_volume((root / r.t1w).string());
  s.volumes.roi = load_volume((root / r.roi).string());
  if (s.volumes.t1.shape() != s.volumes.qsm.shape() ||
      s.volumes.roi.shape() != s.volumes.qsm.shape()) {
    throw FormatError("subject " + r.id + ": volume shapes differ");
  }
  return s;
}

std::vector<Sample> load_samples(const Manifest& m, const std::vector<int>& indices) {
  std::vector<Sample> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(load_sample(m, m.records.at(i)));
  return out;
}

}  // namespace gfn::inline GFN_ABI

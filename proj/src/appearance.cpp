#include "tomofocus/appearance.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include "tomofocus/errors.hpp"
#include "tomofocus/iqm.hpp"
#include "tomofocus/parallel.hpp"

namespace tomofocus {

NormalizedSlices normalize_slices(const SliceTriplets& s) {
  NormalizedSlices out;
  for (int o = 0; o < 3; ++o) {
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (int k = 0; k < 3; ++k) {
      for (double v : s.slices[3 * o + k].data) {
        sum += v;
        sq += v * v;
      }
      n += s.slices[3 * o + k].data.size();
    }
    if (n == 0) throw ShapeError("empty slice");
    const double mean = sum / n;
    const double var = std::max(0.0, sq / n - mean * mean);
    const double sd = var > 1e-24 ? std::sqrt(var) : 1.0;
    for (int k = 0; k < 3; ++k) {
      const SliceImage& img = s.slices[3 * o + k];
      out.rows[3 * o + k] = img.rows;
      out.cols[3 * o + k] = img.cols;
      auto& d = out.data[3 * o + k];
      d.resize(img.data.size());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>((img.data[i] - mean) / sd);
    }
  }
  return out;
}

double loss(const Prediction& out, const Labels& y) {
  if (out.r2.size() != y.all.size() || out.r3.size() != y.in_plane.size() || out.r4.size() != y.out_plane.size())
    throw ShapeError("prediction and labels differ in length");
  double l = (out.r1 - y.mrpe) * (out.r1 - y.mrpe);
  for (std::size_t i = 0; i < out.r2.size(); ++i) {
    l += (out.r2[i] - y.all[i]) * (out.r2[i] - y.all[i]);
    l += (out.r3[i] - y.in_plane[i]) * (out.r3[i] - y.in_plane[i]);
    l += (out.r4[i] - y.out_plane[i]) * (out.r4[i] - y.out_plane[i]);
  }
  return l;
}

// ---- descriptor

void ModelDescriptor::validate() const {
  if (n_views < 1) throw ConfigError("model: n_views must be positive");
  for (const auto& d : input_dims)
    if (d[0] < 1 || d[1] < 1) throw ConfigError("model: input dimensions must be positive");
  if (input_pool < 1) throw ConfigError("model: input_pool must be >= 1");
  for (int c : channels)
    if (c < 1) throw ConfigError("model: channel counts must be positive");
  if (pooled < 1) throw ConfigError("model: pooled size must be >= 1");
  if (fusion < 1) throw ConfigError("model: fusion width must be positive");
  if (!(leak >= 0 && leak <= 1)) throw ConfigError("model: leak must lie in [0, 1]");
}

nlohmann::json ModelDescriptor::to_json() const {
  nlohmann::json dims = nlohmann::json::array();
  for (const auto& d : input_dims) dims.push_back({d[0], d[1]});
  return {{"n_views", n_views}, {"input_dims", dims},   {"input_pool", input_pool}, {"channels", channels},
          {"pooled", pooled},   {"fusion", fusion},     {"leak", leak}};
}

ModelDescriptor ModelDescriptor::from_json(const nlohmann::json& j) {
  ModelDescriptor d;
  try {
    d.n_views = j.at("n_views").get<int>();
    const auto& dims = j.at("input_dims");
    if (!dims.is_array() || dims.size() != 3) throw ConfigError("model: input_dims needs three entries");
    for (int o = 0; o < 3; ++o) d.input_dims[o] = {dims[o].at(0).get<int>(), dims[o].at(1).get<int>()};
    d.input_pool = j.at("input_pool").get<int>();
    const auto& ch = j.at("channels");
    if (!ch.is_array() || ch.size() != 4) throw ConfigError("model: channels needs four entries");
    for (int b = 0; b < 4; ++b) d.channels[b] = ch[b].get<int>();
    d.pooled = j.at("pooled").get<int>();
    d.fusion = j.at("fusion").get<int>();
    d.leak = j.at("leak").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model descriptor: ") + e.what());
  }
  d.validate();
  return d;
}

ModelDescriptor ModelDescriptor::for_slices(const SliceSet& set, int n_views) {
  ModelDescriptor d;
  d.n_views = n_views;
  for (int o = 0; o < 3; ++o) {
    const SlicePlane& p = set.plane(static_cast<Orientation>(o), 0);
    d.input_dims[o] = {p.rows, p.cols};
  }
  d.validate();
  return d;
}

// ---- building blocks

namespace {

struct Map {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;
  Map() = default;
  Map(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(std::size_t(c_) * h_ * w_, 0.0) {}
  double* ch(int k) { return v.data() + std::size_t(k) * h * w; }
  const double* ch(int k) const { return v.data() + std::size_t(k) * h * w; }
};

// Average pooling with window k, stride k; partial windows at the border are
// averaged over their valid pixels.
Map pool_forward(const Map& in, int k) {
  Map out(in.c, (in.h + k - 1) / k, (in.w + k - 1) / k);
  for (int c = 0; c < in.c; ++c) {
    const double* s = in.ch(c);
    double* d = out.ch(c);
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        const int y1 = std::min(in.h, (y + 1) * k), x1 = std::min(in.w, (x + 1) * k);
        double sum = 0;
        for (int yy = y * k; yy < y1; ++yy)
          for (int xx = x * k; xx < x1; ++xx) sum += s[yy * in.w + xx];
        d[y * out.w + x] = sum / ((y1 - y * k) * (x1 - x * k));
      }
  }
  return out;
}

void pool_backward(const Map& dout, int k, Map& din) {
  for (int c = 0; c < din.c; ++c) {
    const double* g = dout.ch(c);
    double* d = din.ch(c);
    for (int y = 0; y < dout.h; ++y)
      for (int x = 0; x < dout.w; ++x) {
        const int y1 = std::min(din.h, (y + 1) * k), x1 = std::min(din.w, (x + 1) * k);
        const double share = g[y * dout.w + x] / ((y1 - y * k) * (x1 - x * k));
        for (int yy = y * k; yy < y1; ++yy)
          for (int xx = x * k; xx < x1; ++xx) d[yy * din.w + xx] += share;
      }
  }
}

inline int bin_start(int i, int n, int p) { return (i * n) / p; }
inline int bin_end(int i, int n, int p) { return ((i + 1) * n + p - 1) / p; }

Map adaptive_forward(const Map& in, int p) {
  Map out(in.c, p, p);
  for (int c = 0; c < in.c; ++c)
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) {
        const int y0 = bin_start(i, in.h, p), y1 = bin_end(i, in.h, p);
        const int x0 = bin_start(j, in.w, p), x1 = bin_end(j, in.w, p);
        double sum = 0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) sum += in.ch(c)[y * in.w + x];
        out.ch(c)[i * p + j] = sum / ((y1 - y0) * (x1 - x0));
      }
  return out;
}

void adaptive_backward(const Map& dout, int p, Map& din) {
  for (int c = 0; c < din.c; ++c)
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) {
        const int y0 = bin_start(i, din.h, p), y1 = bin_end(i, din.h, p);
        const int x0 = bin_start(j, din.w, p), x1 = bin_end(j, din.w, p);
        const double share = dout.ch(c)[i * p + j] / ((y1 - y0) * (x1 - x0));
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) din.ch(c)[y * din.w + x] += share;
      }
}

// 3x3 convolution, zero padding, output size = input size.
Map conv_forward(const Map& in, const double* w, const double* b, int co) {
  Map out(co, in.h, in.w);
  const int h = in.h, wd = in.w;
  for (int o = 0; o < co; ++o) {
    double* dst = out.ch(o);
    std::fill(dst, dst + std::size_t(h) * wd, b[o]);
    for (int i = 0; i < in.c; ++i) {
      const double* src = in.ch(i);
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const double k = w[((std::size_t(o) * in.c + i) * 3 + ky) * 3 + kx];
          const int dy = ky - 1, dx = kx - 1;
          const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
          for (int y = y0; y < y1; ++y) {
            const double* s = src + (y + dy) * wd + dx;
            double* d = dst + y * wd;
            for (int x = x0; x < x1; ++x) d[x] += k * s[x];
          }
        }
    }
  }
  return out;
}

void conv_backward(const Map& in, const double* w, const Map& dout, double* dw, double* db, Map* din) {
  const int h = in.h, wd = in.w;
  for (int o = 0; o < dout.c; ++o) {
    const double* g = dout.ch(o);
    double s = 0;
    for (std::size_t p = 0; p < std::size_t(h) * wd; ++p) s += g[p];
    db[o] += s;
    for (int i = 0; i < in.c; ++i) {
      const double* src = in.ch(i);
      double* back = din ? din->ch(i) : nullptr;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const std::size_t idx = ((std::size_t(o) * in.c + i) * 3 + ky) * 3 + kx;
          const double k = w[idx];
          const int dy = ky - 1, dx = kx - 1;
          const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
          double acc = 0;
          for (int y = y0; y < y1; ++y) {
            const double* sr = src + (y + dy) * wd + dx;
            const double* gr = g + y * wd;
            for (int x = x0; x < x1; ++x) acc += gr[x] * sr[x];
            if (back) {
              double* br = back + (y + dy) * wd + dx;
              for (int x = x0; x < x1; ++x) br[x] += k * gr[x];
            }
          }
          dw[idx] += acc;
        }
    }
  }
}

void activate(Map& z, double leak) {
  if (leak == 1.0) return;
  for (double& v : z.v)
    if (v < 0) v *= leak;
}

// dz = da * f'(z), in place on da
void activate_backward(const Map& z, double leak, Map& g) {
  if (leak == 1.0) return;
  for (std::size_t i = 0; i < g.v.size(); ++i)
    if (z.v[i] < 0) g.v[i] *= leak;
}

constexpr const char* kHeadNames[4] = {"head1", "head2", "head3", "head4"};

}  // namespace

// ---- model

struct RegressorModel::Cache {
  struct Branch {
    std::array<Map, 4> x;  // block inputs
    std::array<Map, 4> z;  // pre-activations
    Map last;              // after the final pooling
  };
  std::array<Branch, 3> branch;
  Map fused_in;  // concatenated adaptive pools, C x P x P
  Map pre;       // fusion pre-activation
  std::vector<double> feat;
};

RegressorModel::RegressorModel(ModelDescriptor d, std::uint64_t seed) : desc_(std::move(d)) {
  desc_.validate();
  layout();
  std::mt19937_64 rng(seed);
  for (const ParamGroup& g : groups_) {
    if (g.name.ends_with(".b")) continue;
    std::size_t fan_in = 1;
    if (g.name.starts_with("conv")) {
      const int b = g.name[4] - '0';
      fan_in = std::size_t(b == 0 ? 3 : desc_.channels[b - 1]) * 9;
    } else if (g.name == "fusion.w") {
      fan_in = std::size_t(3) * desc_.channels[3];
    } else {
      fan_in = desc_.fusion;
    }
    const double bound = std::sqrt((g.name.starts_with("head") ? 1.0 : 6.0) / fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < g.size; ++i) params_[g.offset + i] = u(rng);
  }
}

void RegressorModel::layout() {
  groups_.clear();
  std::size_t off = 0;
  auto add = [&](std::string name, std::size_t n) {
    groups_.push_back({std::move(name), off, n});
    off += n;
  };
  int cin = 3;
  for (int b = 0; b < 4; ++b) {
    const int c = desc_.channels[b];
    add("conv" + std::to_string(b) + ".w", std::size_t(c) * cin * 9);
    add("conv" + std::to_string(b) + ".b", c);
    cin = c;
  }
  add("fusion.w", std::size_t(desc_.fusion) * 3 * desc_.channels[3]);
  add("fusion.b", desc_.fusion);
  for (int h = 0; h < 4; ++h) {
    const std::size_t n = h == 0 ? 1 : desc_.n_views;
    add(std::string(kHeadNames[h]) + ".w", n * desc_.fusion);
    add(std::string(kHeadNames[h]) + ".b", n);
  }
  params_.assign(off, 0.0);
}

const ParamGroup& RegressorModel::group(const std::string& name) const {
  for (const auto& g : groups_)
    if (g.name == name) return g;
  throw ConfigError("model: no parameter group " + name);
}

const double* RegressorModel::trunk_weights(Orientation) const { return params_.data() + group("conv0.w").offset; }

void RegressorModel::check_input(const NormalizedSlices& x) const {
  if (params_.empty()) throw StateError("model has no parameters");
  for (int o = 0; o < 3; ++o)
    for (int k = 0; k < 3; ++k) {
      const int i = 3 * o + k;
      if (x.rows[i] != desc_.input_dims[o][0] || x.cols[i] != desc_.input_dims[o][1] ||
          x.data[i].size() != std::size_t(x.rows[i]) * x.cols[i])
        throw ShapeError("model input: slice " + std::to_string(i) + " has shape " + std::to_string(x.rows[i]) + "x" +
                         std::to_string(x.cols[i]) + ", expected " + std::to_string(desc_.input_dims[o][0]) + "x" +
                         std::to_string(desc_.input_dims[o][1]));
    }
}

Prediction RegressorModel::run(const NormalizedSlices& x, Cache* cache) const {
  check_input(x);
  const double* P = params_.data();
  const int pp = desc_.pooled, pp2 = pp * pp;
  const int c4 = desc_.channels[3];
  Map fused(3 * c4, pp, pp);
  Cache local;
  Cache& c = cache ? *cache : local;
  for (int o = 0; o < 3; ++o) {
    const int r = desc_.input_dims[o][0], cc = desc_.input_dims[o][1];
    Map in(3, r, cc);
    for (int k = 0; k < 3; ++k) std::copy(x.data[3 * o + k].begin(), x.data[3 * o + k].end(), in.ch(k));
    Map cur = desc_.input_pool > 1 ? pool_forward(in, desc_.input_pool) : std::move(in);
    auto& br = c.branch[o];
    for (int b = 0; b < 4; ++b) {
      const ParamGroup& gw = groups_[2 * b];
      const ParamGroup& gb = groups_[2 * b + 1];
      Map z = conv_forward(cur, P + gw.offset, P + gb.offset, desc_.channels[b]);
      Map a = z;
      activate(a, desc_.leak);
      if (cache) {
        br.x[b] = std::move(cur);
        br.z[b] = std::move(z);
      }
      cur = pool_forward(a, 2);
    }
    const Map ap = adaptive_forward(cur, pp);
    std::copy(ap.v.begin(), ap.v.end(), fused.ch(o * c4));
    if (cache) br.last = std::move(cur);
  }
  const ParamGroup& fw = group("fusion.w");
  const ParamGroup& fb = group("fusion.b");
  const int cf = 3 * c4, nf = desc_.fusion;
  Map pre(nf, pp, pp);
  for (int f = 0; f < nf; ++f)
    for (int q = 0; q < pp2; ++q) {
      double s = P[fb.offset + f];
      for (int k = 0; k < cf; ++k) s += P[fw.offset + std::size_t(f) * cf + k] * fused.v[std::size_t(k) * pp2 + q];
      pre.v[std::size_t(f) * pp2 + q] = s;
    }
  std::vector<double> feat(nf, 0.0);
  for (int f = 0; f < nf; ++f) {
    double s = 0;
    for (int q = 0; q < pp2; ++q) {
      const double v = pre.v[std::size_t(f) * pp2 + q];
      s += v < 0 ? desc_.leak * v : v;
    }
    feat[f] = s / pp2;
  }
  Prediction out;
  for (int h = 0; h < 4; ++h) {
    const ParamGroup& hw = groups_[10 + 2 * h];
    const ParamGroup& hb = groups_[11 + 2 * h];
    std::vector<double> y(hb.size);
    for (std::size_t i = 0; i < hb.size; ++i) {
      double s = P[hb.offset + i];
      const double* row = P + hw.offset + i * nf;
      for (int f = 0; f < nf; ++f) s += row[f] * feat[f];
      y[i] = s;
    }
    if (h == 0) out.r1 = y[0];
    else if (h == 1) out.r2 = std::move(y);
    else if (h == 2) out.r3 = std::move(y);
    else out.r4 = std::move(y);
  }
  if (cache) {
    c.fused_in = std::move(fused);
    c.pre = std::move(pre);
    c.feat = std::move(feat);
  }
  return out;
}

Prediction RegressorModel::forward(const NormalizedSlices& x) const { return run(x, nullptr); }

std::vector<double> RegressorModel::features(const NormalizedSlices& x) const {
  Cache c;
  run(x, &c);
  return c.feat;
}

double RegressorModel::loss_and_gradient(const NormalizedSlices& x, const Labels& y, std::vector<double>& grad) const {
  if (grad.size() != params_.size()) throw ShapeError("gradient buffer has the wrong size");
  if (y.all.size() != std::size_t(desc_.n_views) || y.in_plane.size() != y.all.size() ||
      y.out_plane.size() != y.all.size())
    throw ShapeError("labels do not match the model's view count");
  Cache c;
  const Prediction out = run(x, &c);
  const double l = loss(out, y);
  const double* P = params_.data();
  double* G = grad.data();
  const int nf = desc_.fusion, pp = desc_.pooled, pp2 = pp * pp, c4 = desc_.channels[3], cf = 3 * c4;

  std::vector<double> dfeat(nf, 0.0);
  for (int h = 0; h < 4; ++h) {
    const ParamGroup& hw = groups_[10 + 2 * h];
    const ParamGroup& hb = groups_[11 + 2 * h];
    for (std::size_t i = 0; i < hb.size; ++i) {
      double d;
      if (h == 0) d = 2 * (out.r1 - y.mrpe);
      else if (h == 1) d = 2 * (out.r2[i] - y.all[i]);
      else if (h == 2) d = 2 * (out.r3[i] - y.in_plane[i]);
      else d = 2 * (out.r4[i] - y.out_plane[i]);
      G[hb.offset + i] += d;
      const double* row = P + hw.offset + i * nf;
      double* grow = G + hw.offset + i * nf;
      for (int f = 0; f < nf; ++f) {
        grow[f] += d * c.feat[f];
        dfeat[f] += d * row[f];
      }
    }
  }
  const ParamGroup& fw = group("fusion.w");
  const ParamGroup& fb = group("fusion.b");
  Map dfused(cf, pp, pp);
  for (int f = 0; f < nf; ++f)
    for (int q = 0; q < pp2; ++q) {
      const double pre = c.pre.v[std::size_t(f) * pp2 + q];
      const double dg = dfeat[f] / pp2 * (pre < 0 ? desc_.leak : 1.0);
      G[fb.offset + f] += dg;
      for (int k = 0; k < cf; ++k) {
        G[fw.offset + std::size_t(f) * cf + k] += dg * c.fused_in.v[std::size_t(k) * pp2 + q];
        dfused.v[std::size_t(k) * pp2 + q] += dg * P[fw.offset + std::size_t(f) * cf + k];
      }
    }
  for (int o = 0; o < 3; ++o) {
    auto& br = c.branch[o];
    Map dap(c4, pp, pp);
    std::copy(dfused.ch(o * c4), dfused.ch(o * c4) + std::size_t(c4) * pp2, dap.v.begin());
    Map dcur(br.last.c, br.last.h, br.last.w);
    adaptive_backward(dap, pp, dcur);
    for (int b = 3; b >= 0; --b) {
      const Map& z = br.z[b];
      Map dz(z.c, z.h, z.w);
      pool_backward(dcur, 2, dz);
      activate_backward(z, desc_.leak, dz);
      const ParamGroup& gw = groups_[2 * b];
      const ParamGroup& gb = groups_[2 * b + 1];
      if (b > 0) {
        Map din(br.x[b].c, br.x[b].h, br.x[b].w);
        conv_backward(br.x[b], P + gw.offset, dz, G + gw.offset, G + gb.offset, &din);
        dcur = std::move(din);
      } else {
        conv_backward(br.x[b], P + gw.offset, dz, G + gw.offset, G + gb.offset, nullptr);
      }
    }
  }
  return l;
}

// ---- file format: magic, u32 version, u64 json length, json, u64 count, f64 values (LE)

namespace {

constexpr char kMagic[8] = {'T', 'F', 'R', 'E', 'G', 'M', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw IoError("model file: truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= T(b[i]) << (8 * i);
  return v;
}

}  // namespace

void RegressorModel::save(std::ostream& os) const {
  os.write(kMagic, 8);
  put_le<std::uint32_t>(os, kVersion);
  const std::string j = desc_.to_json().dump();
  put_le<std::uint64_t>(os, j.size());
  os.write(j.data(), std::streamsize(j.size()));
  put_le<std::uint64_t>(os, params_.size());
  for (double v : params_) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw IoError("model file: write failed");
}

void RegressorModel::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  save(f);
}

RegressorModel RegressorModel::load(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw IoError("model file: bad magic");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kVersion) throw IoError("model file: unsupported version " + std::to_string(version));
  const auto jlen = get_le<std::uint64_t>(is);
  if (jlen > (1u << 20)) throw IoError("model file: descriptor too long");
  std::string j(jlen, '\0');
  if (!is.read(j.data(), std::streamsize(jlen))) throw IoError("model file: truncated descriptor");
  nlohmann::json desc;
  try {
    desc = nlohmann::json::parse(j);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("model file: descriptor is not JSON: ") + e.what());
  }
  RegressorModel m;
  m.desc_ = ModelDescriptor::from_json(desc);
  m.layout();
  const auto n = get_le<std::uint64_t>(is);
  if (n != m.params_.size())
    throw ShapeError("model file: " + std::to_string(n) + " parameters, descriptor needs " +
                     std::to_string(m.params_.size()));
  for (auto& v : m.params_) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
  return m;
}

RegressorModel RegressorModel::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return load(f);
}

// ---- optimisation

void adam_update(std::vector<double>& p, const std::vector<double>& g, AdamState& s) {
  if (g.size() != p.size()) throw ShapeError("adam: gradient size mismatch");
  if (s.m.size() != p.size()) {
    s.m.assign(p.size(), 0.0);
    s.v.assign(p.size(), 0.0);
    s.t = 0;
  }
  ++s.t;
  const double c1 = 1 - std::pow(s.beta1, double(s.t)), c2 = 1 - std::pow(s.beta2, double(s.t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1 - s.beta1) * g[i];
    s.v[i] = s.beta2 * s.v[i] + (1 - s.beta2) * g[i] * g[i];
    p[i] -= s.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + s.eps);
  }
}

double backward_and_step(RegressorModel& model, const std::vector<const Sample*>& batch, AdamState& state) {
  if (batch.empty()) throw ConfigError("empty batch");
  const std::size_t n = model.parameter_count();
  std::vector<std::vector<double>> grads(batch.size());
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      grads[i].assign(n, 0.0);
      losses[i] = model.loss_and_gradient(batch[i]->input, batch[i]->labels, grads[i]);
    }
  });
  std::vector<double> g(n, 0.0);
  double l = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    l += losses[i];
    for (std::size_t k = 0; k < n; ++k) g[k] += grads[i][k];
  }
  const double inv = 1.0 / batch.size();
  l *= inv;
  for (double& v : g) {
    v *= inv;
    if (!std::isfinite(v)) throw DivergenceError("non-finite gradient");
  }
  if (!std::isfinite(l)) throw DivergenceError("non-finite training loss");
  adam_update(model.parameters(), g, state);
  return l;
}

double mean_loss(const RegressorModel& model, const Dataset& d) {
  if (d.samples.empty()) throw ConfigError("empty data set");
  std::vector<double> l(d.size());
  parallel_for(d.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) l[i] = loss(model.forward(d.samples[i].input), d.samples[i].labels);
  });
  return std::accumulate(l.begin(), l.end(), 0.0) / d.size();
}

// ---- data

Labels compute_labels(const Trajectory& base, const MotionSplineSet& m, const MarkerSet& markers, RpeMode mode) {
  const EffectiveTrajectory eff(base, annihilating_motion(curves_from_splines(m, int(base.size()))));
  Labels y;
  y.all = rpe_profile(eff, markers, RpeVariant::all, mode).values;
  y.in_plane = rpe_profile(eff, markers, RpeVariant::in_plane, mode).values;
  y.out_plane = rpe_profile(eff, markers, RpeVariant::out_plane, mode).values;
  y.mrpe = std::accumulate(y.all.begin(), y.all.end(), 0.0) / y.all.size();
  return y;
}

Dataset generate_dataset(const std::vector<Phantom>& phantoms, const Trajectory& base, const SliceSet& set,
                         const MarkerSet& markers, const DatasetConfig& cfg, const ProgressFn& progress) {
  if (phantoms.empty()) throw ConfigError("dataset: no phantoms");
  if (cfg.n_samples < 1) throw ConfigError("dataset: n_samples must be positive");
  if (!(cfg.amplitude_min >= 0 && cfg.amplitude_max >= cfg.amplitude_min))
    throw ConfigError("dataset: amplitude range must satisfy 0 <= min <= max");
  const int n_views = int(base.size());
  const ViewRange safe = parker_safe_range(base);
  Dataset d;
  d.samples.resize(cfg.n_samples);
  std::vector<std::uint64_t> seeds(cfg.n_samples);
  {
    std::seed_seq sq{std::uint32_t(cfg.seed), std::uint32_t(cfg.seed >> 32)};
    std::mt19937_64 rng(sq);
    for (auto& s : seeds) s = rng();
  }
  for (std::size_t p = 0; p < phantoms.size(); ++p) {
    if (int(p) >= cfg.n_samples) break;
    const ProjectionStack raw = render_projections(phantoms[p], base);
    const FdkReconstructor recon(base, raw);
    for (int s = int(p); s < cfg.n_samples; s += int(phantoms.size())) {
      std::mt19937_64 rng(seeds[s]);
      Sample& smp = d.samples[s];
      smp.meta.phantom = int(p);
      smp.meta.phantom_name = phantoms[p].name();
      smp.meta.axis = kAllAxes[std::uniform_int_distribution<int>(0, 5)(rng)];
      smp.meta.amplitude = std::uniform_real_distribution<double>(cfg.amplitude_min, cfg.amplitude_max)(rng);
      smp.meta.seed = rng();
      const RandomMotion rm =
          random_motion(smp.meta.axis, smp.meta.amplitude, cfg.motion_nodes, n_views, safe, smp.meta.seed);
      smp.meta.window = rm.window;
      smp.meta.splines = rm.splines;
      const EffectiveTrajectory eff(base, annihilating_motion(curves_from_splines(rm.splines, n_views)));
      smp.input = normalize_slices(recon.reconstruct(set, eff));
      smp.labels = compute_labels(base, rm.splines, markers, cfg.rpe_mode);
    }
    if (progress)
      progress("dataset: phantom " + std::to_string(p + 1) + "/" + std::to_string(phantoms.size()) + " done");
  }
  return d;
}

std::pair<Dataset, Dataset> split_by_phantom(const Dataset& d, const std::vector<int>& held_out) {
  std::pair<Dataset, Dataset> out;
  const std::set<int> h(held_out.begin(), held_out.end());
  for (const Sample& s : d.samples) (h.count(s.meta.phantom) ? out.second : out.first).samples.push_back(s);
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw ConfigError("train: learning rate must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch size must be positive");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be positive");
  if (patience < 1) throw ConfigError("train: patience must be positive");
}

TrainResult train(const RegressorModel& init, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const ProgressFn& progress) {
  cfg.validate();
  if (train_set.samples.empty() || val_set.samples.empty()) throw ConfigError("train: empty training or validation set");
  std::set<std::string> names;
  std::set<int> ids;
  for (const Sample& s : train_set.samples) {
    names.insert(s.meta.phantom_name);
    ids.insert(s.meta.phantom);
  }
  for (const Sample& s : val_set.samples)
    if (ids.count(s.meta.phantom) || (!s.meta.phantom_name.empty() && names.count(s.meta.phantom_name)))
      throw ConfigError("train: phantom " + std::to_string(s.meta.phantom) +
                        " appears in both the training and the validation set");

  TrainResult res;
  RegressorModel model = init;
  res.model = init;
  res.initial_train_loss = mean_loss(model, train_set);
  double best = mean_loss(model, val_set);
  res.best_epoch = 0;
  AdamState adam;
  adam.lr = cfg.learning_rate;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  int stale = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<const Sample*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i)
        batch.push_back(&train_set.samples[order[i]]);
      sum += backward_and_step(model, batch, adam) * batch.size();
    }
    const double val = mean_loss(model, val_set);
    if (!std::isfinite(val)) throw DivergenceError("non-finite validation loss");
    res.history.push_back({epoch, sum / order.size(), val});
    if (progress)
      progress("epoch " + std::to_string(epoch) + " train " + std::to_string(sum / order.size()) + " val " +
               std::to_string(val));
    if (val < best) {
      best = val;
      res.best_epoch = epoch;
      res.model = model;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return res;
}

// ---- evaluation

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("correlation needs two equal series of length >= 2");
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) throw DegenerateError("correlation of a constant series");
  return sab / std::sqrt(saa * sbb);
}

namespace {
std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * double(i + j);
    i = j + 1;
  }
  return r;
}
}  // namespace

double spearman_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson_correlation(ranks(a), ranks(b));
}

EvalReport evaluate(const RegressorModel& model, const Dataset& d, double threshold) {
  if (d.samples.empty()) throw ConfigError("evaluate: empty data set");
  std::vector<Prediction> preds(d.size());
  parallel_for(d.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) preds[i] = model.forward(d.samples[i].input);
  });
  EvalReport r;
  std::vector<double> t, p;
  double abs_err = 0;
  for (std::size_t s = 0; s < d.size(); ++s) {
    const Sample& smp = d.samples[s];
    const Prediction& pr = preds[s];
    r.rows.push_back({int(s), smp.meta.phantom, smp.meta.axis, smp.meta.amplitude, smp.labels.mrpe, pr.r1});
    t.push_back(smp.labels.mrpe);
    p.push_back(pr.r1);
    abs_err += std::abs(pr.r1 - smp.labels.mrpe);
    const auto truth = soft_classify(smp.labels.all, smp.labels.in_plane, smp.labels.out_plane, threshold);
    const auto guess = soft_classify(pr.r2, pr.r3, pr.r4, threshold);
    for (std::size_t i = 0; i < truth.size(); ++i) {
      r.err_all.push_back(pr.r2[i] - smp.labels.all[i]);
      r.err_in_plane.push_back(pr.r3[i] - smp.labels.in_plane[i]);
      r.err_out_plane.push_back(pr.r4[i] - smp.labels.out_plane[i]);
      if (truth[i]) (guess[i] ? r.tp : r.fn)++;
      else (guess[i] ? r.fp : r.tn)++;
    }
  }
  r.fn_rate = r.tp + r.fn ? double(r.fn) / double(r.tp + r.fn) : 0.0;
  r.fp_rate = r.fp + r.tn ? double(r.fp) / double(r.fp + r.tn) : 0.0;
  r.mean_abs_error = abs_err / d.size();
  try {
    r.pearson = pearson_correlation(t, p);
  } catch (const DegenerateError&) {
    r.pearson = 0;
  }
  return r;
}

}  // namespace tomofocus

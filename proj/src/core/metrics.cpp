#include "lcad/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "lcad/error.hpp"

namespace lcad {

namespace {

void same_shape(const RgbImage& a, const RgbImage& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": image shapes differ (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  }
}

std::vector<double> lightness01(const RgbImage& img) {
  std::vector<double> l = rgb_to_lab(img).l;
  for (double& v : l) v /= 100.0;
  return l;
}

}  // namespace

double psnr_planes(std::span<const double> a, std::span<const double> b, double peak) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("psnr: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = acc / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double psnr(const RgbImage& a, const RgbImage& b) {
  same_shape(a, b, "psnr");
  return psnr_planes(a.data, b.data, 1.0);
}

double ssim_planes(std::span<const double> a, std::span<const double> b, int height, int width) {
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  if (height < kWin || width < kWin) {
    throw ValidationError("ssim: image must be at least 11x11, got " + std::to_string(height) + "x" +
                          std::to_string(width));
  }
  if (a.size() != b.size() || a.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("ssim: plane size mismatch");
  }
  double g[kWin];
  double gs = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    gs += g[i];
  }
  for (double& v : g) v /= gs;
  double total = 0.0;
  int count = 0;
  for (int y = 0; y + kWin <= height; ++y) {
    for (int x = 0; x + kWin <= width; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = 0; dy < kWin; ++dy) {
        for (int dx = 0; dx < kWin; ++dx) {
          const double w = g[dy] * g[dx];
          const std::size_t i = static_cast<std::size_t>(y + dy) * width + x + dx;
          ma += w * a[i];
          mb += w * b[i];
          saa += w * a[i] * a[i];
          sbb += w * b[i] * b[i];
          sab += w * a[i] * b[i];
        }
      }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + kC1) * (2 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
      ++count;
    }
  }
  return total / count;
}

double ssim(const RgbImage& a, const RgbImage& b) {
  same_shape(a, b, "ssim");
  return ssim_planes(lightness01(a), lightness01(b), a.height, a.width);
}

double colorfulness(const RgbImage& img) {
  validate(img);
  const std::size_t n = img.pixels();
  double srg = 0, syb = 0, qrg = 0, qyb = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const double r = img.data[p * 3] * 255.0, g = img.data[p * 3 + 1] * 255.0, b = img.data[p * 3 + 2] * 255.0;
    const double rg = r - g, yb = 0.5 * (r + g) - b;
    srg += rg;
    syb += yb;
    qrg += rg * rg;
    qyb += yb * yb;
  }
  const double inv = 1.0 / static_cast<double>(n);
  const double mrg = srg * inv, myb = syb * inv;
  const double vrg = std::max(0.0, qrg * inv - mrg * mrg), vyb = std::max(0.0, qyb * inv - myb * myb);
  return std::sqrt(vrg + vyb) + 0.3 * std::sqrt(mrg * mrg + myb * myb);
}

const PaletteEntry& classify_color(const Lab& lab) {
  const auto& pal = palette();
  const PaletteEntry* best = nullptr;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& e : pal) {
    const double d = std::hypot(lab[1] - e.lab[1], lab[2] - e.lab[2]);
    if (d < best_d) {
      best_d = d;
      best = &e;
    }
  }
  if (!best->chromatic) {
    double best_l = std::numeric_limits<double>::infinity();
    for (const auto& e : pal) {
      if (e.chromatic) continue;
      const double d = std::abs(lab[0] - e.lab[0]);
      if (d < best_l) {
        best_l = d;
        best = &e;
      }
    }
  }
  return *best;
}

double instance_color_accuracy(const RgbImage& result, const std::vector<InstanceRecord>& instances,
                               const Description& description) {
  if (description.bindings.empty()) {
    throw ValidationError("instance colour accuracy is undefined for a description without colour bindings");
  }
  const LabImage lab = rgb_to_lab(result);
  int correct = 0;
  for (const Binding& b : description.bindings) {
    if (b.instance < 0 || b.instance >= static_cast<int>(instances.size())) {
      throw ValidationError("binding refers to missing instance " + std::to_string(b.instance));
    }
    if (b.token < 0 || b.token >= static_cast<int>(description.tokens.size())) {
      throw ValidationError("binding refers to token position " + std::to_string(b.token) + " outside the description");
    }
    const Mask& m = instances[static_cast<std::size_t>(b.instance)].mask;
    if (m.height != result.height || m.width != result.width) throw ShapeError("mask and image sizes differ");
    double sl = 0, sa = 0, sb = 0;
    std::size_t cnt = 0;
    for (std::size_t p = 0; p < m.bits.size(); ++p) {
      if (!m.bits[p]) continue;
      sl += lab.l[p];
      sa += lab.a[p];
      sb += lab.b[p];
      ++cnt;
    }
    if (cnt == 0) throw ValidationError("instance " + std::to_string(b.instance) + " has an empty mask");
    const Lab mean{sl / cnt, sa / cnt, sb / cnt};
    if (classify_color(mean).name == description.tokens[static_cast<std::size_t>(b.token)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(description.bindings.size());
}

ImageMetrics evaluate_image(const std::string& id, const RgbImage& result, const RgbImage& reference,
                            const std::vector<InstanceRecord>& instances, const Description* description) {
  ImageMetrics m;
  m.id = id;
  m.psnr = psnr(result, reference);
  m.ssim = ssim(result, reference);
  m.colorfulness = colorfulness(result);
  m.delta_colorfulness = std::abs(m.colorfulness - colorfulness(reference));
  if (description != nullptr && !description->bindings.empty()) {
    m.instance_color_accuracy = instance_color_accuracy(result, instances, *description);
  }
  return m;
}

namespace {

template <typename F>
double mean_of(const std::vector<ImageMetrics>& v, F f) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& m : v) s += f(m);
  return s / static_cast<double>(v.size());
}

}  // namespace

double MetricReport::mean_psnr() const { return mean_of(images, [](auto& m) { return m.psnr; }); }
double MetricReport::mean_ssim() const { return mean_of(images, [](auto& m) { return m.ssim; }); }
double MetricReport::mean_colorfulness() const { return mean_of(images, [](auto& m) { return m.colorfulness; }); }
double MetricReport::mean_delta_colorfulness() const {
  return mean_of(images, [](auto& m) { return m.delta_colorfulness; });
}

int MetricReport::accuracy_count() const {
  int c = 0;
  for (const auto& m : images) c += m.instance_color_accuracy.has_value();
  return c;
}

std::optional<double> MetricReport::mean_accuracy() const {
  double s = 0.0;
  int c = 0;
  for (const auto& m : images) {
    if (m.instance_color_accuracy) {
      s += *m.instance_color_accuracy;
      ++c;
    }
  }
  if (c == 0) return std::nullopt;
  return s / c;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["label"] = label;
  j["count"] = images.size();
  nlohmann::json agg;
  agg["psnr"] = mean_psnr();
  agg["ssim"] = mean_ssim();
  agg["colorfulness"] = mean_colorfulness();
  agg["delta_colorfulness"] = mean_delta_colorfulness();
  auto acc = mean_accuracy();
  agg["instance_color_accuracy"] = acc ? nlohmann::json(*acc) : nlohmann::json(nullptr);
  agg["instance_color_accuracy_count"] = accuracy_count();
  agg["lpips"] = nullptr;
  agg["fid"] = nullptr;
  j["aggregate"] = agg;
  nlohmann::json per = nlohmann::json::array();
  for (const auto& m : images) {
    nlohmann::json e;
    e["id"] = m.id;
    e["psnr"] = m.psnr;
    e["ssim"] = m.ssim;
    e["colorfulness"] = m.colorfulness;
    e["delta_colorfulness"] = m.delta_colorfulness;
    e["instance_color_accuracy"] =
        m.instance_color_accuracy ? nlohmann::json(*m.instance_color_accuracy) : nlohmann::json(nullptr);
    per.push_back(e);
  }
  j["images"] = per;
  return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
  MetricReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.label = j.at("label").get<std::string>();
    for (const auto& e : j.at("images")) {
      ImageMetrics m;
      m.id = e.at("id").get<std::string>();
      m.psnr = e.at("psnr").get<double>();
      m.ssim = e.at("ssim").get<double>();
      m.colorfulness = e.at("colorfulness").get<double>();
      m.delta_colorfulness = e.at("delta_colorfulness").get<double>();
      if (!e.at("instance_color_accuracy").is_null()) {
        m.instance_color_accuracy = e.at("instance_color_accuracy").get<double>();
      }
      r.images.push_back(m);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw IoError(std::string("metric report: ") + ex.what());
  }
  return r;
}

std::string format_table(std::span<const MetricReport> reports) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-16s %8s %8s %8s %8s %10s %10s %8s\n", "Method", "PSNR", "SSIM", "LPIPS", "FID",
                "colorful", "dcolorful", "acc");
  out += buf;
  for (const auto& r : reports) {
    const auto acc = r.mean_accuracy();
    char accs[16];
    if (acc) {
      std::snprintf(accs, sizeof accs, "%.4f", *acc);
    } else {
      std::snprintf(accs, sizeof accs, "-");
    }
    std::snprintf(buf, sizeof buf, "%-16s %8.2f %8.4f %8s %8s %10.2f %10.2f %8s\n", r.label.c_str(), r.mean_psnr(),
                  r.mean_ssim(), "-", "-", r.mean_colorfulness(), r.mean_delta_colorfulness(), accs);
    out += buf;
  }
  return out;
}

}  // namespace lcad

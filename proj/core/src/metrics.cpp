#include "bvr/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "bvr/error.hpp"
#include "json.hpp"

namespace bvr {

namespace {

void require_same(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width || a.channels() != b.channels()) {
    throw ShapeError("metric inputs differ in shape");
  }
}

double psnr_from_mse(double mse, double peak) {
  if (mse < 1e-10) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(peak * peak / mse));
}

std::vector<double> gaussian_kernel(int window, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(window));
  const double center = (window - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < window; ++i) {
    const double d = i - center;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= total;
  return k;
}

// Valid-mode separable filter of a single-channel plane (h x w).
Matrix filter_valid(const Matrix& plane, const std::vector<double>& k) {
  const int win = static_cast<int>(k.size());
  const Eigen::Index h = plane.rows(), w = plane.cols();
  const Eigen::Index oh = h - win + 1, ow = w - win + 1;
  Matrix rows_pass(h, ow);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < win; ++i) s += k[static_cast<std::size_t>(i)] * plane(y, x + i);
      rows_pass(y, x) = s;
    }
  }
  Matrix out(oh, ow);
  for (Eigen::Index y = 0; y < oh; ++y) {
    for (Eigen::Index x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < win; ++i) s += k[static_cast<std::size_t>(i)] * rows_pass(y + i, x);
      out(y, x) = s;
    }
  }
  return out;
}

Matrix channel_plane(const Image& img, int c, int y0, int x0, int h, int w) {
  Matrix p(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) p(y, x) = img.at(y0 + y, x0 + x, c);
  }
  return p;
}

double ssim_region(const Image& a, const Image& b, int y0, int x0, int h, int w, const SsimOptions& o) {
  if (h < o.window || w < o.window) throw InvalidArgument("image is smaller than the SSIM window");
  const auto k = gaussian_kernel(o.window, o.sigma);
  const double c1 = (o.k1 * o.peak) * (o.k1 * o.peak);
  const double c2 = (o.k2 * o.peak) * (o.k2 * o.peak);
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    const Matrix pa = channel_plane(a, c, y0, x0, h, w);
    const Matrix pb = channel_plane(b, c, y0, x0, h, w);
    const Matrix mu_a = filter_valid(pa, k);
    const Matrix mu_b = filter_valid(pb, k);
    const Matrix aa = filter_valid(pa.cwiseProduct(pa), k);
    const Matrix bb = filter_valid(pb.cwiseProduct(pb), k);
    const Matrix ab = filter_valid(pa.cwiseProduct(pb), k);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < mu_a.size(); ++i) {
      const double ma = mu_a.data()[i], mb = mu_b.data()[i];
      const double va = aa.data()[i] - ma * ma;
      const double vb = bb.data()[i] - mb * mb;
      const double cov = ab.data()[i] - ma * mb;
      sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total += sum / static_cast<double>(mu_a.size());
  }
  return total / a.channels();
}

}  // namespace

double psnr(const Image& a, const Image& b, double peak) {
  require_same(a, b);
  if (a.data.size() == 0) throw InvalidArgument("psnr of empty images");
  const double mse = (a.data - b.data).squaredNorm() / static_cast<double>(a.data.size());
  return psnr_from_mse(mse, peak);
}

double ssim(const Image& a, const Image& b, const SsimOptions& options) {
  require_same(a, b);
  return ssim_region(a, b, 0, 0, a.height, a.width, options);
}

QualityReport masked_region_metrics(const Image& a, const Image& b, const Image& mask, const SsimOptions& options) {
  require_same(a, b);
  if (mask.height != a.height || mask.width != a.width || mask.channels() != 1) {
    throw ShapeError("mask extent differs from the images");
  }
  QualityReport r;
  int y_min = a.height, y_max = -1, x_min = a.width, x_max = -1;
  double se = 0.0;
  long count = 0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      if (mask.at(y, x, 0) != 1.0) continue;
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
      for (int c = 0; c < a.channels(); ++c) {
        const double d = a.at(y, x, c) - b.at(y, x, c);
        se += d * d;
        ++count;
      }
    }
  }
  if (count == 0) {
    r.empty = true;
    return r;
  }
  r.psnr_db = psnr_from_mse(se / static_cast<double>(count), options.peak);

  auto grow = [&](int lo, int hi, int limit) {
    int len = hi - lo + 1;
    if (len < options.window) {
      const int extra = options.window - len;
      lo -= extra / 2;
      hi += extra - extra / 2;
      if (lo < 0) {
        hi -= lo;
        lo = 0;
      }
      if (hi > limit - 1) {
        lo -= hi - (limit - 1);
        hi = limit - 1;
      }
      lo = std::max(lo, 0);
    }
    return std::pair{lo, hi};
  };
  const auto [y0, y1] = grow(y_min, y_max, a.height);
  const auto [x0, x1] = grow(x_min, x_max, a.width);
  r.ssim = ssim_region(a, b, y0, x0, y1 - y0 + 1, x1 - x0 + 1, options);
  r.per_frame.push_back({r.psnr_db, r.ssim});
  return r;
}

QualityReport sequence_quality(const VideoSequence& a, const VideoSequence& b, const SsimOptions& options) {
  if (a.length() != b.length()) throw ShapeError("sequences differ in length");
  QualityReport r;
  for (int i = 0; i < a.length(); ++i) {
    FrameQuality q{psnr(a.frames[i], b.frames[i], options.peak), ssim(a.frames[i], b.frames[i], options)};
    r.per_frame.push_back(q);
    r.psnr_db += q.psnr_db;
    r.ssim += q.ssim;
  }
  if (r.per_frame.empty()) {
    r.empty = true;
    return r;
  }
  r.psnr_db /= static_cast<double>(r.per_frame.size());
  r.ssim /= static_cast<double>(r.per_frame.size());
  return r;
}

QualityReport masked_sequence_quality(const VideoSequence& a, const VideoSequence& b, const std::vector<Image>& masks,
                                      const SsimOptions& options) {
  if (a.length() != b.length() || static_cast<int>(masks.size()) != a.length()) {
    throw ShapeError("sequences and masks differ in length");
  }
  QualityReport r;
  for (int i = 0; i < a.length(); ++i) {
    const QualityReport f = masked_region_metrics(a.frames[i], b.frames[i], masks[i], options);
    if (f.empty) continue;
    r.per_frame.push_back({f.psnr_db, f.ssim});
    r.psnr_db += f.psnr_db;
    r.ssim += f.ssim;
  }
  if (r.per_frame.empty()) {
    r.empty = true;
    return r;
  }
  r.psnr_db /= static_cast<double>(r.per_frame.size());
  r.ssim /= static_cast<double>(r.per_frame.size());
  return r;
}

void MetricRegistry::add(std::shared_ptr<const ExternalMetric> metric) { metrics_.push_back(std::move(metric)); }

void MetricRegistry::apply(const VideoSequence& recovered, const VideoSequence& reference,
                           QualityReport& report) const {
  for (const auto& m : metrics_) report.external[m->name()] = m->score(recovered, reference);
}

std::vector<std::string> MetricRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& m : metrics_) out.push_back(m->name());
  return out;
}

std::string to_json(const QualityReport& report) {
  nlohmann::json j;
  j["empty"] = report.empty;
  if (!report.empty) {
    j["psnr_db"] = report.psnr_db;
    j["ssim"] = report.ssim;
  }
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : report.per_frame) frames.push_back({{"psnr_db", f.psnr_db}, {"ssim", f.ssim}});
  j["per_frame"] = std::move(frames);
  for (const auto& [name, value] : report.external) j[name] = value;
  return j.dump();
}

}  // namespace bvr

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bvr/video.hpp"

namespace bvr {

inline constexpr double kPsnrCapDb = 100.0;

// 10 log10(peak^2 / MSE); 100 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b, double peak = 1.0);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

// Mean local SSIM over every fully contained Gaussian window, averaged over
// channels. Throws InvalidArgument when the image is smaller than the window.
double ssim(const Image& a, const Image& b, const SsimOptions& options = {});

struct FrameQuality {
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct QualityReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::vector<FrameQuality> per_frame;
  bool empty = false;  // no pixels to score (e.g. empty mask)
  std::map<std::string, double> external;  // plug-in metric columns
};

// PSNR over pixels with mask == 1 (all channels); SSIM over the mask's
// bounding box, grown to at least the SSIM window and clamped to the image.
QualityReport masked_region_metrics(const Image& a, const Image& b, const Image& mask,
                                    const SsimOptions& options = {});

// Per-frame scores and their means.
QualityReport sequence_quality(const VideoSequence& a, const VideoSequence& b, const SsimOptions& options = {});
// Frames whose mask is empty are skipped; the report is flagged empty when
// every frame is.
QualityReport masked_sequence_quality(const VideoSequence& a, const VideoSequence& b, const std::vector<Image>& masks,
                                      const SsimOptions& options = {});

// Extension point for scores that need pretrained networks (LPIPS, VFID).
class ExternalMetric {
 public:
  virtual ~ExternalMetric() = default;
  virtual std::string name() const = 0;
  virtual double score(const VideoSequence& recovered, const VideoSequence& reference) const = 0;
};

class MetricRegistry {
 public:
  void add(std::shared_ptr<const ExternalMetric> metric);
  // Adds one column per registered metric to `report.external`.
  void apply(const VideoSequence& recovered, const VideoSequence& reference, QualityReport& report) const;
  std::vector<std::string> names() const;

 private:
  std::vector<std::shared_ptr<const ExternalMetric>> metrics_;
};

std::string to_json(const QualityReport& report);

}  // namespace bvr

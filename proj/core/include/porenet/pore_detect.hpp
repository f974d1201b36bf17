#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "porenet/image.hpp"

namespace porenet {

enum class ThresholdMethod { kOtsu, kFixed };

/// Parameters of dynamic pore filtering.
struct DpfParams {
  ThresholdMethod threshold_method = ThresholdMethod::kOtsu;
  double fixed_threshold = 0.5;  // used when threshold_method == kFixed
  double min_pore_radius = 1.0;
  double max_pore_radius = 3.0;
  double local_window_scale = 1.0;
  int max_scan = 30;  // directional scans stop here; no dark pixel within reach means background

  void validate() const;
};

/// Otsu threshold on a 256-bin histogram of [0,1] intensities.
double otsu_threshold(const GrayImage& img);

/// Classical pore detector: global binarisation, per-pixel valley-width scans,
/// local threshold/radius and circle test, then one centroid per 8-connected component.
PoreSet detect_pores_dpf(const GrayImage& img, const DpfParams& params = {});

/// Reads either an "x y" coordinate file or an intensity map the size of source_image.
/// Maps are reduced to pores with local_maxima(window, min_value).
PoreSet load_pore_map(const std::filesystem::path& path, const GrayImage& source_image, int window = 5,
                      double min_value = 0.4);

/// Pluggable detector interface; a learned detector can implement it.
class PoreDetector {
 public:
  virtual ~PoreDetector() = default;
  virtual PoreSet detect(const GrayImage& img, const std::string& image_id) const = 0;
};

class DpfDetector final : public PoreDetector {
 public:
  explicit DpfDetector(DpfParams params = {}) : params_(params) { params_.validate(); }
  PoreSet detect(const GrayImage& img, const std::string& image_id) const override;

 private:
  DpfParams params_;
};

/// Ingests externally produced pore maps from a directory: "<dir>/<image_id>.txt" coordinate
/// files, or "<dir>/<image_id>.pgm|.png" intensity maps.
class MapDetector final : public PoreDetector {
 public:
  MapDetector(std::filesystem::path dir, int window, double min_value)
      : dir_(std::move(dir)), window_(window), min_value_(min_value) {}
  PoreSet detect(const GrayImage& img, const std::string& image_id) const override;

 private:
  std::filesystem::path dir_;
  int window_;
  double min_value_;
};

}  // namespace porenet

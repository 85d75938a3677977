#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "posesparse/regions.hpp"

namespace posesparse {

// H x W x C float image, row-major with interleaved channels.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f) : height(h), width(w), channels(c), data(h * w * c, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * channels + c]; }
  void validate() const;  // ShapeError / RangeError
};

struct ImagePair {
  Image x;      // ground truth
  Image x_hat;  // generated
};

// Pixel-resolution region masks m_r, stored as one label per pixel so the
// masks are disjoint by construction.
struct RegionPixelMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<RegionLabel> labels;

  bool contains(RegionLabel r, std::size_t y, std::size_t x) const { return labels[y * width + x] == r; }
  std::size_t count(RegionLabel r) const;
};

// Each pixel takes the label of the token covering it.
RegionPixelMask rasterize_labels(std::span<const RegionLabel> frame_labels, const TokenGrid& grid, std::size_t width,
                                 std::size_t height);

// Both images with m_r already applied (zeros outside the region).
struct MaskedPair {
  std::span<const float> x;
  std::span<const float> x_hat;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  // Element count the metric averages over: H*W*C, or |m_r|*C when the
  // normalized variant is requested. Zero means an empty normalized region.
  double normalizer = 1.0;
};

using RegionMetric = std::function<double(const MaskedPair&)>;

double mse_metric(const MaskedPair& p);
double mae_metric(const MaskedPair& p);

class MetricRegistry {
 public:
  // Registry holding "mse" and "mae".
  static MetricRegistry with_defaults();

  // Throws DuplicateMetricError for a used id, ConfigError after freeze().
  void register_metric(const std::string& id, RegionMetric metric);
  const RegionMetric& get(const std::string& id) const;  // UnknownMetricError
  bool contains(const std::string& id) const { return metrics_.contains(id); }
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

 private:
  std::map<std::string, RegionMetric, std::less<>> metrics_;
  bool frozen_ = false;
};

struct RegionLossConfig {
  // Indexed like kBodyRegions: face, hands, arms, bodies, shoulders.
  std::array<double, 5> weights{1.0, 1.0, 1.0, 1.0, 1.0};
  std::array<std::string, 5> metrics{"mse", "mse", "mse", "mse", "mse"};
  double lambda_region = 1.0;
  bool normalized = false;

  double& weight(RegionLabel r);
  double weight(RegionLabel r) const;
  std::string& metric(RegionLabel r);
  const std::string& metric(RegionLabel r) const;
  void validate() const;  // ConfigError
};

struct RegionLossResult {
  double total = 0.0;
  std::map<RegionLabel, double> per_region;  // unweighted metric values
};

// total = sum_r lambda_r * metric_r(m_r ⊙ x, m_r ⊙ x_hat).
RegionLossResult region_loss(const ImagePair& pair, const RegionPixelMask& masks, const RegionLossConfig& cfg,
                             const MetricRegistry& registry);

// Distillation objective: L_dmd + lambda_region * L_region.
inline double combined_objective(double dmd_loss, double region_total, double lambda_region) {
  return dmd_loss + lambda_region * region_total;
}

// Binary layout, little-endian: "PSIM", u32 version (1), u32 H, u32 W, u32 C,
// then H*W*C f32 values in row-major, channel-interleaved order.
void write_image(std::ostream& out, const Image& img);
Image read_image(std::istream& in);
void save_image(const std::filesystem::path& path, const Image& img);
Image load_image(const std::filesystem::path& path);

}  // namespace posesparse

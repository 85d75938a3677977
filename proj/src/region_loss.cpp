#include "posesparse/region_loss.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "posesparse/detail/binary.hpp"
#include "posesparse/error.hpp"

namespace posesparse {

namespace {

std::size_t region_slot(RegionLabel r) {
  if (r == RegionLabel::Background) throw ConfigError("background has no region-loss slot");
  return static_cast<std::size_t>(r);
}

}  // namespace

void Image::validate() const {
  if (height == 0 || width == 0 || channels == 0) throw ShapeError("image has an empty dimension");
  if (data.size() != height * width * channels) throw ShapeError("image buffer does not match its shape");
  for (float v : data) {
    if (!std::isfinite(v)) throw RangeError("image contains a non-finite value");
  }
}

std::size_t RegionPixelMask::count(RegionLabel r) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), r));
}

RegionPixelMask rasterize_labels(std::span<const RegionLabel> frame_labels, const TokenGrid& grid, std::size_t width,
                                 std::size_t height) {
  grid.validate_covers({static_cast<int>(width), static_cast<int>(height)});
  if (frame_labels.size() != grid.tokens()) throw DimensionMismatchError("label slice does not match the token grid");
  RegionPixelMask m{height, width, std::vector<RegionLabel>(height * width, RegionLabel::Background)};
  const auto patch = static_cast<std::size_t>(grid.patch_size);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      m.labels[y * width + x] = frame_labels[(y / patch) * static_cast<std::size_t>(grid.width_tokens) + x / patch];
    }
  }
  return m;
}

double mse_metric(const MaskedPair& p) {
  if (p.normalizer <= 0.0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < p.x.size(); ++i) {
    const double d = static_cast<double>(p.x[i]) - p.x_hat[i];
    sum += d * d;
  }
  return sum / p.normalizer;
}

double mae_metric(const MaskedPair& p) {
  if (p.normalizer <= 0.0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < p.x.size(); ++i) sum += std::abs(static_cast<double>(p.x[i]) - p.x_hat[i]);
  return sum / p.normalizer;
}

MetricRegistry MetricRegistry::with_defaults() {
  MetricRegistry reg;
  reg.register_metric("mse", mse_metric);
  reg.register_metric("mae", mae_metric);
  return reg;
}

void MetricRegistry::register_metric(const std::string& id, RegionMetric metric) {
  if (frozen_) throw ConfigError("metric registry is frozen");
  if (!metric) throw ConfigError("metric '" + id + "' is empty");
  if (metrics_.contains(id)) throw DuplicateMetricError("metric '" + id + "' is already registered");
  metrics_.emplace(id, std::move(metric));
}

const RegionMetric& MetricRegistry::get(const std::string& id) const {
  const auto it = metrics_.find(id);
  if (it == metrics_.end()) throw UnknownMetricError("no metric registered as '" + id + "'");
  return it->second;
}

double& RegionLossConfig::weight(RegionLabel r) { return weights[region_slot(r)]; }
double RegionLossConfig::weight(RegionLabel r) const { return weights[region_slot(r)]; }
std::string& RegionLossConfig::metric(RegionLabel r) { return metrics[region_slot(r)]; }
const std::string& RegionLossConfig::metric(RegionLabel r) const { return metrics[region_slot(r)]; }

void RegionLossConfig::validate() const {
  bool any = false;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("region weights must be finite and non-negative");
    any = any || w > 0.0;
  }
  if (!any) throw ConfigError("at least one region weight must be positive");
  if (!std::isfinite(lambda_region) || lambda_region < 0.0) throw ConfigError("lambda_region must be >= 0");
}

RegionLossResult region_loss(const ImagePair& pair, const RegionPixelMask& masks, const RegionLossConfig& cfg,
                             const MetricRegistry& registry) {
  cfg.validate();
  pair.x.validate();
  pair.x_hat.validate();
  const auto& x = pair.x;
  if (x.height != pair.x_hat.height || x.width != pair.x_hat.width || x.channels != pair.x_hat.channels) {
    throw ShapeError("ground-truth and generated images differ in shape");
  }
  if (masks.height != x.height || masks.width != x.width || masks.labels.size() != x.height * x.width) {
    throw ShapeError("region masks do not match the image shape");
  }
  // Resolve every metric before computing anything.
  std::array<const RegionMetric*, 5> metrics{};
  for (RegionLabel r : kBodyRegions) metrics[region_slot(r)] = &registry.get(cfg.metric(r));

  RegionLossResult result;
  std::vector<float> masked_x(x.data.size());
  std::vector<float> masked_hat(x.data.size());
  const std::size_t pixels = x.height * x.width;
  for (RegionLabel r : kBodyRegions) {
    std::size_t inside = 0;
    for (std::size_t p = 0; p < pixels; ++p) {
      const bool in = masks.labels[p] == r;
      inside += in ? 1 : 0;
      for (std::size_t c = 0; c < x.channels; ++c) {
        const std::size_t i = p * x.channels + c;
        masked_x[i] = in ? x.data[i] : 0.0f;
        masked_hat[i] = in ? pair.x_hat.data[i] : 0.0f;
      }
    }
    MaskedPair mp{masked_x, masked_hat, x.height, x.width, x.channels,
                  static_cast<double>(cfg.normalized ? inside * x.channels : x.data.size())};
    const double value = (*metrics[region_slot(r)])(mp);
    result.per_region[r] = value;
    result.total += cfg.weight(r) * value;
  }
  return result;
}

namespace {
constexpr std::string_view kImageMagic = "PSIM";
constexpr std::uint32_t kImageVersion = 1;
}  // namespace

void write_image(std::ostream& out, const Image& img) {
  detail::write_magic(out, kImageMagic, kImageVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(img.height));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(img.width));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(img.channels));
  for (float v : img.data) detail::write_f32(out, v);
}

Image read_image(std::istream& in) {
  detail::expect_magic(in, kImageMagic, kImageVersion);
  const auto h = detail::read_le<std::uint32_t>(in);
  const auto w = detail::read_le<std::uint32_t>(in);
  const auto c = detail::read_le<std::uint32_t>(in);
  if (std::uint64_t{h} * w * c > (std::uint64_t{1} << 31)) throw ParseError("image: implausibly large");
  Image img(h, w, c);
  for (auto& v : img.data) v = detail::read_f32(in);
  img.validate();
  return img;
}

void save_image(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_image(out, img);
}

Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_image(in);
}

}  // namespace posesparse

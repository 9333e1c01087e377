#pragma once

#include <random>
#include <string>
#include <vector>

#include "textspot/autodiff.hpp"
#include "textspot/model.hpp"

namespace textspot {

// Square grayscale raster, row-major with row 0 at the top; ink = 1,
// background = 0.
struct Image {
  int size = 0;
  std::vector<double> pixels;

  double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * size + col]; }
  bool operator==(const Image&) const = default;
};

// Anti-aliased 1-px strokes for every geometry primitive and the outline of
// every text box. The tile must be in normalized coordinates.
Image rasterize_tile(const Drawing& tile, int size);

void write_pgm(const std::string& path, const Image& img);

// Normalized tile coordinates (y up) to pixel coordinates of a grid with
// `width` x `height` cells whose centers sit on integers (y down).
struct PixelMap {
  int width = 0;
  int height = 0;
  Point to_pixel(Point normalized) const {
    return {normalized.x * width - 0.5, (1.0 - normalized.y) * height - 0.5};
  }
};

// H x W x C feature grid.
struct FeatureMap {
  ad::Tensor values;

  int height() const { return values.dim(0); }
  int width() const { return values.dim(1); }
  int channels() const { return values.dim(2); }
  PixelMap pixel_map() const { return {width(), height()}; }
};

enum class ExtractorBackend { kConvStack, kFileImport };

struct ExtractorConfig {
  ExtractorBackend backend = ExtractorBackend::kConvStack;
  int raster_size = 256;
  int channels = 32;
  // Output widths of the first two conv stages; the third outputs `channels`.
  std::vector<int> stage_widths = {8, 16};
  std::string import_path;

  void validate() const;
};

// Three stages of 3x3 stride-2 convolution followed by ReLU, so the output
// grid is raster_size / 8 on a side. Parameters live in the store under
// "cnn.*" and train end-to-end through the bilinear sampling.
class ConvStack {
 public:
  ConvStack(const ExtractorConfig& cfg, ad::ParameterStore& store, std::mt19937_64& rng);
  FeatureMap forward(const Image& img) const;

 private:
  ExtractorConfig cfg_;
  std::vector<ad::Tensor> weights_;
  std::vector<ad::Tensor> biases_;
};

// Feature map file: H, W, C as little-endian u32, then f32 values.
FeatureMap load_feature_map(const std::string& path);
void save_feature_map(const std::string& path, const FeatureMap& fm);
// Loads from cfg.import_path and checks the expected grid and channels.
FeatureMap import_feature_map(const ExtractorConfig& cfg, int expected_grid);

// f = bilinear interpolation of F at a normalized coordinate.
ad::Tensor bilinear_sample(const FeatureMap& fm, Point normalized);

// Row i samples F at the center of primitive i (all kinds, text included).
ad::Tensor init_vertex_features(const Drawing& tile, const FeatureMap& fm);

}  // namespace textspot

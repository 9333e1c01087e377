#include "textspot/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "textspot/binary_io.hpp"
#include "textspot/error.hpp"

namespace textspot {
namespace {

constexpr double kPi = std::numbers::pi;

struct Canvas {
  int size;
  std::vector<double>& px;

  // Pixel coordinates: x right, y down, pixel (r, c) covers [c, c+1) x [r, r+1).
  void segment(double x0, double y0, double x1, double y1) {
    const double minx = std::min(x0, x1) - 1.0, maxx = std::max(x0, x1) + 1.0;
    const double miny = std::min(y0, y1) - 1.0, maxy = std::max(y0, y1) + 1.0;
    const int c0 = std::max(0, static_cast<int>(std::floor(minx))), c1 = std::min(size - 1, static_cast<int>(std::floor(maxx)));
    const int r0 = std::max(0, static_cast<int>(std::floor(miny))), r1 = std::min(size - 1, static_cast<int>(std::floor(maxy)));
    const double dx = x1 - x0, dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double pxc = c + 0.5, pyc = r + 0.5;
        double t = len2 > 0 ? ((pxc - x0) * dx + (pyc - y0) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double dist = std::hypot(pxc - (x0 + t * dx), pyc - (y0 + t * dy));
        const double ink = std::clamp(1.0 - dist, 0.0, 1.0);
        double& v = px[static_cast<std::size_t>(r) * size + c];
        v = std::max(v, ink);
      }
    }
  }

  template <class F>
  void curve(F point_at, double length_px) {
    const int n = std::clamp(static_cast<int>(std::ceil(length_px / 2.0)), 8, 512);
    Point prev = point_at(0.0);
    for (int i = 1; i <= n; ++i) {
      const Point cur = point_at(static_cast<double>(i) / n);
      segment(prev.x, prev.y, cur.x, cur.y);
      prev = cur;
    }
  }
};

}  // namespace

Image rasterize_tile(const Drawing& tile, int size) {
  if (size < 2) throw ConfigError("raster", "raster size must be >= 2");
  Image img{size, std::vector<double>(static_cast<std::size_t>(size) * size, 0.0)};
  Canvas canvas{size, img.pixels};
  const double s = size;
  auto to_px = [s](double x, double y) { return Point{x * s, (1.0 - y) * s}; };
  for (const Primitive& p : tile.primitives) {
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, Line>) {
            const Point a = to_px(v.x1, v.y1), b = to_px(v.x2, v.y2);
            canvas.segment(a.x, a.y, b.x, b.y);
          } else if constexpr (std::is_same_v<T, Arc>) {
            canvas.curve(
                [&](double t) {
                  const double ang = v.start + t * v.sweep;
                  return to_px(v.cx + v.r * std::cos(ang), v.cy + v.r * std::sin(ang));
                },
                v.r * v.sweep * s);
          } else if constexpr (std::is_same_v<T, Circle>) {
            canvas.curve(
                [&](double t) {
                  const double ang = 2 * kPi * t;
                  return to_px(v.cx + v.r * std::cos(ang), v.cy + v.r * std::sin(ang));
                },
                2 * kPi * v.r * s);
          } else if constexpr (std::is_same_v<T, Ellipse>) {
            const double c = std::cos(v.rotation), sn = std::sin(v.rotation);
            canvas.curve(
                [&](double t) {
                  const double ang = 2 * kPi * t;
                  const double ex = v.a * std::cos(ang), ey = v.b * std::sin(ang);
                  return to_px(v.cx + c * ex - sn * ey, v.cy + sn * ex + c * ey);
                },
                2 * kPi * v.a * s);
          } else {
            const double cx = 0.5 * (v.xmin + v.xmax), cy = 0.5 * (v.ymin + v.ymax);
            const double hw = 0.5 * (v.xmax - v.xmin), hh = 0.5 * (v.ymax - v.ymin);
            const double c = std::cos(v.rotation), sn = std::sin(v.rotation);
            Point corners[4];
            const double sx[4] = {-1, 1, 1, -1}, sy[4] = {-1, -1, 1, 1};
            for (int i = 0; i < 4; ++i) {
              const double lx = sx[i] * hw, ly = sy[i] * hh;
              corners[i] = to_px(cx + c * lx - sn * ly, cy + sn * lx + c * ly);
            }
            for (int i = 0; i < 4; ++i) {
              const Point a = corners[i], b = corners[(i + 1) % 4];
              canvas.segment(a.x, a.y, b.x, b.y);
            }
          }
        },
        p.geometry);
  }
  return img;
}

void write_pgm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("raster", "cannot write " + path);
  out << "P5\n" << img.size << " " << img.size << "\n255\n";
  for (double v : img.pixels) {
    // dark ink on a white page
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (1.0 - std::clamp(v, 0.0, 1.0))))));
  }
}

void ExtractorConfig::validate() const {
  if (channels < 1) throw ConfigError("raster", "feature channels must be >= 1");
  if (raster_size < 8 || (raster_size & (raster_size - 1)) != 0) {
    throw ConfigError("raster", "raster size must be a power of two >= 8");
  }
  if (backend == ExtractorBackend::kConvStack && stage_widths.size() != 2) {
    throw ConfigError("raster", "conv stack needs two intermediate stage widths");
  }
  if (backend == ExtractorBackend::kFileImport && import_path.empty()) {
    throw ConfigError("raster", "file-import backend needs a path");
  }
}

ConvStack::ConvStack(const ExtractorConfig& cfg, ad::ParameterStore& store, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  const int widths[4] = {1, cfg_.stage_widths[0], cfg_.stage_widths[1], cfg_.channels};
  for (int s = 0; s < 3; ++s) {
    const std::string prefix = "cnn.conv" + std::to_string(s);
    weights_.push_back(store.add(prefix + ".w", {9 * widths[s], widths[s + 1]}, ad::Init::kNormalFanIn, rng, std::sqrt(2.0)));
    biases_.push_back(store.add(prefix + ".b", {widths[s + 1]}, ad::Init::kZeros, rng));
  }
}

FeatureMap ConvStack::forward(const Image& img) const {
  if (img.size != cfg_.raster_size) {
    throw ShapeError("raster", "image of size " + std::to_string(img.size) + ", extractor expects " +
                                   std::to_string(cfg_.raster_size));
  }
  ad::Tensor x = ad::Tensor::from({img.size, img.size, 1}, img.pixels);
  for (std::size_t s = 0; s < weights_.size(); ++s) x = ad::relu(ad::conv3x3(x, weights_[s], biases_[s], 2));
  return FeatureMap{x};
}

FeatureMap load_feature_map(const std::string& path) {
  const auto bytes = read_bytes_file(path, "raster");
  ByteReader r(bytes, "raster");
  const int h = static_cast<int>(r.u32()), w = static_cast<int>(r.u32()), c = static_cast<int>(r.u32());
  if (h < 2 || w < 2 || c < 1) throw ShapeError("raster", "feature map needs H, W >= 2 and C >= 1");
  std::vector<double> values(static_cast<std::size_t>(h) * w * c);
  for (auto& v : values) {
    v = r.f32();
    if (!std::isfinite(v)) throw NumericError("raster", "non-finite value in feature map " + path);
  }
  r.expect_end();
  return FeatureMap{ad::Tensor::from({h, w, c}, std::move(values))};
}

void save_feature_map(const std::string& path, const FeatureMap& fm) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(fm.height()));
  w.u32(static_cast<std::uint32_t>(fm.width()));
  w.u32(static_cast<std::uint32_t>(fm.channels()));
  for (double v : fm.values.values()) w.f32(static_cast<float>(v));
  write_bytes_file(path, w.take(), "raster");
}

FeatureMap import_feature_map(const ExtractorConfig& cfg, int expected_grid) {
  FeatureMap fm = load_feature_map(cfg.import_path);
  if (fm.channels() != cfg.channels || (expected_grid > 0 && (fm.height() != expected_grid || fm.width() != expected_grid))) {
    throw ShapeError("raster", "imported feature map is " + ad::shape_str(fm.values.shape()) + ", expected " +
                                   std::to_string(expected_grid) + "x" + std::to_string(expected_grid) + "x" +
                                   std::to_string(cfg.channels));
  }
  return fm;
}

ad::Tensor bilinear_sample(const FeatureMap& fm, Point normalized) {
  const Point px = fm.pixel_map().to_pixel(normalized);
  return ad::reshape(ad::bilinear_gather(fm.values, std::span<const Point>(&px, 1)), {fm.channels()});
}

ad::Tensor init_vertex_features(const Drawing& tile, const FeatureMap& fm) {
  const PixelMap map = fm.pixel_map();
  std::vector<Point> pts;
  pts.reserve(tile.primitives.size());
  for (const auto& p : tile.primitives) pts.push_back(map.to_pixel(primitive_center(p)));
  return ad::bilinear_gather(fm.values, pts);
}

}  // namespace textspot

#include "smart/vision.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include "smart/errors.hpp"

namespace smart {

void VisionConfig::validate() const {
  if (patch_size < 1 || image_size < 1) throw ConfigError("vision: sizes must be positive");
  if (image_size % patch_size != 0) {
    throw ConfigError("vision: image_size must be divisible by patch_size");
  }
  if (segments < 1 || dim < 1) throw ConfigError("vision: segments and dim must be >= 1");
  if (min_area < 1) throw ConfigError("vision: min_area must be >= 1");
}

std::array<double, RegionDescriptor::kFeatures> RegionDescriptor::features(int image_height,
                                                                           int image_width) const {
  const double total = static_cast<double>(image_height) * image_width;
  return {std::sqrt(static_cast<double>(area) / total),
          centroid_row,
          centroid_col,
          top,
          left,
          height,
          width,
          mean_color[0],
          mean_color[1],
          mean_color[2]};
}

namespace {

int channel_distance(Rgb a, Rgb b) {
  int d = 0;
  for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(static_cast<int>(a[c]) - static_cast<int>(b[c])));
  return d;
}

Rgb dominant_color(const Image& image) {
  std::map<std::uint32_t, int> counts;
  for (std::size_t i = 0; i < image.pixels.size(); i += 3) {
    const std::uint32_t key = (static_cast<std::uint32_t>(image.pixels[i]) << 16) |
                              (static_cast<std::uint32_t>(image.pixels[i + 1]) << 8) |
                              image.pixels[i + 2];
    ++counts[key];
  }
  std::uint32_t best = 0;
  int best_count = -1;
  for (const auto& [key, count] : counts) {  // ascending keys: ties keep the smallest
    if (count > best_count) {
      best = key;
      best_count = count;
    }
  }
  return {static_cast<std::uint8_t>(best >> 16), static_cast<std::uint8_t>(best >> 8),
          static_cast<std::uint8_t>(best)};
}

}  // namespace

std::vector<RegionDescriptor> extract_regions(const Image& image, int color_threshold, int min_area) {
  std::vector<RegionDescriptor> regions;
  if (image.empty()) return regions;
  const Rgb background = dominant_color(image);
  const int h = image.height;
  const int w = image.width;
  std::vector<char> foreground(static_cast<std::size_t>(h) * w, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      foreground[static_cast<std::size_t>(r) * w + c] = channel_distance(image.at(r, c), background) > color_threshold;
    }
  }

  std::vector<char> visited(foreground.size(), 0);
  std::vector<std::pair<int, int>> stack;
  constexpr int dr[4] = {-1, 1, 0, 0};
  constexpr int dc[4] = {0, 0, -1, 1};

  for (int r0 = 0; r0 < h; ++r0) {
    for (int c0 = 0; c0 < w; ++c0) {
      const auto seed = static_cast<std::size_t>(r0) * w + c0;
      if (!foreground[seed] || visited[seed]) continue;
      visited[seed] = 1;
      stack.assign(1, {r0, c0});
      long long sum_r = 0, sum_c = 0;
      double sum_rgb[3] = {0, 0, 0};
      int area = 0, top = r0, bottom = r0, left = c0, right = c0;
      while (!stack.empty()) {
        const auto [r, c] = stack.back();
        stack.pop_back();
        const Rgb color = image.at(r, c);
        ++area;
        sum_r += r;
        sum_c += c;
        for (int ch = 0; ch < 3; ++ch) sum_rgb[ch] += color[ch];
        top = std::min(top, r);
        bottom = std::max(bottom, r);
        left = std::min(left, c);
        right = std::max(right, c);
        for (int k = 0; k < 4; ++k) {
          const int nr = r + dr[k];
          const int nc = c + dc[k];
          if (!image.contains(nr, nc)) continue;
          const auto ni = static_cast<std::size_t>(nr) * w + nc;
          if (!foreground[ni] || visited[ni]) continue;
          if (channel_distance(image.at(nr, nc), color) > color_threshold) continue;
          visited[ni] = 1;
          stack.emplace_back(nr, nc);
        }
      }
      if (area < min_area) continue;
      RegionDescriptor region;
      region.area = area;
      region.centroid_row = (static_cast<double>(sum_r) / area + 0.5) / h;
      region.centroid_col = (static_cast<double>(sum_c) / area + 0.5) / w;
      region.top = static_cast<double>(top) / h;
      region.left = static_cast<double>(left) / w;
      region.height = static_cast<double>(bottom - top + 1) / h;
      region.width = static_cast<double>(right - left + 1) / w;
      for (int ch = 0; ch < 3; ++ch) region.mean_color[ch] = sum_rgb[ch] / area / 255.0;
      region.top_px = top;
      region.left_px = left;
      regions.push_back(region);
    }
  }
  std::stable_sort(regions.begin(), regions.end(), [](const RegionDescriptor& a, const RegionDescriptor& b) {
    if (a.area != b.area) return a.area > b.area;
    if (a.top_px != b.top_px) return a.top_px < b.top_px;
    return a.left_px < b.left_px;
  });
  return regions;
}

void init_vision_params(nn::ParamStore& store, const VisionConfig& cfg, Rng& rng) {
  cfg.validate();
  auto gaussian = [&rng](Eigen::Index rows, Eigen::Index cols, double std) {
    nn::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
    return m;
  };
  const int in = cfg.patch_features();
  store.add("vision.patch.weight", gaussian(in, cfg.dim, 1.0 / std::sqrt(static_cast<double>(in))));
  store.add("vision.patch.bias", nn::Matrix::Zero(1, cfg.dim));
  store.add("vision.patch.position", gaussian(cfg.num_patches(), cfg.dim, 0.1));
  store.add("vision.segment.weight",
            gaussian(RegionDescriptor::kFeatures, cfg.dim, 1.0 / std::sqrt(double{RegionDescriptor::kFeatures})));
  store.add("vision.segment.bias", nn::Matrix::Zero(1, cfg.dim));
  store.add("vision.segment.null", gaussian(1, cfg.dim, 0.1));
}

nn::Matrix patch_matrix(const Image& image, int patch_size) {
  if (patch_size < 1 || image.height % patch_size != 0 || image.width % patch_size != 0) {
    throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " is not divisible by patch size " + std::to_string(patch_size));
  }
  const int grid_rows = image.height / patch_size;
  const int grid_cols = image.width / patch_size;
  nn::Matrix out(grid_rows * grid_cols, patch_size * patch_size * 3);
  for (int gr = 0; gr < grid_rows; ++gr) {
    for (int gc = 0; gc < grid_cols; ++gc) {
      const int row = gr * grid_cols + gc;
      int col = 0;
      for (int r = 0; r < patch_size; ++r) {
        for (int c = 0; c < patch_size; ++c) {
          const Rgb px = image.at(gr * patch_size + r, gc * patch_size + c);
          for (int ch = 0; ch < 3; ++ch) out(row, col++) = px[ch] / 255.0;
        }
      }
    }
  }
  return out;
}

nn::Var encode_patches(nn::Tape& tape, const Image& image, const VisionConfig& cfg) {
  nn::Matrix patches = patch_matrix(image, cfg.patch_size);
  if (patches.rows() != cfg.num_patches()) {
    throw ShapeError("image yields " + std::to_string(patches.rows()) + " patches, model expects " +
                     std::to_string(cfg.num_patches()));
  }
  nn::Var x = tape.constant(std::move(patches));
  nn::Var tokens = nn::add_row(nn::matmul(x, tape.weight("vision.patch.weight")), tape.param("vision.patch.bias"));
  return nn::add(tokens, tape.param("vision.patch.position"));
}

SegmentEncoding encode_segments(nn::Tape& tape, const Image& image, const VisionConfig& cfg, int n_segments) {
  if (n_segments < 1) throw PreconditionError("encode_segments: N_s must be >= 1");
  auto regions = extract_regions(image, cfg.color_threshold, cfg.min_area);
  const int kept = std::min<int>(static_cast<int>(regions.size()), n_segments);
  std::vector<nn::Var> parts;
  if (kept > 0) {
    nn::Matrix features(kept, RegionDescriptor::kFeatures);
    for (int i = 0; i < kept; ++i) {
      const auto f = regions[static_cast<std::size_t>(i)].features(image.height, image.width);
      for (int j = 0; j < RegionDescriptor::kFeatures; ++j) features(i, j) = f[static_cast<std::size_t>(j)];
    }
    nn::Var x = tape.constant(std::move(features));
    parts.push_back(nn::add_row(nn::matmul(x, tape.weight("vision.segment.weight")),
                                tape.param("vision.segment.bias")));
  }
  if (kept < n_segments) {
    parts.push_back(nn::gather_rows(tape.param("vision.segment.null"),
                                    std::vector<int>(static_cast<std::size_t>(n_segments - kept), 0)));
  }
  return {nn::concat_rows(parts), kept};
}

VisualFeatureBundle fuse(const nn::Matrix& patch_tokens, const nn::Matrix& segment_tokens) {
  if (patch_tokens.cols() != segment_tokens.cols()) {
    throw ShapeError("fuse: patch tokens have " + std::to_string(patch_tokens.cols()) +
                     " columns, segment tokens " + std::to_string(segment_tokens.cols()));
  }
  VisualFeatureBundle bundle;
  bundle.patch_tokens = patch_tokens;
  bundle.segment_tokens = segment_tokens;
  bundle.fused_tokens.resize(patch_tokens.rows() + segment_tokens.rows(), patch_tokens.cols());
  bundle.fused_tokens << patch_tokens, segment_tokens;
  if (!bundle.fused_tokens.allFinite()) throw NumericError("fuse: non-finite visual tokens");
  return bundle;
}

nn::Var fuse(nn::Var patch_tokens, nn::Var segment_tokens) {
  if (patch_tokens.cols() != segment_tokens.cols()) throw ShapeError("fuse: column dimensions differ");
  return nn::concat_rows({patch_tokens, segment_tokens});
}

}  // namespace smart

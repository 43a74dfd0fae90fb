#pragma once

#include <array>
#include <vector>

#include "smart/image.hpp"
#include "smart/random.hpp"
#include "smart/tape.hpp"

namespace smart {

struct VisionConfig {
  int image_size = 32;
  int patch_size = 8;
  int segments = 8;  // N_s
  int dim = 32;      // d, shared by both token streams
  int color_threshold = 48;
  int min_area = 4;

  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int patch_features() const { return patch_size * patch_size * 3; }
  void validate() const;
};

// One connected component of foreground pixels. Spatial fields are
// normalized by the image height (rows) and width (cols).
struct RegionDescriptor {
  int area = 0;
  double centroid_row = 0.0;
  double centroid_col = 0.0;
  double top = 0.0;
  double left = 0.0;
  double height = 0.0;
  double width = 0.0;
  std::array<double, 3> mean_color{};  // in [0,1]

  // Pixel bbox, kept for ordering.
  int top_px = 0;
  int left_px = 0;

  // sqrt(area share), centroid, bbox, mean color.
  static constexpr int kFeatures = 10;
  std::array<double, kFeatures> features(int image_height, int image_width) const;
};

// Background is the most frequent exact color; a pixel is foreground when
// any channel differs from it by more than `color_threshold`. Foreground
// pixels join a component through 4-neighbours whose colors are within the
// threshold of each other. Components smaller than `min_area` are dropped.
// Sorted by area descending, then bbox top, then bbox left.
std::vector<RegionDescriptor> extract_regions(const Image& image, int color_threshold, int min_area);

void init_vision_params(nn::ParamStore& store, const VisionConfig& cfg, Rng& rng);

// N_v x (p*p*3) matrix of flattened patches, pixels scaled to [0,1].
// Patches are row-major over the grid; within a patch, (row, col, channel).
nn::Matrix patch_matrix(const Image& image, int patch_size);

nn::Var encode_patches(nn::Tape& tape, const Image& image, const VisionConfig& cfg);

struct SegmentEncoding {
  nn::Var tokens;   // N_s x d
  int regions = 0;  // non-null rows
};

SegmentEncoding encode_segments(nn::Tape& tape, const Image& image, const VisionConfig& cfg,
                                int n_segments);

struct VisualFeatureBundle {
  nn::Matrix patch_tokens;
  nn::Matrix segment_tokens;
  nn::Matrix fused_tokens;
};

// Row-wise concatenation, patch tokens first.
VisualFeatureBundle fuse(const nn::Matrix& patch_tokens, const nn::Matrix& segment_tokens);
nn::Var fuse(nn::Var patch_tokens, nn::Var segment_tokens);

}  // namespace smart

#pragma once

// Raster drawing primitives used by the synthetic puzzle generator.

#include <string>
#include <string_view>

#include "smart/image.hpp"

namespace smart::render {

enum class ShapeKind { disk, square, diamond, triangle };

struct NamedColor {
  std::string_view name;
  Rgb rgb;
};

// Six colors, pairwise separated by more than the default quantization
// threshold, plus black ink and white paper.
inline constexpr NamedColor kPalette[] = {
    {"red", {220, 40, 40}},    {"green", {30, 160, 60}},  {"blue", {40, 80, 220}},
    {"yellow", {225, 200, 20}}, {"purple", {140, 50, 180}}, {"orange", {245, 130, 20}},
};
inline constexpr int kPaletteSize = 6;
inline constexpr Rgb kInk{20, 20, 20};
inline constexpr Rgb kPaper{255, 255, 255};

// Draws a shape inside the size x size box at (top, left). Pixels outside
// the image are clipped.
void draw_shape(Image& image, ShapeKind kind, int top, int left, int size, Rgb color);
void fill_rect(Image& image, int top, int left, int height, int width, Rgb color);
void outline_rect(Image& image, int top, int left, int height, int width, Rgb color);

// 3x5 bitmap font for digits and "+-=x?", scaled by `scale`, one scaled
// pixel of spacing. Unknown characters render as blanks.
void draw_text(Image& image, std::string_view text, int top, int left, int scale, Rgb color);
int text_width(std::string_view text, int scale);
inline int text_height(int scale) { return 5 * scale; }

}  // namespace smart::render

#include "smart/render.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>

namespace smart::render {

namespace {

void put(Image& image, int r, int c, Rgb color) {
  if (image.contains(r, c)) image.set(r, c, color);
}

// Rows of 3 bits, most significant bit = leftmost column.
const std::array<unsigned char, 5>* glyph(char c) {
  static const std::array<unsigned char, 5> digits[10] = {
      {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
      {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
  };
  static const std::array<unsigned char, 5> plus{0, 2, 7, 2, 0};
  static const std::array<unsigned char, 5> minus{0, 0, 7, 0, 0};
  static const std::array<unsigned char, 5> equals{0, 7, 0, 7, 0};
  static const std::array<unsigned char, 5> times{0, 5, 2, 5, 0};
  static const std::array<unsigned char, 5> question{7, 1, 3, 0, 2};
  if (c >= '0' && c <= '9') return &digits[c - '0'];
  switch (c) {
    case '+': return &plus;
    case '-': return &minus;
    case '=': return &equals;
    case 'x': return &times;
    case '?': return &question;
    default: return nullptr;
  }
}

}  // namespace

void fill_rect(Image& image, int top, int left, int height, int width, Rgb color) {
  for (int r = top; r < top + height; ++r) {
    for (int c = left; c < left + width; ++c) put(image, r, c, color);
  }
}

void outline_rect(Image& image, int top, int left, int height, int width, Rgb color) {
  for (int c = left; c < left + width; ++c) {
    put(image, top, c, color);
    put(image, top + height - 1, c, color);
  }
  for (int r = top; r < top + height; ++r) {
    put(image, r, left, color);
    put(image, r, left + width - 1, color);
  }
}

void draw_shape(Image& image, ShapeKind kind, int top, int left, int size, Rgb color) {
  switch (kind) {
    case ShapeKind::square:
      fill_rect(image, top, left, size, size, color);
      return;
    case ShapeKind::disk: {
      // Centered on the box; radius measured in doubled coordinates so even
      // sizes stay symmetric.
      const int d = size;
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          const int dy = 2 * r + 1 - d;
          const int dx = 2 * c + 1 - d;
          if (dy * dy + dx * dx <= d * d - d + 1) put(image, top + r, left + c, color);
        }
      }
      return;
    }
    case ShapeKind::diamond: {
      const int d = size;
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          if (std::abs(2 * r + 1 - d) + std::abs(2 * c + 1 - d) <= d) put(image, top + r, left + c, color);
        }
      }
      return;
    }
    case ShapeKind::triangle: {
      for (int r = 0; r < size; ++r) {
        const int span = std::min(size, 2 * r + 1);
        const int begin = (size - span) / 2;
        for (int c = begin; c < begin + span; ++c) put(image, top + r, left + c, color);
      }
      return;
    }
  }
}

int text_width(std::string_view text, int scale) {
  if (text.empty()) return 0;
  return static_cast<int>(text.size()) * 4 * scale - scale;
}

void draw_text(Image& image, std::string_view text, int top, int left, int scale, Rgb color) {
  int x = left;
  for (char ch : text) {
    if (const auto* g = glyph(ch)) {
      for (int r = 0; r < 5; ++r) {
        for (int c = 0; c < 3; ++c) {
          if (((*g)[static_cast<std::size_t>(r)] >> (2 - c)) & 1) {
            fill_rect(image, top + r * scale, x + c * scale, scale, scale, color);
          }
        }
      }
    }
    x += 4 * scale;
  }
}

}  // namespace smart::render

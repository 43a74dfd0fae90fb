#pragma once

#include <string>

#include "smart/decoder.hpp"
#include "smart/random.hpp"
#include "smart/render.hpp"

namespace fixtures {

// A model small enough for exhaustive finite-difference checks.
inline smart::ModelConfig small_model_config() {
  smart::ModelConfig cfg;
  cfg.vision.image_size = 16;
  cfg.vision.patch_size = 8;
  cfg.vision.segments = 3;
  cfg.vision.dim = 8;
  cfg.qformer.queries = 2;
  cfg.qformer.dim = 8;
  cfg.qformer.layers = 1;
  cfg.qformer.heads = 2;
  cfg.qformer.ff_hidden = 8;
  cfg.decoder.dim = 8;
  cfg.decoder.layers = 1;
  cfg.decoder.heads = 2;
  cfg.decoder.ff_hidden = 8;
  cfg.decoder.caption_tokens = 6;
  cfg.decoder.question_tokens = 5;
  cfg.decoder.option_slot = 2;
  cfg.reconcile();
  return cfg;
}

// Random blocks on paper, random digit options (distinct), random question.
inline smart::PuzzleInstance random_puzzle(smart::Rng& rng, int image_size) {
  smart::PuzzleInstance p;
  p.id = "rnd" + std::to_string(rng.below(1000000));
  p.image = smart::Image(image_size, image_size, smart::render::kPaper);
  const int blocks = rng.uniform_int(0, 4);
  for (int b = 0; b < blocks; ++b) {
    smart::render::fill_rect(p.image, rng.uniform_int(0, image_size - 2), rng.uniform_int(0, image_size - 2),
                             rng.uniform_int(1, 5), rng.uniform_int(1, 5),
                             smart::render::kPalette[rng.below(smart::render::kPaletteSize)].rgb);
  }
  static const char* questions[] = {"How many shapes are there?", "What is the value of x?",
                                    "Which color comes next in the pattern?", ""};
  p.question = questions[rng.below(4)];
  const int base = rng.uniform_int(0, 90);
  for (int i = 0; i < 5; ++i) p.options[static_cast<std::size_t>(i)] = std::to_string(base + 2 * i);
  p.gold_option_index = static_cast<int>(rng.below(5));
  return p;
}

}  // namespace fixtures

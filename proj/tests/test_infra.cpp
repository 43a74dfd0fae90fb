#include <doctest.h>

#include <functional>

#include "oracles.hpp"
#include "support.hpp"
#include "smart/config.hpp"
#include "smart/errors.hpp"
#include "smart/image.hpp"
#include "smart/layers.hpp"
#include "smart/tokenizer.hpp"

using namespace smart;
using testing_support::TempDir;

namespace {

using Op = std::function<nn::Var(nn::Tape&, const std::vector<nn::Var>&)>;

// Max entrywise relative error between tape gradients and central differences
// of sum(op(inputs) .* weights).
double op_gradient_error(const Op& op, std::vector<nn::Matrix> inputs, std::uint64_t seed) {
  Rng rng(seed);
  nn::Matrix weights;
  auto loss = [&](const std::vector<nn::Matrix>& xs) {
    nn::Tape tape;
    std::vector<nn::Var> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    const nn::Matrix out = op(tape, vars).value();
    if (weights.size() == 0) weights = layers::gaussian(rng, out.rows(), out.cols(), 1.0);
    return (out.array() * weights.array()).sum();
  };
  loss(inputs);

  nn::Tape tape;
  std::vector<nn::Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  nn::Gradients unused;
  tape.backward(nn::weighted_sum(op(tape, vars), weights), unused);

  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const nn::Matrix analytic = tape.grad(vars[k]);
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k].data()[i] += h;
      minus[k].data()[i] -= h;
      const double numeric = (loss(plus) - loss(minus)) / (2 * h);
      const double a = analytic.size() ? analytic.data()[i] : 0.0;
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("tape ops match finite differences") {
  Rng rng(1);
  auto m = [&](int r, int c) { return layers::gaussian(rng, r, c, 1.0); };
  CHECK(op_gradient_error([](nn::Tape&, const auto& v) { return nn::matmul(v[0], v[1]); }, {m(3, 4), m(4, 2)}, 1) <
        1e-6);
  CHECK(op_gradient_error([](nn::Tape&, const auto& v) { return nn::matmul_transposed(v[0], v[1]); },
                          {m(3, 4), m(5, 4)}, 2) < 1e-6);
  CHECK(op_gradient_error([](nn::Tape&, const auto& v) { return nn::add(v[0], v[1]); }, {m(3, 4), m(3, 4)}, 3) <
        1e-6);
  CHECK(op_gradient_error([](nn::Tape&, const auto& v) { return nn::add_row(v[0], v[1]); }, {m(3, 4), m(1, 4)}, 4) <
        1e-6);
  CHECK(op_gradient_error([](nn::Tape&, const auto& v) { return nn::scale(v[0], -2.5); }, {m(2, 3)}, 5) < 1e-6);
  CHECK(op_gradient_error([](nn::Tape&, const auto& v) { return nn::gelu(v[0]); }, {m(3, 3)}, 6) < 1e-6);
  CHECK(op_gradient_error([](nn::Tape&, const auto& v) { return nn::layer_norm(v[0], v[1], v[2]); },
                          {m(3, 5), m(1, 5), m(1, 5)}, 7) < 1e-5);
  CHECK(op_gradient_error([](nn::Tape&, const auto& v) { return nn::concat_rows({v[0], v[1]}); }, {m(2, 3), m(1, 3)},
                          8) < 1e-6);
  CHECK(op_gradient_error([](nn::Tape&, const auto& v) { return nn::slice_rows(v[0], 1, 2); }, {m(4, 3)}, 9) < 1e-6);
  CHECK(op_gradient_error([](nn::Tape&, const auto& v) { return nn::gather_rows(v[0], {2, 0, 2}); }, {m(3, 3)}, 10) <
        1e-6);
  CHECK(op_gradient_error([](nn::Tape&, const auto& v) { return nn::sum(v[0]); }, {m(2, 2)}, 11) < 1e-6);
  for (bool causal : {false, true}) {
    CHECK(op_gradient_error([causal](nn::Tape&, const auto& v) { return nn::attention(v[0], v[1], v[2], 2, causal); },
                            {m(3, 4), m(3, 4), m(3, 4)}, 12) < 1e-5);
  }
  CHECK(op_gradient_error([](nn::Tape&, const auto& v) { return nn::cross_entropy(v[0], {0, 2}, {1, 3}); }, {m(3, 5)},
                          13) < 1e-6);
  CHECK(op_gradient_error([](nn::Tape&, const auto& v) { return nn::cross_entropy(v[0], {1}, {4}, {0, 4}); },
                          {m(2, 5)}, 14) < 1e-6);
}

TEST_CASE("tape op values against the scalar-loop oracles") {
  Rng rng(2);
  nn::Tape tape;
  const auto a = layers::gaussian(rng, 3, 4, 1.0), b = layers::gaussian(rng, 4, 5, 1.0);
  CHECK((nn::matmul(tape.constant(a), tape.constant(b)).value() - oracle::matmul(a, b)).cwiseAbs().maxCoeff() < 1e-12);
  const auto g = layers::gaussian(rng, 1, 4, 1.0), bias = layers::gaussian(rng, 1, 4, 1.0);
  CHECK((nn::layer_norm(tape.constant(a), tape.constant(g), tape.constant(bias)).value() -
         oracle::layer_norm(a, g, bias))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  CHECK((nn::gelu(tape.constant(a)).value() - oracle::gelu(a)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(nn::gelu_value(0.0) == 0.0);

  const nn::Matrix logits = (nn::Matrix(1, 3) << 1.0, 2.0, 3.0).finished();
  const double expected = -(3.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  CHECK(std::abs(nn::cross_entropy(tape.constant(logits), {0}, {2}).value()(0, 0) - expected) < 1e-12);
  CHECK_THROWS(nn::cross_entropy(tape.constant(logits), {0}, {1}, {0, 2}));
  CHECK_THROWS_AS(nn::matmul(tape.constant(a), tape.constant(a)), ShapeError);
}

TEST_CASE("parameters and gradients through the store") {
  nn::ParamStore store;
  const auto w = store.add("w", (nn::Matrix(2, 2) << 1, 2, 3, 4).finished());
  CHECK(store.index("w") == w);
  CHECK_THROWS(store.index("absent"));
  CHECK_THROWS(store.add("w", nn::Matrix::Zero(1, 1)));
  CHECK(store.scalar_count() == 4);
  nn::Tape tape(&store);
  const nn::Matrix x = (nn::Matrix(1, 2) << 1, -1).finished();
  nn::Gradients grads(store.size());
  tape.backward(nn::sum(nn::matmul(tape.constant(x), tape.param("w"))), grads);
  // d/dW sum(x W) = x^T 1
  const nn::Matrix expected = (nn::Matrix(2, 2) << 1, 1, -1, -1).finished();
  CHECK(grads.grads[w] == expected);
}

TEST_CASE("config grammar") {
  const auto cfg = Config::parse(
      "# comment\n"
      "seed = 11\n"
      "; other comment\n"
      "[trainer]\n"
      "  base_lr =  2.5e-4  \n"
      "batch_size=8\n"
      "batch_size = 9\n"
      "[lora]\n"
      "enabled = yes\n"
      "targets = sa.wq, ca.wv ,\n");
  CHECK(cfg.get_u64("seed", 0) == 11);
  CHECK(cfg.get_double("trainer.base_lr", 0) == 2.5e-4);
  CHECK(cfg.get_int("trainer.batch_size", 0) == 9);
  CHECK(cfg.get_bool("lora.enabled", false));
  CHECK(cfg.get_list("lora.targets", {}) == std::vector<std::string>{"sa.wq", "ca.wv"});
  CHECK(cfg.get_string("missing", "fallback") == "fallback");
  CHECK(cfg.get_int("missing", 4) == 4);
  CHECK_THROWS_AS(cfg.get_int("trainer.base_lr", 0), ConfigError);
  CHECK_THROWS_AS(cfg.get_bool("trainer.batch_size", false), ConfigError);
  CHECK_THROWS_AS(Config::parse("[open\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("novalue\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse(" = 3\n"), ConfigError);
  CHECK_THROWS_AS(cfg.check_known({"seed", "trainer.base_lr", "trainer.batch_size", "lora.enabled"}), ConfigError);
  CHECK_NOTHROW(cfg.check_known({"seed", "trainer.base_lr", "trainer.batch_size", "lora.enabled", "lora.targets"}));
  CHECK_THROWS_AS(Config::load("/nonexistent/file.cfg"), ConfigError);
  CHECK(cfg.to_json().at("trainer.batch_size") == "9");
}

TEST_CASE("PNG round trip and digests") {
  TempDir dir;
  Rng rng(3);
  Image image(7, 5);
  for (auto& px : image.pixels) px = static_cast<std::uint8_t>(rng.below(256));
  write_png(dir / "x.png", image);
  const Image back = read_png(dir / "x.png");
  CHECK(back == image);
  CHECK(decode_png(encode_png(image)) == image);
  CHECK(image_digest(back) == image_digest(image));
  Image other = image;
  other.pixels[0] ^= 1;
  CHECK(image_digest(other) != image_digest(image));
  CHECK_THROWS_AS(read_png(dir / "missing.png"), ImageError);
  testing_support::spit(dir / "bad.png", "not a png");
  CHECK_THROWS_AS(read_png(dir / "bad.png"), ImageError);
}

TEST_CASE("hash and base64 known vectors") {
  CHECK(sha256_hex("abc", 3) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("", 0) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  auto b64 = [](std::string s) { return base64_encode(std::vector<std::uint8_t>(s.begin(), s.end())); };
  CHECK(b64("") == "");
  CHECK(b64("f") == "Zg==");
  CHECK(b64("fo") == "Zm8=");
  CHECK(b64("foo") == "Zm9v");
  CHECK(b64("foobar") == "Zm9vYmFy");
}

TEST_CASE("tokenizer") {
  const auto& tok = Tokenizer::instance();
  using T = Tokenizer;
  CHECK(tok.encode("How many") == tok.encode("  how   MANY "));
  const auto digits = tok.encode("x = -3.5");
  CHECK(digits.size() == 6);
  CHECK(digits[2] == T::kMinus);
  CHECK(digits[3] == T::digit_token(3));
  CHECK(digits[4] == T::kDot);
  CHECK(digits[5] == T::digit_token(5));
  // Unknown letter runs are spelled out.
  const auto spelled = tok.encode("zq");
  CHECK(spelled.size() == 2);
  CHECK(tok.piece(spelled[0]) == "z");
  CHECK(tok.encode("shapes").size() == 1);

  const auto value = tok.encode_value("-12.5");
  CHECK(value.back() == T::kEos);
  std::string decoded;
  for (int t : value) {
    if (t != T::kEos) decoded.push_back(T::numeric_char(t));
  }
  CHECK(decoded == "-12.5");
  CHECK(T::numeric_vocabulary().size() == 13);
  CHECK(T::numeric_char(T::kEos) == '\0');
  for (int t : tok.encode("what is the value of x? 0123456789 ()+*/")) {
    CHECK(t >= 0);
    CHECK(t < tok.vocab_size());
  }
}

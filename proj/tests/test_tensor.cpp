#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "testutil.hpp"
#include "vlif/ops.hpp"
#include "vlif/rng.hpp"
#include "vlif/tensor.hpp"

using namespace vlif;
using vlif::test::gradcheck;
using vlif::test::random_tensor;

TEST_CASE("shape and data invariants") {
  Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 6);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), DimensionError);
}

TEST_CASE("conv2d: identity-shaped kernel scaling") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor k = Tensor::full({1, 1, 1, 1}, 2.0);
  Tensor y = conv2d(x, k, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (double v : y.data()) CHECK(v == 2.0);
}

TEST_CASE("conv2d: hand Hadamard sum") {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor k = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor y = conv2d(x, k, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 10.0);
}

TEST_CASE("conv2d: channel mismatch is a dimension error") {
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  Tensor k = Tensor::zeros({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(x, k, 1, 1), DimensionError);
}

TEST_CASE("conv2d: gradient matches finite differences") {
  Rng rng(7);
  Tensor x = random_tensor({1, 2, 4, 4}, rng);
  Tensor k = random_tensor({3, 2, 3, 3}, rng);
  auto res = gradcheck([](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], 1, 1); },
                       {x, k});
  CHECK(res.max_rel_err <= 1e-6);

  // Strided, asymmetric padding-free case.
  Tensor x2 = random_tensor({2, 3, 5, 7}, rng);
  Tensor k2 = random_tensor({4, 3, 3, 3}, rng);
  auto res2 = gradcheck([](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], 2, 0); },
                        {x2, k2});
  CHECK(res2.max_rel_err <= 1e-6);
}

TEST_CASE("batch_norm: constant channel centers to zero") {
  Tensor x = Tensor::full({2, 1, 2, 2}, 3.5);
  Tensor gamma = Tensor::full({1}, 1.0), beta = Tensor::zeros({1});
  Tensor rm = Tensor::zeros({1}), rv = Tensor::full({1}, 1.0);
  Tensor y = batch_norm(x, gamma, beta, rm, rv, true);
  for (double v : y.data()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("batch_norm: two-value channel normalizes to +-1") {
  Tensor x = Tensor::from_data({2, 1, 1, 1}, {1.0, 3.0});
  Tensor gamma = Tensor::full({1}, 1.0), beta = Tensor::zeros({1});
  Tensor rm = Tensor::zeros({1}), rv = Tensor::full({1}, 1.0);
  Tensor y = batch_norm(x, gamma, beta, rm, rv, true, 1e-5);
  CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("batch_norm: eval mode is the running-stats affine map") {
  Tensor x = Tensor::full({1, 1, 1, 1}, 3.0);
  Tensor gamma = Tensor::full({1}, 2.0), beta = Tensor::full({1}, 1.0);
  Tensor rm = Tensor::zeros({1}), rv = Tensor::full({1}, 1.0);
  Tensor y = batch_norm(x, gamma, beta, rm, rv, false, 1e-5);
  CHECK(y.item() == doctest::Approx(7.0).epsilon(1e-4));
}

TEST_CASE("batch_norm: zero-variance channel stays finite") {
  Tensor x = Tensor::full({1, 2, 3, 3}, 0.25);
  Tensor gamma = Tensor::full({2}, 1.0), beta = Tensor::zeros({2});
  Tensor rm = Tensor::zeros({2}), rv = Tensor::full({2}, 1.0);
  Tensor y = batch_norm(x, gamma, beta, rm, rv, true);
  CHECK(all_finite(y));
}

TEST_CASE("batch_norm: gradients in both modes") {
  Rng rng(11);
  Tensor x = random_tensor({2, 3, 4, 4}, rng);
  Tensor gamma = random_tensor({3}, rng, 0.5, 1.5);
  Tensor beta = random_tensor({3}, rng, -0.5, 0.5);
  for (bool training : {true, false}) {
    auto res = gradcheck(
        [training](const std::vector<Tensor>& in) {
          Tensor rm = Tensor::zeros({3}), rv = Tensor::full({3}, 1.0);
          return batch_norm(in[0], in[1], in[2], rm, rv, training);
        },
        {x, gamma, beta});
    CAPTURE(training);
    CHECK(res.max_rel_err <= 1e-4);
  }
}

TEST_CASE("bilinear_resize: identity at equal extents, bit-exact") {
  Rng rng(3);
  Tensor x = random_tensor({1, 2, 5, 6}, rng);
  Tensor y = bilinear_resize(x, 5, 6);
  CHECK(y.data() == x.data());
}

TEST_CASE("bilinear_resize: hand weights for a 1x2 row") {
  Tensor x = Tensor::from_data({1, 1, 1, 2}, {0.0, 1.0});
  Tensor y = bilinear_resize(x, 1, 4);
  CHECK(y.data()[0] == doctest::Approx(0.0));
  CHECK(y.data()[1] == doctest::Approx(0.25));
  CHECK(y.data()[2] == doctest::Approx(0.75));
  CHECK(y.data()[3] == doctest::Approx(1.0));
}

TEST_CASE("bilinear_resize: constancy preservation") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 0.7);
  for (auto [h, w] : {std::pair<int64_t, int64_t>{7, 5}, {2, 9}, {16, 16}}) {
    Tensor y = bilinear_resize(x, h, w);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
  }
}

TEST_CASE("bilinear_resize: gradient") {
  Rng rng(5);
  Tensor x = random_tensor({1, 2, 4, 4}, rng);
  auto up = gradcheck([](const std::vector<Tensor>& in) { return bilinear_resize(in[0], 7, 9); },
                      {x});
  CHECK(up.max_rel_err <= 1e-6);
  auto down = gradcheck([](const std::vector<Tensor>& in) { return bilinear_resize(in[0], 2, 2); },
                        {x});
  CHECK(down.max_rel_err <= 1e-6);
}

TEST_CASE("backward: sum gives all-ones gradient") {
  Tensor x = Tensor::zeros({2, 1, 2, 2}).set_requires_grad(true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: quadratic derivative") {
  Tensor x = Tensor::from_data({1}, {2.0}).set_requires_grad(true);
  backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == 4.0);
}

TEST_CASE("backward: non-scalar loss is a contract error") {
  Tensor x = Tensor::zeros({2, 2}).set_requires_grad(true);
  CHECK_THROWS_AS(backward(add_scalar(x, 1.0)), ContractError);
}

TEST_CASE("backward: repeated sweeps accumulate on leaves") {
  Tensor x = Tensor::from_data({1}, {3.0}).set_requires_grad(true);
  Tensor loss = sum(mul(x, x));
  backward(loss);
  backward(loss);
  CHECK(x.grad()[0] == 12.0);  // 2 * (2x)
}

TEST_CASE("backward: composite conv -> BN -> mean matches finite differences") {
  Rng rng(13);
  Tensor x = random_tensor({1, 2, 4, 4}, rng);
  Tensor k = random_tensor({2, 2, 3, 3}, rng);
  auto res = gradcheck(
      [](const std::vector<Tensor>& in) {
        Tensor rm = Tensor::zeros({2}), rv = Tensor::full({2}, 1.0);
        Tensor g = Tensor::full({2}, 1.0), b = Tensor::zeros({2});
        return mean(batch_norm(conv2d(in[0], in[1], 1, 1), g, b, rm, rv, true));
      },
      {x, k});
  CHECK(res.max_rel_err <= 1e-5);
}

TEST_CASE("elementwise and reduction gradients") {
  Rng rng(17);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  auto chk = [&](const char* name, std::function<Tensor(const std::vector<Tensor>&)> f,
                 std::vector<Tensor> in) {
    auto res = gradcheck(f, std::move(in));
    CAPTURE(name);
    CHECK(res.max_rel_err <= 1e-4);
  };
  chk("add", [](const std::vector<Tensor>& in) { return add(in[0], in[1]); }, {a, b});
  chk("sub", [](const std::vector<Tensor>& in) { return sub(in[0], in[1]); }, {a, b});
  chk("mul", [](const std::vector<Tensor>& in) { return mul(in[0], in[1]); }, {a, b});
  chk("mul_scalar", [](const std::vector<Tensor>& in) { return mul_scalar(in[0], -1.7); }, {a});
  chk("add_scalar", [](const std::vector<Tensor>& in) { return add_scalar(in[0], 0.3); }, {a});
  chk("relu", [](const std::vector<Tensor>& in) { return relu(in[0]); }, {a});
  chk("sigmoid", [](const std::vector<Tensor>& in) { return sigmoid(in[0]); }, {a});
  chk("mean", [](const std::vector<Tensor>& in) { return mean(in[0]); }, {a});
  chk("reduce_mean01", [](const std::vector<Tensor>& in) { return reduce_mean(in[0], {0}); }, {a});
  chk("reshape", [](const std::vector<Tensor>& in) { return reshape(in[0], {2, 6}); }, {a});
  chk("scale_by",
      [](const std::vector<Tensor>& in) { return scale_by(in[0], in[1]); },
      {a, Tensor::scalar(1.3)});
  chk("charbonnier",
      [](const std::vector<Tensor>& in) { return charbonnier(in[0], in[1], 1e-3); }, {a, b});
  chk("linear",
      [](const std::vector<Tensor>& in) { return linear(in[0], in[1], in[2]); },
      {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)});
  chk("bias_add",
      [](const std::vector<Tensor>& in) { return bias_add(in[0], in[1]); },
      {random_tensor({2, 3, 2, 2}, rng), random_tensor({3}, rng)});
  chk("concat",
      [](const std::vector<Tensor>& in) { return concat_channels(in[0], in[1]); },
      {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 4, 3, 3}, rng)});
  chk("broadcast_mul",
      [](const std::vector<Tensor>& in) { return broadcast_mul(in[0], in[1]); },
      {random_tensor({2, 3, 2, 2}, rng), random_tensor({1, 3, 1, 1}, rng)});
  chk("add_time_table",
      [](const std::vector<Tensor>& in) { return add_time_table(in[0], in[1]); },
      {random_tensor({3, 2, 2, 2}, rng), random_tensor({3, 2}, rng)});
  chk("select_stack",
      [](const std::vector<Tensor>& in) {
        return stack_steps({select_step(in[0], 1), select_step(in[0], 0)});
      },
      {random_tensor({2, 3, 2}, rng)});
  chk("clamp", [](const std::vector<Tensor>& in) { return clamp(in[0], -0.5, 0.5); },
      {random_tensor({4, 4}, rng, -2.0, 2.0)});
}

TEST_CASE("clamp gradient is inclusive at the bounds") {
  Tensor x = Tensor::from_data({3}, {0.0, 0.5, 1.0}).set_requires_grad(true);
  backward(sum(clamp(x, 0.0, 1.0)));
  CHECK(x.grad() == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("charbonnier closed forms") {
  Tensor p = Tensor::full({2, 2}, 0.3), t = Tensor::full({2, 2}, 0.3);
  CHECK(charbonnier(p, t, 1e-3).item() == doctest::Approx(1e-3).epsilon(1e-12));
  Tensor p2 = Tensor::full({2, 2}, 0.103), t2 = Tensor::full({2, 2}, 0.1);
  CHECK(charbonnier(p2, t2, 1e-3).item() == doctest::Approx(std::sqrt(1e-5)).epsilon(1e-12));
}

TEST_CASE("shape algebra round trips") {
  Rng rng(19);
  Tensor x = random_tensor({2, 3, 8, 6}, rng);
  Tensor y = bilinear_resize(bilinear_resize(x, 16, 12), 8, 6);
  CHECK(y.shape() == x.shape());
  Tensor z = reshape(reshape(x, {6, 48}), {2, 3, 8, 6});
  CHECK(z.shape() == x.shape());
  CHECK(z.data() == x.data());
}

TEST_CASE("determinism: identical seeds give bit-identical results") {
  auto run = [] {
    Rng rng(99);
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    Tensor k = random_tensor({3, 3, 3, 3}, rng);
    Tensor g = Tensor::full({3}, 1.0), b = Tensor::zeros({3});
    Tensor rm = Tensor::zeros({3}), rv = Tensor::full({3}, 1.0);
    return batch_norm(conv2d(x, k, 1, 1), g, b, rm, rv, true).data();
  };
  CHECK(run() == run());
}

TEST_CASE("finite forward outputs on finite inputs") {
  Rng rng(23);
  Tensor x = random_tensor({2, 2, 6, 6}, rng, -50.0, 50.0);
  Tensor k = random_tensor({2, 2, 3, 3}, rng, -3.0, 3.0);
  Tensor g = Tensor::full({2}, 1.0), b = Tensor::zeros({2});
  Tensor rm = Tensor::zeros({2}), rv = Tensor::full({2}, 1.0);
  Tensor y = batch_norm(conv2d(x, k, 1, 1), g, b, rm, rv, true);
  CHECK(all_finite(y));
  CHECK(all_finite(sigmoid(mul_scalar(y, 100.0))));
}

TEST_CASE("SPKT round trip") {
  Rng rng(29);
  Tensor x = random_tensor({3, 2, 4}, rng);
  std::stringstream ss;
  write_spkt(ss, x);
  Tensor y = read_spkt(ss);
  CHECK(y.shape() == x.shape());
  CHECK(y.data() == x.data());
}

TEST_CASE("SPKT parse errors carry byte offsets") {
  std::stringstream bad("SPXT");
  CHECK_THROWS_AS(read_spkt(bad), ParseError);
  std::stringstream trunc(std::string("SPKT\x02\x00\x00\x00", 8));
  try {
    read_spkt(trunc);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset() >= 4);
  }
}

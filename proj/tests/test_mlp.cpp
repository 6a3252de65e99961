#include <doctest.h>

#include <cmath>
#include <random>

#include "fgn/mlp.hpp"
#include "fgn/taskgen.hpp"
#include "oracles.hpp"

using namespace fgn;

namespace {

Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<Scalar> normal(0, 1);
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  }
  return m;
}

MlpSpec random_spec(std::mt19937_64& rng, Index max_width = 16, Index max_layers = 3) {
  std::uniform_int_distribution<Index> width(1, max_width);
  std::uniform_int_distribution<Index> layers(1, max_layers);
  std::uniform_int_distribution<int> act(0, 2);
  MlpSpec spec;
  const Index n = layers(rng);
  for (Index i = 0; i <= n; ++i) spec.layer_widths.push_back(width(rng));
  for (Index i = 0; i < n; ++i) {
    spec.activations.push_back(static_cast<Activation>(act(rng)));
  }
  return spec;
}

Scalar mse_loss_at(const MlpSpec& spec, const ParamVector& params,
                   const Matrix& input, const Matrix& labels) {
  return loss(TaskKind::kRegression, forward(spec, params, input), labels);
}

Scalar rel_error(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max<Scalar>(1e-12, b.norm());
}

}  // namespace

TEST_CASE("identity network passes its input through") {
  const MlpSpec spec{{1, 1}, {Activation::kIdentity}};
  ParamVector params = init_params(spec, 0);
  params.values << 1.0, 0.0;  // weight, bias
  Matrix input(1, 1);
  input << 3.0;
  const Matrix out = forward(spec, params, input);
  CHECK(out(0, 0) == 3.0);
}

TEST_CASE("single layer computes a dot product") {
  const MlpSpec spec{{2, 1}, {}};
  ParamVector params = init_params(spec, 0);
  params.values << 1.0, 1.0, 0.0;
  Matrix input(1, 2);
  input << 1.0, 2.0;
  CHECK(forward(spec, params, input)(0, 0) == 3.0);
}

TEST_CASE("forward matches a straight-line matrix chain") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const MlpSpec spec{{4, 8, 3}, {Activation::kRelu}};
    const ParamVector params = init_params(spec, seed);
    const Matrix input = random_matrix(5, 4, rng);

    oracles::Grid grid(5, std::vector<double>(4));
    for (Index r = 0; r < 5; ++r) {
      for (Index c = 0; c < 4; ++c) {
        grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = input(r, c);
      }
    }
    std::vector<double> flat(params.values.data(),
                             params.values.data() + params.values.size());
    const oracles::Grid expected =
        oracles::mlp_forward({4, 8, 3}, {"relu"}, flat, grid);

    const Matrix out = forward(spec, params, input);
    for (Index r = 0; r < out.rows(); ++r) {
      for (Index c = 0; c < out.cols(); ++c) {
        CHECK(out(r, c) ==
              doctest::Approx(expected[static_cast<std::size_t>(r)]
                                      [static_cast<std::size_t>(c)])
                  .epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("backward recovers the closed-form scalar derivative") {
  // f(w) = (w x)^2 with x = 3: df/dw = 2 w x^2 = 18 at w = 1.
  const MlpSpec spec{{1, 1}, {Activation::kIdentity}};
  ParamVector params = init_params(spec, 0);
  params.values << 1.0, 0.0;
  Matrix input(1, 1), target(1, 1);
  input << 3.0;
  target << 0.0;
  const Matrix pred = forward(spec, params, input);
  const Matrix lg = loss_grad(TaskKind::kRegression, pred, target);
  const Gradient grad = backward(spec, params, input, lg);
  CHECK(grad.values[0] == doctest::Approx(18.0));
  CHECK(grad.values[1] == doctest::Approx(6.0));
}

TEST_CASE("zero cotangent gives a zero gradient") {
  std::mt19937_64 rng(11);
  const MlpSpec spec{{3, 4, 2}, {Activation::kTanh}};
  const ParamVector params = init_params(spec, 11);
  const Matrix input = random_matrix(4, 3, rng);
  const Gradient grad = backward(spec, params, input, Matrix::Zero(4, 2));
  CHECK(grad.values.isZero(0.0));
}

TEST_CASE("backward agrees with central finite differences") {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    std::mt19937_64 rng(seed);
    const MlpSpec spec{{3, 5, 2}, {Activation::kTanh}};
    const ParamVector params = init_params(spec, seed);
    const Matrix input = random_matrix(4, 3, rng);
    const Matrix labels = random_matrix(4, 2, rng);

    const Matrix pred = forward(spec, params, input);
    const Matrix lg = loss_grad(TaskKind::kRegression, pred, labels);
    const Gradient analytic = backward(spec, params, input, lg);
    const Gradient numeric = finite_diff_grad(
        [&](const ParamVector& p) { return mse_loss_at(spec, p, input, labels); },
        params);
    CHECK(rel_error(analytic.values, numeric.values) <= 1e-5);
  }
}

TEST_CASE("backward handles random architectures and relu kinks") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed * 7 + 1);
    const MlpSpec spec = random_spec(rng, 8, 3);
    const ParamVector params = init_params(spec, seed);
    std::uniform_int_distribution<Index> batch(1, 8);
    const Matrix input = random_matrix(batch(rng), spec.input_width(), rng);
    const Matrix labels = random_matrix(input.rows(), spec.output_width(), rng);

    const Matrix pred = forward(spec, params, input);
    const Matrix lg = loss_grad(TaskKind::kRegression, pred, labels);
    const Gradient analytic = backward(spec, params, input, lg);
    const Gradient numeric = finite_diff_grad(
        [&](const ParamVector& p) { return mse_loss_at(spec, p, input, labels); },
        params);
    CHECK(rel_error(analytic.values, numeric.values) <= 1e-5);
  }
}

TEST_CASE("backward reports the input cotangent for chaining") {
  std::mt19937_64 rng(5);
  const MlpSpec spec{{3, 4, 2}, {Activation::kTanh}};
  const ParamVector params = init_params(spec, 5);
  const Matrix input = random_matrix(3, 3, rng);
  const Matrix labels = random_matrix(3, 2, rng);

  Matrix input_grad;
  const Matrix pred = forward(spec, params, input);
  const Matrix lg = loss_grad(TaskKind::kRegression, pred, labels);
  backward(spec, params, input, lg, &input_grad);
  REQUIRE(input_grad.rows() == 3);
  REQUIRE(input_grad.cols() == 3);

  const Scalar step = 1e-6;
  Matrix probe = input;
  probe(1, 2) += step;
  const Scalar up = mse_loss_at(spec, params, probe, labels);
  probe(1, 2) -= 2 * step;
  const Scalar down = mse_loss_at(spec, params, probe, labels);
  CHECK(input_grad(1, 2) == doctest::Approx((up - down) / (2 * step)).epsilon(1e-5));
}

TEST_CASE("finite differences on simple functionals") {
  const MlpSpec spec{{1, 1}, {}};
  ParamVector params = init_params(spec, 0);
  params.values << 3.0, 0.5;

  SUBCASE("quadratic in one coordinate") {
    const Gradient g = finite_diff_grad(
        [](const ParamVector& p) { return p.values[0] * p.values[0]; }, params);
    CHECK(g.values[0] == doctest::Approx(6.0).epsilon(1e-6));
    CHECK(g.values[1] == doctest::Approx(0.0));
  }
  SUBCASE("constant function") {
    const Gradient g =
        finite_diff_grad([](const ParamVector&) { return 4.5; }, params);
    CHECK(g.values.isZero(0.0));
  }
  SUBCASE("non-finite loss is rejected") {
    CHECK_THROWS_AS(finite_diff_grad(
                        [](const ParamVector& p) {
                          return std::log(p.values[0] - 10.0);  // nan here
                        },
                        params),
                    Error);
  }
  SUBCASE("step must be positive") {
    CHECK_THROWS_AS(
        finite_diff_grad([](const ParamVector&) { return 0.0; }, params, 0.0),
        Error);
  }
}

TEST_CASE("restricted norm covers only the tail block") {
  const MlpSpec spec{{1, 1, 1}, {}};
  ParamVector grad = init_params(spec, 0);

  SUBCASE("zero gradient") {
    grad.values.setZero();
    CHECK(restricted_norm(grad) == 0.0);
  }
  SUBCASE("3-4-5 in the tail") {
    grad.values << 9.0, 7.0, 3.0, 4.0;
    CHECK(restricted_norm(grad) == 5.0);
    CHECK(restricted_norm(grad, 1) == 5.0);
    CHECK(restricted_norm(grad, 2) == grad.values.norm());
  }
  SUBCASE("unknown tail is rejected") {
    CHECK_THROWS_AS(restricted_norm(grad, 3), Error);
    CHECK_THROWS_AS(restricted_norm(grad, 0), Error);
  }
}

TEST_CASE("restricted norm never exceeds the full norm") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const MlpSpec spec = random_spec(rng);
    ParamVector grad = init_params(spec, seed);
    CHECK(restricted_norm(grad) <= grad.values.norm() + 1e-15);

    std::vector<double> tail(grad.values.data() + grad.layout->tail_offset(),
                             grad.values.data() + grad.values.size());
    CHECK(restricted_norm(grad) ==
          doctest::Approx(oracles::l2_norm(tail)).epsilon(1e-15));
  }
}

TEST_CASE("forward is row-wise: permuting input rows permutes outputs") {
  std::mt19937_64 rng(17);
  const MlpSpec spec{{4, 6, 2}, {Activation::kRelu, Activation::kTanh}};
  const ParamVector params = init_params(spec, 17);
  const Matrix input = random_matrix(6, 4, rng);
  const Matrix out = forward(spec, params, input);

  std::vector<Index> perm = {3, 0, 5, 1, 4, 2};
  Matrix permuted(6, 4);
  for (Index r = 0; r < 6; ++r) {
    permuted.row(r) = input.row(perm[static_cast<std::size_t>(r)]);
  }
  const Matrix out_perm = forward(spec, params, permuted);
  for (Index r = 0; r < 6; ++r) {
    CHECK((out_perm.row(r).array() ==
           out.row(perm[static_cast<std::size_t>(r)]).array())
              .all());
  }
}

TEST_CASE("operations are pure: identical inputs, identical bits") {
  std::mt19937_64 rng(23);
  const MlpSpec spec{{3, 4, 2}, {Activation::kTanh}};
  const ParamVector params = init_params(spec, 23);
  const Matrix input = random_matrix(5, 3, rng);

  const Matrix a = forward(spec, params, input);
  const Matrix b = forward(spec, params, input);
  CHECK((a.array() == b.array()).all());

  const ParamVector again = init_params(spec, 23);
  CHECK((params.values.array() == again.values.array()).all());
  const ParamVector other = init_params(spec, 24);
  CHECK(!(params.values.array() == other.values.array()).all());
}

TEST_CASE("shape errors name the offending layer") {
  const MlpSpec spec{{3, 4, 2}, {}};
  const ParamVector params = init_params(spec, 1);
  CHECK_THROWS_WITH_AS(forward(spec, params, Matrix::Zero(2, 5)),
                       doctest::Contains("layer 0"), Error);
  CHECK_THROWS_WITH_AS(backward(spec, params, Matrix::Zero(2, 3), Matrix::Zero(2, 3)),
                       doctest::Contains("layer 1"), Error);

  const MlpSpec other{{3, 5, 2}, {}};
  const ParamVector mismatched = init_params(other, 1);
  CHECK_THROWS_AS(forward(spec, mismatched, Matrix::Zero(2, 3)), Error);
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS((MlpSpec{{4}, {}}).validate(), Error);
  CHECK_THROWS_AS((MlpSpec{{4, 0}, {}}).validate(), Error);
  CHECK_THROWS_AS(
      (MlpSpec{{4, 2}, {Activation::kRelu, Activation::kRelu}}).validate(), Error);
  CHECK_NOTHROW((MlpSpec{{4, 2}, {Activation::kRelu}}).validate());
  CHECK_NOTHROW((MlpSpec{{4, 2}, {}}).validate());
}

TEST_CASE("init magnitudes respect the per-layer bound") {
  const MlpSpec spec{{6, 3}, {}};
  const ParamVector params = init_params(spec, 99);
  const Scalar bound = std::sqrt(6.0 / (6 + 3));
  CHECK(params.values.cwiseAbs().maxCoeff() <= bound);
  CHECK(params.values.cwiseAbs().maxCoeff() > 0.0);
}

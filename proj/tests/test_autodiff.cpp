#include <doctest.h>

#include <cmath>
#include <vector>

#include "rulstm/autodiff.hpp"
#include "rulstm/errors.hpp"
#include "rulstm/gradcheck.hpp"

using namespace rulstm;
using ad::Tape;
using ad::Tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random_matrix(std::size_t r, std::size_t c, ad::Rng& rng, bool grad = false) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = 2.0 * ad::uniform01(rng) - 1.0;
  return Tensor::matrix(r, c, v, grad);
}

}  // namespace

TEST_SUITE("matmul") {
  TEST_CASE("identity leaves the right operand unchanged") {
    Tape tape;
    auto y = tape.matmul(Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor::matrix(2, 1, {3, 4}));
    CHECK(y.shape() == ad::Shape{2, 1});
    CHECK(values(y) == std::vector<double>{3, 4});
  }

  TEST_CASE("row times column") {
    Tape tape;
    auto y = tape.matmul(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 1, {3, 4}));
    CHECK(y.item() == 11.0);
  }

  TEST_CASE("random product agrees with a triple loop") {
    ad::Rng rng(3);
    auto a = random_matrix(3, 4, rng);
    auto b = random_matrix(4, 2, rng);
    Tape tape;
    auto y = tape.matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
        CHECK(std::abs(y.at(i, j) - s) < 1e-12);
      }
    auto yt = tape.matmul_transposed(a, Tensor::matrix(2, 4, [&] {
      std::vector<double> bt(8);
      for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t j = 0; j < 2; ++j) bt[j * 4 + k] = b.at(k, j);
      return bt;
    }()));
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(yt.at(i) - y.at(i)) < 1e-12);
  }

  TEST_CASE("inner dimension mismatch names both shapes") {
    Tape tape;
    try {
      tape.matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
      FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
    }
  }
}

TEST_SUITE("elementwise") {
  TEST_CASE("fixed points") {
    Tape tape;
    CHECK(tape.sigmoid(Tensor::scalar(0.0)).item() == 0.5);
    CHECK(tape.tanh(Tensor::scalar(0.0)).item() == 0.0);
    CHECK(tape.relu(Tensor::scalar(-2.5)).item() == 0.0);
    CHECK(tape.relu(Tensor::scalar(2.5)).item() == 2.5);
  }

  TEST_CASE("binary ops reject unequal shapes") {
    Tape tape;
    CHECK_THROWS_AS(tape.add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
    CHECK_THROWS_AS(tape.mul(Tensor::zeros({3}), Tensor::zeros({2, 3})), DimensionError);
  }

  TEST_CASE("generic entry point dispatches by kind") {
    Tape tape;
    std::vector<Tensor> args{Tensor::vector({1, 2}), Tensor::vector({3, 4})};
    CHECK(values(tape.elementwise(ad::ElementwiseKind::mul, args)) == std::vector<double>{3, 8});
    CHECK_THROWS_AS(tape.elementwise(ad::ElementwiseKind::relu, args), ContractError);
  }

  TEST_CASE("bias broadcasts over rows only") {
    Tape tape;
    auto y = tape.add_bias(Tensor::matrix(2, 2, {1, 2, 3, 4}), Tensor::vector({10, 20}));
    CHECK(values(y) == std::vector<double>{11, 22, 13, 24});
    CHECK_THROWS_AS(tape.add_bias(Tensor::zeros({2, 2}), Tensor::zeros({3})), DimensionError);
  }
}

TEST_SUITE("softmax") {
  TEST_CASE("uniform input") {
    Tape tape;
    for (double v : values(tape.softmax(Tensor::vector({0, 0, 0})))) CHECK(v == doctest::Approx(1.0 / 3));
  }

  TEST_CASE("large logits do not overflow") {
    Tape tape;
    auto y = values(tape.softmax(Tensor::vector({1000, 0})));
    CHECK(std::isfinite(y[0]));
    CHECK(y[0] == doctest::Approx(1.0));
    CHECK(y[1] < 1e-300);
  }

  TEST_CASE("matches direct exponentiation") {
    Tape tape;
    auto y = values(tape.softmax(Tensor::vector({1, 2, 3})));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    const double expected[3] = {0.09003057, 0.24472847, 0.66524096};
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(y[i] - std::exp(i + 1.0) / z) < 1e-15);
      CHECK(std::abs(y[i] - expected[i]) < 1e-6);
    }
  }

  TEST_CASE("rows are normalized independently") {
    Tape tape;
    auto y = tape.softmax(Tensor::matrix(2, 2, {0, 0, 5, 5}));
    for (double v : values(y)) CHECK(v == doctest::Approx(0.5));
  }
}

TEST_SUITE("concat") {
  TEST_CASE("joins columns") {
    Tape tape;
    std::vector<Tensor> parts{Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(1, 1, {3})};
    auto y = tape.concat(parts, 1);
    CHECK(y.shape() == ad::Shape{1, 3});
    CHECK(values(y) == std::vector<double>{1, 2, 3});
  }

  TEST_CASE("a single part is returned unchanged") {
    Tape tape;
    std::vector<Tensor> parts{Tensor::matrix(2, 2, {1, 2, 3, 4})};
    auto y = tape.concat(parts, 1);
    CHECK(values(y) == values(parts[0]));
    CHECK(y.shape() == parts[0].shape());
  }

  TEST_CASE("gradient of the sum is ones into every part") {
    Tape tape;
    std::vector<Tensor> parts{Tensor::matrix(2, 2, {1, 2, 3, 4}, true),
                              Tensor::matrix(2, 1, {5, 6}, true)};
    tape.backward(tape.sum(tape.concat(parts, 1)));
    for (const auto& p : parts)
      for (double g : p.grad()) CHECK(g == 1.0);
  }

  TEST_CASE("mismatched rows are rejected") {
    Tape tape;
    std::vector<Tensor> parts{Tensor::zeros({2, 2}), Tensor::zeros({3, 1})};
    CHECK_THROWS_AS(tape.concat(parts, 1), DimensionError);
  }
}

TEST_SUITE("dropout") {
  TEST_CASE("identity outside training and at p=0") {
    ad::Rng rng(1);
    Tape tape;
    auto x = Tensor::vector({1, -2, 3});
    CHECK(values(tape.dropout(x, 0.8, false, rng)) == values(x));
    CHECK(values(tape.dropout(x, 0.0, true, rng)) == values(x));
  }

  TEST_CASE("inverted scaling keeps the mean") {
    ad::Rng rng(5);
    Tape tape;
    auto y = tape.dropout(Tensor::full({100000}, 1.0), 0.8, true, rng);
    double mean = 0.0;
    for (double v : y.data()) {
      CHECK((v == 0.0 || std::abs(v - 5.0) < 1e-12));
      mean += v;
    }
    mean /= 100000.0;
    CHECK(std::abs(mean - 1.0) < 0.02);
  }

  TEST_CASE("probability outside [0, 1) is a parameter error") {
    ad::Rng rng(1);
    Tape tape;
    CHECK_THROWS_AS(tape.dropout(Tensor::vector({1}), 1.0, true, rng), ParameterError);
    CHECK_THROWS_AS(tape.dropout(Tensor::vector({1}), -0.1, true, rng), ParameterError);
  }
}

TEST_SUITE("cross_entropy") {
  TEST_CASE("uniform scores give ln(n)") {
    Tape tape;
    CHECK(tape.cross_entropy(Tensor::vector({2, 2, 2, 2}), 1).item() == doctest::Approx(std::log(4.0)));
  }

  TEST_CASE("confident correct prediction") {
    Tape tape;
    CHECK(tape.cross_entropy(Tensor::vector({10, -10}), 0).item() < 1e-4);
  }

  TEST_CASE("matches the negative log softmax") {
    Tape tape;
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    const double loss = tape.cross_entropy(Tensor::vector({1, 2, 3}), 2).item();
    CHECK(std::abs(loss + std::log(std::exp(3.0) / z)) < 1e-12);
    CHECK(std::abs(loss - 0.40760596) < 1e-6);
  }

  TEST_CASE("batched loss is the row mean") {
    Tape tape;
    const double a = tape.cross_entropy(Tensor::vector({1, 2, 3}), 0).item();
    const double b = tape.cross_entropy(Tensor::vector({0, 1, 0}), 1).item();
    const std::vector<std::size_t> t{0, 1};
    CHECK(tape.cross_entropy(Tensor::matrix(2, 3, {1, 2, 3, 0, 1, 0}), t).item() ==
          doctest::Approx((a + b) / 2).epsilon(1e-14));
  }

  TEST_CASE("target out of range") {
    Tape tape;
    CHECK_THROWS_AS(tape.cross_entropy(Tensor::vector({1, 2}), 2), IndexError);
  }
}

TEST_SUITE("backward") {
  TEST_CASE("sum gives unit gradients") {
    Tape tape;
    auto x = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}, true);
    tape.backward(tape.sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
  }

  TEST_CASE("square at 3 has gradient 6") {
    Tape tape;
    auto x = Tensor::scalar(3.0, true);
    tape.backward(tape.mul(x, x));
    CHECK(x.grad()[0] == 6.0);
  }

  TEST_CASE("leaf gradients accumulate across calls") {
    auto x = Tensor::scalar(2.0, true);
    for (int i = 0; i < 2; ++i) {
      Tape tape;
      tape.backward(tape.scale(x, 3.0));
    }
    CHECK(x.grad()[0] == 6.0);
  }

  TEST_CASE("contract violations") {
    Tape tape;
    auto x = Tensor::vector({1, 2}, true);
    CHECK_THROWS_AS(tape.backward(tape.scale(x, 2.0)), ContractError);
    Tape other;
    auto loss = other.sum(x);
    CHECK_THROWS_AS(tape.backward(loss), ContractError);
  }

  TEST_CASE("every op passes a finite-difference check with at least 100 probes") {
    for (const auto& r : op_gradient_checks(17)) {
      CAPTURE(r.name);
      CHECK(r.probes >= 100);
      CHECK(r.max_rel_error < 1e-3);
    }
  }

  TEST_CASE("relative error definition") {
    CHECK(gradient_relative_error(1.0, 1.001) == doctest::Approx(0.001 / 1.001));
    CHECK(gradient_relative_error(0.0, 0.0) == 0.0);
    CHECK(gradient_relative_error(0.0, 1e-12) == doctest::Approx(1e-4));
  }
}

TEST_SUITE("sgd_step") {
  TEST_CASE("plain gradient step") {
    ad::Parameter p(Tensor::scalar(1.0, true));
    Tape tape;
    tape.backward(tape.scale(p.value(), 2.0));
    std::vector<ad::Parameter*> ps{&p};
    ad::sgd_step(ps, 0.1, 0.0);
    CHECK(p.value().item() == doctest::Approx(0.8).epsilon(1e-15));
    CHECK_FALSE(p.value().has_grad());
  }

  TEST_CASE("momentum recurrence over two steps") {
    const double lr = 0.05, g = 1.5;
    ad::Parameter p(Tensor::scalar(0.0, true));
    std::vector<ad::Parameter*> ps{&p};
    for (int i = 0; i < 2; ++i) {
      Tape tape;
      tape.backward(tape.scale(p.value(), g));
      ad::sgd_step(ps, lr, 0.9);
    }
    CHECK(p.value().item() == doctest::Approx(-lr * g * (1.0 + 1.9)).epsilon(1e-14));
  }

  TEST_CASE("zero gradient leaves the value") {
    ad::Parameter p(Tensor::vector({0.5, -0.5}, true));
    Tape tape;
    tape.backward(tape.scale(tape.sum(p.value()), 0.0));
    std::vector<ad::Parameter*> ps{&p};
    ad::sgd_step(ps, 0.1, 0.9);
    CHECK(values(p.value()) == std::vector<double>{0.5, -0.5});
  }

  TEST_CASE("missing gradient is a contract error") {
    ad::Parameter p(Tensor::scalar(1.0, true));
    std::vector<ad::Parameter*> ps{&p};
    CHECK_THROWS_AS(ad::sgd_step(ps, 0.1, 0.9), ContractError);
  }

  TEST_CASE("parameter copies are deep") {
    ad::Parameter p(Tensor::vector({1.0}, true));
    ad::Parameter q = p;
    q.value().mutable_data()[0] = 7.0;
    CHECK(p.value().item() == 1.0);
  }
}

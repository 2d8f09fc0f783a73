#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "oracles.hpp"
#include "selip/autodiff.hpp"
#include "selip/error.hpp"
#include "selip/optim.hpp"

using namespace selip;

namespace {

// Differentiates f on a fresh tape and returns the finite-difference error.
double primitive_error(std::vector<Parameter*> params, const std::function<NodeId(Tape&, std::vector<NodeId>&)>& f) {
  auto eval = [&](bool grad) {
    Tape tape;
    std::vector<NodeId> ids;
    for (auto* p : params) ids.push_back(tape.parameter(*p));
    const NodeId root = f(tape, ids);
    if (grad) tape.backward(root);
    return tape.scalar_value(root);
  };
  eval(true);
  return finite_diff_check([&] { return eval(false); }, params, 1e-5);
}

Matrix positive(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& x : m.data()) x = rng.uniform(0.5, 2.0);
  return m;
}

}  // namespace

TEST_CASE("elementary gradients") {
  Parameter x("x", Matrix{{1.0, -2.0}, {3.5, 0.25}});
  {
    Tape tape;
    tape.backward(tape.sum(tape.parameter(x)));
    for (double g : x.grad.data()) CHECK(g == 1.0);
  }
  {
    Tape tape;
    const auto id = tape.parameter(x);
    tape.backward(tape.sum(tape.mul(id, id)));
    for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad.data()[i] == 2.0 * x.value.data()[i]);
  }
  // backward overwrites rather than accumulating
  {
    Tape tape;
    tape.backward(tape.sum(tape.parameter(x)));
    Tape again;
    again.backward(again.sum(again.parameter(x)));
    for (double g : x.grad.data()) CHECK(g == 1.0);
  }
}

TEST_CASE("every primitive passes finite differences") {
  Rng rng(10);
  Parameter a("a", oracle::random_matrix(3, 4, rng));
  Parameter b("b", oracle::random_matrix(3, 4, rng));
  Parameter c("c", oracle::random_matrix(4, 2, rng));
  Parameter bias("bias", oracle::random_matrix(1, 4, rng));
  Parameter pos("pos", positive(3, 4, rng));
  Parameter col("col", positive(3, 1, rng));
  Parameter w("w", oracle::random_matrix(3, 2, rng));  // weights the non-scalar outputs

  auto weighted = [&](Tape& t, NodeId out, NodeId weights) { return t.sum(t.mul(out, weights)); };

  CHECK(primitive_error({&a, &c, &w}, [&](Tape& t, auto& id) { return weighted(t, t.matmul(id[0], id[1]), id[2]); }) < 1e-6);
  CHECK(primitive_error({&a, &b}, [&](Tape& t, auto& id) { return t.sum(t.mul(t.transpose(id[0]), t.transpose(id[1]))); }) < 1e-6);
  CHECK(primitive_error({&a, &b}, [&](Tape& t, auto& id) { return t.sum(t.mul(t.add(id[0], id[1]), id[1])); }) < 1e-6);
  CHECK(primitive_error({&a, &b}, [&](Tape& t, auto& id) { return t.sum(t.mul(t.sub(id[0], id[1]), id[0])); }) < 1e-6);
  CHECK(primitive_error({&a, &bias, &b}, [&](Tape& t, auto& id) { return t.sum(t.mul(t.add_row(id[0], id[1]), id[2])); }) < 1e-6);
  CHECK(primitive_error({&a, &b}, [&](Tape& t, auto& id) { return t.sum(t.mul(t.scale(id[0], -1.7), id[1])); }) < 1e-6);
  CHECK(primitive_error({&a, &b}, [&](Tape& t, auto& id) { return t.sum(t.mul(t.div_scalar(id[0], 3.0), id[1])); }) < 1e-6);
  CHECK(primitive_error({&a, &b}, [&](Tape& t, auto& id) { return t.sum(t.mul(t.exp(id[0]), id[1])); }) < 1e-6);
  CHECK(primitive_error({&pos, &b}, [&](Tape& t, auto& id) { return t.sum(t.mul(t.log(id[0]), id[1])); }) < 1e-6);
  CHECK(primitive_error({&a, &b}, [&](Tape& t, auto& id) { return t.sum(t.mul(t.tanh(id[0]), id[1])); }) < 1e-6);
  CHECK(primitive_error({&a, &b}, [&](Tape& t, auto& id) { return t.sum(t.mul(t.row_softmax(id[0]), id[1])); }) < 1e-6);
  CHECK(primitive_error({&a, &b}, [&](Tape& t, auto& id) { return t.sum(t.mul(t.row_log_softmax(id[0]), id[1])); }) < 1e-6);
  CHECK(primitive_error({&a, &col}, [&](Tape& t, auto& id) { return t.sum(t.mul(t.row_l2_norm(id[0]), id[1])); }) < 1e-6);
  CHECK(primitive_error({&a, &col, &b}, [&](Tape& t, auto& id) { return t.sum(t.mul(t.div_rows(id[0], id[1]), id[2])); }) < 1e-6);
  CHECK(primitive_error({&a}, [&](Tape& t, auto& id) { return t.mean(t.mul(id[0], id[0])); }) < 1e-6);
}

TEST_CASE("primitive lookup by name") {
  CHECK(primitive_from_name("matmul") == Primitive::MatMul);
  CHECK(primitive_from_name(primitive_name(Primitive::RowSoftmax)) == Primitive::RowSoftmax);
  try {
    primitive_from_name("conv2d");
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnsupportedPrimitive);
  }
  Tape tape;
  Parameter x("x", Matrix{{1.0}});
  const NodeId ids[] = {tape.parameter(x)};
  CHECK(tape.value(tape.apply(Primitive::Exp, ids))(0, 0) == std::exp(1.0));
  CHECK_THROWS_AS(tape.apply(Primitive::MatMul, ids), Error);
}

TEST_CASE("finite difference check") {
  Parameter x("x", Matrix{{0.3, -1.2, 2.0}});
  const Matrix A{{2.0, 0.5, 0.0}, {0.5, 1.0, -0.3}, {0.0, -0.3, 3.0}};
  auto quad = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) s += x.value(0, i) * A(i, j) * x.value(0, j);
    return s;
  };
  for (std::size_t i = 0; i < 3; ++i) {
    double g = 0.0;
    for (std::size_t j = 0; j < 3; ++j) g += 2.0 * A(i, j) * x.value(0, j);
    x.grad(0, i) = g;
  }
  std::vector<Parameter*> ps{&x};
  CHECK(finite_diff_check(quad, ps, 1e-5) < 1e-9);
  try {
    finite_diff_check([] { return std::nan(""); }, ps, 1e-5);
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteValue);
  }
}

TEST_CASE("gradients are deterministic") {
  Rng rng(11);
  Parameter a("a", oracle::random_matrix(4, 3, rng));
  auto run = [&] {
    Tape t;
    const auto id = t.parameter(a);
    t.backward(t.sum(t.row_log_softmax(t.matmul(id, t.transpose(id)))));
    return a.grad;
  };
  CHECK(run() == run());
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Parameter p("p", Matrix{{1.0, -2.0}});
    std::vector<Parameter*> ps{&p};
    auto st = make_adam_state(ps);
    adam_step(st, ps, 0.1);
    CHECK(p.value == Matrix{{1.0, -2.0}});
    CHECK(st.step_count == 1);
  }
  SUBCASE("first step moves by about lr") {
    Parameter p("p", Matrix{{1.0, -2.0}});
    p.grad = Matrix{{3.0, -0.01}};
    std::vector<Parameter*> ps{&p};
    auto st = make_adam_state(ps);
    adam_step(st, ps, 0.01);
    // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    CHECK(p.value(0, 0) == doctest::Approx(1.0 - 0.01 * 3.0 / (3.0 + 1e-8)).epsilon(1e-14));
    CHECK(p.value(0, 1) == doctest::Approx(-2.0 + 0.01 * 0.01 / (0.01 + 1e-8)).epsilon(1e-14));
  }
  SUBCASE("minimizes a parabola") {
    Parameter p("p", Matrix{{1.0}});
    std::vector<Parameter*> ps{&p};
    auto st = make_adam_state(ps);
    for (int i = 0; i < 100; ++i) {
      p.grad(0, 0) = 2.0 * p.value(0, 0);
      adam_step(st, ps, 0.1);
    }
    CHECK(std::abs(p.value(0, 0)) < 0.1);
  }
  SUBCASE("zero learning rate is the identity") {
    Parameter p("p", Matrix{{0.5, 0.25}});
    p.grad = Matrix{{1.0, 2.0}};
    std::vector<Parameter*> ps{&p};
    auto st = make_adam_state(ps);
    adam_step(st, ps, 0.0);
    CHECK(p.value == Matrix{{0.5, 0.25}});
  }
  SUBCASE("bad betas") {
    Parameter p("p", Matrix{{0.0}});
    std::vector<Parameter*> ps{&p};
    CHECK_THROWS_AS(make_adam_state(ps, 1.0), Error);
  }
}

TEST_CASE("learning rate schedules") {
  const ScheduleConfig cfg;
  CHECK(warmup_lr(5000, 1e-4, cfg) == 1e-4);
  CHECK(warmup_lr(2500, 1e-4, cfg) == 5e-5);
  CHECK(warmup_lr(1, 1e-4, cfg) == doctest::Approx(2e-8).epsilon(1e-14));
  CHECK(poly_lr(0, 1e-4, cfg) == 1e-4);
  CHECK(poly_lr(100, 1e-4, cfg) == 0.0);
  CHECK(std::abs(poly_lr(50, 1e-4, cfg) - 1e-4 * std::pow(0.5, 0.9)) < 1e-12);
  CHECK(poly_lr(50, 1e-4, cfg) == doctest::Approx(5.359e-5).epsilon(1e-3));
  CHECK(warmup_lr(cfg.t_max_warmup, 5e-5, cfg) == poly_lr(0, 5e-5, cfg));

  auto code = [](auto f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::ConfigError;
  };
  CHECK(code([&] { warmup_lr(0, 1e-4, cfg); }) == ErrorCode::OutOfRangeIteration);
  CHECK(code([&] { warmup_lr(5001, 1e-4, cfg); }) == ErrorCode::OutOfRangeIteration);
  CHECK(code([&] { poly_lr(-1, 1e-4, cfg); }) == ErrorCode::OutOfRangeEpoch);
  CHECK(code([&] { poly_lr(101, 1e-4, cfg); }) == ErrorCode::OutOfRangeEpoch);

  // iteration-level schedule: warmup, then one decay step per completed epoch
  CHECK(scheduled_lr(1, 1e-4, cfg, 250) == warmup_lr(1, 1e-4, cfg));
  CHECK(scheduled_lr(2500, 1e-4, cfg, 250) == warmup_lr(2500, 1e-4, cfg));
  CHECK(scheduled_lr(5000, 1e-4, cfg, 250) == 1e-4);
  CHECK(scheduled_lr(5001, 1e-4, cfg, 250) == 1e-4);
  CHECK(scheduled_lr(5000 + 50 * 250 + 1, 1e-4, cfg, 250) == poly_lr(50, 1e-4, cfg));
  CHECK(scheduled_lr(30001, 1e-4, cfg, 250) == 0.0);

  ScheduleConfig bad;
  bad.e_max = 0;
  CHECK_THROWS_AS(validate_schedule(bad), Error);
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "oracles.hpp"
#include "selip/contrastive_loss.hpp"
#include "selip/error.hpp"
#include "selip/optim.hpp"

using namespace selip;

namespace {

Matrix random_symmetric_unit(std::size_t n, Rng& rng) {
  Matrix S(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    S(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) S(i, j) = S(j, i) = rng.uniform01();
  }
  return S;
}

double row_sum(const Matrix& m, std::size_t r) {
  const auto row = m.row(r);
  return std::accumulate(row.begin(), row.end(), 0.0);
}

}  // namespace

TEST_CASE("cosine matrix") {
  const Matrix eye = Matrix::identity(4);
  CHECK(cosine_matrix({eye, eye}) == eye);

  Rng rng(1);
  const auto V = oracle::random_matrix(4, 8, rng);
  const auto T = oracle::random_matrix(4, 8, rng);
  const auto C = cosine_matrix({V, T});
  Matrix V2 = V, T2 = T;
  for (double& x : V2.data()) x *= 3.5;
  for (double& x : T2.data()) x *= 0.01;
  const auto C2 = cosine_matrix({V2, T2});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(std::abs(C(i, j) - oracle::cosine(V, i, T, j)) < 1e-12);
      CHECK(std::abs(C(i, j) - C2(i, j)) < 1e-12);
      CHECK(std::abs(C(i, j)) <= 1.0);
    }
  }
}

TEST_CASE("cosine matrix names the zero row") {
  Matrix V(3, 2, 1.0), T(3, 2, 1.0);
  T(2, 0) = T(2, 1) = 0.0;
  try {
    cosine_matrix({V, T});
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroNormRow);
    CHECK(e.subject().find("text") != std::string::npos);
    CHECK(e.subject().find('2') != std::string::npos);
  }
}

TEST_CASE("probability matrices") {
  const auto uniform = prob_matrices(Matrix(5, 5, 0.0), 0.3);
  for (double p : uniform.v2t.data()) CHECK(p == doctest::Approx(0.2).epsilon(1e-15));

  Matrix tenI = Matrix::identity(3);
  for (double& x : tenI.data()) x *= 10.0;
  const auto sharp = prob_matrices(tenI, 0.07);
  for (std::size_t i = 0; i < 3; ++i) CHECK(sharp.v2t(i, i) > 0.999);

  Rng rng(2);
  for (int k = 0; k < 100; ++k) {
    const std::size_t n = 2 + rng.uniform_index(7);
    Matrix C = oracle::random_matrix(n, n, rng);
    const double tau = rng.uniform(0.01, 2.0);
    const auto P = prob_matrices(C, tau);
    const auto Pt = prob_matrices(C.transposed(), tau);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(row_sum(P.v2t, i) - 1.0) < 1e-9);
      CHECK(std::abs(row_sum(P.t2v, i) - 1.0) < 1e-9);
    }
    CHECK(P.t2v == Pt.v2t);
  }
}

TEST_CASE("clip loss") {
  for (std::size_t n : {2u, 5u, 64u}) {
    const Matrix U(n, n, 1.0 / static_cast<double>(n));
    CHECK(std::abs(clip_loss(U, U).clip - std::log(static_cast<double>(n))) < 1e-14);
  }
  Matrix near_eye = Matrix::identity(3);
  near_eye(0, 0) = 1.0 - 1e-12;
  near_eye(0, 1) = 1e-12;
  CHECK(clip_loss(near_eye, near_eye).clip < 1e-11);

  const Matrix P{{0.9, 0.1}, {0.2, 0.8}};
  const auto l = clip_loss(P, P);
  CHECK(l.v2t == doctest::Approx(-(std::log(0.9) + std::log(0.8)) / 2).epsilon(1e-14));
  CHECK(l.v2t == doctest::Approx(0.16425).epsilon(1e-4));
  CHECK(l.clip == doctest::Approx(l.v2t));
}

TEST_CASE("soft target") {
  const auto Q = soft_target(Matrix::identity(2), 1e-6);
  CHECK(Q(0, 0) == doctest::Approx((1.0 + 1e-6) / (1.0 + 2e-6)).epsilon(1e-15));
  CHECK(Q(0, 1) == doctest::Approx(1e-6 / (1.0 + 2e-6)).epsilon(1e-12));

  const auto Qu = soft_target(Matrix(4, 4, 1.0), 1e-6);
  for (double q : Qu.data()) CHECK(q == doctest::Approx(0.25).epsilon(1e-15));

  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    const auto S = random_symmetric_unit(6, rng);
    const auto R = soft_target(S, 1e-6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(row_sum(R, i) - 1.0) < 1e-12);
    for (double q : R.data()) CHECK(q > 0.0);
  }
}

TEST_CASE("soft-target loss") {
  Rng rng(4);
  const auto S = random_symmetric_unit(5, rng);
  const auto Q = soft_target(S, 1e-6);
  CHECK(std::abs(se_loss(Q, Q, S, 1e-6).se) < 1e-15);

  const Matrix U(2, 2, 0.5);
  const auto big = se_loss(U, U, Matrix::identity(2), 1e-6);
  CHECK(std::isfinite(big.se));
  CHECK(big.se > 5.0);

  for (int k = 0; k < 100; ++k) {
    const std::size_t n = 2 + rng.uniform_index(7);
    const auto Sr = random_symmetric_unit(n, rng);
    const auto P = prob_matrices(oracle::random_matrix(n, n, rng), rng.uniform(0.05, 1.0));
    const auto l = se_loss(P.v2t, P.t2v, Sr, 1e-6);
    CHECK(l.v2t >= 0.0);
    CHECK(l.t2v >= 0.0);
    CHECK(l.se >= 0.0);
  }
}

TEST_CASE("total loss composition") {
  Rng rng(5);
  const auto V = oracle::random_matrix(6, 4, rng);
  const auto T = oracle::random_matrix(6, 4, rng);
  const auto S = random_symmetric_unit(6, rng);

  LossConfig clip_only{0.07, 1.7, 0.0, 1e-6};
  const auto b0 = total_loss({V, T}, &S, clip_only);
  CHECK(b0.L_total == 1.7 * b0.L_clip);
  const auto b_null = total_loss({V, T}, nullptr, clip_only);
  CHECK(b_null.L_total == 1.7 * b_null.L_clip);
  CHECK(b_null.L_se == 0.0);

  LossConfig with_se{0.07, 1.0, 1.0, 1e-6};
  CHECK_THROWS_AS(total_loss({V, T}, nullptr, with_se), Error);

  // identical embeddings give uniform P, which is the target of an all-ones S
  const Matrix same(4, 3, 1.0);
  const Matrix ones(4, 4, 1.0);
  LossConfig se_only{0.07, 0.0, 1.0, 1e-6};
  CHECK(std::abs(total_loss({same, same}, &ones, se_only).L_total) < 1e-15);
}

TEST_CASE("total loss matches the scalar oracle") {
  const Matrix V{{1.0, 0.5}, {-0.3, 2.0}};
  const Matrix T{{0.7, -0.1}, {0.2, 1.1}};
  const Matrix S{{1.0, 0.25}, {0.25, 1.0}};
  const LossConfig cfg{0.07, 1.0, 1.0, 1e-6};
  const auto b = total_loss({V, T}, &S, cfg);
  const auto o = oracle::loss(V, T, &S, 0.07, 1.0, 1.0, 1e-6);
  CHECK(std::abs(b.L_clip - o.clip) < 1e-10);
  CHECK(std::abs(b.L_se - o.se) < 1e-10);
  CHECK(std::abs(b.L_total - o.total) < 1e-10);

  Rng rng(6);
  for (int k = 0; k < 50; ++k) {
    const std::size_t n = 2 + rng.uniform_index(10);
    const std::size_t d = 2 + rng.uniform_index(10);
    const auto Vr = oracle::random_matrix(n, d, rng);
    const auto Tr = oracle::random_matrix(n, d, rng);
    const auto Sr = random_symmetric_unit(n, rng);
    const LossConfig c{rng.uniform(0.05, 1.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), 1e-6};
    const auto br = total_loss({Vr, Tr}, &Sr, c);
    const auto orr = oracle::loss(Vr, Tr, &Sr, c.tau, c.alpha, c.beta, 1e-6);
    CHECK(std::abs(br.L_total - orr.total) < 1e-10 * std::max(1.0, orr.total));
    CHECK(std::isfinite(br.L_total));
  }
}

TEST_CASE("loss invariances") {
  Rng rng(7);
  const std::size_t n = 6;
  const auto V = oracle::random_matrix(n, 5, rng);
  const auto T = oracle::random_matrix(n, 5, rng);
  const auto S = random_symmetric_unit(n, rng);
  const LossConfig cfg{};
  const auto base = total_loss({V, T}, &S, cfg);

  Matrix Vs = V;
  for (double& x : Vs.data()) x *= 42.0;
  CHECK(std::abs(total_loss({Vs, T}, &S, cfg).L_total - base.L_total) < 1e-10);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Matrix Vp(n, 5), Tp(n, 5), Sp(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 5; ++k) {
      Vp(i, k) = V(perm[i], k);
      Tp(i, k) = T(perm[i], k);
    }
    for (std::size_t j = 0; j < n; ++j) Sp(i, j) = S(perm[i], perm[j]);
  }
  const auto permuted = total_loss({Vp, Tp}, &Sp, cfg);
  CHECK(permuted.L_clip == doctest::Approx(base.L_clip).epsilon(1e-12));
  CHECK(permuted.L_se == doctest::Approx(base.L_se).epsilon(1e-12));

  const Matrix constant(64, 8, 0.3);
  CHECK(std::abs(total_loss({constant, constant}, nullptr, LossConfig{0.07, 1.0, 0.0, 1e-6}).L_clip -
                 std::log(64.0)) < 1e-9);
}

TEST_CASE("tape loss equals the direct loss and passes finite differences") {
  Rng rng(8);
  for (std::size_t n : {2u, 4u, 8u}) {
    for (std::size_t d : {3u, 16u}) {
      for (double tau : {0.07, 1.0}) {
        Parameter V("V", oracle::random_matrix(n, d, rng));
        Parameter T("T", oracle::random_matrix(n, d, rng));
        const auto S = random_symmetric_unit(n, rng);
        const LossConfig cfg{tau, 1.0, 1.0, 1e-6};
        Tape tape;
        const auto nodes = build_total_loss(tape, tape.parameter(V), tape.parameter(T), &S, cfg);
        tape.backward(nodes.total);
        const auto direct = total_loss({V.value, T.value}, &S, cfg);
        CHECK(std::abs(tape.scalar_value(nodes.total) - direct.L_total) < 1e-10);
        CHECK(std::abs(tape.scalar_value(nodes.clip) - direct.L_clip) < 1e-10);
        CHECK(std::abs(tape.scalar_value(nodes.se) - direct.L_se) < 1e-10);
        std::vector<Parameter*> ps{&V, &T};
        const double err =
            finite_diff_check([&] { return total_loss({V.value, T.value}, &S, cfg).L_total; }, ps, 1e-5);
        CHECK(err < 1e-4);
      }
    }
  }
}

TEST_CASE("soft-target loss alone favours the diagonal for an identity target") {
  Rng rng(9);
  const std::size_t n = 4;
  Parameter V("V", oracle::random_matrix(n, 8, rng));
  Parameter T("T", oracle::random_matrix(n, 8, rng));
  const Matrix S = Matrix::identity(n);
  const LossConfig cfg{0.07, 0.0, 1.0, 1e-6};
  std::vector<Parameter*> ps{&V, &T};
  auto adam = make_adam_state(ps);
  for (int step = 0; step < 300; ++step) {
    Tape tape;
    const auto nodes = build_total_loss(tape, tape.parameter(V), tape.parameter(T), &S, cfg);
    tape.backward(nodes.total);
    adam_step(adam, ps, 0.05);
  }
  const auto b = total_loss({V.value, T.value}, &S, cfg);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = b.P_v2t.row(i);
    CHECK(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == i);
    const auto col = b.P_t2v.row(i);
    CHECK(static_cast<std::size_t>(std::max_element(col.begin(), col.end()) - col.begin()) == i);
  }
}

TEST_CASE("loss config validation") {
  CHECK_THROWS_AS(validate_loss_config({0.0, 1.0, 1.0, 1e-6}), Error);
  CHECK_THROWS_AS(validate_loss_config({0.07, 0.0, 0.0, 1e-6}), Error);
  CHECK_THROWS_AS(validate_loss_config({0.07, 1.0, 1.0, 0.0}), Error);
  CHECK_THROWS_AS(validate_loss_config({0.07, -1.0, 1.0, 1e-6}), Error);
  CHECK_NOTHROW(validate_loss_config({}));
}

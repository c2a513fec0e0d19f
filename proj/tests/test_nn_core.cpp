#include <doctest.h>

#include "fixtures.hpp"
#include "ntrf/errors.hpp"
#include "ntrf/nn_core.hpp"

using namespace ntrf;
using fixtures::rel_error;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double bound = 1.0) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
  return m;
}

Vector flatten(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

Matrix unflatten(const Vector& v, Eigen::Index r, Eigen::Index c) { return Eigen::Map<const Matrix>(v.data(), r, c); }

double max_rel_error(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) worst = std::max(worst, rel_error(a.data()[i], b.data()[i]));
  return worst;
}

}  // namespace

TEST_CASE("embedding lookup and backward") {
  Matrix table(2, 3);
  table << 1, 0, 5,
           0, 1, 7;
  const Matrix e = embed_forward({0, 1}, table);
  CHECK(e.col(0) == table.col(0));
  CHECK(e.col(1) == table.col(1));
  const Matrix r = embed_forward({2, 2}, table);
  CHECK(r.col(0) == r.col(1));
  CHECK_THROWS_AS(embed_forward({3}, table), IndexError);

  Rng rng(3);
  const TokenSeq ids{2, 0, 2, 1};
  const Matrix g = random_matrix(2, 4, rng);
  Matrix grad = Matrix::Zero(2, 3);
  embed_backward(ids, g, grad);
  auto loss = [&](const Vector& flat) { return (embed_forward(ids, unflatten(flat, 2, 3)).cwiseProduct(g)).sum(); };
  const Vector fd = finite_diff_grad(loss, flatten(table), 1e-6);
  CHECK(max_rel_error(grad, unflatten(fd, 2, 3)) < 1e-6);
}

TEST_CASE("affine relu forward") {
  Matrix y(2, 1);
  y << -1, 2;
  const Matrix id = Matrix::Identity(2, 2);
  const Matrix zero_b = Matrix::Zero(2, 1);
  const Matrix out = affine_relu_forward(y, id, zero_b);
  CHECK(out(0, 0) == 0.0);
  CHECK(out(1, 0) == 2.0);

  Matrix b(2, 1);
  b << 3, -3;
  const Matrix o2 = affine_relu_forward(Matrix::Ones(2, 4), Matrix::Zero(2, 2), b);
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(o2(0, i) == 3.0);
    CHECK(o2(1, i) == 0.0);
  }
}

TEST_CASE("affine relu gradient matches finite differences") {
  Rng rng(11);
  int checked = 0;
  for (int trial = 0; trial < 50 && checked < 10; ++trial) {
    const Matrix in = random_matrix(3, 4, rng);
    const Matrix w = random_matrix(2, 3, rng);
    const Matrix b = random_matrix(2, 1, rng);
    const Matrix pre = (w * in).colwise() + b.col(0);
    if (pre.cwiseAbs().minCoeff() < 1e-3) continue;
    const Matrix g = random_matrix(2, 4, rng);
    const Matrix out = affine_relu_forward(in, w, b);
    Matrix wg = Matrix::Zero(2, 3), bg = Matrix::Zero(2, 1);
    const Matrix ig = affine_relu_backward(in, out, g, w, wg, bg);

    auto by_w = [&](const Vector& f) { return affine_relu_forward(in, unflatten(f, 2, 3), b).cwiseProduct(g).sum(); };
    auto by_b = [&](const Vector& f) { return affine_relu_forward(in, w, unflatten(f, 2, 1)).cwiseProduct(g).sum(); };
    auto by_in = [&](const Vector& f) { return affine_relu_forward(unflatten(f, 3, 4), w, b).cwiseProduct(g).sum(); };
    CHECK(max_rel_error(wg, unflatten(finite_diff_grad(by_w, flatten(w), 1e-6), 2, 3)) < 1e-6);
    CHECK(max_rel_error(bg, unflatten(finite_diff_grad(by_b, flatten(b), 1e-6), 2, 1)) < 1e-6);
    CHECK(max_rel_error(ig, unflatten(finite_diff_grad(by_in, flatten(in), 1e-6), 3, 4)) < 1e-6);
    ++checked;
  }
  CHECK(checked == 10);
}

TEST_CASE("half convolution by hand") {
  CHECK(halfconv_pad_before(2) == 1);
  CHECK(halfconv_pad_after(2) == 0);
  CHECK(halfconv_pad_before(3) == 1);
  CHECK(halfconv_pad_after(3) == 1);
  CHECK(halfconv_pad_before(4) == 2);
  CHECK(halfconv_pad_after(4) == 1);

  Matrix y(1, 3);
  y << 1, 2, 3;
  Matrix f(1, 2);
  f << 1, 1;
  const Vector out = halfconv_single(y, f);
  REQUIRE(out.size() == 3);
  CHECK(out(0) == 1.0);
  CHECK(out(1) == 3.0);
  CHECK(out(2) == 5.0);

  Matrix w1(1, 1);
  w1 << -2;
  Matrix y2(1, 3);
  y2 << 1, -2, 0.5;
  const Vector o1 = halfconv_single(y2, w1);
  CHECK(o1(0) == 0.0);
  CHECK(o1(1) == 4.0);
  CHECK(o1(2) == 0.0);

  Rng rng(5);
  const Matrix any = random_matrix(3, 6, rng);
  CHECK(halfconv_single(any, Matrix::Zero(3, 4)).isZero());
}

TEST_CASE("half convolution bank form agrees with the single-filter form") {
  Rng rng(8);
  for (int width = 1; width <= 4; ++width) {
    const Matrix in = random_matrix(3, 5, rng);
    const Matrix filters = random_matrix(2, 3 * width, rng);
    const Matrix out = halfconv_forward(in, filters, width);
    for (Eigen::Index o = 0; o < 2; ++o) {
      const Matrix single = Eigen::Map<const Matrix>(filters.row(o).eval().data(), 3, width);
      const Vector ref = halfconv_single(in, single);
      for (Eigen::Index i = 0; i < 5; ++i) CHECK(out(o, i) == doctest::Approx(ref(i)).epsilon(1e-14));
    }
  }
}

TEST_CASE("half convolution gradient matches finite differences") {
  Rng rng(21);
  for (int width = 1; width <= 4; ++width) {
    int checked = 0;
    for (int trial = 0; trial < 100 && checked < 3; ++trial) {
      const Matrix in = random_matrix(2, 5, rng);
      const Matrix filters = random_matrix(3, 2 * width, rng);
      ConvCache cache;
      halfconv_forward(in, filters, width, &cache);
      if (cache.pre.cwiseAbs().minCoeff() < 1e-3) continue;
      const Matrix g = random_matrix(3, 5, rng);
      Matrix fg = Matrix::Zero(3, 2 * width);
      const Matrix ig = halfconv_backward(cache, g, filters, width, 2, fg);
      auto by_f = [&](const Vector& v) {
        return halfconv_forward(in, unflatten(v, 3, 2 * width), width).cwiseProduct(g).sum();
      };
      auto by_in = [&](const Vector& v) { return halfconv_forward(unflatten(v, 2, 5), filters, width).cwiseProduct(g).sum(); };
      CHECK(max_rel_error(fg, unflatten(finite_diff_grad(by_f, flatten(filters), 1e-6), 3, 2 * width)) < 1e-6);
      CHECK(max_rel_error(ig, unflatten(finite_diff_grad(by_in, flatten(in), 1e-6), 2, 5)) < 1e-6);
      ++checked;
    }
    CHECK(checked == 3);
  }
}

TEST_CASE("im2col and col2im are adjoint") {
  Rng rng(4);
  const Matrix a = random_matrix(3, 6, rng);
  const Matrix cols = im2col(a, 3);
  const Matrix b = random_matrix(cols.rows(), cols.cols(), rng);
  const double lhs = cols.cwiseProduct(b).sum();
  const double rhs = a.cwiseProduct(col2im(b, 3, 3)).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-13));
}

TEST_CASE("max pooling over time") {
  Matrix y(1, 3);
  y << 1, 3, 5;
  Matrix out = maxpool_time(y);
  CHECK(out(0, 0) == 1.0);
  CHECK(out(0, 1) == 3.0);
  CHECK(out(0, 2) == 5.0);

  Matrix neg(1, 1);
  neg << -2;
  CHECK(maxpool_time(neg)(0, 0) == 0.0);

  Matrix mono(2, 4);
  mono << 0, 1, 2, 3,
          0.5, 0.5, 4, 9;
  CHECK(maxpool_time(mono) == mono);

  Matrix down(1, 3);
  down << 4, 2, 1;
  Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> mask;
  out = maxpool_time(down, &mask);
  CHECK(out(0, 1) == 4.0);
  CHECK(out(0, 2) == 2.0);
  Matrix up(1, 3);
  up << 1, 10, 100;
  const Matrix back = maxpool_time_backward(mask, up);
  // column 0 receives its own gradient and that of column 1.
  CHECK(back(0, 0) == 11.0);
  CHECK(back(0, 1) == 100.0);
  CHECK(back(0, 2) == 0.0);
}

TEST_CASE("adam leaves parameters unchanged under a zero gradient") {
  std::vector<ParamTensor> p{ParamTensor("w", 2, 2)};
  p[0].value << 1, 2, 3, 4;
  const Matrix before = p[0].value;
  AdamState st;
  for (int i = 0; i < 3; ++i) adam_step(p, st, 0.1);
  CHECK(p[0].value == before);
}

TEST_CASE("adam first step moves by the learning rate") {
  std::vector<ParamTensor> p{ParamTensor("w", 1, 2)};
  p[0].grad << 0.3, -7.0;
  AdamState st;
  adam_step(p, st, 0.01);
  CHECK(p[0].value(0, 0) == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(p[0].value(0, 1) == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam two-step trace") {
  std::vector<ParamTensor> p{ParamTensor("w", 1, 2)};
  AdamState st;
  const double lr = 0.1;
  p[0].grad << 1.0, 1.0;
  adam_step(p, st, lr);
  p[0].grad << 1.0, 3.0;
  adam_step(p, st, lr);
  // Constant gradient: both steps have m_hat / sqrt(v_hat) = 1.
  const double x_const = -lr / (1.0 + 1e-8) - lr / (1.0 + 1e-8);
  // Gradients 1 then 3:
  //   m2 = 0.9 * 0.1 + 0.1 * 3 = 0.39,            m_hat = 0.39 / 0.19
  //   v2 = 0.999 * 0.001 + 0.001 * 9 = 0.009999,   v_hat = 0.009999 / 0.001999
  const double m_hat = 0.39 / 0.19;
  const double v_hat = 0.009999 / 0.001999;
  const double x_var = -lr / (1.0 + 1e-8) - lr * m_hat / (std::sqrt(v_hat) + 1e-8);
  CHECK(p[0].value(0, 0) == doctest::Approx(x_const).epsilon(1e-12));
  CHECK(p[0].value(0, 1) == doctest::Approx(x_var).epsilon(1e-12));
}

TEST_CASE("adam rejects a non-finite gradient without side effects") {
  std::vector<ParamTensor> p{ParamTensor("w", 1, 2)};
  p[0].grad << 1.0, std::nan("");
  AdamState st;
  CHECK_THROWS_AS(adam_step(p, st, 0.1), TrainingError);
  CHECK(p[0].value.isZero());
  CHECK(st.step == 0);
}

TEST_CASE("finite differences") {
  Vector x(1);
  x << 3.0;
  const Vector g = finite_diff_grad([](const Vector& v) { return v(0) * v(0); }, x, 1e-4);
  CHECK(g(0) == doctest::Approx(6.0).epsilon(1e-6));
  const Vector c = finite_diff_grad([](const Vector&) { return 4.0; }, x, 1e-4);
  CHECK(c(0) == 0.0);

  std::vector<ParamTensor> p{ParamTensor("a", 1, 2)};
  p[0].value << 0.25, -1.5;
  const Matrix before = p[0].value;
  const GradBuffer fd = finite_diff_grad([&] { return p[0].value(0, 0) * p[0].value(0, 1); }, p, 1e-5);
  CHECK(fd[0](0, 0) == doctest::Approx(-1.5).epsilon(1e-8));
  CHECK(fd[0](0, 1) == doctest::Approx(0.25).epsilon(1e-8));
  CHECK(p[0].value == before);
}

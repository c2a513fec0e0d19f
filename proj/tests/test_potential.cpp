#include <doctest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "ntrf/checkpoint.hpp"
#include "ntrf/errors.hpp"
#include "ntrf/potential.hpp"

using namespace ntrf;

namespace {

PotentialParams random_theta(const PotentialConfig& cfg, int vocab, std::uint64_t seed, double bound = 1.0) {
  PotentialParams theta(cfg, vocab);
  Rng rng(seed);
  theta.init_uniform(bound, rng);
  return theta;
}

TokenSeq random_sentence(int vocab, int length, Rng& rng) {
  std::uniform_int_distribution<TokenId> u(0, vocab - 1);
  TokenSeq x(static_cast<std::size_t>(length));
  for (auto& t : x) t = u(rng);
  return x;
}

}  // namespace

TEST_CASE("zero network scores zero") {
  PotentialParams theta(fixtures::tiny_potential(), 4);
  theta.set_zero();
  CHECK(phi_forward({1}, theta) == 0.0);
  CHECK(phi_forward({3, 2, 0, 1}, theta) == 0.0);
}

TEST_CASE("zero readout leaves only the offset") {
  PotentialParams theta = random_theta(fixtures::tiny_potential(), 4, 3);
  theta.tensors()[theta.readout_index()].value.setZero();
  theta.tensors()[theta.offset_index()].value(0, 0) = 0.75;
  CHECK(phi_forward({1}, theta) == 0.75);
  CHECK(phi_forward({3, 2, 0, 1, 1}, theta) == 0.75);
}

TEST_CASE("empty sentence is rejected") {
  const PotentialParams theta = random_theta(fixtures::tiny_potential(), 4, 3);
  CHECK_THROWS_AS(phi_forward({}, theta), DomainError);
}

TEST_CASE("config validation") {
  PotentialConfig c = fixtures::tiny_potential();
  c.stack_dim = c.bank_channels() + 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = fixtures::tiny_potential();
  c.max_width = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("potential gradient matches finite differences") {
  for (int depth : {0, 1, 2}) {
    PotentialConfig cfg = fixtures::tiny_potential();
    cfg.stack_depth = depth;
    Rng rng(100 + static_cast<std::uint64_t>(depth));
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 200 && checked < 10; ++seed) {
      const PotentialParams theta = random_theta(cfg, 3, seed * 7 + 1);
      const TokenSeq x = random_sentence(3, 1 + static_cast<int>(seed % 4), rng);
      const auto err = fixtures::potential_grad_error(theta, x);
      if (!err) continue;
      CHECK(*err < 1e-4);
      ++checked;
    }
    CHECK(checked == 10);
  }
}

TEST_CASE("backward with zero upstream and the offset gradient") {
  const PotentialParams theta = random_theta(fixtures::tiny_potential(), 3, 9);
  PotentialCache cache;
  phi_forward({1, 2}, theta, &cache);
  GradBuffer g = make_grad_buffer(theta.tensors());
  phi_backward(cache, 0.0, theta, g);
  CHECK(squared_norm(g) == 0.0);
  phi_backward(cache, 2.5, theta, g);
  CHECK(g[theta.offset_index()](0, 0) == 2.5);

  PotentialCache fresh;
  CHECK_THROWS_AS(phi_backward(fresh, 1.0, theta, g), DomainError);
}

TEST_CASE("batch scoring equals the per-sentence loop") {
  const PotentialParams theta = random_theta(fixtures::tiny_potential(), 5, 12);
  Rng rng(4);
  std::vector<TokenSeq> xs;
  for (int i = 0; i < 100; ++i) xs.push_back(random_sentence(5, 1 + i % 7, rng));
  for (int workers : {1, 3}) {
    const auto batch = phi_batch(xs, theta, workers);
    REQUIRE(batch.size() == xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) CHECK(batch[i] == phi_forward(xs[i], theta));
  }
  const auto single = phi_batch({xs[0]}, theta);
  CHECK(single == std::vector<double>{phi_forward(xs[0], theta)});
  const auto dup = phi_batch({xs[3], xs[3]}, theta);
  CHECK(dup[0] == dup[1]);
}

TEST_CASE("width-1 bank without stack or pooling is order invariant") {
  PotentialConfig cfg = fixtures::tiny_potential();
  cfg.max_width = 1;
  cfg.stack_depth = 0;
  cfg.stack_dim = 1;
  cfg.pool = false;
  const PotentialParams theta = random_theta(cfg, 6, 2);
  TokenSeq x{1, 4, 2, 5, 0};
  const double ref = phi_forward(x, theta);
  std::sort(x.begin(), x.end());
  do {
    CHECK(phi_forward(x, theta) == doctest::Approx(ref).epsilon(1e-13));
  } while (std::next_permutation(x.begin(), x.end()));
}

TEST_CASE("wider filters see word order") {
  PotentialConfig cfg = fixtures::tiny_potential();
  cfg.pool = false;
  int differs = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PotentialParams theta = random_theta(cfg, 4, seed);
    if (phi_forward({1, 2, 3}, theta) != phi_forward({3, 2, 1}, theta)) ++differs;
  }
  CHECK(differs > 0);
}

TEST_CASE("parameters round trip through a checkpoint") {
  const PotentialParams theta = random_theta(fixtures::tiny_potential(), 4, 77);
  Checkpoint ck;
  theta.write(ck, "p.");
  const PotentialParams back = PotentialParams::read(ck, "p.");
  REQUIRE(back.tensors().size() == theta.tensors().size());
  for (std::size_t i = 0; i < theta.tensors().size(); ++i) CHECK(back.tensors()[i].value == theta.tensors()[i].value);
  CHECK(phi_forward({3, 1}, back) == phi_forward({3, 1}, theta));
}

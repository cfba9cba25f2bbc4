#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dfm/checkpoint.hpp"
#include "dfm/error.hpp"
#include "dfm/model.hpp"
#include "dfm/optimizer.hpp"
#include "helpers.hpp"

using namespace dfm;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("dfm_test_" + name)).string();
}

// Scalar test loss: sum_i w_i . log p_i, used for the backward checks.
double weighted_log_loss(const PosteriorModel& m, const SequenceState& x, double t, Condition c,
                         const std::vector<double>& w) {
  const Posterior f = m.forward(x, t, c);
  double s = 0.0;
  for (std::size_t k = 0; k < f.probs.size(); ++k) s += w[k] * std::log(f.probs[k]);
  return s;
}

void check_backward(PosteriorModel& m, const SequenceState& x, double t, Condition c, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n;
  std::vector<double> w(static_cast<std::size_t>(m.space().d * m.space().M));
  for (double& v : w) v = n(rng);
  const Posterior f = m.forward(x, t, c);
  std::vector<double> g(f.probs.size());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = w[k] / f.probs[k];
  GradientBuffer buf = m.make_buffer();
  m.backward(f, g, buf);
  std::vector<std::size_t> nonzero;
  for (std::size_t k = 0; k < buf.g.size(); ++k) {
    if (buf.g[k] != 0.0) nonzero.push_back(k);
  }
  REQUIRE(!nonzero.empty());
  std::shuffle(nonzero.begin(), nonzero.end(), rng);
  nonzero.resize(std::min<std::size_t>(20, nonzero.size()));
  for (std::size_t k : nonzero) {
    const double fd = testutil::central_diff(m, k, 1e-5, [&](const PosteriorModel& mm) {
      return weighted_log_loss(mm, x, t, c, w);
    });
    CHECK(std::abs(buf.g[k] - fd) / (std::abs(buf.g[k]) + 1e-8) < 1e-4);
  }
}

}  // namespace

TEST_CASE("tabular forward") {
  const StateSpace s{2, 3, true};
  const PosteriorModel m = PosteriorModel::tabular(s, 1.0, {4, 0});
  CHECK(m.params().size() == 4u * 16u * 6u);
  const Posterior f = m.forward(SequenceState({4, 1}), 0.3);
  for (double p : f.probs) CHECK(p == doctest::Approx(1.0 / 3.0));
  const Posterior g = m.forward(SequenceState({4, 1}), 0.3);
  CHECK(f.probs == g.probs);
  CHECK(m.time_bin(0.0) == 0);
  CHECK(m.time_bin(0.26) == 1);
  CHECK(m.time_bin(0.999) == 3);
}

TEST_CASE("probability floor") {
  const StateSpace s{1, 3, false};
  PosteriorModel m = PosteriorModel::tabular(s, 1.0);
  m.mutable_params() = {0.0, -100.0, -200.0};
  m.touch();
  const Posterior f = m.forward(SequenceState({1}), 0.0);
  double sum = 0.0;
  for (double p : f.probs) {
    CHECK(p >= 1e-12 * (1 - 1e-9));
    CHECK(std::log(p) >= std::log(1e-12) - 1e-9);
    sum += p;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
  // gradients through the floor still match finite differences
  check_backward(m, SequenceState({1}), 0.0, {}, 1);
}

TEST_CASE("neural forward is normalized and deterministic") {
  const StateSpace s{5, 4, true};
  const PosteriorModel m = PosteriorModel::neural(s, 1.0, {8, 32, 8, 0, 8}, 3);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    SequenceState x(std::vector<int>(5));
    for (int i = 0; i < 5; ++i) x[i] = std::uniform_int_distribution<int>(1, 5)(rng);
    const double t = 0.99 * uniform01(rng);
    const Posterior f = m.forward(x, t);
    for (int i = 0; i < 5; ++i) {
      double sum = 0.0;
      for (double p : f.position(i)) sum += p;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(m.forward(x, t).probs == f.probs);
  }
}

TEST_CASE("backward matches finite differences") {
  for (std::uint64_t seed : {1, 2, 3}) {
    PosteriorModel tab = PosteriorModel::tabular({2, 3, true}, 1.0, {3, 2});
    testutil::randomize(tab, seed);
    check_backward(tab, SequenceState({4, 2}), 0.5, 1, seed);

    PosteriorModel net = PosteriorModel::neural({4, 3, true}, 1.0, {4, 16, 6, 3, 4}, seed);
    testutil::randomize(net, seed + 10, 0.5);
    check_backward(net, SequenceState({4, 2, 1, 4}), 0.37, 2, seed);

    PosteriorModel plain = PosteriorModel::neural({3, 2, false}, 2.0, {4, 8, 4, 0, 4}, seed);
    check_backward(plain, SequenceState({1, 2, 2}), 1.2, {}, seed);
  }
}

TEST_CASE("backward is linear and rejects stale caches") {
  PosteriorModel m = PosteriorModel::neural({3, 3, true}, 1.0, {4, 8, 4, 0, 4}, 9);
  const Posterior f = m.forward(SequenceState({4, 1, 4}), 0.2);
  std::vector<double> zero(f.probs.size(), 0.0), a(f.probs.size()), b(f.probs.size()), ab(f.probs.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    a[k] = std::sin(1.0 + static_cast<double>(k));
    b[k] = std::cos(2.0 * static_cast<double>(k));
    ab[k] = a[k] + b[k];
  }
  GradientBuffer z = m.make_buffer();
  m.backward(f, zero, z);
  for (double v : z.g) CHECK(v == 0.0);
  GradientBuffer two = m.make_buffer(), one = m.make_buffer();
  m.backward(f, a, two);
  m.backward(f, b, two);
  m.backward(f, ab, one);
  for (std::size_t k = 0; k < one.g.size(); ++k) CHECK(two.g[k] == doctest::Approx(one.g[k]).epsilon(1e-12));

  m.mutable_params()[0] += 1.0;
  m.touch();
  CHECK_THROWS_AS(m.backward(f, a, one), Error);
}

TEST_CASE("condition handling") {
  PosteriorModel cond = PosteriorModel::tabular({1, 2, true}, 1.0, {1, 2});
  CHECK_THROWS_AS(cond.forward(SequenceState({3}), 0.0), Error);
  CHECK_THROWS_AS(cond.forward(SequenceState({3}), 0.0, 2), Error);
  CHECK_NOTHROW(cond.forward(SequenceState({3}), 0.0, 1));
  PosteriorModel plain = PosteriorModel::tabular({1, 2, true}, 1.0);
  CHECK_THROWS_AS(plain.forward(SequenceState({3}), 0.0, 0), Error);
}

TEST_CASE("optimizer") {
  PosteriorModel m = PosteriorModel::tabular({1, 2, false}, 1.0);
  GradientBuffer buf = m.make_buffer();
  OptimizerState sgd{OptimizerKind::sgd, 0.1};
  optimizer_step(m, buf, sgd, Direction::ascent);
  for (double v : m.params()) CHECK(v == 0.0);
  std::fill(buf.g.begin(), buf.g.end(), 1.0);
  optimizer_step(m, buf, sgd, Direction::ascent);
  for (double v : m.params()) CHECK(v == doctest::Approx(0.1));
  for (double v : buf.g) CHECK(v == 0.0);
  std::fill(buf.g.begin(), buf.g.end(), 1.0);
  optimizer_step(m, buf, sgd, Direction::descent);
  for (double v : m.params()) CHECK(v == doctest::Approx(0.0));

  OptimizerState adam{OptimizerKind::adam, 1e-3};
  double last = 0.0;
  for (int step = 0; step < 2000; ++step) {
    const double before = m.params()[0];
    std::fill(buf.g.begin(), buf.g.end(), 0.7);
    optimizer_step(m, buf, adam, Direction::descent);
    last = before - m.params()[0];
  }
  CHECK(last == doctest::Approx(1e-3).epsilon(1e-3));

  const std::uint64_t v0 = m.version();
  OptimizerState zero_lr{OptimizerKind::adam, 0.0};
  const auto before = std::vector<double>(m.params().begin(), m.params().end());
  std::fill(buf.g.begin(), buf.g.end(), 3.0);
  optimizer_step(m, buf, zero_lr, Direction::descent);
  CHECK(std::equal(before.begin(), before.end(), m.params().begin()));
  CHECK(m.version() != v0);
}

TEST_CASE("checkpoint round trip") {
  PosteriorModel m = PosteriorModel::neural({3, 4, true}, 1.0, {4, 16, 4, 2, 4}, 17);
  OptimizerState opt;
  GradientBuffer buf = m.make_buffer();
  std::fill(buf.g.begin(), buf.g.end(), 0.5);
  optimizer_step(m, buf, opt, Direction::ascent);
  const std::string path = temp_path("roundtrip.ckpt");
  checkpoint_save(path, m, &opt, "cfg=abc");
  const Checkpoint c = checkpoint_load(path, m.spec());
  CHECK(c.tag == "cfg=abc");
  REQUIRE(c.optimizer.has_value());
  CHECK(c.optimizer->steps == 1);
  CHECK(c.optimizer->m == opt.m);
  const SequenceState x({5, 2, 5});
  CHECK(c.model.forward(x, 0.4, 1).probs == m.forward(x, 0.4, 1).probs);
  CHECK(std::equal(m.params().begin(), m.params().end(), c.model.params().begin()));

  // tabular, no optimizer
  PosteriorModel tab = PosteriorModel::tabular({2, 2, true}, 2.0, {2, 0});
  testutil::randomize(tab, 4);
  checkpoint_save(path, tab);
  const Checkpoint ct = checkpoint_load(path);
  CHECK_FALSE(ct.optimizer.has_value());
  CHECK(ct.model.spec() == tab.spec());

  try {
    checkpoint_load(path, StateSpace{2, 3, true});
    FAIL("expected mismatch");
  } catch (const Error& e) {
    const std::string what = e.what();
    CHECK(what.find("M=2") != std::string::npos);
    CHECK(what.find("M=3") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("corrupted checkpoints are rejected") {
  PosteriorModel m = PosteriorModel::tabular({2, 2, false}, 1.0);
  const std::string path = temp_path("corrupt.ckpt");
  checkpoint_save(path, m);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << b;
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  write(bad_magic);
  CHECK_THROWS_AS(checkpoint_load(path), Error);
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x5a;
  write(flipped);
  CHECK_THROWS_AS(checkpoint_load(path), Error);
  write(bytes.substr(0, bytes.size() - 11));
  CHECK_THROWS_AS(checkpoint_load(path), Error);
  write("");
  CHECK_THROWS_AS(checkpoint_load(path), Error);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(checkpoint_load(path), Error);
}

TEST_CASE("model descriptors parse back") {
  PosteriorModel m = PosteriorModel::neural({8, 4, true}, 1.0, {8, 128, 8, 3, 8}, 1);
  CHECK(ModelSpec::parse(m.spec().describe()) == m.spec());
  CHECK(ModelSpec::parse(m.spec().describe()).parameter_count() == m.params().size());
  CHECK_THROWS_AS(ModelSpec::parse("backend=tabular d=2"), Error);
}

#include "doctest.h"

#include <deque>
#include <numbers>

#include "protoalign/distill.hpp"
#include "protoalign/error.hpp"
#include "support.hpp"

using namespace protoalign;
using testing_support::random_unit_rows;

namespace {

Mlp scalar_net(double w) {
  Mlp m(1, 1, 1, 0);
  for (auto* p : m.parameters()) p->mutable_value().fill(w);
  return m;
}

// Rows of the ring in arrival order, oldest first.
std::vector<std::vector<double>> age_order(const distill::MemoryQueue& q) {
  std::vector<std::vector<double>> rows;
  const std::size_t start = q.filled() < q.capacity() ? 0 : q.cursor();
  for (std::size_t t = 0; t < q.filled(); ++t) {
    auto r = q.storage().row((start + t) % q.capacity());
    rows.emplace_back(r.begin(), r.end());
  }
  return rows;
}

}  // namespace

TEST_CASE("ema update arithmetic") {
  auto pair = distill::EncoderPair::from_student(scalar_net(0.0));
  for (auto* p : pair.teacher.parameters()) p->mutable_value().fill(1.0);
  distill::ema_update(pair, 0.995);
  for (auto* p : pair.teacher.parameters()) CHECK(p->value()(0, 0) == 0.995);

  auto same = distill::EncoderPair::from_student(scalar_net(0.37));
  distill::ema_update(same, 0.995);
  for (auto* p : same.teacher.parameters()) CHECK(p->value()(0, 0) == 0.37);

  auto mid = distill::EncoderPair::from_student(scalar_net(4.0));
  for (auto* p : mid.teacher.parameters()) p->mutable_value().fill(2.0);
  distill::ema_update(mid, 0.5);
  for (auto* p : mid.teacher.parameters()) CHECK(p->value()(0, 0) == 3.0);
}

TEST_CASE("ema endpoints and domain") {
  auto pair = distill::EncoderPair::from_student(Mlp(3, 4, 2, 5));
  for (auto* p : pair.student.parameters())
    for (double& v : p->mutable_value().data()) v += 0.25;
  std::vector<Matrix> before;
  for (auto* p : pair.teacher.parameters()) before.push_back(p->value());
  distill::ema_update(pair, 1.0);
  for (std::size_t k = 0; k < before.size(); ++k) CHECK(pair.teacher.parameters()[k]->value() == before[k]);
  distill::ema_update(pair, 0.0);
  for (std::size_t k = 0; k < before.size(); ++k)
    CHECK(pair.teacher.parameters()[k]->value() == pair.student.parameters()[k]->value());
  CHECK_THROWS_AS(distill::ema_update(pair, 1.5), DomainError);
  CHECK_THROWS_AS(distill::ema_update(pair, -0.1), DomainError);
  CHECK_FALSE(pair.teacher.parameters()[0]->requires_grad());
  CHECK(pair.student.parameters()[0]->requires_grad());
}

TEST_CASE("queue ring arithmetic") {
  distill::MemoryQueue q(4, 2);
  auto rows = [](double a, double b) { return Matrix{{std::cos(a), std::sin(a)}, {std::cos(b), std::sin(b)}}; };
  q.enqueue(rows(0.1, 0.2));
  q.enqueue(rows(0.3, 0.4));
  CHECK(q.filled() == 4);
  CHECK(q.cursor() == 0);
  q.enqueue(rows(0.5, 0.6));
  CHECK(q.storage()(0, 0) == std::cos(0.5));
  CHECK(q.storage()(1, 0) == std::cos(0.6));
  CHECK(q.storage()(2, 0) == std::cos(0.3));
  CHECK(q.filled() == 4);
  CHECK(q.cursor() == 2);

  distill::MemoryQueue full(3, 1);
  full.enqueue(Matrix{{1}, {-1}, {1}});
  CHECK(full.filled() == 3);

  CHECK_THROWS_AS(full.enqueue(Matrix{{1}, {1}, {1}, {1}}), CapacityError);
  CHECK_THROWS_AS(full.enqueue(Matrix{{0.5}}), ContractError);
  CHECK_THROWS_AS(full.enqueue(Matrix{{1, 0}}), ShapeError);
}

TEST_CASE("queue matches a list-based FIFO model") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + trial % 9, d = 3;
    distill::MemoryQueue q(m, d);
    std::deque<std::vector<double>> model;
    for (int step = 0; step < 40; ++step) {
      const std::size_t b = 1 + rng() % m;
      const Matrix feats = random_unit_rows(b, d, rng);
      q.enqueue(feats);
      for (std::size_t r = 0; r < b; ++r) {
        model.emplace_back(feats.row(r).begin(), feats.row(r).end());
        if (model.size() > m) model.pop_front();
      }
      REQUIRE(q.filled() == model.size());
      CHECK(age_order(q) == std::vector<std::vector<double>>(model.begin(), model.end()));
      CHECK(q.contents().rows() == q.filled());
    }
  }
}

TEST_CASE("queue state is a pure function of the enqueue sequence") {
  std::mt19937_64 a(4), b(4);
  distill::MemoryQueue qa(5, 3), qb(5, 3);
  for (int s = 0; s < 12; ++s) {
    qa.enqueue(random_unit_rows(2, 3, a));
    qb.enqueue(random_unit_rows(2, 3, b));
  }
  CHECK(qa.storage() == qb.storage());
  CHECK(qa.cursor() == qb.cursor());
  CHECK_THROWS_AS(distill::MemoryQueue::restore(Matrix(2, 2), 2, 1), FormatError);
}

TEST_CASE("similarity distribution examples") {
  distill::MemoryQueue q(4, 2);
  q.enqueue(Matrix{{0, 1}});
  const auto anchor = ad::Tensor::constant(Matrix{{1, 0}});
  const Matrix p = distill::similarity_distribution(anchor, anchor, q, ad::Tensor::scalar_constant(1.0)).value();
  CHECK(p(0, 0) == doctest::Approx(std::numbers::e / (std::numbers::e + 1.0)).epsilon(1e-14));
  CHECK(p(0, 1) == doctest::Approx(1.0 / (std::numbers::e + 1.0)).epsilon(1e-14));

  distill::MemoryQueue same(3, 2);
  same.enqueue(Matrix{{0.6, 0.8}, {0.6, 0.8}, {0.6, 0.8}});
  const auto a2 = ad::Tensor::constant(Matrix{{0.6, 0.8}});
  const Matrix u = distill::similarity_distribution(a2, a2, same, ad::Tensor::scalar_constant(0.1)).value();
  for (double v : u.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));

  distill::MemoryQueue empty(3, 2);
  CHECK_THROWS_AS(distill::similarity_distribution(anchor, anchor, empty, ad::Tensor::scalar_constant(1.0)),
                  StateError);
}

TEST_CASE("similarity distribution matches a per-row loop") {
  std::mt19937_64 rng(19);
  distill::MemoryQueue q(20, 6);
  q.enqueue(random_unit_rows(16, 6, rng));
  const Matrix anchor = random_unit_rows(4, 6, rng), pos = random_unit_rows(4, 6, rng);
  const double gamma = 0.2;
  const Matrix got = distill::similarity_distribution(ad::Tensor::constant(anchor), ad::Tensor::constant(pos), q,
                                                      ad::Tensor::scalar_constant(gamma))
                         .value();
  REQUIRE(got.cols() == 17);
  const Matrix qc = q.contents();
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> l;
    double s = 0.0;
    for (std::size_t t = 0; t < 6; ++t) s += anchor(i, t) * pos(i, t);
    l.push_back(s / gamma);
    for (std::size_t r = 0; r < 16; ++r) {
      s = 0.0;
      for (std::size_t t = 0; t < 6; ++t) s += anchor(i, t) * qc(r, t);
      l.push_back(s / gamma);
    }
    const double m = *std::max_element(l.begin(), l.end());
    double z = 0.0;
    for (double v : l) z += std::exp(v - m);
    double row = 0.0;
    for (std::size_t j = 0; j < l.size(); ++j) {
      CHECK(std::abs(got(i, j) - std::exp(l[j] - m) / z) <= 1e-12);
      row += got(i, j);
    }
    CHECK(std::abs(row - 1.0) <= 1e-12);
  }
}

namespace {

struct Queues {
  distill::MemoryQueue img, txt;
};

Queues random_queues(std::mt19937_64& rng, std::size_t m, std::size_t fill, std::size_t d) {
  Queues q{distill::MemoryQueue(m, d), distill::MemoryQueue(m, d)};
  q.img.enqueue(random_unit_rows(fill, d, rng));
  q.txt.enqueue(random_unit_rows(fill, d, rng));
  return q;
}

// Independent loop form of one distillation term.
double naive_term(const Matrix& s_anchor, const Matrix& t_anchor, const Matrix& pos, const Matrix& queue,
                  double gamma, bool raw) {
  const std::size_t b = s_anchor.rows(), d = s_anchor.cols();
  auto dot = [&](const Matrix& a, std::size_t i, const Matrix& c, std::size_t r) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) s += a(i, t) * c(r, t);
    return s;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<double> ls{dot(s_anchor, i, pos, i)}, lt{dot(t_anchor, i, pos, i)};
    for (std::size_t r = 0; r < queue.rows(); ++r) {
      ls.push_back(dot(s_anchor, i, queue, r));
      lt.push_back(dot(t_anchor, i, queue, r));
    }
    std::vector<double> y(lt.size());
    if (raw) {
      y = lt;
    } else {
      double zt = 0.0;
      for (std::size_t j = 0; j < lt.size(); ++j) zt += std::exp(lt[j] / gamma);
      for (std::size_t j = 0; j < lt.size(); ++j) y[j] = std::exp(lt[j] / gamma) / zt;
    }
    double zs = 0.0;
    for (double v : ls) zs += std::exp(v / gamma);
    for (std::size_t j = 0; j < ls.size(); ++j) total -= y[j] * (ls[j] / gamma - std::log(zs));
  }
  return total / static_cast<double>(b);
}

}  // namespace

TEST_CASE("ica loss two-logit example") {
  distill::MemoryQueue qi(2, 2), qt(2, 2);
  qi.enqueue(Matrix{{0, 1}});
  qt.enqueue(Matrix{{0, 1}});
  const auto f = ad::Tensor::constant(Matrix{{1, 0}});
  const auto r = distill::ica_loss(f, f, f, f, qi, qt, ad::Tensor::scalar_constant(1.0));
  // Entropy of [e/(e+1), 1/(e+1)].
  const double h = 0.5822031088882179;
  for (const auto* t : {&r.l_t2i, &r.l_i2t, &r.l_i2i, &r.l_t2t}) CHECK(t->item() == doctest::Approx(h).epsilon(1e-13));
  CHECK(r.total.item() == doctest::Approx(4.0 * h).epsilon(1e-13));
}

TEST_CASE("self-distillation reduces each term to the teacher entropy") {
  std::mt19937_64 rng(2);
  auto q = random_queues(rng, 12, 10, 4);
  const Matrix img = random_unit_rows(3, 4, rng), txt = random_unit_rows(3, 4, rng);
  const auto ti = ad::Tensor::constant(img), tt = ad::Tensor::constant(txt);
  const auto g = ad::Tensor::scalar_constant(0.5);
  const auto r = distill::ica_loss(ti, tt, ti, tt, q.img, q.txt, g);
  auto entropy = [&](const ad::Tensor& anchor, const ad::Tensor& pos, const distill::MemoryQueue& queue) {
    const Matrix p = distill::similarity_distribution(anchor, pos, queue, g).value();
    double h = 0.0;
    for (double v : p.data()) h -= v * std::log(v);
    return h / static_cast<double>(p.rows());
  };
  CHECK(r.l_t2i.item() == doctest::Approx(entropy(tt, ti, q.img)).epsilon(1e-12));
  CHECK(r.l_i2t.item() == doctest::Approx(entropy(ti, tt, q.txt)).epsilon(1e-12));
  CHECK(r.l_i2i.item() == doctest::Approx(entropy(ti, ti, q.img)).epsilon(1e-12));
  CHECK(r.l_t2t.item() == doctest::Approx(entropy(tt, tt, q.txt)).epsilon(1e-12));
  CHECK(std::isfinite(r.total.item()));
  CHECK(r.total.item() > 0.0);
}

TEST_CASE("ica loss matches an independent reimplementation") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto q = random_queues(rng, 16, 5 + seed % 11, 5);
    const Matrix is = random_unit_rows(4, 5, rng), ts = random_unit_rows(4, 5, rng);
    const Matrix it = random_unit_rows(4, 5, rng), tt = random_unit_rows(4, 5, rng);
    const double gamma = 0.1 + 0.04 * static_cast<double>(seed);
    for (bool raw : {false, true}) {
      const auto r = distill::ica_loss(ad::Tensor::constant(is), ad::Tensor::constant(ts), ad::Tensor::constant(it),
                                       ad::Tensor::constant(tt), q.img, q.txt, ad::Tensor::scalar_constant(gamma),
                                       raw);
      const Matrix qi = q.img.contents(), qt = q.txt.contents();
      CHECK(std::abs(r.l_t2i.item() - naive_term(ts, tt, it, qi, gamma, raw)) <= 1e-9);
      CHECK(std::abs(r.l_i2t.item() - naive_term(is, it, tt, qt, gamma, raw)) <= 1e-9);
      CHECK(std::abs(r.l_i2i.item() - naive_term(is, it, it, qi, gamma, raw)) <= 1e-9);
      CHECK(std::abs(r.l_t2t.item() - naive_term(ts, tt, tt, qt, gamma, raw)) <= 1e-9);
    }
  }
}

TEST_CASE("ica loss gradients match finite differences and skip teachers") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed + 50);
    auto q = random_queues(rng, 10, 7, 4);
    auto pre_i = ad::Tensor::parameter(testing_support::random_matrix(3, 4, rng));
    auto pre_t = ad::Tensor::parameter(testing_support::random_matrix(3, 4, rng));
    auto ti = ad::Tensor::parameter(random_unit_rows(3, 4, rng));
    auto tt = ad::Tensor::parameter(random_unit_rows(3, 4, rng));
    auto gamma = ad::Tensor::parameter(Matrix(1, 1, 0.35));
    const Matrix qi_before = q.img.storage();
    bool raw = false;
    auto loss = [&] {
      return distill::ica_loss(ad::l2_normalize_rows(pre_i), ad::l2_normalize_rows(pre_t), ti, tt, q.img, q.txt,
                               gamma, raw)
          .total;
    };
    CHECK(testing_support::max_fd_error({&pre_i, &pre_t}, loss) < testing_support::kFdRelTol);
    // Softmax targets read the temperature as a constant, so its gradient is
    // compared where the targets do not depend on it.
    raw = true;
    CHECK(testing_support::max_fd_error({&pre_i, &pre_t, &gamma}, loss) < testing_support::kFdRelTol);
    raw = false;
    ti.zero_grad();
    tt.zero_grad();
    ad::backward(loss());
    for (double g : ti.grad().data()) CHECK(g == 0.0);
    for (double g : tt.grad().data()) CHECK(g == 0.0);
    CHECK(q.img.storage() == qi_before);
  }
}

TEST_CASE("descending on a free student logit row approaches the teacher target") {
  const Matrix target{{0.6, 0.25, 0.1, 0.05}};
  auto logits = ad::Tensor::parameter(Matrix{{0.3, -0.2, 0.9, 0.1}});
  auto kl = [&] {
    const Matrix p = ad::row_softmax(logits, 1.0).value();
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += target(0, j) * std::log(target(0, j) / p(0, j));
    return s;
  };
  double prev = kl();
  for (int step = 0; step < 100; ++step) {
    logits.zero_grad();
    ad::backward(ad::soft_cross_entropy(logits, target, 1.0));
    for (std::size_t j = 0; j < 4; ++j) logits.mutable_value()(0, j) -= 0.5 * logits.grad()(0, j);
    const double now = kl();
    CHECK(now < prev);
    prev = now;
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("encode produces unit rows") {
  std::mt19937_64 rng(1);
  const Mlp net(5, 7, 3, 11);
  const Matrix e = distill::encode(net, ad::Tensor::constant(testing_support::random_matrix(6, 5, rng))).value();
  for (std::size_t i = 0; i < 6; ++i) {
    double n2 = 0.0;
    for (double v : e.row(i)) n2 += v * v;
    CHECK(n2 == doctest::Approx(1.0).epsilon(1e-14));
  }
}

#include "entlink/neural.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace entlink;

namespace {

NetworkShape small_shape(double keep = 1.0) {
  NetworkShape s;
  s.relational_hidden = {6};
  s.text_hidden = {};
  s.joint_dim = 3;
  s.keep_prob = keep;
  return s;
}

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.normal();
  return m;
}

// Tuple i matches mention i; extra mentions beyond n_tuples are unmatched.
TrainingBatch diagonal_batch(Rng& rng, std::size_t n_tuples, std::size_t n_mentions, std::size_t tuple_dim,
                             std::size_t mention_dim) {
  TrainingBatch b;
  b.tuples = random_matrix(rng, static_cast<Eigen::Index>(tuple_dim), static_cast<Eigen::Index>(n_tuples));
  b.mentions = random_matrix(rng, static_cast<Eigen::Index>(mention_dim), static_cast<Eigen::Index>(n_mentions));
  b.positive.assign(n_tuples * n_mentions, 0);
  for (std::size_t i = 0; i < std::min(n_tuples, n_mentions); ++i) b.positive[i * n_mentions + i] = 1;
  b.tuple_anchor.assign(n_tuples, 1);
  b.mention_anchor.assign(n_mentions, 0);
  for (std::size_t j = 0; j < std::min(n_tuples, n_mentions); ++j) b.mention_anchor[j] = 1;
  return b;
}

// Batch skeleton for exercising the loss on a given score matrix.
TrainingBatch mask_batch(std::size_t nr, std::size_t nt, std::vector<std::uint8_t> positive,
                         std::vector<std::uint8_t> tuple_anchor, std::vector<std::uint8_t> mention_anchor) {
  TrainingBatch b;
  b.tuples = Matrix::Zero(1, static_cast<Eigen::Index>(nr));
  b.mentions = Matrix::Zero(1, static_cast<Eigen::Index>(nt));
  b.positive = std::move(positive);
  b.tuple_anchor = std::move(tuple_anchor);
  b.mention_anchor = std::move(mention_anchor);
  return b;
}

// Direct transcription of the partial losses, independent of the library.
double reference_loss(const Matrix& s, const TrainingBatch& b, double m) {
  double total = 0.0;
  for (std::size_t i = 0; i < b.n_tuples(); ++i) {
    if (!b.tuple_anchor[i]) continue;
    double sum = 0.0;
    int count = 0;
    for (std::size_t j = 0; j < b.n_mentions(); ++j)
      if (b.is_positive(i, j)) sum += s(i, j), ++count;
    if (count == 0) continue;
    for (std::size_t j = 0; j < b.n_mentions(); ++j)
      if (!b.is_positive(i, j)) total += std::max(0.0, m + sum / count - s(i, j));
  }
  for (std::size_t j = 0; j < b.n_mentions(); ++j) {
    if (!b.mention_anchor[j]) continue;
    double sum = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < b.n_tuples(); ++i)
      if (b.is_positive(i, j)) sum += s(i, j), ++count;
    if (count == 0) continue;
    for (std::size_t i = 0; i < b.n_tuples(); ++i)
      if (!b.is_positive(i, j)) total += std::max(0.0, m + sum / count - s(i, j));
  }
  return total;
}

}  // namespace

TEST_CASE("elu") {
  CHECK(elu(0.0) == 0.0);
  CHECK(elu(1.0) == 1.0);
  CHECK(std::abs(elu(-20.0) + 1.0) < 1e-8);
  CHECK(elu_grad(2.0) == 1.0);
  CHECK(elu_grad(-1.0) == doctest::Approx(std::exp(-1.0)));
}

TEST_CASE("forward pass basics") {
  SUBCASE("zero parameters give a zero output") {
    DenseLayer a{Matrix::Zero(4, 3), DenseVector::Zero(4)};
    DenseLayer b{Matrix::Zero(2, 4), DenseVector::Zero(2)};
    DenseNet net({a, b}, 1.0);
    DenseVector x(3);
    x << 1.5, -2.0, 0.25;
    CHECK(forward_embed(net, x).isZero(0.0));
  }
  SUBCASE("identity single layer passes the input through") {
    DenseNet net({DenseLayer{Matrix::Identity(5, 5), DenseVector::Zero(5)}}, 0.75);
    Rng rng(1);
    const DenseVector x = entlink::testing::random_unit(rng, 5);
    CHECK(forward_embed(net, x) == x);
    // Dropout never touches the output layer.
    CHECK(forward_embed(net, x, true, &rng) == x);
  }
  SUBCASE("dimension mismatch") {
    DenseNet net({DenseLayer{Matrix::Identity(5, 5), DenseVector::Zero(5)}}, 1.0);
    CHECK_THROWS_AS(forward_embed(net, DenseVector::Ones(4)), ValidationError);
  }
  SUBCASE("inference is deterministic and training dropout is seeded") {
    Rng init(2);
    DenseNet net({7, 20, 3}, 0.75, init);
    const DenseVector x = DenseVector::Ones(7);
    CHECK(forward_embed(net, x) == forward_embed(net, x));
    Rng r1(9), r2(9);
    const DenseVector t1 = forward_embed(net, x, true, &r1);
    const DenseVector t2 = forward_embed(net, x, true, &r2);
    CHECK(t1 == t2);
    CHECK(t1 != forward_embed(net, x));
    CHECK_THROWS_AS(forward_embed(net, x, true, nullptr), ValidationError);
  }
  SUBCASE("layer chaining is validated") {
    CHECK_THROWS_AS(DenseNet({DenseLayer{Matrix::Zero(3, 2), DenseVector::Zero(3)},
                              DenseLayer{Matrix::Zero(2, 4), DenseVector::Zero(2)}},
                             1.0),
                    ValidationError);
    Rng rng(0);
    CHECK_THROWS_AS(DenseNet({3, 2}, 0.0, rng), ValidationError);
  }
}

TEST_CASE("score") {
  DenseVector u(2), v(2);
  u << 3.0, 4.0;
  CHECK(score(u, u) == doctest::Approx(0.0));
  CHECK(score(DenseVector::Unit(2, 0), DenseVector::Unit(2, 1)) == 1.0);
  CHECK(score(u, -u) == doctest::Approx(2.0));
  CHECK(score(u, DenseVector::Zero(2)) == 1.0);
  CHECK(score(DenseVector::Zero(2), DenseVector::Zero(2)) == 1.0);
  CHECK_THROWS_AS(score(u, DenseVector::Zero(3)), ValidationError);

  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const DenseVector a = entlink::testing::random_unit(rng, 6) * (1.0 + 5.0 * rng.uniform());
    const DenseVector b = entlink::testing::random_unit(rng, 6);
    const double s = score(a, b);
    CHECK(s >= 0.0);
    CHECK(s <= 2.0);
    CHECK(s == doctest::Approx(score(b, a)).epsilon(1e-12));
    CHECK(s == doctest::Approx(score(7.5 * a, b)).epsilon(1e-12));
  }
}

TEST_CASE("average positive score") {
  const DenseVector anchor = DenseVector::Unit(2, 0);
  DenseVector p1(2), p2(2);
  p1 << 0.8, 0.6;  // score 0.2
  p2 << 0.6, 0.8;  // score 0.4
  CHECK(std::abs(average_positive_score(anchor, {p1, p2}) - 0.3) < 1e-12);
  DenseVector p3(2);
  p3 << 0.3, std::sqrt(1.0 - 0.09);  // score 0.7
  CHECK(std::abs(average_positive_score(anchor, {p3}) - 0.7) < 1e-12);
  CHECK(average_positive_score(anchor, {anchor}) == 0.0);
  CHECK_THROWS_AS(average_positive_score(anchor, {}), ValidationError);
}

TEST_CASE("loss from scores") {
  SUBCASE("hand-evaluated hinge term") {
    // One tuple anchor; mention 0 matches with score 0.3, mention 1 does not
    // and scores 0.35. Term = max(0, 0.1 + 0.3 - 0.35).
    auto b = mask_batch(1, 2, {1, 0}, {1}, {0, 0});
    Matrix s(1, 2);
    s << 0.3, 0.35;
    const auto r = contrastive_loss_from_scores(s, b, 0.1);
    CHECK(std::abs(r.loss - 0.05) < 1e-12);
    CHECK(r.active_terms == 1);
    CHECK(r.grad(0, 0) == 1.0);
    CHECK(r.grad(0, 1) == -1.0);
  }
  SUBCASE("saturated hinges give zero loss and zero gradient") {
    auto b = mask_batch(2, 2, {1, 0, 0, 1}, {1, 1}, {1, 1});
    Matrix s(2, 2);
    s << 0.1, 0.9, 0.8, 0.2;
    const auto r = contrastive_loss_from_scores(s, b, 0.5);
    CHECK(r.loss == 0.0);
    CHECK(r.grad.isZero(0.0));
  }
  SUBCASE("positives only") {
    auto b = mask_batch(2, 2, {1, 1, 1, 1}, {1, 1}, {1, 1});
    Matrix s(2, 2);
    s << 1.5, 0.2, 0.7, 1.9;
    const auto r = contrastive_loss_from_scores(s, b, 0.3);
    CHECK(r.loss == 0.0);
    CHECK(r.terms == 0);
  }
  SUBCASE("anchors without a positive are skipped and counted") {
    auto b = mask_batch(2, 2, {1, 0, 0, 0}, {1, 1}, {1, 1});
    Matrix s(2, 2);
    s << 0.5, 0.5, 0.5, 0.5;
    const auto r = contrastive_loss_from_scores(s, b, 0.1);
    CHECK(r.skipped_anchors == 2);
    CHECK(std::abs(r.loss - reference_loss(s, b, 0.1)) < 1e-12);
  }
  SUBCASE("random batches: reference value, nonnegativity, finite-difference gradient, monotonicity") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t nr = 1 + rng.index(5);
      const std::size_t nt = 1 + rng.index(5);
      std::vector<std::uint8_t> pos(nr * nt), ta(nr), ma(nt);
      for (auto& p : pos) p = rng.uniform() < 0.35;
      for (auto& a : ta) a = rng.uniform() < 0.8;
      for (auto& a : ma) a = rng.uniform() < 0.8;
      auto b = mask_batch(nr, nt, pos, ta, ma);
      Matrix s(static_cast<Eigen::Index>(nr), static_cast<Eigen::Index>(nt));
      for (Eigen::Index c = 0; c < s.cols(); ++c)
        for (Eigen::Index r = 0; r < s.rows(); ++r) s(r, c) = 2.0 * rng.uniform();
      const double m = 0.3 * rng.uniform();
      const auto r = contrastive_loss_from_scores(s, b, m);
      CHECK(r.loss >= 0.0);
      CHECK(std::abs(r.loss - reference_loss(s, b, m)) < 1e-12);
      CHECK((r.loss == 0.0) == (r.active_terms == 0));

      if (r.min_hinge_gap > 1e-4) {
        const double h = 1e-7;
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
          for (Eigen::Index j = 0; j < s.cols(); ++j) {
            Matrix sp = s, sm = s;
            sp(i, j) += h;
            sm(i, j) -= h;
            const double fd = (reference_loss(sp, b, m) - reference_loss(sm, b, m)) / (2 * h);
            CHECK(std::abs(fd - r.grad(i, j)) < 1e-6);
          }
        }
      }

      // Pushing a negative away or pulling a positive in never raises the loss.
      const auto i = static_cast<Eigen::Index>(rng.index(nr));
      const auto j = static_cast<Eigen::Index>(rng.index(nt));
      Matrix moved = s;
      if (b.is_positive(static_cast<std::size_t>(i), static_cast<std::size_t>(j))) {
        moved(i, j) -= 0.2 * rng.uniform();
      } else {
        moved(i, j) += 0.2 * rng.uniform();
      }
      CHECK(reference_loss(moved, b, m) <= r.loss + 1e-12);
      CHECK(contrastive_loss_from_scores(moved, b, m).loss <= r.loss + 1e-12);
    }
  }
}

TEST_CASE("score gradient matches the closed form") {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const DenseVector u = entlink::testing::random_unit(rng, 4) * (0.5 + rng.uniform());
    const DenseVector v = entlink::testing::random_unit(rng, 4) * (0.5 + rng.uniform());
    DenseVector du, dv;
    score_gradient(u, v, du, dv);
    const double nu = u.norm(), nv = v.norm(), dot = u.dot(v);
    const DenseVector expect_u = -(v / (nu * nv) - dot * u / (nu * nu * nu * nv));
    const DenseVector expect_v = -(u / (nu * nv) - dot * v / (nv * nv * nv * nu));
    CHECK((du - expect_u).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((dv - expect_v).cwiseAbs().maxCoeff() < 1e-12);
  }
  DenseVector du, dv;
  score_gradient(DenseVector::Zero(3), DenseVector::Ones(3), du, dv);
  CHECK(du.isZero(0.0));
  CHECK(dv.isZero(0.0));
}

TEST_CASE("single-layer linear nets match the closed-form loss gradient") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    EmbedderPair pair;
    pair.net_r = DenseNet({DenseLayer{random_matrix(rng, 3, 4), random_matrix(rng, 3, 1).col(0)}}, 1.0);
    pair.net_t = DenseNet({DenseLayer{random_matrix(rng, 3, 5), random_matrix(rng, 3, 1).col(0)}}, 1.0);
    pair.margin = 10.0;  // keeps the single hinge active
    auto b = mask_batch(1, 2, {1, 0}, {1}, {0, 0});
    b.tuples = random_matrix(rng, 4, 1);
    b.mentions = random_matrix(rng, 5, 2);
    const auto r = pairwise_contrastive_loss(pair, b);

    // L = m + S(u, v_pos) - S(u, v_neg) with u = W_r x + b_r, v = W_t y + b_t.
    const auto& lr = pair.net_r.layers()[0];
    const auto& lt = pair.net_t.layers()[0];
    const DenseVector u = lr.weight * b.tuples.col(0) + lr.bias;
    const DenseVector vp = lt.weight * b.mentions.col(0) + lt.bias;
    const DenseVector vn = lt.weight * b.mentions.col(1) + lt.bias;
    auto d_first = [](const DenseVector& a, const DenseVector& c) -> DenseVector {
      const double na = a.norm(), nc = c.norm();
      return -(c / (na * nc) - a.dot(c) * a / (na * na * na * nc));
    };
    const DenseVector gu = d_first(u, vp) - d_first(u, vn);
    const Matrix expect_wr = gu * b.tuples.col(0).transpose();
    const Matrix expect_wt = d_first(vp, u) * b.mentions.col(0).transpose() - d_first(vn, u) * b.mentions.col(1).transpose();
    CHECK((r.grad.net_r.weight[0] - expect_wr).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((r.grad.net_r.bias[0] - gu).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((r.grad.net_t.weight[0] - expect_wt).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((r.grad.net_t.bias[0] - (d_first(vp, u) - d_first(vn, u))).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    auto pair = make_embedder_pair(4, 5, small_shape(), 0.05 + 0.2 * rng.uniform(), 100 + trial);
    auto batch = diagonal_batch(rng, 3, 4, 4, 5);
    const auto r = gradient_check(pair, batch, 1e-5);
    CHECK(r.parameters == pair.net_r.parameter_count() + pair.net_t.parameter_count());
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("saturated batches have exactly zero gradient") {
  EmbedderPair pair;
  pair.net_r = DenseNet({DenseLayer{Matrix::Identity(3, 3), DenseVector::Zero(3)}}, 1.0);
  pair.net_t = DenseNet({DenseLayer{Matrix::Identity(3, 3), DenseVector::Zero(3)}}, 1.0);
  pair.margin = 0.5;
  // Positive scores 0, negative scores 2: the only hinge is 1.5 past saturation.
  auto batch = mask_batch(1, 2, {1, 0}, {1}, {1, 1});
  batch.tuples = Matrix(3, 1);
  batch.tuples << 1.0, 0.0, 0.0;
  batch.mentions = Matrix(3, 2);
  batch.mentions << 1.0, -1.0, 0.0, 0.0, 0.0, 0.0;
  const auto r = pairwise_contrastive_loss(pair, batch);
  CHECK(r.loss == 0.0);
  CHECK(r.skipped_anchors == 1);
  CHECK(r.grad.all_zero());
  const auto check = gradient_check(pair, batch, 1e-5);
  CHECK(check.retries == 0);
  CHECK(check.max_abs_error < 1e-8);
}

TEST_CASE("adam schedule and updates") {
  auto pair = make_embedder_pair(4, 5, small_shape(0.75), 0.001, 4);
  AdamConfig cfg;
  cfg.learning_rate = 1e-5;
  auto adam = AdamState::for_pair(pair, cfg);
  CHECK(adam.effective_lr_at(0) == 1e-5);
  CHECK(adam.effective_lr_at(999) == 1e-5);
  CHECK(adam.effective_lr_at(1000) == doctest::Approx(9e-6).epsilon(1e-12));
  CHECK(adam.effective_lr_at(2500) == doctest::Approx(8.1e-6).epsilon(1e-12));

  SUBCASE("zero-gradient batch leaves parameters but advances the step") {
    auto batch = mask_batch(1, 1, {1}, {1}, {1});
    batch.tuples = Matrix::Ones(4, 1);
    batch.mentions = Matrix::Ones(5, 1);
    const auto before = encode_checkpoint(pair, nullptr, nullptr);
    Rng drop(1);
    const auto r = gradient_step(pair, adam, batch, drop);
    CHECK(r.loss == 0.0);
    CHECK(adam.step == 1);
    CHECK(encode_checkpoint(pair, nullptr, nullptr) == before);
  }
  SUBCASE("non-finite input aborts with the batch named") {
    Rng rng(2);
    auto batch = diagonal_batch(rng, 2, 2, 4, 5);
    batch.tuple_ids = {"t-one", "t-two"};
    batch.mention_ids = {"m-one", "m-two"};
    batch.tuples(0, 0) = std::numeric_limits<double>::quiet_NaN();
    Rng drop(1);
    try {
      gradient_step(pair, adam, batch, drop);
      FAIL("expected a training error");
    } catch (const TrainingError& e) {
      CHECK(std::string(e.what()).find("t-two") != std::string::npos);
      CHECK(std::string(e.what()).find("m-one") != std::string::npos);
    }
  }
}

TEST_CASE("training decreases the loss on a fixed separable batch") {
  Rng rng(16);
  auto pair = make_embedder_pair(6, 6, small_shape(1.0), 0.1, 5);
  TrainingBatch batch = diagonal_batch(rng, 4, 4, 6, 6);
  batch.mentions = batch.tuples + 0.1 * random_matrix(rng, 6, 4);
  AdamConfig cfg;
  cfg.learning_rate = 1e-2;
  auto adam = AdamState::for_pair(pair, cfg);
  Rng drop(0);
  const double first = pairwise_contrastive_loss(pair, batch).loss;
  for (int s = 0; s < 200; ++s) gradient_step(pair, adam, batch, drop);
  const double last = pairwise_contrastive_loss(pair, batch).loss;
  CHECK(first > 0.0);
  CHECK(last < first);
  CHECK(adam.step == 200);
}

TEST_CASE("checkpoint round trip") {
  auto pair = make_embedder_pair(4, 5, small_shape(0.75), 0.25, 6);
  auto adam = AdamState::for_pair(pair, {});
  Rng rng(17);
  auto batch = diagonal_batch(rng, 3, 3, 4, 5);
  Rng drop(3);
  for (int s = 0; s < 5; ++s) gradient_step(pair, adam, batch, drop);

  const auto bytes = encode_checkpoint(pair, &adam, {{"note", "x"}});
  CHECK(bytes.substr(0, 8) == "ENTLCKP1");
  const auto ck = decode_checkpoint(bytes);
  REQUIRE(ck.adam.has_value());
  CHECK(ck.adam->step == 5);
  CHECK(ck.header.at("extra").at("note") == "x");
  CHECK(ck.pair.margin == 0.25);
  CHECK(encode_checkpoint(ck.pair, &*ck.adam, {{"note", "x"}}) == bytes);

  const DenseVector x = DenseVector::Ones(4);
  CHECK(forward_embed(ck.pair.net_r, x) == forward_embed(pair.net_r, x));

  CHECK_THROWS_AS(decode_checkpoint(std::string_view(bytes).substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "z"), FormatError);
  CHECK_THROWS_AS(decode_checkpoint("NOTACKPT"), FormatError);

  const auto no_opt = decode_checkpoint(encode_checkpoint(pair, nullptr, nullptr));
  CHECK(!no_opt.adam.has_value());
}

TEST_CASE("sampler contracts") {
  std::vector<GoldLink> links;
  for (int e = 0; e < 5; ++e)
    for (int m = 0; m < 3; ++m)
      links.push_back({"e" + std::to_string(e), "m" + std::to_string(e) + "_" + std::to_string(m)});
  std::vector<GoldLink> distractors{{"d0", "dm0"}, {"d1", "dm1"}, {"d2", "dm2"}, {"e0", "leak"}};
  std::set<std::pair<std::string, std::string>> gold;
  for (const auto& l : links) gold.insert({l.tuple_key, l.mention_id});

  SamplerConfig cfg;
  cfg.entities_per_batch = 2;
  cfg.links_per_entity = 2;
  cfg.distractors_per_batch = 3;
  BatchSampler sampler(links, distractors, cfg, 42);
  const DenseVector one = DenseVector::Ones(2);
  std::map<std::string, std::size_t> previous;
  for (int i = 0; i < 500; ++i) {
    const auto ids = sampler.next();
    const auto b = assemble_batch(
        ids, [&](const std::string&) -> const DenseVector& { return one; },
        [&](const std::string&) -> const DenseVector& { return one; }, gold);
    std::size_t positives = 0;
    for (auto p : b.positive) positives += p;
    CHECK(positives >= 1);
    for (std::size_t t = 0; t < b.n_tuples(); ++t) {
      if (!b.tuple_anchor[t]) CHECK(b.tuple_ids[t][0] == 'd');
    }
    for (std::size_t m = 0; m < b.n_mentions(); ++m) {
      CHECK(b.mention_ids[m] != "leak");  // trainable entities never act as distractors
      if (!b.mention_anchor[m]) CHECK(b.mention_ids[m].rfind("dm", 0) == 0);
    }
    for (const auto& [e, n] : sampler.seen_counts()) CHECK(n >= previous[e]);
    previous = sampler.seen_counts();
  }
  // Inverse-frequency weighting keeps draws balanced.
  std::size_t lo = SIZE_MAX, hi = 0;
  for (const auto& [e, n] : sampler.seen_counts()) lo = std::min(lo, n), hi = std::max(hi, n);
  CHECK(static_cast<double>(hi) <= 1.25 * static_cast<double>(lo));

  CHECK_THROWS_AS(BatchSampler({}, {}, cfg, 0), ValidationError);
}

TEST_CASE("sampler draws entities, not links") {
  std::vector<GoldLink> links;
  for (int m = 0; m < 100; ++m) links.push_back({"A", "a" + std::to_string(m)});
  links.push_back({"B", "b0"});
  SamplerConfig cfg;
  cfg.entities_per_batch = 1;
  cfg.links_per_entity = 1;
  cfg.distractors_per_batch = 0;
  BatchSampler sampler(links, {}, cfg, 7);
  for (int i = 0; i < 2000; ++i) sampler.next();
  const auto& seen = sampler.seen_counts();
  CHECK(static_cast<double>(seen.at("B")) >= 0.25 * static_cast<double>(seen.at("A")));
}

TEST_CASE("train_pair logs one line per step") {
  std::vector<GoldLink> links;
  std::map<std::string, DenseVector> vecs;
  Rng rng(18);
  for (int e = 0; e < 6; ++e) {
    const std::string t = "t" + std::to_string(e);
    vecs[t] = entlink::testing::random_unit(rng, 4);
    for (int m = 0; m < 2; ++m) {
      const std::string id = "m" + std::to_string(e) + std::to_string(m);
      links.push_back({t, id});
      vecs[id] = DenseVector(5);
      vecs[id] << vecs[t], 0.1 * m;
    }
  }
  std::set<std::pair<std::string, std::string>> gold;
  for (const auto& l : links) gold.insert({l.tuple_key, l.mention_id});
  auto pair = make_embedder_pair(4, 5, small_shape(0.75), 0.1, 9);
  auto adam = AdamState::for_pair(pair, {});
  BatchSampler sampler(links, {}, {3, 2, 0}, 11);
  std::ostringstream log;
  auto lookup = [&](const std::string& k) -> const DenseVector& { return vecs.at(k); };
  const auto summary = train_pair(
      pair, adam, sampler, [&](const SampledBatch& ids) { return assemble_batch(ids, lookup, lookup, gold); },
      {25, 1, &log});
  CHECK(summary.steps == 25);
  std::istringstream in(log.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::size_t step;
    double lr, loss;
    REQUIRE(static_cast<bool>(fields >> step >> lr >> loss));
    CHECK(step == static_cast<std::size_t>(lines + 1));
    ++lines;
  }
  CHECK(lines == 25);
}

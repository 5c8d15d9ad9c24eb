#include "entlink/vectorize.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace entlink;

namespace {

void check_close(const DenseVector& got, const std::vector<double>& expected, double tol) {
  REQUIRE(static_cast<std::size_t>(got.size()) == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(std::abs(got[static_cast<Eigen::Index>(i)] - expected[i]) <= tol);
}

std::shared_ptr<const TextEncoder> encoder(std::size_t dim = 16, std::uint64_t seed = 0) {
  return std::make_shared<HashingEncoder>(dim, seed);
}

// A small store that answers tuple lookups for fk tests.
struct Store {
  std::map<std::pair<std::string, std::string>, TupleRecord> rows;
  TupleLookup lookup() const {
    return [this](std::string_view rel, std::string_view key) -> const TupleRecord* {
      auto it = rows.find({std::string(rel), std::string(key)});
      return it == rows.end() ? nullptr : &it->second;
    };
  }
  void add(TupleRecord t) { rows[{t.relation, t.key}] = std::move(t); }
};

}  // namespace

TEST_CASE("hashing encoder matches the independent oracle") {
  // Frozen from tests/oracles/hashing_oracle.py.
  HashingEncoder e8(8, 42);
  check_close(e8.encode("IBM"), {0.0, -0.7071067811865475, 0.0, 0.0, 0.0, 0.0, -0.7071067811865475, 0.0}, 1e-12);
  check_close(encode_text_baseline(e8, "Big Blue reported"),
              {0.17677669529663687, 0.0, -0.7071067811865475, 0.17677669529663687, 0.0, -0.5303300858899106,
               -0.17677669529663687, 0.35355339059327373},
              1e-12);
  check_close(e8.encode("  x  "), {-1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0}, 1e-12);
  HashingEncoder e16(16, 7);
  check_close(e16.encode("Cleveland, Ohio 44114"),
              {0.0, 0.0, -0.47140452079103173, -0.7071067811865476, 0.0, 0.0, 0.0, -0.23570226039551587,
               0.23570226039551587, 0.0, 0.23570226039551587, 0.0, 0.23570226039551587, 0.0, 0.0,
               -0.23570226039551587},
              1e-12);
}

TEST_CASE("hashing encoder properties") {
  HashingEncoder enc(256, 3);
  CHECK(enc.encode("").isZero(0.0));
  CHECK(enc.encode(" \t\n").isZero(0.0));
  for (const char* text : {"a", "IBM", "200 Public Square", "Zürich", "x y z 1 2 3"}) {
    CHECK(std::abs(enc.encode(text).norm() - 1.0) < 1e-9);
    CHECK(enc.encode(text) == enc.encode(text));
  }
  CHECK(enc.encode("IBM") == enc.encode("ibm"));
  CHECK(enc.encode("a  b") == enc.encode("a b"));
  CHECK(HashingEncoder(256, 4).encode("IBM") != enc.encode("IBM"));
  const auto f = HashingEncoder::features("Ab c");
  CHECK(f == std::vector<std::string>{"c: ab", "c:ab ", "c:b c", "c: c ", "w:ab", "w:c"});
  CHECK_THROWS_AS(HashingEncoder(0, 0), ValidationError);
  const auto cfg = enc.config();
  CHECK(encoder_from_config(cfg)->encode("IBM") == enc.encode("IBM"));
  CHECK_THROWS_AS(encoder_from_config({{"type", "skipthought"}}), ValidationError);
}

TEST_CASE("numeric and categorical fitting") {
  RelationSchema s{"R", {{"x", AttributeKind::Numeric}, {"c", AttributeKind::Categorical}, {"empty", AttributeKind::Numeric}, {"flat", AttributeKind::Numeric}}, {}, ""};
  std::vector<TupleRecord> ts{
      {"R", "k1", {Scalar(1.0), Scalar(std::string("A")), std::nullopt, Scalar(5.0)}, {}},
      {"R", "k2", {Scalar(2.0), Scalar(std::string("B")), std::nullopt, Scalar(5.0)}, {}},
      {"R", "k3", {Scalar(3.0), Scalar(std::string("C")), std::nullopt, Scalar(5.0)}, {}},
  };
  const auto model = fit_vectorizer(ts, s, encoder());
  const auto& fit = model.fit("R");

  // Oracle: direct population statistics.
  const double mean = (1.0 + 2.0 + 3.0) / 3.0;
  const double std = std::sqrt(((1 - mean) * (1 - mean) + (2 - mean) * (2 - mean) + (3 - mean) * (3 - mean)) / 3.0);
  CHECK(fit.numeric.at("x").mean == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(std::abs(fit.numeric.at("x").std - 0.816496580927726) < 1e-12);
  CHECK(fit.numeric.at("x").std == doctest::Approx(std).epsilon(1e-15));
  CHECK(std::abs(model.vectorize_attribute("R", 0, Scalar(3.0))[0] - 1.224744871391589) < 1e-12);

  CHECK(fit.numeric.at("empty").mean == 0.0);
  CHECK(fit.numeric.at("empty").std == 1.0);
  CHECK(fit.numeric.at("flat").mean == 5.0);
  CHECK(fit.numeric.at("flat").std == 1.0);
  CHECK(model.vectorize_attribute("R", 3, Scalar(5.0))[0] == 0.0);

  CHECK(model.attribute_dim("R", 1) == 4);
  check_close(model.vectorize_attribute("R", 1, Scalar(std::string("B"))), {0, 1, 0, 0}, 0.0);
  check_close(model.vectorize_attribute("R", 1, Scalar(std::string("Z"))), {0, 0, 0, 1}, 0.0);
  check_close(model.vectorize_attribute("R", 1, std::nullopt), {0, 0, 0, 0}, 0.0);

  SUBCASE("tuple vectors: blocks then presence bits") {
    const auto v = model.vectorize_tuple(ts[1], nullptr);
    // x(1) c(4) empty(1) flat(1) presence(4)
    REQUIRE(v.size() == 11);
    CHECK(v[0] == 0.0);
    CHECK(v[2] == 1.0);
    CHECK(v.tail(4) == (DenseVector(4) << 1, 1, 0, 1).finished());
  }
  SUBCASE("json round trip") {
    const auto back = VectorizerModel::from_json(model.to_json());
    CHECK(back.to_json() == model.to_json());
    CHECK(back.vectorize_tuple(ts[2], nullptr) == model.vectorize_tuple(ts[2], nullptr));
    auto broken = model.to_json();
    broken["tuple_dim"] = 3;
    CHECK_THROWS_AS(VectorizerModel::from_json(broken), FormatError);
  }
  SUBCASE("schema mismatch") {
    TupleRecord bad{"R", "k", {Scalar(1.0)}, {}};
    CHECK_THROWS_AS(model.vectorize_tuple(bad, nullptr), ValidationError);
    std::vector<TupleRecord> wrong{{"R", "k", {Scalar(std::string("t")), std::nullopt, std::nullopt, std::nullopt}, {}}};
    CHECK_THROWS_AS(fit_vectorizer(wrong, s, encoder()), ValidationError);
    CHECK_THROWS_AS(fit_vectorizer(std::vector<TupleRecord>{}, s, encoder()), ValidationError);
  }
}

TEST_CASE("normalized numeric columns have mean 0 and variance 1 over the fit set") {
  Rng rng(5);
  RelationSchema s{"R", {{"x", AttributeKind::Numeric}}, {}, ""};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TupleRecord> ts;
    const std::size_t n = 2 + rng.index(200);
    const double scale = std::pow(10.0, 6.0 * rng.uniform() - 3.0);
    const double shift = 1000.0 * rng.normal();
    for (std::size_t i = 0; i < n; ++i) ts.push_back({"R", "k" + std::to_string(i), {Scalar(shift + scale * rng.normal())}, {}});
    const auto model = fit_vectorizer(ts, s, encoder());
    double sum = 0.0, sq = 0.0;
    for (const auto& t : ts) {
      const double z = model.vectorize_attribute("R", 0, t.values[0])[0];
      sum += z;
      sq += z * z;
    }
    const double m = sum / static_cast<double>(n);
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(sq / static_cast<double>(n) - m * m - 1.0) < 1e-6);
  }
}

TEST_CASE("text attributes and NULLs") {
  RelationSchema s{"R", {{"name", AttributeKind::Text}}, {}, ""};
  std::vector<TupleRecord> ts{{"R", "a", {Scalar(std::string("IBM"))}, {}}, {"R", "b", {std::nullopt}, {}}};
  const auto model = fit_vectorizer(ts, s, encoder(8, 42));
  const auto a = model.vectorize_tuple(ts[0], nullptr);
  const auto b = model.vectorize_tuple(ts[1], nullptr);
  REQUIRE(a.size() == 9);
  CHECK(a.head(8) == HashingEncoder(8, 42).encode("IBM"));
  CHECK(a[8] == 1.0);
  CHECK(b.isZero(0.0));
  CHECK(model.vectorize_tuple(ts[0], nullptr) == a);
}

TEST_CASE("layout arithmetic") {
  RelationSchema target{"T", {{"label", AttributeKind::Numeric}}, {}, ""};
  RelationSchema s{"R",
                   {{"name", AttributeKind::Text}, {"n", AttributeKind::Numeric}, {"c", AttributeKind::Categorical}},
                   {{"ref", "T"}},
                   ""};
  TupleRecord t1{"T", "t1", {Scalar(1.0)}, {}};
  std::vector<TupleRecord> rs{
      {"R", "r1", {Scalar(std::string("x")), Scalar(1.0), Scalar(std::string("A"))}, {{"t1"}}},
      {"R", "r2", {Scalar(std::string("y")), Scalar(2.0), Scalar(std::string("B"))}, {{}}},
      {"R", "r3", {Scalar(std::string("z")), Scalar(3.0), Scalar(std::string("C"))}, {{}}},
  };
  FitInput primary{&s, {&rs[0], &rs[1], &rs[2]}};
  FitInput related{&target, {&t1}};
  const auto model = fit_vectorizer(primary, {related}, encoder(256));
  const std::size_t fk_dim = model.dim_at("T", 0);
  CHECK(fk_dim == 1 + 1);
  CHECK(model.tuple_dim() == 256 + 1 + 4 + fk_dim + 4);
  std::size_t total = 0;
  for (const auto& b : model.layout()) total += b.dim;
  CHECK(total == model.tuple_dim());
  CHECK(model.mention_dim() == 512);

  TupleRecord all_null{"R", "n", {std::nullopt, std::nullopt, std::nullopt}, {{}}};
  CHECK(model.vectorize_tuple(all_null, nullptr).isZero(0.0));

  CHECK_THROWS_AS(fit_vectorizer(primary, {}, encoder()), ValidationError);  // T not fitted
}

TEST_CASE("foreign key sums") {
  // T rows carry one numeric attribute; depth-0 vectors are [z, presence].
  RelationSchema target{"T", {{"v", AttributeKind::Categorical}}, {}, ""};
  RelationSchema s{"R", {{"w", AttributeKind::Numeric}}, {{"ref", "T"}}, ""};
  Store store;
  store.add({"T", "t1", {Scalar(std::string("p"))}, {}});
  store.add({"T", "t2", {Scalar(std::string("q"))}, {}});
  std::vector<TupleRecord> rs{{"R", "r", {Scalar(1.0)}, {{"t1", "t2"}}}};
  FitInput primary{&s, {&rs[0]}};
  FitInput related{&target, {&store.rows.at({"T", "t1"}), &store.rows.at({"T", "t2"})}};
  const auto model = fit_vectorizer(primary, {related}, encoder());
  const auto lookup = store.lookup();

  // One-hot over {p, q, UNK} plus a presence bit.
  const DenseVector v1 = model.vectorize_tuple_at(store.rows.at({"T", "t1"}), 0, lookup);
  const DenseVector v2 = model.vectorize_tuple_at(store.rows.at({"T", "t2"}), 0, lookup);
  check_close(v1, {1, 0, 0, 1}, 0.0);
  check_close(v2, {0, 1, 0, 1}, 0.0);
  check_close(model.embed_foreign_key("R", 0, {"t1", "t2"}, lookup, 1), {1, 1, 0, 2}, 0.0);
  CHECK(model.embed_foreign_key("R", 0, {}, lookup, 1).isZero(0.0));

  // Linearity over multisets.
  const std::vector<std::string> l1{"t1", "t2", "t1"};
  const std::vector<std::string> l2{"t2"};
  std::vector<std::string> both = l1;
  both.insert(both.end(), l2.begin(), l2.end());
  CHECK(model.embed_foreign_key("R", 0, both, lookup, 1) ==
        model.embed_foreign_key("R", 0, l1, lookup, 1) + model.embed_foreign_key("R", 0, l2, lookup, 1));

  VectorizeDiagnostics diag;
  CHECK(model.embed_foreign_key("R", 0, {"t1", "missing"}, lookup, 1, &diag) == v1);
  CHECK(diag.dangling_keys == 1);
  CHECK_THROWS_AS(model.embed_foreign_key("R", 0, {"t1"}, lookup, 0), ValidationError);

  const auto full = model.vectorize_tuple(rs[0], lookup);
  // w(1) | ref(4) | presence(2)
  REQUIRE(full.size() == 7);
  check_close(full.segment(1, 4), {1, 1, 0, 2}, 0.0);
  check_close(full.tail(2), {1, 1}, 0.0);
}

TEST_CASE("cyclic references terminate at the depth cap") {
  // A -> B -> A within one relation; fk_depth 1.
  RelationSchema s{"R", {{"c", AttributeKind::Categorical}}, {{"next", "R"}}, ""};
  Store store;
  store.add({"R", "A", {Scalar(std::string("a"))}, {{"B"}}});
  store.add({"R", "B", {Scalar(std::string("b"))}, {{"A"}}});
  FitInput in{&s, {&store.rows.at({"R", "A"}), &store.rows.at({"R", "B"})}};
  const auto model = fit_vectorizer(in, {}, encoder(), 1);
  const auto va = model.vectorize_tuple(store.rows.at({"R", "A"}), store.lookup());
  // Hand-unrolled: A = onehot(a) | B at depth 0 = [onehot(b), presence c=1, presence next=1] | presence [1, 1].
  // Vocabulary {a, b, UNK}.
  check_close(va, {1, 0, 0, /* B */ 0, 1, 0, 1, 1, /* presence */ 1, 1}, 0.0);

  const auto deeper = fit_vectorizer(in, {}, encoder(), 2);
  const auto va2 = deeper.vectorize_tuple(store.rows.at({"R", "A"}), store.lookup());
  check_close(va2, {1, 0, 0, /* B@1 */ 0, 1, 0, /* A@0 */ 1, 0, 0, 1, 1, /* B presence */ 1, 1, /* presence */ 1, 1},
              0.0);
}

TEST_CASE("mention vectors") {
  RelationSchema s{"R", {{"name", AttributeKind::Text}}, {}, ""};
  std::vector<TupleRecord> ts{{"R", "a", {Scalar(std::string("IBM"))}, {}}};
  const auto model = fit_vectorizer(ts, s, encoder(256));
  TextMention m1{"m1", {0, 3}, "IBM", "IBM was founded in 1911.", std::nullopt};
  TextMention m2{"m2", {0, 3}, "IBM", "IBM reported strong sales.", std::nullopt};
  const auto v1 = model.vectorize_mention(m1);
  const auto v2 = model.vectorize_mention(m2);
  REQUIRE(v1.size() == 512);
  CHECK(v1.head(256) == HashingEncoder(256, 0).encode("IBM"));
  CHECK(v1.tail(256) == HashingEncoder(256, 0).encode("IBM was founded in 1911."));
  CHECK(v1.head(256) == v2.head(256));
  CHECK(v1.tail(256) != v2.tail(256));
}

TEST_CASE("keyed vector files") {
  KeyedVectors kv;
  kv.source_fingerprint = 0x1234;
  kv.keys = {"a", "b/c"};
  kv.vectors = {DenseVector::Ones(3), (DenseVector(2) << -0.5, 1e-300).finished()};
  const auto bytes = encode_vector_file(kv);
  const auto back = decode_vector_file(bytes);
  CHECK(back.source_fingerprint == 0x1234);
  CHECK(back.keys == kv.keys);
  CHECK(back.vectors[1] == kv.vectors[1]);
  CHECK(encode_vector_file(back) == bytes);
  CHECK_THROWS_AS(decode_vector_file(std::string_view(bytes).substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(decode_vector_file(bytes + "x"), FormatError);
  std::string bumped = bytes;
  bumped[8] = 2;
  CHECK_THROWS_AS(decode_vector_file(bumped), FormatError);

  entlink::testing::TempDir dir("vectors");
  save_vectors(kv, dir.file("v.vec"));
  CHECK(encode_vector_file(load_vectors(dir.file("v.vec"))) == bytes);
}

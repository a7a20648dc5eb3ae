#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "../support/tempdir.hpp"
#include "moralmatch/common.hpp"
#include "moralmatch/embedding.hpp"
#include "moralmatch/io.hpp"
#include "moralmatch/stats.hpp"

using namespace moralmatch;
using namespace moralmatch::embedding;
using testing_support::TempDir;

namespace {

std::vector<std::string> random_texts(std::size_t n, std::uint64_t seed, int vocab = 300, int len = 40) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> w(0, vocab - 1);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string t;
    for (int k = 0; k < len; ++k) t += "word" + std::to_string(w(rng)) + " ";
    out.push_back(t);
  }
  return out;
}

std::vector<std::string> ids_for(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("d" + std::to_string(i));
  return ids;
}

EmbeddingMatrix small_matrix(std::size_t n, std::size_t dims) {
  EmbeddingMatrix m;
  m.doc_ids = ids_for(n);
  m.vectors = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dims));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dims; ++j)
      m.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::sin(1.0 + i * 7.0 + j * 3.0);
  return m;
}

}  // namespace

TEST_CASE("cosine distance") {
  const std::vector<double> v{1, 2, 3}, neg{-1, -2, -3}, scaled{2, 4, 6}, e1{1, 0, 0}, e2{0, 1, 0};
  CHECK(cosine_distance(v, v) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_distance(e1, e2) == doctest::Approx(1.0));
  CHECK(cosine_distance(v, neg) == doctest::Approx(2.0));
  CHECK(cosine_distance(v, scaled) == doctest::Approx(0.0).epsilon(1e-15));
  const std::vector<double> u{0.3, -1, 2};
  CHECK(cosine_distance(u, v) == cosine_distance(v, u));
  const std::vector<double> zero{0, 0, 0}, short_v{1, 2};
  CHECK_THROWS_AS(cosine_distance(v, zero), Error);
  CHECK_THROWS_AS(cosine_distance(v, short_v), Error);
}

TEST_CASE("builtin embedder: identity, disjointness, normalization, determinism") {
  BuiltinOptions full;
  full.reduce_to = std::nullopt;
  const std::vector<std::string> texts{"the cat sat on the mat", "the cat sat on the mat",
                                       "quantum flux capacitor engine", ""};
  const auto m = embed_builtin(ids_for(4), texts, full);
  CHECK(m.dims() == full.dims);
  CHECK(cosine_distance(m.row(0), m.row(1)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(cosine_distance(m.row(0), m.row(2)) - 1.0) < 0.05);
  CHECK(m.empty_ids == std::vector<std::string>{"d3"});

  const auto texts2 = random_texts(60, 1);
  BuiltinOptions reduced;
  reduced.reduce_to = 16;
  reduced.seed = 4;
  const auto a = embed_builtin(ids_for(60), texts2, reduced);
  const auto b = embed_builtin(ids_for(60), texts2, reduced);
  CHECK(a.vectors == b.vectors);
  CHECK(a.dims() == 16);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double n = Eigen::Map<const Eigen::VectorXd>(a.row(i).data(), 16).norm();
    CHECK(std::abs(n - 1.0) < 1e-9);
  }
}

TEST_CASE("builtin embedder: fitted model reproduces the corpus rows and round-trips") {
  const auto texts = random_texts(50, 2);
  BuiltinOptions o;
  o.reduce_to = 20;
  o.dims = 1 << 12;
  HashedTfidfEmbedder fitted;
  const auto m = embed_builtin(ids_for(50), texts, o, &fitted);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto v = fitted.embed(texts[i]);
    for (std::size_t j = 0; j < 20; ++j) CHECK(v(static_cast<Eigen::Index>(j)) == doctest::Approx(m.row(i)[j]).epsilon(1e-12));
  }
  const auto copy = HashedTfidfEmbedder::deserialize(fitted.serialize());
  CHECK(copy.embed(texts[3]) == fitted.embed(texts[3]));
  CHECK(copy.output_dims() == 20);
  CHECK(fitted.embed("unseenword anotherone").norm() == doctest::Approx(0.0).epsilon(1e-300));
  CHECK_THROWS_AS(HashedTfidfEmbedder::deserialize("nope"), Error);
}

TEST_CASE("spectral reduction keeps the pairwise distance ranking") {
  // documents built from a few latent themes so the spectrum is informative
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> theme(0, 4), w(0, 39);
  std::vector<std::string> texts;
  for (int d = 0; d < 100; ++d) {
    std::string t;
    const int a = theme(rng), b = theme(rng);
    for (int k = 0; k < 30; ++k) t += "t" + std::to_string(a) + "w" + std::to_string(w(rng)) + " ";
    for (int k = 0; k < 10; ++k) t += "t" + std::to_string(b) + "w" + std::to_string(w(rng)) + " ";
    texts.push_back(t);
  }
  BuiltinOptions full;
  full.reduce_to = std::nullopt;
  BuiltinOptions reduced;
  reduced.reduce_to = 64;
  const auto f = embed_builtin(ids_for(100), texts, full);
  const auto r = embed_builtin(ids_for(100), texts, reduced);
  std::vector<double> df, dr;
  for (std::size_t i = 0; i < 100; ++i)
    for (std::size_t j = i + 1; j < 100; ++j) {
      df.push_back(cosine_distance(f.row(i), f.row(j)));
      dr.push_back(cosine_distance(r.row(i), r.row(j)));
    }
  const auto tau = stats::kendall_tau_b(df, dr).tau;
  MESSAGE("kendall tau full vs reduced: " << tau);
  CHECK(tau >= 0.8);
}

TEST_CASE("import: text and binary files") {
  TempDir dir;
  auto m = small_matrix(50, 8);
  write_embeddings_text(dir / "e.txt", m);
  write_embeddings_binary(dir / "e32.bin", m, Precision::float32);
  write_embeddings_binary(dir / "e64.bin", m, Precision::float64);
  const auto ids = ids_for(50);
  for (const char* f : {"e.txt", "e32.bin", "e64.bin"}) {
    CAPTURE(f);
    const auto r = import_embeddings(dir / f, ids);
    CHECK(r.missing_ids.empty());
    CHECK(r.matrix.rows() == 50);
    CHECK(r.matrix.dims() == 8);
    CHECK(r.matrix.normalized);
    CHECK(r.matrix.source == Source::external);
    for (std::size_t i = 0; i < 50; ++i) {
      const auto row = r.matrix.row(i);
      CHECK(std::abs(Eigen::Map<const Eigen::VectorXd>(row.data(), 8).norm() - 1.0) < 1e-9);
      const double expect = m.vectors(static_cast<Eigen::Index>(i), 0) / m.vectors.row(static_cast<Eigen::Index>(i)).norm();
      CHECK(row[0] == doctest::Approx(expect).epsilon(1e-6));
    }
  }
  // rows come back in the requested order
  std::vector<std::string> rev(ids.rbegin(), ids.rend());
  const auto r = import_embeddings(dir / "e64.bin", rev);
  CHECK(r.matrix.doc_ids == rev);
}

TEST_CASE("import: wide vectors pass through") {
  TempDir dir;
  const auto m = small_matrix(3, 768);
  write_embeddings_binary(dir / "w.bin", m);
  CHECK(import_embeddings(dir / "w.bin", ids_for(3)).matrix.dims() == 768);
}

TEST_CASE("import: missing ids, bad values, dimension mismatch") {
  TempDir dir;
  auto m = small_matrix(50, 4);
  write_embeddings_text(dir / "e.txt", m);
  auto ids = ids_for(50);
  ids.push_back("extra");
  auto r = import_embeddings(dir / "e.txt", ids);
  CHECK(r.matrix.rows() == 50);
  CHECK(r.missing_ids == std::vector<std::string>{"extra"});
  ids.push_back("extra2");
  CHECK_THROWS_AS(import_embeddings(dir / "e.txt", ids), Error);

  io::write_file_atomic(dir / "nan.txt", "a 1 2 3\nb nan nan nan\n");
  try {
    import_embeddings(dir / "nan.txt", std::vector<std::string>{"a", "b"});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("'b'") != std::string::npos);
  }
  io::write_file_atomic(dir / "dim.txt", "a 1 2 3\nb 1 2\n");
  CHECK_THROWS_AS(import_embeddings(dir / "dim.txt", std::vector<std::string>{"a", "b"}), Error);
}

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace moralmatch::embedding {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Source { builtin, external };
std::string_view to_string(Source s);

struct EmbeddingMatrix {
  std::vector<std::string> doc_ids;
  RowMatrix vectors;
  bool normalized = false;
  Source source = Source::builtin;
  std::vector<std::string> empty_ids;  // zero rows; never matched

  std::size_t rows() const { return static_cast<std::size_t>(vectors.rows()); }
  std::size_t dims() const { return static_cast<std::size_t>(vectors.cols()); }
  std::span<const double> row(std::size_t i) const {
    return {vectors.data() + i * dims(), dims()};
  }
};

struct BuiltinOptions {
  std::size_t dims = std::size_t{1} << 18;
  std::optional<std::size_t> reduce_to = 256;
  std::uint64_t seed = 0;
};

/// Signed feature hashing with log-TF and smoothed IDF, optionally followed
/// by a truncated spectral projection fitted on the training texts.
class HashedTfidfEmbedder {
 public:
  static HashedTfidfEmbedder fit(std::span<const std::string> texts, const BuiltinOptions& options);

  /// Unit-norm vector, or all zeros when the text has no usable token.
  Eigen::VectorXd embed(std::string_view text) const;
  std::size_t output_dims() const;
  const BuiltinOptions& options() const { return options_; }

  std::string serialize() const;
  static HashedTfidfEmbedder deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static HashedTfidfEmbedder load(const std::filesystem::path& path);

 private:
  struct Feature {
    std::uint32_t bucket;
    double value;
  };
  std::vector<Feature> hashed_tf(std::string_view text) const;
  double idf(std::uint32_t bucket) const;

  BuiltinOptions options_;
  std::uint64_t num_docs_ = 0;
  std::unordered_map<std::uint32_t, std::uint64_t> doc_freq_;
  // spectral projection, one row per bucket seen during fit
  std::unordered_map<std::uint32_t, std::size_t> projection_row_;
  RowMatrix projection_;
};

/// Lowercase alphanumeric tokens, as the hashing embedder sees them.
std::vector<std::string> embedding_tokens(std::string_view text);

EmbeddingMatrix embed_builtin(std::span<const std::string> doc_ids,
                              std::span<const std::string> texts, const BuiltinOptions& options,
                              HashedTfidfEmbedder* fitted = nullptr);

struct ImportResult {
  EmbeddingMatrix matrix;
  std::vector<std::string> missing_ids;
};

/// Reads `doc_id v1 .. vD` lines or the binary layout written by
/// write_embeddings_binary. Rows come back in `expected_doc_ids` order,
/// L2-normalized. A single missing id, or up to 1% of ids, is tolerated and
/// reported; more is fatal.
ImportResult import_embeddings(const std::filesystem::path& path,
                               std::span<const std::string> expected_doc_ids);

enum class Precision { float32, float64 };

/// Binary layout, little-endian: 8-byte magic ("MMEMB001" for float32 data,
/// "MMEMB002" for float64), uint32 D, uint64 rows, rows x (uint32 id length,
/// id bytes), then rows x D reals row-major.
void write_embeddings_binary(const std::filesystem::path& path, const EmbeddingMatrix& m,
                             Precision precision = Precision::float32);
void write_embeddings_text(const std::filesystem::path& path, const EmbeddingMatrix& m);

/// 1 - cos(u, v), in [0, 2]. Throws on a zero vector or size mismatch.
double cosine_distance(std::span<const double> u, std::span<const double> v);

}  // namespace moralmatch::embedding

#include "moralmatch/embedding.hpp"

#include <Eigen/SVD>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <map>
#include <random>
#include <sstream>
#include <unordered_set>

#include "moralmatch/common.hpp"
#include "moralmatch/io.hpp"

namespace moralmatch::embedding {

std::string_view to_string(Source s) { return s == Source::builtin ? "builtin" : "external"; }

std::vector<std::string> embedding_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

constexpr std::size_t kOversample = 10;
constexpr int kPowerIterations = 2;

Eigen::MatrixXd orthonormal_basis(const Eigen::MatrixXd& y) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
  return qr.householderQ() * Eigen::MatrixXd::Identity(y.rows(), y.cols());
}

}  // namespace

std::vector<HashedTfidfEmbedder::Feature> HashedTfidfEmbedder::hashed_tf(std::string_view text) const {
  std::map<std::string, std::size_t> tf;
  for (auto& tok : embedding_tokens(text)) ++tf[tok];
  std::map<std::uint32_t, double> acc;
  const std::uint64_t basis = mix64(options_.seed ^ 0x5851f42d4c957f2dULL);
  for (const auto& [tok, count] : tf) {
    const std::uint64_t h = fnv1a(tok, basis);
    const auto bucket = static_cast<std::uint32_t>(h % options_.dims);
    const double sign = (mix64(h) >> 63) ? -1.0 : 1.0;
    acc[bucket] += sign * (1.0 + std::log(static_cast<double>(count)));
  }
  std::vector<Feature> out;
  out.reserve(acc.size());
  for (const auto& [b, v] : acc)
    if (v != 0.0) out.push_back({b, v});
  return out;
}

double HashedTfidfEmbedder::idf(std::uint32_t bucket) const {
  auto it = doc_freq_.find(bucket);
  const double df = it == doc_freq_.end() ? 0.0 : static_cast<double>(it->second);
  return std::log((1.0 + static_cast<double>(num_docs_)) / (1.0 + df)) + 1.0;
}

HashedTfidfEmbedder HashedTfidfEmbedder::fit(std::span<const std::string> texts,
                                             const BuiltinOptions& options) {
  if (options.dims < 16) throw Error("embedding: dims must be at least 16");
  if (options.reduce_to && *options.reduce_to >= options.dims)
    throw Error("embedding: reduce_to must be smaller than dims");
  if (options.reduce_to && *options.reduce_to == 0) throw Error("embedding: reduce_to must be positive");
  HashedTfidfEmbedder e;
  e.options_ = options;
  e.num_docs_ = texts.size();
  std::vector<std::vector<Feature>> rows;
  rows.reserve(texts.size());
  for (const auto& t : texts) {
    rows.push_back(e.hashed_tf(t));
    for (const auto& f : rows.back()) ++e.doc_freq_[f.bucket];
  }
  if (!options.reduce_to) return e;

  // Compact column index over the buckets seen, in bucket order.
  std::vector<std::uint32_t> used;
  used.reserve(e.doc_freq_.size());
  for (const auto& [b, _] : e.doc_freq_) used.push_back(b);
  std::sort(used.begin(), used.end());
  std::unordered_map<std::uint32_t, std::size_t> col;
  for (std::size_t i = 0; i < used.size(); ++i) col.emplace(used[i], i);

  const auto n = static_cast<Eigen::Index>(texts.size());
  const auto u = static_cast<Eigen::Index>(used.size());
  if (n == 0 || u == 0) return e;
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t d = 0; d < rows.size(); ++d)
    for (const auto& f : rows[d])
      trip.emplace_back(static_cast<int>(d), static_cast<int>(col[f.bucket]), f.value * e.idf(f.bucket));
  Eigen::SparseMatrix<double, Eigen::RowMajor> a(n, u);
  a.setFromTriplets(trip.begin(), trip.end());

  const auto rank = std::min<Eigen::Index>({static_cast<Eigen::Index>(*options.reduce_to), n, u});
  Eigen::MatrixXd v;  // u x rank
  if (std::min(n, u) <= rank + static_cast<Eigen::Index>(kOversample)) {
    Eigen::MatrixXd dense(a);
    Eigen::BDCSVD<Eigen::MatrixXd> svd(dense, Eigen::ComputeThinV);
    v = svd.matrixV().leftCols(rank);
  } else {
    const Eigen::Index l = rank + static_cast<Eigen::Index>(kOversample);
    std::mt19937_64 rng(derive_seed(options.seed, {0x5eed}));
    std::normal_distribution<double> normal;
    Eigen::MatrixXd omega(u, l);
    for (Eigen::Index j = 0; j < l; ++j)
      for (Eigen::Index i = 0; i < u; ++i) omega(i, j) = normal(rng);
    Eigen::MatrixXd q = orthonormal_basis(a * omega);
    for (int it = 0; it < kPowerIterations; ++it) {
      Eigen::MatrixXd z = orthonormal_basis(a.transpose() * q);
      q = orthonormal_basis(a * z);
    }
    Eigen::MatrixXd bt = a.transpose() * q;  // u x l, equals B^T
    Eigen::BDCSVD<Eigen::MatrixXd> svd(bt, Eigen::ComputeThinU);
    v = svd.matrixU().leftCols(rank);
  }
  e.projection_ = v;
  for (std::size_t i = 0; i < used.size(); ++i) e.projection_row_.emplace(used[i], i);
  return e;
}

std::size_t HashedTfidfEmbedder::output_dims() const {
  return options_.reduce_to ? static_cast<std::size_t>(projection_.cols()) : options_.dims;
}

Eigen::VectorXd HashedTfidfEmbedder::embed(std::string_view text) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(output_dims()));
  for (const auto& f : hashed_tf(text)) {
    const double w = f.value * idf(f.bucket);
    if (options_.reduce_to) {
      auto it = projection_row_.find(f.bucket);
      if (it == projection_row_.end()) continue;
      out += w * projection_.row(static_cast<Eigen::Index>(it->second)).transpose();
    } else {
      out[f.bucket] += w;
    }
  }
  const double n = out.norm();
  if (n > 0.0) out /= n;
  return out;
}

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw Error("truncated binary data");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

constexpr std::string_view kEmbedderMagic = "MMHTE001";

}  // namespace

std::string HashedTfidfEmbedder::serialize() const {
  std::string out(kEmbedderMagic);
  put<std::uint64_t>(out, options_.dims);
  put<std::uint64_t>(out, options_.reduce_to.value_or(0));
  put<std::uint64_t>(out, options_.seed);
  put<std::uint64_t>(out, num_docs_);
  std::vector<std::pair<std::uint32_t, std::uint64_t>> df(doc_freq_.begin(), doc_freq_.end());
  std::sort(df.begin(), df.end());
  put<std::uint64_t>(out, df.size());
  for (auto [b, c] : df) {
    put<std::uint32_t>(out, b);
    put<std::uint64_t>(out, c);
  }
  std::vector<std::pair<std::uint32_t, std::size_t>> rows(projection_row_.begin(), projection_row_.end());
  std::sort(rows.begin(), rows.end());
  put<std::uint64_t>(out, rows.size());
  put<std::uint64_t>(out, static_cast<std::uint64_t>(projection_.cols()));
  for (auto [b, r] : rows) {
    put<std::uint32_t>(out, b);
    for (Eigen::Index j = 0; j < projection_.cols(); ++j)
      put<double>(out, projection_(static_cast<Eigen::Index>(r), j));
  }
  return out;
}

HashedTfidfEmbedder HashedTfidfEmbedder::deserialize(std::string_view bytes) {
  if (bytes.substr(0, kEmbedderMagic.size()) != kEmbedderMagic) throw Error("embedder: bad magic");
  std::size_t pos = kEmbedderMagic.size();
  HashedTfidfEmbedder e;
  e.options_.dims = get<std::uint64_t>(bytes, pos);
  const auto reduce = get<std::uint64_t>(bytes, pos);
  if (reduce) e.options_.reduce_to = reduce;
  else e.options_.reduce_to.reset();
  e.options_.seed = get<std::uint64_t>(bytes, pos);
  e.num_docs_ = get<std::uint64_t>(bytes, pos);
  const auto n_df = get<std::uint64_t>(bytes, pos);
  for (std::uint64_t i = 0; i < n_df; ++i) {
    auto b = get<std::uint32_t>(bytes, pos);
    e.doc_freq_[b] = get<std::uint64_t>(bytes, pos);
  }
  const auto n_rows = get<std::uint64_t>(bytes, pos);
  const auto n_cols = get<std::uint64_t>(bytes, pos);
  e.projection_.resize(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(n_cols));
  for (std::uint64_t r = 0; r < n_rows; ++r) {
    auto b = get<std::uint32_t>(bytes, pos);
    e.projection_row_[b] = r;
    for (std::uint64_t j = 0; j < n_cols; ++j)
      e.projection_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = get<double>(bytes, pos);
  }
  return e;
}

void HashedTfidfEmbedder::save(const std::filesystem::path& path) const {
  io::write_file_atomic(path, serialize());
}

HashedTfidfEmbedder HashedTfidfEmbedder::load(const std::filesystem::path& path) {
  return deserialize(io::read_file(path));
}

EmbeddingMatrix embed_builtin(std::span<const std::string> doc_ids,
                              std::span<const std::string> texts, const BuiltinOptions& options,
                              HashedTfidfEmbedder* fitted) {
  if (doc_ids.size() != texts.size()) throw Error("embed_builtin: ids and texts differ in length");
  auto embedder = HashedTfidfEmbedder::fit(texts, options);
  EmbeddingMatrix m;
  m.doc_ids.assign(doc_ids.begin(), doc_ids.end());
  m.source = Source::builtin;
  m.vectors.resize(static_cast<Eigen::Index>(texts.size()),
                   static_cast<Eigen::Index>(embedder.output_dims()));
  for (std::size_t i = 0; i < texts.size(); ++i) {
    Eigen::VectorXd v = embedder.embed(texts[i]);
    m.vectors.row(static_cast<Eigen::Index>(i)) = v.transpose();
    if (v.isZero(0.0)) m.empty_ids.push_back(m.doc_ids[i]);
  }
  m.normalized = true;
  if (fitted) *fitted = std::move(embedder);
  return m;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kMagicF32 = "MMEMB001";
constexpr std::string_view kMagicF64 = "MMEMB002";

struct RawEmbeddings {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
};

RawEmbeddings read_binary(std::string_view bytes) {
  const bool f64 = bytes.substr(0, 8) == kMagicF64;
  std::size_t pos = 8;
  const auto dims = get<std::uint32_t>(bytes, pos);
  const auto n = get<std::uint64_t>(bytes, pos);
  RawEmbeddings raw;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto len = get<std::uint32_t>(bytes, pos);
    if (pos + len > bytes.size()) throw Error("embeddings: truncated id table");
    raw.ids.emplace_back(bytes.substr(pos, len));
    pos += len;
  }
  for (std::uint64_t i = 0; i < n; ++i) {
    std::vector<double> row(dims);
    for (auto& x : row) x = f64 ? get<double>(bytes, pos) : static_cast<double>(get<float>(bytes, pos));
    raw.rows.push_back(std::move(row));
  }
  return raw;
}

RawEmbeddings read_text(const std::filesystem::path& path) {
  RawEmbeddings raw;
  io::for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    auto cols = io::split_whitespace(line);
    if (cols.empty()) return;
    std::vector<double> row;
    row.reserve(cols.size() - 1);
    for (std::size_t i = 1; i < cols.size(); ++i) {
      const std::string s = io::to_lower(cols[i]);
      if (s == "nan" || s == "-nan") row.push_back(std::nan(""));
      else if (s == "inf" || s == "+inf") row.push_back(INFINITY);
      else if (s == "-inf") row.push_back(-INFINITY);
      else {
        try {
          row.push_back(parse_double(cols[i]));
        } catch (const Error&) {
          throw Error("embeddings " + path.string() + ":" + std::to_string(line_no) + ": bad value '" +
                      std::string(cols[i]) + "'");
        }
      }
    }
    raw.ids.emplace_back(cols[0]);
    raw.rows.push_back(std::move(row));
  });
  return raw;
}

}  // namespace

ImportResult import_embeddings(const std::filesystem::path& path,
                               std::span<const std::string> expected_doc_ids) {
  const std::string bytes = io::read_file(path);
  RawEmbeddings raw = (bytes.substr(0, 8) == kMagicF32 || bytes.substr(0, 8) == kMagicF64)
                          ? read_binary(bytes)
                          : read_text(path);
  std::optional<std::size_t> dims;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < raw.ids.size(); ++i) {
    if (!dims) dims = raw.rows[i].size();
    if (raw.rows[i].size() != *dims)
      throw Error("embeddings: row '" + raw.ids[i] + "' has " + std::to_string(raw.rows[i].size()) +
                  " values, expected " + std::to_string(*dims));
    for (double x : raw.rows[i])
      if (!std::isfinite(x)) throw Error("embeddings: non-finite value in row '" + raw.ids[i] + "'");
    index.emplace(raw.ids[i], i);
  }
  if (!dims || *dims == 0) throw Error("embeddings: file has no vectors");

  ImportResult out;
  std::vector<std::size_t> picked;
  for (const auto& id : expected_doc_ids) {
    auto it = index.find(id);
    if (it == index.end())
      out.missing_ids.push_back(id);
    else
      picked.push_back(it->second);
  }
  const std::size_t tolerated =
      std::max<std::size_t>(1, static_cast<std::size_t>(0.01 * static_cast<double>(expected_doc_ids.size())));
  if (out.missing_ids.size() > tolerated)
    throw Error("embeddings: " + std::to_string(out.missing_ids.size()) + " of " +
                std::to_string(expected_doc_ids.size()) + " documents have no vector");

  auto& m = out.matrix;
  m.source = Source::external;
  m.vectors.resize(static_cast<Eigen::Index>(picked.size()), static_cast<Eigen::Index>(*dims));
  for (std::size_t r = 0; r < picked.size(); ++r) {
    m.doc_ids.push_back(raw.ids[picked[r]]);
    for (std::size_t j = 0; j < *dims; ++j)
      m.vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = raw.rows[picked[r]][j];
  }
  for (Eigen::Index i = 0; i < m.vectors.rows(); ++i) {
    const double n = m.vectors.row(i).norm();
    if (n == 0.0)
      m.empty_ids.push_back(m.doc_ids[static_cast<std::size_t>(i)]);
    else if (std::abs(n - 1.0) > 1e-12)
      m.vectors.row(i) /= n;
  }
  m.normalized = true;
  return out;
}

void write_embeddings_binary(const std::filesystem::path& path, const EmbeddingMatrix& m,
                             Precision precision) {
  std::string out(precision == Precision::float64 ? kMagicF64 : kMagicF32);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.dims()));
  put<std::uint64_t>(out, m.rows());
  for (const auto& id : m.doc_ids) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
    out += id;
  }
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (double x : m.row(i)) {
      if (precision == Precision::float64)
        put<double>(out, x);
      else
        put<float>(out, static_cast<float>(x));
    }
  io::write_file_atomic(path, out);
}

void write_embeddings_text(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  std::string out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out += m.doc_ids[i];
    for (double x : m.row(i)) {
      out += ' ';
      out += format_double(x);
    }
    out += '\n';
  }
  io::write_file_atomic(path, out);
}

double cosine_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error("cosine_distance: dimension mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw Error("cosine_distance: zero vector");
  const double d = 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
  return std::clamp(d, 0.0, 2.0);
}

}  // namespace moralmatch::embedding

#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "moralmatch/stats.hpp"

namespace moralmatch::annotation {

struct PairDocument {
  std::string id;
  std::string title;
  std::string body;
};

struct AnnotationPair {
  std::string pair_id;
  PairDocument first;  // treated side in the matched-pairs file
  PairDocument second;
};

struct ServiceOptions {
  std::size_t raters_per_pair = 3;
  std::uint64_t seed = 0;
  std::string admin_key;  // empty disables re-rating
};

/// Status code plus JSON body, independent of the transport.
struct Reply {
  int status = 200;
  nlohmann::ordered_json body;
};

struct ExportSummary {
  std::size_t similarity_records = 0;
  std::size_t agency_records = 0;
  std::filesystem::path directory;
};

/// Three-step protocol per (annotator, pair): agency of author A, similarity
/// of the pair, agency of author B. Which document is A is drawn per
/// annotator. Every accepted record is appended to `log_path` before it takes
/// effect; an existing log is replayed on construction.
class AnnotationService {
 public:
  AnnotationService(std::vector<AnnotationPair> pairs, std::vector<std::string> annotators,
                    std::filesystem::path log_path, ServiceOptions options = {});

  Reply next(const std::string& annotator, bool practice = false);
  Reply submit(const nlohmann::json& request);
  Reply rerate(const nlohmann::json& request);
  Reply progress() const;
  ExportSummary export_to(const std::filesystem::path& dir) const;

  /// Final similarity scores, pairs x annotators, for agreement statistics.
  stats::RatingsMatrix similarity_matrix() const;

  const std::vector<std::string>& assigned(const std::string& annotator) const;
  std::map<std::string, std::size_t> loads() const;

 private:
  struct Task {
    std::size_t pair = 0;
    bool swapped = false;  // A is the pair's second document
    int step = 1;          // next expected step, 4 when done
    std::optional<int> scores[3];
  };
  struct Annotator {
    std::vector<Task> tasks;  // presentation order
    std::vector<std::string> pair_ids;
  };

  Reply apply(const nlohmann::json& request, bool replaying);
  Reply apply_rerate(const nlohmann::json& request, bool replaying);
  void append(const nlohmann::json& record);
  nlohmann::ordered_json present(const std::string& annotator, const Task& task) const;

  std::vector<AnnotationPair> pairs_;
  std::map<std::string, std::size_t> pair_index_;
  std::vector<std::string> annotator_names_;
  std::map<std::string, Annotator> annotators_;
  std::filesystem::path log_path_;
  ServiceOptions options_;
  std::size_t practice_records_ = 0;
  mutable std::mutex mutex_;
};

/// Picks `count` pairs at random (all when fewer exist), in file order.
std::vector<AnnotationPair> sample_pairs(std::vector<AnnotationPair> pairs, std::size_t count, std::uint64_t seed);

/// HTTP front end: GET /api/next, POST /api/annotation, GET /api/progress,
/// POST /api/export, POST /api/rerate.
class AnnotationServer {
 public:
  AnnotationServer(AnnotationService& service, std::filesystem::path export_dir);
  ~AnnotationServer();

  /// Binds and serves on a background thread; port 0 picks a free port.
  int start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace moralmatch::annotation

#pragma once

#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "moralmatch/annotation.hpp"
#include "moralmatch/config.hpp"

namespace moralmatch::pipeline {

namespace fs = std::filesystem;

enum class Stage { ingest, extract, topics, embed, propensity, match, estimate, report, synth, annotate_serve };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view name);

/// ingest through report, in dependency order.
const std::vector<Stage>& analysis_stages();

inline constexpr std::string_view kVersion = "moralmatch 1.0.0";

struct RunOptions {
  bool force = false;          // ignore an up-to-date manifest
  std::ostream* log = nullptr;  // progress messages
};

struct StageOutcome {
  Stage stage = Stage::ingest;
  bool skipped = false;  // inputs and parameters unchanged since the last run
  std::vector<std::string> notes;
};

/// Runs one stage under the output-directory lock. annotate-serve blocks
/// until the server stops.
StageOutcome run_stage(Stage stage, const config::RunConfig& config, const RunOptions& options = {});

std::vector<StageOutcome> run_stages(const std::vector<Stage>& stages, const config::RunConfig& config,
                                     const RunOptions& options = {});

/// Re-hashes the inputs and outputs recorded in a stage manifest; returns the
/// names whose content no longer matches.
std::vector<std::string> verify_manifest(const config::RunConfig& config, Stage stage);

/// Service over a random sample of the matched pairs, logging under the
/// output directory.
std::unique_ptr<annotation::AnnotationService> make_annotation_service(const config::RunConfig& config);

/// Holds `<dir>/.moralmatch.lock` for its lifetime.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

/// Bin lower bounds: quantiles of the ages, or `explicit_edges` when given.
std::vector<int> age_bin_edges(std::vector<int> ages, int bins, const std::vector<int>& explicit_edges = {});
std::string age_bin_label(int age, const std::vector<int>& edges, int max_age);

}  // namespace moralmatch::pipeline

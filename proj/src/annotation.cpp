#include "moralmatch/annotation.hpp"

#include <httplib.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>

#include "moralmatch/common.hpp"
#include "moralmatch/io.hpp"

namespace moralmatch::annotation {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

Reply error_reply(int status, const std::string& message) {
  Reply r;
  r.status = status;
  r.body["status"] = "error";
  r.body["error"] = message;
  return r;
}

ojson document_json(const PairDocument& d) { return {{"id", d.id}, {"title", d.title}, {"body", d.body}}; }

std::optional<std::string> string_field(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) return std::nullopt;
  return j.at(key).get<std::string>();
}

std::optional<int> int_field(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number_integer()) return std::nullopt;
  return j.at(key).get<int>();
}

}  // namespace

std::vector<AnnotationPair> sample_pairs(std::vector<AnnotationPair> pairs, std::size_t count, std::uint64_t seed) {
  if (pairs.size() <= count) return pairs;
  std::vector<std::size_t> idx(pairs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto ka = derive_seed(seed, {0x5a3, a}), kb = derive_seed(seed, {0x5a3, b});
    return ka != kb ? ka < kb : a < b;
  });
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  std::vector<AnnotationPair> out;
  for (auto i : idx) out.push_back(std::move(pairs[i]));
  return out;
}

AnnotationService::AnnotationService(std::vector<AnnotationPair> pairs, std::vector<std::string> annotators,
                                     std::filesystem::path log_path, ServiceOptions options)
    : pairs_(std::move(pairs)), annotator_names_(std::move(annotators)), log_path_(std::move(log_path)),
      options_(std::move(options)) {
  if (annotator_names_.empty()) throw Error("annotation: no annotators configured");
  if (std::set<std::string>(annotator_names_.begin(), annotator_names_.end()).size() != annotator_names_.size())
    throw Error("annotation: annotator names must be distinct");
  for (const auto& name : annotator_names_)
    if (name.empty()) throw Error("annotation: empty annotator name");
  if (options_.raters_per_pair < 1 || options_.raters_per_pair > annotator_names_.size())
    throw Error("annotation: need at least " + std::to_string(options_.raters_per_pair) + " annotators");
  for (std::size_t p = 0; p < pairs_.size(); ++p)
    if (!pair_index_.emplace(pairs_[p].pair_id, p).second)
      throw Error("annotation: duplicate pair id '" + pairs_[p].pair_id + "'");

  // Least-loaded first, ties to the earlier annotator: loads never differ by more than one.
  std::vector<std::size_t> load(annotator_names_.size(), 0);
  std::vector<std::vector<std::size_t>> assigned(annotator_names_.size());
  for (std::size_t p = 0; p < pairs_.size(); ++p) {
    std::vector<std::size_t> order(annotator_names_.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return load[a] < load[b]; });
    for (std::size_t r = 0; r < options_.raters_per_pair; ++r) {
      ++load[order[r]];
      assigned[order[r]].push_back(p);
    }
  }
  for (std::size_t a = 0; a < annotator_names_.size(); ++a) {
    const auto& name = annotator_names_[a];
    const std::uint64_t key = derive_seed(options_.seed, {fnv1a(name)});
    auto& tasks = assigned[a];
    std::sort(tasks.begin(), tasks.end(), [&](std::size_t x, std::size_t y) {
      const auto kx = derive_seed(key, {x}), ky = derive_seed(key, {y});
      return kx != ky ? kx < ky : x < y;
    });
    Annotator state;
    for (std::size_t p : tasks) {
      Task t;
      t.pair = p;
      t.swapped = unit_interval(derive_seed(key, {0x0b, p})) < 0.5;
      state.tasks.push_back(t);
      state.pair_ids.push_back(pairs_[p].pair_id);
    }
    annotators_.emplace(name, std::move(state));
  }

  if (!log_path_.empty() && std::filesystem::exists(log_path_)) {
    io::for_each_line(log_path_, [&](std::size_t line_no, std::string_view line) {
      if (io::trim(line).empty()) return;
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::parse_error&) {
        throw Error("annotation log " + log_path_.string() + ":" + std::to_string(line_no) + ": not valid JSON");
      }
      const auto type = string_field(rec, "type").value_or("");
      Reply r = type == "rerate" ? apply_rerate(rec, true) : apply(rec, true);
      if (r.status != 200)
        throw Error("annotation log " + log_path_.string() + ":" + std::to_string(line_no) + ": " +
                    r.body.value("error", std::string("rejected record")));
    });
  }
}

void AnnotationService::append(const json& record) {
  if (log_path_.empty()) return;
  if (log_path_.has_parent_path()) std::filesystem::create_directories(log_path_.parent_path());
  std::ofstream out(log_path_, std::ios::app | std::ios::binary);
  out << record.dump() << '\n';
  out.flush();
  if (!out) throw Error("annotation: cannot append to " + log_path_.string());
}

ojson AnnotationService::present(const std::string& annotator, const Task& task) const {
  const auto& pair = pairs_[task.pair];
  const auto& a = task.swapped ? pair.second : pair.first;
  const auto& b = task.swapped ? pair.first : pair.second;
  ojson out;
  out["status"] = "ok";
  out["annotator"] = annotator;
  out["pair_id"] = pair.pair_id;
  out["step"] = task.step;
  if (task.step == 2) {
    out["task"] = "similarity";
    out["documents"] = ojson::array({document_json(a), document_json(b)});
  } else {
    out["task"] = "agency";
    out["document"] = document_json(task.step == 1 ? a : b);
  }
  return out;
}

Reply AnnotationService::next(const std::string& annotator, bool practice) {
  std::lock_guard lock(mutex_);
  auto it = annotators_.find(annotator);
  if (it == annotators_.end()) return error_reply(403, "unknown annotator '" + annotator + "'");
  if (practice) {
    if (pairs_.empty()) return {200, {{"status", "done"}}};
    Task t;
    t.pair = 0;
    Reply r{200, present(annotator, t)};
    r.body["practice"] = true;
    return r;
  }
  std::size_t remaining = 0;
  const Task* current = nullptr;
  for (const auto& t : it->second.tasks)
    if (t.step <= 3) {
      ++remaining;
      if (!current) current = &t;
    }
  if (!current) return {200, {{"status", "done"}, {"annotator", annotator}}};
  Reply r{200, present(annotator, *current)};
  r.body["remaining_pairs"] = remaining;
  return r;
}

Reply AnnotationService::apply(const json& request, bool replaying) {
  const auto annotator = string_field(request, "annotator");
  const auto pair_id = string_field(request, "pair_id");
  const auto step = int_field(request, "step");
  const auto score = int_field(request, "score");
  if (!annotator || !pair_id || !step || !score)
    return error_reply(400, "annotation needs string annotator and pair_id, integer step and score");
  const bool practice = request.contains("practice") && request.at("practice").is_boolean() &&
                        request.at("practice").get<bool>();
  auto a = annotators_.find(*annotator);
  if (a == annotators_.end()) return error_reply(403, "unknown annotator '" + *annotator + "'");
  if (*step < 1 || *step > 3) return error_reply(400, "step must be 1, 2 or 3");
  if (*score < 1 || *score > 5) return error_reply(400, "score must lie in 1..5");
  if (practice) {
    if (!pair_index_.count(*pair_id)) return error_reply(404, "unknown pair '" + *pair_id + "'");
    if (!replaying) append({{"type", "practice"}, {"annotator", *annotator}, {"pair_id", *pair_id}, {"step", *step}, {"score", *score}});
    ++practice_records_;
    return {200, {{"status", "ok"}, {"practice", true}}};
  }
  auto& tasks = a->second.tasks;
  auto t = std::find_if(tasks.begin(), tasks.end(), [&](const Task& x) { return pairs_[x.pair].pair_id == *pair_id; });
  if (t == tasks.end()) return error_reply(403, "pair '" + *pair_id + "' is not assigned to '" + *annotator + "'");
  if (t->step > 3) return error_reply(409, "pair '" + *pair_id + "' is already complete");
  if (*step != t->step) {
    Reply r = error_reply(409, "step " + std::to_string(*step) + " is out of order; expected step " + std::to_string(t->step));
    r.body["expected_step"] = t->step;
    return r;
  }
  if (!replaying)
    append({{"type", "annotation"}, {"annotator", *annotator}, {"pair_id", *pair_id}, {"step", *step}, {"score", *score}});
  t->scores[*step - 1] = *score;
  ++t->step;
  ojson body{{"status", "ok"}, {"pair_id", *pair_id}};
  if (t->step <= 3) body["next_step"] = t->step;
  else body["pair_complete"] = true;
  return {200, body};
}

Reply AnnotationService::submit(const json& request) {
  std::lock_guard lock(mutex_);
  if (!request.is_object()) return error_reply(400, "request body must be a JSON object");
  return apply(request, false);
}

Reply AnnotationService::apply_rerate(const json& request, bool replaying) {
  const auto annotator = string_field(request, "annotator");
  const auto pair_id = string_field(request, "pair_id");
  const auto step = int_field(request, "step");
  const auto score = int_field(request, "score");
  if (!annotator || !pair_id || !step || !score)
    return error_reply(400, "re-rating needs annotator, pair_id, step and score");
  auto a = annotators_.find(*annotator);
  if (a == annotators_.end()) return error_reply(403, "unknown annotator '" + *annotator + "'");
  if (*step < 1 || *step > 3 || *score < 1 || *score > 5) return error_reply(400, "step must be 1..3 and score 1..5");
  auto& tasks = a->second.tasks;
  auto t = std::find_if(tasks.begin(), tasks.end(), [&](const Task& x) { return pairs_[x.pair].pair_id == *pair_id; });
  if (t == tasks.end()) return error_reply(403, "pair '" + *pair_id + "' is not assigned to '" + *annotator + "'");
  if (!t->scores[*step - 1]) return error_reply(409, "nothing to re-rate: step not yet annotated");
  if (!replaying) {
    json rec{{"type", "rerate"}, {"annotator", *annotator}, {"pair_id", *pair_id}, {"step", *step}, {"score", *score}};
    if (request.contains("reason") && request.at("reason").is_string()) rec["reason"] = request.at("reason");
    append(rec);
  }
  t->scores[*step - 1] = *score;
  return {200, {{"status", "ok"}, {"rerated", true}}};
}

Reply AnnotationService::rerate(const json& request) {
  std::lock_guard lock(mutex_);
  if (!request.is_object()) return error_reply(400, "request body must be a JSON object");
  if (options_.admin_key.empty()) return error_reply(403, "re-rating is disabled");
  if (string_field(request, "admin_key").value_or("") != options_.admin_key) return error_reply(403, "bad admin key");
  return apply_rerate(request, false);
}

Reply AnnotationService::progress() const {
  std::lock_guard lock(mutex_);
  ojson per = ojson::object();
  std::size_t done = 0, total = 0, similarity = 0, agency = 0;
  for (const auto& name : annotator_names_) {
    const auto& st = annotators_.at(name);
    std::size_t completed = 0;
    for (const auto& t : st.tasks) {
      if (t.step > 3) ++completed;
      similarity += t.scores[1] ? 1 : 0;
      agency += (t.scores[0] ? 1 : 0) + (t.scores[2] ? 1 : 0);
    }
    per[name] = {{"assigned", st.tasks.size()}, {"completed", completed}};
    done += completed;
    total += st.tasks.size();
  }
  ojson body{{"status", "ok"},
             {"pairs", pairs_.size()},
             {"completed_tasks", done},
             {"total_tasks", total},
             {"similarity_records", similarity},
             {"agency_records", agency},
             {"practice_records", practice_records_},
             {"annotators", per}};
  return {200, body};
}

stats::RatingsMatrix AnnotationService::similarity_matrix() const {
  std::lock_guard lock(mutex_);
  stats::RatingsMatrix m(pairs_.size(), std::vector<std::optional<int>>(annotator_names_.size()));
  for (std::size_t a = 0; a < annotator_names_.size(); ++a)
    for (const auto& t : annotators_.at(annotator_names_[a]).tasks) m[t.pair][a] = t.scores[1];
  return m;
}

ExportSummary AnnotationService::export_to(const std::filesystem::path& dir) const {
  const auto matrix = similarity_matrix();
  std::lock_guard lock(mutex_);
  std::filesystem::create_directories(dir);
  ExportSummary summary;
  summary.directory = dir;
  std::string similarity = io::csv_row({"pair_id", "annotator", "score"});
  std::string agency = io::csv_row({"pair_id", "annotator", "doc_id", "role", "score"});
  for (std::size_t p = 0; p < pairs_.size(); ++p)
    for (const auto& name : annotator_names_)
      for (const auto& t : annotators_.at(name).tasks) {
        if (t.pair != p) continue;
        const auto& pair = pairs_[p];
        const auto& a = t.swapped ? pair.second : pair.first;
        const auto& b = t.swapped ? pair.first : pair.second;
        if (t.scores[0]) {
          agency += io::csv_row({pair.pair_id, name, a.id, "A", std::to_string(*t.scores[0])});
          ++summary.agency_records;
        }
        if (t.scores[1]) {
          similarity += io::csv_row({pair.pair_id, name, std::to_string(*t.scores[1])});
          ++summary.similarity_records;
        }
        if (t.scores[2]) {
          agency += io::csv_row({pair.pair_id, name, b.id, "B", std::to_string(*t.scores[2])});
          ++summary.agency_records;
        }
      }
  std::vector<std::string> header{"pair_id"};
  header.insert(header.end(), annotator_names_.begin(), annotator_names_.end());
  std::string ratings = io::csv_row(header);
  for (std::size_t p = 0; p < pairs_.size(); ++p) {
    std::vector<std::string> row{pairs_[p].pair_id};
    for (const auto& v : matrix[p]) row.push_back(v ? std::to_string(*v) : "");
    ratings += io::csv_row(row);
  }
  io::write_file_atomic(dir / "similarity.csv", similarity);
  io::write_file_atomic(dir / "agency.csv", agency);
  io::write_file_atomic(dir / "ratings.csv", ratings);
  return summary;
}

const std::vector<std::string>& AnnotationService::assigned(const std::string& annotator) const {
  std::lock_guard lock(mutex_);
  auto it = annotators_.find(annotator);
  if (it == annotators_.end()) throw Error("annotation: unknown annotator '" + annotator + "'");
  return it->second.pair_ids;
}

std::map<std::string, std::size_t> AnnotationService::loads() const {
  std::lock_guard lock(mutex_);
  std::map<std::string, std::size_t> out;
  for (const auto& [name, st] : annotators_) out[name] = st.tasks.size();
  return out;
}

// ---------------------------------------------------------------------------

struct AnnotationServer::Impl {
  AnnotationService& service;
  std::filesystem::path export_dir;
  httplib::Server server;
  std::thread thread;

  Impl(AnnotationService& s, std::filesystem::path dir) : service(s), export_dir(std::move(dir)) {
    auto send = [](httplib::Response& res, const Reply& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    auto parse = [](const httplib::Request& req) -> std::optional<json> {
      try {
        return json::parse(req.body);
      } catch (const json::parse_error&) {
        return std::nullopt;
      }
    };
    server.Get("/api/next", [this, send](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("annotator")) return send(res, error_reply(400, "missing annotator parameter"));
      const bool practice = req.has_param("practice") && req.get_param_value("practice") == "1";
      send(res, service.next(req.get_param_value("annotator"), practice));
    });
    server.Post("/api/annotation", [this, send, parse](const httplib::Request& req, httplib::Response& res) {
      auto body = parse(req);
      if (!body) return send(res, error_reply(400, "request body is not valid JSON"));
      send(res, service.submit(*body));
    });
    server.Post("/api/rerate", [this, send, parse](const httplib::Request& req, httplib::Response& res) {
      auto body = parse(req);
      if (!body) return send(res, error_reply(400, "request body is not valid JSON"));
      send(res, service.rerate(*body));
    });
    server.Get("/api/progress", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, service.progress());
    });
    server.Post("/api/export", [this, send](const httplib::Request&, httplib::Response& res) {
      try {
        const auto summary = service.export_to(export_dir);
        send(res, {200,
                   {{"status", "ok"},
                    {"similarity_records", summary.similarity_records},
                    {"agency_records", summary.agency_records},
                    {"directory", summary.directory.string()}}});
      } catch (const std::exception& e) {
        send(res, error_reply(500, e.what()));
      }
    });
  }
};

AnnotationServer::AnnotationServer(AnnotationService& service, std::filesystem::path export_dir)
    : impl_(std::make_unique<Impl>(service, std::move(export_dir))) {}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0)
    bound = impl_->server.bind_to_any_port(host);
  else if (!impl_->server.bind_to_port(host, port))
    bound = -1;
  if (bound < 0) throw Error("annotation: cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void AnnotationServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error("annotation: cannot serve on " + host + ":" + std::to_string(port));
}

void AnnotationServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace moralmatch::annotation

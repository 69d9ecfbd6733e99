// Copyright (c) 2026 The utispeech Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "uts/mushra_http.hpp"

#include <fstream>
#include <iterator>

#include <httplib.h>

#include "uts/error.hpp"

namespace uts::mushra {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  send_json(res, status, {{"error", kind}, {"message", message}});
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("request body is not valid JSON: ") + e.what());
  }
}

int parse_index(const std::string& text) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw NotFoundError("bad trial index " + text);
}

// Maps library errors onto HTTP status codes.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ValidationError& e) {
      send_error(res, 400, "validation", e.what());
    } catch (const ManifestError& e) {
      send_error(res, 400, "manifest", e.what());
    } catch (const NotFoundError& e) {
      send_error(res, 404, "not_found", e.what());
    } catch (const EmptyReportError& e) {
      send_error(res, 404, "empty_report", e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, "conflict", e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "validation", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

}  // namespace

struct HttpServer::Impl {
  explicit Impl(Service& s) : service(s) {}
  Service& service;
  httplib::Server server;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  Service& svc = impl_->service;

  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Post("/experiments", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             const Manifest manifest = Manifest::from_json(body, svc.data_dir());
             const Experiment e = svc.create_experiment(manifest);
             send_json(res, 201, {{"id", e.id},
                                  {"trials", e.manifest.utterances.size()},
                                  {"conditions", e.manifest.conditions.size()}});
           }));

  srv.Post(R"(/experiments/([^/]+)/sessions)",
           guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             std::optional<std::uint64_t> seed;
             if (body.contains("seed")) {
               if (!body["seed"].is_number_unsigned()) throw ValidationError("seed must be a non-negative integer");
               seed = body["seed"].get<std::uint64_t>();
             }
             const json listener = body.value("listener", json::object());
             const std::string id = svc.create_session(req.matches[1], listener, seed);
             send_json(res, 201, {{"session_id", id},
                                  {"experiment_id", std::string(req.matches[1])},
                                  {"trials", svc.experiment(req.matches[1]).manifest.utterances.size()}});
           }));

  srv.Get(R"(/sessions/([^/]+)/trials/next)",
          guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            const NextTrial next = svc.next_trial(req.matches[1]);
            if (next.completed) {
              send_json(res, 200, {{"status", "completed"}});
            } else {
              send_json(res, 200, {{"status", "in_progress"}, {"trial", next.trial->to_json()}});
            }
          }));

  srv.Post(R"(/sessions/([^/]+)/trials/([^/]+)/ratings)",
           guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             if (!body.contains("scores") || !body["scores"].is_object()) {
               throw ValidationError("body must contain a 'scores' object");
             }
             std::map<std::string, double> scores;
             for (const auto& [label, v] : body["scores"].items()) {
               if (!v.is_number()) throw ValidationError("score for " + label + " is not a number");
               scores[label] = v.get<double>();
             }
             const SubmitResult r = svc.submit_ratings(req.matches[1], parse_index(req.matches[2]), scores);
             send_json(res, 200, {{"session_id", r.record.session_id},
                                  {"trial", r.record.trial},
                                  {"stored", true},
                                  {"duplicate", r.duplicate},
                                  {"session_completed", r.session_completed},
                                  {"timestamp", r.record.timestamp}});
           }));

  srv.Get(R"(/sessions/([^/]+)/ratings)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            json out = json::array();
            for (const auto& r : svc.ratings(req.matches[1])) {
              out.push_back({{"trial", r.trial}, {"scores", r.scores_by_label}, {"timestamp", r.timestamp}});
            }
            send_json(res, 200, out);
          }));

  srv.Get(R"(/experiments/([^/]+)/report)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, evaluation::to_json(svc.report(req.matches[1])));
          }));

  srv.Get(R"(/audio/([^/]+)/([^/]+)/([^/]+))",
          guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            const auto path = svc.audio_path(req.matches[1], parse_index(req.matches[2]), req.matches[3]);
            std::ifstream in(path, std::ios::binary);
            if (!in) throw NotFoundError("stimulus file unavailable");
            std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            res.set_content(std::move(data), "audio/wav");
          }));
}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int HttpServer::bind_to_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool HttpServer::listen_after_bind() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace uts::mushra

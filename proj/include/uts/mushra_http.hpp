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

#pragma once

#include <memory>
#include <string>

#include "uts/mushra.hpp"

namespace uts::mushra {

// HTTP+JSON front end for a Service.
//   POST /experiments                         manifest -> {id, trials, conditions}
//   POST /experiments/{id}/sessions           {listener?, seed?} -> {session_id, trials}
//   GET  /sessions/{id}/trials/next           -> {status, trial?}
//   POST /sessions/{id}/trials/{n}/ratings    {scores: {label: int}} -> acknowledgement
//   GET  /sessions/{id}/ratings               -> stored records
//   GET  /experiments/{id}/report             -> per-speaker and overall statistics
//   GET  /audio/{session}/{n}/{label}         -> WAV ("reference" for the reference)
// Errors are {"error": kind, "message": text} with 400/404/409 status.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Blocks until stop().
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port and returns it; then call listen_after_bind().
  int bind_to_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace uts::mushra

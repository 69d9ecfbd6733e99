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

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace uts::cli {

// Plain `key: value` lines; '#' starts a comment.
std::map<std::string, std::string> read_config(const std::filesystem::path& path);

// Config key -> long flag: "lr" -> "--lr", "vocoder.cmd" -> "--vocoder-cmd",
// "vocoder.backend" -> "--vocoder".
std::string config_key_to_flag(const std::string& key);

// Full command line (without the program name). Returns the exit status:
// 0 success, 1 runtime failure, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace uts::cli

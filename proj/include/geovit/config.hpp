// Copyright 2026 The geovit Authors. All Rights Reserved.
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

// Flat `key = value` configuration text. Blank lines and lines starting with
// '#' are ignored. Every key must be consumed by a getter; leftovers are
// reported by check_all_used() so typos do not pass silently.

#include <Eigen/Core>

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "geovit/error.hpp"

namespace geovit {

class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(const std::string& text, const std::string& origin = "config") {
    KeyValueConfig c;
    c.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ParamError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      const auto key = trim(line.substr(0, eq));
      if (key.empty()) throw ParamError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (c.values_.count(key)) throw ParamError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      c.values_[key] = trim(line.substr(eq + 1));
    }
    return c;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  std::string require_string(const std::string& key) const {
    if (!has(key)) throw ParamError(origin_ + ": missing required key '" + key + "'");
    return get_string(key, "");
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return used_.insert(key), fallback;
    const auto v = get_string(key, "");
    try {
      std::size_t n = 0;
      const double d = std::stod(v, &n);
      if (n != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ParamError(origin_ + ": key '" + key + "' expects a number, got '" + v + "'");
    }
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    if (!has(key)) return used_.insert(key), fallback;
    const auto v = get_string(key, "");
    try {
      std::size_t n = 0;
      const auto i = std::stoll(v, &n);
      if (n != v.size()) throw std::invalid_argument(v);
      return i;
    } catch (const std::exception&) {
      throw ParamError(origin_ + ": key '" + key + "' expects an integer, got '" + v + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return used_.insert(key), fallback;
    const auto v = get_string(key, "");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ParamError(origin_ + ": key '" + key + "' expects true/false, got '" + v + "'");
  }

  /// Whitespace- or comma-separated numbers.
  std::vector<double> get_numbers(const std::string& key) const {
    auto v = require_string(key);
    for (auto& ch : v)
      if (ch == ',') ch = ' ';
    std::istringstream in(v);
    std::vector<double> out;
    std::string tok;
    while (in >> tok) {
      try {
        std::size_t n = 0;
        out.push_back(std::stod(tok, &n));
        if (n != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParamError(origin_ + ": key '" + key + "' has a non-numeric entry '" + tok + "'");
      }
    }
    return out;
  }

  void check_all_used() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ParamError(origin_ + ": unknown key '" + k + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::string origin_ = "config";
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

/// Applies GEOVIT_THREADS (if set) as the worker-thread cap; returns the cap in effect.
inline int configure_threads() {
  if (const char* env = std::getenv("GEOVIT_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1) throw ParamError("GEOVIT_THREADS must be a positive integer");
    Eigen::setNbThreads(static_cast<int>(n));
  }
  return Eigen::nbThreads();
}

}  // namespace geovit

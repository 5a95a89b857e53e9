#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "t2d/core/sha256.hpp"

namespace t2d {

inline constexpr const char* kPipelineVersion = "0.1.0";

// Merged run configuration. nlohmann objects keep keys sorted, so dump() is
// canonical and the content hash is stable under key reordering.
class RunConfig {
 public:
  RunConfig() : j_(nlohmann::json::object()) {}
  explicit RunConfig(nlohmann::json j) : j_(std::move(j)) {
    if (!j_.is_object()) throw std::invalid_argument("config must be a JSON object");
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file: " + path);
    nlohmann::json j;
    is >> j;
    return RunConfig(std::move(j));
  }

  nlohmann::json& json() { return j_; }
  const nlohmann::json& json() const { return j_; }

  // Later values win; nested objects merge recursively.
  void merge(const nlohmann::json& overrides) { merge_into(j_, overrides); }

  template <class T>
  T get(const std::string& dotted_key, T fallback) const {
    const nlohmann::json* cur = &j_;
    size_t pos = 0;
    while (true) {
      const size_t dot = dotted_key.find('.', pos);
      const std::string part = dotted_key.substr(pos, dot - pos);
      auto it = cur->find(part);
      if (it == cur->end()) return fallback;
      cur = &*it;
      if (dot == std::string::npos) break;
      pos = dot + 1;
    }
    try {
      return cur->get<T>();
    } catch (const nlohmann::json::exception&) {
      return fallback;
    }
  }

  void set(const std::string& dotted_key, nlohmann::json v) {
    nlohmann::json* cur = &j_;
    size_t pos = 0;
    while (true) {
      const size_t dot = dotted_key.find('.', pos);
      const std::string part = dotted_key.substr(pos, dot - pos);
      if (dot == std::string::npos) {
        (*cur)[part] = std::move(v);
        return;
      }
      if (!cur->contains(part) || !(*cur)[part].is_object())
        (*cur)[part] = nlohmann::json::object();
      cur = &(*cur)[part];
      pos = dot + 1;
    }
  }

  std::string content_hash() const { return Sha256::hex_of(j_.dump()); }

 private:
  static void merge_into(nlohmann::json& base, const nlohmann::json& patch) {
    if (!patch.is_object()) {
      base = patch;
      return;
    }
    if (!base.is_object()) base = nlohmann::json::object();
    for (auto it = patch.begin(); it != patch.end(); ++it) {
      if (it->is_object() && base.contains(it.key()))
        merge_into(base[it.key()], *it);
      else
        base[it.key()] = *it;
    }
  }

  nlohmann::json j_;
};

}  // namespace t2d

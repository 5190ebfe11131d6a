#pragma once

#include <set>
#include <string>

#include "cardiseg/error.hpp"
#include "json.hpp"

namespace cardiseg::detail {

using nlohmann::json;

/// Reads fields of one JSON object, keeping the document's defaults for
/// absent keys and rejecting keys nobody asked for. Errors carry the JSON
/// pointer of the offending value.
class ObjectReader {
 public:
  ObjectReader(const json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw ConfigError("expected a JSON object", path_.empty() ? "/" : path_);
  }

  template <typename V>
  void read(const std::string& key, V& out) {
    known_.insert(key);
    auto it = object_.find(key);
    if (it == object_.end() || it->is_null()) return;
    try {
      out = it->template get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("wrong type (") + it->type_name() + ")", path_of(key));
    }
  }

  /// Marks `key` as known and returns the child value, or nullptr when absent.
  const json* child(const std::string& key) {
    known_.insert(key);
    auto it = object_.find(key);
    return it == object_.end() || it->is_null() ? nullptr : &*it;
  }

  std::string path_of(const std::string& key) const { return path_ + "/" + key; }

  void finish() const {
    for (auto it = object_.begin(); it != object_.end(); ++it) {
      if (!known_.count(it.key())) throw ConfigError("unknown field", path_of(it.key()));
    }
  }

 private:
  const json& object_;
  std::string path_;
  std::set<std::string> known_;
};

}  // namespace cardiseg::detail

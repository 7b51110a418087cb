#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "kcl/common.hpp"

namespace kcl {

/// Raised when a configuration fails validation; carries every problem found.
class ConfigError : public InvalidInput {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : InvalidInput(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& problems) {
    std::string out = "invalid configuration:";
    for (const auto& p : problems) out += "\n  - " + p;
    return out;
  }
  std::vector<std::string> problems_;
};

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

/// Flat dotted-key view of a configuration file.
class ConfigTree {
 public:
  using Map = std::map<std::string, std::string>;

  ConfigTree() = default;
  explicit ConfigTree(Map values) : values_(std::move(values)) {}

  /// `key = value` lines; `#` starts a comment; blank lines ignored.
  static ConfigTree parse_key_values(const std::string& text) {
    ConfigTree tree;
    std::vector<std::string> problems;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
      ++number;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string body = trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos) {
        problems.push_back("line " + std::to_string(number) + ": expected 'key = value'");
        continue;
      }
      const std::string key = trim(std::string_view(body).substr(0, eq));
      const std::string value = trim(std::string_view(body).substr(eq + 1));
      if (key.empty()) {
        problems.push_back("line " + std::to_string(number) + ": empty key");
      } else if (!tree.values_.emplace(key, value).second) {
        problems.push_back("line " + std::to_string(number) + ": duplicate key '" + key + "'");
      }
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return tree;
  }

  /// Nested objects become dotted keys; arrays of scalars become comma lists.
  static ConfigTree parse_json(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError({std::string("malformed JSON: ") + e.what()});
    }
    if (!j.is_object()) throw ConfigError({"JSON configuration must be an object"});
    ConfigTree tree;
    std::vector<std::string> problems;
    flatten(j, "", tree.values_, problems);
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return tree;
  }

  static ConfigTree parse(const std::string& text) {
    const std::string body = trim(text);
    return !body.empty() && body.front() == '{' ? parse_json(text) : parse_key_values(text);
  }

  static ConfigTree load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open configuration '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  const Map& values() const { return values_; }
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  /// Sorted `key=value` lines; the input of the configuration hash.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) {
      std::string flat;
      std::size_t start = 0;
      for (std::size_t comma; (comma = v.find(',', start)) != std::string::npos; start = comma + 1) {
        flat += trim(std::string_view(v).substr(start, comma - start)) + ",";
      }
      out += k + "=" + flat + trim(std::string_view(v).substr(start)) + "\n";
    }
    return out;
  }

  std::string hash() const { return hex64(fnv1a(canonical())); }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number()) {
      std::ostringstream os;
      os.precision(17);
      os << v.get<double>();
      return os.str();
    }
    return {};
  }

  static void flatten(const nlohmann::json& j, const std::string& prefix, Map& out,
                      std::vector<std::string>& problems) {
    for (const auto& [key, value] : j.items()) {
      const std::string path = prefix.empty() ? key : prefix + "." + key;
      if (value.is_object()) {
        flatten(value, path, out, problems);
      } else if (value.is_array()) {
        std::string joined;
        for (std::size_t i = 0; i < value.size(); ++i) {
          if (value[i].is_structured() || value[i].is_null()) {
            problems.push_back("'" + path + "': arrays may only hold scalars");
            break;
          }
          joined += (i ? "," : "") + scalar(value[i]);
        }
        out[path] = joined;
      } else if (value.is_null()) {
        problems.push_back("'" + path + "': null is not a value");
      } else {
        out[path] = scalar(value);
      }
    }
  }

  Map values_;
};

/// Typed access that records problems instead of throwing, and tracks which
/// keys were consumed so leftovers can be reported as unknown.
class ConfigReader {
 public:
  explicit ConfigReader(const ConfigTree& tree) : tree_(tree) {}

  bool has(const std::string& key) const { return tree_.contains(key); }

  std::string text(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    const auto it = tree_.values().find(key);
    return it == tree_.values().end() ? fallback : it->second;
  }

  std::string required_text(const std::string& key) {
    used_.insert(key);
    const auto it = tree_.values().find(key);
    if (it == tree_.values().end() || it->second.empty()) {
      problems_.push_back("missing required key '" + key + "'");
      return {};
    }
    return it->second;
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    return parse_double(key, text(key, {}), fallback);
  }

  long long integer(const std::string& key, long long fallback) {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    return parse_integer(key, text(key, {}), fallback);
  }

  long long required_integer(const std::string& key) {
    const std::string v = required_text(key);
    return v.empty() ? 0 : parse_integer(key, v, 0);
  }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    const std::string v = text(key, {});
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    problems_.push_back("'" + key + "': expected a boolean, got '" + v + "'");
    return fallback;
  }

  std::vector<std::string> list(const std::string& key, const std::vector<std::string>& fallback) {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    std::vector<std::string> out;
    std::istringstream in(text(key, {}));
    std::string item;
    while (std::getline(in, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    std::vector<double> out;
    for (const auto& item : list(key, {})) out.push_back(parse_double(key, item, 0.0));
    return out;
  }

  Vector vector(const std::string& key, const Vector& fallback, Eigen::Index expected = -1) {
    const bool present = has(key);
    const auto values = numbers(key, {});
    if (!present) return fallback;
    Vector v = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    if (expected >= 0 && v.size() != expected) {
      problems_.push_back("'" + key + "': expected " + std::to_string(expected) + " values, got " +
                          std::to_string(v.size()));
      return fallback.size() == expected ? fallback : Vector::Zero(expected);
    }
    return v;
  }

  void problem(std::string message) { problems_.push_back(std::move(message)); }

  /// Every key that no accessor asked for.
  std::vector<std::string> unknown_keys(const std::vector<std::string>& open_prefixes = {}) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : tree_.values()) {
      if (used_.count(k)) continue;
      const bool open = std::any_of(open_prefixes.begin(), open_prefixes.end(),
                                    [&](const std::string& p) { return k.rfind(p, 0) == 0; });
      if (!open) out.push_back(k);
    }
    return out;
  }

  std::vector<std::string>& problems() { return problems_; }

 private:
  double parse_double(const std::string& key, const std::string& v, double fallback) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos == v.size()) return d;
    } catch (const std::exception&) {
    }
    problems_.push_back("'" + key + "': expected a number, got '" + v + "'");
    return fallback;
  }

  long long parse_integer(const std::string& key, const std::string& v, long long fallback) {
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec == std::errc{} && ptr == v.data() + v.size()) return out;
    problems_.push_back("'" + key + "': expected an integer, got '" + v + "'");
    return fallback;
  }

  const ConfigTree& tree_;
  std::set<std::string> used_;
  std::vector<std::string> problems_;
};

}  // namespace kcl

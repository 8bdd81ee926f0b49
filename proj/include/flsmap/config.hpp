#pragma once

#include <map>
#include <string>
#include <vector>

namespace flsmap {

/// Plain-text key/value configuration with [section] headers. Keys are
/// addressed as "section.key". '#' and ';' start comments.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::string& path);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& def = "") const;
  double get_double(const std::string& key, double def) const;
  int get_int(const std::string& key, int def) const;
  long long get_int64(const std::string& key, long long def) const;
  bool get_bool(const std::string& key, bool def) const;
  /// Whitespace-separated doubles, e.g. "0.5 1 2.5".
  std::vector<double> get_doubles(const std::string& key) const;

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  void set_double(const std::string& key, double value);
  void set_int(const std::string& key, long long value);

  /// Canonical text form (sections sorted); embeddable in checkpoints.
  std::string to_text() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace flsmap

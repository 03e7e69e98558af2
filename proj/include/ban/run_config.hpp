#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ban/evaluation.hpp"

namespace ban {

// Flat key=value configuration. Every key has a default; unknown keys are
// rejected. Precedence is applied by the caller: defaults, then a file, then
// command-line overrides, each via set().
class RunConfig {
 public:
  RunConfig();

  void set(const std::string& key, const std::string& value);
  void merge_file(const std::filesystem::path& path);
  void merge_text(const std::string& text, const std::string& origin = "config");

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // All keys in canonical order, one "key=value" per line.
  std::string dump() const;
  static const std::vector<std::string>& keys();

  std::uint64_t seed() const { return get_u64("seed"); }
  std::vector<std::string> class_names() const;
  ModelConfig model() const;
  SgdConfig sgd() const;
  ProposalConfig proposals() const;
  DetectorConfig detector() const;
  SyntheticSpec train_spec() const;
  SyntheticSpec test_spec() const;

  // Typed views are checked eagerly so bad values fail before any work.
  void validate() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ban

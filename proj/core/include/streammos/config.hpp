#pragma once

// key=value configuration files with command-line overrides.
//
//   # comment
//   sequence.points = 130000
//   voting.voxel_size = 0.5
//
// Vectors are written as comma-separated numbers: `sequence.crop_min = -50,-50,-4`.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "streammos/evalkit.hpp"

namespace streammos {

class ConfigFile {
 public:
  static ConfigFile parse(std::istream& in, const std::string& origin = "<input>");
  static ConfigFile load(const std::filesystem::path& path);

  /// Sets or replaces a value; `assignment` is `key=value`.
  void set(const std::string& key, const std::string& value);
  void override_with(const std::string& assignment);
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Every key understood by apply_config.
std::vector<std::string> config_keys();

/// Applies the file on top of `base`; unknown keys and malformed values throw.
/// Relative paths (sequence.remap) resolve against `base_dir`.
RuntimeConfig apply_config(const ConfigFile& file, RuntimeConfig base = {},
                           const std::filesystem::path& base_dir = {});

/// The configuration in the same key=value syntax.
std::string describe(const RuntimeConfig& cfg);

}  // namespace streammos

#include "streammos/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace streammos {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw Error("config: '" + key + "' = '" + value + "' is not " + expected);
}

double to_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "a number");
  }
  if (used != value.size() || !std::isfinite(v)) bad_value(key, value, "a finite number");
  return v;
}

long long to_int(const std::string& key, const std::string& value, long long min) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value, "an integer");
  if (v < min) bad_value(key, value, ("an integer >= " + std::to_string(min)).c_str());
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "a boolean");
}

Eigen::Vector3d to_vec3(const std::string& key, const std::string& value) {
  std::stringstream ss(value);
  std::string part;
  std::vector<double> xs;
  while (std::getline(ss, part, ',')) xs.push_back(to_double(key, trim(part)));
  if (xs.size() != 3) bad_value(key, value, "three comma-separated numbers");
  return {xs[0], xs[1], xs[2]};
}

std::string vec3_text(const Eigen::Vector3d& v) {
  std::ostringstream os;
  os << v.x() << "," << v.y() << "," << v.z();
  return os.str();
}

constexpr double kDeg = 3.14159265358979323846 / 180.0;

using Setter = std::function<void(RuntimeConfig&, const std::string&, const std::string&, const fs::path&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"sequence.crop_min", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.sequence.crop.min = to_vec3(k, v);
       }},
      {"sequence.crop_max", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.sequence.crop.max = to_vec3(k, v);
       }},
      {"sequence.crop", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.crop = to_bool(k, v);
       }},
      {"sequence.points", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.sequence.target_points = static_cast<std::size_t>(to_int(k, v, 1));
       }},
      {"sequence.history", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.sequence.history_frames = static_cast<std::size_t>(to_int(k, v, 0));
       }},
      {"sequence.use_intensity", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.sequence.use_intensity = to_bool(k, v);
       }},
      {"sequence.remap", [](RuntimeConfig& c, const std::string&, const std::string& v, const fs::path& dir) {
         if (v == "semantic-kitti-mos") {
           c.sequence.remap = LabelRemap::semantic_kitti_mos();
         } else {
           const fs::path p(v);
           c.sequence.remap = LabelRemap::load(p.is_relative() && !dir.empty() ? dir / p : p);
         }
       }},
      {"model.channels", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.model.channels = static_cast<int>(to_int(k, v, 1));
       }},
      {"model.bev_width", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.model.bev.width = static_cast<int>(to_int(k, v, 1));
       }},
      {"model.bev_height", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.model.bev.height = static_cast<int>(to_int(k, v, 1));
       }},
      {"model.range_width", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.model.range.width = static_cast<int>(to_int(k, v, 1));
       }},
      {"model.range_height", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.model.range.height = static_cast<int>(to_int(k, v, 1));
       }},
      {"model.fov_up_deg", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.model.range.fov_up = to_double(k, v) * kDeg;
       }},
      {"model.fov_down_deg", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.model.range.fov_down = to_double(k, v) * kDeg;
       }},
      {"model.acb_short", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.model.acb_short = static_cast<int>(to_int(k, v, 1));
       }},
      {"model.acb_long", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.model.acb_long = static_cast<int>(to_int(k, v, 1));
       }},
      {"model.heads", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.model.attention_heads = static_cast<int>(to_int(k, v, 1));
       }},
      {"model.points", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.model.attention_points = static_cast<int>(to_int(k, v, 1));
       }},
      {"model.decoder_hidden", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.model.decoder_hidden = static_cast<int>(to_int(k, v, 1));
       }},
      {"model.shrink_range", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.model.shrink_range_per_block = to_bool(k, v);
       }},
      {"voting.enabled", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.voting.enabled = to_bool(k, v);
       }},
      {"voting.instances", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.voting.instance_stage = to_bool(k, v);
       }},
      {"voting.voxel_size", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.voting.voxel.size = to_double(k, v);
       }},
      {"voting.memory", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.voting.memory_frames = static_cast<std::size_t>(to_int(k, v, 1));
       }},
      {"voting.dbscan_eps", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.voting.dbscan.eps = to_double(k, v);
       }},
      {"voting.dbscan_min_pts", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.voting.dbscan.min_pts = static_cast<std::size_t>(to_int(k, v, 1));
       }},
      {"runtime.seed", [](RuntimeConfig& c, const std::string& k, const std::string& v, const fs::path&) {
         c.seed = static_cast<std::uint64_t>(to_int(k, v, 0));
       }},
  };
  return table;
}

}  // namespace

ConfigFile ConfigFile::parse(std::istream& in, const std::string& origin) {
  ConfigFile cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(origin + ":" + std::to_string(lineno) + ": empty key");
    cfg.set(key, trim(line.substr(eq + 1)));
  }
  return cfg;
}

ConfigFile ConfigFile::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path.string());
  return parse(in, path.string());
}

void ConfigFile::set(const std::string& key, const std::string& value) { values_[key] = value; }

void ConfigFile::override_with(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error("config override '" + assignment + "' must be key=value");
  const std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw Error("config override '" + assignment + "' has an empty key");
  set(key, trim(assignment.substr(eq + 1)));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

RuntimeConfig apply_config(const ConfigFile& file, RuntimeConfig base, const fs::path& base_dir) {
  const auto& table = setters();
  for (const auto& [key, value] : file.values()) {
    const auto it = table.find(key);
    if (it == table.end()) throw Error("config: unknown key '" + key + "'");
    it->second(base, key, value, base_dir);
  }
  base.finalize();
  return base;
}

std::string describe(const RuntimeConfig& cfg) {
  std::ostringstream os;
  os << "sequence.crop = " << (cfg.crop ? "true" : "false") << "\n";
  os << "sequence.crop_min = " << vec3_text(cfg.sequence.crop.min) << "\n";
  os << "sequence.crop_max = " << vec3_text(cfg.sequence.crop.max) << "\n";
  os << "sequence.points = " << cfg.sequence.target_points << "\n";
  os << "sequence.history = " << cfg.sequence.history_frames << "\n";
  os << "sequence.use_intensity = " << (cfg.sequence.use_intensity ? "true" : "false") << "\n";
  os << "# sequence.remap: " << cfg.sequence.remap.size() << " ids\n";
  os << "model.channels = " << cfg.model.channels << "\n";
  os << "model.bev_width = " << cfg.model.bev.width << "\n";
  os << "model.bev_height = " << cfg.model.bev.height << "\n";
  os << "model.range_width = " << cfg.model.range.width << "\n";
  os << "model.range_height = " << cfg.model.range.height << "\n";
  os << "model.fov_up_deg = " << cfg.model.range.fov_up / kDeg << "\n";
  os << "model.fov_down_deg = " << cfg.model.range.fov_down / kDeg << "\n";
  os << "model.acb_short = " << cfg.model.acb_short << "\n";
  os << "model.acb_long = " << cfg.model.acb_long << "\n";
  os << "model.heads = " << cfg.model.attention_heads << "\n";
  os << "model.points = " << cfg.model.attention_points << "\n";
  os << "model.decoder_hidden = " << cfg.model.decoder_hidden << "\n";
  os << "model.shrink_range = " << (cfg.model.shrink_range_per_block ? "true" : "false") << "\n";
  os << "voting.enabled = " << (cfg.voting.enabled ? "true" : "false") << "\n";
  os << "voting.instances = " << (cfg.voting.instance_stage ? "true" : "false") << "\n";
  os << "voting.voxel_size = " << cfg.voting.voxel.size << "\n";
  os << "voting.memory = " << cfg.voting.memory_frames << "\n";
  os << "voting.dbscan_eps = " << cfg.voting.dbscan.eps << "\n";
  os << "voting.dbscan_min_pts = " << cfg.voting.dbscan.min_pts << "\n";
  os << "runtime.seed = " << cfg.seed << "\n";
  return os.str();
}

}  // namespace streammos

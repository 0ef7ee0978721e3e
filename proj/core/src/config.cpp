#include "hetpure/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hetpure {

namespace {
std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}
}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

Config Config::from_string(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": empty key");
    cfg.kv_[key] = value;
  }
  return cfg;
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

std::string Config::require(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw std::runtime_error("missing config key: " + key);
  return it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stod(it->second);
}

int Config::get_int(const std::string& key, int fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stoi(it->second);
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stoull(it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::runtime_error("config key " + key + ": bad boolean '" + v + "'");
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  auto it = kv_.find(key);
  if (it == kv_.end()) return out;
  std::stringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stod(tok));
  return out;
}

}  // namespace hetpure

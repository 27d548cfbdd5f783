#include "calphys/config.hpp"

#include <fstream>
#include <sstream>

#include "calphys/types.hpp"

namespace calphys {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw Error("config line " + std::to_string(lineno) + ": empty key");
    cfg.values_[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::optional<std::string> KeyValueConfig::lookup(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  used_.insert(key);
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return lookup(key).value_or(fallback);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto v = lookup(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const double d = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument(key);
    return d;
  } catch (const std::logic_error&) {
    throw Error("config key '" + key + "' is not a number: " + *v);
  }
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  const auto v = lookup(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const long long d = std::stoll(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument(key);
    return d;
  } catch (const std::logic_error&) {
    throw Error("config key '" + key + "' is not an integer: " + *v);
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto v = lookup(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw Error("config key '" + key + "' is not a boolean: " + *v);
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  const auto v = lookup(key);
  if (!v) return fallback;
  std::vector<double> out;
  std::istringstream is(*v);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::logic_error&) {
      throw Error("config key '" + key + "' has a non-numeric entry: " + item);
    }
  }
  return out;
}

std::vector<std::string> KeyValueConfig::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (used_.count(k) == 0) out.push_back(k);
  }
  return out;
}

}  // namespace calphys

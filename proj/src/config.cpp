// SPDX-License-Identifier: Apache-2.0
#include "dld/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dld/errors.hpp"

namespace dld {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

KvConfig KvConfig::parse(const std::string& text, const std::string& origin) {
    KvConfig config;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ContractError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" +
                                line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ContractError(origin + ":" + std::to_string(lineno) + ": empty key");
        config.values_[key] = value;
    }
    return config;
}

KvConfig KvConfig::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path.string());
    std::ostringstream buffer;
    buffer << is.rdbuf();
    return parse(buffer.str(), path.string());
}

void KvConfig::set_int(const std::string& key, std::int64_t value) {
    values_[key] = std::to_string(value);
}

void KvConfig::set_uint(const std::string& key, std::uint64_t value) {
    values_[key] = std::to_string(value);
}

void KvConfig::set_double(const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    values_[key] = buf;
}

std::optional<std::string> KvConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string KvConfig::get_string(const std::string& key) const {
    auto v = get(key);
    if (!v) throw ContractError("config: missing key '" + key + "'");
    return *v;
}

std::int64_t KvConfig::get_int(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        std::size_t pos = 0;
        const std::int64_t out = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ContractError("config: key '" + key + "' is not an integer: '" + v + "'");
    }
}

std::uint64_t KvConfig::get_uint(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        std::size_t pos = 0;
        const std::uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ContractError("config: key '" + key + "' is not an unsigned integer: '" + v + "'");
    }
}

double KvConfig::get_double(const std::string& key) const {
    const std::string v = get_string(key);
    try {
        std::size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ContractError("config: key '" + key + "' is not a number: '" + v + "'");
    }
}

void KvConfig::merge(const KvConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string KvConfig::dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
    return os.str();
}

}  // namespace dld

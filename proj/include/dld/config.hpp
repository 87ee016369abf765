// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value experiment configs. '#' starts a comment; whitespace around
// keys and values is trimmed. A dump() of a resolved config reloads to the
// identical experiment.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace dld {

class KvConfig {
public:
    static KvConfig parse(const std::string& text, const std::string& origin = "<string>");
    static KvConfig load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    void set_int(const std::string& key, std::int64_t value);
    void set_uint(const std::string& key, std::uint64_t value);
    void set_double(const std::string& key, double value);  // round-trip precision

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::optional<std::string> get(const std::string& key) const;

    std::string get_string(const std::string& key) const;
    std::int64_t get_int(const std::string& key) const;
    std::uint64_t get_uint(const std::string& key) const;
    double get_double(const std::string& key) const;

    // Entries of `other` win.
    void merge(const KvConfig& other);

    // Sorted key=value lines.
    std::string dump() const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace dld

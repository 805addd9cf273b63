#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "dim/error.hpp"

namespace dim {

// Strict reader for one JSON object: every key must be consumed, and each
// value must have the expected type. Errors carry the JSON path
// ("/vq/steps") so callers can point at the offending line.
class FieldReader {
public:
    FieldReader(const nlohmann::json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(where() + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        auto it = obj_.find(key);
        seen_.insert(key);
        if (it == obj_.end()) return;
        try {
            check_kind<T>(*it);
            out = it->template get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(path_ + "/" + key + ": wrong type");
        }
    }

    bool has(const char* key) const { return obj_.contains(key); }
    const nlohmann::json& raw(const char* key) {
        seen_.insert(key);
        return obj_.at(key);
    }
    std::string child(const char* key) const { return path_ + "/" + key; }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError(path_ + "/" + it.key() + ": unknown key");
        }
    }

private:
    std::string where() const { return path_.empty() ? "/" : path_; }

    template <class T>
    static void check_kind(const nlohmann::json& v) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw nlohmann::json::type_error::create(302, "bool", nullptr);
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw nlohmann::json::type_error::create(302, "int", nullptr);
            if constexpr (std::is_unsigned_v<T>) {
                if (v.is_number_integer() && !v.is_number_unsigned() && v.template get<long long>() < 0) {
                    throw nlohmann::json::type_error::create(302, "unsigned", nullptr);
                }
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw nlohmann::json::type_error::create(302, "number", nullptr);
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw nlohmann::json::type_error::create(302, "string", nullptr);
        }
    }

    const nlohmann::json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace dim

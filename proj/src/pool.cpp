#include "fedsparse/pool.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fedsparse/io.hpp"
#include "fedsparse/util.hpp"

namespace fedsparse::pool {

namespace fs = std::filesystem;

PublishDecision handle_publish(PoolStore& store, const fed::PoolEntry& entry) {
    PublishDecision d;
    if (entry.user_id.empty() || entry.user_id.find('/') != std::string::npos) {
        d.reason = "bad user id";
        return d;
    }
    if (entry.feature_index < 0) {
        d.reason = "bad feature index";
        return d;
    }
    try {
        nn::validate_weights(entry.weights);
    } catch (const std::exception& e) {
        d.reason = e.what();
        return d;
    }

    std::lock_guard<std::mutex> lock(store.mu);
    if (store.has_shape && !nn::same_shape(store.shape_ref, entry.weights)) {
        d.reason = "incompatible head shape";
        return d;
    }
    auto key = std::make_pair(entry.user_id, entry.feature_index);
    auto it = store.entries.find(key);
    if (it != store.entries.end() && entry.version <= it->second.version) {
        d.reason = "stale version";
        d.current_version = it->second.version;
        return d;
    }
    store.entries[key] = entry;
    if (!store.has_shape) {
        store.shape_ref = entry.weights;
        store.has_shape = true;
    }
    d.accepted = true;
    d.current_version = entry.version;
    return d;
}

std::vector<fed::PoolEntry> handle_fetch(PoolStore& store, const std::string& exclude_user) {
    std::lock_guard<std::mutex> lock(store.mu);
    std::vector<fed::PoolEntry> out;
    out.reserve(store.entries.size());
    for (const auto& [key, entry] : store.entries) {
        if (!exclude_user.empty() && key.first == exclude_user) continue;
        out.push_back(entry);
    }
    return out;  // map order: already sorted by (user_id, feature_index)
}

size_t pool_size(PoolStore& store) {
    std::lock_guard<std::mutex> lock(store.mu);
    return store.entries.size();
}

// ---- wire encoding ----------------------------------------------------------

nlohmann::json entry_to_json(const fed::PoolEntry& entry) {
    std::vector<uint8_t> blob = io::encode_weights(entry.weights);
    return nlohmann::json{
        {"user_id", entry.user_id},
        {"feature_index", entry.feature_index},
        {"version", entry.version},
        {"weights", io::base64_encode(blob)},
    };
}

fed::PoolEntry entry_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("user_id") || !j.contains("feature_index") ||
        !j.contains("version") || !j.contains("weights")) {
        throw std::runtime_error("malformed pool entry");
    }
    fed::PoolEntry entry;
    entry.user_id = j.at("user_id").get<std::string>();
    entry.feature_index = j.at("feature_index").get<int>();
    entry.version = j.at("version").get<uint64_t>();
    std::vector<uint8_t> blob = io::base64_decode(j.at("weights").get<std::string>());
    entry.weights = io::decode_weights(blob);
    entry.published_at_ms = now_ms();
    return entry;
}

// ---- in-memory client -------------------------------------------------------

fed::PublishResult InMemoryPool::publish(const fed::PoolEntry& entry) {
    PublishDecision d = handle_publish(*store_, entry);
    fed::PublishResult r;
    r.ok = d.accepted;
    r.version = d.current_version;
    r.error = d.reason;
    return r;
}

std::vector<fed::PoolEntry> InMemoryPool::fetch(const std::string& exclude_user) {
    return handle_fetch(*store_, exclude_user);
}

// ---- file pool --------------------------------------------------------------

FilePool::FilePool(fs::path directory) : dir_(std::move(directory)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (!fs::is_directory(dir_)) {
        throw std::runtime_error("pool directory unavailable: " + dir_.string());
    }
}

static std::string pool_file_name(const std::string& user_id, int feature_index) {
    return user_id + "_" + std::to_string(feature_index) + ".pool";
}

static std::optional<fed::PoolEntry> read_pool_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return entry_from_json(nlohmann::json::parse(buf.str()));
    } catch (const std::exception&) {
        return std::nullopt;  // torn or foreign file: invisible to fetch
    }
}

fed::PublishResult FilePool::publish(const fed::PoolEntry& entry) {
    fed::PublishResult r;
    if (entry.user_id.empty() || entry.user_id.find('/') != std::string::npos) {
        r.error = "bad user id";
        return r;
    }
    if (entry.feature_index < 0) {
        r.error = "bad feature index";
        return r;
    }
    try {
        nn::validate_weights(entry.weights);
    } catch (const std::exception& e) {
        r.error = e.what();
        return r;
    }

    fs::path final_path = dir_ / pool_file_name(entry.user_id, entry.feature_index);
    if (auto existing = read_pool_file(final_path)) {
        if (entry.version <= existing->version) {
            r.error = "stale version";
            r.version = existing->version;
            return r;
        }
    }

    fs::path tmp_path = final_path;
    tmp_path += ".tmp";
    {
        std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
        if (!out) {
            r.error = "cannot write pool file: " + tmp_path.string();
            return r;
        }
        out << entry_to_json(entry).dump();
        out.flush();
        if (!out) {
            r.error = "short write: " + tmp_path.string();
            return r;
        }
    }
    std::error_code ec;
    fs::rename(tmp_path, final_path, ec);
    if (ec) {
        r.error = "rename failed: " + ec.message();
        return r;
    }
    r.ok = true;
    r.version = entry.version;
    return r;
}

std::vector<fed::PoolEntry> FilePool::fetch(const std::string& exclude_user) {
    std::vector<fed::PoolEntry> out;
    for (const auto& de : fs::directory_iterator(dir_)) {
        if (!de.is_regular_file()) continue;
        if (de.path().extension() != ".pool") continue;
        auto entry = read_pool_file(de.path());
        if (!entry) continue;
        if (!exclude_user.empty() && entry->user_id == exclude_user) continue;
        out.push_back(std::move(*entry));
    }
    std::sort(out.begin(), out.end(), [](const fed::PoolEntry& a, const fed::PoolEntry& b) {
        return std::tie(a.user_id, a.feature_index) < std::tie(b.user_id, b.feature_index);
    });
    return out;
}

// ---- endpoint selection -----------------------------------------------------

std::unique_ptr<fed::PoolClient> open_pool(const std::string& endpoint) {
    if (endpoint.empty()) throw std::invalid_argument("empty pool endpoint");
    if (endpoint == "mem:") {
        return std::make_unique<InMemoryPool>(std::make_shared<PoolStore>());
    }
    if (endpoint.rfind("file:", 0) == 0) {
        return std::make_unique<FilePool>(endpoint.substr(5));
    }
    // host:port if the tail parses as a port and the string names no path
    auto colon = endpoint.rfind(':');
    if (colon != std::string::npos && endpoint.find('/') == std::string::npos) {
        return std::make_unique<NetPoolClient>(endpoint);
    }
    return std::make_unique<FilePool>(endpoint);
}

}  // namespace fedsparse::pool

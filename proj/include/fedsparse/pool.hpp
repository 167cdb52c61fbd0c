#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedsparse/federation.hpp"

namespace fedsparse::pool {

inline constexpr size_t kMaxFrameBytes = 16ull * 1024 * 1024;

// Latest entry per (user_id, feature_index). The first accepted entry fixes
// the head shape; later publishes must match it.
struct PoolStore {
    std::mutex mu;
    std::map<std::pair<std::string, int>, fed::PoolEntry> entries;
    bool has_shape = false;
    nn::MlpWeights shape_ref;
};

struct PublishDecision {
    bool accepted = false;
    uint64_t current_version = 0;  // stored version after the call
    std::string reason;            // set when rejected
};

PublishDecision handle_publish(PoolStore& store, const fed::PoolEntry& entry);

// Snapshot of latest entries, sorted by key; entries owned by exclude_user
// are dropped when it is nonempty.
std::vector<fed::PoolEntry> handle_fetch(PoolStore& store, const std::string& exclude_user);

size_t pool_size(PoolStore& store);

// ---- wire encoding ----------------------------------------------------------

nlohmann::json entry_to_json(const fed::PoolEntry& entry);
fed::PoolEntry entry_from_json(const nlohmann::json& j);

// 4-byte big-endian length + payload. read_frame returns nullopt on EOF or a
// short read; oversized lengths fail the stream.
bool write_frame(int fd, const std::string& payload);
std::optional<std::string> read_frame(int fd);

// ---- clients ----------------------------------------------------------------

// Shared-store client for in-process federation and tests.
class InMemoryPool : public fed::PoolClient {
  public:
    explicit InMemoryPool(std::shared_ptr<PoolStore> store) : store_(std::move(store)) {}
    fed::PublishResult publish(const fed::PoolEntry& entry) override;
    std::vector<fed::PoolEntry> fetch(const std::string& exclude_user) override;

  private:
    std::shared_ptr<PoolStore> store_;
};

// Directory-backed pool: one file `<user>_<feature>.pool` per key, replaced
// atomically via write-temp-then-rename. Identity lives in the file content.
class FilePool : public fed::PoolClient {
  public:
    explicit FilePool(std::filesystem::path directory);
    fed::PublishResult publish(const fed::PoolEntry& entry) override;
    std::vector<fed::PoolEntry> fetch(const std::string& exclude_user) override;

  private:
    std::filesystem::path dir_;
};

// Connect-per-request client for a PoolServer endpoint ("host:port").
class NetPoolClient : public fed::PoolClient {
  public:
    explicit NetPoolClient(std::string endpoint, int timeout_ms = 10000);
    fed::PublishResult publish(const fed::PoolEntry& entry) override;
    std::vector<fed::PoolEntry> fetch(const std::string& exclude_user) override;

  private:
    nlohmann::json round_trip(const nlohmann::json& request);
    std::string host_;
    int port_ = 0;
    int timeout_ms_ = 10000;
};

// ---- server -----------------------------------------------------------------

// Stream-socket service over a shared store, one thread per connection.
// Bind to port 0 for an ephemeral port; endpoint() reports the real one.
class PoolServer {
  public:
    PoolServer(const std::string& bind_addr, std::shared_ptr<PoolStore> store);
    ~PoolServer();
    PoolServer(const PoolServer&) = delete;
    PoolServer& operator=(const PoolServer&) = delete;

    void start();
    void stop();
    int port() const { return port_; }
    std::string endpoint() const;

  private:
    void accept_loop();
    void handle_connection(int fd);

    std::string bind_host_;
    int bind_port_ = 0;
    int port_ = 0;
    int listen_fd_ = -1;
    std::shared_ptr<PoolStore> store_;
    std::thread accept_thread_;
    std::atomic<bool> running_{false};
    std::mutex conn_mu_;
    std::vector<std::thread> conn_threads_;
    std::vector<int> conn_fds_;
};

// Splits "host:port"; "localhost" maps to 127.0.0.1. Throws on bad input.
std::pair<std::string, int> parse_endpoint(const std::string& endpoint);

// Picks a client for an endpoint: "file:<dir>" or a directory path gives a
// FilePool, "host:port" a NetPoolClient, "mem:" an isolated in-memory pool.
std::unique_ptr<fed::PoolClient> open_pool(const std::string& endpoint);

}  // namespace fedsparse::pool

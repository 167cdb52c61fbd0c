#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>

#include "fedsparse/pool.hpp"

namespace fedsparse::pool {

// ---- raw socket helpers -----------------------------------------------------

static bool full_send(int fd, const void* data, size_t n) {
    const char* p = static_cast<const char*>(data);
    while (n > 0) {
        ssize_t k = ::send(fd, p, n, MSG_NOSIGNAL);
        if (k < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        p += k;
        n -= static_cast<size_t>(k);
    }
    return true;
}

static bool full_recv(int fd, void* data, size_t n) {
    char* p = static_cast<char*>(data);
    while (n > 0) {
        ssize_t k = ::recv(fd, p, n, 0);
        if (k == 0) return false;  // peer closed
        if (k < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        p += k;
        n -= static_cast<size_t>(k);
    }
    return true;
}

bool write_frame(int fd, const std::string& payload) {
    if (payload.size() > kMaxFrameBytes) return false;
    uint8_t header[4];
    uint32_t len = static_cast<uint32_t>(payload.size());
    header[0] = static_cast<uint8_t>((len >> 24) & 0xff);
    header[1] = static_cast<uint8_t>((len >> 16) & 0xff);
    header[2] = static_cast<uint8_t>((len >> 8) & 0xff);
    header[3] = static_cast<uint8_t>(len & 0xff);
    if (!full_send(fd, header, 4)) return false;
    return full_send(fd, payload.data(), payload.size());
}

std::optional<std::string> read_frame(int fd) {
    uint8_t header[4];
    if (!full_recv(fd, header, 4)) return std::nullopt;
    uint32_t len = (static_cast<uint32_t>(header[0]) << 24) |
                   (static_cast<uint32_t>(header[1]) << 16) |
                   (static_cast<uint32_t>(header[2]) << 8) | static_cast<uint32_t>(header[3]);
    if (len > kMaxFrameBytes) return std::nullopt;
    std::string payload(len, '\0');
    if (len > 0 && !full_recv(fd, payload.data(), len)) return std::nullopt;
    return payload;
}

std::pair<std::string, int> parse_endpoint(const std::string& endpoint) {
    auto colon = endpoint.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == endpoint.size()) {
        throw std::invalid_argument("endpoint must be host:port, got " + endpoint);
    }
    std::string host = endpoint.substr(0, colon);
    if (host == "localhost") host = "127.0.0.1";
    const std::string port_str = endpoint.substr(colon + 1);
    char* end = nullptr;
    long port = std::strtol(port_str.c_str(), &end, 10);
    if (end == port_str.c_str() || *end != '\0' || port < 0 || port > 65535) {
        throw std::invalid_argument("bad port in endpoint " + endpoint);
    }
    return {host, static_cast<int>(port)};
}

static void set_timeouts(int fd, int timeout_ms) {
    timeval tv{};
    tv.tv_sec = timeout_ms / 1000;
    tv.tv_usec = (timeout_ms % 1000) * 1000;
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
}

// ---- server -----------------------------------------------------------------

PoolServer::PoolServer(const std::string& bind_addr, std::shared_ptr<PoolStore> store)
    : store_(std::move(store)) {
    auto [host, port] = parse_endpoint(bind_addr);
    bind_host_ = host;
    bind_port_ = port;
    if (!store_) throw std::invalid_argument("null store");
}

PoolServer::~PoolServer() { stop(); }

void PoolServer::start() {
    if (running_.load()) return;

    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error("socket: " + std::string(std::strerror(errno)));
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(bind_port_));
    if (::inet_pton(AF_INET, bind_host_.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw std::invalid_argument("bad bind address " + bind_host_);
    }
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        int err = errno;
        ::close(fd);
        throw std::runtime_error("bind " + bind_host_ + ":" + std::to_string(bind_port_) +
                                 ": " + std::strerror(err));
    }
    if (::listen(fd, 64) != 0) {
        int err = errno;
        ::close(fd);
        throw std::runtime_error("listen: " + std::string(std::strerror(err)));
    }

    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    if (::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len) == 0) {
        port_ = ntohs(bound.sin_port);
    }

    listen_fd_ = fd;
    running_.store(true);
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void PoolServer::stop() {
    if (!running_.exchange(false)) return;
    if (listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    {
        std::lock_guard<std::mutex> lock(conn_mu_);
        for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> threads;
    {
        std::lock_guard<std::mutex> lock(conn_mu_);
        threads.swap(conn_threads_);
    }
    for (auto& t : threads) {
        if (t.joinable()) t.join();
    }
}

std::string PoolServer::endpoint() const {
    std::string host = bind_host_ == "0.0.0.0" ? "127.0.0.1" : bind_host_;
    return host + ":" + std::to_string(port_);
}

void PoolServer::accept_loop() {
    while (running_.load()) {
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR) continue;
            break;  // listener closed
        }
        if (!running_.load()) {
            ::close(fd);
            break;
        }
        std::lock_guard<std::mutex> lock(conn_mu_);
        conn_fds_.push_back(fd);
        conn_threads_.emplace_back([this, fd] { handle_connection(fd); });
    }
}

static std::string handle_request(PoolStore& store, const std::string& payload, bool& keep_going) {
    nlohmann::json req;
    try {
        req = nlohmann::json::parse(payload);
        if (!req.is_object()) throw std::runtime_error("not an object");
    } catch (const std::exception&) {
        keep_going = false;
        return nlohmann::json{{"ok", false}, {"reason", "malformed payload"}}.dump();
    }

    const std::string op = req.value("op", "");
    if (op == "publish") {
        fed::PoolEntry entry;
        try {
            entry = entry_from_json(req);
        } catch (const std::exception& e) {
            return nlohmann::json{{"ok", false}, {"reason", e.what()}}.dump();
        }
        PublishDecision d = handle_publish(store, entry);
        nlohmann::json resp{{"ok", d.accepted}, {"version", d.current_version}};
        if (!d.accepted) resp["reason"] = d.reason;
        return resp.dump();
    }
    if (op == "fetch") {
        const std::string exclude = req.value("exclude_user", "");
        auto entries = handle_fetch(store, exclude);
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& e : entries) arr.push_back(entry_to_json(e));
        return nlohmann::json{{"ok", true}, {"entries", std::move(arr)}}.dump();
    }
    return nlohmann::json{{"ok", false}, {"reason", "unknown op"}}.dump();
}

void PoolServer::handle_connection(int fd) {
    set_timeouts(fd, 30000);
    while (running_.load()) {
        auto payload = read_frame(fd);
        if (!payload) break;  // EOF or torn frame: nothing mutated for it
        bool keep_going = true;
        std::string resp = handle_request(*store_, *payload, keep_going);
        if (!write_frame(fd, resp)) break;
        if (!keep_going) break;
    }
    ::close(fd);
}

// ---- client -----------------------------------------------------------------

NetPoolClient::NetPoolClient(std::string endpoint, int timeout_ms) : timeout_ms_(timeout_ms) {
    auto [host, port] = parse_endpoint(endpoint);
    host_ = host;
    port_ = port;
}

nlohmann::json NetPoolClient::round_trip(const nlohmann::json& request) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error("socket: " + std::string(std::strerror(errno)));
    set_timeouts(fd, timeout_ms_);

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port_));
    if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw std::runtime_error("bad pool host " + host_);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        int err = errno;
        ::close(fd);
        throw std::runtime_error("pool unreachable at " + host_ + ":" + std::to_string(port_) +
                                 ": " + std::strerror(err));
    }
    if (!write_frame(fd, request.dump())) {
        ::close(fd);
        throw std::runtime_error("pool send failed");
    }
    auto resp = read_frame(fd);
    ::close(fd);
    if (!resp) throw std::runtime_error("pool connection dropped");
    return nlohmann::json::parse(*resp);
}

fed::PublishResult NetPoolClient::publish(const fed::PoolEntry& entry) {
    fed::PublishResult r;
    try {
        nlohmann::json req = entry_to_json(entry);
        req["op"] = "publish";
        nlohmann::json resp = round_trip(req);
        r.ok = resp.value("ok", false);
        r.version = resp.value("version", uint64_t{0});
        if (!r.ok) r.error = resp.value("reason", "publish rejected");
    } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
    }
    return r;
}

std::vector<fed::PoolEntry> NetPoolClient::fetch(const std::string& exclude_user) {
    nlohmann::json req{{"op", "fetch"}, {"exclude_user", exclude_user}};
    nlohmann::json resp = round_trip(req);
    if (!resp.value("ok", false)) {
        throw std::runtime_error("fetch failed: " + resp.value("reason", "unknown"));
    }
    std::vector<fed::PoolEntry> out;
    for (const auto& j : resp.at("entries")) out.push_back(entry_from_json(j));
    return out;
}

}  // namespace fedsparse::pool

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

#include "comm_detail.hpp"
#include "rastream/comm.hpp"

namespace rastream {

namespace {

using Clock = std::chrono::steady_clock;

// Frame kinds fixed by the wire format.
constexpr std::uint8_t kKindHandshake = 0;
constexpr std::uint8_t kKindCollective = 1;
constexpr std::uint8_t kKindBarrier = 2;

// First payload byte of a collective frame.
constexpr std::uint8_t kOpSum = 0;
constexpr std::uint8_t kOpMin = 1;
constexpr std::uint8_t kOpMax = 2;
constexpr std::uint8_t kOpGather = 3;
constexpr std::uint8_t kOpBroadcast = 4;
constexpr std::uint8_t kOpError = 255;

constexpr char kHandshakeMagic[4] = {'R', 'S', 'T', 'R'};

class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
    Socket& operator=(Socket&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = o.fd_;
            o.fd_ = -1;
        }
        return *this;
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket() { close(); }

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    void close() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

private:
    int fd_ = -1;
};

void wait_readable(int fd, Clock::time_point deadline) {
    for (;;) {
        const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - Clock::now());
        if (remaining.count() <= 0) throw TimeoutError("socket read timeout");
        pollfd p{fd, POLLIN, 0};
        const int rc = ::poll(&p, 1, static_cast<int>(remaining.count()));
        if (rc > 0) return;
        if (rc < 0 && errno != EINTR) throw Error("poll failed: " + std::string(strerror(errno)));
    }
}

void recv_exact(int fd, void* buf, std::size_t n, Clock::time_point deadline) {
    auto* p = static_cast<char*>(buf);
    while (n > 0) {
        wait_readable(fd, deadline);
        const ssize_t got = ::recv(fd, p, n, 0);
        if (got == 0) throw Error("peer closed connection");
        if (got < 0) {
            if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
            throw Error("recv failed: " + std::string(strerror(errno)));
        }
        p += got;
        n -= static_cast<std::size_t>(got);
    }
}

void send_all(int fd, const void* buf, std::size_t n) {
    const char* p = static_cast<const char*>(buf);
    while (n > 0) {
        const ssize_t sent = ::send(fd, p, n, MSG_NOSIGNAL);
        if (sent < 0) {
            if (errno == EINTR) continue;
            throw Error("send failed: " + std::string(strerror(errno)));
        }
        p += sent;
        n -= static_cast<std::size_t>(sent);
    }
}

// 4-byte LE payload length, 1-byte kind, payload bytes.
void send_frame(int fd, std::uint8_t kind, std::string_view payload) {
    std::uint8_t header[5];
    const std::uint32_t len = static_cast<std::uint32_t>(payload.size());
    header[0] = static_cast<std::uint8_t>(len & 0xff);
    header[1] = static_cast<std::uint8_t>((len >> 8) & 0xff);
    header[2] = static_cast<std::uint8_t>((len >> 16) & 0xff);
    header[3] = static_cast<std::uint8_t>((len >> 24) & 0xff);
    header[4] = kind;
    send_all(fd, header, sizeof(header));
    if (!payload.empty()) send_all(fd, payload.data(), payload.size());
}

struct Frame {
    std::uint8_t kind;
    std::string payload;
};

Frame recv_frame(int fd, Clock::time_point deadline) {
    std::uint8_t header[5];
    recv_exact(fd, header, sizeof(header), deadline);
    const std::uint32_t len = static_cast<std::uint32_t>(header[0])
                            | (static_cast<std::uint32_t>(header[1]) << 8)
                            | (static_cast<std::uint32_t>(header[2]) << 16)
                            | (static_cast<std::uint32_t>(header[3]) << 24);
    Frame f;
    f.kind = header[4];
    f.payload.resize(len);
    if (len > 0) recv_exact(fd, f.payload.data(), len, deadline);
    return f;
}

std::string handshake_payload(int world_size, int rank) {
    std::string p(kHandshakeMagic, 4);
    const std::uint32_t w = static_cast<std::uint32_t>(world_size);
    const std::uint32_t r = static_cast<std::uint32_t>(rank);
    p.append(reinterpret_cast<const char*>(&w), 4);
    p.append(reinterpret_cast<const char*>(&r), 4);
    return p;
}

void parse_handshake(const Frame& f, std::uint32_t& world, std::uint32_t& rank) {
    if (f.kind != kKindHandshake || f.payload.size() != 12
        || std::memcmp(f.payload.data(), kHandshakeMagic, 4) != 0)
        throw ProtocolError("malformed handshake frame");
    std::memcpy(&world, f.payload.data() + 4, 4);
    std::memcpy(&rank, f.payload.data() + 8, 4);
}

std::uint8_t reduce_opcode(ReduceOp op) {
    switch (op) {
    case ReduceOp::Sum: return kOpSum;
    case ReduceOp::Min: return kOpMin;
    case ReduceOp::Max: return kOpMax;
    }
    return kOpSum;
}

// Rank 0: listens, accepts world-1 peers, coordinates every collective.
class RootCommunicator final : public Communicator {
public:
    explicit RootCommunicator(const SocketConfig& cfg)
        : world_(cfg.world_size), timeout_(cfg.timeout) {
        Socket listener(::socket(AF_INET, SOCK_STREAM, 0));
        if (!listener.valid()) throw Error("socket() failed");
        const int one = 1;
        ::setsockopt(listener.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(cfg.port);
        if (::inet_pton(AF_INET, cfg.host.c_str(), &addr.sin_addr) != 1)
            throw Error("bad rendezvous address: " + cfg.host);
        if (::bind(listener.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
            throw Error("bind failed on " + cfg.host + ":" + std::to_string(cfg.port) + ": "
                        + strerror(errno));
        if (::listen(listener.fd(), world_) != 0) throw Error("listen failed");

        peers_.resize(world_ > 1 ? world_ - 1 : 0);
        const auto deadline = Clock::now() + timeout_;
        int connected = 0;
        while (connected < world_ - 1) {
            wait_readable(listener.fd(), deadline);
            Socket peer(::accept(listener.fd(), nullptr, nullptr));
            if (!peer.valid()) continue;
            const int nd = 1;
            ::setsockopt(peer.fd(), IPPROTO_TCP, TCP_NODELAY, &nd, sizeof(nd));
            std::uint32_t pw = 0, pr = 0;
            parse_handshake(recv_frame(peer.fd(), deadline), pw, pr);
            send_frame(peer.fd(), kKindHandshake, handshake_payload(world_, 0));
            if (pw != static_cast<std::uint32_t>(world_))
                throw ProtocolError("handshake: peer declared world_size " + std::to_string(pw)
                                    + ", expected " + std::to_string(world_));
            if (pr < 1 || pr >= static_cast<std::uint32_t>(world_) || peers_[pr - 1].valid())
                throw ProtocolError("handshake: invalid or duplicate rank " + std::to_string(pr));
            peers_[pr - 1] = std::move(peer);
            ++connected;
        }
    }

    int rank() const override { return 0; }
    int world_size() const override { return world_; }

    std::vector<double> all_reduce(std::span<const double> values, ReduceOp op) override {
        const std::uint8_t opcode = reduce_opcode(op);
        auto bodies = collect(kKindCollective, opcode, detail::pack_doubles(values));
        std::vector<double> acc = detail::unpack_doubles(bodies[0]);
        for (int r = 1; r < world_; ++r) {
            const auto v = detail::unpack_doubles(bodies[r]);
            if (v.size() != acc.size()) {
                fail_peers("all_reduce vector length mismatch across ranks");
                throw ProtocolError("all_reduce vector length mismatch across ranks");
            }
            detail::fold_into(acc, v, op);
        }
        const std::string packed = detail::pack_doubles(acc);
        reply_all(kKindCollective, opcode, packed);
        return acc;
    }

    std::optional<std::vector<std::string>> gather_to_root(std::string_view payload) override {
        auto bodies = collect(kKindCollective, kOpGather, std::string(payload));
        reply_all(kKindCollective, kOpGather, {});
        return bodies;
    }

    std::string broadcast_from_root(std::string_view payload) override {
        collect(kKindCollective, kOpBroadcast, {});
        reply_all(kKindCollective, kOpBroadcast, std::string(payload));
        return std::string(payload);
    }

    void barrier() override {
        collect(kKindBarrier, kOpSum, {});
        for (auto& p : peers_) send_frame(p.fd(), kKindBarrier, {});
    }

private:
    // Reads one frame from every peer; returns bodies indexed by rank
    // (rank 0 slot holds this rank's own contribution).
    std::vector<std::string> collect(std::uint8_t kind, std::uint8_t opcode, std::string own) {
        std::vector<std::string> bodies(world_);
        bodies[0] = std::move(own);
        const auto deadline = Clock::now() + timeout_;
        std::vector<bool> arrived(world_, false);
        arrived[0] = true;
        bool timed_out = false;
        for (int r = 1; r < world_; ++r) {
            try {
                Frame f = recv_frame(peers_[r - 1].fd(), deadline);
                if (f.kind != kind)
                    throw ProtocolError("unexpected frame kind from rank " + std::to_string(r));
                if (kind == kKindCollective) {
                    if (f.payload.empty() || static_cast<std::uint8_t>(f.payload[0]) != opcode) {
                        fail_peers("mismatched collective call from rank " + std::to_string(r));
                        throw ProtocolError("mismatched collective call from rank "
                                            + std::to_string(r));
                    }
                    bodies[r] = f.payload.substr(1);
                } else {
                    bodies[r] = f.payload;
                }
                arrived[r] = true;
            } catch (const TimeoutError&) {
                timed_out = true;
            }
        }
        if (timed_out)
            throw TimeoutError("collective timeout; missing ranks {"
                               + detail::missing_ranks_string(arrived) + "}");
        return bodies;
    }

    void reply_all(std::uint8_t kind, std::uint8_t opcode, const std::string& body) {
        std::string payload;
        payload.push_back(static_cast<char>(opcode));
        payload += body;
        for (auto& p : peers_) send_frame(p.fd(), kind, payload);
    }

    void fail_peers(const std::string& message) {
        std::string payload;
        payload.push_back(static_cast<char>(kOpError));
        payload += message;
        for (auto& p : peers_) send_frame(p.fd(), kKindCollective, payload);
    }

    int world_;
    std::chrono::milliseconds timeout_;
    std::vector<Socket> peers_;
};

class PeerCommunicator final : public Communicator {
public:
    explicit PeerCommunicator(const SocketConfig& cfg)
        : world_(cfg.world_size), rank_(cfg.rank), timeout_(cfg.timeout) {
        const auto deadline = Clock::now() + timeout_;
        for (;;) {
            Socket s(::socket(AF_INET, SOCK_STREAM, 0));
            if (!s.valid()) throw Error("socket() failed");
            sockaddr_in addr{};
            addr.sin_family = AF_INET;
            addr.sin_port = htons(cfg.port);
            if (::inet_pton(AF_INET, cfg.host.c_str(), &addr.sin_addr) != 1)
                throw Error("bad rendezvous address: " + cfg.host);
            if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
                sock_ = std::move(s);
                break;
            }
            if (Clock::now() >= deadline)
                throw TimeoutError("rank " + std::to_string(rank_)
                                   + ": rendezvous unreachable at " + cfg.host + ":"
                                   + std::to_string(cfg.port));
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
        const int nd = 1;
        ::setsockopt(sock_.fd(), IPPROTO_TCP, TCP_NODELAY, &nd, sizeof(nd));
        send_frame(sock_.fd(), kKindHandshake, handshake_payload(world_, rank_));
        std::uint32_t rw = 0, rr = 0;
        parse_handshake(recv_frame(sock_.fd(), deadline), rw, rr);
        if (rw != static_cast<std::uint32_t>(world_))
            throw ProtocolError("handshake: root declared world_size " + std::to_string(rw)
                                + ", expected " + std::to_string(world_));
    }

    int rank() const override { return rank_; }
    int world_size() const override { return world_; }

    std::vector<double> all_reduce(std::span<const double> values, ReduceOp op) override {
        return detail::unpack_doubles(
            roundtrip(kKindCollective, reduce_opcode(op), detail::pack_doubles(values)));
    }

    std::optional<std::vector<std::string>> gather_to_root(std::string_view payload) override {
        roundtrip(kKindCollective, kOpGather, std::string(payload));
        return std::nullopt;
    }

    std::string broadcast_from_root(std::string_view) override {
        return roundtrip(kKindCollective, kOpBroadcast, {});
    }

    void barrier() override {
        send_frame(sock_.fd(), kKindBarrier, {});
        const Frame f = recv_frame(sock_.fd(), Clock::now() + timeout_);
        if (f.kind != kKindBarrier) throw ProtocolError("expected barrier token");
    }

private:
    std::string roundtrip(std::uint8_t kind, std::uint8_t opcode, std::string body) {
        std::string payload;
        payload.push_back(static_cast<char>(opcode));
        payload += body;
        send_frame(sock_.fd(), kind, payload);
        const Frame f = recv_frame(sock_.fd(), Clock::now() + timeout_);
        if (f.kind != kind || f.payload.empty())
            throw ProtocolError("malformed collective reply");
        const std::uint8_t rop = static_cast<std::uint8_t>(f.payload[0]);
        if (rop == kOpError) throw ProtocolError(f.payload.substr(1));
        if (rop != opcode) throw ProtocolError("collective reply opcode mismatch");
        return f.payload.substr(1);
    }

    int world_;
    int rank_;
    std::chrono::milliseconds timeout_;
    Socket sock_;
};

}  // namespace

std::unique_ptr<Communicator> make_socket_communicator(const SocketConfig& cfg) {
    if (cfg.world_size < 1 || cfg.rank < 0 || cfg.rank >= cfg.world_size)
        throw ContractError("make_socket_communicator: invalid rank/world");
    if (cfg.world_size == 1) return make_loopback();
    if (cfg.rank == 0) return std::make_unique<RootCommunicator>(cfg);
    return std::make_unique<PeerCommunicator>(cfg);
}

std::uint16_t pick_free_port() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw Error("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw Error("bind failed while picking a port");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    const std::uint16_t port = ntohs(addr.sin_port);
    ::close(fd);
    return port;
}

}  // namespace rastream

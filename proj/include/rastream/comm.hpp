#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rastream/raster.hpp"

namespace rastream {

class ProtocolError : public Error {
public:
    using Error::Error;
};

class TimeoutError : public Error {
public:
    using Error::Error;
};

enum class ReduceOp : std::uint8_t { Sum, Min, Max };

inline constexpr std::chrono::milliseconds kDefaultCollectiveTimeout{30000};

/// Rank/world handle with blocking collectives. Owned by exactly one rank
/// context; no two collectives may be in flight concurrently from one rank.
/// Reductions fold contributions in rank order 0,1,2,... so floating-point
/// results are reproducible run-to-run.
class Communicator {
public:
    virtual ~Communicator() = default;

    virtual int rank() const = 0;
    virtual int world_size() const = 0;

    /// Elementwise reduction over all ranks; every rank gets the result.
    virtual std::vector<double> all_reduce(std::span<const double> values, ReduceOp op) = 0;

    /// Rank 0 receives all payloads in rank order; other ranks get nullopt.
    virtual std::optional<std::vector<std::string>> gather_to_root(std::string_view payload) = 0;

    /// Every rank returns rank 0's payload (the argument is ignored off-root).
    virtual std::string broadcast_from_root(std::string_view payload) = 0;

    /// No rank returns before all ranks have entered.
    virtual void barrier() = 0;
};

/// World-1 communicator: every collective is the identity.
std::unique_ptr<Communicator> make_loopback();

/// In-process worker group: one communicator per rank, each used from its own
/// thread, connected through a shared rendezvous.
std::vector<std::shared_ptr<Communicator>> make_inproc_group(
    int world_size, std::chrono::milliseconds timeout = kDefaultCollectiveTimeout);

struct SocketConfig {
    std::string host = "127.0.0.1";  // rank-0 rendezvous address
    std::uint16_t port = 0;
    int world_size = 1;
    int rank = 0;
    std::chrono::milliseconds timeout = kDefaultCollectiveTimeout;
};

/// Multi-process transport over local byte-stream sockets with a rank-0
/// rendezvous. Rank 0 listens and coordinates; other ranks connect.
std::unique_ptr<Communicator> make_socket_communicator(const SocketConfig& config);

/// Binds port 0 on the loopback interface and reports the assigned port.
std::uint16_t pick_free_port();

}  // namespace rastream

#include <condition_variable>
#include <cstring>
#include <mutex>

#include "comm_detail.hpp"
#include "rastream/comm.hpp"

namespace rastream {

namespace detail {

std::string pack_doubles(std::span<const double> v) {
    std::string out(v.size() * sizeof(double), '\0');
    if (!v.empty()) std::memcpy(out.data(), v.data(), out.size());
    return out;
}

std::vector<double> unpack_doubles(std::string_view s) {
    std::vector<double> out(s.size() / sizeof(double));
    if (!out.empty()) std::memcpy(out.data(), s.data(), s.size());
    return out;
}

void fold_into(std::vector<double>& acc, std::span<const double> v, ReduceOp op) {
    for (std::size_t i = 0; i < acc.size(); ++i) {
        switch (op) {
        case ReduceOp::Sum: acc[i] += v[i]; break;
        case ReduceOp::Min: acc[i] = std::min(acc[i], v[i]); break;
        case ReduceOp::Max: acc[i] = std::max(acc[i], v[i]); break;
        }
    }
}

std::string pack_string_list(const std::vector<std::string>& items) {
    std::string out;
    for (const std::string& s : items) {
        std::uint64_t n = s.size();
        out.append(reinterpret_cast<const char*>(&n), sizeof(n));
        out.append(s);
    }
    return out;
}

std::vector<std::string> unpack_string_list(std::string_view s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos + sizeof(std::uint64_t) <= s.size()) {
        std::uint64_t n;
        std::memcpy(&n, s.data() + pos, sizeof(n));
        pos += sizeof(n);
        out.emplace_back(s.substr(pos, n));
        pos += n;
    }
    return out;
}

std::string missing_ranks_string(const std::vector<bool>& arrived) {
    std::string out;
    for (std::size_t r = 0; r < arrived.size(); ++r) {
        if (!arrived[r]) {
            if (!out.empty()) out += ",";
            out += std::to_string(r);
        }
    }
    return out;
}

}  // namespace detail

namespace {

class LoopbackCommunicator final : public Communicator {
public:
    int rank() const override { return 0; }
    int world_size() const override { return 1; }

    std::vector<double> all_reduce(std::span<const double> values, ReduceOp) override {
        return {values.begin(), values.end()};
    }
    std::optional<std::vector<std::string>> gather_to_root(std::string_view payload) override {
        return std::vector<std::string>{std::string(payload)};
    }
    std::string broadcast_from_root(std::string_view payload) override {
        return std::string(payload);
    }
    void barrier() override {}
};

enum class Kind : std::uint8_t { Reduce, Gather, Broadcast, Barrier };

// Single-slot rendezvous shared by all ranks of an in-process group. The
// sequential collective discipline guarantees at most one collective is being
// assembled at a time; results are kept per generation so slow readers of
// generation g cannot race the assembly of g+1 (that assembly cannot complete
// until they have deposited, which happens after they read).
struct Hub {
    int world;
    std::chrono::milliseconds timeout;

    std::mutex m;
    std::condition_variable cv;
    std::uint64_t generation = 0;
    int arrived = 0;
    std::vector<bool> arrived_flags;
    std::vector<std::string> contributions;
    Kind current_kind = Kind::Barrier;
    ReduceOp current_op = ReduceOp::Sum;

    std::vector<std::string> results;  // per rank, for the completed generation
    std::string error;                 // protocol failure of the completed generation

    Hub(int world_, std::chrono::milliseconds timeout_)
        : world(world_), timeout(timeout_), arrived_flags(world_, false),
          contributions(world_), results(world_) {}

    std::string enter(int rank, Kind kind, ReduceOp op, std::string payload) {
        std::unique_lock lock(m);
        const std::uint64_t my_gen = generation;
        if (arrived == 0) {
            current_kind = kind;
            current_op = op;
            std::fill(arrived_flags.begin(), arrived_flags.end(), false);
        } else if (kind != current_kind || (kind == Kind::Reduce && op != current_op)) {
            throw ProtocolError("mismatched collective call from rank " + std::to_string(rank));
        }
        contributions[rank] = std::move(payload);
        arrived_flags[rank] = true;
        ++arrived;
        if (arrived == world) {
            complete();
            arrived = 0;
            ++generation;
            cv.notify_all();
        } else {
            const bool done = cv.wait_for(lock, timeout,
                                          [&] { return generation != my_gen; });
            if (!done)
                throw TimeoutError("collective timeout; missing ranks {"
                                   + detail::missing_ranks_string(arrived_flags) + "}");
        }
        if (!error.empty()) throw ProtocolError(error);
        return results[rank];
    }

private:
    void complete() {
        error.clear();
        switch (current_kind) {
        case Kind::Reduce: {
            const std::size_t len = contributions[0].size();
            for (int r = 1; r < world; ++r) {
                if (contributions[r].size() != len) {
                    error = "all_reduce vector length mismatch across ranks";
                    return;
                }
            }
            std::vector<double> acc = detail::unpack_doubles(contributions[0]);
            for (int r = 1; r < world; ++r)
                detail::fold_into(acc, detail::unpack_doubles(contributions[r]), current_op);
            const std::string packed = detail::pack_doubles(acc);
            for (int r = 0; r < world; ++r) results[r] = packed;
            break;
        }
        case Kind::Gather:
            results[0] = detail::pack_string_list(contributions);
            for (int r = 1; r < world; ++r) results[r].clear();
            break;
        case Kind::Broadcast:
            for (int r = 0; r < world; ++r) results[r] = contributions[0];
            break;
        case Kind::Barrier:
            for (int r = 0; r < world; ++r) results[r].clear();
            break;
        }
    }
};

class InprocCommunicator final : public Communicator {
public:
    InprocCommunicator(std::shared_ptr<Hub> hub, int rank)
        : hub_(std::move(hub)), rank_(rank) {}

    int rank() const override { return rank_; }
    int world_size() const override { return hub_->world; }

    std::vector<double> all_reduce(std::span<const double> values, ReduceOp op) override {
        return detail::unpack_doubles(
            hub_->enter(rank_, Kind::Reduce, op, detail::pack_doubles(values)));
    }

    std::optional<std::vector<std::string>> gather_to_root(std::string_view payload) override {
        std::string res = hub_->enter(rank_, Kind::Gather, ReduceOp::Sum, std::string(payload));
        if (rank_ != 0) return std::nullopt;
        return detail::unpack_string_list(res);
    }

    std::string broadcast_from_root(std::string_view payload) override {
        return hub_->enter(rank_, Kind::Broadcast, ReduceOp::Sum, std::string(payload));
    }

    void barrier() override { hub_->enter(rank_, Kind::Barrier, ReduceOp::Sum, {}); }

private:
    std::shared_ptr<Hub> hub_;
    int rank_;
};

}  // namespace

std::unique_ptr<Communicator> make_loopback() {
    return std::make_unique<LoopbackCommunicator>();
}

std::vector<std::shared_ptr<Communicator>> make_inproc_group(
    int world_size, std::chrono::milliseconds timeout) {
    if (world_size < 1) throw ContractError("make_inproc_group: world_size < 1");
    auto hub = std::make_shared<Hub>(world_size, timeout);
    std::vector<std::shared_ptr<Communicator>> group;
    group.reserve(world_size);
    for (int r = 0; r < world_size; ++r)
        group.push_back(std::make_shared<InprocCommunicator>(hub, r));
    return group;
}

}  // namespace rastream

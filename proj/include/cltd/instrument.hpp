#pragma once

#include <atomic>
#include <cstdint>

namespace cltd::instrument {

/// Multiply-accumulate tally for attention-style kernels. Only the thread that
/// installed a MacScope sees its counter, so concurrent work does not mix.
struct MacCounter {
    std::uint64_t attention = 0;   // score / correlation and aggregation / mixing products
    std::uint64_t projection = 0;  // Q/K/V projections, conv1d, H-FC, V-FC
};

inline MacCounter*& active_counter() {
    thread_local MacCounter* current = nullptr;
    return current;
}

inline void add_attention_macs(std::uint64_t n) {
    if (auto* c = active_counter()) c->attention += n;
}
inline void add_projection_macs(std::uint64_t n) {
    if (auto* c = active_counter()) c->projection += n;
}

class MacScope {
public:
    explicit MacScope(MacCounter& c) : prev_(active_counter()) { active_counter() = &c; }
    ~MacScope() { active_counter() = prev_; }
    MacScope(const MacScope&) = delete;
    MacScope& operator=(const MacScope&) = delete;

private:
    MacCounter* prev_;
};

/// Process-wide count of CLTD invocations (CPAG forward/backward, FPH
/// forward/backward, stage losses). Evaluation must leave it untouched.
inline std::atomic<std::uint64_t>& cltd_ops() {
    static std::atomic<std::uint64_t> n{0};
    return n;
}

inline void count_cltd_op() { cltd_ops().fetch_add(1, std::memory_order_relaxed); }

}  // namespace cltd::instrument

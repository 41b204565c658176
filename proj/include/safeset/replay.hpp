#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "safeset/rng.hpp"

namespace safeset {

/// Minibatch drawn from replay. Flat row-major buffers; next_terminal is
/// derived from the environment's terminal predicate at sampling time.
struct Batch {
    int n = 0;
    int state_dim = 0;
    int action_dim = 0;
    std::vector<double> s, a, s2;
    std::vector<char> target_hit;
    std::vector<char> next_terminal;

    std::span<const double> state(int i) const {
        return {s.data() + static_cast<std::size_t>(i) * state_dim,
                static_cast<std::size_t>(state_dim)};
    }
    std::span<const double> action(int i) const {
        return {a.data() + static_cast<std::size_t>(i) * action_dim,
                static_cast<std::size_t>(action_dim)};
    }
    std::span<const double> next_state(int i) const {
        return {s2.data() + static_cast<std::size_t>(i) * state_dim,
                static_cast<std::size_t>(state_dim)};
    }
};

/// Experience replay with separate safe and unsafe partitions so minibatches
/// can carry a fixed fraction of unsafe samples (s_t in the target set).
class ReplayBuffer {
public:
    ReplayBuffer(int state_dim, int action_dim, long capacity)
        : state_dim_(state_dim), action_dim_(action_dim), capacity_(capacity) {
        if (capacity <= 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
    }

    void push(std::span<const double> s, std::span<const double> a, bool target_hit,
              std::span<const double> s2) {
        if (s.size() != static_cast<std::size_t>(state_dim_) ||
            a.size() != static_cast<std::size_t>(action_dim_) ||
            s2.size() != static_cast<std::size_t>(state_dim_))
            throw std::invalid_argument("ReplayBuffer::push: dimension mismatch");
        Ring& ring = target_hit ? unsafe_ : safe_;
        if (ring.count < capacity_) {
            append(ring, s, a, s2);
        } else {
            overwrite(ring, ring.pos, s, a, s2);
        }
        ring.pos = (ring.pos + 1) % capacity_;
    }

    long size() const { return safe_.count + unsafe_.count; }
    long safe_size() const { return safe_.count; }
    long unsafe_size() const { return unsafe_.count; }

    /// Draws `batch` samples with round(unsafe_fraction * batch) unsafe
    /// entries whenever the unsafe partition holds that many.
    Batch sample(int batch, double unsafe_fraction, Rng& rng,
                 const std::function<bool(std::span<const double>)>& next_terminal) const {
        if (size() == 0) throw std::runtime_error("ReplayBuffer::sample: empty buffer");
        const long want_unsafe = std::lround(unsafe_fraction * batch);
        long n_unsafe = std::min(want_unsafe, unsafe_.count);
        long n_safe = batch - n_unsafe;
        if (safe_.count == 0) {
            n_unsafe = batch;
            n_safe = 0;
        }

        Batch b;
        b.n = batch;
        b.state_dim = state_dim_;
        b.action_dim = action_dim_;
        b.s.reserve(static_cast<std::size_t>(batch) * state_dim_);
        b.a.reserve(static_cast<std::size_t>(batch) * action_dim_);
        b.s2.reserve(static_cast<std::size_t>(batch) * state_dim_);
        for (long i = 0; i < n_unsafe; ++i)
            copy_entry(unsafe_, rng.uniform_int(static_cast<int>(unsafe_.count)), true, b,
                       next_terminal);
        for (long i = 0; i < n_safe; ++i)
            copy_entry(safe_, rng.uniform_int(static_cast<int>(safe_.count)), false, b,
                       next_terminal);
        return b;
    }

private:
    struct Ring {
        std::vector<double> s, a, s2;
        long count = 0;
        long pos = 0;
    };

    void append(Ring& r, std::span<const double> s, std::span<const double> a,
                std::span<const double> s2) {
        r.s.insert(r.s.end(), s.begin(), s.end());
        r.a.insert(r.a.end(), a.begin(), a.end());
        r.s2.insert(r.s2.end(), s2.begin(), s2.end());
        ++r.count;
    }

    void overwrite(Ring& r, long at, std::span<const double> s, std::span<const double> a,
                   std::span<const double> s2) {
        std::copy(s.begin(), s.end(), r.s.begin() + at * state_dim_);
        std::copy(a.begin(), a.end(), r.a.begin() + at * action_dim_);
        std::copy(s2.begin(), s2.end(), r.s2.begin() + at * state_dim_);
    }

    void copy_entry(const Ring& r, long at, bool unsafe, Batch& b,
                    const std::function<bool(std::span<const double>)>& next_terminal) const {
        const double* s = r.s.data() + at * state_dim_;
        const double* a = r.a.data() + at * action_dim_;
        const double* s2 = r.s2.data() + at * state_dim_;
        b.s.insert(b.s.end(), s, s + state_dim_);
        b.a.insert(b.a.end(), a, a + action_dim_);
        b.s2.insert(b.s2.end(), s2, s2 + state_dim_);
        b.target_hit.push_back(unsafe ? 1 : 0);
        b.next_terminal.push_back(
            !unsafe && next_terminal({s2, static_cast<std::size_t>(state_dim_)}) ? 1 : 0);
    }

    int state_dim_;
    int action_dim_;
    long capacity_;
    Ring safe_, unsafe_;
};

}  // namespace safeset

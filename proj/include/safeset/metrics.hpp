#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace safeset {

enum class SafeSetSource { Oracle, Tabular, Deep };

/// Thresholded safe set over a fixed evaluation state set, together with the
/// tolerance that produced it.
struct SafeSetEstimate {
    std::vector<char> member;
    double alpha = 0.0;
    SafeSetSource source = SafeSetSource::Oracle;

    std::size_t count() const {
        std::size_t n = 0;
        for (char m : member) n += (m != 0);
        return n;
    }
};

/// r_c: fraction of the true safe set recovered by the estimate.
inline double ratio_correct(const SafeSetEstimate& estimate, const SafeSetEstimate& truth) {
    if (estimate.member.size() != truth.member.size())
        throw std::invalid_argument("ratio_correct: evaluation grids differ");
    std::size_t truth_count = 0, hit = 0;
    for (std::size_t i = 0; i < truth.member.size(); ++i) {
        if (!truth.member[i]) continue;
        ++truth_count;
        if (estimate.member[i]) ++hit;
    }
    if (truth_count == 0) throw std::invalid_argument("ratio_correct: empty truth set");
    return static_cast<double>(hit) / static_cast<double>(truth_count);
}

/// r_fp: fraction of all states misclassified as safe.
inline double ratio_false_positive(const SafeSetEstimate& estimate, const SafeSetEstimate& truth,
                                   std::size_t total_states) {
    if (estimate.member.size() != truth.member.size())
        throw std::invalid_argument("ratio_false_positive: evaluation grids differ");
    if (total_states == 0) throw std::invalid_argument("ratio_false_positive: empty state set");
    std::size_t fp = 0;
    for (std::size_t i = 0; i < truth.member.size(); ++i)
        if (estimate.member[i] && !truth.member[i]) ++fp;
    return static_cast<double>(fp) / static_cast<double>(total_states);
}

/// Ring of the most recent episode outcomes; its mean is the average episode
/// safety (AES).
class EpisodeLog {
public:
    explicit EpisodeLog(std::size_t capacity = 100) : capacity_(capacity) {}

    void push(bool safe) {
        if (ring_.size() == capacity_) ring_.pop_front();
        ring_.push_back(safe ? 1 : 0);
    }

    bool empty() const { return ring_.empty(); }
    std::size_t size() const { return ring_.size(); }

    /// Mean of the ring; 1.0 before the first episode completes.
    double average() const {
        if (ring_.empty()) return 1.0;
        const double sum = std::accumulate(ring_.begin(), ring_.end(), 0.0);
        return sum / static_cast<double>(ring_.size());
    }

private:
    std::size_t capacity_;
    std::deque<char> ring_;
};

enum class Algo { Baseline, Lss, Ess };

inline std::string algo_name(Algo a) {
    switch (a) {
        case Algo::Baseline: return "baseline";
        case Algo::Lss: return "lss";
        case Algo::Ess: return "ess";
    }
    return "?";
}

inline Algo algo_from_name(const std::string& name) {
    if (name == "baseline") return Algo::Baseline;
    if (name == "lss") return Algo::Lss;
    if (name == "ess") return Algo::Ess;
    throw std::invalid_argument("unknown algorithm: " + name);
}

struct MetricsRow {
    long iteration = 0;
    long env_steps = 0;
    double r_c = 0.0;
    double r_fp = 0.0;
    double aes = 1.0;
    double epsilon = 0.0;
};

/// Metric time-series of a single run plus the identifying configuration.
struct ExperimentRecord {
    std::string algo;
    std::string env;
    std::uint64_t seed = 0;
    double alpha = 0.0;
    std::vector<MetricsRow> rows;
};

}  // namespace safeset

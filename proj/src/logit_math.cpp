#include "csdistill/logit_math.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "csdistill/errors.hpp"

namespace csd {

namespace {

// Kahan-compensated accumulator. Keeps the softmax normalizer accurate enough
// that probability vectors satisfy the 1e-12 sum-to-one invariant even at
// vocabulary sizes in the tens of thousands.
struct KahanSum {
    double sum = 0.0;
    double c = 0.0;
    void add(double x) {
        const double y = x - c;
        const double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
};

void check_same_length(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw Error(std::string(what) + ": length mismatch (" +
                    std::to_string(a) + " vs " + std::to_string(b) + ")");
    }
}

}  // namespace

void check_logits(std::span<const double> v) {
    if (v.size() < 2) {
        throw Error("logit vector must have at least 2 entries, got " +
                    std::to_string(v.size()));
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw Error("logit vector has non-finite entry at index " +
                        std::to_string(i));
        }
    }
}

void check_probs(std::span<const double> p) {
    if (p.size() < 2) {
        throw Error("probability vector must have at least 2 entries, got " +
                    std::to_string(p.size()));
    }
    KahanSum total;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(p[i] >= 0.0) || !std::isfinite(p[i])) {
            throw Error("probability vector has invalid entry at index " +
                        std::to_string(i));
        }
        total.add(p[i]);
    }
    if (std::abs(total.sum - 1.0) > kProbSumTol) {
        throw Error("probability vector sums to " + std::to_string(total.sum) +
                    ", expected 1 within 1e-12");
    }
}

double log_sum_exp(std::span<const double> v) {
    check_logits(v);
    const double m = *std::max_element(v.begin(), v.end());
    KahanSum s;
    for (double x : v) s.add(std::exp(x - m));
    return m + std::log(s.sum);
}

std::vector<double> softmax(std::span<const double> v, double temperature) {
    check_logits(v);
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw Error("softmax temperature must be positive, got " +
                    std::to_string(temperature));
    }
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    m /= temperature;

    std::vector<double> out(v.size());
    KahanSum s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] / temperature - m);
        s.add(out[i]);
    }
    const double inv = 1.0 / s.sum;
    for (double& x : out) x *= inv;
    return out;
}

std::vector<double> softmax_vjp(std::span<const double> q,
                                std::span<const double> upstream) {
    check_probs(q);
    check_same_length(q.size(), upstream.size(), "softmax_vjp");
    for (std::size_t i = 0; i < upstream.size(); ++i) {
        if (!std::isfinite(upstream[i])) {
            throw Error("softmax_vjp upstream has non-finite entry at index " +
                        std::to_string(i));
        }
    }
    KahanSum dot;
    for (std::size_t i = 0; i < q.size(); ++i) dot.add(q[i] * upstream[i]);
    std::vector<double> g(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) g[i] = q[i] * (upstream[i] - dot.sum);
    return g;
}

double weighted_mean(std::span<const double> v, std::span<const double> w) {
    check_same_length(v.size(), w.size(), "weighted_mean");
    KahanSum s;
    for (std::size_t i = 0; i < v.size(); ++i) s.add(w[i] * v[i]);
    return s.sum;
}

std::vector<double> center(std::span<const double> v, std::span<const double> w) {
    const double m = weighted_mean(v, w);
    std::vector<double> out(v.begin(), v.end());
    for (double& x : out) x -= m;
    return out;
}

int sample_categorical(std::span<const double> p, Rng& rng) {
    check_probs(p);
    const double u = uniform01(rng);
    double cum = 0.0;
    int last_positive = -1;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) last_positive = static_cast<int>(i);
        cum += p[i];
        if (u < cum) return static_cast<int>(i);
    }
    // u landed past the accumulated total (rounding shortfall near 1).
    if (last_positive < 0) throw Error("sample_categorical: all-zero weights");
    return last_positive;
}

}  // namespace csd

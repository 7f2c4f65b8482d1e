#pragma once

#include <span>
#include <vector>

#include "csdistill/rng.hpp"

namespace csd {

// Tolerance for the probability-vector sum-to-one invariant.
inline constexpr double kProbSumTol = 1e-12;

// Floor applied to probabilities before logs/ratios in probability-space
// losses.
inline constexpr double kProbFloor = 1e-12;

// Contract checks for the two vector kinds used throughout: logits must be
// finite with at least two entries; probabilities must be finite, nonnegative
// and sum to one within kProbSumTol.
void check_logits(std::span<const double> v);
void check_probs(std::span<const double> p);

// log(sum_i exp(v[i])), computed by max-subtraction with compensated
// summation; never overflows for |v[i]| <= 1e4.
double log_sum_exp(std::span<const double> v);

// softmax(v / temperature); temperature must be > 0.
std::vector<double> softmax(std::span<const double> v, double temperature = 1.0);

// Pulls an upstream probability-space gradient back to logit space:
// g[i] = q[i] * (u[i] - sum_j q[j]*u[j]). The output sums to zero.
std::vector<double> softmax_vjp(std::span<const double> q,
                                std::span<const double> upstream);

// sum_i w[i] * v[i]
double weighted_mean(std::span<const double> v, std::span<const double> w);

// v - weighted_mean(v, w) * 1; weighted_mean(center(v, w), w) == 0.
std::vector<double> center(std::span<const double> v, std::span<const double> w);

// Draws an index from p by cumulative-sum inversion with strict inequality
// (smallest i with u < cum[i]), so zero-probability entries are never
// selected and seeds reproduce bit-identically.
int sample_categorical(std::span<const double> p, Rng& rng);

}  // namespace csd

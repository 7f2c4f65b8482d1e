#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csdistill/logit_math.hpp"
#include "csdistill/rng.hpp"

namespace csd {

// O(V^2) reference paths (score-matrix, brute-force loss/gradient) refuse to
// run above this vocabulary size.
inline constexpr int kOracleMaxVocab = 1024;

// ------------------------------------------------------------------ weighting

// Weighting choice for logit-level losses. Teacher/Uniform/StudentDetached
// resolve to softmax(teacher), 1/V, softmax(student); Explicit carries a user
// probability vector. StudentDetached is a stop-gradient snapshot: once
// resolved, the weights are plain constants and no gradient flows through
// them.
struct WeightingScheme {
    enum class Kind { Teacher, Uniform, StudentDetached, Explicit };
    Kind kind = Kind::StudentDetached;
    std::vector<double> explicit_weights;

    static WeightingScheme teacher() { return {Kind::Teacher, {}}; }
    static WeightingScheme uniform() { return {Kind::Uniform, {}}; }
    static WeightingScheme student_detached() { return {Kind::StudentDetached, {}}; }
    static WeightingScheme explicit_of(std::vector<double> w);

    // Accepts "T"/"teacher", "U"/"uniform", "S"/"student" (case-insensitive).
    static WeightingScheme parse(const std::string& text);
    std::string name() const;  // "T", "U", "S" or "explicit"

    // False only for Explicit vectors carrying zero entries. Such weights are
    // legal inputs but void the positive-weighting optimality guarantees.
    bool strictly_positive() const;
};

std::vector<double> resolve_weighting(const WeightingScheme& scheme,
                                      std::span<const double> teacher_logits,
                                      std::span<const double> student_logits);

// ------------------------------------------------------------------ objective

struct ObjectiveKind {
    enum class Tag { Csd, Dld, Kl, Rkl, SymKl, Jeffrey, Tv, Gjs, Skl, Srkl, Ab };
    Tag tag = Tag::Csd;

    WeightingScheme w1 = WeightingScheme::student_detached();  // Csd / Dld
    WeightingScheme w2 = WeightingScheme::student_detached();  // Csd only
    double gjs_beta = 0.9;
    double skew_alpha = 0.1;
    double ab_alpha = 0.2;
    double ab_beta = 0.7;

    // Csd only: > 0 selects the Monte Carlo gradient estimator with that many
    // samples; 0 selects the analytic gradient.
    int mc_samples = 0;

    // Compact descriptor: "csd(S,S)", "dld(U)", "kl", "gjs(0.9)",
    // "ab(0.2,0.7)", "csd_mc(S,S,8)".
    static ObjectiveKind parse(const std::string& text);
    std::string name() const;     // kind plus numeric parameters
    std::string w1_name() const;  // "-" when the kind has no weighting
    std::string w2_name() const;

    bool is_probability_space() const;  // true for everything except Csd/Dld
    void validate() const;              // throws naming the offending field
};

struct GradientResult {
    std::vector<double> dloss_dlogits;
    // Absent for the analytic/MC CSD paths (the loss itself is O(V^2)).
    std::optional<double> loss;
    // Weighted residual means E_w[f_student - f_teacher]; populated by the
    // CSD paths (both weights) and DLD (w1 slot).
    std::optional<double> residual_mean_w1;
    std::optional<double> residual_mean_w2;
};

// ------------------------------------------------------- score-matching oracle

// Matrix of probability ratios, entry (y, x) = q[x]/q[y]. Reference-scale
// only (V <= kOracleMaxVocab); construction fails if any ratio overflows.
struct ConcreteScoreMatrix {
    int vocab = 0;
    std::vector<double> ratios;  // row-major, row index y
    double at(int y, int x) const {
        return ratios[static_cast<std::size_t>(y) * vocab + x];
    }
};

ConcreteScoreMatrix concrete_score_matrix(std::span<const double> probs);

// Raw concrete score-matching loss
//   1/2 sum_y sum_x w(y,x) * (q(x)/q(y) - p(x)/p(y))^2
// with q = softmax(student), p = softmax(teacher). Kept as a reference oracle
// for the instability the log transform removes: ratios blow up once teacher
// logits spread out, and a non-finite ratio is reported as an error instead
// of saturating.
double csm_oracle_loss(std::span<const double> student_logits,
                       std::span<const double> teacher_logits,
                       std::span<const double> pair_weights);  // V*V row-major

// --------------------------------------------------------------- CSD objective

// 1/2 sum_y sum_x w1(y) w2(x) (f_s[x] - f_s[y] - f_t[x] + f_t[y])^2,
// by explicit double summation. V <= kOracleMaxVocab.
double csd_loss_bruteforce(std::span<const double> student_logits,
                           std::span<const double> teacher_logits,
                           std::span<const double> w1,
                           std::span<const double> w2);

// Exact gradient of csd_loss_bruteforce via the pairwise double sum; the loss
// field is populated. V <= kOracleMaxVocab.
GradientResult csd_grad_bruteforce(std::span<const double> student_logits,
                                   std::span<const double> teacher_logits,
                                   std::span<const double> w1,
                                   std::span<const double> w2);

// Linear-time analytic gradient. With residual r = f_s - f_t:
//   g[y] = w1(y) * (r[y] - E_w2[r]) + w2(y) * (r[y] - E_w1[r]).
// Teacher logits and resolved weights are constants. No size guard; the loss
// field is absent (evaluating it would be O(V^2)).
GradientResult csd_grad_analytic(std::span<const double> student_logits,
                                 std::span<const double> teacher_logits,
                                 std::span<const double> w1,
                                 std::span<const double> w2);

// Monte Carlo estimator: draws n_samples indices y ~ w1 and averages the
// O(V) single-y gradients (which flow through both f_s[x] and f_s[y]).
// Unbiased for csd_grad_analytic; coincides with it exactly when w1 is
// one-hot.
GradientResult csd_grad_mc(std::span<const double> student_logits,
                           std::span<const double> teacher_logits,
                           std::span<const double> w1,
                           std::span<const double> w2,
                           Rng& rng, int n_samples);

// ------------------------------------------------------------ other objectives

// Direct logit distillation: loss 1/2 sum_y w(y) (f_s[y] - f_t[y])^2,
// gradient w(y) * (f_s[y] - f_t[y]).
GradientResult dld(std::span<const double> student_logits,
                   std::span<const double> teacher_logits,
                   std::span<const double> w);

// Probability-space losses (KL, RKL, SymKL, Jeffrey, TV, GJS, SKL, SRKL, AB):
// forms dL/dq from p = softmax(teacher), q = softmax(student) and maps it to
// logit space through softmax_vjp. Loss populated.
GradientResult divergence_grad(const ObjectiveKind& kind,
                               std::span<const double> student_logits,
                               std::span<const double> teacher_logits);

// Single entry point used by the trainer: resolves weights and routes to
// csd_grad_analytic, dld or divergence_grad. CSD with mc_samples > 0 requires
// mc_rng and routes to csd_grad_mc instead.
GradientResult objective_dispatch(const ObjectiveKind& kind,
                                  std::span<const double> student_logits,
                                  std::span<const double> teacher_logits,
                                  Rng* mc_rng = nullptr);

}  // namespace csd

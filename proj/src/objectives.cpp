#include "csdistill/objectives.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "csdistill/errors.hpp"

namespace csd {

namespace {

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string format_number(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", x);
    return buf;
}

void check_lengths(std::span<const double> a, std::span<const double> b,
                   const char* what) {
    if (a.size() != b.size()) {
        throw Error(std::string(what) + ": length mismatch (" +
                    std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
}

void check_oracle_vocab(std::size_t vocab, const char* what) {
    if (vocab > static_cast<std::size_t>(kOracleMaxVocab)) {
        throw Error(std::string(what) + ": vocabulary " + std::to_string(vocab) +
                    " exceeds the O(V^2) oracle guard of " +
                    std::to_string(kOracleMaxVocab));
    }
}

double clampp(double p) { return std::max(p, kProbFloor); }

// Loss value and dL/dq for one probability-space objective.
struct ProbSpaceLoss {
    double loss = 0.0;
    std::vector<double> dloss_dq;
};

ProbSpaceLoss kl_forward(std::span<const double> q, std::span<const double> p) {
    ProbSpaceLoss out;
    out.dloss_dq.resize(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (p[i] > 0.0) out.loss += p[i] * (std::log(clampp(p[i])) - std::log(clampp(q[i])));
        out.dloss_dq[i] = -p[i] / clampp(q[i]);
    }
    return out;
}

ProbSpaceLoss kl_reverse(std::span<const double> q, std::span<const double> p) {
    ProbSpaceLoss out;
    out.dloss_dq.resize(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double lqp = std::log(clampp(q[i])) - std::log(clampp(p[i]));
        if (q[i] > 0.0) out.loss += q[i] * lqp;
        out.dloss_dq[i] = lqp + 1.0;
    }
    return out;
}

ProbSpaceLoss prob_space_loss(const ObjectiveKind& kind,
                              std::span<const double> q,
                              std::span<const double> p) {
    const std::size_t n = q.size();
    ProbSpaceLoss out;
    out.dloss_dq.resize(n);

    switch (kind.tag) {
        case ObjectiveKind::Tag::Kl:
            return kl_forward(q, p);
        case ObjectiveKind::Tag::Rkl:
            return kl_reverse(q, p);
        case ObjectiveKind::Tag::SymKl:
        case ObjectiveKind::Tag::Jeffrey: {
            // The paper lists both as baselines; they differ by a factor of
            // two (mean vs. sum of KL and RKL), so both are kept distinct.
            const double scale = kind.tag == ObjectiveKind::Tag::SymKl ? 0.5 : 1.0;
            const ProbSpaceLoss f = kl_forward(q, p);
            const ProbSpaceLoss r = kl_reverse(q, p);
            out.loss = scale * (f.loss + r.loss);
            for (std::size_t i = 0; i < n; ++i) {
                out.dloss_dq[i] = scale * (f.dloss_dq[i] + r.dloss_dq[i]);
            }
            return out;
        }
        case ObjectiveKind::Tag::Tv: {
            for (std::size_t i = 0; i < n; ++i) {
                const double d = q[i] - p[i];
                out.loss += 0.5 * std::abs(d);
                out.dloss_dq[i] = d > 0.0 ? 0.5 : (d < 0.0 ? -0.5 : 0.0);
            }
            return out;
        }
        case ObjectiveKind::Tag::Gjs: {
            const double b = kind.gjs_beta;
            for (std::size_t i = 0; i < n; ++i) {
                const double m = clampp(b * p[i] + (1.0 - b) * q[i]);
                if (p[i] > 0.0) out.loss += b * p[i] * (std::log(clampp(p[i])) - std::log(m));
                if (q[i] > 0.0) out.loss += (1.0 - b) * q[i] * (std::log(clampp(q[i])) - std::log(m));
                out.dloss_dq[i] = (1.0 - b) * (std::log(clampp(q[i])) - std::log(m));
            }
            return out;
        }
        case ObjectiveKind::Tag::Skl: {
            const double a = kind.skew_alpha;
            for (std::size_t i = 0; i < n; ++i) {
                const double m = clampp(a * p[i] + (1.0 - a) * q[i]);
                if (p[i] > 0.0) out.loss += p[i] * (std::log(clampp(p[i])) - std::log(m));
                out.dloss_dq[i] = -(1.0 - a) * p[i] / m;
            }
            return out;
        }
        case ObjectiveKind::Tag::Srkl: {
            const double a = kind.skew_alpha;
            for (std::size_t i = 0; i < n; ++i) {
                const double m = clampp(a * q[i] + (1.0 - a) * p[i]);
                if (q[i] > 0.0) out.loss += q[i] * (std::log(clampp(q[i])) - std::log(m));
                out.dloss_dq[i] = std::log(clampp(q[i])) - std::log(m) + 1.0 - a * q[i] / m;
            }
            return out;
        }
        case ObjectiveKind::Tag::Ab: {
            const double a = kind.ab_alpha;
            const double b = kind.ab_beta;
            const double s = a + b;
            for (std::size_t i = 0; i < n; ++i) {
                const double pc = clampp(p[i]);
                const double qc = clampp(q[i]);
                const double pa = std::pow(pc, a);
                const double qb = std::pow(qc, b);
                out.loss += -1.0 / (a * b) *
                            (pa * qb - a / s * std::pow(pc, s) - b / s * std::pow(qc, s));
                out.dloss_dq[i] = -(1.0 / a) * (pa * std::pow(qc, b - 1.0) - std::pow(qc, s - 1.0));
            }
            return out;
        }
        default:
            throw Error("prob_space_loss: objective '" + kind.name() +
                        "' is not a probability-space loss");
    }
}

}  // namespace

// ------------------------------------------------------------------ weighting

WeightingScheme WeightingScheme::explicit_of(std::vector<double> w) {
    WeightingScheme s;
    s.kind = Kind::Explicit;
    s.explicit_weights = std::move(w);
    return s;
}

WeightingScheme WeightingScheme::parse(const std::string& text) {
    const std::string t = lower(text);
    if (t == "t" || t == "teacher") return teacher();
    if (t == "u" || t == "uniform") return uniform();
    if (t == "s" || t == "student" || t == "student_detached") return student_detached();
    throw ConfigError("unknown weighting '" + text + "' (expected T, U or S)");
}

std::string WeightingScheme::name() const {
    switch (kind) {
        case Kind::Teacher: return "T";
        case Kind::Uniform: return "U";
        case Kind::StudentDetached: return "S";
        case Kind::Explicit: return "explicit";
    }
    return "?";
}

bool WeightingScheme::strictly_positive() const {
    if (kind != Kind::Explicit) return true;
    return std::all_of(explicit_weights.begin(), explicit_weights.end(),
                       [](double w) { return w > 0.0; });
}

std::vector<double> resolve_weighting(const WeightingScheme& scheme,
                                      std::span<const double> teacher_logits,
                                      std::span<const double> student_logits) {
    check_lengths(teacher_logits, student_logits, "resolve_weighting");
    const std::size_t vocab = teacher_logits.size();
    switch (scheme.kind) {
        case WeightingScheme::Kind::Teacher:
            return softmax(teacher_logits);
        case WeightingScheme::Kind::Uniform:
            return std::vector<double>(vocab, 1.0 / static_cast<double>(vocab));
        case WeightingScheme::Kind::StudentDetached:
            // Fresh stop-gradient snapshot of the current student distribution.
            return softmax(student_logits);
        case WeightingScheme::Kind::Explicit: {
            const auto& w = scheme.explicit_weights;
            if (w.size() != vocab) {
                throw Error("explicit weighting has length " + std::to_string(w.size()) +
                            ", expected " + std::to_string(vocab));
            }
            double sum = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) {
                if (!(w[i] >= 0.0) || !std::isfinite(w[i])) {
                    throw Error("explicit weighting has invalid entry at index " +
                                std::to_string(i));
                }
                sum += w[i];
            }
            if (std::abs(sum - 1.0) > 1e-9) {
                throw Error("explicit weighting sums to " + format_number(sum) +
                            ", expected 1 within 1e-9");
            }
            return w;
        }
    }
    throw Error("resolve_weighting: bad scheme kind");
}

// ------------------------------------------------------------------ objective

ObjectiveKind ObjectiveKind::parse(const std::string& text) {
    std::string head = text;
    std::vector<std::string> args;
    const auto open = text.find('(');
    if (open != std::string::npos) {
        if (text.back() != ')') throw ConfigError("objective '" + text + "': missing ')'");
        head = text.substr(0, open);
        std::string inner = text.substr(open + 1, text.size() - open - 2);
        std::string cur;
        for (char c : inner) {
            if (c == ',') {
                args.push_back(cur);
                cur.clear();
            } else if (!std::isspace(static_cast<unsigned char>(c))) {
                cur += c;
            }
        }
        if (!cur.empty() || !args.empty()) args.push_back(cur);
    }
    head = lower(head);

    const auto want_args = [&](std::size_t lo, std::size_t hi) {
        if (args.size() < lo || args.size() > hi) {
            throw ConfigError("objective '" + text + "': expected between " +
                              std::to_string(lo) + " and " + std::to_string(hi) +
                              " arguments, got " + std::to_string(args.size()));
        }
    };
    const auto num = [&](const std::string& s) {
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("objective '" + text + "': bad numeric argument '" + s + "'");
        }
    };

    ObjectiveKind k;
    if (head == "csd" || head == "csd_mc") {
        k.tag = Tag::Csd;
        want_args(0, head == "csd" ? 2 : 3);
        if (args.size() >= 1) k.w1 = WeightingScheme::parse(args[0]);
        if (args.size() >= 2) k.w2 = WeightingScheme::parse(args[1]);
        if (head == "csd_mc") {
            k.mc_samples = args.size() >= 3 ? static_cast<int>(num(args[2])) : 1;
        }
    } else if (head == "dld") {
        k.tag = Tag::Dld;
        want_args(0, 1);
        k.w1 = args.empty() ? WeightingScheme::student_detached()
                            : WeightingScheme::parse(args[0]);
    } else if (head == "kl") {
        k.tag = Tag::Kl;
        want_args(0, 0);
    } else if (head == "rkl") {
        k.tag = Tag::Rkl;
        want_args(0, 0);
    } else if (head == "symkl" || head == "sym_kl") {
        k.tag = Tag::SymKl;
        want_args(0, 0);
    } else if (head == "jeffrey") {
        k.tag = Tag::Jeffrey;
        want_args(0, 0);
    } else if (head == "tv") {
        k.tag = Tag::Tv;
        want_args(0, 0);
    } else if (head == "gjs") {
        k.tag = Tag::Gjs;
        want_args(0, 1);
        if (!args.empty()) k.gjs_beta = num(args[0]);
    } else if (head == "skl") {
        k.tag = Tag::Skl;
        want_args(0, 1);
        if (!args.empty()) k.skew_alpha = num(args[0]);
    } else if (head == "srkl") {
        k.tag = Tag::Srkl;
        want_args(0, 1);
        if (!args.empty()) k.skew_alpha = num(args[0]);
    } else if (head == "ab") {
        k.tag = Tag::Ab;
        want_args(0, 2);
        if (args.size() >= 1) k.ab_alpha = num(args[0]);
        if (args.size() >= 2) k.ab_beta = num(args[1]);
    } else {
        throw ConfigError("unknown objective kind '" + text + "'");
    }
    k.validate();
    return k;
}

std::string ObjectiveKind::name() const {
    switch (tag) {
        case Tag::Csd:
            return mc_samples > 0 ? "csd_mc(" + std::to_string(mc_samples) + ")" : "csd";
        case Tag::Dld: return "dld";
        case Tag::Kl: return "kl";
        case Tag::Rkl: return "rkl";
        case Tag::SymKl: return "symkl";
        case Tag::Jeffrey: return "jeffrey";
        case Tag::Tv: return "tv";
        case Tag::Gjs: return "gjs(" + format_number(gjs_beta) + ")";
        case Tag::Skl: return "skl(" + format_number(skew_alpha) + ")";
        case Tag::Srkl: return "srkl(" + format_number(skew_alpha) + ")";
        case Tag::Ab:
            return "ab(" + format_number(ab_alpha) + "," + format_number(ab_beta) + ")";
    }
    return "?";
}

std::string ObjectiveKind::w1_name() const {
    return (tag == Tag::Csd || tag == Tag::Dld) ? w1.name() : "-";
}

std::string ObjectiveKind::w2_name() const {
    return tag == Tag::Csd ? w2.name() : "-";
}

bool ObjectiveKind::is_probability_space() const {
    return tag != Tag::Csd && tag != Tag::Dld;
}

void ObjectiveKind::validate() const {
    if (tag == Tag::Gjs && !(gjs_beta > 0.0 && gjs_beta < 1.0)) {
        throw ConfigError("objective.beta: GJS smoothing must lie in (0,1), got " +
                          format_number(gjs_beta));
    }
    if ((tag == Tag::Skl || tag == Tag::Srkl) &&
        !(skew_alpha > 0.0 && skew_alpha < 1.0)) {
        throw ConfigError("objective.alpha: skew parameter must lie in (0,1), got " +
                          format_number(skew_alpha));
    }
    if (tag == Tag::Ab) {
        if (ab_alpha == 0.0 || ab_beta == 0.0 || ab_alpha + ab_beta == 0.0 ||
            !std::isfinite(ab_alpha) || !std::isfinite(ab_beta)) {
            throw ConfigError("objective.ab_alpha/ab_beta: AB divergence requires "
                              "nonzero alpha, beta and alpha+beta");
        }
    }
    if (mc_samples < 0) {
        throw ConfigError("objective.mc_samples must be >= 0, got " +
                          std::to_string(mc_samples));
    }
    if (mc_samples > 0 && tag != Tag::Csd) {
        throw ConfigError("objective.mc_samples applies to the csd objective only");
    }
}

// ------------------------------------------------------- score-matching oracle

ConcreteScoreMatrix concrete_score_matrix(std::span<const double> probs) {
    check_probs(probs);
    check_oracle_vocab(probs.size(), "concrete_score_matrix");
    const int vocab = static_cast<int>(probs.size());
    ConcreteScoreMatrix m;
    m.vocab = vocab;
    m.ratios.resize(static_cast<std::size_t>(vocab) * vocab);
    for (int y = 0; y < vocab; ++y) {
        for (int x = 0; x < vocab; ++x) {
            const double r = y == x ? 1.0 : probs[x] / probs[y];
            if (!std::isfinite(r)) {
                throw Error("concrete score ratio overflow at pair (" +
                            std::to_string(y) + "," + std::to_string(x) + ")");
            }
            m.ratios[static_cast<std::size_t>(y) * vocab + x] = r;
        }
    }
    return m;
}

double csm_oracle_loss(std::span<const double> student_logits,
                       std::span<const double> teacher_logits,
                       std::span<const double> pair_weights) {
    check_lengths(student_logits, teacher_logits, "csm_oracle_loss");
    check_oracle_vocab(student_logits.size(), "csm_oracle_loss");
    const std::size_t vocab = student_logits.size();
    if (pair_weights.size() != vocab * vocab) {
        throw Error("csm_oracle_loss: weight matrix has " +
                    std::to_string(pair_weights.size()) + " entries, expected " +
                    std::to_string(vocab * vocab));
    }
    for (double w : pair_weights) {
        if (!(w > 0.0)) throw Error("csm_oracle_loss: weights must be entrywise positive");
    }
    const ConcreteScoreMatrix sq = concrete_score_matrix(softmax(student_logits));
    const ConcreteScoreMatrix sp = concrete_score_matrix(softmax(teacher_logits));
    double loss = 0.0;
    for (std::size_t y = 0; y < vocab; ++y) {
        for (std::size_t x = 0; x < vocab; ++x) {
            const double d = sq.ratios[y * vocab + x] - sp.ratios[y * vocab + x];
            loss += 0.5 * pair_weights[y * vocab + x] * d * d;
        }
    }
    if (!std::isfinite(loss)) {
        throw Error("csm_oracle_loss overflowed: probability ratios diverged");
    }
    return loss;
}

// --------------------------------------------------------------- CSD objective

double csd_loss_bruteforce(std::span<const double> student_logits,
                           std::span<const double> teacher_logits,
                           std::span<const double> w1,
                           std::span<const double> w2) {
    check_logits(student_logits);
    check_lengths(student_logits, teacher_logits, "csd_loss_bruteforce");
    check_oracle_vocab(student_logits.size(), "csd_loss_bruteforce");
    check_probs(w1);
    check_probs(w2);
    check_lengths(student_logits, w1, "csd_loss_bruteforce weights");
    const std::size_t vocab = student_logits.size();
    std::vector<double> r(vocab);
    for (std::size_t i = 0; i < vocab; ++i) r[i] = student_logits[i] - teacher_logits[i];
    double loss = 0.0;
    for (std::size_t y = 0; y < vocab; ++y) {
        for (std::size_t x = 0; x < vocab; ++x) {
            const double d = r[x] - r[y];
            loss += 0.5 * w1[y] * w2[x] * d * d;
        }
    }
    return loss;
}

GradientResult csd_grad_bruteforce(std::span<const double> student_logits,
                                   std::span<const double> teacher_logits,
                                   std::span<const double> w1,
                                   std::span<const double> w2) {
    check_logits(student_logits);
    check_lengths(student_logits, teacher_logits, "csd_grad_bruteforce");
    check_oracle_vocab(student_logits.size(), "csd_grad_bruteforce");
    check_probs(w1);
    check_probs(w2);
    check_lengths(student_logits, w1, "csd_grad_bruteforce weights");
    const std::size_t vocab = student_logits.size();
    std::vector<double> r(vocab);
    for (std::size_t i = 0; i < vocab; ++i) r[i] = student_logits[i] - teacher_logits[i];

    GradientResult out;
    out.dloss_dlogits.assign(vocab, 0.0);
    double loss = 0.0;
    for (std::size_t y = 0; y < vocab; ++y) {
        for (std::size_t x = 0; x < vocab; ++x) {
            const double d = r[x] - r[y];
            const double c = w1[y] * w2[x] * d;
            loss += 0.5 * c * d;
            out.dloss_dlogits[x] += c;
            out.dloss_dlogits[y] -= c;
        }
    }
    out.loss = loss;
    out.residual_mean_w1 = weighted_mean(r, w1);
    out.residual_mean_w2 = weighted_mean(r, w2);
    return out;
}

GradientResult csd_grad_analytic(std::span<const double> student_logits,
                                 std::span<const double> teacher_logits,
                                 std::span<const double> w1,
                                 std::span<const double> w2) {
    check_logits(student_logits);
    check_lengths(student_logits, teacher_logits, "csd_grad_analytic");
    check_probs(w1);
    check_probs(w2);
    check_lengths(student_logits, w1, "csd_grad_analytic weights");
    const std::size_t vocab = student_logits.size();
    std::vector<double> r(vocab);
    for (std::size_t i = 0; i < vocab; ++i) r[i] = student_logits[i] - teacher_logits[i];
    const double m1 = weighted_mean(r, w1);
    const double m2 = weighted_mean(r, w2);

    GradientResult out;
    out.dloss_dlogits.resize(vocab);
    for (std::size_t y = 0; y < vocab; ++y) {
        out.dloss_dlogits[y] = w1[y] * (r[y] - m2) + w2[y] * (r[y] - m1);
    }
    out.residual_mean_w1 = m1;
    out.residual_mean_w2 = m2;
    return out;
}

GradientResult csd_grad_mc(std::span<const double> student_logits,
                           std::span<const double> teacher_logits,
                           std::span<const double> w1,
                           std::span<const double> w2,
                           Rng& rng, int n_samples) {
    check_logits(student_logits);
    check_lengths(student_logits, teacher_logits, "csd_grad_mc");
    check_probs(w1);
    check_probs(w2);
    check_lengths(student_logits, w1, "csd_grad_mc weights");
    if (n_samples <= 0) {
        throw Error("csd_grad_mc: n_samples must be positive, got " +
                    std::to_string(n_samples));
    }
    const std::size_t vocab = student_logits.size();
    std::vector<double> r(vocab);
    for (std::size_t i = 0; i < vocab; ++i) r[i] = student_logits[i] - teacher_logits[i];
    const double m1 = weighted_mean(r, w1);
    const double m2 = weighted_mean(r, w2);

    // Single-sample gradient for a drawn y:
    //   g[z] = w2(z) (r[z] - r[y])          for z != y
    //   g[y] = w2(y) (r[y] - r[y]) + (r[y] - E_w2[r])
    // The arithmetic mirrors csd_grad_analytic term-for-term so a one-hot w1
    // reproduces the analytic gradient bit-exactly. A running mean keeps that
    // exactness for any n_samples.
    GradientResult out;
    out.dloss_dlogits.assign(vocab, 0.0);
    std::vector<double> g(vocab);
    for (int s = 0; s < n_samples; ++s) {
        const int y = sample_categorical(w1, rng);
        for (std::size_t z = 0; z < vocab; ++z) g[z] = w2[z] * (r[z] - r[y]);
        g[static_cast<std::size_t>(y)] += r[static_cast<std::size_t>(y)] - m2;
        const double inv = 1.0 / static_cast<double>(s + 1);
        for (std::size_t z = 0; z < vocab; ++z) {
            out.dloss_dlogits[z] += (g[z] - out.dloss_dlogits[z]) * inv;
        }
    }
    out.residual_mean_w1 = m1;
    out.residual_mean_w2 = m2;
    return out;
}

// ------------------------------------------------------------ other objectives

GradientResult dld(std::span<const double> student_logits,
                   std::span<const double> teacher_logits,
                   std::span<const double> w) {
    check_logits(student_logits);
    check_lengths(student_logits, teacher_logits, "dld");
    check_probs(w);
    check_lengths(student_logits, w, "dld weights");
    const std::size_t vocab = student_logits.size();
    GradientResult out;
    out.dloss_dlogits.resize(vocab);
    double loss = 0.0;
    double rmean = 0.0;
    for (std::size_t y = 0; y < vocab; ++y) {
        const double r = student_logits[y] - teacher_logits[y];
        loss += 0.5 * w[y] * r * r;
        out.dloss_dlogits[y] = w[y] * r;
        rmean += w[y] * r;
    }
    out.loss = loss;
    out.residual_mean_w1 = rmean;
    return out;
}

GradientResult divergence_grad(const ObjectiveKind& kind,
                               std::span<const double> student_logits,
                               std::span<const double> teacher_logits) {
    if (!kind.is_probability_space()) {
        throw Error("divergence_grad: objective '" + kind.name() +
                    "' is not a probability-space loss");
    }
    kind.validate();
    check_logits(student_logits);
    check_lengths(student_logits, teacher_logits, "divergence_grad");
    const std::vector<double> q = softmax(student_logits);
    const std::vector<double> p = softmax(teacher_logits);
    ProbSpaceLoss l = prob_space_loss(kind, q, p);
    GradientResult out;
    out.dloss_dlogits = softmax_vjp(q, l.dloss_dq);
    out.loss = l.loss;
    return out;
}

GradientResult objective_dispatch(const ObjectiveKind& kind,
                                  std::span<const double> student_logits,
                                  std::span<const double> teacher_logits,
                                  Rng* mc_rng) {
    kind.validate();
    switch (kind.tag) {
        case ObjectiveKind::Tag::Csd: {
            const std::vector<double> w1 =
                resolve_weighting(kind.w1, teacher_logits, student_logits);
            const std::vector<double> w2 =
                resolve_weighting(kind.w2, teacher_logits, student_logits);
            if (kind.mc_samples > 0) {
                if (mc_rng == nullptr) {
                    throw Error("objective.mc_samples: the Monte Carlo estimator "
                                "needs an rng-backed call path");
                }
                return csd_grad_mc(student_logits, teacher_logits, w1, w2, *mc_rng,
                                   kind.mc_samples);
            }
            return csd_grad_analytic(student_logits, teacher_logits, w1, w2);
        }
        case ObjectiveKind::Tag::Dld: {
            const std::vector<double> w =
                resolve_weighting(kind.w1, teacher_logits, student_logits);
            return dld(student_logits, teacher_logits, w);
        }
        default:
            return divergence_grad(kind, student_logits, teacher_logits);
    }
}

}  // namespace csd

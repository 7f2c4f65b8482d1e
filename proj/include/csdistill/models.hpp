#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "csdistill/rng.hpp"

namespace csd {

// Token 0 is reserved for left-padding short contexts; it never appears
// inside sequences and is masked out of every sampling distribution.
inline constexpr int kPadToken = 0;

// LogitTable models refuse context keys beyond this row count (V^k guard).
inline constexpr std::int64_t kMaxTableRows = std::int64_t{1} << 20;

enum class ModelFamily { LogitTable, WindowMlp };

const char* family_name(ModelFamily family);
ModelFamily parse_family(const std::string& text);

struct ModelConfig {
    ModelFamily family = ModelFamily::LogitTable;
    int vocab_size = 2;
    int context_window = 1;  // k: tokens of context the model conditions on
    int embed_dim = 0;       // WindowMlp only
    int hidden_dim = 0;      // WindowMlp only

    void validate() const;
    std::int64_t table_rows() const;   // LogitTable: V^k
    std::int64_t param_count() const;
};

// Per-call activations needed to backpropagate; single-use.
struct ForwardTrace {
    std::int64_t row = -1;       // LogitTable
    std::vector<int> window;     // WindowMlp: padded context
    std::vector<double> input;   // WindowMlp: concatenated embeddings
    std::vector<double> hidden;  // WindowMlp: tanh activations
    bool consumed = false;
};

// A tiny autoregressive LM over a flat parameter vector.
//
// LogitTable: one logit row per context key, the universal family for its
// window length. WindowMlp: embed -> concat -> tanh hidden -> output affine,
// the constrained-capacity family. Layout of the flat vector:
//   LogitTable: V^k rows by V logits, row-major.
//   WindowMlp:  embedding (V x d) | W1 (h x k*d) | b1 (h) | W2 (V x h) | b2 (V).
class TinyLM {
public:
    TinyLM() = default;

    // Parameters i.i.d. uniform in [-scale, scale] from the seeded stream.
    static TinyLM init(const ModelConfig& config, std::uint64_t seed, double scale);

    const ModelConfig& config() const { return config_; }
    std::uint64_t init_seed() const { return seed_; }
    std::int64_t param_count() const { return static_cast<std::int64_t>(params_.size()); }
    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    // context holds the most recent tokens, length <= k; shorter contexts are
    // left-padded with kPadToken. Deterministic.
    std::vector<double> forward_logits(std::span<const int> context) const;
    ForwardTrace forward(std::span<const int> context, std::vector<double>& logits) const;

    // Accumulates (d logits / d params)^T * dlogits into grad (caller-owned,
    // sized param_count). Consumes the trace; reuse is an error.
    void backward(ForwardTrace& trace, std::span<const double> dlogits,
                  std::span<double> grad) const;

private:
    std::int64_t context_row(std::span<const int> context) const;
    void pad_window(std::span<const int> context, std::vector<int>& window) const;

    ModelConfig config_{};
    std::uint64_t seed_ = 0;
    std::vector<double> params_;
    // WindowMlp offsets into params_
    std::int64_t off_w1_ = 0, off_b1_ = 0, off_w2_ = 0, off_b2_ = 0;

    friend TinyLM load_checkpoint(const std::string& path);
};

// Checkpoint I/O: a single JSON document with format_version, family, dims,
// seed and the flat parameter array. Round-trips bit-exactly.
void save_checkpoint(const TinyLM& model, const std::string& path);
TinyLM load_checkpoint(const std::string& path);

}  // namespace csd

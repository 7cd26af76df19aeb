#pragma once

#include "tokred/merge.hpp"
#include "tokred/prune.hpp"
#include "tokred/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace tokred::vit {

enum class Method {
    l1,
    l2,
    linf,
    topk,
    evit,
    dynamicvit,
    ats,
    tome,
    kmedoids,
    dpcknn,
    sit,
    sinkhorn,
    patchmerger,
};

Method method_from_name(const std::string& name);
std::string method_name(Method method);
bool is_pruning(Method method);
bool is_hard_merging(Method method);
bool is_soft_merging(Method method);

struct ToyVitConfig {
    int depth = 12;
    int heads = 4;
    int dim = 64;
    int mlp_ratio = 4;
    int input_dim = 0;  // 0 = tokens arrive at model width; else a seeded
                        // linear embedding maps input_dim -> dim
    Grid grid{14, 14};
    std::uint64_t seed = 0;
    bool predictor_head = true;

    // tiny/small/base ladder at desk scale: D in {64, 128, 256} with a
    // constant head width of 16
    static ToyVitConfig preset(const std::string& name, std::uint64_t seed);
    void validate() const;
    void validate_with(const KeepSchedule& schedule) const;
};

struct MethodParams {
    prune::AtsMode ats_mode = prune::AtsMode::fixed_quantile;
    int kmedoids_iters = 3;
    int dpcknn_k = 5;
    double sinkhorn_eps = 1.0;
    int sinkhorn_iters = 3;
    bool tome_use_keys = false;            // score similarity on attention keys
    bool evit_fused_in_later_stages = true;
};

struct ForwardTrace {
    ReductionRecord record;
    std::vector<Vector> cls_probe;        // after each reduction stage, then the final block
    std::vector<std::uint64_t> flops;     // per block, from the documented cost formula
    std::vector<int> token_counts;        // per block input length (CLS included)
    std::vector<int> stage_kept_counts;   // spatial sequence length after each stage
    std::uint64_t total_flops = 0;
};

// Pre-norm ViT blocks with seeded N(0, 0.02) projection weights, identity
// LayerNorm affines, and zero biases. Immutable after construction; forward
// passes are const and reentrant.
class ToyVit {
public:
    explicit ToyVit(const ToyVitConfig& config);

    const ToyVitConfig& config() const { return config_; }

    // Runs the blocks, exposing each stage block's head-averaged CLS
    // attention to the reduction operator. CLS is always retained; the
    // reduction applies to the spatial slots only.
    ForwardTrace forward(const TokenSet& tokens, Method method, const MethodParams& params,
                         const KeepSchedule& schedule, std::uint64_t sample_seed) const;

private:
    struct Block {
        Matrix wq, wk, wv, wo;  // D x D
        Matrix w1, w2;          // D x H, H x D
    };

    struct BlockOutput {
        prune::AttentionSummary cls_attention;
        Matrix keys;  // spatial key projections, for ToMe's key-similarity flag
    };

    BlockOutput run_block(const Block& block, Matrix& sequence) const;

    void apply_stage_reduction(Method method, const MethodParams& params,
                               const KeepSchedule& schedule, std::uint64_t sample_seed, int stage,
                               const BlockOutput& block_out, Matrix& sequence,
                               std::vector<int>& alive, std::vector<std::vector<int>>& members,
                               Matrix& soft_composed, ForwardTrace& trace) const;

    ToyVitConfig config_;
    std::vector<Block> blocks_;
    Matrix embed_;  // input_dim x dim when an embedding is configured
};

ToyVit build_toy_vit(const ToyVitConfig& config);

// Multiply-accumulate counts per block at sequence length t:
// attention 4*t*D^2 + 2*t^2*D, MLP 2*t*D*(mlp_ratio*D).
std::uint64_t attention_flops(int dim, int tokens);
std::uint64_t mlp_flops(int dim, int mlp_ratio, int tokens);
std::uint64_t block_flops(const ToyVitConfig& config, int tokens);

enum class SynthKind { random, blob_planted, center_biased };

SynthKind synth_kind_from_name(const std::string& name);

struct SynthResult {
    TokenSet tokens;
    std::vector<int> labels;  // ground-truth blob per token (blob_planted only)
};

// Desk-scale stand-ins for dataset images. Values are quantized to float32
// so in-memory tokens match their TOKD1 dumps exactly.
SynthResult synth_tokens(Grid grid, int dim, SynthKind kind, std::uint64_t seed, int blobs = 3);

} // namespace tokred::vit

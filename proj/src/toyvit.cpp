#include "tokred/toyvit.hpp"

#include "tokred/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tokred::vit {

namespace {

// seed derivation salts for schedule-dependent weights
constexpr std::uint64_t kSaltDynamicVit = 0x10;
constexpr std::uint64_t kSaltSit = 0x20;
constexpr std::uint64_t kSaltSinkhornQueries = 0x30;
constexpr std::uint64_t kSaltPatchMergerQueries = 0x40;
constexpr std::uint64_t kSaltAts = 0x50;
constexpr std::uint64_t kSaltEmbed = 0x60;

double as_f32(double v) { return double(static_cast<float>(v)); }

Matrix seeded_matrix(int rows, int cols, double sigma, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = sigma * rng.normal();
    return m;
}

Matrix layer_norm(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    const double eps = 1e-6;
    for (int i = 0; i < x.rows(); ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        out.row(i) = (x.row(i).array() - mean) / std::sqrt(var + eps);
    }
    return out;
}

Matrix gelu(const Matrix& x) {
    return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
}

TokenSet slots_to_tokens(const Matrix& sequence, const Vector& cls) {
    TokenSet tokens;
    tokens.spatial = sequence;
    tokens.cls = cls;
    return tokens;
}

} // namespace

Method method_from_name(const std::string& name) {
    static const std::vector<std::pair<std::string, Method>> table = {
        {"l1", Method::l1},           {"l2", Method::l2},
        {"linf", Method::linf},       {"topk", Method::topk},
        {"evit", Method::evit},       {"dynamicvit", Method::dynamicvit},
        {"ats", Method::ats},         {"tome", Method::tome},
        {"kmedoids", Method::kmedoids}, {"dpcknn", Method::dpcknn},
        {"sit", Method::sit},         {"sinkhorn", Method::sinkhorn},
        {"patchmerger", Method::patchmerger},
    };
    for (const auto& [key, value] : table)
        if (key == name) return value;
    throw Error::usage("unknown method '" + name + "'");
}

std::string method_name(Method method) {
    switch (method) {
        case Method::l1: return "l1";
        case Method::l2: return "l2";
        case Method::linf: return "linf";
        case Method::topk: return "topk";
        case Method::evit: return "evit";
        case Method::dynamicvit: return "dynamicvit";
        case Method::ats: return "ats";
        case Method::tome: return "tome";
        case Method::kmedoids: return "kmedoids";
        case Method::dpcknn: return "dpcknn";
        case Method::sit: return "sit";
        case Method::sinkhorn: return "sinkhorn";
        case Method::patchmerger: return "patchmerger";
    }
    throw Error::data("unknown method");
}

bool is_pruning(Method method) {
    switch (method) {
        case Method::l1:
        case Method::l2:
        case Method::linf:
        case Method::topk:
        case Method::evit:
        case Method::dynamicvit:
        case Method::ats: return true;
        default: return false;
    }
}

bool is_hard_merging(Method method) {
    return method == Method::tome || method == Method::kmedoids || method == Method::dpcknn;
}

bool is_soft_merging(Method method) {
    return method == Method::sit || method == Method::sinkhorn || method == Method::patchmerger;
}

ToyVitConfig ToyVitConfig::preset(const std::string& name, std::uint64_t seed) {
    ToyVitConfig config;
    config.seed = seed;
    if (name == "tiny") {
        config.dim = 64;
        config.heads = 4;
    } else if (name == "small") {
        config.dim = 128;
        config.heads = 8;
    } else if (name == "base") {
        config.dim = 256;
        config.heads = 16;
    } else {
        throw Error::usage("unknown preset '" + name + "' (expected tiny, small, or base)");
    }
    return config;
}

void ToyVitConfig::validate() const {
    if (depth < 1) throw Error::data("depth must be positive");
    if (heads < 1 || dim < 1 || dim % heads != 0)
        throw Error::data("dim must be a positive multiple of heads");
    if (mlp_ratio < 1) throw Error::data("mlp_ratio must be positive");
    if (!grid.is_set()) throw Error::data("config needs a token grid");
}

void ToyVitConfig::validate_with(const KeepSchedule& schedule) const {
    validate();
    if (schedule.total_blocks != depth)
        throw Error::data("schedule covers " + std::to_string(schedule.total_blocks) +
                          " blocks but the model has " + std::to_string(depth));
    if (schedule.stage_blocks.back() + 1 > depth)
        throw Error::data("model depth must exceed the last stage block");
    if (schedule.initial_tokens != grid.count())
        throw Error::data("schedule was built for a different token count");
}

ToyVit::ToyVit(const ToyVitConfig& config) : config_(config) {
    config_.validate();
    Rng rng(config_.seed);
    const int d = config_.dim;
    const int hidden = config_.mlp_ratio * d;
    // projection weights ~ N(0, 0.02): wide enough that CLS attention
    // develops real structure at desk-scale widths
    const double sigma = std::sqrt(0.02);
    const auto draw = [&](int rows, int cols) {
        Matrix m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) m(i, j) = sigma * rng.normal();
        return m;
    };
    blocks_.reserve(config_.depth);
    for (int b = 0; b < config_.depth; ++b) {
        Block block;
        block.wq = draw(d, d);
        block.wk = draw(d, d);
        block.wv = draw(d, d);
        block.wo = draw(d, d);
        block.w1 = draw(d, hidden);
        block.w2 = draw(hidden, d);
        blocks_.push_back(std::move(block));
    }
    if (config_.input_dim > 0 && config_.input_dim != d)
        embed_ = seeded_matrix(config_.input_dim, d, sigma, mix_seed(config_.seed, kSaltEmbed));
}

ToyVit build_toy_vit(const ToyVitConfig& config) { return ToyVit(config); }

ToyVit::BlockOutput ToyVit::run_block(const Block& block, Matrix& sequence) const {
    const int tokens = static_cast<int>(sequence.rows());
    const int d = config_.dim;
    const int heads = config_.heads;
    const int head_dim = d / heads;
    const double scale = 1.0 / std::sqrt(double(head_dim));

    const Matrix normed = layer_norm(sequence);
    const Matrix q = normed * block.wq;
    const Matrix k = normed * block.wk;
    const Matrix v = normed * block.wv;

    Matrix attended(tokens, d);
    Vector cls_attention = Vector::Zero(tokens - 1);
    for (int h = 0; h < heads; ++h) {
        const auto qh = q.middleCols(h * head_dim, head_dim);
        const auto kh = k.middleCols(h * head_dim, head_dim);
        const auto vh = v.middleCols(h * head_dim, head_dim);
        Matrix scores = qh * kh.transpose() * scale;
        for (int i = 0; i < tokens; ++i) {
            const double hi = scores.row(i).maxCoeff();
            Eigen::RowVectorXd ex = (scores.row(i).array() - hi).exp();
            scores.row(i) = ex / ex.sum();
        }
        cls_attention += scores.row(0).segment(1, tokens - 1).transpose();
        attended.middleCols(h * head_dim, head_dim) = scores * vh;
    }
    sequence += attended * block.wo;
    sequence += gelu(layer_norm(sequence) * block.w1) * block.w2;

    BlockOutput out;
    out.cls_attention.scores = cls_attention / double(heads);
    out.keys = k.bottomRows(tokens - 1);
    return out;
}

ForwardTrace ToyVit::forward(const TokenSet& tokens, Method method, const MethodParams& params,
                             const KeepSchedule& schedule, std::uint64_t sample_seed) const {
    tokens.validate();
    config_.validate_with(schedule);
    if (!(tokens.grid == config_.grid))
        throw Error::data("token grid does not match the model configuration");
    const int expected_dim = embed_.size() > 0 ? config_.input_dim : config_.dim;
    if (tokens.dim() != expected_dim)
        throw Error::data("token dimension does not match the model configuration");
    if (method == Method::tome && schedule.keep_rate < 0.5)
        throw Error::data("tome cannot run below a 50% keep rate (requested " +
                          std::to_string(schedule.keep_rate) + ")");

    const int initial = tokens.count();
    const int stages = schedule.stages();

    ForwardTrace trace;
    trace.record.method = method_name(method);
    trace.record.keep_rate = schedule.keep_rate;
    trace.record.grid = tokens.grid;
    trace.record.total_blocks = schedule.total_blocks;
    trace.record.stage_blocks = schedule.stage_blocks;

    Matrix sequence(initial + 1, config_.dim);
    if (embed_.size() > 0) {
        sequence.row(0) = tokens.cls.transpose() * embed_;
        sequence.bottomRows(initial) = tokens.spatial * embed_;
    } else {
        sequence.row(0) = tokens.cls.transpose();
        sequence.bottomRows(initial) = tokens.spatial;
    }

    std::vector<int> alive(initial);
    std::iota(alive.begin(), alive.end(), 0);
    std::vector<std::vector<int>> members;
    Matrix soft_composed;
    if (is_hard_merging(method)) {
        members.resize(initial);
        for (int i = 0; i < initial; ++i) members[i] = {i};
    }
    if (is_soft_merging(method)) soft_composed = Matrix::Identity(initial, initial);

    int stage = 0;
    for (int b = 1; b <= config_.depth; ++b) {
        trace.token_counts.push_back(static_cast<int>(sequence.rows()));
        trace.flops.push_back(block_flops(config_, static_cast<int>(sequence.rows())));
        BlockOutput block_out = run_block(blocks_[b - 1], sequence);

        if (stage < stages && b == schedule.stage_blocks[stage]) {
            apply_stage_reduction(method, params, schedule, sample_seed, stage, block_out,
                                  sequence, alive, members, soft_composed, trace);
            trace.cls_probe.push_back(sequence.row(0).transpose());
            ++stage;
        }
    }
    trace.cls_probe.push_back(sequence.row(0).transpose());
    trace.total_flops = std::accumulate(trace.flops.begin(), trace.flops.end(), std::uint64_t{0});
    return trace;
}

void ToyVit::apply_stage_reduction(Method method, const MethodParams& params,
                                   const KeepSchedule& schedule, std::uint64_t sample_seed,
                                   int stage, const BlockOutput& block_out, Matrix& sequence,
                                   std::vector<int>& alive,
                                   std::vector<std::vector<int>>& members, Matrix& soft_composed,
                                   ForwardTrace& trace) const {
    const int spatial = static_cast<int>(sequence.rows()) - 1;
    const int budget = std::min(schedule.budgets[stage], spatial);
    const Vector cls = sequence.row(0).transpose();
    TokenSet current = slots_to_tokens(sequence.bottomRows(spatial), cls);
    const prune::AttentionSummary& att = block_out.cls_attention;

    StageRecord record;

    const auto kept_ids = [&](const std::vector<int>& slots) {
        std::vector<int> ids;
        for (int s : slots)
            if (alive[s] >= 0) ids.push_back(alive[s]);
        std::sort(ids.begin(), ids.end());
        return ids;
    };
    const auto rebuild_pruned = [&](const std::vector<int>& slots, const Vector* fused) {
        Matrix next(slots.size() + (fused ? 1 : 0) + 1, config_.dim);
        next.row(0) = cls.transpose();
        std::vector<int> alive_next;
        alive_next.reserve(slots.size() + 1);
        for (std::size_t k = 0; k < slots.size(); ++k) {
            next.row(static_cast<int>(k) + 1) = current.spatial.row(slots[k]);
            alive_next.push_back(alive[slots[k]]);
        }
        if (fused) {
            next.row(static_cast<int>(slots.size()) + 1) = fused->transpose();
            alive_next.push_back(-1);
        }
        sequence = std::move(next);
        alive = std::move(alive_next);
    };
    const auto apply_hard = [&](const merge::MergeResult& result) {
        const int clusters = result.assignment.clusters;
        std::vector<std::vector<int>> members_next(clusters);
        for (int slot = 0; slot < spatial; ++slot) {
            auto& into = members_next[result.assignment.cluster_of[slot]];
            into.insert(into.end(), members[slot].begin(), members[slot].end());
        }
        record.kind = StageKind::hard_merged;
        record.clusters = clusters;
        record.assignment.assign(static_cast<std::size_t>(trace.record.grid.count()), 0);
        for (int c = 0; c < clusters; ++c) {
            std::sort(members_next[c].begin(), members_next[c].end());
            for (int original : members_next[c]) record.assignment[original] = c;
        }
        record.kept = kept_ids(result.assignment.centers);
        std::vector<int> alive_next(clusters);
        for (int c = 0; c < clusters; ++c) alive_next[c] = alive[result.assignment.centers[c]];
        Matrix next(clusters + 1, config_.dim);
        next.row(0) = cls.transpose();
        next.bottomRows(clusters) = result.tokens.spatial;
        sequence = std::move(next);
        alive = std::move(alive_next);
        members = std::move(members_next);
    };
    const auto apply_soft = [&](const merge::SoftMergeResult& result) {
        const Matrix& weights = result.assignment.weights;
        const int clusters = static_cast<int>(weights.rows());
        // a token survives when it is the argmax representative of its own
        // argmax cluster; the new slot inherits that identity
        std::vector<int> token_best(spatial);
        for (int j = 0; j < spatial; ++j) {
            int best = 0;
            for (int i = 1; i < clusters; ++i)
                if (weights(i, j) > weights(best, j)) best = i;
            token_best[j] = best;
        }
        std::vector<int> alive_next(clusters, -1);
        for (int c = 0; c < clusters; ++c) {
            int rep = 0;
            for (int j = 1; j < spatial; ++j)
                if (weights(c, j) > weights(c, rep)) rep = j;
            if (token_best[rep] == c) alive_next[c] = alive[rep];
        }
        record.kind = StageKind::soft_merged;
        record.clusters = clusters;
        record.weights = weights * soft_composed;
        soft_composed = record.weights;
        record.kept.clear();
        for (int id : alive_next)
            if (id >= 0) record.kept.push_back(id);
        std::sort(record.kept.begin(), record.kept.end());
        Matrix next(clusters + 1, config_.dim);
        next.row(0) = cls.transpose();
        next.bottomRows(clusters) = result.tokens.spatial;
        sequence = std::move(next);
        alive = std::move(alive_next);
    };
    const auto identity_hard_stage = [&]() {
        merge::MergeResult identity;
        identity.assignment.clusters = spatial;
        identity.assignment.cluster_of.resize(spatial);
        std::iota(identity.assignment.cluster_of.begin(), identity.assignment.cluster_of.end(), 0);
        identity.assignment.centers = identity.assignment.cluster_of;
        identity.tokens.spatial = current.spatial;
        apply_hard(identity);
    };

    switch (method) {
        case Method::l1:
        case Method::l2:
        case Method::linf: {
            const prune::LpNorm norm = method == Method::l1   ? prune::LpNorm::l1
                                       : method == Method::l2 ? prune::LpNorm::l2
                                                              : prune::LpNorm::linf;
            const std::vector<int> pattern =
                prune::lp_fixed_pattern(config_.grid, norm, schedule.budgets[stage]);
            std::vector<char> in_pattern(config_.grid.count(), 0);
            for (int i : pattern) in_pattern[i] = 1;
            std::vector<int> slots;
            for (int s = 0; s < spatial; ++s)
                if (alive[s] >= 0 && in_pattern[alive[s]]) slots.push_back(s);
            record.kind = StageKind::pruned;
            record.kept = kept_ids(slots);
            rebuild_pruned(slots, nullptr);
            break;
        }
        case Method::topk: {
            const std::vector<int> slots = prune::topk_prune(att, budget);
            record.kind = StageKind::pruned;
            record.kept = kept_ids(slots);
            rebuild_pruned(slots, nullptr);
            break;
        }
        case Method::evit: {
            // optionally hide previously fused slots from the candidate set
            std::vector<int> candidates(spatial);
            std::iota(candidates.begin(), candidates.end(), 0);
            if (!params.evit_fused_in_later_stages) {
                candidates.clear();
                for (int s = 0; s < spatial; ++s)
                    if (alive[s] >= 0) candidates.push_back(s);
            }
            TokenSet pool;
            pool.cls = cls;
            pool.spatial.resize(candidates.size(), config_.dim);
            prune::AttentionSummary pool_att;
            pool_att.scores.resize(candidates.size());
            for (std::size_t k = 0; k < candidates.size(); ++k) {
                pool.spatial.row(static_cast<int>(k)) = current.spatial.row(candidates[k]);
                pool_att.scores(static_cast<int>(k)) = att.scores(candidates[k]);
            }
            const int pool_budget = std::min(budget, static_cast<int>(candidates.size()));
            const prune::EvitResult evit = prune::evit_reduce(pool, pool_att, pool_budget);
            std::vector<int> slots;
            for (int k : evit.kept) slots.push_back(candidates[k]);
            record.kind = StageKind::pruned;
            record.kept = kept_ids(slots);
            rebuild_pruned(slots, evit.has_fused ? &evit.fused : nullptr);
            break;
        }
        case Method::dynamicvit: {
            if (!config_.predictor_head)
                throw Error::data("model was built without the keep-probability predictor head");
            const Matrix head = seeded_matrix(2, config_.dim, 1.0 / std::sqrt(double(config_.dim)),
                                              mix_seed(config_.seed, kSaltDynamicVit + stage));
            prune::KeepProbabilities probs;
            probs.probs.resize(spatial);
            for (int j = 0; j < spatial; ++j) {
                const Vector logits = head * current.spatial.row(j).transpose();
                const double hi = logits.maxCoeff();
                const double keep = std::exp(logits(0) - hi);
                const double drop = std::exp(logits(1) - hi);
                probs.probs(j) = keep / (keep + drop);
            }
            const std::vector<int> slots = prune::dynamicvit_select(probs, budget);
            record.kind = StageKind::pruned;
            record.kept = kept_ids(slots);
            rebuild_pruned(slots, nullptr);
            break;
        }
        case Method::ats: {
            const std::uint64_t stage_seed = mix_seed(mix_seed(sample_seed, kSaltAts), stage);
            const std::vector<int> slots = prune::ats_sample(att, budget, params.ats_mode,
                                                             stage_seed);
            record.kind = StageKind::pruned;
            record.kept = kept_ids(slots);
            rebuild_pruned(slots, nullptr);
            break;
        }
        case Method::tome: {
            const int merges = std::min(spatial - budget, spatial / 2);
            if (merges <= 0) {
                identity_hard_stage();
            } else {
                apply_hard(merge::tome_merge(current, merges,
                                             params.tome_use_keys ? &block_out.keys : nullptr));
            }
            break;
        }
        case Method::kmedoids: {
            apply_hard(merge::kmedoids_cluster(current, att, budget, params.kmedoids_iters));
            break;
        }
        case Method::dpcknn: {
            const int k_nn = std::min(params.dpcknn_k, spatial - 1);
            apply_hard(merge::dpcknn_cluster(current, budget, k_nn));
            break;
        }
        case Method::sit: {
            const auto predictor = merge::LinearPredictor::seeded(
                budget, config_.dim, mix_seed(config_.seed, kSaltSit + stage));
            apply_soft(merge::sit_merge(current, predictor));
            break;
        }
        case Method::sinkhorn: {
            const auto queries = merge::QueryBank::seeded(
                budget, config_.dim, mix_seed(config_.seed, kSaltSinkhornQueries + stage));
            apply_soft(merge::sinkhorn_merge(current, queries, params.sinkhorn_eps,
                                             params.sinkhorn_iters));
            break;
        }
        case Method::patchmerger: {
            const auto queries = merge::QueryBank::seeded(
                budget, config_.dim, mix_seed(config_.seed, kSaltPatchMergerQueries + stage));
            apply_soft(merge::patchmerger_merge(current, queries));
            break;
        }
    }

    trace.stage_kept_counts.push_back(static_cast<int>(sequence.rows()) - 1);
    trace.record.stages.push_back(std::move(record));
}

std::uint64_t attention_flops(int dim, int tokens) {
    const auto t = std::uint64_t(tokens);
    const auto d = std::uint64_t(dim);
    return 4 * t * d * d + 2 * t * t * d;
}

std::uint64_t mlp_flops(int dim, int mlp_ratio, int tokens) {
    const auto t = std::uint64_t(tokens);
    const auto d = std::uint64_t(dim);
    return 2 * t * d * (std::uint64_t(mlp_ratio) * d);
}

std::uint64_t block_flops(const ToyVitConfig& config, int tokens) {
    return attention_flops(config.dim, tokens) + mlp_flops(config.dim, config.mlp_ratio, tokens);
}

SynthKind synth_kind_from_name(const std::string& name) {
    if (name == "random") return SynthKind::random;
    if (name == "blobs" || name == "blob-planted") return SynthKind::blob_planted;
    if (name == "center" || name == "center-biased") return SynthKind::center_biased;
    throw Error::usage("unknown synth kind '" + name + "'");
}

SynthResult synth_tokens(Grid grid, int dim, SynthKind kind, std::uint64_t seed, int blobs) {
    if (!grid.is_set() || dim < 1) throw Error::data("synth needs a grid and a dimension");
    const int count = grid.count();
    Rng rng(seed);
    SynthResult result;
    result.tokens.grid = grid;
    result.tokens.cls.resize(dim);
    for (int k = 0; k < dim; ++k) result.tokens.cls(k) = as_f32(rng.normal());
    result.tokens.spatial.resize(count, dim);

    switch (kind) {
        case SynthKind::random: {
            for (int i = 0; i < count; ++i)
                for (int k = 0; k < dim; ++k) result.tokens.spatial(i, k) = as_f32(rng.normal());
            break;
        }
        case SynthKind::blob_planted: {
            if (blobs < 1 || blobs > std::min(count, dim))
                throw Error::data("blob count must lie in [1, min(P, D)]");
            // orthonormalized blob directions keep the centers far apart
            Matrix centers(blobs, dim);
            for (int c = 0; c < blobs; ++c) {
                Vector direction(dim);
                for (int k = 0; k < dim; ++k) direction(k) = rng.normal();
                for (int prev = 0; prev < c; ++prev)
                    direction -= direction.dot(centers.row(prev)) * centers.row(prev).transpose();
                centers.row(c) = direction.normalized();
            }
            const double separation = 10.0;
            const double noise = 0.05;
            result.labels.resize(count);
            for (int i = 0; i < count; ++i) {
                const int label = i % blobs;
                result.labels[i] = label;
                for (int k = 0; k < dim; ++k)
                    result.tokens.spatial(i, k) =
                        as_f32(separation * centers(label, k) + noise * rng.normal());
            }
            break;
        }
        case SynthKind::center_biased: {
            const double center_row = (grid.h - 1) / 2.0;
            const double center_col = (grid.w - 1) / 2.0;
            const double max_dist =
                std::hypot(std::max(center_row, grid.h - 1 - center_row),
                           std::max(center_col, grid.w - 1 - center_col));
            for (int i = 0; i < count; ++i) {
                const double dist =
                    std::hypot(i / grid.w - center_row, i % grid.w - center_col);
                const double scale = std::exp(-2.0 * dist / std::max(max_dist, 1.0));
                for (int k = 0; k < dim; ++k)
                    result.tokens.spatial(i, k) = as_f32(scale * rng.normal());
            }
            break;
        }
    }
    return result;
}

} // namespace tokred::vit

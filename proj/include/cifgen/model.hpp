#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cifgen/packing.hpp"
#include "cifgen/pxrd.hpp"

namespace cifgen {

using MatrixR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
    int embed_dim = 512;
    int n_layers = 8;
    int n_heads = 8;
    int context = kDefaultContext;
    int vocab = 373;
    int cond_input_dim = kGridSize;
    int cond_hidden = 512;
    int cond_layers = 2;
    int ffn_multiplier = 4;
    double dropout = 0.0;  // only 0 is supported; kept for config compatibility

    /// Throws InvalidArgument on inconsistent settings.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct TensorInfo {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    bool conditioning = false;  // belongs to the conditioning MLP

    std::size_t size() const noexcept { return rows * cols; }
    bool is_matrix() const noexcept { return rows > 1 && cols > 1; }
};

/// Conditioning MLP plus a pre-LayerNorm decoder transformer with learned
/// absolute positions and an output head tied to the token embedding.
/// All parameters live in one flat buffer described by tensors().
///
/// Activation is tanh-approximated GELU in both the MLP and the blocks.
class Model {
public:
    explicit Model(const ModelConfig& config, std::uint64_t seed = 0);

    const ModelConfig& config() const noexcept { return config_; }
    std::span<const TensorInfo> tensors() const noexcept { return tensors_; }
    const TensorInfo& tensor_info(std::string_view name) const;
    std::span<double> tensor(std::string_view name);
    std::span<const double> tensor(std::string_view name) const;

    std::span<double> parameters() noexcept { return params_; }
    std::span<const double> parameters() const noexcept { return params_; }

    std::size_t conditioning_parameter_count() const noexcept;
    std::size_t transformer_parameter_count() const noexcept;

    /// f_Phi(y). Throws DimensionMismatch unless y has cond_input_dim values.
    Eigen::VectorXd embed_condition(std::span<const double> y) const;

    /// Logits (C x vocab) for every slot. Cond slot k takes profiles[value];
    /// attention is restricted exactly to the mask.
    MatrixR forward(const PackedSegment& seg, const AttentionMask& mask,
                    std::span<const PxrdProfile> profiles) const;

    /// Adds scale * d(sum of token losses)/d(params) into grad and returns
    /// the summed loss with the number of predicted tokens.
    struct LossSum {
        double total = 0;
        std::size_t count = 0;
    };
    LossSum accumulate_gradient(const PackedSegment& seg, const AttentionMask& mask,
                                std::span<const PxrdProfile> profiles, std::span<double> grad,
                                double scale) const;

private:
    struct Cache;
    void run(const PackedSegment& seg, const AttentionMask& mask, std::span<const PxrdProfile> profiles,
             Cache& cache) const;

    ModelConfig config_;
    std::vector<TensorInfo> tensors_;
    // aligned so vectorized kernels take the same code path for every copy
    std::vector<double, Eigen::aligned_allocator<double>> params_;
};

/// Mean cross-entropy over slots that have a next-token target in their own
/// block; 0 when there are none.
double segment_loss(const MatrixR& logits, const PackedSegment& seg);

/// Per-slot cross-entropy of the next token; NaN where the slot has no target.
std::vector<double> token_losses(const MatrixR& logits, const PackedSegment& seg);

struct DecodeParams {
    double temperature = 0.0;  // 0 means greedy
    int top_k = 0;             // 0 means no truncation
    std::uint64_t seed = 0;
    int max_new_tokens = -1;   // -1 means until the stop rule or the context limit
};

/// Autoregressive decoding with a key/value cache. With a profile the
/// sequence opens with a Cond slot; without one it starts at the prompt.
/// Stops after two consecutive newline tokens or at the context limit.
/// Returns prompt followed by the generated ids. Throws ContextOverflow when
/// the prompt leaves no room to generate.
std::vector<int> generate(const Model& model, std::span<const int> prompt, const PxrdProfile* profile,
                          const DecodeParams& params = {});

}  // namespace cifgen

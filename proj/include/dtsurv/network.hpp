#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dtsurv/distribution.hpp"
#include "dtsurv/rng.hpp"

namespace dtsurv {

enum class DynamicMode { none, tabular, tensor };

struct ModelConfig {
    int d_model = 64;
    int n_heads = 4;
    int n_layers = 2;
    double dropout = 0.0;
    int t_max = 0;
    int t_window = 1;  // block length of shared dynamic features (tensor mode)
    int static_dim = 0;
    int dynamic_dim = 0;  // tabular: feature count; tensor: must be 3 * 30
    DynamicMode dynamic_mode = DynamicMode::none;
    bool use_mask = true;
    std::uint64_t seed = 0;

    // Branch widths; the contract fixes only the head (d_m -> d_m/2 -> 1),
    // these defaults are documented choices.
    int static_hidden = 64;
    int static_latent = 32;
    int dynamic_hidden = 64;
    int dynamic_latent = 32;
    int embed_hidden = 64;
    int conv_channels1 = 4;
    int conv_channels2 = 8;

    int seq_len() const { return t_max + 1; }
    void validate() const;
};

struct LinearLayer {
    Eigen::MatrixXd w;  // out x in
    Eigen::VectorXd b;
};

struct NormLayer {
    Eigen::VectorXd gain;
    Eigen::VectorXd shift;
};

struct EncoderLayer {
    LinearLayer qkv;  // fused query/key/value projection, 3*d x d
    LinearLayer out;
    NormLayer ln1;
    LinearLayer ff1;
    LinearLayer ff2;
    NormLayer ln2;
};

// 2 x 3 kernels stored row-major per (out_channel, in_channel).
struct ConvStage {
    Eigen::MatrixXd w;  // out_ch x (in_ch * 2 * 3)
    Eigen::VectorXd b;
};

struct ModelParams {
    LinearLayer static1, static2;
    LinearLayer dyn1, dyn2;            // tabular branch
    ConvStage conv1, conv2;            // tensor branch
    LinearLayer conv_out;
    LinearLayer embed1, embed2;
    NormLayer embed_ln;
    std::vector<EncoderLayer> layers;
    LinearLayer head1;
    NormLayer head_ln;
    LinearLayer head2;
};

struct TensorRef {
    std::string name;
    double* data;
    std::ptrdiff_t size;
};

// Stable enumeration of every parameter array; order never changes (the
// checkpoint format and optimizer state depend on it).
std::vector<TensorRef> tensor_refs(ModelParams& p);

/// Sinusoidal position table: (pos, 2i) -> sin(pos / 10000^(2i/d)),
// (pos, 2i+1) -> cos of the same argument.
Eigen::MatrixXd positional_encoding(int d_model, int length);

// Additive attention mask: 0 where key <= query, -inf after.
Eigen::MatrixXd causal_mask(int length);

// One preprocessed subject. `dynamic` is (t_max+1) x dynamic_dim in tabular
// mode (dense, imputed), (t_max+1) x 90 in tensor mode (tasks flattened
// task-major per month), and empty otherwise.
struct ModelInput {
    Eigen::VectorXd x_static;
    Eigen::MatrixXd dynamic;
};

// Everything backward needs from one forward pass. Opaque; single use.
struct BatchTape;

class Model {
public:
    explicit Model(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    ModelParams& params() { return params_; }
    const ModelParams& params() const { return params_; }

    // Returns per-record distributions as rows (batch x seq_len). Rows sum to
    // 1 within 1e-6. Pass a tape to record activations for backward and a
    // stream to enable train-mode dropout.
    Eigen::MatrixXd forward_batch(const std::vector<ModelInput>& batch,
                                  BatchTape* tape = nullptr,
                                  RandomStream* dropout_rng = nullptr) const;

    // Single-record convenience wrapper.
    DiscreteDistribution forward(const ModelInput& input) const;

    // Accumulates dLoss/dparams into `grads` given dLoss/dprobs. The tape is
    // consumed; reusing it throws UsageError.
    void backward(BatchTape& tape, const Eigen::MatrixXd& dprobs,
                  ModelParams& grads) const;

    // Eval-mode predictions in fixed-size chunks.
    std::vector<DiscreteDistribution> predict(const std::vector<ModelInput>& inputs,
                                              int chunk = 64) const;

private:
    ModelConfig cfg_;
    ModelParams params_;
    Eigen::MatrixXd pe_;  // seq_len x d_model

    int embed_in_dim() const;
    void check_input(const ModelInput& input) const;
};

ModelParams zero_params_like(const ModelConfig& cfg);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

// Tape definition is public so stack allocation works; treat as opaque.
struct BatchTape {
    bool consumed = false;
    bool train_mode = false;
    int batch = 0;
    std::vector<ModelInput> inputs;

    Eigen::MatrixXd xs, s_h, zs;      // static branch
    Eigen::MatrixXd xd, d_h, zd;      // tabular branch / tensor latents
    Eigen::MatrixXd conv_in, conv_a1, conv_p1, conv_a2, conv_p2;  // tensor branch
    Eigen::MatrixXd u, e_h, e_hat;    // embedding
    Eigen::VectorXd e_istd;

    struct LayerTape {
        Eigen::MatrixXd x_in, qkv;
        std::vector<Eigen::MatrixXd> attn;       // per (record, head): S x S probs
        std::vector<Eigen::MatrixXd> attn_mask;  // dropout masks, empty when off
        Eigen::MatrixXd ctx, ln1_hat, x1, f, f_mask, ln2_hat, x2;
        Eigen::VectorXd ln1_istd, ln2_istd;
    };
    std::vector<LayerTape> layers;

    Eigen::MatrixXd h_relu, h_hat;
    Eigen::VectorXd h_istd;
    Eigen::MatrixXd probs;
};

}  // namespace dtsurv

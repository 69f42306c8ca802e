#include "dtsurv/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "dtsurv/errors.hpp"
#include "dtsurv/textio.hpp"

namespace dtsurv {

namespace {

constexpr double kLnEps = 1e-5;
constexpr int kConvH1 = 2, kConvW1 = 28;   // 3x30 plane after a 2x3 kernel
constexpr int kConvPW1 = 14;               // after 1x2 average pooling
constexpr int kConvH2 = 1, kConvW2 = 12;   // after the second 2x3 kernel
constexpr int kConvPW2 = 6;
constexpr int kPlane = 3 * 30;

void glorot(Eigen::MatrixXd& w, int fan_in, int fan_out, RandomStream& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-a, a);
}

void init_linear(LinearLayer& l, int out, int in, RandomStream& rng) {
    l.w.resize(out, in);
    glorot(l.w, in, out, rng);
    l.b = Eigen::VectorXd::Zero(out);
}

void init_norm(NormLayer& n, int dim) {
    n.gain = Eigen::VectorXd::Ones(dim);
    n.shift = Eigen::VectorXd::Zero(dim);
}

void init_conv(ConvStage& c, int out_ch, int in_ch, RandomStream& rng) {
    c.w.resize(out_ch, in_ch * 6);
    glorot(c.w, in_ch * 6, out_ch * 6, rng);
    c.b = Eigen::VectorXd::Zero(out_ch);
}

// y = relu(x * W' + b) computed in place on y; returns pre-activation sign via
// the post-activation values (relu keeps the sign information we need).
void linear_relu(const Eigen::MatrixXd& x, const LinearLayer& l, Eigen::MatrixXd& y) {
    y.noalias() = x * l.w.transpose();
    y.rowwise() += l.b.transpose();
    y = y.cwiseMax(0.0);
}

void linear(const Eigen::MatrixXd& x, const LinearLayer& l, Eigen::MatrixXd& y) {
    y.noalias() = x * l.w.transpose();
    y.rowwise() += l.b.transpose();
}

// Row-wise layer normalization; stores normalized values and inverse stddev.
void layer_norm(const Eigen::MatrixXd& x, const NormLayer& n, Eigen::MatrixXd& y,
                Eigen::MatrixXd& hat, Eigen::VectorXd& istd) {
    const auto dim = static_cast<double>(x.cols());
    const Eigen::VectorXd mean = x.rowwise().mean();
    hat = x.colwise() - mean;
    istd = (hat.array().square().rowwise().sum() / dim + kLnEps).sqrt().inverse().matrix();
    hat.array().colwise() *= istd.array();
    y = hat;
    y.array().rowwise() *= n.gain.transpose().array();
    y.rowwise() += n.shift.transpose();
}

// dx from dy for layer_norm; accumulates parameter gradients.
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& hat,
                                    const Eigen::VectorXd& istd, const NormLayer& n,
                                    NormLayer& grad) {
    grad.gain.noalias() += (dy.array() * hat.array()).colwise().sum().matrix().transpose();
    grad.shift.noalias() += dy.colwise().sum().transpose();
    Eigen::MatrixXd dxh = dy;
    dxh.array().rowwise() *= n.gain.transpose().array();
    const Eigen::VectorXd m1 = dxh.rowwise().mean();
    const Eigen::VectorXd m2 = (dxh.array() * hat.array()).rowwise().mean();
    Eigen::MatrixXd dx = dxh;
    dx.colwise() -= m1;
    dx -= (hat.array().colwise() * m2.array()).matrix();
    dx.array().colwise() *= istd.array();
    return dx;
}

void require_finite(const Eigen::MatrixXd& x, const std::string& stage) {
    if (!x.allFinite())
        throw NumericError("non-finite activation in " + stage);
}

}  // namespace

void ModelConfig::validate() const {
    if (d_model < 2 || d_model % 2 != 0)
        throw ConfigError("model: d_model must be even and >= 2");
    if (n_heads < 1 || d_model % n_heads != 0)
        throw ConfigError("model: d_model must be divisible by n_heads");
    if (n_layers < 1) throw ConfigError("model: n_layers must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
        throw ConfigError("model: dropout outside [0, 1)");
    if (t_max < 1) throw ConfigError("model: t_max must be >= 1");
    if (static_dim < 1) throw ConfigError("model: static_dim must be >= 1");
    if (dynamic_mode == DynamicMode::tabular && dynamic_dim < 1)
        throw ConfigError("model: tabular mode needs dynamic_dim >= 1");
    if (dynamic_mode == DynamicMode::tensor && dynamic_dim != kPlane)
        throw ConfigError("model: tensor mode needs dynamic_dim == 90");
    if (dynamic_mode != DynamicMode::none) {
        if (t_window < 1 || (t_max + 1) % t_window != 0)
            throw ConfigError("model: t_window must divide t_max + 1");
    }
    for (int v : {static_hidden, static_latent, dynamic_hidden, dynamic_latent,
                  embed_hidden, conv_channels1, conv_channels2})
        if (v < 1) throw ConfigError("model: branch widths must be >= 1");
}

std::vector<TensorRef> tensor_refs(ModelParams& p) {
    std::vector<TensorRef> refs;
    auto add = [&refs](const std::string& name, Eigen::MatrixXd& m) {
        if (m.size() > 0) refs.push_back({name, m.data(), m.size()});
    };
    auto addv = [&refs](const std::string& name, Eigen::VectorXd& v) {
        if (v.size() > 0) refs.push_back({name, v.data(), v.size()});
    };
    auto add_linear = [&](const std::string& name, LinearLayer& l) {
        add(name + ".w", l.w);
        addv(name + ".b", l.b);
    };
    auto add_norm = [&](const std::string& name, NormLayer& n) {
        addv(name + ".gain", n.gain);
        addv(name + ".shift", n.shift);
    };
    add_linear("static1", p.static1);
    add_linear("static2", p.static2);
    add_linear("dyn1", p.dyn1);
    add_linear("dyn2", p.dyn2);
    add("conv1.w", p.conv1.w);
    addv("conv1.b", p.conv1.b);
    add("conv2.w", p.conv2.w);
    addv("conv2.b", p.conv2.b);
    add_linear("conv_out", p.conv_out);
    add_linear("embed1", p.embed1);
    add_linear("embed2", p.embed2);
    add_norm("embed_ln", p.embed_ln);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const std::string base = "layer" + std::to_string(l);
        add_linear(base + ".qkv", p.layers[l].qkv);
        add_linear(base + ".out", p.layers[l].out);
        add_norm(base + ".ln1", p.layers[l].ln1);
        add_linear(base + ".ff1", p.layers[l].ff1);
        add_linear(base + ".ff2", p.layers[l].ff2);
        add_norm(base + ".ln2", p.layers[l].ln2);
    }
    add_linear("head1", p.head1);
    add_norm("head_ln", p.head_ln);
    add_linear("head2", p.head2);
    return refs;
}

Eigen::MatrixXd positional_encoding(int d_model, int length) {
    if (d_model < 2 || d_model % 2 != 0)
        throw ConfigError("positional_encoding: d_model must be even");
    if (length < 1) throw ValidationError("positional_encoding: length must be >= 1");
    Eigen::MatrixXd pe(length, d_model);
    for (int pos = 0; pos < length; ++pos) {
        for (int i = 0; 2 * i < d_model; ++i) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d_model));
            pe(pos, 2 * i) = std::sin(angle);
            pe(pos, 2 * i + 1) = std::cos(angle);
        }
    }
    return pe;
}

Eigen::MatrixXd causal_mask(int length) {
    if (length < 1) throw ValidationError("causal_mask: length must be >= 1");
    const double ninf = -std::numeric_limits<double>::infinity();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(length, length);
    for (int q = 0; q < length; ++q)
        for (int k = q + 1; k < length; ++k) m(q, k) = ninf;
    return m;
}

int Model::embed_in_dim() const {
    return cfg_.dynamic_mode == DynamicMode::none
               ? cfg_.static_latent
               : cfg_.static_latent + cfg_.dynamic_latent;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    RandomStream rng(substream_seed(cfg_.seed, "init"));
    init_linear(params_.static1, cfg_.static_hidden, cfg_.static_dim, rng);
    init_linear(params_.static2, cfg_.static_latent, cfg_.static_hidden, rng);
    if (cfg_.dynamic_mode == DynamicMode::tabular) {
        init_linear(params_.dyn1, cfg_.dynamic_hidden, cfg_.dynamic_dim, rng);
        init_linear(params_.dyn2, cfg_.dynamic_latent, cfg_.dynamic_hidden, rng);
    } else if (cfg_.dynamic_mode == DynamicMode::tensor) {
        init_conv(params_.conv1, cfg_.conv_channels1, cfg_.t_window, rng);
        init_conv(params_.conv2, cfg_.conv_channels2, cfg_.conv_channels1, rng);
        init_linear(params_.conv_out, cfg_.dynamic_latent, cfg_.conv_channels2 * kConvPW2,
                    rng);
    }
    init_linear(params_.embed1, cfg_.embed_hidden, embed_in_dim(), rng);
    init_linear(params_.embed2, cfg_.d_model, cfg_.embed_hidden, rng);
    init_norm(params_.embed_ln, cfg_.d_model);
    params_.layers.resize(static_cast<std::size_t>(cfg_.n_layers));
    for (auto& layer : params_.layers) {
        init_linear(layer.qkv, 3 * cfg_.d_model, cfg_.d_model, rng);
        init_linear(layer.out, cfg_.d_model, cfg_.d_model, rng);
        init_norm(layer.ln1, cfg_.d_model);
        init_linear(layer.ff1, 4 * cfg_.d_model, cfg_.d_model, rng);
        init_linear(layer.ff2, cfg_.d_model, 4 * cfg_.d_model, rng);
        init_norm(layer.ln2, cfg_.d_model);
    }
    init_linear(params_.head1, cfg_.d_model / 2, cfg_.d_model, rng);
    init_norm(params_.head_ln, cfg_.d_model / 2);
    init_linear(params_.head2, 1, cfg_.d_model / 2, rng);
    pe_ = positional_encoding(cfg_.d_model, cfg_.seq_len());
}

void Model::check_input(const ModelInput& input) const {
    if (input.x_static.size() != cfg_.static_dim)
        throw ConfigError("forward: static input length " +
                          std::to_string(input.x_static.size()) + ", expected " +
                          std::to_string(cfg_.static_dim));
    if (cfg_.dynamic_mode == DynamicMode::none) return;
    const int want_cols = cfg_.dynamic_mode == DynamicMode::tabular ? cfg_.dynamic_dim : kPlane;
    if (input.dynamic.rows() != cfg_.seq_len() || input.dynamic.cols() != want_cols)
        throw ConfigError("forward: dynamic input is " + std::to_string(input.dynamic.rows()) +
                          "x" + std::to_string(input.dynamic.cols()) + ", expected " +
                          std::to_string(cfg_.seq_len()) + "x" + std::to_string(want_cols));
    if (!input.dynamic.allFinite())
        throw ConfigError("forward: dynamic input has non-finite cells (impute first)");
}

namespace {

// Fills a dropout mask with 0 or 1/(1-rate) entries, drawn row-major.
void draw_dropout(Eigen::MatrixXd& mask, Eigen::Index rows, Eigen::Index cols,
                  double rate, RandomStream& rng) {
    const double scale = 1.0 / (1.0 - rate);
    mask.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            mask(i, j) = rng.uniform() < rate ? 0.0 : scale;
}

}  // namespace

Eigen::MatrixXd Model::forward_batch(const std::vector<ModelInput>& batch, BatchTape* tape,
                                     RandomStream* dropout_rng) const {
    if (batch.empty()) throw ValidationError("forward: empty batch");
    for (const auto& in : batch) check_input(in);
    const int B = static_cast<int>(batch.size());
    const int S = cfg_.seq_len();
    const int d = cfg_.d_model;
    const int heads = cfg_.n_heads;
    const int hd = d / heads;
    const long rows = static_cast<long>(B) * S;
    const bool train = dropout_rng != nullptr && cfg_.dropout > 0.0;
    const bool is_static = cfg_.dynamic_mode == DynamicMode::none;

    BatchTape local;
    BatchTape& tp = tape ? *tape : local;
    tp = BatchTape{};
    tp.batch = B;
    tp.train_mode = train;
    if (tape) tp.inputs = batch;

    // Static branch.
    tp.xs.resize(B, cfg_.static_dim);
    for (int r = 0; r < B; ++r) tp.xs.row(r) = batch[static_cast<std::size_t>(r)].x_static;
    linear_relu(tp.xs, params_.static1, tp.s_h);
    linear(tp.s_h, params_.static2, tp.zs);
    require_finite(tp.zs, "static branch");

    // Dynamic branch.
    const int nb = cfg_.dynamic_mode == DynamicMode::tensor ? S / cfg_.t_window : 0;
    if (cfg_.dynamic_mode == DynamicMode::tabular) {
        tp.xd.resize(rows, cfg_.dynamic_dim);
        for (int r = 0; r < B; ++r)
            tp.xd.middleRows(static_cast<long>(r) * S, S) =
                batch[static_cast<std::size_t>(r)].dynamic;
        linear_relu(tp.xd, params_.dyn1, tp.d_h);
        linear(tp.d_h, params_.dyn2, tp.zd);
        require_finite(tp.zd, "dynamic branch");
    } else if (cfg_.dynamic_mode == DynamicMode::tensor) {
        const int tw = cfg_.t_window;
        const long brows = static_cast<long>(B) * nb;
        const int c1 = cfg_.conv_channels1, c2 = cfg_.conv_channels2;
        tp.conv_in.resize(brows, static_cast<long>(tw) * kPlane);
        for (int r = 0; r < B; ++r)
            for (int b = 0; b < nb; ++b)
                for (int m = 0; m < tw; ++m)
                    tp.conv_in.block(static_cast<long>(r) * nb + b,
                                     static_cast<long>(m) * kPlane, 1, kPlane) =
                        batch[static_cast<std::size_t>(r)].dynamic.row(b * tw + m);
        // Stage 1: 2x3 kernels over the 3x30 plane, tw input channels.
        tp.conv_a1.setZero(brows, static_cast<long>(c1) * kConvH1 * kConvW1);
        for (long row = 0; row < brows; ++row)
            for (int oc = 0; oc < c1; ++oc)
                for (int i = 0; i < kConvH1; ++i)
                    for (int j = 0; j < kConvW1; ++j) {
                        double acc = params_.conv1.b(oc);
                        for (int ic = 0; ic < tw; ++ic)
                            for (int ki = 0; ki < 2; ++ki)
                                for (int kj = 0; kj < 3; ++kj)
                                    acc += params_.conv1.w(oc, (ic * 2 + ki) * 3 + kj) *
                                           tp.conv_in(row, static_cast<long>(ic) * kPlane +
                                                               (i + ki) * 30 + (j + kj));
                        tp.conv_a1(row, (static_cast<long>(oc) * kConvH1 + i) * kConvW1 + j) =
                            std::max(acc, 0.0);
                    }
        tp.conv_p1.resize(brows, static_cast<long>(c1) * kConvH1 * kConvPW1);
        for (long row = 0; row < brows; ++row)
            for (int oc = 0; oc < c1; ++oc)
                for (int i = 0; i < kConvH1; ++i)
                    for (int j = 0; j < kConvPW1; ++j)
                        tp.conv_p1(row, (static_cast<long>(oc) * kConvH1 + i) * kConvPW1 + j) =
                            0.5 * (tp.conv_a1(row, (static_cast<long>(oc) * kConvH1 + i) *
                                                           kConvW1 +
                                                       2 * j) +
                                   tp.conv_a1(row, (static_cast<long>(oc) * kConvH1 + i) *
                                                           kConvW1 +
                                                       2 * j + 1));
        // Stage 2: 2x3 kernels over the pooled 2x14 plane.
        tp.conv_a2.setZero(brows, static_cast<long>(c2) * kConvH2 * kConvW2);
        for (long row = 0; row < brows; ++row)
            for (int oc = 0; oc < c2; ++oc)
                for (int j = 0; j < kConvW2; ++j) {
                    double acc = params_.conv2.b(oc);
                    for (int ic = 0; ic < c1; ++ic)
                        for (int ki = 0; ki < 2; ++ki)
                            for (int kj = 0; kj < 3; ++kj)
                                acc += params_.conv2.w(oc, (ic * 2 + ki) * 3 + kj) *
                                       tp.conv_p1(row, (static_cast<long>(ic) * kConvH1 + ki) *
                                                               kConvPW1 +
                                                           (j + kj));
                    tp.conv_a2(row, static_cast<long>(oc) * kConvW2 + j) = std::max(acc, 0.0);
                }
        tp.conv_p2.resize(brows, static_cast<long>(c2) * kConvPW2);
        for (long row = 0; row < brows; ++row)
            for (int oc = 0; oc < c2; ++oc)
                for (int j = 0; j < kConvPW2; ++j)
                    tp.conv_p2(row, static_cast<long>(oc) * kConvPW2 + j) =
                        0.5 * (tp.conv_a2(row, static_cast<long>(oc) * kConvW2 + 2 * j) +
                               tp.conv_a2(row, static_cast<long>(oc) * kConvW2 + 2 * j + 1));
        linear(tp.conv_p2, params_.conv_out, tp.zd);
        require_finite(tp.zd, "dynamic branch");
    }

    // Embedding input; in static mode one row per record (identical across
    // positions before the positional encoding, so computed once).
    const long erows = is_static ? B : rows;
    tp.u.resize(erows, embed_in_dim());
    if (is_static) {
        tp.u = tp.zs;
    } else {
        for (int r = 0; r < B; ++r)
            tp.u.middleRows(static_cast<long>(r) * S, S).leftCols(cfg_.static_latent) =
                tp.zs.row(r).replicate(S, 1);
        if (cfg_.dynamic_mode == DynamicMode::tabular) {
            tp.u.rightCols(cfg_.dynamic_latent) = tp.zd;
        } else {
            for (int r = 0; r < B; ++r)
                for (int t = 0; t < S; ++t)
                    tp.u.row(static_cast<long>(r) * S + t).tail(cfg_.dynamic_latent) =
                        tp.zd.row(static_cast<long>(r) * nb + t / cfg_.t_window);
        }
    }
    linear_relu(tp.u, params_.embed1, tp.e_h);
    Eigen::MatrixXd e_pre;
    linear(tp.e_h, params_.embed2, e_pre);
    Eigen::MatrixXd e;
    layer_norm(e_pre, params_.embed_ln, e, tp.e_hat, tp.e_istd);
    require_finite(e, "embedding");

    Eigen::MatrixXd x(rows, d);
    for (int r = 0; r < B; ++r)
        for (int t = 0; t < S; ++t)
            x.row(static_cast<long>(r) * S + t) =
                (is_static ? e.row(r) : e.row(static_cast<long>(r) * S + t)) + pe_.row(t);

    // Encoder stack.
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const double ninf = -std::numeric_limits<double>::infinity();
    tp.layers.resize(static_cast<std::size_t>(cfg_.n_layers));
    constexpr int kQBlock = 64;
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const EncoderLayer& lp = params_.layers[static_cast<std::size_t>(l)];
        auto& lt = tp.layers[static_cast<std::size_t>(l)];
        lt.x_in = x;
        linear(x, lp.qkv, lt.qkv);
        lt.ctx.resize(rows, d);
        lt.attn.assign(static_cast<std::size_t>(B) * heads, Eigen::MatrixXd());
        if (train) lt.attn_mask.assign(static_cast<std::size_t>(B) * heads, Eigen::MatrixXd());
        for (int r = 0; r < B; ++r) {
            const long base = static_cast<long>(r) * S;
            for (int h = 0; h < heads; ++h) {
                const auto q = lt.qkv.block(base, h * hd, S, hd);
                const auto k = lt.qkv.block(base, d + h * hd, S, hd);
                const auto v = lt.qkv.block(base, 2 * d + h * hd, S, hd);
                Eigen::MatrixXd& a = lt.attn[static_cast<std::size_t>(r) * heads + h];
                a.setZero(S, S);
                Eigen::MatrixXd* mask = nullptr;
                if (train) {
                    mask = &lt.attn_mask[static_cast<std::size_t>(r) * heads + h];
                    mask->setZero(S, S);
                }
                for (int q0 = 0; q0 < S; q0 += kQBlock) {
                    const int qn = std::min(kQBlock, S - q0);
                    const int kend = cfg_.use_mask ? q0 + qn : S;
                    auto ablk = a.block(q0, 0, qn, kend);
                    ablk.noalias() = q.middleRows(q0, qn) * k.topRows(kend).transpose();
                    ablk *= scale;
                    if (cfg_.use_mask)
                        for (int i = 0; i < qn; ++i)
                            for (int j = q0 + i + 1; j < kend; ++j) ablk(i, j) = ninf;
                    for (int i = 0; i < qn; ++i) {
                        auto row = ablk.row(i);
                        const double mx = row.maxCoeff();
                        row.array() = (row.array() - mx).exp();
                        row /= row.sum();
                    }
                    auto cblk = lt.ctx.block(base + q0, h * hd, qn, hd);
                    if (train) {
                        auto mblk = mask->block(q0, 0, qn, kend);
                        for (int i = 0; i < qn; ++i)
                            for (int j = 0; j < kend; ++j)
                                mblk(i, j) = dropout_rng->uniform() < cfg_.dropout
                                                 ? 0.0
                                                 : 1.0 / (1.0 - cfg_.dropout);
                        cblk.noalias() =
                            (ablk.array() * mblk.array()).matrix() * v.topRows(kend);
                    } else {
                        cblk.noalias() = ablk * v.topRows(kend);
                    }
                }
            }
        }
        Eigen::MatrixXd attn_out;
        linear(lt.ctx, lp.out, attn_out);
        attn_out += x;
        layer_norm(attn_out, lp.ln1, lt.x1, lt.ln1_hat, lt.ln1_istd);
        linear_relu(lt.x1, lp.ff1, lt.f);
        Eigen::MatrixXd g;
        if (train) {
            draw_dropout(lt.f_mask, lt.f.rows(), lt.f.cols(), cfg_.dropout, *dropout_rng);
            linear((lt.f.array() * lt.f_mask.array()).matrix(), lp.ff2, g);
        } else {
            linear(lt.f, lp.ff2, g);
        }
        g += lt.x1;
        layer_norm(g, lp.ln2, lt.x2, lt.ln2_hat, lt.ln2_istd);
        require_finite(lt.x2, "encoder layer " + std::to_string(l));
        x = lt.x2;
    }

    // Shared per-position head, then softmax across the time axis.
    linear_relu(x, params_.head1, tp.h_relu);
    Eigen::MatrixXd h_ln;
    layer_norm(tp.h_relu, params_.head_ln, h_ln, tp.h_hat, tp.h_istd);
    Eigen::VectorXd logits = h_ln * params_.head2.w.transpose();
    logits.array() += params_.head2.b(0);
    require_finite(logits, "head");

    tp.probs.resize(B, S);
    for (int r = 0; r < B; ++r) {
        auto row = tp.probs.row(r);
        for (int t = 0; t < S; ++t) row(t) = logits(static_cast<long>(r) * S + t);
        const double mx = row.maxCoeff();
        row.array() = (row.array() - mx).exp();
        row /= row.sum();
    }
    return tp.probs;
}

DiscreteDistribution Model::forward(const ModelInput& input) const {
    const Eigen::MatrixXd probs = forward_batch({input});
    DiscreteDistribution d;
    d.probs.resize(static_cast<std::size_t>(cfg_.seq_len()));
    for (int t = 0; t < cfg_.seq_len(); ++t)
        d.probs[static_cast<std::size_t>(t)] = probs(0, t);
    return d;
}

std::vector<DiscreteDistribution> Model::predict(const std::vector<ModelInput>& inputs,
                                                 int chunk) const {
    if (chunk < 1) throw ValidationError("predict: chunk must be >= 1");
    std::vector<DiscreteDistribution> out;
    out.reserve(inputs.size());
    std::vector<ModelInput> part;
    for (std::size_t start = 0; start < inputs.size();
         start += static_cast<std::size_t>(chunk)) {
        const std::size_t n =
            std::min(static_cast<std::size_t>(chunk), inputs.size() - start);
        part.assign(inputs.begin() + static_cast<std::ptrdiff_t>(start),
                    inputs.begin() + static_cast<std::ptrdiff_t>(start + n));
        const Eigen::MatrixXd probs = forward_batch(part);
        for (std::size_t r = 0; r < n; ++r) {
            DiscreteDistribution d;
            d.probs.resize(static_cast<std::size_t>(cfg_.seq_len()));
            for (int t = 0; t < cfg_.seq_len(); ++t)
                d.probs[static_cast<std::size_t>(t)] = probs(static_cast<long>(r), t);
            out.push_back(std::move(d));
        }
    }
    return out;
}

void Model::backward(BatchTape& tape, const Eigen::MatrixXd& dprobs,
                     ModelParams& grads) const {
    if (tape.consumed) throw UsageError("backward: tape already consumed");
    tape.consumed = true;
    if (tape.inputs.empty())
        throw UsageError("backward: tape was recorded without inputs");
    const int B = tape.batch;
    const int S = cfg_.seq_len();
    const int d = cfg_.d_model;
    const int heads = cfg_.n_heads;
    const int hd = d / heads;
    const long rows = static_cast<long>(B) * S;
    const bool is_static = cfg_.dynamic_mode == DynamicMode::none;
    if (dprobs.rows() != B || dprobs.cols() != S)
        throw ValidationError("backward: seed gradient shape mismatch");

    // Softmax over the time axis.
    Eigen::VectorXd dlogits(rows);
    for (int r = 0; r < B; ++r) {
        const auto p = tape.probs.row(r);
        const auto dp = dprobs.row(r);
        const double dot = p.dot(dp);
        for (int t = 0; t < S; ++t)
            dlogits(static_cast<long>(r) * S + t) = p(t) * (dp(t) - dot);
    }

    // Head.
    Eigen::MatrixXd h_ln = tape.h_hat;
    h_ln.array().rowwise() *= params_.head_ln.gain.transpose().array();
    h_ln.rowwise() += params_.head_ln.shift.transpose();
    grads.head2.w.noalias() += (h_ln.transpose() * dlogits).transpose();
    grads.head2.b(0) += dlogits.sum();
    Eigen::MatrixXd dh_ln = dlogits * params_.head2.w;
    Eigen::MatrixXd dh =
        layer_norm_backward(dh_ln, tape.h_hat, tape.h_istd, params_.head_ln, grads.head_ln);
    dh = (tape.h_relu.array() > 0.0).select(dh, 0.0);
    const Eigen::MatrixXd& x_last = tape.layers.back().x2;
    grads.head1.w.noalias() += dh.transpose() * x_last;
    grads.head1.b.noalias() += dh.colwise().sum().transpose();
    Eigen::MatrixXd dx = dh * params_.head1.w;

    // Encoder stack, reversed.
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    constexpr int kQBlock = 64;
    for (int l = cfg_.n_layers - 1; l >= 0; --l) {
        const EncoderLayer& lp = params_.layers[static_cast<std::size_t>(l)];
        auto& lt = tape.layers[static_cast<std::size_t>(l)];
        EncoderLayer& lg = grads.layers[static_cast<std::size_t>(l)];

        Eigen::MatrixXd dres2 =
            layer_norm_backward(dx, lt.ln2_hat, lt.ln2_istd, lp.ln2, lg.ln2);
        Eigen::MatrixXd dx1 = dres2;
        // Feed-forward.
        Eigen::MatrixXd fd;
        if (tape.train_mode && lt.f_mask.size() > 0)
            fd = (lt.f.array() * lt.f_mask.array()).matrix();
        else
            fd = lt.f;
        lg.ff2.w.noalias() += dres2.transpose() * fd;
        lg.ff2.b.noalias() += dres2.colwise().sum().transpose();
        Eigen::MatrixXd df = dres2 * lp.ff2.w;
        if (tape.train_mode && lt.f_mask.size() > 0)
            df = (df.array() * lt.f_mask.array()).matrix();
        df = (lt.f.array() > 0.0).select(df, 0.0);
        lg.ff1.w.noalias() += df.transpose() * lt.x1;
        lg.ff1.b.noalias() += df.colwise().sum().transpose();
        dx1.noalias() += df * lp.ff1.w;

        Eigen::MatrixXd dres1 =
            layer_norm_backward(dx1, lt.ln1_hat, lt.ln1_istd, lp.ln1, lg.ln1);
        Eigen::MatrixXd dx_in = dres1;
        // Attention projection.
        lg.out.w.noalias() += dres1.transpose() * lt.ctx;
        lg.out.b.noalias() += dres1.colwise().sum().transpose();
        Eigen::MatrixXd dctx = dres1 * lp.out.w;

        Eigen::MatrixXd dqkv = Eigen::MatrixXd::Zero(rows, 3 * d);
        for (int r = 0; r < B; ++r) {
            const long base = static_cast<long>(r) * S;
            for (int h = 0; h < heads; ++h) {
                const auto q = lt.qkv.block(base, h * hd, S, hd);
                const auto k = lt.qkv.block(base, d + h * hd, S, hd);
                const auto v = lt.qkv.block(base, 2 * d + h * hd, S, hd);
                auto dq = dqkv.block(base, h * hd, S, hd);
                auto dk = dqkv.block(base, d + h * hd, S, hd);
                auto dv = dqkv.block(base, 2 * d + h * hd, S, hd);
                const Eigen::MatrixXd& a = lt.attn[static_cast<std::size_t>(r) * heads + h];
                const Eigen::MatrixXd* mask =
                    tape.train_mode ? &lt.attn_mask[static_cast<std::size_t>(r) * heads + h]
                                    : nullptr;
                for (int q0 = 0; q0 < S; q0 += kQBlock) {
                    const int qn = std::min(kQBlock, S - q0);
                    const int kend = cfg_.use_mask ? q0 + qn : S;
                    const auto ablk = a.block(q0, 0, qn, kend);
                    const auto dcblk = dctx.block(base + q0, h * hd, qn, hd);
                    Eigen::MatrixXd ad;
                    if (mask)
                        ad = (ablk.array() * mask->block(q0, 0, qn, kend).array()).matrix();
                    else
                        ad = ablk;
                    Eigen::MatrixXd da = dcblk * v.topRows(kend).transpose();
                    dv.topRows(kend).noalias() += ad.transpose() * dcblk;
                    if (mask) da = (da.array() * mask->block(q0, 0, qn, kend).array()).matrix();
                    const Eigen::VectorXd rowdot =
                        (da.array() * ablk.array()).rowwise().sum();
                    da.colwise() -= rowdot;
                    Eigen::MatrixXd ds = (ablk.array() * da.array()).matrix() * scale;
                    dq.middleRows(q0, qn).noalias() += ds * k.topRows(kend);
                    dk.topRows(kend).noalias() += ds.transpose() * q.middleRows(q0, qn);
                }
            }
        }
        lg.qkv.w.noalias() += dqkv.transpose() * lt.x_in;
        lg.qkv.b.noalias() += dqkv.colwise().sum().transpose();
        dx_in.noalias() += dqkv * lp.qkv.w;
        dx = dx_in;
    }

    // Embedding (positional encoding has no parameters).
    Eigen::MatrixXd de;
    if (is_static) {
        de.setZero(B, d);
        for (int r = 0; r < B; ++r)
            de.row(r) = dx.middleRows(static_cast<long>(r) * S, S).colwise().sum();
    } else {
        de = dx;
    }
    Eigen::MatrixXd de_pre =
        layer_norm_backward(de, tape.e_hat, tape.e_istd, params_.embed_ln, grads.embed_ln);
    grads.embed2.w.noalias() += de_pre.transpose() * tape.e_h;
    grads.embed2.b.noalias() += de_pre.colwise().sum().transpose();
    Eigen::MatrixXd de_h = de_pre * params_.embed2.w;
    de_h = (tape.e_h.array() > 0.0).select(de_h, 0.0);
    grads.embed1.w.noalias() += de_h.transpose() * tape.u;
    grads.embed1.b.noalias() += de_h.colwise().sum().transpose();
    Eigen::MatrixXd du = de_h * params_.embed1.w;

    // Split the embedding-input gradient between branches.
    Eigen::MatrixXd dzs;
    if (is_static) {
        dzs = du;
    } else {
        dzs.setZero(B, cfg_.static_latent);
        for (int r = 0; r < B; ++r)
            dzs.row(r) = du.middleRows(static_cast<long>(r) * S, S)
                             .leftCols(cfg_.static_latent)
                             .colwise()
                             .sum();
    }
    grads.static2.w.noalias() += dzs.transpose() * tape.s_h;
    grads.static2.b.noalias() += dzs.colwise().sum().transpose();
    Eigen::MatrixXd ds_h = dzs * params_.static2.w;
    ds_h = (tape.s_h.array() > 0.0).select(ds_h, 0.0);
    grads.static1.w.noalias() += ds_h.transpose() * tape.xs;
    grads.static1.b.noalias() += ds_h.colwise().sum().transpose();

    if (cfg_.dynamic_mode == DynamicMode::tabular) {
        Eigen::MatrixXd dzd = du.rightCols(cfg_.dynamic_latent);
        grads.dyn2.w.noalias() += dzd.transpose() * tape.d_h;
        grads.dyn2.b.noalias() += dzd.colwise().sum().transpose();
        Eigen::MatrixXd dd_h = dzd * params_.dyn2.w;
        dd_h = (tape.d_h.array() > 0.0).select(dd_h, 0.0);
        grads.dyn1.w.noalias() += dd_h.transpose() * tape.xd;
        grads.dyn1.b.noalias() += dd_h.colwise().sum().transpose();
    } else if (cfg_.dynamic_mode == DynamicMode::tensor) {
        const int tw = cfg_.t_window;
        const int nb = S / tw;
        const long brows = static_cast<long>(B) * nb;
        const int c1 = cfg_.conv_channels1, c2 = cfg_.conv_channels2;
        Eigen::MatrixXd dzd = Eigen::MatrixXd::Zero(brows, cfg_.dynamic_latent);
        for (int r = 0; r < B; ++r)
            for (int t = 0; t < S; ++t)
                dzd.row(static_cast<long>(r) * nb + t / tw) +=
                    du.row(static_cast<long>(r) * S + t).tail(cfg_.dynamic_latent);
        grads.conv_out.w.noalias() += dzd.transpose() * tape.conv_p2;
        grads.conv_out.b.noalias() += dzd.colwise().sum().transpose();
        Eigen::MatrixXd dp2 = dzd * params_.conv_out.w;
        Eigen::MatrixXd da2 = Eigen::MatrixXd::Zero(brows, static_cast<long>(c2) * kConvW2);
        for (long row = 0; row < brows; ++row)
            for (int oc = 0; oc < c2; ++oc)
                for (int j = 0; j < kConvPW2; ++j) {
                    const double g = 0.5 * dp2(row, static_cast<long>(oc) * kConvPW2 + j);
                    da2(row, static_cast<long>(oc) * kConvW2 + 2 * j) += g;
                    da2(row, static_cast<long>(oc) * kConvW2 + 2 * j + 1) += g;
                }
        da2 = (tape.conv_a2.array() > 0.0).select(da2, 0.0);
        Eigen::MatrixXd dp1 =
            Eigen::MatrixXd::Zero(brows, static_cast<long>(c1) * kConvH1 * kConvPW1);
        for (long row = 0; row < brows; ++row)
            for (int oc = 0; oc < c2; ++oc)
                for (int j = 0; j < kConvW2; ++j) {
                    const double g = da2(row, static_cast<long>(oc) * kConvW2 + j);
                    if (g == 0.0) continue;
                    grads.conv2.b(oc) += g;
                    for (int ic = 0; ic < c1; ++ic)
                        for (int ki = 0; ki < 2; ++ki)
                            for (int kj = 0; kj < 3; ++kj) {
                                grads.conv2.w(oc, (ic * 2 + ki) * 3 + kj) +=
                                    g * tape.conv_p1(row, (static_cast<long>(ic) * kConvH1 + ki) *
                                                              kConvPW1 +
                                                          (j + kj));
                                dp1(row, (static_cast<long>(ic) * kConvH1 + ki) * kConvPW1 +
                                             (j + kj)) +=
                                    g * params_.conv2.w(oc, (ic * 2 + ki) * 3 + kj);
                            }
                }
        Eigen::MatrixXd da1 =
            Eigen::MatrixXd::Zero(brows, static_cast<long>(c1) * kConvH1 * kConvW1);
        for (long row = 0; row < brows; ++row)
            for (int oc = 0; oc < c1; ++oc)
                for (int i = 0; i < kConvH1; ++i)
                    for (int j = 0; j < kConvPW1; ++j) {
                        const double g =
                            0.5 * dp1(row, (static_cast<long>(oc) * kConvH1 + i) * kConvPW1 + j);
                        da1(row, (static_cast<long>(oc) * kConvH1 + i) * kConvW1 + 2 * j) += g;
                        da1(row, (static_cast<long>(oc) * kConvH1 + i) * kConvW1 + 2 * j + 1) +=
                            g;
                    }
        da1 = (tape.conv_a1.array() > 0.0).select(da1, 0.0);
        for (long row = 0; row < brows; ++row)
            for (int oc = 0; oc < c1; ++oc)
                for (int i = 0; i < kConvH1; ++i)
                    for (int j = 0; j < kConvW1; ++j) {
                        const double g =
                            da1(row, (static_cast<long>(oc) * kConvH1 + i) * kConvW1 + j);
                        if (g == 0.0) continue;
                        grads.conv1.b(oc) += g;
                        for (int ic = 0; ic < cfg_.t_window; ++ic)
                            for (int ki = 0; ki < 2; ++ki)
                                for (int kj = 0; kj < 3; ++kj)
                                    grads.conv1.w(oc, (ic * 2 + ki) * 3 + kj) +=
                                        g * tape.conv_in(row, static_cast<long>(ic) * kPlane +
                                                                  (i + ki) * 30 + (j + kj));
                    }
    }
}

ModelParams zero_params_like(const ModelConfig& cfg) {
    Model m(cfg);
    ModelParams p = m.params();
    for (auto& ref : tensor_refs(p)) std::memset(ref.data, 0, sizeof(double) * ref.size);
    return p;
}

void save_checkpoint(const Model& model, const std::string& path) {
    const ModelConfig& c = model.config();
    std::ostringstream out(std::ios::binary);
    auto put = [&out](const void* p, std::size_t n) {
        out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    };
    const char magic[8] = {'D', 'T', 'S', 'V', '0', '0', '0', '1'};
    put(magic, 8);
    const std::int64_t ints[] = {c.d_model, c.n_heads, c.n_layers, c.t_max, c.t_window,
                                 c.static_dim, c.dynamic_dim, static_cast<int>(c.dynamic_mode),
                                 c.use_mask ? 1 : 0, c.static_hidden, c.static_latent,
                                 c.dynamic_hidden, c.dynamic_latent, c.embed_hidden,
                                 c.conv_channels1, c.conv_channels2};
    put(ints, sizeof(ints));
    put(&c.dropout, sizeof(double));
    put(&c.seed, sizeof(std::uint64_t));
    ModelParams& p = const_cast<Model&>(model).params();
    auto refs = tensor_refs(p);
    const std::uint64_t count = refs.size();
    put(&count, sizeof(count));
    for (const auto& ref : refs) {
        const std::uint64_t size = static_cast<std::uint64_t>(ref.size);
        put(&size, sizeof(size));
        put(ref.data, sizeof(double) * static_cast<std::size_t>(ref.size));
    }
    write_file_atomic(path, out.str());
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("checkpoint: cannot open " + path);
    auto get = [&in, &path](void* p, std::size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in) throw ParseError("checkpoint: truncated file " + path);
    };
    char magic[8];
    get(magic, 8);
    if (std::memcmp(magic, "DTSV0001", 8) != 0)
        throw ParseError("checkpoint: bad magic in " + path);
    std::int64_t ints[16];
    get(ints, sizeof(ints));
    ModelConfig c;
    c.d_model = static_cast<int>(ints[0]);
    c.n_heads = static_cast<int>(ints[1]);
    c.n_layers = static_cast<int>(ints[2]);
    c.t_max = static_cast<int>(ints[3]);
    c.t_window = static_cast<int>(ints[4]);
    c.static_dim = static_cast<int>(ints[5]);
    c.dynamic_dim = static_cast<int>(ints[6]);
    c.dynamic_mode = static_cast<DynamicMode>(ints[7]);
    c.use_mask = ints[8] != 0;
    c.static_hidden = static_cast<int>(ints[9]);
    c.static_latent = static_cast<int>(ints[10]);
    c.dynamic_hidden = static_cast<int>(ints[11]);
    c.dynamic_latent = static_cast<int>(ints[12]);
    c.embed_hidden = static_cast<int>(ints[13]);
    c.conv_channels1 = static_cast<int>(ints[14]);
    c.conv_channels2 = static_cast<int>(ints[15]);
    get(&c.dropout, sizeof(double));
    get(&c.seed, sizeof(std::uint64_t));
    Model model(c);
    auto refs = tensor_refs(model.params());
    std::uint64_t count = 0;
    get(&count, sizeof(count));
    if (count != refs.size()) throw ParseError("checkpoint: tensor count mismatch");
    for (auto& ref : refs) {
        std::uint64_t size = 0;
        get(&size, sizeof(size));
        if (size != static_cast<std::uint64_t>(ref.size))
            throw ParseError("checkpoint: tensor size mismatch for " + ref.name);
        get(ref.data, sizeof(double) * static_cast<std::size_t>(ref.size));
    }
    return model;
}

}  // namespace dtsurv

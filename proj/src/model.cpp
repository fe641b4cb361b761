#include "cifgen/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "cifgen/error.hpp"
#include "cifgen/tokenizer.hpp"

namespace cifgen {

namespace {

using Map = Eigen::Map<MatrixR>;
using CMap = Eigen::Map<const MatrixR>;
using RowMap = Eigen::Map<Eigen::RowVectorXd>;
using CRowMap = Eigen::Map<const Eigen::RowVectorXd>;

constexpr double kLnEps = 1e-5;
const double kGeluC = std::sqrt(2.0 / std::numbers::pi);

double gelu(double x) noexcept {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) noexcept {
    const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3 * 0.044715 * x * x);
}

MatrixR gelu(const MatrixR& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

struct Span {
    int begin;
    int end;
};

// Allowed key ranges per query row, read off the mask.
std::vector<std::vector<Span>> mask_spans(const AttentionMask& mask) {
    std::vector<std::vector<Span>> rows(static_cast<std::size_t>(mask.size));
    for (int k = 0; k < mask.size; ++k) {
        auto& r = rows[static_cast<std::size_t>(k)];
        int l = 0;
        while (l < mask.size) {
            if (!mask(k, l)) {
                ++l;
                continue;
            }
            int e = l;
            while (e < mask.size && mask(k, e)) ++e;
            r.push_back({l, e});
            l = e;
        }
    }
    return rows;
}

struct LayerNormOut {
    MatrixR y;
    MatrixR xhat;
    Eigen::VectorXd rstd;
};

LayerNormOut layer_norm(const MatrixR& x, std::span<const double> gamma, std::span<const double> beta) {
    LayerNormOut o;
    const auto n = x.rows(), d = x.cols();
    o.xhat.resize(n, d);
    o.y.resize(n, d);
    o.rstd.resize(n);
    const CRowMap g(gamma.data(), d), b(beta.data(), d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        o.rstd[i] = rstd;
        o.xhat.row(i) = (x.row(i).array() - mean) * rstd;
        o.y.row(i) = o.xhat.row(i).cwiseProduct(g) + b;
    }
    return o;
}

MatrixR layer_norm_backward(const MatrixR& dy, const LayerNormOut& ln, std::span<const double> gamma,
                            std::span<double> dgamma, std::span<double> dbeta) {
    const auto n = dy.rows(), d = dy.cols();
    const CRowMap g(gamma.data(), d);
    RowMap dg(dgamma.data(), d), db(dbeta.data(), d);
    dg += dy.cwiseProduct(ln.xhat).colwise().sum();
    db += dy.colwise().sum();
    MatrixR dx(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::RowVectorXd dxhat = dy.row(i).cwiseProduct(g);
        const double m1 = dxhat.mean();
        const double m2 = dxhat.cwiseProduct(ln.xhat.row(i)).mean();
        dx.row(i) = ln.rstd[i] * (dxhat.array() - m1 - ln.xhat.row(i).array() * m2);
    }
    return dx;
}

// y = x W^T + b with W stored out x in.
MatrixR linear(const MatrixR& x, std::span<const double> w, std::span<const double> b, Eigen::Index out) {
    const CMap W(w.data(), out, x.cols());
    MatrixR y(x.rows(), out);
    y.noalias() = x * W.transpose();
    y.rowwise() += CRowMap(b.data(), out);
    return y;
}

MatrixR linear_backward(const MatrixR& dy, const MatrixR& x, std::span<const double> w, std::span<double> dw,
                        std::span<double> db) {
    const auto out = dy.cols(), in = x.cols();
    Map(dw.data(), out, in).noalias() += dy.transpose() * x;
    RowMap(db.data(), out) += dy.colwise().sum();
    return dy * CMap(w.data(), out, in);
}

}  // namespace

void ModelConfig::validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, m); };
    if (embed_dim <= 0 || n_layers <= 0 || n_heads <= 0 || context < 2 || vocab < 2 || cond_input_dim <= 0 ||
        cond_hidden <= 0 || cond_layers < 1 || ffn_multiplier <= 0)
        bad("model dimensions must be positive");
    if (embed_dim % n_heads != 0) bad("embed_dim must be divisible by n_heads");
    if (dropout != 0.0) bad("only dropout = 0 is supported");
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
    const std::size_t f = d * static_cast<std::size_t>(config_.ffn_multiplier);
    std::size_t offset = 0;
    auto add = [&](std::string name, std::size_t rows, std::size_t cols, bool cond = false) {
        tensors_.push_back({std::move(name), offset, rows, cols, cond});
        offset += rows * cols;
    };
    std::size_t in = static_cast<std::size_t>(config_.cond_input_dim);
    for (int i = 0; i < config_.cond_layers; ++i) {
        const std::size_t out = i + 1 == config_.cond_layers ? d : static_cast<std::size_t>(config_.cond_hidden);
        add("cond." + std::to_string(i) + ".weight", out, in, true);
        add("cond." + std::to_string(i) + ".bias", out, 1, true);
        in = out;
    }
    add("wte", static_cast<std::size_t>(config_.vocab), d);
    add("wpe", static_cast<std::size_t>(config_.context), d);
    for (int l = 0; l < config_.n_layers; ++l) {
        const std::string p = "h." + std::to_string(l) + ".";
        add(p + "ln_1.weight", d, 1);
        add(p + "ln_1.bias", d, 1);
        add(p + "attn.c_attn.weight", 3 * d, d);
        add(p + "attn.c_attn.bias", 3 * d, 1);
        add(p + "attn.c_proj.weight", d, d);
        add(p + "attn.c_proj.bias", d, 1);
        add(p + "ln_2.weight", d, 1);
        add(p + "ln_2.bias", d, 1);
        add(p + "mlp.c_fc.weight", f, d);
        add(p + "mlp.c_fc.bias", f, 1);
        add(p + "mlp.c_proj.weight", d, f);
        add(p + "mlp.c_proj.bias", d, 1);
    }
    add("ln_f.weight", d, 1);
    add("ln_f.bias", d, 1);
    params_.assign(offset, 0.0);

    std::mt19937_64 rng(seed);
    const double resid_std = 0.02 / std::sqrt(2.0 * config_.n_layers);
    for (const auto& t : tensors_) {
        auto data = std::span<double>(params_).subspan(t.offset, t.size());
        const bool gain = t.name.ends_with("ln_1.weight") || t.name.ends_with("ln_2.weight") ||
                          t.name == "ln_f.weight";
        if (gain) {
            std::fill(data.begin(), data.end(), 1.0);
            continue;
        }
        if (!t.is_matrix()) continue;  // biases start at zero
        double std = 0.02;
        if (t.name.ends_with("c_proj.weight")) std = resid_std;
        if (t.conditioning && t.name != "cond." + std::to_string(config_.cond_layers - 1) + ".weight")
            std = 1.0 / std::sqrt(static_cast<double>(t.cols));
        std::normal_distribution<double> dist(0.0, std);
        for (auto& v : data) v = dist(rng);
    }
}

const TensorInfo& Model::tensor_info(std::string_view name) const {
    for (const auto& t : tensors_)
        if (t.name == name) return t;
    throw Error(ErrorCode::InvalidArgument, "no tensor named '" + std::string(name) + "'");
}

std::span<double> Model::tensor(std::string_view name) {
    const auto& t = tensor_info(name);
    return std::span<double>(params_).subspan(t.offset, t.size());
}

std::span<const double> Model::tensor(std::string_view name) const {
    const auto& t = tensor_info(name);
    return std::span<const double>(params_).subspan(t.offset, t.size());
}

std::size_t Model::conditioning_parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors_)
        if (t.conditioning) n += t.size();
    return n;
}

std::size_t Model::transformer_parameter_count() const noexcept {
    return params_.size() - conditioning_parameter_count();
}

// ---------------------------------------------------------------------------
// Forward with activations kept for the backward pass

struct LayerCache {
    MatrixR x_in;
    LayerNormOut ln1;
    MatrixR qkv;
    MatrixR att;  // concatenated head outputs before c_proj
    MatrixR lse;  // rows x heads; -inf for rows attending to nothing
    MatrixR x_mid;
    LayerNormOut ln2;
    MatrixR fc;  // before GELU
    MatrixR act;
};

struct Model::Cache {
    std::vector<std::vector<Span>> spans;
    std::vector<int> cond_rows;
    std::vector<MatrixR> cond_pre;  // per MLP layer, before activation
    std::vector<MatrixR> cond_in;   // per MLP layer input
    std::vector<LayerCache> layers;
    MatrixR x_final;
    LayerNormOut lnf;
    MatrixR logits;
};

Eigen::VectorXd Model::embed_condition(std::span<const double> y) const {
    if (static_cast<int>(y.size()) != config_.cond_input_dim)
        throw Error(ErrorCode::DimensionMismatch, "profile has " + std::to_string(y.size()) + " values, expected " +
                                                      std::to_string(config_.cond_input_dim));
    MatrixR h = CMap(y.data(), 1, static_cast<Eigen::Index>(y.size()));
    for (int i = 0; i < config_.cond_layers; ++i) {
        const auto& w = tensor_info("cond." + std::to_string(i) + ".weight");
        h = linear(h, tensor(w.name), tensor("cond." + std::to_string(i) + ".bias"),
                   static_cast<Eigen::Index>(w.rows));
        if (i + 1 < config_.cond_layers) h = gelu(h);
    }
    return h.row(0).transpose();
}

void Model::run(const PackedSegment& seg, const AttentionMask& mask, std::span<const PxrdProfile> profiles,
                Cache& c) const {
    const int t_len = seg.context();
    const int d = config_.embed_dim;
    const int heads = config_.n_heads;
    const int hd = d / heads;
    if (t_len > config_.context)
        throw Error(ErrorCode::ShapeMismatch, "segment of " + std::to_string(t_len) + " slots exceeds context " +
                                                  std::to_string(config_.context));
    if (mask.size != t_len) throw Error(ErrorCode::ShapeMismatch, "mask size differs from segment length");

    c.spans = mask_spans(mask);

    // conditioning MLP over all Cond slots at once
    c.cond_rows.clear();
    for (int k = 0; k < t_len; ++k)
        if (seg.slots[static_cast<std::size_t>(k)].kind == SlotKind::Cond) c.cond_rows.push_back(k);
    MatrixR cond_out;
    c.cond_in.clear();
    c.cond_pre.clear();
    if (!c.cond_rows.empty()) {
        MatrixR h(static_cast<Eigen::Index>(c.cond_rows.size()), config_.cond_input_dim);
        for (std::size_t i = 0; i < c.cond_rows.size(); ++i) {
            const int p = seg.slots[static_cast<std::size_t>(c.cond_rows[i])].value;
            if (p < 0 || static_cast<std::size_t>(p) >= profiles.size())
                throw Error(ErrorCode::ShapeMismatch, "cond slot refers to missing profile " + std::to_string(p));
            const auto& y = profiles[static_cast<std::size_t>(p)].y;
            if (static_cast<int>(y.size()) != config_.cond_input_dim)
                throw Error(ErrorCode::DimensionMismatch, "profile has " + std::to_string(y.size()) + " values");
            h.row(static_cast<Eigen::Index>(i)) = CRowMap(y.data(), static_cast<Eigen::Index>(y.size()));
        }
        for (int i = 0; i < config_.cond_layers; ++i) {
            const auto& w = tensor_info("cond." + std::to_string(i) + ".weight");
            c.cond_in.push_back(h);
            MatrixR pre = linear(h, tensor(w.name), tensor("cond." + std::to_string(i) + ".bias"),
                                 static_cast<Eigen::Index>(w.rows));
            h = i + 1 < config_.cond_layers ? gelu(pre) : pre;
            c.cond_pre.push_back(std::move(pre));
        }
        cond_out = std::move(h);
    }

    // input embeddings
    const CMap wte(tensor("wte").data(), config_.vocab, d);
    const CMap wpe(tensor("wpe").data(), config_.context, d);
    MatrixR x(t_len, d);
    std::size_t ci = 0;
    for (int k = 0; k < t_len; ++k) {
        const auto& slot = seg.slots[static_cast<std::size_t>(k)];
        const int pos = seg.positions[static_cast<std::size_t>(k)];
        if (pos < 0 || pos >= config_.context) throw Error(ErrorCode::ShapeMismatch, "position out of range");
        if (slot.kind == SlotKind::Cond) {
            x.row(k) = cond_out.row(static_cast<Eigen::Index>(ci++));
        } else {
            if (slot.value < 0 || slot.value >= config_.vocab)
                throw Error(ErrorCode::IdOutOfRange, "token id " + std::to_string(slot.value));
            x.row(k) = wte.row(slot.value);
        }
        x.row(k) += wpe.row(pos);
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> scores;
    c.layers.assign(static_cast<std::size_t>(config_.n_layers), {});
    for (int l = 0; l < config_.n_layers; ++l) {
        auto& L = c.layers[static_cast<std::size_t>(l)];
        const std::string p = "h." + std::to_string(l) + ".";
        L.x_in = x;
        L.ln1 = layer_norm(x, tensor(p + "ln_1.weight"), tensor(p + "ln_1.bias"));
        L.qkv = linear(L.ln1.y, tensor(p + "attn.c_attn.weight"), tensor(p + "attn.c_attn.bias"), 3 * d);
        L.att = MatrixR::Zero(t_len, d);
        L.lse.resize(t_len, heads);
        for (int h = 0; h < heads; ++h) {
            for (int k = 0; k < t_len; ++k) {
                const auto& spans = c.spans[static_cast<std::size_t>(k)];
                if (spans.empty()) {
                    L.lse(k, h) = -std::numeric_limits<double>::infinity();
                    continue;
                }
                const double* q = &L.qkv(k, h * hd);
                scores.clear();
                double mx = -std::numeric_limits<double>::infinity();
                for (const auto& s : spans)
                    for (int j = s.begin; j < s.end; ++j) {
                        const double* kk = &L.qkv(j, d + h * hd);
                        double dot = 0;
                        for (int e = 0; e < hd; ++e) dot += q[e] * kk[e];
                        dot *= scale;
                        scores.push_back(dot);
                        mx = std::max(mx, dot);
                    }
                double sum = 0;
                for (double v : scores) sum += std::exp(v - mx);
                const double lse = mx + std::log(sum);
                L.lse(k, h) = lse;
                double* out = &L.att(k, h * hd);
                std::size_t idx = 0;
                for (const auto& s : spans)
                    for (int j = s.begin; j < s.end; ++j) {
                        const double pj = std::exp(scores[idx++] - lse);
                        const double* v = &L.qkv(j, 2 * d + h * hd);
                        for (int e = 0; e < hd; ++e) out[e] += pj * v[e];
                    }
            }
        }
        x += linear(L.att, tensor(p + "attn.c_proj.weight"), tensor(p + "attn.c_proj.bias"), d);
        L.x_mid = x;
        L.ln2 = layer_norm(x, tensor(p + "ln_2.weight"), tensor(p + "ln_2.bias"));
        const int f = d * config_.ffn_multiplier;
        L.fc = linear(L.ln2.y, tensor(p + "mlp.c_fc.weight"), tensor(p + "mlp.c_fc.bias"), f);
        L.act = gelu(L.fc);
        x += linear(L.act, tensor(p + "mlp.c_proj.weight"), tensor(p + "mlp.c_proj.bias"), d);
    }
    c.x_final = x;
    c.lnf = layer_norm(x, tensor("ln_f.weight"), tensor("ln_f.bias"));
    c.logits.noalias() = c.lnf.y * wte.transpose();
}

MatrixR Model::forward(const PackedSegment& seg, const AttentionMask& mask,
                       std::span<const PxrdProfile> profiles) const {
    Cache c;
    run(seg, mask, profiles, c);
    return std::move(c.logits);
}

Model::LossSum Model::accumulate_gradient(const PackedSegment& seg, const AttentionMask& mask,
                                          std::span<const PxrdProfile> profiles, std::span<double> grad,
                                          double scale) const {
    if (grad.size() != params_.size()) throw Error(ErrorCode::ShapeMismatch, "gradient buffer size");
    Cache c;
    run(seg, mask, profiles, c);
    const int t_len = seg.context();
    const int d = config_.embed_dim;
    const int heads = config_.n_heads;
    const int hd = d / heads;
    const int v_size = config_.vocab;

    auto g = [&](std::string_view name) {
        const auto& t = tensor_info(name);
        return grad.subspan(t.offset, t.size());
    };

    // loss and dlogits
    LossSum result;
    MatrixR dlogits = MatrixR::Zero(t_len, v_size);
    for (int k = 0; k < t_len; ++k) {
        if (!seg.has_target(k)) continue;
        const int target = seg.slots[static_cast<std::size_t>(k) + 1].value;
        const auto row = c.logits.row(k);
        const double mx = row.maxCoeff();
        const Eigen::RowVectorXd e = (row.array() - mx).exp();
        const double sum = e.sum();
        result.total += mx + std::log(sum) - row[target];
        ++result.count;
        dlogits.row(k) = scale * e / sum;
        dlogits(k, target) -= scale;
    }
    if (!std::isfinite(result.total)) throw Error(ErrorCode::NonFiniteLoss, "loss is not finite");
    if (result.count == 0) return result;

    const CMap wte(tensor("wte").data(), v_size, d);
    Map dwte(g("wte").data(), v_size, d);
    dwte.noalias() += dlogits.transpose() * c.lnf.y;
    MatrixR dx = dlogits * wte;
    dx = layer_norm_backward(dx, c.lnf, tensor("ln_f.weight"), g("ln_f.weight"), g("ln_f.bias"));

    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> probs, dps;
    for (int l = config_.n_layers - 1; l >= 0; --l) {
        const auto& L = c.layers[static_cast<std::size_t>(l)];
        const std::string p = "h." + std::to_string(l) + ".";

        // MLP
        MatrixR dact =
            linear_backward(dx, L.act, tensor(p + "mlp.c_proj.weight"), g(p + "mlp.c_proj.weight"), g(p + "mlp.c_proj.bias"));
        MatrixR dfc = dact.cwiseProduct(L.fc.unaryExpr([](double v) { return gelu_grad(v); }));
        MatrixR dln2 =
            linear_backward(dfc, L.ln2.y, tensor(p + "mlp.c_fc.weight"), g(p + "mlp.c_fc.weight"), g(p + "mlp.c_fc.bias"));
        dx += layer_norm_backward(dln2, L.ln2, tensor(p + "ln_2.weight"), g(p + "ln_2.weight"), g(p + "ln_2.bias"));

        // attention
        MatrixR datt = linear_backward(dx, L.att, tensor(p + "attn.c_proj.weight"), g(p + "attn.c_proj.weight"),
                                       g(p + "attn.c_proj.bias"));
        MatrixR dqkv = MatrixR::Zero(t_len, 3 * d);
        for (int h = 0; h < heads; ++h) {
            for (int k = 0; k < t_len; ++k) {
                const auto& spans = c.spans[static_cast<std::size_t>(k)];
                if (spans.empty()) continue;
                const double* q = &L.qkv(k, h * hd);
                const double* dout = &datt(k, h * hd);
                const double lse = L.lse(k, h);
                probs.clear();
                dps.clear();
                double pdp = 0;
                for (const auto& s : spans)
                    for (int j = s.begin; j < s.end; ++j) {
                        const double* kk = &L.qkv(j, d + h * hd);
                        const double* v = &L.qkv(j, 2 * d + h * hd);
                        double dot = 0, dp = 0;
                        for (int e = 0; e < hd; ++e) {
                            dot += q[e] * kk[e];
                            dp += dout[e] * v[e];
                        }
                        const double pj = std::exp(dot * att_scale - lse);
                        probs.push_back(pj);
                        dps.push_back(dp);
                        pdp += pj * dp;
                    }
                double* dq = &dqkv(k, h * hd);
                std::size_t idx = 0;
                for (const auto& s : spans)
                    for (int j = s.begin; j < s.end; ++j, ++idx) {
                        const double pj = probs[idx];
                        const double ds = pj * (dps[idx] - pdp) * att_scale;
                        const double* kk = &L.qkv(j, d + h * hd);
                        double* dk = &dqkv(j, d + h * hd);
                        double* dv = &dqkv(j, 2 * d + h * hd);
                        for (int e = 0; e < hd; ++e) {
                            dq[e] += ds * kk[e];
                            dk[e] += ds * q[e];
                            dv[e] += pj * dout[e];
                        }
                    }
            }
        }
        MatrixR dln1 = linear_backward(dqkv, L.ln1.y, tensor(p + "attn.c_attn.weight"), g(p + "attn.c_attn.weight"),
                                       g(p + "attn.c_attn.bias"));
        dx += layer_norm_backward(dln1, L.ln1, tensor(p + "ln_1.weight"), g(p + "ln_1.weight"), g(p + "ln_1.bias"));
    }

    // embeddings
    Map dwpe(g("wpe").data(), config_.context, d);
    MatrixR dcond(static_cast<Eigen::Index>(c.cond_rows.size()), d);
    std::size_t ci = 0;
    for (int k = 0; k < t_len; ++k) {
        const auto& slot = seg.slots[static_cast<std::size_t>(k)];
        dwpe.row(seg.positions[static_cast<std::size_t>(k)]) += dx.row(k);
        if (slot.kind == SlotKind::Cond)
            dcond.row(static_cast<Eigen::Index>(ci++)) = dx.row(k);
        else
            dwte.row(slot.value) += dx.row(k);
    }
    if (!c.cond_rows.empty()) {
        MatrixR dh = dcond;
        for (int i = config_.cond_layers - 1; i >= 0; --i) {
            const std::string name = "cond." + std::to_string(i);
            if (i + 1 < config_.cond_layers)
                dh = dh.cwiseProduct(c.cond_pre[static_cast<std::size_t>(i)].unaryExpr([](double v) { return gelu_grad(v); }));
            dh = linear_backward(dh, c.cond_in[static_cast<std::size_t>(i)], tensor(name + ".weight"), g(name + ".weight"),
                                 g(name + ".bias"));
        }
    }
    return result;
}

double segment_loss(const MatrixR& logits, const PackedSegment& seg) {
    double total = 0;
    std::size_t n = 0;
    for (double v : token_losses(logits, seg))
        if (!std::isnan(v)) {
            total += v;
            ++n;
        }
    return n ? total / static_cast<double>(n) : 0.0;
}

std::vector<double> token_losses(const MatrixR& logits, const PackedSegment& seg) {
    if (logits.rows() != seg.context()) throw Error(ErrorCode::ShapeMismatch, "logits rows differ from segment length");
    std::vector<double> out(static_cast<std::size_t>(seg.context()), std::numeric_limits<double>::quiet_NaN());
    for (int k = 0; k < seg.context(); ++k) {
        if (!seg.has_target(k)) continue;
        const int target = seg.slots[static_cast<std::size_t>(k) + 1].value;
        if (target < 0 || target >= logits.cols()) throw Error(ErrorCode::IdOutOfRange, "target id");
        const auto row = logits.row(k);
        const double mx = row.maxCoeff();
        out[static_cast<std::size_t>(k)] = mx + std::log((row.array() - mx).exp().sum()) - row[target];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Incremental decoding

namespace {

class Decoder {
public:
    explicit Decoder(const Model& m) : m_(m), cfg_(m.config()) {
        const auto c = static_cast<Eigen::Index>(cfg_.context);
        keys_.assign(static_cast<std::size_t>(cfg_.n_layers), MatrixR(c, cfg_.embed_dim));
        values_ = keys_;
    }

    int length() const noexcept { return n_; }

    Eigen::RowVectorXd step(Eigen::RowVectorXd x) {
        const int d = cfg_.embed_dim, heads = cfg_.n_heads, hd = d / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        x += CMap(m_.tensor("wpe").data(), cfg_.context, d).row(n_);
        MatrixR xr = x;
        std::vector<double> scores(static_cast<std::size_t>(n_ + 1));
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const std::string p = "h." + std::to_string(l) + ".";
            auto ln1 = layer_norm(xr, m_.tensor(p + "ln_1.weight"), m_.tensor(p + "ln_1.bias"));
            MatrixR qkv = linear(ln1.y, m_.tensor(p + "attn.c_attn.weight"), m_.tensor(p + "attn.c_attn.bias"), 3 * d);
            auto& K = keys_[static_cast<std::size_t>(l)];
            auto& V = values_[static_cast<std::size_t>(l)];
            K.row(n_) = qkv.block(0, d, 1, d);
            V.row(n_) = qkv.block(0, 2 * d, 1, d);
            MatrixR att = MatrixR::Zero(1, d);
            for (int h = 0; h < heads; ++h) {
                const double* q = &qkv(0, h * hd);
                double mx = -std::numeric_limits<double>::infinity();
                for (int j = 0; j <= n_; ++j) {
                    const double* kk = &K(j, h * hd);
                    double dot = 0;
                    for (int e = 0; e < hd; ++e) dot += q[e] * kk[e];
                    dot *= scale;
                    scores[static_cast<std::size_t>(j)] = dot;
                    mx = std::max(mx, dot);
                }
                double sum = 0;
                for (int j = 0; j <= n_; ++j) sum += std::exp(scores[static_cast<std::size_t>(j)] - mx);
                const double lse = mx + std::log(sum);
                double* out = &att(0, h * hd);
                for (int j = 0; j <= n_; ++j) {
                    const double pj = std::exp(scores[static_cast<std::size_t>(j)] - lse);
                    const double* v = &V(j, h * hd);
                    for (int e = 0; e < hd; ++e) out[e] += pj * v[e];
                }
            }
            xr += linear(att, m_.tensor(p + "attn.c_proj.weight"), m_.tensor(p + "attn.c_proj.bias"), d);
            auto ln2 = layer_norm(xr, m_.tensor(p + "ln_2.weight"), m_.tensor(p + "ln_2.bias"));
            MatrixR fc = gelu(linear(ln2.y, m_.tensor(p + "mlp.c_fc.weight"), m_.tensor(p + "mlp.c_fc.bias"),
                                     d * cfg_.ffn_multiplier));
            xr += linear(fc, m_.tensor(p + "mlp.c_proj.weight"), m_.tensor(p + "mlp.c_proj.bias"), d);
        }
        ++n_;
        auto lnf = layer_norm(xr, m_.tensor("ln_f.weight"), m_.tensor("ln_f.bias"));
        return lnf.y * CMap(m_.tensor("wte").data(), cfg_.vocab, d).transpose();
    }

    Eigen::RowVectorXd token(int id) const {
        if (id < 0 || id >= cfg_.vocab) throw Error(ErrorCode::IdOutOfRange, "token id " + std::to_string(id));
        return CMap(m_.tensor("wte").data(), cfg_.vocab, cfg_.embed_dim).row(id);
    }

private:
    const Model& m_;
    const ModelConfig& cfg_;
    std::vector<MatrixR> keys_, values_;
    int n_ = 0;
};

int choose(const Eigen::RowVectorXd& logits, const std::vector<bool>& banned, const DecodeParams& params,
           std::mt19937_64& rng) {
    const auto v = static_cast<int>(logits.size());
    if (params.temperature <= 0) {
        int best = -1;
        for (int i = 0; i < v; ++i)
            if (!banned[static_cast<std::size_t>(i)] && (best < 0 || logits[i] > logits[best])) best = i;
        return best;
    }
    std::vector<int> order;
    for (int i = 0; i < v; ++i)
        if (!banned[static_cast<std::size_t>(i)]) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logits[a] > logits[b]; });
    if (params.top_k > 0 && static_cast<std::size_t>(params.top_k) < order.size())
        order.resize(static_cast<std::size_t>(params.top_k));
    std::vector<double> w(order.size());
    const double top = logits[order.front()];
    for (std::size_t i = 0; i < order.size(); ++i) w[i] = std::exp((logits[order[i]] - top) / params.temperature);
    std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
    return order[dist(rng)];
}

}  // namespace

std::vector<int> generate(const Model& model, std::span<const int> prompt, const PxrdProfile* profile,
                          const DecodeParams& params) {
    const auto& cfg = model.config();
    const int head = profile ? 1 : 0;
    if (static_cast<int>(prompt.size()) + head >= cfg.context)
        throw Error(ErrorCode::ContextOverflow, "prompt of " + std::to_string(prompt.size()) +
                                                    " tokens leaves no room in context " + std::to_string(cfg.context));
    if (prompt.empty() && !profile) throw Error(ErrorCode::InvalidArgument, "nothing to condition on: empty prompt");

    int newline = -1;
    std::vector<bool> banned(static_cast<std::size_t>(cfg.vocab), false);
    const auto& vocab = Vocabulary::standard();
    if (static_cast<std::size_t>(cfg.vocab) == vocab.size()) {
        newline = vocab.newline_id();
        for (int id : {vocab.cond_id(), vocab.pad_id(), vocab.unk_id()}) banned[static_cast<std::size_t>(id)] = true;
    }

    Decoder dec(model);
    Eigen::RowVectorXd logits;
    if (profile) {
        const Eigen::VectorXd e = model.embed_condition(profile->y);
        logits = dec.step(e.transpose());
    }
    std::vector<int> out(prompt.begin(), prompt.end());
    for (int id : prompt) logits = dec.step(dec.token(id));

    std::mt19937_64 rng(params.seed);
    int produced = 0;
    while (dec.length() < cfg.context) {
        if (params.max_new_tokens >= 0 && produced >= params.max_new_tokens) break;
        const int next = choose(logits, banned, params, rng);
        out.push_back(next);
        ++produced;
        if (newline >= 0 && out.size() >= 2 && out[out.size() - 1] == newline && out[out.size() - 2] == newline) break;
        if (dec.length() >= cfg.context) break;
        logits = dec.step(dec.token(next));
    }
    return out;
}

}  // namespace cifgen

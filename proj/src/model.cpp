#include "btm/model.hpp"

#include "btm/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace btm {

void ModelConfig::validate() const {
    require(vocab_size >= 2, ErrorKind::config, "model.vocab_size must be at least 2");
    require(d_model > 0 && n_heads > 0 && n_layers > 0 && d_ff > 0, ErrorKind::config,
            "model dimensions must be positive");
    require(d_model % n_heads == 0, ErrorKind::config, "model.d_model must be divisible by n_heads");
    require(max_seq_len >= 2, ErrorKind::config, "model.max_seq_len must be at least 2");
}

ParameterLayout::ParameterLayout(const ModelConfig& c) {
    c.validate();
    const std::size_t d = c.d_model;
    add("wte", c.vocab_size * d, true);
    add("wpe", c.max_seq_len * d, true);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string p = "h" + std::to_string(l) + ".";
        add(p + "ln1.g", d, false);
        add(p + "ln1.b", d, false);
        add(p + "attn.w_qkv", d * 3 * d, true);
        add(p + "attn.b_qkv", 3 * d, false);
        add(p + "attn.w_o", d * d, true);
        add(p + "attn.b_o", d, false);
        add(p + "ln2.g", d, false);
        add(p + "ln2.b", d, false);
        add(p + "mlp.w_in", d * c.d_ff, true);
        add(p + "mlp.b_in", c.d_ff, false);
        add(p + "mlp.w_out", c.d_ff * d, true);
        add(p + "mlp.b_out", d, false);
    }
    add("ln_f.g", d, false);
    add("ln_f.b", d, false);
    if (!c.tie_embeddings) {
        add("lm_head", d * c.vocab_size, true);
    }
}

void ParameterLayout::add(std::string name, std::size_t length, bool is_weight) {
    segments_.push_back(Segment{std::move(name), total_, length, is_weight});
    total_ += length;
}

const Segment& ParameterLayout::find(std::string_view name) const {
    for (const auto& s : segments_) {
        if (s.name == name) return s;
    }
    fail(ErrorKind::not_found, "no parameter segment named '" + std::string(name) + "'");
}

std::size_t parameter_count(const ModelConfig& config) {
    return ParameterLayout(config).total();
}

ParameterVector init_params(const ModelConfig& config, std::uint64_t seed) {
    ParameterVector p{ParameterLayout(config)};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.02);
    for (const auto& s : p.layout.segments()) {
        auto values = std::span<float>(p.values).subspan(s.offset, s.length);
        if (s.is_weight) {
            for (auto& v : values) v = static_cast<float>(normal(rng));
        } else {
            const bool gain = s.name.ends_with(".g");
            std::fill(values.begin(), values.end(), gain ? 1.0f : 0.0f);
        }
    }
    return p;
}

namespace {

constexpr double kLayerNormEps = 1e-5;

// Row-major kernels. Shapes are given as [rows, cols].

// C[M,N] = A[M,K] B[K,N] (+ bias[N])
template <class R>
void matmul(const R* a, const R* b, const R* bias, R* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        R* crow = c + i * n;
        if (bias) {
            std::copy(bias, bias + n, crow);
        } else {
            std::fill(crow, crow + n, R(0));
        }
        const R* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const R av = arow[p];
            const R* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class R>
void transpose(const R* in, R* out, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = in[i * cols + j];
    }
}

// C[M,N] = A[M,K] B[N,K]^T
template <class R>
void matmul_bt(const R* a, const R* b, R* c, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<R> bt(k * n);
    transpose(b, bt.data(), n, k);
    matmul<R>(a, bt.data(), nullptr, c, m, k, n);
}

// dA[M,K] += dC[M,N] B[K,N]^T
template <class R>
void grad_input(const R* dc, const R* b, R* da, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<R> bt(n * k);
    transpose(b, bt.data(), k, n);
    for (std::size_t i = 0; i < m; ++i) {
        const R* drow = dc + i * n;
        R* arow = da + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const R g = drow[j];
            const R* brow = bt.data() + j * k;
            for (std::size_t p = 0; p < k; ++p) arow[p] += g * brow[p];
        }
    }
}

// dB[K,N] += A[M,K]^T dC[M,N]; dbias[N] += column sums of dC
template <class R>
void grad_weight(const R* a, const R* dc, R* db, R* dbias, std::size_t m, std::size_t k,
                 std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const R* arow = a + i * k;
        const R* drow = dc + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const R av = arow[p];
            R* dbrow = db + p * n;
            for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * drow[j];
        }
        if (dbias) {
            for (std::size_t j = 0; j < n; ++j) dbias[j] += drow[j];
        }
    }
}

template <class R>
void layer_norm(const R* x, const R* g, const R* b, R* out, R* mean, R* rstd, std::size_t rows,
                std::size_t d) {
    for (std::size_t t = 0; t < rows; ++t) {
        const R* xr = x + t * d;
        double mu = 0;
        for (std::size_t i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<double>(d);
        double var = 0;
        for (std::size_t i = 0; i < d; ++i) {
            const double dv = xr[i] - mu;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
        mean[t] = static_cast<R>(mu);
        rstd[t] = static_cast<R>(rs);
        R* o = out + t * d;
        for (std::size_t i = 0; i < d; ++i) {
            o[i] = static_cast<R>((xr[i] - mu) * rs) * g[i] + b[i];
        }
    }
}

template <class R>
void layer_norm_backward(const R* dy, const R* x, const R* g, const R* mean, const R* rstd, R* dx,
                         R* dg, R* db, std::size_t rows, std::size_t d) {
    for (std::size_t t = 0; t < rows; ++t) {
        const R* xr = x + t * d;
        const R* dyr = dy + t * d;
        const R mu = mean[t];
        const R rs = rstd[t];
        R sum_dxhat = 0;
        R sum_dxhat_xhat = 0;
        for (std::size_t i = 0; i < d; ++i) {
            const R xhat = (xr[i] - mu) * rs;
            const R dxhat = dyr[i] * g[i];
            dg[i] += dyr[i] * xhat;
            db[i] += dyr[i];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        const R inv_d = R(1) / static_cast<R>(d);
        R* dxr = dx + t * d;
        for (std::size_t i = 0; i < d; ++i) {
            const R xhat = (xr[i] - mu) * rs;
            const R dxhat = dyr[i] * g[i];
            dxr[i] += rs * (dxhat - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
        }
    }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

template <class R>
R gelu(R x) {
    const R u = static_cast<R>(kGeluC) * (x + R(0.044715) * x * x * x);
    return R(0.5) * x * (R(1) + std::tanh(u));
}

template <class R>
R gelu_grad(R x) {
    const R u = static_cast<R>(kGeluC) * (x + R(0.044715) * x * x * x);
    const R th = std::tanh(u);
    const R du = static_cast<R>(kGeluC) * (R(1) + R(3) * R(0.044715) * x * x);
    return R(0.5) * (R(1) + th) + R(0.5) * x * (R(1) - th * th) * du;
}

struct LayerOffsets {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_in, b_in, w_out, b_out;
};

struct Offsets {
    std::size_t wte, wpe, ln_f_g, ln_f_b, lm_head = 0;
    std::vector<LayerOffsets> layers;

    Offsets(const ModelConfig& c, const ParameterLayout& layout) {
        require(layout.total() == parameter_count(c), ErrorKind::invalid_argument,
                "parameter vector does not match model config (" + std::to_string(layout.total()) +
                    " vs " + std::to_string(parameter_count(c)) + " values)");
        wte = layout.find("wte").offset;
        wpe = layout.find("wpe").offset;
        ln_f_g = layout.find("ln_f.g").offset;
        ln_f_b = layout.find("ln_f.b").offset;
        if (!c.tie_embeddings) lm_head = layout.find("lm_head").offset;
        for (std::size_t l = 0; l < c.n_layers; ++l) {
            const std::string p = "h" + std::to_string(l) + ".";
            layers.push_back(LayerOffsets{
                layout.find(p + "ln1.g").offset, layout.find(p + "ln1.b").offset,
                layout.find(p + "attn.w_qkv").offset, layout.find(p + "attn.b_qkv").offset,
                layout.find(p + "attn.w_o").offset, layout.find(p + "attn.b_o").offset,
                layout.find(p + "ln2.g").offset, layout.find(p + "ln2.b").offset,
                layout.find(p + "mlp.w_in").offset, layout.find(p + "mlp.b_in").offset,
                layout.find(p + "mlp.w_out").offset, layout.find(p + "mlp.b_out").offset});
        }
    }
};

template <class R>
struct LayerCache {
    std::vector<R> x_in, ln1_out, ln1_mean, ln1_rstd, qkv, att, y, x_mid, ln2_out, ln2_mean,
        ln2_rstd, h_pre, h_act;
};

template <class R>
struct Activations {
    std::vector<LayerCache<R>> layers;
    std::vector<R> x_final, lnf_out, lnf_mean, lnf_rstd, log_probs;
};

void check_block(const ModelConfig& c, const SequenceBlock& block) {
    require(block.tokens.size() >= 2, ErrorKind::invalid_argument, "block must hold at least 2 tokens");
    require(block.tokens.size() <= c.max_seq_len, ErrorKind::invalid_argument,
            "block length " + std::to_string(block.tokens.size()) + " exceeds max_seq_len " +
                std::to_string(c.max_seq_len));
    for (std::size_t t = 0; t < block.tokens.size(); ++t) {
        const TokenId id = block.tokens[t];
        require(id >= 0 && static_cast<std::size_t>(id) < c.vocab_size, ErrorKind::invalid_argument,
                "token id " + std::to_string(id) + " at position " + std::to_string(t) +
                    " is outside the vocabulary of size " + std::to_string(c.vocab_size));
    }
}

template <class R>
void run_forward(const ModelConfig& c, const Offsets& off, const std::vector<R>& p,
                 const SequenceBlock& block, Activations<R>& act) {
    const std::size_t T = block.tokens.size();
    const std::size_t d = c.d_model;
    const std::size_t H = c.n_heads;
    const std::size_t hd = d / H;
    const std::size_t F = c.d_ff;
    const std::size_t V = c.vocab_size;
    const R scale = static_cast<R>(1.0 / std::sqrt(static_cast<double>(hd)));
    const R* P = p.data();

    std::vector<R> x(T * d);
    for (std::size_t t = 0; t < T; ++t) {
        const R* te = P + off.wte + static_cast<std::size_t>(block.tokens[t]) * d;
        const R* pe = P + off.wpe + t * d;
        for (std::size_t i = 0; i < d; ++i) x[t * d + i] = te[i] + pe[i];
    }

    act.layers.resize(c.n_layers);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const auto& o = off.layers[l];
        auto& L = act.layers[l];
        L.x_in = x;
        L.ln1_out.resize(T * d);
        L.ln1_mean.resize(T);
        L.ln1_rstd.resize(T);
        layer_norm(x.data(), P + o.ln1_g, P + o.ln1_b, L.ln1_out.data(), L.ln1_mean.data(),
                   L.ln1_rstd.data(), T, d);

        L.qkv.resize(T * 3 * d);
        matmul(L.ln1_out.data(), P + o.w_qkv, P + o.b_qkv, L.qkv.data(), T, d, 3 * d);

        L.att.assign(H * T * T, R(0));
        L.y.assign(T * d, R(0));
        std::vector<R> scores(T);
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t t = 0; t < T; ++t) {
                const R* q = L.qkv.data() + t * 3 * d + h * hd;
                R mx = -std::numeric_limits<R>::infinity();
                for (std::size_t u = 0; u <= t; ++u) {
                    const R* k = L.qkv.data() + u * 3 * d + d + h * hd;
                    R s = 0;
                    for (std::size_t i = 0; i < hd; ++i) s += q[i] * k[i];
                    scores[u] = s * scale;
                    mx = std::max(mx, scores[u]);
                }
                R sum = 0;
                for (std::size_t u = 0; u <= t; ++u) {
                    scores[u] = std::exp(scores[u] - mx);
                    sum += scores[u];
                }
                R* arow = L.att.data() + (h * T + t) * T;
                R* yrow = L.y.data() + t * d + h * hd;
                for (std::size_t u = 0; u <= t; ++u) {
                    arow[u] = scores[u] / sum;
                    const R* v = L.qkv.data() + u * 3 * d + 2 * d + h * hd;
                    for (std::size_t i = 0; i < hd; ++i) yrow[i] += arow[u] * v[i];
                }
            }
        }

        std::vector<R> attn_out(T * d);
        matmul(L.y.data(), P + o.w_o, P + o.b_o, attn_out.data(), T, d, d);
        for (std::size_t i = 0; i < T * d; ++i) x[i] += attn_out[i];
        L.x_mid = x;

        L.ln2_out.resize(T * d);
        L.ln2_mean.resize(T);
        L.ln2_rstd.resize(T);
        layer_norm(x.data(), P + o.ln2_g, P + o.ln2_b, L.ln2_out.data(), L.ln2_mean.data(),
                   L.ln2_rstd.data(), T, d);
        L.h_pre.resize(T * F);
        matmul(L.ln2_out.data(), P + o.w_in, P + o.b_in, L.h_pre.data(), T, d, F);
        L.h_act.resize(T * F);
        for (std::size_t i = 0; i < T * F; ++i) L.h_act[i] = gelu(L.h_pre[i]);
        std::vector<R> mlp_out(T * d);
        matmul(L.h_act.data(), P + o.w_out, P + o.b_out, mlp_out.data(), T, F, d);
        for (std::size_t i = 0; i < T * d; ++i) x[i] += mlp_out[i];
    }

    act.x_final = std::move(x);
    act.lnf_out.resize(T * d);
    act.lnf_mean.resize(T);
    act.lnf_rstd.resize(T);
    layer_norm(act.x_final.data(), P + off.ln_f_g, P + off.ln_f_b, act.lnf_out.data(),
               act.lnf_mean.data(), act.lnf_rstd.data(), T, d);

    act.log_probs.resize(T * V);
    if (c.tie_embeddings) {
        matmul_bt(act.lnf_out.data(), P + off.wte, act.log_probs.data(), T, d, V);
    } else {
        matmul<R>(act.lnf_out.data(), P + off.lm_head, nullptr, act.log_probs.data(), T, d, V);
    }
    for (std::size_t t = 0; t < T; ++t) {
        R* row = act.log_probs.data() + t * V;
        double mx = row[0];
        for (std::size_t v = 1; v < V; ++v) mx = std::max(mx, static_cast<double>(row[v]));
        double sum = 0;
        for (std::size_t v = 0; v < V; ++v) sum += std::exp(static_cast<double>(row[v]) - mx);
        const double lse = mx + std::log(sum);
        for (std::size_t v = 0; v < V; ++v) row[v] = static_cast<R>(static_cast<double>(row[v]) - lse);
    }
}

bool is_scored(const SequenceBlock& block, std::size_t t, const Vocab& vocab) {
    return t + 1 < block.tokens.size() && block.tokens[t + 1] != vocab.pad_id;
}

// Accumulates d(weight * NLL)/d(params) for one block into grad.
template <class R>
void run_backward(const ModelConfig& c, const Offsets& off, const std::vector<R>& p,
                  const SequenceBlock& block, const Activations<R>& act, const Vocab& vocab,
                  R weight, std::vector<R>& grad) {
    const std::size_t T = block.tokens.size();
    const std::size_t d = c.d_model;
    const std::size_t H = c.n_heads;
    const std::size_t hd = d / H;
    const std::size_t F = c.d_ff;
    const std::size_t V = c.vocab_size;
    const R scale = static_cast<R>(1.0 / std::sqrt(static_cast<double>(hd)));
    const R* P = p.data();
    R* G = grad.data();

    // d(-log p[target]) / dlogits = softmax - onehot
    std::vector<R> dlogits(T * V, R(0));
    for (std::size_t t = 0; t < T; ++t) {
        if (!is_scored(block, t, vocab)) continue;
        const R* lp = act.log_probs.data() + t * V;
        R* dl = dlogits.data() + t * V;
        for (std::size_t v = 0; v < V; ++v) dl[v] = std::exp(lp[v]) * weight;
        dl[static_cast<std::size_t>(block.tokens[t + 1])] -= weight;
    }

    std::vector<R> dlnf(T * d, R(0));
    if (c.tie_embeddings) {
        // logits = lnf_out wte^T
        for (std::size_t t = 0; t < T; ++t) {
            const R* dl = dlogits.data() + t * V;
            R* dx = dlnf.data() + t * d;
            const R* xr = act.lnf_out.data() + t * d;
            for (std::size_t v = 0; v < V; ++v) {
                const R g = dl[v];
                if (g == R(0)) continue;
                const R* w = P + off.wte + v * d;
                R* dw = G + off.wte + v * d;
                for (std::size_t i = 0; i < d; ++i) {
                    dx[i] += g * w[i];
                    dw[i] += g * xr[i];
                }
            }
        }
    } else {
        grad_input(dlogits.data(), P + off.lm_head, dlnf.data(), T, d, V);
        grad_weight<R>(act.lnf_out.data(), dlogits.data(), G + off.lm_head, nullptr, T, d, V);
    }

    std::vector<R> dx(T * d, R(0));
    layer_norm_backward(dlnf.data(), act.x_final.data(), P + off.ln_f_g, act.lnf_mean.data(),
                        act.lnf_rstd.data(), dx.data(), G + off.ln_f_g, G + off.ln_f_b, T, d);

    std::vector<R> dh(T * F), dln(T * d), dy(T * d), dqkv(T * 3 * d), datt(T);
    for (std::size_t l = c.n_layers; l-- > 0;) {
        const auto& o = off.layers[l];
        const auto& L = act.layers[l];

        // x_out = x_mid + mlp(ln2(x_mid))
        std::fill(dh.begin(), dh.end(), R(0));
        grad_input(dx.data(), P + o.w_out, dh.data(), T, F, d);
        grad_weight(L.h_act.data(), dx.data(), G + o.w_out, G + o.b_out, T, F, d);
        for (std::size_t i = 0; i < T * F; ++i) dh[i] *= gelu_grad(L.h_pre[i]);
        std::fill(dln.begin(), dln.end(), R(0));
        grad_input(dh.data(), P + o.w_in, dln.data(), T, d, F);
        grad_weight(L.ln2_out.data(), dh.data(), G + o.w_in, G + o.b_in, T, d, F);
        layer_norm_backward(dln.data(), L.x_mid.data(), P + o.ln2_g, L.ln2_mean.data(),
                            L.ln2_rstd.data(), dx.data(), G + o.ln2_g, G + o.ln2_b, T, d);

        // x_mid = x_in + attn(ln1(x_in))
        std::fill(dy.begin(), dy.end(), R(0));
        grad_input(dx.data(), P + o.w_o, dy.data(), T, d, d);
        grad_weight(L.y.data(), dx.data(), G + o.w_o, G + o.b_o, T, d, d);

        std::fill(dqkv.begin(), dqkv.end(), R(0));
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t t = 0; t < T; ++t) {
                const R* arow = L.att.data() + (h * T + t) * T;
                const R* dyr = dy.data() + t * d + h * hd;
                R dot = 0;
                for (std::size_t u = 0; u <= t; ++u) {
                    const R* v = L.qkv.data() + u * 3 * d + 2 * d + h * hd;
                    R* dv = dqkv.data() + u * 3 * d + 2 * d + h * hd;
                    R s = 0;
                    for (std::size_t i = 0; i < hd; ++i) {
                        s += dyr[i] * v[i];
                        dv[i] += arow[u] * dyr[i];
                    }
                    datt[u] = s;
                    dot += arow[u] * s;
                }
                const R* q = L.qkv.data() + t * 3 * d + h * hd;
                R* dq = dqkv.data() + t * 3 * d + h * hd;
                for (std::size_t u = 0; u <= t; ++u) {
                    const R ds = arow[u] * (datt[u] - dot) * scale;
                    if (ds == R(0)) continue;
                    const R* k = L.qkv.data() + u * 3 * d + d + h * hd;
                    R* dk = dqkv.data() + u * 3 * d + d + h * hd;
                    for (std::size_t i = 0; i < hd; ++i) {
                        dq[i] += ds * k[i];
                        dk[i] += ds * q[i];
                    }
                }
            }
        }
        std::fill(dln.begin(), dln.end(), R(0));
        grad_input(dqkv.data(), P + o.w_qkv, dln.data(), T, d, 3 * d);
        grad_weight(L.ln1_out.data(), dqkv.data(), G + o.w_qkv, G + o.b_qkv, T, d, 3 * d);
        layer_norm_backward(dln.data(), L.x_in.data(), P + o.ln1_g, L.ln1_mean.data(),
                            L.ln1_rstd.data(), dx.data(), G + o.ln1_g, G + o.ln1_b, T, d);
    }

    for (std::size_t t = 0; t < T; ++t) {
        R* dte = G + off.wte + static_cast<std::size_t>(block.tokens[t]) * d;
        R* dpe = G + off.wpe + t * d;
        const R* g = dx.data() + t * d;
        for (std::size_t i = 0; i < d; ++i) {
            dte[i] += g[i];
            dpe[i] += g[i];
        }
    }
}

} // namespace

template <class Real>
ForwardResult<Real> forward(const ModelConfig& config, const BasicParameterVector<Real>& params,
                            const SequenceBlock& block, const Vocab& vocab) {
    const Offsets off(config, params.layout);
    check_block(config, block);
    Activations<Real> act;
    run_forward(config, off, params.values, block, act);

    ForwardResult<Real> out;
    out.length = block.tokens.size();
    out.vocab_size = config.vocab_size;
    for (std::size_t t = 0; t < out.length; ++t) {
        if (!is_scored(block, t, vocab)) continue;
        out.total_log_likelihood +=
            act.log_probs[t * config.vocab_size + static_cast<std::size_t>(block.tokens[t + 1])];
        ++out.token_count;
    }
    out.log_probs = std::move(act.log_probs);
    return out;
}

template <class Real>
LossAndGrad<Real> loss_and_grad(const ModelConfig& config, const BasicParameterVector<Real>& params,
                                std::span<const SequenceBlock> blocks, const Vocab& vocab) {
    require(!blocks.empty(), ErrorKind::invalid_argument, "loss_and_grad needs a non-empty batch");
    const Offsets off(config, params.layout);

    std::size_t tokens = 0;
    for (const auto& b : blocks) {
        check_block(config, b);
        for (std::size_t t = 0; t < b.tokens.size(); ++t) {
            if (is_scored(b, t, vocab)) ++tokens;
        }
    }
    require(tokens > 0, ErrorKind::invalid_argument, "batch has no scored positions");

    LossAndGrad<Real> out;
    out.token_count = tokens;
    out.grad = BasicParameterVector<Real>(params.layout);
    const Real weight = static_cast<Real>(1.0 / static_cast<double>(tokens));
    double total_ll = 0;
    Activations<Real> act;
    for (const auto& b : blocks) {
        run_forward(config, off, params.values, b, act);
        for (std::size_t t = 0; t < b.tokens.size(); ++t) {
            if (!is_scored(b, t, vocab)) continue;
            total_ll += act.log_probs[t * config.vocab_size + static_cast<std::size_t>(b.tokens[t + 1])];
        }
        run_backward(config, off, params.values, b, act, vocab, weight, out.grad.values);
    }
    out.loss = -total_ll / static_cast<double>(tokens);
    return out;
}

template ForwardResult<float> forward(const ModelConfig&, const BasicParameterVector<float>&,
                                      const SequenceBlock&, const Vocab&);
template ForwardResult<double> forward(const ModelConfig&, const BasicParameterVector<double>&,
                                       const SequenceBlock&, const Vocab&);
template LossAndGrad<float> loss_and_grad(const ModelConfig&, const BasicParameterVector<float>&,
                                          std::span<const SequenceBlock>, const Vocab&);
template LossAndGrad<double> loss_and_grad(const ModelConfig&, const BasicParameterVector<double>&,
                                           std::span<const SequenceBlock>, const Vocab&);

} // namespace btm

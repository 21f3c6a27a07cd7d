#pragma once

#include "fairicl/rng.hpp"
#include "fairicl/tokenizer.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace fairicl::lm {

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using DenseVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline constexpr double kLayerNormEps = 1e-5;

struct LMConfig {
    int layers = 2;
    int dim = 128;
    int heads = 4;
    int context_len = 512;
    int vocab_size = 0;

    int head_dim() const { return dim / heads; }
    void validate() const {
        if (layers < 1 || dim < 1 || heads < 1 || context_len < 1 || vocab_size < 1)
            throw std::runtime_error("lm config: all dimensions must be positive");
        if (dim % heads != 0) throw std::runtime_error("lm config: dim must be divisible by heads");
    }
};

// Pre-norm causal transformer weights. Biases and gains are 1 x d so every
// tensor shares one dense type and the checkpoint walk in tensors() is
// uniform.
template <typename Scalar>
struct TransformerParams {
    using Mat = DenseMatrix<Scalar>;

    struct Layer {
        Mat ln1_gain, ln1_bias;        // 1 x d
        Mat wq, wk, wv, wo;            // d x d
        Mat ln2_gain, ln2_bias;        // 1 x d
        Mat mlp_in_w;                  // d x 4d
        Mat mlp_in_b;                  // 1 x 4d
        Mat mlp_out_w;                 // 4d x d
        Mat mlp_out_b;                 // 1 x d
    };

    Mat token_embedding;               // vocab x d
    Mat position_embedding;            // context x d
    std::vector<Layer> layers;
    Mat final_gain, final_bias;        // 1 x d
    Mat head;                          // vocab x d

    static TransformerParams zeros(const LMConfig& cfg) {
        TransformerParams p;
        const int d = cfg.dim;
        p.token_embedding = Mat::Zero(cfg.vocab_size, d);
        p.position_embedding = Mat::Zero(cfg.context_len, d);
        p.layers.resize(std::size_t(cfg.layers));
        for (auto& l : p.layers) {
            l.ln1_gain = Mat::Zero(1, d);
            l.ln1_bias = Mat::Zero(1, d);
            l.wq = Mat::Zero(d, d);
            l.wk = Mat::Zero(d, d);
            l.wv = Mat::Zero(d, d);
            l.wo = Mat::Zero(d, d);
            l.ln2_gain = Mat::Zero(1, d);
            l.ln2_bias = Mat::Zero(1, d);
            l.mlp_in_w = Mat::Zero(d, 4 * d);
            l.mlp_in_b = Mat::Zero(1, 4 * d);
            l.mlp_out_w = Mat::Zero(4 * d, d);
            l.mlp_out_b = Mat::Zero(1, d);
        }
        p.final_gain = Mat::Zero(1, d);
        p.final_bias = Mat::Zero(1, d);
        p.head = Mat::Zero(cfg.vocab_size, d);
        return p;
    }

    // Gaussian init, one stream, tensors visited in tensors() order and
    // filled row-major, so a seed pins every weight. Residual projections
    // are scaled down by sqrt(2 * layers).
    static TransformerParams init(const LMConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        TransformerParams p = zeros(cfg);
        Rng rng(seed);
        const double base_std = 0.02;
        const double resid_std = base_std / std::sqrt(double(2 * cfg.layers));
        auto fill = [&](Mat& m, double stddev) {
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = Scalar(rng.normal(0.0, stddev));
        };
        fill(p.token_embedding, base_std);
        fill(p.position_embedding, base_std);
        for (auto& l : p.layers) {
            l.ln1_gain.setOnes();
            l.ln2_gain.setOnes();
            fill(l.wq, base_std);
            fill(l.wk, base_std);
            fill(l.wv, base_std);
            fill(l.wo, resid_std);
            fill(l.mlp_in_w, base_std);
            fill(l.mlp_out_w, resid_std);
        }
        p.final_gain.setOnes();
        fill(p.head, base_std);
        return p;
    }

    std::vector<std::pair<std::string, Mat*>> tensors() {
        std::vector<std::pair<std::string, Mat*>> out;
        out.emplace_back("tok_emb", &token_embedding);
        out.emplace_back("pos_emb", &position_embedding);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string pre = "L" + std::to_string(i) + ".";
            Layer& l = layers[i];
            out.emplace_back(pre + "ln1_g", &l.ln1_gain);
            out.emplace_back(pre + "ln1_b", &l.ln1_bias);
            out.emplace_back(pre + "wq", &l.wq);
            out.emplace_back(pre + "wk", &l.wk);
            out.emplace_back(pre + "wv", &l.wv);
            out.emplace_back(pre + "wo", &l.wo);
            out.emplace_back(pre + "ln2_g", &l.ln2_gain);
            out.emplace_back(pre + "ln2_b", &l.ln2_bias);
            out.emplace_back(pre + "mlp_in_w", &l.mlp_in_w);
            out.emplace_back(pre + "mlp_in_b", &l.mlp_in_b);
            out.emplace_back(pre + "mlp_out_w", &l.mlp_out_w);
            out.emplace_back(pre + "mlp_out_b", &l.mlp_out_b);
        }
        out.emplace_back("lnf_g", &final_gain);
        out.emplace_back("lnf_b", &final_bias);
        out.emplace_back("head", &head);
        return out;
    }

    std::vector<std::pair<std::string, const Mat*>> tensors() const {
        auto mut = const_cast<TransformerParams*>(this)->tensors();
        std::vector<std::pair<std::string, const Mat*>> out;
        out.reserve(mut.size());
        for (auto& [n, m] : mut) out.emplace_back(n, m);
        return out;
    }

    template <typename Other>
    TransformerParams<Other> cast() const {
        TransformerParams<Other> out;
        out.token_embedding = token_embedding.template cast<Other>();
        out.position_embedding = position_embedding.template cast<Other>();
        out.layers.resize(layers.size());
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const Layer& l = layers[i];
            auto& o = out.layers[i];
            o.ln1_gain = l.ln1_gain.template cast<Other>();
            o.ln1_bias = l.ln1_bias.template cast<Other>();
            o.wq = l.wq.template cast<Other>();
            o.wk = l.wk.template cast<Other>();
            o.wv = l.wv.template cast<Other>();
            o.wo = l.wo.template cast<Other>();
            o.ln2_gain = l.ln2_gain.template cast<Other>();
            o.ln2_bias = l.ln2_bias.template cast<Other>();
            o.mlp_in_w = l.mlp_in_w.template cast<Other>();
            o.mlp_in_b = l.mlp_in_b.template cast<Other>();
            o.mlp_out_w = l.mlp_out_w.template cast<Other>();
            o.mlp_out_b = l.mlp_out_b.template cast<Other>();
        }
        out.final_gain = final_gain.template cast<Other>();
        out.final_bias = final_bias.template cast<Other>();
        out.head = head.template cast<Other>();
        return out;
    }
};

// One sequence position: an ordinary token id or row `soft_row` of an
// injected soft-prompt matrix.
struct InputItem {
    int token_id = -1;
    int soft_row = -1;
};

inline InputItem token_item(int id) { return InputItem{id, -1}; }
inline InputItem soft_item(int row) { return InputItem{-1, row}; }

inline std::vector<InputItem> with_soft_prefix(int soft_rows, const std::vector<int>& tokens) {
    std::vector<InputItem> items;
    items.reserve(std::size_t(soft_rows) + tokens.size());
    for (int r = 0; r < soft_rows; ++r) items.push_back(soft_item(r));
    for (int t : tokens) items.push_back(token_item(t));
    return items;
}

inline std::vector<InputItem> with_soft_postfix(const std::vector<int>& tokens, int soft_rows) {
    std::vector<InputItem> items;
    items.reserve(tokens.size() + std::size_t(soft_rows));
    for (int t : tokens) items.push_back(token_item(t));
    for (int r = 0; r < soft_rows; ++r) items.push_back(soft_item(r));
    return items;
}

// Redirects head rows [first_id, first_id + rows->rows()) to `rows`; used to
// tie the output rows of the reserved concept ids to the current soft-prompt
// embeddings when scoring.
template <typename Scalar>
struct HeadTie {
    int first_id = -1;
    const DenseMatrix<Scalar>* rows = nullptr;
    bool active() const { return first_id >= 0 && rows != nullptr; }
};

// Logits at sequence row `row` score token `target_id`.
struct LossTarget {
    int row = 0;
    int target_id = 0;
};

template <typename Scalar>
struct LayerCache {
    using Mat = DenseMatrix<Scalar>;
    Mat h_in;                  // residual stream entering the layer
    Mat xhat1;                 // LN1 normalized values
    DenseVector<Scalar> rstd1;
    Mat a;                     // LN1 output
    Mat q, k, v;
    std::vector<Mat> probs;    // per head, causal row softmax
    Mat ctx;                   // concatenated heads, pre-wo
    Mat h_mid;                 // after attention residual
    Mat xhat2;
    DenseVector<Scalar> rstd2;
    Mat b;                     // LN2 output
    Mat z;                     // MLP pre-activation
    Mat u;                     // gelu(z)
};

template <typename Scalar>
struct ForwardCache {
    DenseMatrix<Scalar> x;     // embedded input, T x d
    std::vector<LayerCache<Scalar>> layers;
    DenseMatrix<Scalar> xhatf;
    DenseVector<Scalar> rstdf;
    DenseMatrix<Scalar> f;     // final normalized stream
    int seq_len = 0;
};

namespace detail {

template <typename Scalar>
Scalar gelu(Scalar x) {
    return Scalar(0.5) * x * (Scalar(1) + Scalar(std::erf(double(x) * 0.7071067811865476)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
    const double xd = double(x);
    const double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865476));
    const double pdf = std::exp(-0.5 * xd * xd) * 0.3989422804014327;
    return Scalar(cdf + xd * pdf);
}

// Row-wise layer norm; writes normalized values and 1/stddev, returns
// gain * xhat + bias.
template <typename Scalar>
DenseMatrix<Scalar> layer_norm(const DenseMatrix<Scalar>& x, const DenseMatrix<Scalar>& gain,
                               const DenseMatrix<Scalar>& bias, DenseMatrix<Scalar>& xhat,
                               DenseVector<Scalar>& rstd) {
    const Eigen::Index t = x.rows();
    const Eigen::Index d = x.cols();
    xhat.resize(t, d);
    rstd.resize(t);
    DenseMatrix<Scalar> out(t, d);
    for (Eigen::Index i = 0; i < t; ++i) {
        const Scalar mu = x.row(i).mean();
        const Scalar var = (x.row(i).array() - mu).square().sum() / Scalar(d);
        const Scalar r = Scalar(1) / std::sqrt(var + Scalar(kLayerNormEps));
        rstd(i) = r;
        xhat.row(i) = (x.row(i).array() - mu) * r;
        out.row(i) = xhat.row(i).cwiseProduct(gain.row(0)) + bias.row(0);
    }
    return out;
}

// Backward of layer_norm. Accumulates gain/bias grads when given, returns dx.
template <typename Scalar>
DenseMatrix<Scalar> layer_norm_backward(const DenseMatrix<Scalar>& dy,
                                        const DenseMatrix<Scalar>& xhat,
                                        const DenseVector<Scalar>& rstd,
                                        const DenseMatrix<Scalar>& gain,
                                        DenseMatrix<Scalar>* dgain, DenseMatrix<Scalar>* dbias) {
    const Eigen::Index t = dy.rows();
    const Eigen::Index d = dy.cols();
    DenseMatrix<Scalar> dx(t, d);
    for (Eigen::Index i = 0; i < t; ++i) {
        const auto dxhat = dy.row(i).cwiseProduct(gain.row(0));
        const Scalar m1 = dxhat.mean();
        const Scalar m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
        dx.row(i) = ((dxhat.array() - m1) - xhat.row(i).array() * m2) * rstd(i);
        if (dgain) dgain->row(0) += dy.row(i).cwiseProduct(xhat.row(i));
        if (dbias) dbias->row(0) += dy.row(i);
    }
    return dx;
}

} // namespace detail

// Embeds a sequence of items: token rows come from the embedding table, soft
// rows from `soft`; learned position embeddings are added either way.
template <typename Scalar>
DenseMatrix<Scalar> embed_sequence(const TransformerParams<Scalar>& p, const LMConfig& cfg,
                                   const DenseMatrix<std::type_identity_t<Scalar>>* soft,
                                   const std::vector<InputItem>& items) {
    const int t = int(items.size());
    if (t > cfg.context_len)
        throw std::runtime_error("context overflow: sequence length " + std::to_string(t) +
                                 " exceeds context " + std::to_string(cfg.context_len));
    DenseMatrix<Scalar> x(t, cfg.dim);
    for (int i = 0; i < t; ++i) {
        if (items[std::size_t(i)].token_id >= 0) {
            const int id = items[std::size_t(i)].token_id;
            if (id >= cfg.vocab_size) throw std::runtime_error("token id out of vocabulary");
            x.row(i) = p.token_embedding.row(id);
        } else {
            if (soft == nullptr) throw std::runtime_error("soft item without a soft matrix");
            x.row(i) = soft->row(items[std::size_t(i)].soft_row);
        }
        x.row(i) += p.position_embedding.row(i);
    }
    return x;
}

template <typename Scalar>
void forward(const TransformerParams<Scalar>& p, const LMConfig& cfg,
             const DenseMatrix<Scalar>& x, ForwardCache<Scalar>& cache) {
    using Mat = DenseMatrix<Scalar>;
    const Eigen::Index t = x.rows();
    const int dh = cfg.head_dim();
    const Scalar scale = Scalar(1.0 / std::sqrt(double(dh)));

    cache.x = x;
    cache.seq_len = int(t);
    cache.layers.assign(std::size_t(cfg.layers), LayerCache<Scalar>{});

    Mat h = x;
    for (int li = 0; li < cfg.layers; ++li) {
        auto& lc = cache.layers[std::size_t(li)];
        const auto& lp = p.layers[std::size_t(li)];
        lc.h_in = h;
        lc.a = detail::layer_norm(h, lp.ln1_gain, lp.ln1_bias, lc.xhat1, lc.rstd1);
        lc.q.noalias() = lc.a * lp.wq;
        lc.k.noalias() = lc.a * lp.wk;
        lc.v.noalias() = lc.a * lp.wv;
        lc.probs.assign(std::size_t(cfg.heads), Mat());
        lc.ctx.resize(t, cfg.dim);
        for (int hh = 0; hh < cfg.heads; ++hh) {
            const auto qh = lc.q.middleCols(hh * dh, dh);
            const auto kh = lc.k.middleCols(hh * dh, dh);
            const auto vh = lc.v.middleCols(hh * dh, dh);
            Mat scores(t, t);
            scores.noalias() = qh * kh.transpose();
            scores *= scale;
            Mat& probs = lc.probs[std::size_t(hh)];
            probs.setZero(t, t);
            for (Eigen::Index i = 0; i < t; ++i) {
                auto row = scores.row(i).head(i + 1);
                const Scalar mx = row.maxCoeff();
                probs.row(i).head(i + 1) = (row.array() - mx).exp();
                probs.row(i).head(i + 1) /= probs.row(i).head(i + 1).sum();
            }
            lc.ctx.middleCols(hh * dh, dh).noalias() = probs * vh;
        }
        Mat attn(t, cfg.dim);
        attn.noalias() = lc.ctx * lp.wo;
        lc.h_mid = h + attn;
        lc.b = detail::layer_norm(lc.h_mid, lp.ln2_gain, lp.ln2_bias, lc.xhat2, lc.rstd2);
        lc.z.noalias() = lc.b * lp.mlp_in_w;
        lc.z.rowwise() += lp.mlp_in_b.row(0);
        lc.u = lc.z.unaryExpr([](Scalar v) { return detail::gelu(v); });
        Mat m(t, cfg.dim);
        m.noalias() = lc.u * lp.mlp_out_w;
        m.rowwise() += lp.mlp_out_b.row(0);
        h = lc.h_mid + m;
    }
    cache.f = detail::layer_norm(h, p.final_gain, p.final_bias, cache.xhatf, cache.rstdf);
}

// Logit vector at sequence row `row`, honoring a head tie when present.
template <typename Scalar>
DenseVector<Scalar> logits_at(const TransformerParams<Scalar>& p, const ForwardCache<Scalar>& c,
                              int row, const HeadTie<Scalar>& tie = {}) {
    DenseVector<Scalar> out = p.head * c.f.row(row).transpose();
    if (tie.active()) {
        out.segment(tie.first_id, tie.rows->rows()).noalias() =
            (*tie.rows) * c.f.row(row).transpose();
    }
    return out;
}

template <typename Scalar>
DenseVector<Scalar> log_softmax(const DenseVector<Scalar>& logits) {
    const Scalar mx = logits.maxCoeff();
    const Scalar lse = mx + Scalar(std::log(double((logits.array() - mx).exp().sum())));
    return logits.array() - lse;
}

// Loss = sum of -log softmax(logits[row])[target] over targets. Accumulates
// parameter gradients into *param_grads (when non-null; must be zeros() of
// the right shape or carry previous accumulation) and writes input-embedding
// gradients into *input_grads (when non-null). Returns the loss.
template <typename Scalar>
Scalar nll_backward(const TransformerParams<Scalar>& p, const LMConfig& cfg,
                    const ForwardCache<Scalar>& cache, const std::vector<LossTarget>& targets,
                    const HeadTie<std::type_identity_t<Scalar>>& tie,
                    TransformerParams<std::type_identity_t<Scalar>>* param_grads,
                    DenseMatrix<std::type_identity_t<Scalar>>* input_grads) {
    using Mat = DenseMatrix<Scalar>;
    const Eigen::Index t = cache.seq_len;
    const int hd = cfg.head_dim();
    const Scalar scale = Scalar(1.0 / std::sqrt(double(hd)));
    if (tie.active() && param_grads != nullptr)
        throw std::runtime_error("nll_backward: head tie is a scoring construct, no param grads");

    Scalar loss = 0;
    Mat df = Mat::Zero(t, cfg.dim);
    for (const auto& tg : targets) {
        const DenseVector<Scalar> logits = logits_at(p, cache, tg.row, tie);
        DenseVector<Scalar> lsm = log_softmax(logits);
        loss -= lsm(tg.target_id);
        DenseVector<Scalar> dlogit = lsm.array().exp();
        dlogit(tg.target_id) -= Scalar(1);
        df.row(tg.row).noalias() += dlogit.transpose() * p.head;
        if (tie.active()) {
            const auto seg = dlogit.segment(tie.first_id, tie.rows->rows());
            df.row(tg.row).noalias() -=
                seg.transpose() * p.head.middleRows(tie.first_id, tie.rows->rows());
            df.row(tg.row).noalias() += seg.transpose() * (*tie.rows);
        }
        if (param_grads) param_grads->head.noalias() += dlogit * cache.f.row(tg.row);
    }

    // Final layer norm.
    Mat dh = detail::layer_norm_backward(df, cache.xhatf, cache.rstdf, p.final_gain,
                                         param_grads ? &param_grads->final_gain : nullptr,
                                         param_grads ? &param_grads->final_bias : nullptr);

    for (int li = cfg.layers - 1; li >= 0; --li) {
        const auto& lc = cache.layers[std::size_t(li)];
        const auto& lp = p.layers[std::size_t(li)];
        auto* lg = param_grads ? &param_grads->layers[std::size_t(li)] : nullptr;

        // MLP block: h_out = h_mid + gelu(LN2(h_mid) W_in + b) W_out + b.
        const Mat& dm = dh;
        Mat du(t, 4 * cfg.dim);
        du.noalias() = dm * lp.mlp_out_w.transpose();
        if (lg) {
            lg->mlp_out_w.noalias() += lc.u.transpose() * dm;
            lg->mlp_out_b.row(0) += dm.colwise().sum();
        }
        Mat dz = du.cwiseProduct(lc.z.unaryExpr([](Scalar v) { return detail::gelu_grad(v); }));
        Mat db(t, cfg.dim);
        db.noalias() = dz * lp.mlp_in_w.transpose();
        if (lg) {
            lg->mlp_in_w.noalias() += lc.b.transpose() * dz;
            lg->mlp_in_b.row(0) += dz.colwise().sum();
        }
        Mat dh_mid = dh + detail::layer_norm_backward(db, lc.xhat2, lc.rstd2, lp.ln2_gain,
                                                      lg ? &lg->ln2_gain : nullptr,
                                                      lg ? &lg->ln2_bias : nullptr);

        // Attention block: h_mid = h_in + (heads of LN1(h_in)) wo.
        const Mat& dattn = dh_mid;
        Mat dctx(t, cfg.dim);
        dctx.noalias() = dattn * lp.wo.transpose();
        if (lg) lg->wo.noalias() += lc.ctx.transpose() * dattn;
        Mat dq = Mat::Zero(t, cfg.dim);
        Mat dk = Mat::Zero(t, cfg.dim);
        Mat dv = Mat::Zero(t, cfg.dim);
        for (int hh = 0; hh < cfg.heads; ++hh) {
            const auto qh = lc.q.middleCols(hh * hd, hd);
            const auto kh = lc.k.middleCols(hh * hd, hd);
            const auto vh = lc.v.middleCols(hh * hd, hd);
            const Mat& probs = lc.probs[std::size_t(hh)];
            const auto dctx_h = dctx.middleCols(hh * hd, hd);
            Mat dprobs(t, t);
            dprobs.noalias() = dctx_h * vh.transpose();
            dv.middleCols(hh * hd, hd).noalias() += probs.transpose() * dctx_h;
            Mat dscores(t, t);
            for (Eigen::Index i = 0; i < t; ++i) {
                const Scalar dot = dprobs.row(i).dot(probs.row(i));
                dscores.row(i) = probs.row(i).cwiseProduct(
                    (dprobs.row(i).array() - dot).matrix());
            }
            dq.middleCols(hh * hd, hd).noalias() += dscores * kh * scale;
            dk.middleCols(hh * hd, hd).noalias() += dscores.transpose() * qh * scale;
        }
        Mat da(t, cfg.dim);
        da.noalias() = dq * lp.wq.transpose();
        da.noalias() += dk * lp.wk.transpose();
        da.noalias() += dv * lp.wv.transpose();
        if (lg) {
            lg->wq.noalias() += lc.a.transpose() * dq;
            lg->wk.noalias() += lc.a.transpose() * dk;
            lg->wv.noalias() += lc.a.transpose() * dv;
        }
        dh = dh_mid + detail::layer_norm_backward(da, lc.xhat1, lc.rstd1, lp.ln1_gain,
                                                  lg ? &lg->ln1_gain : nullptr,
                                                  lg ? &lg->ln1_bias : nullptr);
    }

    if (input_grads) *input_grads = dh;
    return loss;
}

// Exact per-position log-probabilities of tokens[span_begin..span_end) given
// all preceding positions, with an optional soft prefix occupying the first
// rows. Indices are into `tokens`; index 0 needs a soft prefix in front of it.
template <typename Scalar>
std::vector<double> log_prob(const TransformerParams<Scalar>& p, const LMConfig& cfg,
                             const DenseMatrix<std::type_identity_t<Scalar>>* soft_prefix,
                             const std::vector<int>& tokens,
                             std::size_t span_begin, std::size_t span_end) {
    if (span_begin >= span_end) return {};
    if (span_end > tokens.size()) throw std::runtime_error("log_prob: span beyond sequence");
    const int c = soft_prefix ? int(soft_prefix->rows()) : 0;
    if (c == 0 && span_begin == 0)
        throw std::runtime_error("log_prob: position 0 has no preceding context");
    ForwardCache<Scalar> cache;
    forward(p, cfg, embed_sequence(p, cfg, soft_prefix, with_soft_prefix(c, tokens)), cache);
    std::vector<double> out;
    out.reserve(span_end - span_begin);
    for (std::size_t i = span_begin; i < span_end; ++i) {
        const auto lsm = log_softmax(logits_at(p, cache, c + int(i) - 1));
        out.push_back(double(lsm(tokens[i])));
    }
    return out;
}

// Gradient of -sum log P(tokens[i]) over the span w.r.t. the soft prefix.
template <typename Scalar>
DenseMatrix<Scalar> grad_soft_prompt(const TransformerParams<Scalar>& p, const LMConfig& cfg,
                                     const DenseMatrix<Scalar>& soft_prefix,
                                     const std::vector<int>& tokens, std::size_t span_begin,
                                     std::size_t span_end, Scalar* loss_out = nullptr) {
    const int c = int(soft_prefix.rows());
    if (span_begin >= span_end) {
        if (loss_out) *loss_out = 0;
        return DenseMatrix<Scalar>::Zero(c, cfg.dim);
    }
    if (span_end > tokens.size()) throw std::runtime_error("grad_soft_prompt: span beyond sequence");
    ForwardCache<Scalar> cache;
    forward(p, cfg, embed_sequence(p, cfg, &soft_prefix, with_soft_prefix(c, tokens)), cache);
    std::vector<LossTarget> targets;
    targets.reserve(span_end - span_begin);
    for (std::size_t i = span_begin; i < span_end; ++i)
        targets.push_back(LossTarget{c + int(i) - 1, tokens[i]});
    DenseMatrix<Scalar> dx;
    const Scalar loss = nll_backward(p, cfg, cache, targets, HeadTie<Scalar>{}, nullptr, &dx);
    if (!std::isfinite(double(loss))) throw std::runtime_error("grad_soft_prompt: non-finite loss");
    DenseMatrix<Scalar> grad = dx.topRows(c);
    if (!grad.allFinite()) throw std::runtime_error("grad_soft_prompt: non-finite gradient");
    if (loss_out) *loss_out = loss;
    return grad;
}

// Batch form: gradient of the summed loss over several (tokens, span) triples.
template <typename Scalar>
DenseMatrix<Scalar> grad_soft_prompt_batch(
    const TransformerParams<Scalar>& p, const LMConfig& cfg, const DenseMatrix<Scalar>& soft_prefix,
    const std::vector<std::pair<std::vector<int>, std::pair<std::size_t, std::size_t>>>& batch) {
    DenseMatrix<Scalar> total = DenseMatrix<Scalar>::Zero(soft_prefix.rows(), cfg.dim);
    for (const auto& [tokens, span] : batch)
        total += grad_soft_prompt(p, cfg, soft_prefix, tokens, span.first, span.second);
    return total;
}

// Greedy continuation; ties break toward the lowest id. Stops at eos or
// max_new tokens. Returns generated ids (eos excluded).
template <typename Scalar>
std::vector<int> generate_ids(const TransformerParams<Scalar>& p, const LMConfig& cfg,
                              const DenseMatrix<std::type_identity_t<Scalar>>* soft_prefix,
                              const std::vector<int>& prompt_tokens, int max_new, int eos_id) {
    if (max_new < 1) throw std::runtime_error("generate: max_new must be >= 1");
    const int c = soft_prefix ? int(soft_prefix->rows()) : 0;
    std::vector<int> tokens = prompt_tokens;
    std::vector<int> out;
    for (int step = 0; step < max_new; ++step) {
        ForwardCache<Scalar> cache;
        forward(p, cfg, embed_sequence(p, cfg, soft_prefix, with_soft_prefix(c, tokens)), cache);
        const DenseVector<Scalar> logits = logits_at(p, cache, cache.seq_len - 1);
        int best = 0;
        for (int i = 1; i < logits.size(); ++i)
            if (logits(i) > logits(best)) best = i;
        if (best == eos_id) break;
        out.push_back(best);
        tokens.push_back(best);
    }
    return out;
}

template <typename Scalar>
std::string generate(const TransformerParams<Scalar>& p, const LMConfig& cfg, const Tokenizer& tok,
                     const DenseMatrix<std::type_identity_t<Scalar>>* soft_prefix,
                     const std::vector<int>& prompt_tokens, int max_new) {
    return tok.decode(generate_ids(p, cfg, soft_prefix, prompt_tokens, max_new, Tokenizer::kEos));
}

// The frozen internal model as one unit: shapes, vocabulary and weights.
struct Lm {
    LMConfig config;
    Tokenizer tokenizer;
    TransformerParams<float> params;
};

struct BaseTrainConfig {
    double lr = 1e-3;
    int epochs = 2;
    int batch = 8;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
};

struct BaseTrainStats {
    double initial_heldout_nll = 0;
    double final_heldout_nll = 0;
    std::vector<double> epoch_mean_nll;
};

// Next-token training over encoded texts (bos ... eos) with Adam, gradients
// accumulated per batch and normalized by token count. Deterministic per
// seed; throws on non-finite loss. Held-out slice = last max(1, n/10) texts.
TransformerParams<float> train_base_lm(const std::vector<std::string>& corpus, const LMConfig& cfg,
                                       const Tokenizer& tok, const BaseTrainConfig& train,
                                       BaseTrainStats* stats = nullptr);

} // namespace fairicl::lm

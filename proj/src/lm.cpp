#include "fairicl/lm.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fairicl::lm {

namespace {

using MatF = DenseMatrix<float>;

double heldout_mean_nll(const TransformerParams<float>& p, const LMConfig& cfg,
                        const std::vector<std::vector<int>>& seqs) {
    double total = 0;
    std::size_t count = 0;
    for (const auto& ids : seqs) {
        if (ids.size() < 2) continue;
        for (double lp : log_prob(p, cfg, nullptr, ids, 1, ids.size())) {
            total -= lp;
            ++count;
        }
    }
    return count == 0 ? 0.0 : total / double(count);
}

} // namespace

TransformerParams<float> train_base_lm(const std::vector<std::string>& corpus, const LMConfig& cfg,
                                       const Tokenizer& tok, const BaseTrainConfig& train,
                                       BaseTrainStats* stats) {
    cfg.validate();
    if (corpus.empty()) throw std::runtime_error("train_base_lm: empty corpus");
    if (cfg.vocab_size != tok.vocab_size())
        throw std::runtime_error("train_base_lm: config vocab_size does not match tokenizer");

    std::vector<std::vector<int>> seqs;
    seqs.reserve(corpus.size());
    for (const auto& text : corpus) {
        std::vector<int> ids;
        ids.push_back(Tokenizer::kBos);
        for (int id : tok.encode(text)) ids.push_back(id);
        ids.push_back(Tokenizer::kEos);
        if (int(ids.size()) > cfg.context_len)
            throw std::runtime_error("train_base_lm: corpus text longer than context (" +
                                     std::to_string(ids.size()) + " tokens)");
        seqs.push_back(std::move(ids));
    }

    const std::size_t n = seqs.size();
    const std::size_t held = n == 1 ? 0 : std::max<std::size_t>(1, n / 10);
    std::vector<std::vector<int>> held_seqs(seqs.end() - std::ptrdiff_t(held), seqs.end());
    if (held_seqs.empty()) held_seqs = seqs;
    const std::size_t n_train = n - held;

    TransformerParams<float> params = TransformerParams<float>::init(cfg, mix64(train.seed, 0));
    TransformerParams<float> m = TransformerParams<float>::zeros(cfg);
    TransformerParams<float> v = TransformerParams<float>::zeros(cfg);
    BaseTrainStats st;
    st.initial_heldout_nll = heldout_mean_nll(params, cfg, held_seqs);

    long step = 0;
    std::vector<std::size_t> order(n_train == 0 ? n : n_train);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < train.epochs; ++epoch) {
        Rng(mix64(train.seed, std::uint64_t(epoch) + 1)).shuffle(order);
        double epoch_loss = 0;
        std::size_t epoch_tokens = 0;

        for (std::size_t start = 0; start < order.size(); start += std::size_t(train.batch)) {
            const std::size_t stop = std::min(order.size(), start + std::size_t(train.batch));
            TransformerParams<float> grads = TransformerParams<float>::zeros(cfg);
            double batch_loss = 0;
            std::size_t batch_tokens = 0;
            for (std::size_t bi = start; bi < stop; ++bi) {
                const auto& ids = seqs[order[bi]];
                if (ids.size() < 2) continue;
                ForwardCache<float> cache;
                forward(params, cfg, embed_sequence<float>(params, cfg, nullptr,
                                                           with_soft_prefix(0, ids)),
                        cache);
                std::vector<LossTarget> targets;
                targets.reserve(ids.size() - 1);
                for (std::size_t i = 1; i < ids.size(); ++i)
                    targets.push_back(LossTarget{int(i) - 1, ids[i]});
                MatF dx;
                const float loss =
                    nll_backward(params, cfg, cache, targets, HeadTie<float>{}, &grads, &dx);
                if (!std::isfinite(loss))
                    throw std::runtime_error("train_base_lm: diverged (non-finite loss)");
                for (std::size_t i = 0; i < ids.size(); ++i)
                    grads.token_embedding.row(ids[i]) += dx.row(Eigen::Index(i));
                grads.position_embedding.topRows(Eigen::Index(ids.size())) += dx;
                batch_loss += double(loss);
                batch_tokens += targets.size();
            }
            if (batch_tokens == 0) continue;
            epoch_loss += batch_loss;
            epoch_tokens += batch_tokens;

            // Adam on the per-token mean gradient.
            ++step;
            const float scale = 1.0f / float(batch_tokens);
            const float b1 = float(train.beta1);
            const float b2 = float(train.beta2);
            const float bias1 = 1.0f - std::pow(b1, float(step));
            const float bias2 = 1.0f - std::pow(b2, float(step));
            auto pt = params.tensors();
            auto gt = grads.tensors();
            auto mt = m.tensors();
            auto vt = v.tensors();
            for (std::size_t ti = 0; ti < pt.size(); ++ti) {
                auto& pm = *pt[ti].second;
                auto& gm = *gt[ti].second;
                auto& mm = *mt[ti].second;
                auto& vm = *vt[ti].second;
                gm *= scale;
                mm = b1 * mm + (1.0f - b1) * gm;
                vm = b2 * vm.array().matrix() + (1.0f - b2) * gm.cwiseProduct(gm);
                pm.array() -= float(train.lr) * (mm.array() / bias1) /
                              ((vm.array() / bias2).sqrt() + float(train.adam_eps));
            }
        }
        st.epoch_mean_nll.push_back(epoch_tokens == 0 ? 0.0 : epoch_loss / double(epoch_tokens));
    }

    st.final_heldout_nll = heldout_mean_nll(params, cfg, held_seqs);
    if (stats) *stats = st;
    return params;
}

} // namespace fairicl::lm

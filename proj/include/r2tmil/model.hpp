#pragma once

// Full bag model: input projection -> n_blocks re-embedding blocks -> MIL
// attention pooling -> linear classifier.

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "r2tmil/milhead.hpp"
#include "r2tmil/numerics.hpp"
#include "r2tmil/r2tblock.hpp"

namespace r2t {

struct ModelConfig {
    std::size_t input_dim = 64;
    R2TConfig r2t;
    MILHeadConfig head;
};

class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.r2t.validate();
        if (cfg_.input_dim == 0) throw std::invalid_argument("model: input dim must be >= 1");
        Rng rng(seed);
        const std::size_t d = cfg_.r2t.dim;
        proj_w_ = ParamTensor("proj.w", {cfg_.input_dim, d});
        proj_b_ = ParamTensor("proj.b", {d});
        init_fan_in(proj_w_, rng);
        for (std::size_t b = 0; b < cfg_.r2t.n_blocks; ++b)
            blocks_.push_back(R2TBlockParams::create("block" + std::to_string(b), cfg_.r2t, rng));
        head_ = MILHeadParams::create("head", d, cfg_.head, rng);
    }

    Model(const Model&) = default;
    Model& operator=(const Model&) = default;

    const ModelConfig& config() const { return cfg_; }

    ParamList parameters() {
        ParamList l{&proj_w_, &proj_b_};
        for (auto& b : blocks_)
            for (ParamTensor* t : b.params()) l.push_back(t);
        for (ParamTensor* t : head_.params()) l.push_back(t);
        return l;
    }

    std::vector<const ParamTensor*> parameters() const {
        std::vector<const ParamTensor*> out;
        for (ParamTensor* t : const_cast<Model*>(this)->parameters()) out.push_back(t);
        return out;
    }

    R2TBlockParams& block(std::size_t i) { return blocks_.at(i); }
    MILHeadParams& head() { return head_; }

    /// Instance embeddings after projection and re-embedding (I x D).
    Matrix embed(const Matrix& x) const {
        Matrix h = linear(x, proj_w_.value, proj_b_.value.flat());
        for (const auto& b : blocks_) h = r2t_block_forward(h, b, cfg_.r2t);
        return h;
    }

    BagPrediction predict(const Matrix& x) const {
        const auto pool = gated_attention_pool(embed(x), head_, cfg_.head.gated);
        return finish(pool);
    }

    /// Forward, cross-entropy loss and full backward for one bag. Gradients
    /// are accumulated into the parameters' grad buffers.
    double forward_backward(const Matrix& x, std::size_t label, BagPrediction* out = nullptr) {
        if (x.cols() != cfg_.input_dim)
            throw std::invalid_argument("model: bag has D=" + std::to_string(x.cols()) + ", expected " +
                                        std::to_string(cfg_.input_dim));
        const Matrix h0 = linear(x, proj_w_.value, proj_b_.value.flat());
        std::vector<R2TBlockCache> caches(blocks_.size());
        Matrix h = h0;
        for (std::size_t b = 0; b < blocks_.size(); ++b) h = r2t_block_forward(h, blocks_[b], cfg_.r2t, &caches[b]);
        PoolCache pc;
        const auto pool = gated_attention_pool(h, head_, cfg_.head.gated, &pc);
        BagPrediction pred = finish(pool);
        const double loss = bag_loss(pred.logits, label);

        const auto dlogits = bag_loss_backward(pred.logits, label);
        const auto dbag = classify_backward(pool.bag, dlogits, head_);
        Matrix dh = gated_attention_pool_backward(dbag, pc, head_, cfg_.head.gated);
        for (std::size_t b = blocks_.size(); b-- > 0;) dh = r2t_block_backward(dh, caches[b], blocks_[b], cfg_.r2t);
        const auto gp = linear_backward(x, proj_w_.value, dh);
        proj_w_.grad += gp.dw;
        for (std::size_t j = 0; j < gp.db.size(); ++j) proj_b_.grad(0, j) += gp.db[j];
        if (out) *out = std::move(pred);
        return loss;
    }

    double loss(const Matrix& x, std::size_t label) const { return bag_loss(predict(x).logits, label); }

private:
    BagPrediction finish(const PoolResult& pool) const {
        BagPrediction pred;
        pred.logits = classify(pool.bag, head_);
        pred.probs = softmax(pred.logits);
        pred.attention = pool.attention;
        pred.predicted = static_cast<std::size_t>(
            std::max_element(pred.probs.begin(), pred.probs.end()) - pred.probs.begin());
        return pred;
    }

    ModelConfig cfg_;
    ParamTensor proj_w_, proj_b_;
    std::vector<R2TBlockParams> blocks_;
    MILHeadParams head_;
};

}  // namespace r2t

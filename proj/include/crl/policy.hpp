#pragma once

#include <string>

#include "crl/nn.hpp"

namespace crl {

struct PolicyConfig {
    int conv_channels = 32;
    int trunk_hidden = 256;

    void validate() const {
        if (conv_channels < 1 || trunk_hidden < 1)
            throw ConfigError("policy: widths must be >= 1");
    }
};

// Actor-critic over the concept grid: two 3x3 conv layers, the flattened map
// fused with the global carried-item feature, an MLP trunk, then the action
// logits and value heads.
class PolicyNet {
public:
    PolicyNet(ParameterStore& store, int h, int w, int in_channels, PolicyConfig cfg, Rng& rng)
        : h_(h), w_(w), in_channels_(in_channels), cfg_(cfg) {
        cfg_.validate();
        const int ch = cfg_.conv_channels;
        conv1_ = &store.create("pol/conv1/K", {3, 3, in_channels, ch}, 9 * in_channels, rng);
        conv1b_ = &store.create_zeros("pol/conv1/b", {ch});
        conv2_ = &store.create("pol/conv2/K", {3, 3, ch, ch}, 9 * ch, rng);
        conv2b_ = &store.create_zeros("pol/conv2/b", {ch});
        const int flat = h * w * ch + in_channels;  // + global feature
        trunkW_ = &store.create("pol/trunk/W", {flat, cfg_.trunk_hidden}, flat, rng);
        trunkb_ = &store.create_zeros("pol/trunk/b", {cfg_.trunk_hidden});
        actorW_ = &store.create("pol/actor/W", {cfg_.trunk_hidden, kNumActions}, cfg_.trunk_hidden, rng);
        actorb_ = &store.create_zeros("pol/actor/b", {kNumActions});
        criticW_ = &store.create("pol/critic/W", {cfg_.trunk_hidden, 1}, cfg_.trunk_hidden, rng);
        criticb_ = &store.create_zeros("pol/critic/b", {1});
    }

    struct Entered {
        Tensor K1, b1, K2, b2, Wt, bt, Wa, ba, Wv, bv;
    };

    Entered enter(Tape& tape, bool trainable = true) const {
        auto in = [&](ParamTensor* p) { return trainable ? param(tape, *p) : frozen(tape, *p); };
        return {in(conv1_), in(conv1b_), in(conv2_), in(conv2b_), in(trunkW_),
                in(trunkb_), in(actorW_), in(actorb_), in(criticW_), in(criticb_)};
    }

    struct Out {
        Tensor logits;  // [5]
        Tensor value;   // [1]
    };

    Out forward(Tape& tape, const Entered& en, const Tensor& grid, const Tensor& global) const {
        (void)tape;
        Tensor x1 = tanh(conv2d_3x3(grid, en.K1, en.b1));
        Tensor x2 = tanh(conv2d_3x3(x1, en.K2, en.b2));
        Tensor flat = reshape(x2, {h_ * w_ * cfg_.conv_channels});
        std::vector<Tensor> parts{flat, global};
        Tensor trunk = tanh(affine(concat1d(parts), en.Wt, en.bt));
        return {affine(trunk, en.Wa, en.ba), affine(trunk, en.Wv, en.bv)};
    }

    int height() const { return h_; }
    int width() const { return w_; }
    int in_channels() const { return in_channels_; }
    const PolicyConfig& config() const { return cfg_; }

private:
    int h_, w_, in_channels_;
    PolicyConfig cfg_;
    ParamTensor *conv1_, *conv1b_, *conv2_, *conv2b_;
    ParamTensor *trunkW_, *trunkb_, *actorW_, *actorb_, *criticW_, *criticb_;
};

}  // namespace crl

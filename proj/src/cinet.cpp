#include "mlcil/cinet.hpp"

#include <cmath>

#include "mlcil/errors.hpp"
#include "mlcil/rng.hpp"

namespace mlcil {

namespace {

// every parameter draws from its own stream, so expansion never disturbs
// the values other parameters were initialized with
Tensor init_randn(const Shape& shape, std::uint64_t seed, const std::string& name,
                  double stddev) {
    Rng rng(mix_seed(seed, fnv1a(name)));
    return Tensor::randn(shape, rng, stddev);
}

void check_features(const Tensor& features, std::size_t feature_dim) {
    require(features.defined() && features.rank() == 3,
            "forward: features must be [N, L, feature_dim]");
    require(features.dim(2) == feature_dim,
            "forward: feature width " + std::to_string(features.dim(2)) + " does not match model " +
                std::to_string(feature_dim));
    require(features.dim(0) > 0 && features.dim(1) > 0, "forward: empty batch");
}

std::string session_suffix(std::size_t s) { return ".s" + std::to_string(s); }

}  // namespace

// ---- CinetModel ------------------------------------------------------------

CinetModel::CinetModel(CinetConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    require(cfg_.feature_dim > 0 && cfg_.model_dim > 0 && cfg_.heads > 0,
            "CinetModel: dimensions must be positive");
    require(cfg_.model_dim % cfg_.heads == 0, "CinetModel: model_dim must divide into heads");
    const std::size_t D = cfg_.model_dim;
    const std::size_t F = cfg_.feature_dim;
    const std::size_t H = 2 * D;
    const double sf = 1.0 / std::sqrt(static_cast<double>(F));
    const double sd = 1.0 / std::sqrt(static_cast<double>(D));
    const double sh = 1.0 / std::sqrt(static_cast<double>(H));

    auto add_w = [&](const std::string& name, Shape shape, double stddev) {
        ps_.add(name, init_randn(shape, seed, name, stddev));
    };
    add_w("adapter.W", {F, D}, sf);
    ps_.add("adapter.b", Tensor::zeros({D}));
    for (const char* n : {"norm_q", "norm_p", "norm_mlp"}) {
        ps_.add(std::string(n) + ".gain", Tensor::full({D}, 1.0));
        ps_.add(std::string(n) + ".bias", Tensor::zeros({D}));
    }
    add_w("attn.Wq", {D, D}, sd);
    add_w("attn.Wk", {D, D}, sd);
    add_w("attn.Wv", {D, D}, sd);
    add_w("attn.Wo", {D, D}, sd);
    ps_.add("attn.bo", Tensor::zeros({D}));
    add_w("mlp.W1", {D, H}, sd);
    ps_.add("mlp.b1", Tensor::zeros({H}));
    add_w("mlp.W2", {H, D}, sh);
    ps_.add("mlp.b2", Tensor::zeros({D}));
    add_w("proj.W", {D, cfg_.proj_width()}, sd);
}

void CinetModel::expand(std::size_t new_classes, std::uint64_t seed) {
    require(new_classes > 0, "expand: need at least one new class");
    for (std::size_t s = 1; s <= sessions_.size(); ++s) {
        ps_.set_trainable("tokens" + session_suffix(s), false);
        ps_.set_trainable("cls.W" + session_suffix(s), false);
        ps_.set_trainable("cls.b" + session_suffix(s), false);
    }
    const std::size_t t = sessions_.size() + 1;
    const std::size_t D = cfg_.model_dim;
    const std::string suffix = session_suffix(t);
    ps_.add("tokens" + suffix,
            init_randn({new_classes, D}, seed, "tokens" + suffix, cfg_.token_init));
    ps_.add("cls.W" + suffix, init_randn({new_classes, D}, seed, "cls.W" + suffix,
                                         1.0 / std::sqrt(static_cast<double>(D))));
    ps_.add("cls.b" + suffix, Tensor::zeros({new_classes}));
    sessions_.push_back(new_classes);
}

ForwardResult CinetModel::forward(const Tensor& features) {
    require(!sessions_.empty(), "forward: model has no classes yet");
    check_features(features, cfg_.feature_dim);
    const std::size_t D = cfg_.model_dim;
    const std::size_t heads = cfg_.heads;
    const std::size_t dh = D / heads;

    // patch tokens into model width
    auto xp = add_bias_rows(matmul(features, ps_.get("adapter.W")), ps_.get("adapter.b"));
    auto xp_n = layer_norm_last(xp, ps_.get("norm_p.gain"), ps_.get("norm_p.bias"));

    std::vector<Tensor> token_blocks, w_blocks, b_blocks;
    for (std::size_t s = 1; s <= sessions_.size(); ++s) {
        token_blocks.push_back(ps_.get("tokens" + session_suffix(s)));
        w_blocks.push_back(ps_.get("cls.W" + session_suffix(s)));
        b_blocks.push_back(ps_.get("cls.b" + session_suffix(s)));
    }
    auto xq = concat0(token_blocks);  // [C, D]
    auto xq_n = layer_norm_last(xq, ps_.get("norm_q.gain"), ps_.get("norm_q.bias"));

    // cross attention: class tokens query the patch tokens
    auto q = matmul(xq_n, ps_.get("attn.Wq"));  // [C, D]
    auto k = matmul(xp_n, ps_.get("attn.Wk"));  // [N, L, D]
    auto v = matmul(xp_n, ps_.get("attn.Wv"));
    std::vector<Tensor> head_ctx;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = slice_last(q, h * dh, (h + 1) * dh);           // [C, dh]
        auto kh = slice_last(k, h * dh, (h + 1) * dh);           // [N, L, dh]
        auto vh = slice_last(v, h * dh, (h + 1) * dh);
        auto scores = transpose_last2(matmul(kh, transpose(qh)));  // [N, C, L]
        auto attn = softmax_last(scale(scores, att_scale));
        head_ctx.push_back(matmul(attn, vh));  // [N, C, dh]
    }
    auto ctx = concat_last(head_ctx);  // [N, C, D]
    auto z = add_bias_rows(matmul(ctx, ps_.get("attn.Wo")), ps_.get("attn.bo"));
    auto ea = broadcast_add_batch(xq, z);  // residual over the raw tokens

    auto mlp_in = layer_norm_last(ea, ps_.get("norm_mlp.gain"), ps_.get("norm_mlp.bias"));
    auto hidden = gelu(add_bias_rows(matmul(mlp_in, ps_.get("mlp.W1")), ps_.get("mlp.b1")));
    auto mlp_out = add_bias_rows(matmul(hidden, ps_.get("mlp.W2")), ps_.get("mlp.b2"));
    auto e = add(ea, mlp_out);  // [N, C, D]

    ForwardResult out;
    out.embeddings = e;
    out.logits = add_bias_rows(rowwise_dot(e, concat0(w_blocks)), concat0(b_blocks));
    out.probs = sigmoid(out.logits);
    out.projected = matmul(e, ps_.get("proj.W"));
    return out;
}

std::size_t CinetModel::num_classes() const {
    std::size_t c = 0;
    for (auto n : sessions_) c += n;
    return c;
}

std::unique_ptr<IncrementalModel> CinetModel::clone_frozen() const {
    auto m = std::make_unique<CinetModel>(cfg_, 0);
    for (auto n : sessions_) m->expand(n, 0);
    for (auto& [name, e] : m->ps_.entries()) {
        e.tensor.data() = ps_.get(name).data();
        e.tensor.set_requires_grad(false);
        e.trainable = false;
    }
    return m;
}

// ---- BaselineModel ---------------------------------------------------------

BaselineModel::BaselineModel(CinetConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    require(cfg_.feature_dim > 0 && cfg_.model_dim > 0,
            "BaselineModel: dimensions must be positive");
    const std::size_t D = cfg_.model_dim;
    const std::size_t F = cfg_.feature_dim;
    ps_.add("adapter.W",
            init_randn({F, D}, seed, "adapter.W", 1.0 / std::sqrt(static_cast<double>(F))));
    ps_.add("adapter.b", Tensor::zeros({D}));
    ps_.add("norm_p.gain", Tensor::full({D}, 1.0));
    ps_.add("norm_p.bias", Tensor::zeros({D}));
    ps_.add("proj.W", init_randn({D, cfg_.proj_width()}, seed, "proj.W",
                                 1.0 / std::sqrt(static_cast<double>(D))));
}

void BaselineModel::expand(std::size_t new_classes, std::uint64_t seed) {
    require(new_classes > 0, "expand: need at least one new class");
    // plain fine-tuning: earlier classifier rows stay trainable and drift
    const std::size_t t = sessions_.size() + 1;
    const std::size_t D = cfg_.model_dim;
    const std::string suffix = session_suffix(t);
    ps_.add("cls.W" + suffix, init_randn({new_classes, D}, seed, "cls.W" + suffix,
                                         1.0 / std::sqrt(static_cast<double>(D))));
    ps_.add("cls.b" + suffix, Tensor::zeros({new_classes}));
    sessions_.push_back(new_classes);
}

ForwardResult BaselineModel::forward(const Tensor& features) {
    require(!sessions_.empty(), "forward: model has no classes yet");
    check_features(features, cfg_.feature_dim);
    const std::size_t N = features.dim(0);
    const std::size_t D = cfg_.model_dim;

    auto xp = add_bias_rows(matmul(features, ps_.get("adapter.W")), ps_.get("adapter.b"));
    auto pooled = mean_axis1(layer_norm_last(xp, ps_.get("norm_p.gain"), ps_.get("norm_p.bias")));

    std::vector<Tensor> w_blocks, b_blocks;
    for (std::size_t s = 1; s <= sessions_.size(); ++s) {
        w_blocks.push_back(ps_.get("cls.W" + session_suffix(s)));
        b_blocks.push_back(ps_.get("cls.b" + session_suffix(s)));
    }
    auto w = concat0(w_blocks);  // [C, D]

    ForwardResult out;
    out.logits = add_bias_rows(matmul(pooled, transpose(w)), concat0(b_blocks));
    out.probs = sigmoid(out.logits);
    out.embeddings = reshape(pooled, {N, 1, D});
    out.projected = matmul(out.embeddings, ps_.get("proj.W"));
    return out;
}

std::size_t BaselineModel::num_classes() const {
    std::size_t c = 0;
    for (auto n : sessions_) c += n;
    return c;
}

std::unique_ptr<IncrementalModel> BaselineModel::clone_frozen() const {
    auto m = std::make_unique<BaselineModel>(cfg_, 0);
    for (auto n : sessions_) m->expand(n, 0);
    for (auto& [name, e] : m->ps_.entries()) {
        e.tensor.data() = ps_.get(name).data();
        e.tensor.set_requires_grad(false);
        e.trainable = false;
    }
    return m;
}

std::unique_ptr<IncrementalModel> make_model(const std::string& kind, const CinetConfig& cfg,
                                             const std::vector<std::size_t>& session_classes,
                                             std::uint64_t seed) {
    std::unique_ptr<IncrementalModel> m;
    if (kind == "cinet") {
        m = std::make_unique<CinetModel>(cfg, seed);
    } else if (kind == "baseline") {
        m = std::make_unique<BaselineModel>(cfg, seed);
    } else {
        require(false, "make_model: unknown kind '" + kind + "'");
    }
    for (std::size_t i = 0; i < session_classes.size(); ++i)
        m->expand(session_classes[i], mix_seed(seed, i + 1));
    return m;
}

}  // namespace mlcil

// Multi-label window classifier: static-conditioned time-aware FiLM over the
// dynamic block, one token per variable, a pre-norm transformer encoder over
// the variable tokens and an affine head over the flattened encoder output.
//
// Forward and backward passes are written out by hand; every forward call
// can record a Cache that the matching backward call consumes.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "iaenet/common.hpp"
#include "iaenet/json_io.hpp"
#include "iaenet/schema.hpp"

namespace iaenet {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

enum class HeadMode { flatten, mean_pool };

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t ff_mult = 4;
  double dropout = 0.1;
  std::size_t n_classes = kEvents;
  std::size_t w = kWindow;
  std::size_t d = kDynamic;
  std::size_t s = kStatic;
  bool static_tokens = false;
  std::size_t cond_hidden = 64;
  HeadMode head = HeadMode::flatten;

  std::size_t n_tokens() const { return d + (static_tokens ? s : 0); }
  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    require_config(d_model > 0 && n_heads > 0 && d_model % n_heads == 0,
                   "model: d_model must be a positive multiple of n_heads");
    require_config(dropout >= 0.0 && dropout < 1.0, "model: dropout must be in [0, 1)");
    require_config(n_classes >= 1 && w >= 1 && d >= 1 && s >= 1 && ff_mult >= 1 && cond_hidden >= 1,
                   "model: sizes must be positive");
  }

  nlohmann::json to_json() const {
    return {{"d_model", d_model},     {"n_heads", n_heads},
            {"n_layers", n_layers},   {"ff_mult", ff_mult},
            {"dropout", dropout},     {"n_classes", n_classes},
            {"w", w},                 {"d", d},
            {"s", s},                 {"static_tokens", static_tokens},
            {"cond_hidden", cond_hidden}, {"head", head == HeadMode::flatten ? "flatten" : "mean_pool"}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    check_keys(j, {"d_model", "n_heads", "n_layers", "ff_mult", "dropout", "n_classes", "w", "d", "s",
                   "static_tokens", "cond_hidden", "head"},
               "model");
    ModelConfig c;
    read_opt(j, "d_model", c.d_model, "model");
    read_opt(j, "n_heads", c.n_heads, "model");
    read_opt(j, "n_layers", c.n_layers, "model");
    read_opt(j, "ff_mult", c.ff_mult, "model");
    read_opt(j, "dropout", c.dropout, "model");
    read_opt(j, "n_classes", c.n_classes, "model");
    read_opt(j, "w", c.w, "model");
    read_opt(j, "d", c.d, "model");
    read_opt(j, "s", c.s, "model");
    read_opt(j, "static_tokens", c.static_tokens, "model");
    read_opt(j, "cond_hidden", c.cond_hidden, "model");
    std::string head = "flatten";
    read_opt(j, "head", head, "model");
    require_config(head == "flatten" || head == "mean_pool", "model.head must be flatten or mean_pool");
    c.head = head == "flatten" ? HeadMode::flatten : HeadMode::mean_pool;
    c.validate();
    return c;
  }
};

template <class S>
struct LayerWeights {
  Mat<S> ln1_g, ln1_b;
  Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<S> ln2_g, ln2_b;
  Mat<S> ff1_w, ff1_b, ff2_w, ff2_b;
};

/// All trainable tensors. Biases are stored as 1 x n matrices.
template <class S>
struct Weights {
  Mat<S> cond_w1, cond_b1, cond_w2, cond_b2;  // condition network S -> H -> 2*W*D
  Mat<S> embed_w, embed_b;                    // shared per-variable embedding W -> d_model
  Mat<S> static_w, static_b;                  // per-covariate tokens (static_tokens only)
  std::vector<LayerWeights<S>> layers;
  Mat<S> final_g, final_b;
  Mat<S> head_w, head_b;

  /// Every tensor with a stable name, in serialization order.
  std::vector<std::pair<std::string, Mat<S>*>> tensors() {
    std::vector<std::pair<std::string, Mat<S>*>> t = {
        {"cond.w1", &cond_w1}, {"cond.b1", &cond_b1}, {"cond.w2", &cond_w2}, {"cond.b2", &cond_b2},
        {"embed.w", &embed_w}, {"embed.b", &embed_b}};
    if (static_w.size() > 0) {
      t.push_back({"static.w", &static_w});
      t.push_back({"static.b", &static_b});
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& L = layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      for (auto [name, m] : std::initializer_list<std::pair<const char*, Mat<S>*>>{
               {"ln1.g", &L.ln1_g}, {"ln1.b", &L.ln1_b}, {"attn.wq", &L.wq}, {"attn.bq", &L.bq},
               {"attn.wk", &L.wk},  {"attn.bk", &L.bk},  {"attn.wv", &L.wv}, {"attn.bv", &L.bv},
               {"attn.wo", &L.wo},  {"attn.bo", &L.bo},  {"ln2.g", &L.ln2_g}, {"ln2.b", &L.ln2_b},
               {"ff.w1", &L.ff1_w}, {"ff.b1", &L.ff1_b}, {"ff.w2", &L.ff2_w}, {"ff.b2", &L.ff2_b}})
        t.push_back({p + name, m});
    }
    t.push_back({"final.g", &final_g});
    t.push_back({"final.b", &final_b});
    t.push_back({"head.w", &head_w});
    t.push_back({"head.b", &head_b});
    return t;
  }

  std::vector<std::pair<std::string, const Mat<S>*>> tensors() const {
    auto t = const_cast<Weights*>(this)->tensors();
    return {t.begin(), t.end()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [_, m] : tensors()) n += static_cast<std::size_t>(m->size());
    return n;
  }

  void set_zero() {
    for (auto& [_, m] : tensors()) m->setZero();
  }

  Weights& operator+=(const Weights& o) {
    auto a = tensors();
    auto b = o.tensors();
    for (std::size_t i = 0; i < a.size(); ++i) *a[i].second += *b[i].second;
    return *this;
  }

  template <class T>
  Weights<T> cast() const {
    Weights<T> out = Weights<T>::shaped_like(*this);
    auto dst = out.tensors();
    auto src = tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<T>();
    return out;
  }

  /// Zero tensors with the same shapes as `o`.
  template <class T>
  static Weights shaped_like(const Weights<T>& o) {
    Weights w;
    w.layers.resize(o.layers.size());
    if (o.static_w.size() > 0) {
      w.static_w.resize(o.static_w.rows(), o.static_w.cols());
      w.static_b.resize(o.static_b.rows(), o.static_b.cols());
    }
    auto dst = w.tensors();
    auto src = o.tensors();
    for (std::size_t i = 0; i < src.size(); ++i)
      dst[i].second->setZero(src[i].second->rows(), src[i].second->cols());
    return w;
  }
};

namespace nn {

inline constexpr double kLayerNormEps = 1e-5;

template <class S>
S gelu(S x) {
  const S k = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  const S c = static_cast<S>(0.044715);
  return static_cast<S>(0.5) * x * (S(1) + std::tanh(k * (x + c * x * x * x)));
}

template <class S>
S gelu_grad(S x) {
  const S k = static_cast<S>(0.7978845608028654);
  const S c = static_cast<S>(0.044715);
  const S t = std::tanh(k * (x + c * x * x * x));
  return static_cast<S>(0.5) * (S(1) + t) +
         static_cast<S>(0.5) * x * (S(1) - t * t) * k * (S(1) + S(3) * c * x * x);
}

template <class S>
struct NormCache {
  Mat<S> xhat;
  RowVec<S> rstd;  // one entry per row
};

/// Row-wise layer normalization.
template <class S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& g, const Mat<S>& b, NormCache<S>* cache) {
  const Eigen::Index n = x.rows(), dm = x.cols();
  Mat<S> xhat(n, dm);
  RowVec<S> rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S mean = x.row(i).mean();
    const S var = (x.row(i).array() - mean).square().mean();
    rstd(i) = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
    xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
  }
  Mat<S> y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  if (cache) cache->xhat = std::move(xhat), cache->rstd = std::move(rstd);
  return y;
}

template <class S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const NormCache<S>& c, const Mat<S>& g, Mat<S>& dg, Mat<S>& db) {
  dg.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db.row(0) += dy.colwise().sum();
  Mat<S> dxhat = dy.array().rowwise() * g.row(0).array();
  Mat<S> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const S m1 = dxhat.row(i).mean();
    const S m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

template <class S>
Mat<S> affine(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b) {
  Mat<S> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <class S>
void init_uniform(Mat<S>& m, Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  m.resize(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(u(rng));
}

/// Linear layer init: weights and bias ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class S>
void init_linear(Mat<S>& w, Mat<S>& b, Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  init_uniform(w, fan_in, fan_out, bound, rng);
  init_uniform(b, 1, fan_out, bound, rng);
}

}  // namespace nn

template <class S>
struct LayerCache {
  Mat<S> x_in;
  nn::NormCache<S> ln1;
  Mat<S> h1, q, k, v;
  std::vector<Mat<S>> attn;  // per head, N x N, rows sum to 1
  Mat<S> ctx;
  Mat<S> attn_mask;          // dropout scale per element (empty when off)
  Mat<S> x_mid;
  nn::NormCache<S> ln2;
  Mat<S> h2, ff_pre, ff_act;
  Mat<S> ff_mask;
};

template <class S>
struct ForwardCache {
  Mat<S> x_d, x_s;
  Mat<S> cond_pre, cond_act, gamma_beta;
  Mat<S> fused;
  std::vector<LayerCache<S>> layers;
  nn::NormCache<S> final_norm;
  Mat<S> encoded;  // N x d_model after the final norm
};

template <class S>
class Model {
 public:
  Model() = default;

  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const auto W = static_cast<Eigen::Index>(cfg_.w), D = static_cast<Eigen::Index>(cfg_.d),
               Sd = static_cast<Eigen::Index>(cfg_.s), H = static_cast<Eigen::Index>(cfg_.cond_hidden),
               dm = static_cast<Eigen::Index>(cfg_.d_model),
               ff = static_cast<Eigen::Index>(cfg_.d_model * cfg_.ff_mult),
               N = static_cast<Eigen::Index>(cfg_.n_tokens()), C = static_cast<Eigen::Index>(cfg_.n_classes);
    auto& p = w_;
    nn::init_linear(p.cond_w1, p.cond_b1, Sd, H, rng);
    nn::init_linear(p.cond_w2, p.cond_b2, H, 2 * W * D, rng);
    // The gamma half starts at zero so training begins at identity modulation.
    p.cond_w2.leftCols(W * D).setZero();
    p.cond_b2.leftCols(W * D).setZero();
    nn::init_linear(p.embed_w, p.embed_b, W, dm, rng);
    if (cfg_.static_tokens) {
      nn::init_uniform(p.static_w, Sd, dm, 1.0, rng);
      nn::init_uniform(p.static_b, Sd, dm, 1.0, rng);
    }
    p.layers.resize(cfg_.n_layers);
    for (auto& L : p.layers) {
      L.ln1_g.setOnes(1, dm);
      L.ln1_b.setZero(1, dm);
      nn::init_linear(L.wq, L.bq, dm, dm, rng);
      nn::init_linear(L.wk, L.bk, dm, dm, rng);
      nn::init_linear(L.wv, L.bv, dm, dm, rng);
      nn::init_linear(L.wo, L.bo, dm, dm, rng);
      L.ln2_g.setOnes(1, dm);
      L.ln2_b.setZero(1, dm);
      nn::init_linear(L.ff1_w, L.ff1_b, dm, ff, rng);
      nn::init_linear(L.ff2_w, L.ff2_b, ff, dm, rng);
    }
    p.final_g.setOnes(1, dm);
    p.final_b.setZero(1, dm);
    const Eigen::Index head_in = cfg_.head == HeadMode::flatten ? N * dm : dm;
    nn::init_linear(p.head_w, p.head_b, head_in, C, rng);
  }

  Model(const ModelConfig& cfg, Weights<S> weights) : cfg_(cfg), w_(std::move(weights)) { cfg_.validate(); }

  const ModelConfig& config() const { return cfg_; }
  Weights<S>& weights() { return w_; }
  const Weights<S>& weights() const { return w_; }

  Weights<S> zero_grad() const { return Weights<S>::shaped_like(w_); }

  /// (gamma, beta) from the condition network, each W x D.
  std::pair<Mat<S>, Mat<S>> condition(const Mat<S>& x_s, ForwardCache<S>* c = nullptr) const {
    Mat<S> pre = nn::affine<S>(x_s, w_.cond_w1, w_.cond_b1);
    Mat<S> act = pre.unaryExpr([](S v) { return nn::gelu(v); });
    Mat<S> gb = nn::affine<S>(act, w_.cond_w2, w_.cond_b2);
    const auto W = static_cast<Eigen::Index>(cfg_.w), D = static_cast<Eigen::Index>(cfg_.d);
    Mat<S> gamma = Eigen::Map<const Mat<S>>(gb.data(), W, D);
    Mat<S> beta = Eigen::Map<const Mat<S>>(gb.data() + W * D, W, D);
    if (c) c->cond_pre = std::move(pre), c->cond_act = std::move(act), c->gamma_beta = std::move(gb);
    return {std::move(gamma), std::move(beta)};
  }

  /// (gamma + 1) * x_d + beta with (gamma, beta) generated from x_s.
  Mat<S> tafilm_forward(const Mat<S>& x_d, const Mat<S>& x_s, ForwardCache<S>* c = nullptr) const {
    require(x_d.rows() == static_cast<Eigen::Index>(cfg_.w) && x_d.cols() == static_cast<Eigen::Index>(cfg_.d),
            "tafilm: x_d shape mismatch");
    require(x_s.rows() == 1 && x_s.cols() == static_cast<Eigen::Index>(cfg_.s), "tafilm: x_s shape mismatch");
    auto [gamma, beta] = condition(x_s, c);
    return ((gamma.array() + S(1)) * x_d.array() + beta.array()).matrix();
  }

  /// Each variable's length-W series becomes one d_model token through a
  /// shared affine map; static covariates optionally append S tokens.
  Mat<S> inverted_embed(const Mat<S>& fused, const Mat<S>& x_s) const {
    require(fused.rows() == static_cast<Eigen::Index>(cfg_.w) && fused.cols() == static_cast<Eigen::Index>(cfg_.d),
            "inverted_embed: shape mismatch");
    const auto D = static_cast<Eigen::Index>(cfg_.d), dm = static_cast<Eigen::Index>(cfg_.d_model);
    Mat<S> tokens(static_cast<Eigen::Index>(cfg_.n_tokens()), dm);
    tokens.topRows(D) = fused.transpose() * w_.embed_w;
    tokens.topRows(D).rowwise() += w_.embed_b.row(0);
    if (cfg_.static_tokens) {
      for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(cfg_.s); ++k)
        tokens.row(D + k) = x_s(0, k) * w_.static_w.row(k) + w_.static_b.row(k);
    }
    return tokens;
  }

  /// Pre-norm encoder stack followed by the final layer norm.
  Mat<S> encoder_forward(const Mat<S>& tokens, ForwardCache<S>* c = nullptr,
                         std::mt19937_64* dropout_rng = nullptr) const {
    require(tokens.rows() >= 1 && tokens.cols() == static_cast<Eigen::Index>(cfg_.d_model),
            "encoder: token shape mismatch");
    if (c) c->layers.resize(w_.layers.size());
    Mat<S> x = tokens;
    for (std::size_t l = 0; l < w_.layers.size(); ++l)
      x = layer_forward(w_.layers[l], x, c ? &c->layers[l] : nullptr, dropout_rng);
    return nn::layer_norm<S>(x, w_.final_g, w_.final_b, c ? &c->final_norm : nullptr);
  }

  /// Logits for one window. Dropout is active only when `dropout_rng` is set.
  RowVec<S> forward(const Mat<S>& x_d, const Mat<S>& x_s, ForwardCache<S>* c = nullptr,
                    std::mt19937_64* dropout_rng = nullptr) const {
    if (c) c->x_d = x_d, c->x_s = x_s;
    Mat<S> fused = tafilm_forward(x_d, x_s, c);
    Mat<S> tokens = inverted_embed(fused, x_s);
    if (c) c->fused = std::move(fused);
    Mat<S> enc = encoder_forward(tokens, c, dropout_rng);
    RowVec<S> logits;
    if (cfg_.head == HeadMode::flatten) {
      Eigen::Map<const RowVec<S>> flat(enc.data(), enc.size());
      logits = flat * w_.head_w + w_.head_b;
    } else {
      logits = enc.colwise().mean() * w_.head_w + w_.head_b;
    }
    if (c) c->encoded = std::move(enc);
    return logits;
  }

  RowVec<S> classify_forward(const Mat<S>& x_d, const Mat<S>& x_s) const { return forward(x_d, x_s); }

  /// Accumulates d(loss)/d(weights) into `g` given d(loss)/d(logits).
  void backward(const ForwardCache<S>& c, const RowVec<S>& dlogits, Weights<S>& g) const {
    const auto D = static_cast<Eigen::Index>(cfg_.d), W = static_cast<Eigen::Index>(cfg_.w),
               dm = static_cast<Eigen::Index>(cfg_.d_model);
    const Eigen::Index N = c.encoded.rows();
    Mat<S> denc(N, dm);
    if (cfg_.head == HeadMode::flatten) {
      Eigen::Map<const RowVec<S>> flat(c.encoded.data(), c.encoded.size());
      g.head_w.noalias() += flat.transpose() * dlogits;
      g.head_b += dlogits;
      RowVec<S> dflat = dlogits * w_.head_w.transpose();
      denc = Eigen::Map<const Mat<S>>(dflat.data(), N, dm);
    } else {
      RowVec<S> pooled = c.encoded.colwise().mean();
      g.head_w.noalias() += pooled.transpose() * dlogits;
      g.head_b += dlogits;
      RowVec<S> dpool = dlogits * w_.head_w.transpose() / static_cast<S>(N);
      denc = dpool.replicate(N, 1);
    }

    Mat<S> dx = nn::layer_norm_backward<S>(denc, c.final_norm, w_.final_g, g.final_g, g.final_b);
    for (std::size_t l = w_.layers.size(); l-- > 0;)
      dx = layer_backward(w_.layers[l], c.layers[l], dx, g.layers[l]);

    // Embedding.
    auto dvar = dx.topRows(D);
    g.embed_w.noalias() += c.fused * dvar;
    g.embed_b.row(0) += dvar.colwise().sum();
    if (cfg_.static_tokens) {
      for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(cfg_.s); ++k) {
        g.static_w.row(k) += c.x_s(0, k) * dx.row(D + k);
        g.static_b.row(k) += dx.row(D + k);
      }
    }
    Mat<S> dfused = (dvar * w_.embed_w.transpose()).transpose();  // W x D

    // TAFiLM: d gamma = dfused * x_d, d beta = dfused.
    RowVec<S> dgb(2 * W * D);
    Eigen::Map<Mat<S>>(dgb.data(), W, D) = dfused.cwiseProduct(c.x_d);
    Eigen::Map<Mat<S>>(dgb.data() + W * D, W, D) = dfused;
    g.cond_w2.noalias() += c.cond_act.transpose() * dgb;
    g.cond_b2 += dgb;
    Mat<S> dact = dgb * w_.cond_w2.transpose();
    Mat<S> dpre = dact.cwiseProduct(c.cond_pre.unaryExpr([](S v) { return nn::gelu_grad(v); }));
    g.cond_w1.noalias() += c.x_s.transpose() * dpre;
    g.cond_b1 += dpre;
  }

 private:
  Mat<S> dropout_mask(std::mt19937_64* rng, Eigen::Index r, Eigen::Index cols) const {
    if (!rng || cfg_.dropout <= 0.0) return {};
    std::bernoulli_distribution keep(1.0 - cfg_.dropout);
    const S scale = static_cast<S>(1.0 / (1.0 - cfg_.dropout));
    Mat<S> m(r, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(*rng) ? scale : S(0);
    return m;
  }

  Mat<S> layer_forward(const LayerWeights<S>& L, const Mat<S>& x, LayerCache<S>* c,
                       std::mt19937_64* rng) const {
    const Eigen::Index N = x.rows();
    const auto heads = static_cast<Eigen::Index>(cfg_.n_heads), dh = static_cast<Eigen::Index>(cfg_.head_dim());
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));

    nn::NormCache<S> ln1;
    Mat<S> h1 = nn::layer_norm<S>(x, L.ln1_g, L.ln1_b, &ln1);
    Mat<S> q = nn::affine<S>(h1, L.wq, L.bq);
    Mat<S> k = nn::affine<S>(h1, L.wk, L.bk);
    Mat<S> v = nn::affine<S>(h1, L.wv, L.bv);
    Mat<S> ctx(N, x.cols());
    std::vector<Mat<S>> attn(static_cast<std::size_t>(heads));
    for (Eigen::Index h = 0; h < heads; ++h) {
      Mat<S> scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
      for (Eigen::Index i = 0; i < N; ++i) {
        const S mx = scores.row(i).maxCoeff();
        scores.row(i) = (scores.row(i).array() - mx).exp();
        scores.row(i) /= scores.row(i).sum();
      }
      ctx.middleCols(h * dh, dh) = scores * v.middleCols(h * dh, dh);
      attn[static_cast<std::size_t>(h)] = std::move(scores);
    }
    Mat<S> a = nn::affine<S>(ctx, L.wo, L.bo);
    Mat<S> amask = dropout_mask(rng, a.rows(), a.cols());
    if (amask.size()) a.array() *= amask.array();
    Mat<S> x_mid = x + a;

    nn::NormCache<S> ln2;
    Mat<S> h2 = nn::layer_norm<S>(x_mid, L.ln2_g, L.ln2_b, &ln2);
    Mat<S> pre = nn::affine<S>(h2, L.ff1_w, L.ff1_b);
    Mat<S> act = pre.unaryExpr([](S t) { return nn::gelu(t); });
    Mat<S> f = nn::affine<S>(act, L.ff2_w, L.ff2_b);
    Mat<S> fmask = dropout_mask(rng, f.rows(), f.cols());
    if (fmask.size()) f.array() *= fmask.array();
    Mat<S> out = x_mid + f;

    if (c) {
      c->x_in = x;
      c->ln1 = std::move(ln1);
      c->h1 = std::move(h1);
      c->q = std::move(q);
      c->k = std::move(k);
      c->v = std::move(v);
      c->attn = std::move(attn);
      c->ctx = std::move(ctx);
      c->attn_mask = std::move(amask);
      c->x_mid = std::move(x_mid);
      c->ln2 = std::move(ln2);
      c->h2 = std::move(h2);
      c->ff_pre = std::move(pre);
      c->ff_act = std::move(act);
      c->ff_mask = std::move(fmask);
    }
    return out;
  }

  Mat<S> layer_backward(const LayerWeights<S>& L, const LayerCache<S>& c, const Mat<S>& dout,
                        LayerWeights<S>& g) const {
    const Eigen::Index N = dout.rows();
    const auto heads = static_cast<Eigen::Index>(cfg_.n_heads), dh = static_cast<Eigen::Index>(cfg_.head_dim());
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));

    // Feed-forward branch.
    Mat<S> df = dout;
    if (c.ff_mask.size()) df.array() *= c.ff_mask.array();
    g.ff2_w.noalias() += c.ff_act.transpose() * df;
    g.ff2_b.row(0) += df.colwise().sum();
    Mat<S> dact = df * L.ff2_w.transpose();
    Mat<S> dpre = dact.cwiseProduct(c.ff_pre.unaryExpr([](S t) { return nn::gelu_grad(t); }));
    g.ff1_w.noalias() += c.h2.transpose() * dpre;
    g.ff1_b.row(0) += dpre.colwise().sum();
    Mat<S> dh2 = dpre * L.ff1_w.transpose();
    Mat<S> dx_mid = dout + nn::layer_norm_backward<S>(dh2, c.ln2, L.ln2_g, g.ln2_g, g.ln2_b);

    // Attention branch.
    Mat<S> da = dx_mid;
    if (c.attn_mask.size()) da.array() *= c.attn_mask.array();
    g.wo.noalias() += c.ctx.transpose() * da;
    g.bo.row(0) += da.colwise().sum();
    Mat<S> dctx = da * L.wo.transpose();
    Mat<S> dq(N, dout.cols()), dk(N, dout.cols()), dv(N, dout.cols());
    for (Eigen::Index h = 0; h < heads; ++h) {
      const Mat<S>& A = c.attn[static_cast<std::size_t>(h)];
      auto dctx_h = dctx.middleCols(h * dh, dh);
      Mat<S> dA = dctx_h * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = A.transpose() * dctx_h;
      Mat<S> dS(N, N);
      for (Eigen::Index i = 0; i < N; ++i) {
        const S dot = (dA.row(i).array() * A.row(i).array()).sum();
        dS.row(i) = A.row(i).array() * (dA.row(i).array() - dot);
      }
      dS *= scale;
      dq.middleCols(h * dh, dh) = dS * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = dS.transpose() * c.q.middleCols(h * dh, dh);
    }
    g.wq.noalias() += c.h1.transpose() * dq;
    g.bq.row(0) += dq.colwise().sum();
    g.wk.noalias() += c.h1.transpose() * dk;
    g.bk.row(0) += dk.colwise().sum();
    g.wv.noalias() += c.h1.transpose() * dv;
    g.bv.row(0) += dv.colwise().sum();
    Mat<S> dh1 = dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
    return dx_mid + nn::layer_norm_backward<S>(dh1, c.ln1, L.ln1_g, g.ln1_g, g.ln1_b);
  }

  ModelConfig cfg_;
  Weights<S> w_;
};

inline constexpr char kCheckpointMagic[4] = {'I', 'A', 'E', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: magic | u32 version | u64 header length | JSON header |
/// row-major f32 tensors in header order. All integers little-endian.
template <class S>
void save_checkpoint(const std::string& path, const Model<S>& model, const nlohmann::json& extra = {}) {
  nlohmann::json header = {{"config", model.config().to_json()}, {"tensors", nlohmann::json::array()}};
  if (!extra.is_null()) header["extra"] = extra;
  for (const auto& [name, m] : model.weights().tensors())
    header["tensors"].push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}});
  const std::string text = header.dump();
  std::string blob(kCheckpointMagic, 4);
  auto put = [&blob](const void* p, std::size_t n) { blob.append(static_cast<const char*>(p), n); };
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = text.size();
  put(&version, sizeof version);
  put(&len, sizeof len);
  blob += text;
  for (const auto& [_, m] : model.weights().tensors()) {
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      const float v = static_cast<float>(m->data()[i]);
      put(&v, sizeof v);
    }
  }
  write_text(path, blob);
}

template <class S>
Model<S> load_checkpoint(const std::string& path, nlohmann::json* extra = nullptr) {
  const std::string blob = read_text(path);
  std::size_t pos = 0;
  auto take = [&](void* out, std::size_t n) {
    require(pos + n <= blob.size(), "checkpoint truncated: " + path);
    std::memcpy(out, blob.data() + pos, n);
    pos += n;
  };
  char magic[4];
  take(magic, 4);
  require(std::memcmp(magic, kCheckpointMagic, 4) == 0, "not a checkpoint: " + path);
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  take(&version, sizeof version);
  require(version == kCheckpointVersion, "unsupported checkpoint version in " + path);
  take(&len, sizeof len);
  require(pos + len <= blob.size(), "checkpoint truncated: " + path);
  const auto header = nlohmann::json::parse(blob.substr(pos, len));
  pos += len;
  const ModelConfig cfg = ModelConfig::from_json(header.at("config"));
  Model<S> model(cfg, 0);
  auto tensors = model.weights().tensors();
  const auto& listed = header.at("tensors");
  require(listed.size() == tensors.size(), "checkpoint tensor count mismatch in " + path);
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    auto& [name, m] = tensors[t];
    require(listed[t].at("name") == name, "checkpoint tensor order mismatch at " + name);
    require(listed[t].at("shape")[0] == m->rows() && listed[t].at("shape")[1] == m->cols(),
            "checkpoint shape mismatch for " + name);
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      float v = 0;
      take(&v, sizeof v);
      m->data()[i] = static_cast<S>(v);
    }
  }
  require(pos == blob.size(), "trailing bytes in checkpoint " + path);
  if (extra) *extra = header.value("extra", nlohmann::json{});
  return model;
}

}  // namespace iaenet

#include "sslv/models.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "nn_ops.hpp"
#include "sslv/rng.hpp"

namespace sslv::models {

const char* head_name(HeadType head) {
  switch (head) {
    case HeadType::recurrent: return "recurrent";
    case HeadType::attention: return "attention";
    case HeadType::causal_tcn: return "causal_tcn";
  }
  return "recurrent";
}

HeadType head_from_name(const std::string& name) {
  if (name == "recurrent") return HeadType::recurrent;
  if (name == "attention") return HeadType::attention;
  if (name == "causal_tcn") return HeadType::causal_tcn;
  throw InvalidInput("unknown head type '" + name + "'");
}

const char* optimizer_name(Optimizer opt) {
  return opt == Optimizer::sgd ? "sgd" : "adam";
}

Optimizer optimizer_from_name(const std::string& name) {
  if (name == "sgd") return Optimizer::sgd;
  if (name == "adam") return Optimizer::adam;
  throw InvalidInput("unknown optimizer '" + name + "'");
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw InvalidInput("ModelConfig: num_classes must be >= 2");
  if (frames_per_view < 1) throw InvalidInput("ModelConfig: frames_per_view must be >= 1");
  if (height < 4 || width < 4 || height % 4 != 0 || width % 4 != 0)
    throw InvalidInput("ModelConfig: height and width must be multiples of 4");
  if (channels < 1 || embed_dim < 1 || conv1_channels < 1 || conv2_channels < 1)
    throw InvalidInput("ModelConfig: dimensions must be positive");
  if (attention_heads < 1 || embed_dim % attention_heads != 0)
    throw InvalidInput("ModelConfig: embed_dim must divide evenly into heads");
}

namespace {

void quantize_to_float_grid(std::vector<double>& params) {
  for (double& p : params) p = static_cast<double>(static_cast<float>(p));
}

void init_uniform(std::vector<double>& params, size_t offset, size_t count,
                  double bound, rng::Xoshiro256ss& gen) {
  for (size_t i = 0; i < count; ++i)
    params[offset + i] = gen.uniform(-bound, bound);
}

double positional_encoding(int t, int d, int dim) {
  const int pair = d / 2;
  const double angle = t / std::pow(10000.0, 2.0 * pair / dim);
  return d % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

}  // namespace

// ---------------------------------------------------------------------------
// ClipClassifier layout / construction
// ---------------------------------------------------------------------------

struct ClipClassifier::Layout {
  size_t conv1_w, conv1_b, conv2_w, conv2_b, emb_w, emb_b;
  size_t gru_wr[2], gru_ur[2], gru_br[2];
  size_t gru_wz[2], gru_uz[2], gru_bz[2];
  size_t gru_wh[2], gru_uh[2], gru_bh[2];
  size_t att_wq, att_wk, att_wv, att_wo;
  size_t tcn1_w, tcn1_b, tcn2_w, tcn2_b;
  size_t cls_w, cls_b;
  size_t total;
};

ClipClassifier::ClipClassifier(const ModelConfig& config, uint64_t init_seed)
    : cfg_(config), layout_(std::make_unique<Layout>()) {
  cfg_.validate();
  const int d = cfg_.embed_dim;
  nn::ParamAllocator alloc;
  Layout& L = *layout_;
  L.conv1_w = alloc.alloc(static_cast<size_t>(cfg_.conv1_channels) * cfg_.channels * 9);
  L.conv1_b = alloc.alloc(cfg_.conv1_channels);
  L.conv2_w = alloc.alloc(static_cast<size_t>(cfg_.conv2_channels) * cfg_.conv1_channels * 9);
  L.conv2_b = alloc.alloc(cfg_.conv2_channels);
  L.emb_w = alloc.alloc(static_cast<size_t>(d) * cfg_.conv2_channels);
  L.emb_b = alloc.alloc(d);
  switch (cfg_.head) {
    case HeadType::recurrent:
      for (int l = 0; l < 2; ++l) {
        L.gru_wr[l] = alloc.alloc(static_cast<size_t>(d) * d);
        L.gru_ur[l] = alloc.alloc(static_cast<size_t>(d) * d);
        L.gru_br[l] = alloc.alloc(d);
        L.gru_wz[l] = alloc.alloc(static_cast<size_t>(d) * d);
        L.gru_uz[l] = alloc.alloc(static_cast<size_t>(d) * d);
        L.gru_bz[l] = alloc.alloc(d);
        L.gru_wh[l] = alloc.alloc(static_cast<size_t>(d) * d);
        L.gru_uh[l] = alloc.alloc(static_cast<size_t>(d) * d);
        L.gru_bh[l] = alloc.alloc(d);
      }
      break;
    case HeadType::attention:
      L.att_wq = alloc.alloc(static_cast<size_t>(d) * d);
      L.att_wk = alloc.alloc(static_cast<size_t>(d) * d);
      L.att_wv = alloc.alloc(static_cast<size_t>(d) * d);
      L.att_wo = alloc.alloc(static_cast<size_t>(d) * d);
      break;
    case HeadType::causal_tcn:
      L.tcn1_w = alloc.alloc(3 * static_cast<size_t>(d) * d);
      L.tcn1_b = alloc.alloc(d);
      L.tcn2_w = alloc.alloc(3 * static_cast<size_t>(d) * d);
      L.tcn2_b = alloc.alloc(d);
      break;
  }
  L.cls_w = alloc.alloc(static_cast<size_t>(cfg_.num_classes) * d);
  L.cls_b = alloc.alloc(cfg_.num_classes);
  L.total = alloc.total();

  params_.assign(L.total, 0.0);
  rng::Xoshiro256ss gen(init_seed);
  init_uniform(params_, L.conv1_w, static_cast<size_t>(cfg_.conv1_channels) * cfg_.channels * 9,
               std::sqrt(1.0 / (cfg_.channels * 9)), gen);
  init_uniform(params_, L.conv2_w, static_cast<size_t>(cfg_.conv2_channels) * cfg_.conv1_channels * 9,
               std::sqrt(1.0 / (cfg_.conv1_channels * 9)), gen);
  init_uniform(params_, L.emb_w, static_cast<size_t>(d) * cfg_.conv2_channels,
               std::sqrt(1.0 / cfg_.conv2_channels), gen);
  const double s = std::sqrt(1.0 / d);
  switch (cfg_.head) {
    case HeadType::recurrent:
      for (int l = 0; l < 2; ++l) {
        for (size_t off : {L.gru_wr[l], L.gru_ur[l], L.gru_wz[l], L.gru_uz[l],
                           L.gru_wh[l], L.gru_uh[l]})
          init_uniform(params_, off, static_cast<size_t>(d) * d, s, gen);
      }
      break;
    case HeadType::attention:
      for (size_t off : {L.att_wq, L.att_wk, L.att_wv, L.att_wo})
        init_uniform(params_, off, static_cast<size_t>(d) * d, s, gen);
      break;
    case HeadType::causal_tcn:
      init_uniform(params_, L.tcn1_w, 3 * static_cast<size_t>(d) * d,
                   std::sqrt(1.0 / (3.0 * d)), gen);
      init_uniform(params_, L.tcn2_w, 3 * static_cast<size_t>(d) * d,
                   std::sqrt(1.0 / (3.0 * d)), gen);
      break;
  }
  init_uniform(params_, L.cls_w, static_cast<size_t>(cfg_.num_classes) * d, s, gen);
  quantize_to_float_grid(params_);
}

ClipClassifier::~ClipClassifier() = default;
ClipClassifier::ClipClassifier(const ClipClassifier& other)
    : cfg_(other.cfg_), params_(other.params_),
      layout_(std::make_unique<Layout>(*other.layout_)) {}
ClipClassifier& ClipClassifier::operator=(const ClipClassifier& other) {
  cfg_ = other.cfg_;
  params_ = other.params_;
  layout_ = std::make_unique<Layout>(*other.layout_);
  return *this;
}
ClipClassifier::ClipClassifier(ClipClassifier&&) noexcept = default;
ClipClassifier& ClipClassifier::operator=(ClipClassifier&&) noexcept = default;

void ClipClassifier::set_parameters(std::span<const double> params) {
  if (params.size() != params_.size())
    throw InvalidInput("set_parameters: size mismatch");
  params_.assign(params.begin(), params.end());
}

void ClipClassifier::check_view(const core::FrameView& view) const {
  if (view.frames.t != cfg_.frames_per_view)
    throw InvalidInput("forward_clip: view frame count does not match model");
  if (view.frames.h != cfg_.height || view.frames.w != cfg_.width ||
      view.frames.c != cfg_.channels)
    throw InvalidInput("forward_clip: view spatial shape does not match model");
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

struct ClipClassifier::Trace {
  // encoder, per frame
  std::vector<std::vector<double>> x0, a1, p1, a2, g, e;
  // recurrent head: [layer][t] -> vectors of size D
  std::vector<std::vector<double>> gru_r[2], gru_z[2], gru_hc[2], gru_h[2];
  // attention head
  std::vector<double> att_x, att_q, att_k, att_v, att_ctx, att_y;  // [k*D]
  std::vector<double> att_a;                                       // [nh*k*k]
  // tcn head
  std::vector<double> tcn_a1, tcn_a2;  // [k*D]
  std::vector<double> embedding, logits;
};

void ClipClassifier::TraceDeleter::operator()(Trace* trace) const {
  delete trace;
}

ClipClassifier::TracePtr ClipClassifier::make_trace() const {
  return TracePtr(new Trace());
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

// frames stored [k, H, W, C] channel-last; model math wants channel-major.
// Inputs are centered around 0 for the tanh stacks.
void frame_to_planes(const core::ClipArray& frames, int frame,
                     std::vector<double>& out) {
  const int h = frames.h, w = frames.w, c = frames.c;
  out.resize(static_cast<size_t>(c) * h * w);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out[(static_cast<size_t>(ch) * h + y) * w + x] =
            frames.at(frame, y, x, ch) - 0.5;
}

}  // namespace

EmbeddingOutput ClipClassifier::forward_traced(const core::FrameView& view,
                                               Trace& tr) const {
  check_view(view);
  const Layout& L = *layout_;
  const double* P = params_.data();
  const int k = cfg_.frames_per_view, d = cfg_.embed_dim;
  const int h = cfg_.height, w = cfg_.width;
  const int c1 = cfg_.conv1_channels, c2 = cfg_.conv2_channels;
  const int h2 = h / 2, w2 = w / 2, h4 = h / 4, w4 = w / 4;

  tr.x0.assign(k, {});
  tr.a1.assign(k, {});
  tr.p1.assign(k, {});
  tr.a2.assign(k, {});
  tr.g.assign(k, {});
  tr.e.assign(k, {});

  std::vector<double> p2(static_cast<size_t>(c2) * h4 * w4);
  for (int f = 0; f < k; ++f) {
    frame_to_planes(view.frames, f, tr.x0[f]);
    tr.a1[f].assign(static_cast<size_t>(c1) * h * w, 0.0);
    nn::conv3x3_forward(tr.x0[f].data(), cfg_.channels, h, w, P + L.conv1_w,
                        P + L.conv1_b, tr.a1[f].data(), c1);
    nn::tanh_inplace(tr.a1[f].data(), tr.a1[f].size());
    tr.p1[f].assign(static_cast<size_t>(c1) * h2 * w2, 0.0);
    nn::avgpool2_forward(tr.a1[f].data(), c1, h, w, tr.p1[f].data());
    tr.a2[f].assign(static_cast<size_t>(c2) * h2 * w2, 0.0);
    nn::conv3x3_forward(tr.p1[f].data(), c1, h2, w2, P + L.conv2_w,
                        P + L.conv2_b, tr.a2[f].data(), c2);
    nn::tanh_inplace(tr.a2[f].data(), tr.a2[f].size());
    nn::avgpool2_forward(tr.a2[f].data(), c2, h2, w2, p2.data());
    tr.g[f].assign(c2, 0.0);
    const double inv_area = 1.0 / (static_cast<double>(h4) * w4);
    for (int ch = 0; ch < c2; ++ch) {
      double acc = 0.0;
      const double* plane = p2.data() + static_cast<size_t>(ch) * h4 * w4;
      for (int p = 0; p < h4 * w4; ++p) acc += plane[p];
      tr.g[f][ch] = acc * inv_area;
    }
    tr.e[f].assign(d, 0.0);
    for (int i = 0; i < d; ++i) tr.e[f][i] = P[L.emb_b + i];
    nn::matvec_acc(P + L.emb_w, tr.g[f].data(), tr.e[f].data(), d, c2);
    nn::tanh_inplace(tr.e[f].data(), d);
  }

  // --- temporal head ---
  tr.embedding.assign(d, 0.0);
  switch (cfg_.head) {
    case HeadType::recurrent: {
      for (int l = 0; l < 2; ++l) {
        tr.gru_r[l].assign(k, {});
        tr.gru_z[l].assign(k, {});
        tr.gru_hc[l].assign(k, {});
        tr.gru_h[l].assign(k, {});
        std::vector<double> hprev(d, 0.0);
        for (int t = 0; t < k; ++t) {
          const double* x = l == 0 ? tr.e[t].data() : tr.gru_h[0][t].data();
          auto& r = tr.gru_r[l][t];
          auto& z = tr.gru_z[l][t];
          auto& hc = tr.gru_hc[l][t];
          auto& ht = tr.gru_h[l][t];
          r.assign(d, 0.0);
          z.assign(d, 0.0);
          hc.assign(d, 0.0);
          ht.assign(d, 0.0);
          for (int i = 0; i < d; ++i) r[i] = P[L.gru_br[l] + i];
          nn::matvec_acc(P + L.gru_wr[l], x, r.data(), d, d);
          nn::matvec_acc(P + L.gru_ur[l], hprev.data(), r.data(), d, d);
          for (int i = 0; i < d; ++i) r[i] = nn::sigmoid(r[i]);
          for (int i = 0; i < d; ++i) z[i] = P[L.gru_bz[l] + i];
          nn::matvec_acc(P + L.gru_wz[l], x, z.data(), d, d);
          nn::matvec_acc(P + L.gru_uz[l], hprev.data(), z.data(), d, d);
          for (int i = 0; i < d; ++i) z[i] = nn::sigmoid(z[i]);
          std::vector<double> rh(d);
          for (int i = 0; i < d; ++i) rh[i] = r[i] * hprev[i];
          for (int i = 0; i < d; ++i) hc[i] = P[L.gru_bh[l] + i];
          nn::matvec_acc(P + L.gru_wh[l], x, hc.data(), d, d);
          nn::matvec_acc(P + L.gru_uh[l], rh.data(), hc.data(), d, d);
          nn::tanh_inplace(hc.data(), d);
          for (int i = 0; i < d; ++i)
            ht[i] = (1.0 - z[i]) * hprev[i] + z[i] * hc[i];
          hprev = ht;
        }
      }
      tr.embedding = tr.gru_h[1][k - 1];
      break;
    }
    case HeadType::attention: {
      const int nh = cfg_.attention_heads, dh = d / nh;
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      tr.att_x.assign(static_cast<size_t>(k) * d, 0.0);
      for (int t = 0; t < k; ++t)
        for (int i = 0; i < d; ++i)
          tr.att_x[static_cast<size_t>(t) * d + i] =
              tr.e[t][i] + positional_encoding(t, i, d);
      auto project = [&](size_t w_off, std::vector<double>& out) {
        out.assign(static_cast<size_t>(k) * d, 0.0);
        for (int t = 0; t < k; ++t)
          nn::matvec_acc(P + w_off, tr.att_x.data() + static_cast<size_t>(t) * d,
                         out.data() + static_cast<size_t>(t) * d, d, d);
      };
      project(L.att_wq, tr.att_q);
      project(L.att_wk, tr.att_k);
      project(L.att_wv, tr.att_v);
      tr.att_a.assign(static_cast<size_t>(nh) * k * k, 0.0);
      tr.att_ctx.assign(static_cast<size_t>(k) * d, 0.0);
      for (int hd = 0; hd < nh; ++hd) {
        const int off = hd * dh;
        for (int t = 0; t < k; ++t) {
          double* arow = tr.att_a.data() + (static_cast<size_t>(hd) * k + t) * k;
          double mx = -1e300;
          for (int u = 0; u < k; ++u) {
            double s_tu = 0.0;
            for (int i = 0; i < dh; ++i)
              s_tu += tr.att_q[static_cast<size_t>(t) * d + off + i] *
                      tr.att_k[static_cast<size_t>(u) * d + off + i];
            arow[u] = s_tu * scale;
            mx = std::max(mx, arow[u]);
          }
          double sum = 0.0;
          for (int u = 0; u < k; ++u) {
            arow[u] = std::exp(arow[u] - mx);
            sum += arow[u];
          }
          for (int u = 0; u < k; ++u) arow[u] /= sum;
          for (int u = 0; u < k; ++u)
            for (int i = 0; i < dh; ++i)
              tr.att_ctx[static_cast<size_t>(t) * d + off + i] +=
                  arow[u] * tr.att_v[static_cast<size_t>(u) * d + off + i];
        }
      }
      tr.att_y.assign(static_cast<size_t>(k) * d, 0.0);
      for (int t = 0; t < k; ++t) {
        double* y = tr.att_y.data() + static_cast<size_t>(t) * d;
        for (int i = 0; i < d; ++i) y[i] = tr.att_x[static_cast<size_t>(t) * d + i];
        nn::matvec_acc(P + L.att_wo, tr.att_ctx.data() + static_cast<size_t>(t) * d,
                       y, d, d);
      }
      for (int t = 0; t < k; ++t)
        for (int i = 0; i < d; ++i)
          tr.embedding[i] += tr.att_y[static_cast<size_t>(t) * d + i] / k;
      break;
    }
    case HeadType::causal_tcn: {
      tr.tcn_a1.assign(static_cast<size_t>(k) * d, 0.0);
      tr.tcn_a2.assign(static_cast<size_t>(k) * d, 0.0);
      for (int t = 0; t < k; ++t) {
        double* y = tr.tcn_a1.data() + static_cast<size_t>(t) * d;
        for (int i = 0; i < d; ++i) y[i] = P[L.tcn1_b + i];
        for (int j = 0; j < 3 && t - j >= 0; ++j)
          nn::matvec_acc(P + L.tcn1_w + static_cast<size_t>(j) * d * d,
                         tr.e[t - j].data(), y, d, d);
        nn::tanh_inplace(y, d);
      }
      for (int t = 0; t < k; ++t) {
        double* y = tr.tcn_a2.data() + static_cast<size_t>(t) * d;
        for (int i = 0; i < d; ++i) y[i] = P[L.tcn2_b + i];
        for (int j = 0; j < 3 && t - 2 * j >= 0; ++j)
          nn::matvec_acc(P + L.tcn2_w + static_cast<size_t>(j) * d * d,
                         tr.tcn_a1.data() + static_cast<size_t>(t - 2 * j) * d, y,
                         d, d);
        nn::tanh_inplace(y, d);
      }
      std::copy_n(tr.tcn_a2.data() + static_cast<size_t>(k - 1) * d, d,
                  tr.embedding.data());
      break;
    }
  }

  tr.logits.assign(cfg_.num_classes, 0.0);
  for (int i = 0; i < cfg_.num_classes; ++i) tr.logits[i] = P[L.cls_b + i];
  nn::matvec_acc(P + L.cls_w, tr.embedding.data(), tr.logits.data(),
                 cfg_.num_classes, d);

  EmbeddingOutput out;
  out.embedding = tr.embedding;
  out.logits = tr.logits;
  for (double v : out.logits)
    if (!std::isfinite(v)) throw InvalidInput("forward_clip: non-finite output");
  return out;
}

EmbeddingOutput ClipClassifier::forward(const core::FrameView& view) const {
  Trace tr;
  return forward_traced(view, tr);
}

std::vector<std::vector<double>> ClipClassifier::forward_sequence(
    const core::FrameView& view) const {
  Trace tr;
  forward_traced(view, tr);
  const Layout& L = *layout_;
  const double* P = params_.data();
  const int k = cfg_.frames_per_view, d = cfg_.embed_dim;
  std::vector<std::vector<double>> per_time(k);
  for (int t = 0; t < k; ++t) {
    const double* feat = nullptr;
    switch (cfg_.head) {
      case HeadType::recurrent: feat = tr.gru_h[1][t].data(); break;
      case HeadType::attention: feat = tr.att_y.data() + static_cast<size_t>(t) * d; break;
      case HeadType::causal_tcn: feat = tr.tcn_a2.data() + static_cast<size_t>(t) * d; break;
    }
    per_time[t].assign(cfg_.num_classes, 0.0);
    for (int i = 0; i < cfg_.num_classes; ++i) per_time[t][i] = P[L.cls_b + i];
    nn::matvec_acc(P + L.cls_w, feat, per_time[t].data(), cfg_.num_classes, d);
  }
  return per_time;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

void ClipClassifier::backward(const Trace& tr, std::span<const double> dlogits,
                              std::span<const double> dembedding,
                              std::span<double> grad) const {
  if (grad.size() != params_.size())
    throw InvalidInput("backward: gradient buffer size mismatch");
  if (dlogits.size() != static_cast<size_t>(cfg_.num_classes))
    throw InvalidInput("backward: dlogits size mismatch");
  const Layout& L = *layout_;
  const double* P = params_.data();
  double* G = grad.data();
  const int k = cfg_.frames_per_view, d = cfg_.embed_dim;
  const int h = cfg_.height, w = cfg_.width;
  const int c1 = cfg_.conv1_channels, c2 = cfg_.conv2_channels;
  const int h2 = h / 2, w2 = w / 2, h4 = h / 4, w4 = w / 4;

  // classifier
  std::vector<double> demb(d, 0.0);
  if (!dembedding.empty()) {
    if (dembedding.size() != static_cast<size_t>(d))
      throw InvalidInput("backward: dembedding size mismatch");
    std::copy(dembedding.begin(), dembedding.end(), demb.begin());
  }
  for (int o = 0; o < cfg_.num_classes; ++o) {
    G[L.cls_b + o] += dlogits[o];
  }
  nn::matvec_backward(P + L.cls_w, tr.embedding.data(), dlogits.data(),
                      demb.data(), G + L.cls_w, cfg_.num_classes, d);

  // temporal head backward -> per-frame dE
  std::vector<std::vector<double>> de(k, std::vector<double>(d, 0.0));
  switch (cfg_.head) {
    case HeadType::recurrent: {
      // dh arriving at each timestep of layer 1 (filled by layer-2 backward)
      std::vector<std::vector<double>> dh1(k, std::vector<double>(d, 0.0));
      for (int l = 1; l >= 0; --l) {
        std::vector<double> carry(d, 0.0);
        if (l == 1) carry = demb;  // gradient enters at the last step only
        for (int t = k - 1; t >= 0; --t) {
          std::vector<double> dh(d, 0.0);
          for (int i = 0; i < d; ++i) dh[i] = carry[i];
          if (l == 0)
            for (int i = 0; i < d; ++i) dh[i] += dh1[t][i];
          const auto& r = tr.gru_r[l][t];
          const auto& z = tr.gru_z[l][t];
          const auto& hc = tr.gru_hc[l][t];
          const std::vector<double> zero(d, 0.0);
          const auto& hprev = t > 0 ? tr.gru_h[l][t - 1] : zero;
          const double* x = l == 0 ? tr.e[t].data() : tr.gru_h[0][t].data();
          std::vector<double> dz(d), dhc(d), dhprev(d), rh(d);
          for (int i = 0; i < d; ++i) {
            dz[i] = dh[i] * (hc[i] - hprev[i]) * z[i] * (1.0 - z[i]);
            dhc[i] = dh[i] * z[i] * (1.0 - hc[i] * hc[i]);
            dhprev[i] = dh[i] * (1.0 - z[i]);
            rh[i] = r[i] * hprev[i];
          }
          std::vector<double> dx(d, 0.0), drh(d, 0.0);
          // candidate path
          nn::matvec_backward(P + L.gru_wh[l], x, dhc.data(), dx.data(),
                              G + L.gru_wh[l], d, d);
          nn::matvec_backward(P + L.gru_uh[l], rh.data(), dhc.data(), drh.data(),
                              G + L.gru_uh[l], d, d);
          for (int i = 0; i < d; ++i) G[L.gru_bh[l] + i] += dhc[i];
          std::vector<double> dr(d);
          for (int i = 0; i < d; ++i) {
            dr[i] = drh[i] * hprev[i] * r[i] * (1.0 - r[i]);
            dhprev[i] += drh[i] * r[i];
          }
          // reset gate
          nn::matvec_backward(P + L.gru_wr[l], x, dr.data(), dx.data(),
                              G + L.gru_wr[l], d, d);
          nn::matvec_backward(P + L.gru_ur[l], hprev.data(), dr.data(),
                              dhprev.data(), G + L.gru_ur[l], d, d);
          for (int i = 0; i < d; ++i) G[L.gru_br[l] + i] += dr[i];
          // update gate
          nn::matvec_backward(P + L.gru_wz[l], x, dz.data(), dx.data(),
                              G + L.gru_wz[l], d, d);
          nn::matvec_backward(P + L.gru_uz[l], hprev.data(), dz.data(),
                              dhprev.data(), G + L.gru_uz[l], d, d);
          for (int i = 0; i < d; ++i) G[L.gru_bz[l] + i] += dz[i];
          if (l == 1)
            for (int i = 0; i < d; ++i) dh1[t][i] = dx[i];
          else
            for (int i = 0; i < d; ++i) de[t][i] += dx[i];
          carry = dhprev;
        }
      }
      break;
    }
    case HeadType::attention: {
      const int nh = cfg_.attention_heads, dh_dim = d / nh;
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh_dim));
      std::vector<double> dx(static_cast<size_t>(k) * d, 0.0);
      std::vector<double> dctx(static_cast<size_t>(k) * d, 0.0);
      // embedding = mean_t y_t ; y = x + Wo ctx
      for (int t = 0; t < k; ++t) {
        std::vector<double> dy(d);
        for (int i = 0; i < d; ++i) dy[i] = demb[i] / k;
        for (int i = 0; i < d; ++i) dx[static_cast<size_t>(t) * d + i] += dy[i];
        nn::matvec_backward(P + L.att_wo,
                            tr.att_ctx.data() + static_cast<size_t>(t) * d,
                            dy.data(), dctx.data() + static_cast<size_t>(t) * d,
                            G + L.att_wo, d, d);
      }
      std::vector<double> dq(static_cast<size_t>(k) * d, 0.0);
      std::vector<double> dk_(static_cast<size_t>(k) * d, 0.0);
      std::vector<double> dv(static_cast<size_t>(k) * d, 0.0);
      for (int hd = 0; hd < nh; ++hd) {
        const int off = hd * dh_dim;
        for (int t = 0; t < k; ++t) {
          const double* arow = tr.att_a.data() + (static_cast<size_t>(hd) * k + t) * k;
          std::vector<double> da(k, 0.0);
          for (int u = 0; u < k; ++u) {
            for (int i = 0; i < dh_dim; ++i) {
              da[u] += dctx[static_cast<size_t>(t) * d + off + i] *
                       tr.att_v[static_cast<size_t>(u) * d + off + i];
              dv[static_cast<size_t>(u) * d + off + i] +=
                  arow[u] * dctx[static_cast<size_t>(t) * d + off + i];
            }
          }
          double dot = 0.0;
          for (int u = 0; u < k; ++u) dot += arow[u] * da[u];
          for (int u = 0; u < k; ++u) {
            const double ds = arow[u] * (da[u] - dot) * scale;
            for (int i = 0; i < dh_dim; ++i) {
              dq[static_cast<size_t>(t) * d + off + i] +=
                  ds * tr.att_k[static_cast<size_t>(u) * d + off + i];
              dk_[static_cast<size_t>(u) * d + off + i] +=
                  ds * tr.att_q[static_cast<size_t>(t) * d + off + i];
            }
          }
        }
      }
      for (int t = 0; t < k; ++t) {
        nn::matvec_backward(P + L.att_wq, tr.att_x.data() + static_cast<size_t>(t) * d,
                            dq.data() + static_cast<size_t>(t) * d,
                            dx.data() + static_cast<size_t>(t) * d, G + L.att_wq, d, d);
        nn::matvec_backward(P + L.att_wk, tr.att_x.data() + static_cast<size_t>(t) * d,
                            dk_.data() + static_cast<size_t>(t) * d,
                            dx.data() + static_cast<size_t>(t) * d, G + L.att_wk, d, d);
        nn::matvec_backward(P + L.att_wv, tr.att_x.data() + static_cast<size_t>(t) * d,
                            dv.data() + static_cast<size_t>(t) * d,
                            dx.data() + static_cast<size_t>(t) * d, G + L.att_wv, d, d);
      }
      for (int t = 0; t < k; ++t)
        for (int i = 0; i < d; ++i) de[t][i] += dx[static_cast<size_t>(t) * d + i];
      break;
    }
    case HeadType::causal_tcn: {
      std::vector<double> da2(static_cast<size_t>(k) * d, 0.0);
      std::copy_n(demb.data(), d, da2.data() + static_cast<size_t>(k - 1) * d);
      std::vector<double> da1(static_cast<size_t>(k) * d, 0.0);
      for (int t = k - 1; t >= 0; --t) {
        std::vector<double> dz(d);
        const double* a2t = tr.tcn_a2.data() + static_cast<size_t>(t) * d;
        for (int i = 0; i < d; ++i)
          dz[i] = da2[static_cast<size_t>(t) * d + i] * (1.0 - a2t[i] * a2t[i]);
        for (int i = 0; i < d; ++i) G[L.tcn2_b + i] += dz[i];
        for (int j = 0; j < 3 && t - 2 * j >= 0; ++j) {
          nn::matvec_backward(P + L.tcn2_w + static_cast<size_t>(j) * d * d,
                              tr.tcn_a1.data() + static_cast<size_t>(t - 2 * j) * d,
                              dz.data(),
                              da1.data() + static_cast<size_t>(t - 2 * j) * d,
                              G + L.tcn2_w + static_cast<size_t>(j) * d * d, d, d);
        }
      }
      for (int t = k - 1; t >= 0; --t) {
        std::vector<double> dz(d);
        const double* a1t = tr.tcn_a1.data() + static_cast<size_t>(t) * d;
        for (int i = 0; i < d; ++i)
          dz[i] = da1[static_cast<size_t>(t) * d + i] * (1.0 - a1t[i] * a1t[i]);
        for (int i = 0; i < d; ++i) G[L.tcn1_b + i] += dz[i];
        for (int j = 0; j < 3 && t - j >= 0; ++j) {
          nn::matvec_backward(P + L.tcn1_w + static_cast<size_t>(j) * d * d,
                              tr.e[t - j].data(), dz.data(), de[t - j].data(),
                              G + L.tcn1_w + static_cast<size_t>(j) * d * d, d, d);
        }
      }
      break;
    }
  }

  // encoder backward per frame
  std::vector<double> dp2(static_cast<size_t>(c2) * h4 * w4);
  std::vector<double> da2buf(static_cast<size_t>(c2) * h2 * w2);
  std::vector<double> dp1(static_cast<size_t>(c1) * h2 * w2);
  std::vector<double> da1buf(static_cast<size_t>(c1) * h * w);
  for (int f = 0; f < k; ++f) {
    bool nonzero = false;
    for (int i = 0; i < d; ++i)
      if (de[f][i] != 0.0) { nonzero = true; break; }
    if (!nonzero) continue;
    std::vector<double> depre(d), dg(c2, 0.0);
    for (int i = 0; i < d; ++i)
      depre[i] = de[f][i] * (1.0 - tr.e[f][i] * tr.e[f][i]);
    nn::matvec_backward(P + L.emb_w, tr.g[f].data(), depre.data(), dg.data(),
                        G + L.emb_w, d, c2);
    for (int i = 0; i < d; ++i) G[L.emb_b + i] += depre[i];
    const double inv_area = 1.0 / (static_cast<double>(h4) * w4);
    for (int ch = 0; ch < c2; ++ch) {
      const double v = dg[ch] * inv_area;
      double* plane = dp2.data() + static_cast<size_t>(ch) * h4 * w4;
      for (int p = 0; p < h4 * w4; ++p) plane[p] = v;
    }
    std::fill(da2buf.begin(), da2buf.end(), 0.0);
    nn::avgpool2_backward(da2buf.data(), c2, h2, w2, dp2.data());
    for (size_t i = 0; i < da2buf.size(); ++i)
      da2buf[i] *= 1.0 - tr.a2[f][i] * tr.a2[f][i];
    std::fill(dp1.begin(), dp1.end(), 0.0);
    nn::conv3x3_backward(tr.p1[f].data(), c1, h2, w2, P + L.conv2_w,
                         da2buf.data(), c2, dp1.data(), G + L.conv2_w,
                         G + L.conv2_b);
    std::fill(da1buf.begin(), da1buf.end(), 0.0);
    nn::avgpool2_backward(da1buf.data(), c1, h, w, dp1.data());
    for (size_t i = 0; i < da1buf.size(); ++i)
      da1buf[i] *= 1.0 - tr.a1[f][i] * tr.a1[f][i];
    nn::conv3x3_backward(tr.x0[f].data(), cfg_.channels, h, w, P + L.conv1_w,
                         da1buf.data(), c1, nullptr, G + L.conv1_w,
                         G + L.conv1_b);
  }
}

// ---------------------------------------------------------------------------
// SegmentationNet
// ---------------------------------------------------------------------------

void SegModelConfig::validate() const {
  if (num_classes < 2) throw InvalidInput("SegModelConfig: num_classes must be >= 2");
  if (height < 2 || width < 2 || height % 2 != 0 || width % 2 != 0)
    throw InvalidInput("SegModelConfig: height and width must be even");
  if (channels < 1 || conv1_channels < 1 || conv2_channels < 1)
    throw InvalidInput("SegModelConfig: dimensions must be positive");
}

struct SegmentationNet::Layout {
  size_t conv1_w, conv1_b, conv2_w, conv2_b, head_w, head_b;
  size_t total;
};

SegmentationNet::SegmentationNet(const SegModelConfig& config, uint64_t init_seed)
    : cfg_(config), layout_(std::make_unique<Layout>()) {
  cfg_.validate();
  nn::ParamAllocator alloc;
  Layout& L = *layout_;
  const int fcat = cfg_.conv1_channels + cfg_.conv2_channels;
  L.conv1_w = alloc.alloc(static_cast<size_t>(cfg_.conv1_channels) * cfg_.channels * 9);
  L.conv1_b = alloc.alloc(cfg_.conv1_channels);
  L.conv2_w = alloc.alloc(static_cast<size_t>(cfg_.conv2_channels) * cfg_.conv1_channels * 9);
  L.conv2_b = alloc.alloc(cfg_.conv2_channels);
  L.head_w = alloc.alloc(static_cast<size_t>(cfg_.num_classes) * fcat);
  L.head_b = alloc.alloc(cfg_.num_classes);
  L.total = alloc.total();

  params_.assign(L.total, 0.0);
  rng::Xoshiro256ss gen(init_seed);
  init_uniform(params_, L.conv1_w,
               static_cast<size_t>(cfg_.conv1_channels) * cfg_.channels * 9,
               std::sqrt(1.0 / (cfg_.channels * 9)), gen);
  init_uniform(params_, L.conv2_w,
               static_cast<size_t>(cfg_.conv2_channels) * cfg_.conv1_channels * 9,
               std::sqrt(1.0 / (cfg_.conv1_channels * 9)), gen);
  init_uniform(params_, L.head_w, static_cast<size_t>(cfg_.num_classes) * fcat,
               std::sqrt(1.0 / fcat), gen);
  quantize_to_float_grid(params_);
}

SegmentationNet::~SegmentationNet() = default;
SegmentationNet::SegmentationNet(const SegmentationNet& other)
    : cfg_(other.cfg_), params_(other.params_),
      layout_(std::make_unique<Layout>(*other.layout_)) {}
SegmentationNet& SegmentationNet::operator=(const SegmentationNet& other) {
  cfg_ = other.cfg_;
  params_ = other.params_;
  layout_ = std::make_unique<Layout>(*other.layout_);
  return *this;
}
SegmentationNet::SegmentationNet(SegmentationNet&&) noexcept = default;
SegmentationNet& SegmentationNet::operator=(SegmentationNet&&) noexcept = default;

void SegmentationNet::set_parameters(std::span<const double> params) {
  if (params.size() != params_.size())
    throw InvalidInput("set_parameters: size mismatch");
  params_.assign(params.begin(), params.end());
}

struct SegmentationNet::Trace {
  std::vector<double> x0, a1, p1, a2, cat;  // activations
  std::vector<double> probs;                // [C, H, W]
};

void SegmentationNet::TraceDeleter::operator()(Trace* trace) const {
  delete trace;
}

SegmentationNet::TracePtr SegmentationNet::make_trace() const {
  return TracePtr(new Trace());
}

std::vector<double> SegmentationNet::forward_traced(const core::ClipArray& image,
                                                    Trace& tr) const {
  if (image.t != 1 || image.h != cfg_.height || image.w != cfg_.width ||
      image.c != cfg_.channels)
    throw InvalidInput("forward_seg: image shape does not match model");
  const Layout& L = *layout_;
  const double* P = params_.data();
  const int h = cfg_.height, w = cfg_.width;
  const int c1 = cfg_.conv1_channels, c2 = cfg_.conv2_channels;
  const int h2 = h / 2, w2 = w / 2;
  const int fcat = c1 + c2;
  const size_t plane = static_cast<size_t>(h) * w;

  frame_to_planes(image, 0, tr.x0);
  tr.a1.assign(static_cast<size_t>(c1) * plane, 0.0);
  nn::conv3x3_forward(tr.x0.data(), cfg_.channels, h, w, P + L.conv1_w,
                      P + L.conv1_b, tr.a1.data(), c1);
  nn::tanh_inplace(tr.a1.data(), tr.a1.size());
  tr.p1.assign(static_cast<size_t>(c1) * h2 * w2, 0.0);
  nn::avgpool2_forward(tr.a1.data(), c1, h, w, tr.p1.data());
  tr.a2.assign(static_cast<size_t>(c2) * h2 * w2, 0.0);
  nn::conv3x3_forward(tr.p1.data(), c1, h2, w2, P + L.conv2_w, P + L.conv2_b,
                      tr.a2.data(), c2);
  nn::tanh_inplace(tr.a2.data(), tr.a2.size());
  tr.cat.assign(static_cast<size_t>(fcat) * plane, 0.0);
  std::copy_n(tr.a1.data(), static_cast<size_t>(c1) * plane, tr.cat.data());
  nn::upsample2_forward(tr.a2.data(), c2, h2, w2,
                        tr.cat.data() + static_cast<size_t>(c1) * plane);

  tr.probs.assign(static_cast<size_t>(cfg_.num_classes) * plane, 0.0);
  std::vector<double> logits(cfg_.num_classes);
  for (size_t px = 0; px < plane; ++px) {
    for (int c = 0; c < cfg_.num_classes; ++c) {
      double acc = P[L.head_b + c];
      const double* row = P + L.head_w + static_cast<size_t>(c) * fcat;
      for (int f = 0; f < fcat; ++f) acc += row[f] * tr.cat[f * plane + px];
      logits[c] = acc;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (int c = 0; c < cfg_.num_classes; ++c) {
      logits[c] = std::exp(logits[c] - mx);
      sum += logits[c];
    }
    for (int c = 0; c < cfg_.num_classes; ++c)
      tr.probs[c * plane + px] = logits[c] / sum;
  }
  return tr.probs;
}

core::SegPrediction SegmentationNet::forward(const core::ClipArray& image) const {
  Trace tr;
  auto probs = forward_traced(image, tr);
  return core::SegPrediction::from_probs(cfg_.num_classes, cfg_.height,
                                         cfg_.width, std::move(probs));
}

void SegmentationNet::backward(const Trace& tr, std::span<const double> dlogits,
                               std::span<double> grad) const {
  const Layout& L = *layout_;
  const double* P = params_.data();
  double* G = grad.data();
  const int h = cfg_.height, w = cfg_.width;
  const int c1 = cfg_.conv1_channels, c2 = cfg_.conv2_channels;
  const int h2 = h / 2, w2 = w / 2;
  const int fcat = c1 + c2;
  const size_t plane = static_cast<size_t>(h) * w;
  if (grad.size() != params_.size())
    throw InvalidInput("backward: gradient buffer size mismatch");
  if (dlogits.size() != static_cast<size_t>(cfg_.num_classes) * plane)
    throw InvalidInput("backward: dlogits size mismatch");

  std::vector<double> dcat(static_cast<size_t>(fcat) * plane, 0.0);
  for (int c = 0; c < cfg_.num_classes; ++c) {
    const double* dl = dlogits.data() + static_cast<size_t>(c) * plane;
    const double* row = P + L.head_w + static_cast<size_t>(c) * fcat;
    double* drow = G + L.head_w + static_cast<size_t>(c) * fcat;
    double db = 0.0;
    for (size_t px = 0; px < plane; ++px) {
      const double g = dl[px];
      if (g == 0.0) continue;
      db += g;
      for (int f = 0; f < fcat; ++f) {
        drow[f] += g * tr.cat[f * plane + px];
        dcat[f * plane + px] += g * row[f];
      }
    }
    G[L.head_b + c] += db;
  }

  std::vector<double> da2(static_cast<size_t>(c2) * h2 * w2, 0.0);
  nn::upsample2_backward(da2.data(), c2, h2, w2,
                         dcat.data() + static_cast<size_t>(c1) * plane);
  for (size_t i = 0; i < da2.size(); ++i) da2[i] *= 1.0 - tr.a2[i] * tr.a2[i];
  std::vector<double> dp1(static_cast<size_t>(c1) * h2 * w2, 0.0);
  nn::conv3x3_backward(tr.p1.data(), c1, h2, w2, P + L.conv2_w, da2.data(), c2,
                       dp1.data(), G + L.conv2_w, G + L.conv2_b);
  std::vector<double> da1(dcat.begin(), dcat.begin() + static_cast<size_t>(c1) * plane);
  nn::avgpool2_backward(da1.data(), c1, h, w, dp1.data());
  for (size_t i = 0; i < da1.size(); ++i) da1[i] *= 1.0 - tr.a1[i] * tr.a1[i];
  nn::conv3x3_backward(tr.x0.data(), cfg_.channels, h, w, P + L.conv1_w,
                       da1.data(), c1, nullptr, G + L.conv1_w, G + L.conv1_b);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const char* tag_name(CheckpointTag tag) {
  switch (tag) {
    case CheckpointTag::third: return "third";
    case CheckpointTag::two_thirds: return "two_thirds";
    case CheckpointTag::final: return "final";
    case CheckpointTag::other: return "other";
  }
  return "other";
}

namespace {

Checkpoint make_checkpoint(std::span<const double> params, uint64_t step,
                           CheckpointTag tag) {
  Checkpoint ckpt;
  ckpt.step = step;
  ckpt.tag = tag;
  ckpt.parameters.reserve(params.size());
  for (double p : params) ckpt.parameters.push_back(static_cast<float>(p));
  return ckpt;
}

std::vector<double> widen(const std::vector<float>& params) {
  return {params.begin(), params.end()};
}

}  // namespace

Checkpoint save_checkpoint(const ClipClassifier& model, uint64_t step,
                           CheckpointTag tag) {
  return make_checkpoint(model.parameters(), step, tag);
}

Checkpoint save_checkpoint(const SegmentationNet& model, uint64_t step,
                           CheckpointTag tag) {
  return make_checkpoint(model.parameters(), step, tag);
}

ClipClassifier load_checkpoint(const ModelConfig& config, const Checkpoint& ckpt) {
  ClipClassifier model(config, 0);
  if (ckpt.parameters.size() != model.num_parameters())
    throw InvalidInput("load_checkpoint: parameter count does not match config");
  const auto wide = widen(ckpt.parameters);
  model.set_parameters(wide);
  return model;
}

SegmentationNet load_checkpoint(const SegModelConfig& config,
                                const Checkpoint& ckpt) {
  SegmentationNet model(config, 0);
  if (ckpt.parameters.size() != model.num_parameters())
    throw InvalidInput("load_checkpoint: parameter count does not match config");
  const auto wide = widen(ckpt.parameters);
  model.set_parameters(wide);
  return model;
}

namespace {

void put_u64le(std::vector<unsigned char>& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u32le(std::vector<unsigned char>& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

uint64_t get_u64le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

uint32_t get_u32le(const unsigned char* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void write_checkpoint_file(const Checkpoint& ckpt, const std::string& path) {
  std::vector<unsigned char> payload;
  payload.reserve(ckpt.parameters.size() * 4);
  for (float f : ckpt.parameters) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32le(payload, bits);
  }
  const auto crc = static_cast<uint32_t>(
      crc32(0L, payload.data(), static_cast<uInt>(payload.size())));

  std::vector<unsigned char> header;
  header.insert(header.end(), {'S', 'S', 'L', 'V', '1'});
  put_u64le(header, ckpt.step);
  header.push_back(static_cast<unsigned char>(ckpt.tag));
  put_u64le(header, static_cast<uint64_t>(ckpt.parameters.size()));
  put_u32le(header, crc);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("write_checkpoint_file: cannot open " + path);
  out.write(reinterpret_cast<const char*>(header.data()),
            static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
}

Checkpoint read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("read_checkpoint_file: cannot open " + path);
  unsigned char header[26];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw IntegrityError("checkpoint: truncated header");
  if (std::memcmp(header, "SSLV1", 5) != 0)
    throw IntegrityError("checkpoint: bad magic");
  Checkpoint ckpt;
  ckpt.step = get_u64le(header + 5);
  const unsigned char tag_byte = header[13];
  if (tag_byte > 3) throw IntegrityError("checkpoint: unknown tag byte");
  ckpt.tag = static_cast<CheckpointTag>(tag_byte);
  const uint64_t count = get_u64le(header + 14);
  const uint32_t stored_crc = get_u32le(header + 22);
  if (count > (1ULL << 32))
    throw IntegrityError("checkpoint: implausible parameter count");
  std::vector<unsigned char> payload(static_cast<size_t>(count) * 4);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size()));
  if (!in) throw IntegrityError("checkpoint: truncated payload");
  const auto crc = static_cast<uint32_t>(
      crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
  if (crc != stored_crc) throw IntegrityError("checkpoint: CRC32 mismatch");
  ckpt.parameters.resize(static_cast<size_t>(count));
  for (size_t i = 0; i < ckpt.parameters.size(); ++i) {
    const uint32_t bits = get_u32le(payload.data() + i * 4);
    float f;
    std::memcpy(&f, &bits, 4);
    ckpt.parameters[i] = f;
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Training engine
// ---------------------------------------------------------------------------

namespace engine {

std::vector<int> shuffled_order(size_t n, rng::Xoshiro256ss& gen) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  gen.shuffle(order.data(), order.size());
  return order;
}

std::vector<int> draw_training_view(int clip_length, int frames_per_view,
                                    sampling::Strategy strategy,
                                    rng::Xoshiro256ss& gen) {
  switch (strategy) {
    case sampling::Strategy::uniform:
      return sampling::uniform_sample(clip_length, frames_per_view);
    case sampling::Strategy::segment_random:
      return sampling::segment_random_sample(clip_length, frames_per_view, gen);
    case sampling::Strategy::long_short:
      throw InvalidInput("long_short is reserved for the unlabeled TCR stream");
  }
  throw InvalidInput("unknown sampling strategy");
}

double labeled_batch_loss_and_grad(const ClipClassifier& model,
                                   std::span<const LabeledClip> batch,
                                   std::span<const std::vector<int>> views,
                                   std::vector<double>& grad,
                                   const BatchEmbeddingHook& hook,
                                   std::span<const double> class_weights) {
  const size_t n = batch.size();
  if (n == 0) throw InvalidInput("labeled_batch: empty batch");
  if (views.size() != n) throw InvalidInput("labeled_batch: view count mismatch");
  const int num_classes = model.config().num_classes;
  const bool weighted = !class_weights.empty();
  if (weighted && class_weights.size() != static_cast<size_t>(num_classes))
    throw InvalidInput("labeled_batch: class_weights length mismatch");

  std::vector<ClipClassifier::TracePtr> traces;
  std::vector<std::vector<double>> dlogits(n);
  std::vector<std::vector<double>> embeddings(n);
  std::vector<int> labels(n);
  double loss = 0.0;
  double weight_sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const auto& item = batch[i];
    if (item.label < 0 || item.label >= num_classes)
      throw InvalidInput("labeled_batch: label out of range");
    traces.push_back(model.make_trace());
    auto out = model.forward_traced(core::take_view(*item.clip, views[i]),
                                    *traces.back());
    const auto probs = core::softmax(out.logits);
    const double w =
        weighted ? class_weights[static_cast<size_t>(item.label)] : 1.0;
    weight_sum += w;
    loss += -w * std::log(std::max(probs[static_cast<size_t>(item.label)], 1e-300));
    dlogits[i].assign(probs.begin(), probs.end());
    dlogits[i][static_cast<size_t>(item.label)] -= 1.0;
    for (double& v : dlogits[i]) v *= w;
    embeddings[i] = std::move(out.embedding);
    labels[i] = item.label;
  }
  if (weight_sum <= 0.0) throw InvalidInput("labeled_batch: zero weight sum");
  for (size_t i = 0; i < n; ++i)
    for (double& v : dlogits[i]) v /= weight_sum;
  loss /= weight_sum;

  std::vector<std::vector<double>> dembedding;
  if (hook) {
    dembedding.assign(n, std::vector<double>(model.config().embed_dim, 0.0));
    loss += hook(embeddings, labels, dembedding);
  }
  for (size_t i = 0; i < n; ++i) {
    model.backward(*traces[i], dlogits[i],
                   hook ? std::span<const double>(dembedding[i])
                        : std::span<const double>{},
                   grad);
  }
  return loss;
}

void optimizer_step(std::vector<double>& params, const std::vector<double>& grad,
                    OptimizerState& state, Optimizer kind, double lr,
                    double momentum) {
  if (state.velocity.size() != params.size())
    state.velocity.assign(params.size(), 0.0);
  if (kind == Optimizer::sgd) {
    for (size_t i = 0; i < params.size(); ++i) {
      state.velocity[i] = momentum * state.velocity[i] + grad[i];
      params[i] -= lr * state.velocity[i];
      params[i] = static_cast<double>(static_cast<float>(params[i]));
    }
    return;
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  if (state.second_moment.size() != params.size())
    state.second_moment.assign(params.size(), 0.0);
  ++state.step;
  const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    state.velocity[i] = beta1 * state.velocity[i] + (1.0 - beta1) * grad[i];
    state.second_moment[i] =
        beta2 * state.second_moment[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double m_hat = state.velocity[i] / bias1;
    const double v_hat = state.second_moment[i] / bias2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    params[i] = static_cast<double>(static_cast<float>(params[i]));
  }
}

}  // namespace engine

TrainResult train_supervised(ClipClassifier& model,
                             std::span<const LabeledClip> labeled,
                             const TrainConfig& config) {
  if (labeled.empty()) throw InvalidInput("train_supervised: empty labeled set");
  if (config.epochs < 1) throw InvalidInput("train_supervised: epochs must be >= 1");
  if (config.batch_size < 1) throw InvalidInput("train_supervised: batch_size must be >= 1");

  rng::Xoshiro256ss rng_batch(rng::derive_seed(config.seed, rng::salt::kBatch));
  rng::Xoshiro256ss rng_view(rng::derive_seed(config.seed, rng::salt::kView));

  const int n_epochs = config.epochs;
  const int mark_third = (n_epochs + 2) / 3;
  const int mark_two_thirds = (2 * n_epochs + 2) / 3;

  TrainResult result;
  std::vector<double> params(model.parameters().begin(), model.parameters().end());
  std::vector<double> grad(params.size(), 0.0);
  engine::OptimizerState opt;

  for (int epoch = 1; epoch <= n_epochs; ++epoch) {
    const auto order = engine::shuffled_order(labeled.size(), rng_batch);
    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.batch_size)) {
      const size_t end =
          std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<LabeledClip> batch;
      std::vector<std::vector<int>> views;
      for (size_t i = start; i < end; ++i) {
        const auto& item = labeled[static_cast<size_t>(order[i])];
        batch.push_back(item);
        views.push_back(engine::draw_training_view(
            item.clip->frames.t, model.config().frames_per_view,
            config.view_strategy, rng_view));
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      const double batch_loss = engine::labeled_batch_loss_and_grad(
          model, batch, views, grad, nullptr, config.class_weights);
      engine::optimizer_step(params, grad, opt, config.optimizer, config.lr, config.momentum);
      model.set_parameters(params);
      epoch_loss += batch_loss * static_cast<double>(batch.size());
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(labeled.size()));
    if (epoch == mark_third)
      result.checkpoints.push_back(
          save_checkpoint(model, static_cast<uint64_t>(epoch), CheckpointTag::third));
    if (epoch == mark_two_thirds)
      result.checkpoints.push_back(save_checkpoint(
          model, static_cast<uint64_t>(epoch), CheckpointTag::two_thirds));
    if (epoch == n_epochs)
      result.checkpoints.push_back(
          save_checkpoint(model, static_cast<uint64_t>(epoch), CheckpointTag::final));
  }
  return result;
}

core::Prediction predict_clip(const ClipClassifier& model,
                              const core::VideoClip& clip) {
  const auto indices = sampling::uniform_sample(clip.frames.t,
                                                model.config().frames_per_view);
  const auto out = model.forward(core::take_view(clip, indices));
  return core::Prediction::from_probs(core::softmax(out.logits));
}

core::MetricReport evaluate_clips(const ClipClassifier& model,
                                  std::span<const LabeledClip> clips,
                                  const core::LabelSpace& label_space) {
  std::vector<int> preds, gts;
  preds.reserve(clips.size());
  gts.reserve(clips.size());
  for (const auto& item : clips) {
    preds.push_back(predict_clip(model, *item.clip).predicted_class);
    gts.push_back(item.label);
  }
  return core::classification_metrics(preds, gts, label_space);
}

}  // namespace sslv::models

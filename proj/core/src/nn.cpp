#include "mater/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mater/errors.hpp"

namespace mater {
namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kLnEps = 1e-10;
constexpr double kStdFloor = 1e-6;

struct LstmLayerCache {
  Mat x;                 // n x in
  Mat ig, fg, gg, og;    // n x H gate activations
  Mat c, h, tanh_c;      // n x H
};

struct LnCache {
  Mat xhat;   // rows x D
  Vec sigma;  // rows
};

struct AttnCache {
  Mat q, k, v, a, o;  // a: L x N attention weights
};

struct BlockCache {
  Mat z_in;
  AttnCache cross;
  Mat c_pre;
  LnCache ln1;
  Mat c_out;
  AttnCache self_attn;
  Mat s_pre;
  LnCache ln2;
  Mat s_out;
  Mat ffn_pre, ffn_h1, ffn_out;
  Mat f_pre;
  LnCache ln3;
  Mat z_out;
};

struct PerceiverCache {
  std::vector<std::string> source_order;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> source_rows;  // offset,count
  Mat tokens;
  BlockCache pass1, pass2;
};

struct PoolCache {
  Mat frames;    // F x De
  Mat pre_tanh;  // F x A
  Mat th;        // F x A
  Vec e, a;      // F
  Vec mu, m2, var, sd_raw, sd;
};

}  // namespace

struct ForwardCache {
  bool has_word = false;
  std::vector<LstmLayerCache> lstm;
  Vec h_w;

  Vec ple_act;
  Vec h_u;

  bool has_emb = false;
  PerceiverCache perc;
  std::vector<std::pair<std::string, PoolCache>> pools;
  Vec emb_out;

  Vec head_in;
};

int ModelDims::emb_out_dim() const {
  if (emb_mode == EmbeddingMode::perceiver) return model_dim;
  int total = 0;
  for (const auto& [name, dim] : source_dims) total += 2 * dim;
  return total;
}

Mat& ModelParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    auto bit = buffers.find(name);
    if (bit == buffers.end()) throw ValidationError("unknown parameter: " + name);
    return bit->second;
  }
  return it->second;
}

const Mat& ModelParams::at(const std::string& name) const {
  return const_cast<ModelParams*>(this)->at(name);
}

ModelParams init_params(const ModelDims& dims, unsigned long long seed) {
  ModelParams p;
  p.dims = dims;
  const int H = dims.lstm_hidden;
  const int D = dims.model_dim;
  const int F = dims.ffn_dim();
  auto& t = p.tensors;

  t["lstm.l0.W"] = Mat(4 * H, dims.word_in);
  t["lstm.l0.U"] = Mat(4 * H, H);
  t["lstm.l0.b"] = Mat(4 * H, 1);
  t["lstm.l1.W"] = Mat(4 * H, H);
  t["lstm.l1.U"] = Mat(4 * H, H);
  t["lstm.l1.b"] = Mat(4 * H, 1);

  t["ple.W"] = Mat(dims.utt_hidden, dims.utt_in * dims.ple_bins);
  t["ple.b"] = Mat(dims.utt_hidden, 1);

  if (dims.emb_mode == EmbeddingMode::perceiver) {
    t["perceiver.latent"] = Mat(dims.latent_rows, D);
    for (const auto& [name, dim] : dims.source_dims) {
      t["perceiver.proj." + name + ".W"] = Mat(D, dim);
      t["perceiver.proj." + name + ".b"] = Mat(D, 1);
    }
    for (const char* blk : {"cross", "self"}) {
      for (const char* w : {"wq", "wk", "wv", "wo"}) {
        t["perceiver." + std::string(blk) + "." + w] = Mat(D, D);
      }
    }
    t["perceiver.ffn.W1"] = Mat(D, F);
    t["perceiver.ffn.b1"] = Mat(F, 1);
    t["perceiver.ffn.W2"] = Mat(F, D);
    t["perceiver.ffn.b2"] = Mat(D, 1);
    for (const char* ln : {"ln1", "ln2", "ln3"}) {
      t["perceiver." + std::string(ln) + ".gamma"] = Mat(D, 1);
      t["perceiver." + std::string(ln) + ".beta"] = Mat(D, 1);
    }
  } else {
    for (const auto& [name, dim] : dims.source_dims) {
      t["pool." + name + ".W"] = Mat(dims.pool_attn, dim);
      t["pool." + name + ".b"] = Mat(dims.pool_attn, 1);
      t["pool." + name + ".v"] = Mat(dims.pool_attn, 1);
    }
  }

  t["head.W"] = Mat(dims.out_dim(), dims.head_in_dim());
  t["head.b"] = Mat(dims.out_dim(), 1);

  std::mt19937_64 rng(seed);
  auto next_uniform = [&rng]() {
    // 53-bit mantissa draw in [0, 1); portable across standard libraries.
    return double(rng() >> 11) * (1.0 / 9007199254740992.0);
  };
  for (auto& [name, m] : t) {
    const bool is_bias = name.ends_with(".b") || name.ends_with(".b1") ||
                         name.ends_with(".b2") || name.ends_with(".beta");
    if (is_bias) {
      m.setZero();
    } else if (name.ends_with(".gamma")) {
      m.setOnes();
    } else {
      const double s =
          std::sqrt(1.0 / double(std::max(m.rows(), m.cols())));
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
          m(i, j) = (2.0 * next_uniform() - 1.0) * s;
        }
      }
    }
  }

  p.buffers["ple.edges"] = Mat::Constant(
      dims.utt_in, dims.ple_bins + 1, std::numeric_limits<double>::quiet_NaN());
  return p;
}

ParamGrads zero_grads(const ModelParams& params) {
  ParamGrads g;
  for (const auto& [name, m] : params.tensors) {
    g[name] = Mat::Zero(m.rows(), m.cols());
  }
  return g;
}

Vec flatten_params(const ModelParams& params) {
  Eigen::Index total = 0;
  for (const auto& [name, m] : params.tensors) total += m.size();
  Vec flat(total);
  Eigen::Index pos = 0;
  for (const auto& [name, m] : params.tensors) {
    flat.segment(pos, m.size()) = Eigen::Map<const Vec>(m.data(), m.size());
    pos += m.size();
  }
  return flat;
}

void unflatten_params(const Vec& flat, ModelParams& params) {
  Eigen::Index pos = 0;
  for (auto& [name, m] : params.tensors) {
    if (pos + m.size() > flat.size()) {
      throw ValidationError("unflatten_params: flat vector too short");
    }
    Eigen::Map<Vec>(m.data(), m.size()) = flat.segment(pos, m.size());
    pos += m.size();
  }
  if (pos != flat.size()) {
    throw ValidationError("unflatten_params: flat vector size mismatch");
  }
}

Vec flatten_grads(const ModelParams& params, const ParamGrads& grads) {
  Eigen::Index total = 0;
  for (const auto& [name, m] : params.tensors) total += m.size();
  Vec flat = Vec::Zero(total);
  Eigen::Index pos = 0;
  for (const auto& [name, m] : params.tensors) {
    auto it = grads.find(name);
    if (it != grads.end()) {
      flat.segment(pos, m.size()) =
          Eigen::Map<const Vec>(it->second.data(), it->second.size());
    }
    pos += m.size();
  }
  return flat;
}

void fit_ple_edges(ModelParams& params, const std::vector<Vec>& utterances) {
  const int T = params.dims.ple_bins;
  const int dim = params.dims.utt_in;
  if (utterances.empty()) throw ValidationError("fit_ple_edges: empty dataset");
  Mat& edges = params.buffers.at("ple.edges");
  std::vector<double> col(utterances.size());
  for (int j = 0; j < dim; ++j) {
    for (std::size_t s = 0; s < utterances.size(); ++s) {
      if (utterances[s].size() != dim) {
        throw ValidationError("fit_ple_edges: utterance dimension mismatch");
      }
      col[s] = utterances[s][j];
    }
    std::sort(col.begin(), col.end());
    for (int t = 0; t <= T; ++t) {
      const double pos = double(t) / T * double(col.size() - 1);
      const auto lo = std::size_t(std::floor(pos));
      const auto hi = std::min(lo + 1, col.size() - 1);
      const double frac = pos - double(lo);
      edges(j, t) = col[lo] * (1.0 - frac) + col[hi] * frac;
    }
  }
}

Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    out.row(i) = e / e.sum();
  }
  return out;
}

namespace {

Mat ln_forward(const Mat& x, const Vec& gamma, const Vec& beta, LnCache& c) {
  c.xhat.resize(x.rows(), x.cols());
  c.sigma.resize(x.rows());
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double sigma = std::sqrt(var + kLnEps);
    c.sigma[i] = sigma;
    c.xhat.row(i) = (x.row(i).array() - mu) / sigma;
    out.row(i) =
        c.xhat.row(i).cwiseProduct(gamma.transpose()) + beta.transpose();
  }
  return out;
}

Mat ln_backward(const Mat& dy, const LnCache& c, const Vec& gamma, Mat& dgamma,
                Mat& dbeta) {
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    Eigen::RowVectorXd dxhat = dy.row(i).cwiseProduct(gamma.transpose());
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(c.xhat.row(i)).mean();
    dx.row(i) =
        (dxhat.array() - m1 - c.xhat.row(i).array() * m2) / c.sigma[i];
    dgamma += dy.row(i).cwiseProduct(c.xhat.row(i)).transpose();
    dbeta += dy.row(i).transpose();
  }
  return dx;
}

Mat softmax_backward_rows(const Mat& da, const Mat& a) {
  Mat ds(da.rows(), da.cols());
  for (Eigen::Index i = 0; i < da.rows(); ++i) {
    const double dot = da.row(i).dot(a.row(i));
    ds.row(i) = a.row(i).cwiseProduct((da.row(i).array() - dot).matrix());
  }
  return ds;
}

Mat attn_forward(const Mat& z, const Mat& x, const Mat& wq, const Mat& wk,
                 const Mat& wv, const Mat& wo, AttnCache& c) {
  const double scale = 1.0 / std::sqrt(double(wq.cols()));
  c.q = z * wq;
  c.k = x * wk;
  c.v = x * wv;
  c.a = softmax_rows(c.q * c.k.transpose() * scale);
  c.o = c.a * c.v;
  return c.o * wo;
}

// Returns d_z; accumulates d_x and weight gradients.
Mat attn_backward(const Mat& dout, const AttnCache& c, const Mat& z,
                  const Mat& x, const Mat& wq, const Mat& wk, const Mat& wv,
                  const Mat& wo, Mat& dwq, Mat& dwk, Mat& dwv, Mat& dwo,
                  Mat& dx) {
  const double scale = 1.0 / std::sqrt(double(wq.cols()));
  dwo += c.o.transpose() * dout;
  const Mat do_ = dout * wo.transpose();
  const Mat da = do_ * c.v.transpose();
  const Mat dv = c.a.transpose() * do_;
  const Mat ds = softmax_backward_rows(da, c.a) * scale;
  const Mat dq = ds * c.k;
  const Mat dk = ds.transpose() * c.q;
  dwq += z.transpose() * dq;
  dwk += x.transpose() * dk;
  dwv += x.transpose() * dv;
  dx += dk * wk.transpose() + dv * wv.transpose();
  return dq * wq.transpose();
}

Mat block_forward(const Mat& z, const Mat& tokens, const ModelParams& p,
                  BlockCache& c) {
  c.z_in = z;
  const Mat ca = attn_forward(z, tokens, p.at("perceiver.cross.wq"),
                              p.at("perceiver.cross.wk"),
                              p.at("perceiver.cross.wv"),
                              p.at("perceiver.cross.wo"), c.cross);
  c.c_pre = z + ca;
  c.c_out = ln_forward(c.c_pre, p.at("perceiver.ln1.gamma").col(0),
                       p.at("perceiver.ln1.beta").col(0), c.ln1);

  const Mat sa = attn_forward(c.c_out, c.c_out, p.at("perceiver.self.wq"),
                              p.at("perceiver.self.wk"),
                              p.at("perceiver.self.wv"),
                              p.at("perceiver.self.wo"), c.self_attn);
  c.s_pre = c.c_out + sa;
  c.s_out = ln_forward(c.s_pre, p.at("perceiver.ln2.gamma").col(0),
                       p.at("perceiver.ln2.beta").col(0), c.ln2);

  c.ffn_pre = (c.s_out * p.at("perceiver.ffn.W1")).rowwise() +
              p.at("perceiver.ffn.b1").col(0).transpose();
  c.ffn_h1 = c.ffn_pre.cwiseMax(0.0);
  c.ffn_out = (c.ffn_h1 * p.at("perceiver.ffn.W2")).rowwise() +
              p.at("perceiver.ffn.b2").col(0).transpose();
  c.f_pre = c.s_out + c.ffn_out;
  c.z_out = ln_forward(c.f_pre, p.at("perceiver.ln3.gamma").col(0),
                       p.at("perceiver.ln3.beta").col(0), c.ln3);
  return c.z_out;
}

// Returns d_z_in; accumulates gradients and d_tokens.
Mat block_backward(const Mat& dz_out, const BlockCache& c,
                   const Mat& tokens, const ModelParams& p, ParamGrads& g,
                   Mat& dtokens) {
  Mat df_pre = ln_backward(dz_out, c.ln3, p.at("perceiver.ln3.gamma").col(0),
                           g.at("perceiver.ln3.gamma"),
                           g.at("perceiver.ln3.beta"));
  Mat ds_out = df_pre;
  // FFN
  const Mat dffn_out = df_pre;
  g.at("perceiver.ffn.W2") += c.ffn_h1.transpose() * dffn_out;
  g.at("perceiver.ffn.b2") += dffn_out.colwise().sum().transpose();
  Mat dh1 = dffn_out * p.at("perceiver.ffn.W2").transpose();
  dh1 = dh1.cwiseProduct(
      (c.ffn_pre.array() > 0.0).cast<double>().matrix());
  g.at("perceiver.ffn.W1") += c.s_out.transpose() * dh1;
  g.at("perceiver.ffn.b1") += dh1.colwise().sum().transpose();
  ds_out += dh1 * p.at("perceiver.ffn.W1").transpose();

  Mat ds_pre = ln_backward(ds_out, c.ln2, p.at("perceiver.ln2.gamma").col(0),
                           g.at("perceiver.ln2.gamma"),
                           g.at("perceiver.ln2.beta"));
  Mat dc_out = ds_pre;
  // Self-attention: queries and keys/values share c_out, so both paths
  // accumulate into dc_out.
  Mat dc_from_kv = Mat::Zero(c.c_out.rows(), c.c_out.cols());
  dc_out += attn_backward(ds_pre, c.self_attn, c.c_out, c.c_out,
                          p.at("perceiver.self.wq"), p.at("perceiver.self.wk"),
                          p.at("perceiver.self.wv"), p.at("perceiver.self.wo"),
                          g.at("perceiver.self.wq"), g.at("perceiver.self.wk"),
                          g.at("perceiver.self.wv"), g.at("perceiver.self.wo"),
                          dc_from_kv);
  dc_out += dc_from_kv;

  Mat dc_pre = ln_backward(dc_out, c.ln1, p.at("perceiver.ln1.gamma").col(0),
                           g.at("perceiver.ln1.gamma"),
                           g.at("perceiver.ln1.beta"));
  Mat dz_in = dc_pre;
  dz_in += attn_backward(dc_pre, c.cross, c.z_in, tokens,
                         p.at("perceiver.cross.wq"), p.at("perceiver.cross.wk"),
                         p.at("perceiver.cross.wv"), p.at("perceiver.cross.wo"),
                         g.at("perceiver.cross.wq"), g.at("perceiver.cross.wk"),
                         g.at("perceiver.cross.wv"), g.at("perceiver.cross.wo"),
                         dtokens);
  return dz_in;
}

void lstm_forward(const Mat& word_seq, const ModelParams& p,
                  std::vector<LstmLayerCache>& layers, Vec& h_final) {
  const int H = p.dims.lstm_hidden;
  const Eigen::Index n = word_seq.rows();
  layers.assign(2, LstmLayerCache{});
  Mat input = word_seq;
  for (int l = 0; l < 2; ++l) {
    const std::string pre = "lstm.l" + std::to_string(l);
    const Mat& W = p.at(pre + ".W");
    const Mat& U = p.at(pre + ".U");
    const Vec b = p.at(pre + ".b").col(0);
    LstmLayerCache& c = layers[l];
    c.x = input;
    c.ig.resize(n, H); c.fg.resize(n, H); c.gg.resize(n, H); c.og.resize(n, H);
    c.c.resize(n, H); c.h.resize(n, H); c.tanh_c.resize(n, H);
    Vec h_prev = Vec::Zero(H), c_prev = Vec::Zero(H);
    for (Eigen::Index t = 0; t < n; ++t) {
      Vec z = W * input.row(t).transpose() + U * h_prev + b;
      for (int j = 0; j < H; ++j) {
        c.ig(t, j) = sigmoid(z[j]);
        c.fg(t, j) = sigmoid(z[H + j]);
        c.gg(t, j) = std::tanh(z[2 * H + j]);
        c.og(t, j) = sigmoid(z[3 * H + j]);
        c.c(t, j) = c.fg(t, j) * c_prev[j] + c.ig(t, j) * c.gg(t, j);
        c.tanh_c(t, j) = std::tanh(c.c(t, j));
        c.h(t, j) = c.og(t, j) * c.tanh_c(t, j);
      }
      h_prev = c.h.row(t).transpose();
      c_prev = c.c.row(t).transpose();
    }
    input = c.h;
  }
  h_final = n > 0 ? Vec(layers[1].h.row(n - 1).transpose()) : Vec::Zero(H);
}

// d_h: n x H upstream gradient on the layer's hidden states.
// Returns gradient on the layer input sequence.
Mat lstm_layer_backward(const LstmLayerCache& c, const Mat& d_h,
                        const ModelParams& p, int layer, ParamGrads& g) {
  const int H = p.dims.lstm_hidden;
  const std::string pre = "lstm.l" + std::to_string(layer);
  const Mat& W = p.at(pre + ".W");
  const Mat& U = p.at(pre + ".U");
  Mat& dW = g.at(pre + ".W");
  Mat& dU = g.at(pre + ".U");
  Mat& db = g.at(pre + ".b");

  const Eigen::Index n = c.x.rows();
  Mat dx = Mat::Zero(n, c.x.cols());
  Vec dh_next = Vec::Zero(H), dc_next = Vec::Zero(H);
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    Vec dh = d_h.row(t).transpose() + dh_next;
    Vec dc = dc_next;
    Vec dz(4 * H);
    for (int j = 0; j < H; ++j) {
      const double i_ = c.ig(t, j), f_ = c.fg(t, j), g_ = c.gg(t, j),
                   o_ = c.og(t, j), tc = c.tanh_c(t, j);
      double dcj = dc[j] + dh[j] * o_ * (1.0 - tc * tc);
      const double c_prev = t > 0 ? c.c(t - 1, j) : 0.0;
      dz[j] = dcj * g_ * i_ * (1.0 - i_);
      dz[H + j] = dcj * c_prev * f_ * (1.0 - f_);
      dz[2 * H + j] = dcj * i_ * (1.0 - g_ * g_);
      dz[3 * H + j] = dh[j] * tc * o_ * (1.0 - o_);
      dc_next[j] = dcj * f_;
    }
    dW += dz * c.x.row(t);
    if (t > 0) dU += dz * c.h.row(t - 1);
    db += dz;
    dx.row(t) = (W.transpose() * dz).transpose();
    dh_next = t > 0 ? Vec(U.transpose() * dz) : Vec::Zero(H);
  }
  return dx;
}

Vec pool_forward(const Mat& frames, const Mat& w, const Vec& b, const Vec& v,
                 PoolCache& c) {
  if (frames.rows() == 0) {
    throw ValidationError("attentive_stat_pool: empty frame sequence");
  }
  c.frames = frames;
  c.pre_tanh = (frames * w.transpose()).rowwise() + b.transpose();
  c.th = c.pre_tanh.array().tanh();
  c.e = c.th * v;
  const Mat a_row = softmax_rows(c.e.transpose());
  c.a = a_row.row(0).transpose();
  c.mu = frames.transpose() * c.a;
  c.m2 = frames.array().square().matrix().transpose() * c.a;
  c.var = (c.m2 - c.mu.cwiseProduct(c.mu)).cwiseMax(0.0);
  c.sd_raw = c.var.cwiseSqrt();
  c.sd = c.sd_raw.cwiseMax(kStdFloor);
  Vec out(2 * frames.cols());
  out << c.mu, c.sd;
  return out;
}

void pool_backward(const Vec& dout, const PoolCache& c, const Mat& w,
                   const Vec& v, Mat& dw, Mat& db, Mat& dv) {
  const Eigen::Index de = c.frames.cols();
  Vec dmu = dout.head(de);
  Vec dsd = dout.tail(de);
  Vec dvar = Vec::Zero(de);
  for (Eigen::Index j = 0; j < de; ++j) {
    if (c.sd_raw[j] > kStdFloor) {
      dvar[j] = dsd[j] / (2.0 * c.sd_raw[j]);
    }
  }
  const Vec dm2 = dvar;
  dmu -= 2.0 * c.mu.cwiseProduct(dvar);

  Vec da = c.frames * dmu + c.frames.array().square().matrix() * dm2;
  const double dot = da.dot(c.a);
  const Vec de_ = c.a.cwiseProduct((da.array() - dot).matrix());

  for (Eigen::Index f = 0; f < c.frames.rows(); ++f) {
    const Vec sech2 =
        (1.0 - c.th.row(f).transpose().array().square()).matrix();
    const Vec inner = de_[f] * v.cwiseProduct(sech2);
    dw += inner * c.frames.row(f);
    db += inner;
    dv += de_[f] * c.th.row(f).transpose();
  }
  (void)w;
}

Mat perceiver_tokens(const std::map<std::string, Mat>& embeddings,
                     const ModelParams& p, PerceiverCache& c) {
  Eigen::Index total = 0;
  for (const auto& [name, dim] : p.dims.source_dims) {
    auto it = embeddings.find(name);
    if (it == embeddings.end()) continue;
    if (it->second.cols() != dim) {
      throw ValidationError("perceiver: source '" + name + "' has " +
                            std::to_string(it->second.cols()) +
                            " columns, expected " + std::to_string(dim));
    }
    total += it->second.rows();
  }
  if (total == 0) {
    throw ValidationError("perceiver_fuse: no embedding sources supplied");
  }
  c.tokens.resize(total, p.dims.model_dim);
  Eigen::Index offset = 0;
  for (const auto& [name, dim] : p.dims.source_dims) {
    auto it = embeddings.find(name);
    if (it == embeddings.end()) continue;
    const Mat& src = it->second;
    c.source_order.push_back(name);
    c.source_rows.emplace_back(offset, src.rows());
    c.tokens.middleRows(offset, src.rows()) =
        (src * p.at("perceiver.proj." + name + ".W").transpose()).rowwise() +
        p.at("perceiver.proj." + name + ".b").col(0).transpose();
    offset += src.rows();
  }
  return c.tokens;
}

Vec perceiver_forward(const std::map<std::string, Mat>& embeddings,
                      const ModelParams& p, PerceiverCache& c) {
  perceiver_tokens(embeddings, p, c);
  const Mat z1 = block_forward(p.at("perceiver.latent"), c.tokens, p, c.pass1);
  const Mat z2 = block_forward(z1, c.tokens, p, c.pass2);
  return z2.colwise().mean().transpose();
}

void perceiver_backward(const std::map<std::string, Mat>& embeddings,
                        const ModelParams& p, const PerceiverCache& c,
                        const Vec& dout, ParamGrads& g) {
  const Eigen::Index L = p.dims.latent_rows;
  Mat dz2 = (1.0 / double(L)) * Vec::Ones(L) * dout.transpose();
  Mat dtokens = Mat::Zero(c.tokens.rows(), c.tokens.cols());
  const Mat dz1 = block_backward(dz2, c.pass2, c.tokens, p, g, dtokens);
  const Mat dz0 = block_backward(dz1, c.pass1, c.tokens, p, g, dtokens);
  g.at("perceiver.latent") += dz0;

  for (std::size_t s = 0; s < c.source_order.size(); ++s) {
    const std::string& name = c.source_order[s];
    const auto [offset, rows] = c.source_rows[s];
    const Mat& src = embeddings.at(name);
    const Mat dt = dtokens.middleRows(offset, rows);
    g.at("perceiver.proj." + name + ".W") += dt.transpose() * src;
    g.at("perceiver.proj." + name + ".b") +=
        dt.colwise().sum().transpose();
  }
}

}  // namespace

Mat layer_norm_rows(const Mat& x, const Vec& gamma, const Vec& beta) {
  LnCache c;
  return ln_forward(x, gamma, beta, c);
}

Mat cross_attention(const Mat& z, const Mat& x, const Mat& wq, const Mat& wk,
                    const Mat& wv, const Mat& wo) {
  AttnCache c;
  return attn_forward(z, x, wq, wk, wv, wo, c);
}

Vec lstm_encode(const Mat& word_seq, const ModelParams& params) {
  if (word_seq.rows() > 0 && word_seq.cols() != params.dims.word_in) {
    throw ValidationError("lstm_encode: word feature dimension mismatch");
  }
  std::vector<LstmLayerCache> layers;
  Vec h;
  lstm_forward(word_seq, params, layers, h);
  return h;
}

Vec ple_activations(const Vec& utterance, const Mat& edges, int bins) {
  if (utterance.size() != edges.rows()) {
    throw ValidationError("ple_activations: input dimension mismatch");
  }
  Vec act(utterance.size() * bins);
  for (Eigen::Index j = 0; j < utterance.size(); ++j) {
    const double x = utterance[j];
    for (int t = 1; t <= bins; ++t) {
      const double lo = edges(j, t - 1);
      const double hi = edges(j, t);
      double v;
      if (hi > lo) {
        v = std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
      } else {
        v = x >= hi ? 1.0 : 0.0;  // degenerate bin from quantile ties
      }
      act[j * bins + (t - 1)] = v;
    }
  }
  return act;
}

Vec ple_encode(const Vec& utterance, const ModelParams& params) {
  const Mat& edges = params.buffers.at("ple.edges");
  if (edges.hasNaN()) {
    throw ValidationError("ple_encode: bin edges unfitted; run fit_ple_edges");
  }
  const Vec act = ple_activations(utterance, edges, params.dims.ple_bins);
  return params.at("ple.W") * act + params.at("ple.b").col(0);
}

Vec attentive_stat_pool(const Mat& frames, const Mat& w, const Vec& b,
                        const Vec& v) {
  PoolCache c;
  return pool_forward(frames, w, b, v, c);
}

Vec perceiver_fuse(const std::map<std::string, Mat>& embeddings,
                   const ModelParams& params) {
  PerceiverCache c;
  return perceiver_forward(embeddings, params, c);
}

Vec model_forward(const FeatureBundle& bundle, const ModelParams& params,
                  std::shared_ptr<ForwardCache>* cache) {
  const ModelDims& d = params.dims;
  auto c = std::make_shared<ForwardCache>();

  c->has_word = bundle.word_seq.rows() > 0;
  if (c->has_word) {
    if (bundle.word_seq.cols() != d.word_in) {
      throw ValidationError("model_forward: word feature dimension mismatch");
    }
    lstm_forward(bundle.word_seq, params, c->lstm, c->h_w);
  } else {
    c->h_w = Vec::Zero(d.lstm_hidden);
  }

  if (bundle.utterance.size() > 0) {
    if (bundle.utterance.size() != d.utt_in) {
      throw ValidationError("model_forward: utterance dimension mismatch");
    }
    const Mat& edges = params.buffers.at("ple.edges");
    if (edges.hasNaN()) {
      throw ValidationError("model_forward: PLE edges unfitted");
    }
    c->ple_act = ple_activations(bundle.utterance, edges, d.ple_bins);
    c->h_u = params.at("ple.W") * c->ple_act + params.at("ple.b").col(0);
  } else {
    c->h_u = Vec::Zero(d.utt_hidden);
  }

  c->has_emb = false;
  for (const auto& [name, dim] : d.source_dims) {
    if (bundle.embeddings.count(name)) c->has_emb = true;
  }
  if (c->has_emb && d.emb_mode == EmbeddingMode::perceiver) {
    c->emb_out = perceiver_forward(bundle.embeddings, params, c->perc);
  } else if (d.emb_mode == EmbeddingMode::pool) {
    c->emb_out = Vec::Zero(d.emb_out_dim());
    Eigen::Index offset = 0;
    for (const auto& [name, dim] : d.source_dims) {
      auto it = bundle.embeddings.find(name);
      if (it != bundle.embeddings.end() && it->second.rows() > 0) {
        if (it->second.cols() != dim) {
          throw ValidationError("model_forward: source '" + name +
                                "' dimension mismatch");
        }
        c->pools.emplace_back(name, PoolCache{});
        c->emb_out.segment(offset, 2 * dim) = pool_forward(
            it->second, params.at("pool." + name + ".W"),
            params.at("pool." + name + ".b").col(0),
            params.at("pool." + name + ".v").col(0), c->pools.back().second);
      }
      offset += 2 * dim;
    }
  } else {
    c->emb_out = Vec::Zero(d.emb_out_dim());
  }

  c->head_in.resize(d.head_in_dim());
  c->head_in << c->emb_out, c->h_w, c->h_u;
  Vec out = params.at("head.W") * c->head_in + params.at("head.b").col(0);
  if (!out.allFinite()) {
    throw RuntimeFailure("model_forward: non-finite output");
  }
  if (cache) *cache = std::move(c);
  return out;
}

void model_backward(const FeatureBundle& bundle, const ModelParams& params,
                    const ForwardCache& c, const Vec& d_out, ParamGrads& g) {
  const ModelDims& d = params.dims;
  g.at("head.W") += d_out * c.head_in.transpose();
  g.at("head.b") += d_out;
  const Vec dx = params.at("head.W").transpose() * d_out;

  const Vec d_emb = dx.head(d.emb_out_dim());
  const Vec d_hw = dx.segment(d.emb_out_dim(), d.lstm_hidden);
  const Vec d_hu = dx.tail(d.utt_hidden);

  if (bundle.utterance.size() > 0) {
    g.at("ple.W") += d_hu * c.ple_act.transpose();
    g.at("ple.b") += d_hu;
  }

  if (c.has_word) {
    const Eigen::Index n = bundle.word_seq.rows();
    Mat dh_top = Mat::Zero(n, d.lstm_hidden);
    dh_top.row(n - 1) = d_hw.transpose();
    const Mat dh_mid = lstm_layer_backward(c.lstm[1], dh_top, params, 1, g);
    lstm_layer_backward(c.lstm[0], dh_mid, params, 0, g);
  }

  if (c.has_emb && d.emb_mode == EmbeddingMode::perceiver) {
    perceiver_backward(bundle.embeddings, params, c.perc, d_emb, g);
  } else if (d.emb_mode == EmbeddingMode::pool) {
    Eigen::Index offset = 0;
    std::size_t pool_idx = 0;
    for (const auto& [name, dim] : d.source_dims) {
      if (pool_idx < c.pools.size() && c.pools[pool_idx].first == name) {
        pool_backward(d_emb.segment(offset, 2 * dim),
                      c.pools[pool_idx].second, params.at("pool." + name + ".W"),
                      params.at("pool." + name + ".v").col(0),
                      g.at("pool." + name + ".W"), g.at("pool." + name + ".b"),
                      g.at("pool." + name + ".v"));
        ++pool_idx;
      }
      offset += 2 * dim;
    }
  }
}

double weighted_ce(const Vec& logits, const Vec& target, const Vec& weights,
                   Vec* d_logits) {
  if (logits.size() != target.size() || logits.size() != weights.size()) {
    throw ValidationError("weighted_ce: dimension mismatch");
  }
  if (target.minCoeff() < -1e-9 || std::abs(target.sum() - 1.0) > 1e-9) {
    throw ValidationError("weighted_ce: target is not on the simplex");
  }
  if (weights.minCoeff() <= 0.0) {
    throw ValidationError("weighted_ce: weights must be positive");
  }
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  const Vec wq = weights.cwiseProduct(target);
  double loss = 0.0;
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    loss -= wq[k] * (logits[k] - lse);
  }
  if (d_logits) {
    const Vec p = (logits.array() - lse).exp();
    *d_logits = wq.sum() * p - wq;
  }
  return loss;
}

double ccc(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw ValidationError("ccc: length mismatch");
  if (x.size() < 2) throw ValidationError("ccc: need at least 2 points");
  const double n = double(x.size());
  const double mx = x.mean(), my = y.mean();
  const double sxy = (x.array() - mx).cwiseProduct(y.array() - my).sum() / n;
  const double sx2 = (x.array() - mx).square().sum() / n;
  const double sy2 = (y.array() - my).square().sum() / n;
  const double denom = sx2 + sy2 + (mx - my) * (mx - my);
  if (denom == 0.0) return 1.0;  // identical constants
  return 2.0 * sxy / denom;
}

double ccc_loss(const Mat& pred, const Mat& target, Mat* d_pred) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ValidationError("ccc_loss: shape mismatch");
  }
  const double n = double(pred.rows());
  const Eigen::Index cols = pred.cols();
  if (d_pred) d_pred->setZero(pred.rows(), cols);
  double loss = 1.0;
  for (Eigen::Index j = 0; j < cols; ++j) {
    const Vec x = pred.col(j), y = target.col(j);
    const double mx = x.mean(), my = y.mean();
    const double sxy = (x.array() - mx).cwiseProduct(y.array() - my).sum() / n;
    const double sx2 = (x.array() - mx).square().sum() / n;
    const double sy2 = (y.array() - my).square().sum() / n;
    const double d = mx - my;
    const double denom = sx2 + sy2 + d * d;
    const double rho = denom == 0.0 ? 1.0 : 2.0 * sxy / denom;
    loss -= rho / double(cols);
    if (d_pred && denom != 0.0) {
      for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        const double dsxy = (y[i] - my) / n;
        const double ddenom = 2.0 * (x[i] - mx) / n + 2.0 * d / n;
        const double drho = 2.0 * (dsxy * denom - sxy * ddenom) / (denom * denom);
        (*d_pred)(i, j) = -drho / double(cols);
      }
    }
  }
  return loss;
}

}  // namespace mater

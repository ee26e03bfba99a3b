#include "mcsearch/model.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

namespace mcsearch {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;
constexpr std::string_view kCheckpointMagic = "mcsearch-checkpoint 1";

struct LayerNormCache {
  Matrix xhat;
  Eigen::VectorXd inv_std;
};

void layer_norm(const Matrix& x, const RowVector& gamma, const RowVector& beta,
                Matrix& y, LayerNormCache* cache) {
  const auto cols = static_cast<double>(x.cols());
  Eigen::VectorXd mean = x.rowwise().sum() / cols;
  Matrix centered = x.colwise() - mean;
  Eigen::VectorXd var = centered.array().square().rowwise().sum() / cols;
  Eigen::VectorXd inv = (var.array() + kLayerNormEps).rsqrt();
  Matrix xhat = centered.array().colwise() * inv.array();
  y = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
}

// Returns d(input) and accumulates d(gamma), d(beta).
Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache,
                           const RowVector& gamma,
                           Eigen::Map<RowVector> d_gamma,
                           Eigen::Map<RowVector> d_beta) {
  d_gamma += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  d_beta += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * gamma.array();
  const auto cols = static_cast<double>(dy.cols());
  Eigen::VectorXd mean_d = dxhat.rowwise().sum() / cols;
  Eigen::VectorXd mean_dx =
      (dxhat.array() * cache.xhat.array()).rowwise().sum() / cols;
  Matrix dx = dxhat.colwise() - mean_d;
  dx -= (cache.xhat.array().colwise() * mean_dx.array()).matrix();
  return dx.array().colwise() * cache.inv_std.array();
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
}

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf =
      std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// Inverted dropout mask: entries are 0 or 1 / (1 - rate).
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate,
                    SplitMix64& rng) {
  Matrix mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask.data()[i] = rng.uniform_real() < rate ? 0.0 : keep_scale;
  return mask;
}

double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

EncoderConfig EncoderConfig::toy(std::size_t vocab_size, std::uint64_t seed) {
  EncoderConfig c;
  c.layers = 2;
  c.heads = 2;
  c.hidden = 16;
  c.ffn = 32;
  c.max_len = 32;
  c.vocab_size = vocab_size;
  c.dropout = 0.0;
  c.seed = seed;
  return c;
}

void EncoderConfig::validate() const {
  if (heads == 0 || hidden == 0 || ffn == 0 || max_len == 0 || vocab_size == 0)
    throw Error("encoder dimensions must be positive: " + describe());
  if (hidden % heads != 0)
    throw Error("hidden size " + std::to_string(hidden) +
                " is not divisible by " + std::to_string(heads) + " heads");
  if (vocab_size < static_cast<std::size_t>(kNumSpecialTokens))
    throw Error("vocab size cannot hold the special tokens");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw Error("dropout rate must lie in [0, 1)");
}

std::string EncoderConfig::describe() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "layers=" << layers << " heads=" << heads << " hidden=" << hidden
     << " ffn=" << ffn << " max_len=" << max_len
     << " vocab_size=" << vocab_size << " dropout=" << dropout
     << " seed=" << seed;
  return ss.str();
}

struct EncoderModel::SequenceCache {
  struct Layer {
    Matrix x_in;
    Matrix q, k, v;
    std::vector<Matrix> probs;
    Matrix ctx;
    Matrix attn_drop;
    LayerNormCache ln1;
    Matrix y1;
    Matrix pre;
    Matrix act;
    Matrix ffn_drop;
    LayerNormCache ln2;
  };

  std::size_t length = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;
  Matrix emb_drop;
  std::vector<Layer> layers;
  Matrix out;
};

EncoderModel::EncoderModel(const EncoderConfig& config) : config_(config) {
  config_.validate();
  const auto H = config_.hidden, F = config_.ffn;
  tok_emb_ = add_tensor("embeddings.token", config_.vocab_size, H);
  pos_emb_ = add_tensor("embeddings.position", config_.max_len, H);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerSlots s{};
    s.wq = add_tensor(p + "attn.wq", H, H);
    s.bq = add_tensor(p + "attn.bq", 1, H);
    s.wk = add_tensor(p + "attn.wk", H, H);
    s.bk = add_tensor(p + "attn.bk", 1, H);
    s.wv = add_tensor(p + "attn.wv", H, H);
    s.bv = add_tensor(p + "attn.bv", 1, H);
    s.wo = add_tensor(p + "attn.wo", H, H);
    s.bo = add_tensor(p + "attn.bo", 1, H);
    s.ln1_gamma = add_tensor(p + "ln1.gamma", 1, H);
    s.ln1_beta = add_tensor(p + "ln1.beta", 1, H);
    s.w1 = add_tensor(p + "ffn.w1", H, F);
    s.b1 = add_tensor(p + "ffn.b1", 1, F);
    s.w2 = add_tensor(p + "ffn.w2", F, H);
    s.b2 = add_tensor(p + "ffn.b2", 1, H);
    s.ln2_gamma = add_tensor(p + "ln2.gamma", 1, H);
    s.ln2_beta = add_tensor(p + "ln2.beta", 1, H);
    layers_.push_back(s);
  }
  mlm_w_ = add_tensor("mlm_head.weight", H, config_.vocab_size);
  mlm_b_ = add_tensor("mlm_head.bias", 1, config_.vocab_size);
  cls_w_ = add_tensor("cls_head.weight", H, 1);
  cls_b_ = add_tensor("cls_head.bias", 1, 1);
  params_.assign(tensors_.back().offset + tensors_.back().size(), 0.0);
  initialize();
}

std::size_t EncoderModel::add_tensor(std::string name, std::size_t rows,
                                     std::size_t cols) {
  std::size_t offset =
      tensors_.empty() ? 0 : tensors_.back().offset + tensors_.back().size();
  tensors_.push_back({std::move(name), offset, rows, cols});
  return tensors_.size() - 1;
}

void EncoderModel::initialize() {
  SplitMix64 rng(config_.seed);
  for (const auto& t : tensors_) {
    auto v = view(t);
    const bool is_gamma = t.name.ends_with(".gamma");
    const bool is_vector = t.rows == 1;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (is_gamma)
        v.data()[i] = 1.0;
      else if (is_vector)
        v.data()[i] = 0.0;
      else
        v.data()[i] = kInitStd * rng.normal();
    }
  }
}

const TensorInfo& EncoderModel::tensor(std::string_view name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw Error("no tensor named " + std::string(name));
}

Eigen::Map<Matrix> EncoderModel::view(const TensorInfo& t) {
  return {params_.data() + t.offset, static_cast<Eigen::Index>(t.rows),
          static_cast<Eigen::Index>(t.cols)};
}

Eigen::Map<const Matrix> EncoderModel::view(const TensorInfo& t) const {
  return {params_.data() + t.offset, static_cast<Eigen::Index>(t.rows),
          static_cast<Eigen::Index>(t.cols)};
}

void EncoderModel::run_forward(const EncodedSequence& seq, std::size_t length,
                               SplitMix64* dropout_rng, SequenceCache& cache,
                               bool keep) const {
  if (seq.ids.size() != seq.attention_mask.size())
    throw Error("sequence ids and attention mask differ in length");
  if (length > config_.max_len || length > seq.ids.size())
    throw Error("sequence length " + std::to_string(length) +
                " exceeds max_len " + std::to_string(config_.max_len));
  if (length == 0) throw Error("empty sequence");
  const auto T = static_cast<Eigen::Index>(length);
  const auto H = static_cast<Eigen::Index>(config_.hidden);
  const auto heads = static_cast<Eigen::Index>(config_.heads);
  const Eigen::Index dh = H / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool drop = dropout_rng && config_.dropout > 0.0;

  bool attended = false;
  for (std::size_t t = 0; t < length; ++t) attended |= seq.attention_mask[t] != 0;
  if (!attended) throw Error("sequence has no attended position");

  cache.length = length;
  cache.ids.assign(seq.ids.begin(), seq.ids.begin() + T);
  cache.mask.assign(seq.attention_mask.begin(),
                    seq.attention_mask.begin() + T);

  auto tok = view(tensors_[tok_emb_]);
  auto pos = view(tensors_[pos_emb_]);
  Matrix x(T, H);
  for (Eigen::Index t = 0; t < T; ++t) {
    TokenId id = cache.ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size)
      throw Error("token id " + std::to_string(id) + " outside vocabulary");
    x.row(t) = tok.row(id) + pos.row(t);
  }
  if (drop) {
    cache.emb_drop = dropout_mask(T, H, config_.dropout, *dropout_rng);
    x.array() *= cache.emb_drop.array();
  }

  cache.layers.resize(keep ? config_.layers : 0);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const auto& s = layers_[l];
    SequenceCache::Layer local;
    auto& c = keep ? cache.layers[l] : local;
    c.x_in = x;
    c.q = (x * view(tensors_[s.wq])).rowwise() + view(tensors_[s.bq]).row(0);
    c.k = (x * view(tensors_[s.wk])).rowwise() + view(tensors_[s.bk]).row(0);
    c.v = (x * view(tensors_[s.wv])).rowwise() + view(tensors_[s.bv]).row(0);
    c.ctx.resize(T, H);
    c.probs.resize(heads);
    for (Eigen::Index h = 0; h < heads; ++h) {
      Matrix scores = c.q.middleCols(h * dh, dh) *
                      c.k.middleCols(h * dh, dh).transpose() * scale;
      Matrix& p = c.probs[h];
      p.setZero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < T; ++j)
          if (cache.mask[j]) mx = std::max(mx, scores(i, j));
        double sum = 0.0;
        for (Eigen::Index j = 0; j < T; ++j) {
          if (!cache.mask[j]) continue;
          p(i, j) = std::exp(scores(i, j) - mx);
          sum += p(i, j);
        }
        p.row(i) /= sum;
      }
      c.ctx.middleCols(h * dh, dh) = p * c.v.middleCols(h * dh, dh);
    }
    Matrix a =
        (c.ctx * view(tensors_[s.wo])).rowwise() + view(tensors_[s.bo]).row(0);
    if (drop) {
      c.attn_drop = dropout_mask(T, H, config_.dropout, *dropout_rng);
      a.array() *= c.attn_drop.array();
    }
    Matrix r1 = x + a;
    layer_norm(r1, view(tensors_[s.ln1_gamma]), view(tensors_[s.ln1_beta]),
               c.y1, &c.ln1);
    c.pre = (c.y1 * view(tensors_[s.w1])).rowwise() +
            view(tensors_[s.b1]).row(0);
    c.act = c.pre.unaryExpr(&gelu);
    Matrix f =
        (c.act * view(tensors_[s.w2])).rowwise() + view(tensors_[s.b2]).row(0);
    if (drop) {
      c.ffn_drop = dropout_mask(T, H, config_.dropout, *dropout_rng);
      f.array() *= c.ffn_drop.array();
    }
    Matrix r2 = c.y1 + f;
    layer_norm(r2, view(tensors_[s.ln2_gamma]), view(tensors_[s.ln2_beta]), x,
               &c.ln2);
  }
  cache.out = std::move(x);
}

void EncoderModel::run_backward(const SequenceCache& cache, const Matrix& d_out,
                                std::vector<double>& grad) const {
  auto gview = [&](std::size_t idx) {
    const auto& t = tensors_[idx];
    return Eigen::Map<Matrix>(grad.data() + t.offset,
                              static_cast<Eigen::Index>(t.rows),
                              static_cast<Eigen::Index>(t.cols));
  };
  auto grow = [&](std::size_t idx) {
    const auto& t = tensors_[idx];
    return Eigen::Map<RowVector>(grad.data() + t.offset,
                                 static_cast<Eigen::Index>(t.cols));
  };
  const auto T = static_cast<Eigen::Index>(cache.length);
  const auto H = static_cast<Eigen::Index>(config_.hidden);
  const auto heads = static_cast<Eigen::Index>(config_.heads);
  const Eigen::Index dh = H / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix dx = d_out;
  for (std::size_t li = config_.layers; li-- > 0;) {
    const auto& s = layers_[li];
    const auto& c = cache.layers[li];

    Matrix d_r2 = layer_norm_backward(dx, c.ln2, view(tensors_[s.ln2_gamma]),
                                      grow(s.ln2_gamma), grow(s.ln2_beta));
    Matrix d_y1 = d_r2;
    Matrix d_f = d_r2;
    if (c.ffn_drop.size()) d_f.array() *= c.ffn_drop.array();
    gview(s.w2).noalias() += c.act.transpose() * d_f;
    grow(s.b2) += d_f.colwise().sum();
    Matrix d_act = d_f * view(tensors_[s.w2]).transpose();
    Matrix d_pre = d_act.array() * c.pre.unaryExpr(&gelu_grad).array();
    gview(s.w1).noalias() += c.y1.transpose() * d_pre;
    grow(s.b1) += d_pre.colwise().sum();
    d_y1.noalias() += d_pre * view(tensors_[s.w1]).transpose();

    Matrix d_r1 = layer_norm_backward(d_y1, c.ln1, view(tensors_[s.ln1_gamma]),
                                      grow(s.ln1_gamma), grow(s.ln1_beta));
    dx = d_r1;
    Matrix d_a = d_r1;
    if (c.attn_drop.size()) d_a.array() *= c.attn_drop.array();
    gview(s.wo).noalias() += c.ctx.transpose() * d_a;
    grow(s.bo) += d_a.colwise().sum();
    Matrix d_ctx = d_a * view(tensors_[s.wo]).transpose();

    Matrix d_q(T, H), d_k(T, H), d_v(T, H);
    for (Eigen::Index h = 0; h < heads; ++h) {
      const Matrix& p = c.probs[h];
      auto d_ctx_h = d_ctx.middleCols(h * dh, dh);
      d_v.middleCols(h * dh, dh) = p.transpose() * d_ctx_h;
      Matrix d_p = d_ctx_h * c.v.middleCols(h * dh, dh).transpose();
      Eigen::VectorXd row_dot = (d_p.array() * p.array()).rowwise().sum();
      Matrix d_s = p.array() * (d_p.colwise() - row_dot).array();
      d_s *= scale;
      d_q.middleCols(h * dh, dh) = d_s * c.k.middleCols(h * dh, dh);
      d_k.middleCols(h * dh, dh) = d_s.transpose() * c.q.middleCols(h * dh, dh);
    }
    gview(s.wq).noalias() += c.x_in.transpose() * d_q;
    grow(s.bq) += d_q.colwise().sum();
    gview(s.wk).noalias() += c.x_in.transpose() * d_k;
    grow(s.bk) += d_k.colwise().sum();
    gview(s.wv).noalias() += c.x_in.transpose() * d_v;
    grow(s.bv) += d_v.colwise().sum();
    dx.noalias() += d_q * view(tensors_[s.wq]).transpose();
    dx.noalias() += d_k * view(tensors_[s.wk]).transpose();
    dx.noalias() += d_v * view(tensors_[s.wv]).transpose();
  }

  if (cache.emb_drop.size()) dx.array() *= cache.emb_drop.array();
  auto d_tok = gview(tok_emb_);
  auto d_pos = gview(pos_emb_);
  for (Eigen::Index t = 0; t < T; ++t) {
    d_tok.row(cache.ids[t]) += dx.row(t);
    d_pos.row(t) += dx.row(t);
  }
}

ForwardOutput EncoderModel::forward(const EncodedSequence& seq,
                                    bool capture_attention) const {
  SequenceCache cache;
  run_forward(seq, seq.size(), nullptr, cache, capture_attention);
  ForwardOutput out;
  out.hidden = std::move(cache.out);
  out.cls = out.hidden.row(0);
  if (capture_attention)
    for (auto& l : cache.layers) out.attention.push_back(std::move(l.probs));
  return out;
}

std::vector<ForwardOutput> EncoderModel::forward(
    std::span<const EncodedSequence> batch) const {
  std::vector<ForwardOutput> out;
  out.reserve(batch.size());
  for (const auto& seq : batch) out.push_back(forward(seq));
  return out;
}

double EncoderModel::classification_logit(const EncodedSequence& seq) const {
  SequenceCache cache;
  run_forward(seq, std::max<std::size_t>(1, seq.content_length()), nullptr,
              cache, false);
  return cache.out.row(0).dot(view(tensors_[cls_w_]).col(0)) +
         params_[tensors_[cls_b_].offset];
}

LossBreakdown EncoderModel::loss(std::span<const TrainingExample> batch,
                                 std::vector<double>* grad,
                                 SplitMix64* dropout_rng) const {
  LossBreakdown out;
  for (const auto& ex : batch) {
    out.mlm_targets += ex.mlm.size();
    if (ex.label) {
      if (*ex.label != 0 && *ex.label != 1)
        throw Error("classification label must be 0 or 1");
      ++out.labelled;
    }
  }
  if (grad) grad->assign(params_.size(), 0.0);

  const auto mlm_w = view(tensors_[mlm_w_]);
  const auto mlm_b = view(tensors_[mlm_b_]).row(0);
  const auto cls_w = view(tensors_[cls_w_]).col(0);
  const double cls_b = params_[tensors_[cls_b_].offset];
  const double mlm_norm = out.mlm_targets ? 1.0 / out.mlm_targets : 0.0;
  const double cls_norm = out.labelled ? 1.0 / out.labelled : 0.0;

  double mlm_sum = 0.0, cls_sum = 0.0;
  for (const auto& ex : batch) {
    if (ex.mlm.empty() && !ex.label) continue;
    std::size_t length = std::max<std::size_t>(1, ex.input.content_length());
    for (const auto& m : ex.mlm) {
      if (m.position >= length || !ex.input.attention_mask[m.position])
        throw Error("MLM target at an unattended position");
      if (m.original < 0 ||
          static_cast<std::size_t>(m.original) >= config_.vocab_size)
        throw Error("MLM target id outside vocabulary");
    }
    SequenceCache cache;
    run_forward(ex.input, length, dropout_rng, cache, grad != nullptr);
    Matrix d_out;
    if (grad) d_out.setZero(cache.out.rows(), cache.out.cols());

    if (!ex.mlm.empty()) {
      const auto m = static_cast<Eigen::Index>(ex.mlm.size());
      Matrix h(m, cache.out.cols());
      for (Eigen::Index r = 0; r < m; ++r)
        h.row(r) = cache.out.row(static_cast<Eigen::Index>(ex.mlm[r].position));
      Matrix logits = (h * mlm_w).rowwise() + mlm_b;
      Matrix d_logits(m, logits.cols());
      for (Eigen::Index r = 0; r < m; ++r) {
        const double mx = logits.row(r).maxCoeff();
        RowVector e = (logits.row(r).array() - mx).exp();
        const double z = e.sum();
        mlm_sum += mx + std::log(z) - logits(r, ex.mlm[r].original);
        if (grad) {
          d_logits.row(r) = e / z;
          d_logits(r, ex.mlm[r].original) -= 1.0;
        }
      }
      if (grad) {
        d_logits *= mlm_norm;
        Eigen::Map<Matrix> g_w(grad->data() + tensors_[mlm_w_].offset,
                               mlm_w.rows(), mlm_w.cols());
        Eigen::Map<RowVector> g_b(grad->data() + tensors_[mlm_b_].offset,
                                  mlm_w.cols());
        g_w.noalias() += h.transpose() * d_logits;
        g_b += d_logits.colwise().sum();
        Matrix d_h = d_logits * mlm_w.transpose();
        for (Eigen::Index r = 0; r < m; ++r)
          d_out.row(static_cast<Eigen::Index>(ex.mlm[r].position)) += d_h.row(r);
      }
    }

    if (ex.label) {
      const double z = cache.out.row(0).dot(cls_w) + cls_b;
      const double y = *ex.label;
      cls_sum += softplus(z) - y * z;
      if (grad) {
        const double dz = (sigmoid(z) - y) * cls_norm;
        Eigen::Map<Eigen::VectorXd> g_w(grad->data() + tensors_[cls_w_].offset,
                                        cls_w.size());
        g_w += cache.out.row(0).transpose() * dz;
        (*grad)[tensors_[cls_b_].offset] += dz;
        d_out.row(0) += cls_w.transpose() * dz;
      }
    }

    if (grad) run_backward(cache, d_out, *grad);
  }
  out.mlm = mlm_sum * mlm_norm;
  out.classification = cls_sum * cls_norm;
  return out;
}

bool EncoderModel::all_finite() const {
  return std::all_of(params_.begin(), params_.end(),
                     [](double v) { return std::isfinite(v); });
}

void EncoderModel::save(std::ostream& out,
                        const std::optional<ArtifactHeader>& header) const {
  static_assert(std::endian::native == std::endian::little,
                "checkpoints are stored little-endian");
  if (header) out << header->line() << '\n';
  out << kCheckpointMagic << '\n';
  out << "config " << config_.describe() << '\n';
  out << "tensors " << tensors_.size() << '\n';
  for (const auto& t : tensors_)
    out << t.name << ' ' << t.offset << ' ' << t.rows << ' ' << t.cols << '\n';
  out << "data " << params_.size() << '\n';
  out.write(reinterpret_cast<const char*>(params_.data()),
            static_cast<std::streamsize>(params_.size() * sizeof(double)));
}

void EncoderModel::save(const std::filesystem::path& path,
                        const std::optional<ArtifactHeader>& header) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  save(out, header);
  if (!out) throw Error("write failed: " + path.string());
}

EncoderModel EncoderModel::load(std::istream& in) {
  std::string line;
  auto next_line = [&]() -> std::string& {
    do {
      if (!std::getline(in, line)) throw Error("truncated checkpoint");
    } while (!line.empty() && line.front() == '#');
    return line;
  };
  if (next_line() != kCheckpointMagic) throw Error("not a checkpoint file");

  EncoderConfig cfg;
  {
    std::istringstream ss(next_line());
    std::string word;
    ss >> word;
    if (word != "config") throw Error("checkpoint: expected config line");
    while (ss >> word) {
      auto eq = word.find('=');
      if (eq == std::string::npos) throw Error("checkpoint: bad config field");
      auto key = word.substr(0, eq);
      auto value = word.substr(eq + 1);
      if (key == "layers") cfg.layers = std::stoull(value);
      else if (key == "heads") cfg.heads = std::stoull(value);
      else if (key == "hidden") cfg.hidden = std::stoull(value);
      else if (key == "ffn") cfg.ffn = std::stoull(value);
      else if (key == "max_len") cfg.max_len = std::stoull(value);
      else if (key == "vocab_size") cfg.vocab_size = std::stoull(value);
      else if (key == "dropout") cfg.dropout = std::stod(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else throw Error("checkpoint: unknown config field " + key);
    }
  }
  EncoderModel model(cfg);
  std::size_t n = 0;
  {
    std::istringstream ss(next_line());
    std::string word;
    if (!(ss >> word >> n) || word != "tensors" || n != model.tensors_.size())
      throw Error("checkpoint: tensor count does not match config");
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::istringstream ss(next_line());
    TensorInfo t;
    if (!(ss >> t.name >> t.offset >> t.rows >> t.cols))
      throw Error("checkpoint: bad tensor index line");
    const auto& expect = model.tensors_[i];
    if (t.name != expect.name || t.offset != expect.offset ||
        t.rows != expect.rows || t.cols != expect.cols)
      throw Error("checkpoint: tensor " + t.name + " does not match config");
  }
  {
    std::istringstream ss(next_line());
    std::string word;
    if (!(ss >> word >> n) || word != "data" || n != model.params_.size())
      throw Error("checkpoint: parameter count does not match config");
  }
  in.read(reinterpret_cast<char*>(model.params_.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(double))
    throw Error("checkpoint: truncated parameter data");
  return model;
}

EncoderModel EncoderModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return load(in);
}

CrossEncoderScorer::CrossEncoderScorer(const EncoderModel& model,
                                       const Vocabulary& vocab)
    : model_(model), vocab_(vocab) {
  if (vocab.size() > model.config().vocab_size)
    throw Error("vocabulary has " + std::to_string(vocab.size()) +
                " tokens but the model only " +
                std::to_string(model.config().vocab_size));
}

double CrossEncoderScorer::score(std::string_view query,
                                 std::string_view code) const {
  return sigmoid(model_.classification_logit(
      encode_pair(query, code, vocab_, model_.config().max_len)));
}

std::vector<double> CrossEncoderScorer::score_codes(
    std::string_view query, std::span<const std::string> codes) const {
  std::vector<double> out;
  out.reserve(codes.size());
  for (const auto& c : codes) out.push_back(score(query, c));
  return out;
}

}  // namespace mcsearch

#include "canopy/dsnn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

#include <Eigen/Dense>

#include "canopy/error.hpp"
#include "canopy/metrics.hpp"

namespace canopy::dsnn {

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
Eigen::Map<const Mat<T>> as_mat(const std::vector<T>& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Mat<T>>(v.data(), rows, cols);
}
template <typename T>
Eigen::Map<const RowVec<T>> as_row(const std::vector<T>& v) {
  return Eigen::Map<const RowVec<T>>(v.data(), static_cast<Eigen::Index>(v.size()));
}

constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

template <typename T>
T gelu(T x) {
  const T u = static_cast<T>(kSqrt2OverPi) * (x + static_cast<T>(kGeluC) * x * x * x);
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  const T k = static_cast<T>(kSqrt2OverPi);
  const T u = k * (x + static_cast<T>(kGeluC) * x * x * x);
  const T t = std::tanh(u);
  return static_cast<T>(0.5) * (static_cast<T>(1) + t) +
         static_cast<T>(0.5) * x * (static_cast<T>(1) - t * t) * k *
             (static_cast<T>(1) + static_cast<T>(3 * kGeluC) * x * x);
}

// 53-bit uniform in [0,1) straight from the engine, so masks do not depend
// on the standard library's distribution implementation.
double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename T>
std::vector<LayerParams<T>> make_stream(const std::vector<int>& dims) {
  std::vector<LayerParams<T>> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    LayerParams<T> l;
    l.in = dims[i];
    l.out = dims[i + 1];
    l.hidden = i + 2 < dims.size();
    l.weight.assign(static_cast<std::size_t>(l.in) * l.out, T(0));
    l.bias.assign(l.out, T(0));
    if (l.hidden) {
      l.gamma.assign(l.out, T(1));
      l.beta.assign(l.out, T(0));
      l.running_mean.assign(l.out, T(0));
      l.running_var.assign(l.out, T(1));
    }
    layers.push_back(std::move(l));
  }
  return layers;
}

template <typename Layers, typename Fn>
void for_each_layer(Layers& hsi, Layers& als, Layers& dec, Fn&& fn) {
  for (auto& l : hsi) fn("hsi", l);
  for (auto& l : als) fn("als", l);
  for (auto& l : dec) fn("decoder", l);
}

template <typename T>
struct LayerCache {
  Mat<T> input;
  Mat<T> xhat;
  RowVec<T> inv_std;
  Mat<T> bn_out;
  Mat<T> mask;  // empty when dropout is off
};

template <typename T>
Mat<T> stream_forward_train(std::vector<LayerParams<T>>& layers, Mat<T> x,
                            std::vector<LayerCache<T>>& caches, const NetworkConfig& cfg,
                            std::mt19937_64* rng) {
  caches.resize(layers.size());
  const auto n = x.rows();
  const T eps = static_cast<T>(cfg.bn_eps);
  const T mom = static_cast<T>(cfg.bn_momentum);
  const double keep = 1.0 - cfg.dropout;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    auto& l = layers[li];
    auto& c = caches[li];
    Mat<T> z = x * as_mat(l.weight, l.out, l.in).transpose();
    z.rowwise() += as_row(l.bias);
    c.input = std::move(x);
    if (!l.hidden) {
      x = std::move(z);
      continue;
    }
    const RowVec<T> mu = z.colwise().mean();
    Mat<T> centered = z.rowwise() - mu;
    const RowVec<T> var = centered.array().square().colwise().mean().matrix();
    c.inv_std = (var.array() + eps).rsqrt().matrix();
    c.xhat = (centered.array().rowwise() * c.inv_std.array()).matrix();
    c.bn_out = ((c.xhat.array().rowwise() * as_row(l.gamma).array()).rowwise() +
                as_row(l.beta).array())
                   .matrix();
    for (int j = 0; j < l.out; ++j) {
      l.running_mean[j] = (T(1) - mom) * l.running_mean[j] + mom * mu[j];
      if (n > 1)
        l.running_var[j] = (T(1) - mom) * l.running_var[j] +
                           mom * var[j] * static_cast<T>(n) / static_cast<T>(n - 1);
    }
    Mat<T> a = c.bn_out.unaryExpr([](T v) { return gelu(v); });
    if (cfg.dropout > 0 && rng) {
      c.mask.resize(a.rows(), a.cols());
      const T scale = static_cast<T>(1.0 / keep);
      for (Eigen::Index i = 0; i < c.mask.size(); ++i)
        c.mask.data()[i] = uniform01(*rng) < keep ? scale : T(0);
      a.array() *= c.mask.array();
    } else {
      c.mask.resize(0, 0);
    }
    x = std::move(a);
  }
  return x;
}

// Writes parameter gradients starting at grads[slot] and returns d(input).
template <typename T>
Mat<T> stream_backward(const std::vector<LayerParams<T>>& layers,
                       const std::vector<LayerCache<T>>& caches, Mat<T> grad,
                       Gradients<T>& grads, std::size_t slot) {
  std::vector<std::size_t> slots(layers.size());
  for (std::size_t li = 0; li < layers.size(); ++li) {
    slots[li] = slot;
    slot += layers[li].hidden ? 4 : 2;
  }
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& l = layers[li];
    const auto& c = caches[li];
    const auto s = slots[li];
    Mat<T> dz;
    if (l.hidden) {
      if (c.mask.size() > 0) grad.array() *= c.mask.array();
      Mat<T> dy = (grad.array() * c.bn_out.unaryExpr([](T v) { return gelu_grad(v); }).array())
                      .matrix();
      Eigen::Map<RowVec<T>>(grads[s + 2].data(), l.out) =
          (dy.array() * c.xhat.array()).colwise().sum().matrix();
      Eigen::Map<RowVec<T>>(grads[s + 3].data(), l.out) = dy.colwise().sum();
      const Mat<T> dxhat = (dy.array().rowwise() * as_row(l.gamma).array()).matrix();
      const T n = static_cast<T>(dxhat.rows());
      const RowVec<T> sum_dxhat = dxhat.colwise().sum();
      const RowVec<T> sum_dxhat_xhat = (dxhat.array() * c.xhat.array()).colwise().sum().matrix();
      dz = ((dxhat.array() * n).rowwise() - sum_dxhat.array()).matrix();
      dz.array() -= c.xhat.array().rowwise() * sum_dxhat_xhat.array();
      dz.array().rowwise() *= (c.inv_std.array() / n);
    } else {
      dz = std::move(grad);
    }
    Eigen::Map<Mat<T>>(grads[s].data(), l.out, l.in).noalias() = dz.transpose() * c.input;
    Eigen::Map<RowVec<T>>(grads[s + 1].data(), l.out) = dz.colwise().sum();
    grad = dz * as_mat(l.weight, l.out, l.in);
  }
  return grad;
}

template <typename T>
Mat<T> features_mat(const Features<T>& f) {
  return Eigen::Map<const Mat<T>>(f.data.data(), static_cast<Eigen::Index>(f.rows),
                                  static_cast<Eigen::Index>(f.cols));
}

template <typename T>
void check_batch(const ModelState<T>& s, const Batch<T>& b) {
  if (b.hsi.rows == 0) fail(ErrorKind::Validation, "empty batch");
  if (b.hsi.rows != b.als.rows)
    fail(ErrorKind::Validation, "HSI and ALS batches differ in length");
  if (static_cast<int>(b.hsi.cols) != s.config.hsi_bands() ||
      static_cast<int>(b.als.cols) != s.config.als_bands())
    fail(ErrorKind::Validation,
         "batch feature dims (" + std::to_string(b.hsi.cols) + "," + std::to_string(b.als.cols) +
             ") do not match the network (" + std::to_string(s.config.hsi_bands()) + "," +
             std::to_string(s.config.als_bands()) + ")");
  if (b.hsi.data.size() != b.hsi.rows * b.hsi.cols || b.als.data.size() != b.als.rows * b.als.cols)
    fail(ErrorKind::Validation, "batch storage does not match its shape");
}

// Eval path: one sample at a time with plain sequential sums, so a row's
// output never depends on which other rows share its batch.
template <typename T>
void row_stream_eval(const std::vector<LayerParams<T>>& layers, std::vector<T>& x,
                     const NetworkConfig& cfg, std::vector<T>& scratch) {
  const T eps = static_cast<T>(cfg.bn_eps);
  for (const auto& l : layers) {
    scratch.assign(l.out, T(0));
    for (int o = 0; o < l.out; ++o) {
      const T* w = l.weight.data() + static_cast<std::size_t>(o) * l.in;
      // eight fixed lanes: vectorizable, and still independent of the batch
      T lane[8] = {};
      int k = 0;
      for (; k + 8 <= l.in; k += 8)
        for (int j = 0; j < 8; ++j) lane[j] += w[k + j] * x[k + j];
      for (; k < l.in; ++k) lane[k & 7] += w[k] * x[k];
      T acc = l.bias[o] + (((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7])));
      if (l.hidden) {
        acc = (acc - l.running_mean[o]) / std::sqrt(l.running_var[o] + eps);
        acc = gelu(acc * l.gamma[o] + l.beta[o]);
      }
      scratch[o] = acc;
    }
    x.swap(scratch);
  }
}

template <typename T>
void eval_rows(const ModelState<T>& state, const Batch<T>& batch, std::size_t begin,
               std::size_t end, T* logits) {
  const int classes = state.config.classes();
  std::vector<T> zh, za, scratch;
  for (std::size_t r = begin; r < end; ++r) {
    auto h = batch.hsi.row(r);
    auto a = batch.als.row(r);
    zh.assign(h.begin(), h.end());
    za.assign(a.begin(), a.end());
    row_stream_eval(state.encoder_hsi, zh, state.config, scratch);
    row_stream_eval(state.encoder_als, za, state.config, scratch);
    zh.insert(zh.end(), za.begin(), za.end());
    row_stream_eval(state.decoder, zh, state.config, scratch);
    std::copy(zh.begin(), zh.end(), logits + r * classes);
  }
}

template <typename T>
std::vector<T> eval_logits(const ModelState<T>& state, const Batch<T>& batch, int threads) {
  const std::size_t n = batch.size();
  std::vector<T> logits(n * state.config.classes());
  threads = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (threads == 1) {
    eval_rows(state, batch, 0, n, logits.data());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(n, b + chunk);
      if (b < e) pool.emplace_back([&, b, e] { eval_rows(state, batch, b, e, logits.data()); });
    }
  }
  return logits;
}

template <typename T>
struct FullCache {
  std::vector<LayerCache<T>> hsi, als, dec;
};

template <typename T>
Mat<T> forward_train(ModelState<T>& state, const Batch<T>& batch, std::mt19937_64* rng,
                     FullCache<T>& cache) {
  Mat<T> zh = stream_forward_train(state.encoder_hsi, features_mat(batch.hsi), cache.hsi,
                                   state.config, rng);
  Mat<T> za = stream_forward_train(state.encoder_als, features_mat(batch.als), cache.als,
                                   state.config, rng);
  Mat<T> z(zh.rows(), zh.cols() + za.cols());
  z << zh, za;
  return stream_forward_train(state.decoder, std::move(z), cache.dec, state.config, rng);
}

std::size_t tensors_in(const auto& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.hidden ? 4 : 2;
  return n;
}

}  // namespace

NetworkConfig NetworkConfig::standard(int hsi_bands, int als_bands, int classes) {
  NetworkConfig c;
  c.hsi_dims = {hsi_bands, 256, 128, 64};
  c.als_dims = {als_bands, 128, 128, 64};
  c.decoder_dims = {128, 128, classes};
  return c;
}

void NetworkConfig::validate() const {
  auto check_dims = [](const std::vector<int>& d, const char* what) {
    if (d.size() < 2) fail(ErrorKind::Validation, std::string(what) + " needs at least 2 dims");
    for (int v : d)
      if (v <= 0) fail(ErrorKind::Validation, std::string(what) + " dims must be positive");
  };
  check_dims(hsi_dims, "hsi_dims");
  check_dims(als_dims, "als_dims");
  check_dims(decoder_dims, "decoder_dims");
  if (decoder_dims.front() != hsi_dims.back() + als_dims.back())
    fail(ErrorKind::Validation, "decoder input dim " + std::to_string(decoder_dims.front()) +
                                    " != " + std::to_string(hsi_dims.back()) + " + " +
                                    std::to_string(als_dims.back()));
  if (!(dropout >= 0 && dropout < 1)) fail(ErrorKind::Validation, "dropout must lie in [0,1)");
  if (batch_size < 1) fail(ErrorKind::Validation, "batch_size must be positive");
  if (epochs < 1) fail(ErrorKind::Validation, "epochs must be positive");
  if (!(lr > 0)) fail(ErrorKind::Validation, "lr must be positive");
  if (!(weight_decay >= 0)) fail(ErrorKind::Validation, "weight_decay must be non-negative");
}

template <typename T>
std::vector<ParamTensor<T>> ModelState<T>::parameters() {
  std::vector<ParamTensor<T>> out;
  int idx[3] = {0, 0, 0};
  for_each_layer(encoder_hsi, encoder_als, decoder, [&](const char* stream, LayerParams<T>& l) {
    const int k = stream[0] == 'h' ? 0 : stream[0] == 'a' ? 1 : 2;
    const std::string p = std::string(stream) + "." + std::to_string(idx[k]++) + ".";
    out.push_back({p + "weight", std::span<T>(l.weight), true});
    out.push_back({p + "bias", std::span<T>(l.bias), false});
    if (l.hidden) {
      out.push_back({p + "gamma", std::span<T>(l.gamma), false});
      out.push_back({p + "beta", std::span<T>(l.beta), false});
    }
  });
  return out;
}

template <typename T>
std::vector<ParamTensor<const T>> ModelState<T>::parameters() const {
  auto mut = const_cast<ModelState<T>*>(this)->parameters();
  std::vector<ParamTensor<const T>> out;
  out.reserve(mut.size());
  for (auto& p : mut) out.push_back({p.name, std::span<const T>(p.values), p.decayed});
  return out;
}

template <typename T>
std::size_t ModelState<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.values.size();
  return n;
}

template <typename T>
ModelState<T> init_model(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelState<T> s;
  s.config = cfg;
  s.config.seed = seed;
  s.encoder_hsi = make_stream<T>(cfg.hsi_dims);
  s.encoder_als = make_stream<T>(cfg.als_dims);
  s.decoder = make_stream<T>(cfg.decoder_dims);
  std::mt19937_64 init_rng(seed);
  for_each_layer(s.encoder_hsi, s.encoder_als, s.decoder, [&](const char*, LayerParams<T>& l) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / l.in));
    for (auto& w : l.weight) w = static_cast<T>(dist(init_rng));
  });
  for (const auto& p : s.parameters()) {
    s.adam_m.emplace_back(p.values.size(), T(0));
    s.adam_v.emplace_back(p.values.size(), T(0));
  }
  // Training randomness gets its own stream so it does not shift with layer sizes.
  s.rng.seed(seed ^ 0x9e3779b97f4a7c15ULL);
  return s;
}

template <typename U, typename T>
ModelState<U> cast_model(const ModelState<T>& src) {
  auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
  auto conv_layers = [&](const std::vector<LayerParams<T>>& ls) {
    std::vector<LayerParams<U>> out;
    for (const auto& l : ls)
      out.push_back({l.in, l.out, l.hidden, conv(l.weight), conv(l.bias), conv(l.gamma),
                     conv(l.beta), conv(l.running_mean), conv(l.running_var)});
    return out;
  };
  ModelState<U> d;
  d.config = src.config;
  d.encoder_hsi = conv_layers(src.encoder_hsi);
  d.encoder_als = conv_layers(src.encoder_als);
  d.decoder = conv_layers(src.decoder);
  for (const auto& m : src.adam_m) d.adam_m.push_back(conv(m));
  for (const auto& v : src.adam_v) d.adam_v.push_back(conv(v));
  d.step = src.step;
  d.mode = src.mode;
  d.rng = src.rng;
  return d;
}

template <typename T>
std::vector<T> forward(ModelState<T>& state, const Batch<T>& batch, Mode mode,
                       std::mt19937_64* rng) {
  check_batch(state, batch);
  state.mode = mode;
  if (mode == Mode::Eval) return eval_logits(state, batch, 1);
  FullCache<T> cache;
  Mat<T> logits = forward_train(state, batch, rng, cache);
  return std::vector<T>(logits.data(), logits.data() + logits.size());
}

template <typename T>
T loss_and_gradients(ModelState<T>& state, const Batch<T>& batch, std::span<const int> labels,
                     Gradients<T>& grads, std::mt19937_64& rng) {
  check_batch(state, batch);
  const int classes = state.config.classes();
  if (labels.size() != batch.size()) fail(ErrorKind::Validation, "labels and batch differ in size");
  for (int y : labels)
    if (y < 0 || y >= classes)
      fail(ErrorKind::Validation, "label " + std::to_string(y) + " out of range [0," +
                                      std::to_string(classes) + ")");
  state.mode = Mode::Train;

  FullCache<T> cache;
  Mat<T> logits = forward_train(state, batch, &rng, cache);

  const auto n = logits.rows();
  Mat<T> dlogits(n, classes);
  double loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mx = logits.row(i).maxCoeff();
    T sum = 0;
    for (int k = 0; k < classes; ++k) sum += std::exp(logits(i, k) - mx);
    const T lse = mx + std::log(sum);
    loss += static_cast<double>(lse - logits(i, labels[i]));
    for (int k = 0; k < classes; ++k) dlogits(i, k) = std::exp(logits(i, k) - lse);
    dlogits(i, labels[i]) -= T(1);
  }
  dlogits /= static_cast<T>(n);

  const auto params = state.parameters();
  grads.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) grads[i].assign(params[i].values.size(), T(0));

  const std::size_t hsi_slots = tensors_in(state.encoder_hsi);
  const std::size_t als_slots = tensors_in(state.encoder_als);
  Mat<T> dz = stream_backward(state.decoder, cache.dec, std::move(dlogits), grads,
                              hsi_slots + als_slots);
  const auto d_hsi = state.encoder_hsi.back().out;
  const auto d_als = state.encoder_als.back().out;
  stream_backward(state.encoder_hsi, cache.hsi, Mat<T>(dz.leftCols(d_hsi)), grads, 0);
  stream_backward(state.encoder_als, cache.als, Mat<T>(dz.rightCols(d_als)), grads, hsi_slots);
  return static_cast<T>(loss / static_cast<double>(n));
}

template <typename T>
void adam_step(ModelState<T>& state, const Gradients<T>& grads, double lr_t) {
  auto params = state.parameters();
  if (grads.size() != params.size())
    fail(ErrorKind::Validation, "gradient set does not match the parameter list");
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(c.adam_beta1), b2 = static_cast<T>(c.adam_beta2);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    auto& m = state.adam_m[t];
    auto& v = state.adam_v[t];
    const T wd = p.decayed ? static_cast<T>(c.weight_decay) : T(0);
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const T g = grads[t][i] + wd * p.values[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      p.values[i] -= static_cast<T>(lr_t * mhat / (std::sqrt(vhat) + c.adam_eps));
    }
  }
}

double cosine_lr(int epoch, const NetworkConfig& cfg) {
  return 0.5 * cfg.lr *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / cfg.epochs));
}

template <typename T>
std::vector<T> predict_proba(const ModelState<T>& state, const Batch<T>& pixels, int threads) {
  if (pixels.size() == 0) return {};
  check_batch(state, pixels);
  auto out = eval_logits(state, pixels, threads);
  const int c = state.config.classes();
  for (std::size_t r = 0; r < pixels.size(); ++r) {
    T* row = out.data() + r * c;
    const T mx = *std::max_element(row, row + c);
    T sum = 0;
    for (int k = 0; k < c; ++k) sum += (row[k] = std::exp(row[k] - mx));
    for (int k = 0; k < c; ++k) row[k] /= sum;
  }
  return out;
}

namespace {

Batch<float> gather(const Batch<float>& src, std::span<const std::size_t> idx) {
  Batch<float> b;
  b.hsi.rows = b.als.rows = idx.size();
  b.hsi.cols = src.hsi.cols;
  b.als.cols = src.als.cols;
  b.hsi.data.resize(idx.size() * b.hsi.cols);
  b.als.data.resize(idx.size() * b.als.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto h = src.hsi.row(idx[i]);
    auto a = src.als.row(idx[i]);
    std::copy(h.begin(), h.end(), b.hsi.data.begin() + i * b.hsi.cols);
    std::copy(a.begin(), a.end(), b.als.data.begin() + i * b.als.cols);
  }
  return b;
}

std::pair<double, double> evaluate_split(const ModelState<float>& state, const TrainingData& d) {
  const auto probs = predict_proba(state, d.features, 1);
  const int c = state.config.classes();
  double loss = 0;
  std::vector<int> pred(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const float* row = probs.data() + i * c;
    loss -= std::log(std::max(static_cast<double>(row[d.labels[i]]), 1e-300));
    pred[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  const auto cm = metrics::confusion(d.labels, pred, static_cast<std::size_t>(c));
  return {loss / static_cast<double>(d.size()), metrics::report(cm).macro_f1};
}

}  // namespace

TrainResult train(ModelState<float>& state, const TrainingData& train_set,
                  const TrainingData* val_set) {
  if (train_set.size() == 0) fail(ErrorKind::Validation, "empty training set");
  const auto& cfg = state.config;
  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  Gradients<float> grads;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_t = cosine_lr(epoch, cfg);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(state.rng() % i)]);

    double loss_sum = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const auto batch = gather(train_set.features, idx);
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train_set.labels[idx[i]];
      const float loss = loss_and_gradients(state, batch, labels, grads, state.rng);
      if (!std::isfinite(loss))
        fail(ErrorKind::Numerical, "training loss became non-finite at epoch " +
                                       std::to_string(epoch));
      loss_sum += static_cast<double>(loss) * static_cast<double>(idx.size());
      adam_step(state, grads, lr_t);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_t;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    if (val_set && val_set->size() > 0) {
      auto [vl, vf1] = evaluate_split(state, *val_set);
      rec.val_loss = vl;
      rec.val_macro_f1 = vf1;
    }
    result.history.push_back(rec);
  }
  state.mode = Mode::Eval;
  return result;
}

TrainingData make_training_data(std::span<const geodata::LabeledSample> samples,
                                const geodata::Standardizer& hsi_std,
                                const geodata::Standardizer& als_std) {
  TrainingData d;
  auto& f = d.features;
  f.hsi.rows = f.als.rows = samples.size();
  f.hsi.cols = hsi_std.mean.size();
  f.als.cols = als_std.mean.size();
  f.hsi.data.reserve(samples.size() * f.hsi.cols);
  f.als.data.reserve(samples.size() * f.als.cols);
  for (const auto& s : samples) {
    auto h = hsi_std.apply(s.hsi);
    auto a = als_std.apply(s.als);
    f.hsi.data.insert(f.hsi.data.end(), h.begin(), h.end());
    f.als.data.insert(f.als.data.end(), a.begin(), a.end());
    d.labels.push_back(s.label);
  }
  return d;
}

template struct ModelState<float>;
template struct ModelState<double>;
template ModelState<float> init_model<float>(const NetworkConfig&, std::uint64_t);
template ModelState<double> init_model<double>(const NetworkConfig&, std::uint64_t);
template ModelState<double> cast_model<double, float>(const ModelState<float>&);
template ModelState<float> cast_model<float, double>(const ModelState<double>&);
template ModelState<float> cast_model<float, float>(const ModelState<float>&);
template ModelState<double> cast_model<double, double>(const ModelState<double>&);
template std::vector<float> forward<float>(ModelState<float>&, const Batch<float>&, Mode,
                                           std::mt19937_64*);
template std::vector<double> forward<double>(ModelState<double>&, const Batch<double>&, Mode,
                                             std::mt19937_64*);
template float loss_and_gradients<float>(ModelState<float>&, const Batch<float>&,
                                         std::span<const int>, Gradients<float>&,
                                         std::mt19937_64&);
template double loss_and_gradients<double>(ModelState<double>&, const Batch<double>&,
                                           std::span<const int>, Gradients<double>&,
                                           std::mt19937_64&);
template void adam_step<float>(ModelState<float>&, const Gradients<float>&, double);
template void adam_step<double>(ModelState<double>&, const Gradients<double>&, double);
template std::vector<float> predict_proba<float>(const ModelState<float>&, const Batch<float>&,
                                                 int);
template std::vector<double> predict_proba<double>(const ModelState<double>&,
                                                   const Batch<double>&, int);

}  // namespace canopy::dsnn

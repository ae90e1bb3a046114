#pragma once

// Dual-stream fully connected classifier.
//
// Two encoders (HSI, ALS) map their inputs to latent vectors that are
// concatenated and fed to a decoder producing class logits. Every hidden
// block is linear -> batchnorm -> GELU -> dropout; the last layer of each
// encoder and of the decoder is a plain linear map. Forward and backward
// passes, Adam with coupled L2 weight decay and the cosine schedule are all
// implemented here. The scalar type is a template parameter so gradient
// checks can run the same code in double precision.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "canopy/geodata.hpp"

namespace canopy::dsnn {

struct NetworkConfig {
  std::vector<int> hsi_dims{0, 256, 128, 64};  // front = input bands
  std::vector<int> als_dims{0, 128, 128, 64};
  std::vector<int> decoder_dims{128, 128, 0};  // back = classes
  double dropout = 0.2;
  int batch_size = 512;
  int epochs = 300;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  /// Layer widths used throughout the reference experiments.
  static NetworkConfig standard(int hsi_bands, int als_bands, int classes);

  int hsi_bands() const noexcept { return hsi_dims.front(); }
  int als_bands() const noexcept { return als_dims.front(); }
  int classes() const noexcept { return decoder_dims.back(); }
  void validate() const;
};

enum class Mode { Train, Eval };

template <typename T>
struct LayerParams {
  int in = 0;
  int out = 0;
  bool hidden = false;  // hidden layers carry batchnorm, GELU and dropout
  std::vector<T> weight;  // out x in, row-major
  std::vector<T> bias;
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
};

template <typename T>
struct ParamTensor {
  std::string name;
  std::span<T> values;
  bool decayed;  // weight matrices receive L2 decay; biases and BN affine do not
};

template <typename T>
struct ModelState {
  NetworkConfig config;
  std::vector<LayerParams<T>> encoder_hsi;
  std::vector<LayerParams<T>> encoder_als;
  std::vector<LayerParams<T>> decoder;
  std::vector<std::vector<T>> adam_m;  // mirrors parameters() order
  std::vector<std::vector<T>> adam_v;
  std::int64_t step = 0;
  Mode mode = Mode::Train;
  std::mt19937_64 rng;  // dropout masks and epoch shuffles

  /// Trainable tensors in declared order: hsi, als, decoder; per layer
  /// weight, bias, then gamma and beta for hidden layers.
  std::vector<ParamTensor<T>> parameters();
  std::vector<ParamTensor<const T>> parameters() const;
  std::size_t parameter_count() const;
};

/// Row-major feature block with `rows` samples.
template <typename T>
struct Features {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

template <typename T>
struct Batch {
  Features<T> hsi;
  Features<T> als;
  std::size_t size() const noexcept { return hsi.rows; }
};

template <typename T>
using Gradients = std::vector<std::vector<T>>;  // mirrors parameters() order

/// He-normal weights, zero biases, gamma 1, beta 0, running stats (0, 1).
template <typename T>
ModelState<T> init_model(const NetworkConfig& cfg, std::uint64_t seed);

template <typename U, typename T>
ModelState<U> cast_model(const ModelState<T>& src);

/// Logits, row-major batch x classes. Train mode uses batch statistics,
/// updates running statistics and draws dropout masks from `rng`; eval mode
/// evaluates each row independently with running statistics.
template <typename T>
std::vector<T> forward(ModelState<T>& state, const Batch<T>& batch, Mode mode,
                       std::mt19937_64* rng = nullptr);

/// Mean cross-entropy of a train-mode pass and the gradient of every
/// trainable tensor.
template <typename T>
T loss_and_gradients(ModelState<T>& state, const Batch<T>& batch, std::span<const int> labels,
                     Gradients<T>& grads, std::mt19937_64& rng);

template <typename T>
void adam_step(ModelState<T>& state, const Gradients<T>& grads, double lr_t);

/// 0.5 * lr * (1 + cos(pi * epoch / epochs)).
double cosine_lr(int epoch, const NetworkConfig& cfg);

/// Standardized features plus labels.
struct TrainingData {
  Batch<float> features;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  std::optional<double> val_loss;
  std::optional<double> val_macro_f1;
};

struct TrainResult {
  std::vector<EpochRecord> history;
};

/// Runs cfg.epochs epochs from the current state and keeps the final one.
TrainResult train(ModelState<float>& state, const TrainingData& train_set,
                  const TrainingData* val_set);

/// Softmax probabilities, rows x classes. Rows are independent of batch
/// composition and may be split over `threads`.
template <typename T>
std::vector<T> predict_proba(const ModelState<T>& state, const Batch<T>& pixels, int threads = 1);

/// Standardizes samples with the given standardizers.
TrainingData make_training_data(std::span<const geodata::LabeledSample> samples,
                                const geodata::Standardizer& hsi_std,
                                const geodata::Standardizer& als_std);

// Checkpoint: magic, JSON header length, JSON header, float32 blob
// (parameters in declared order followed by batchnorm running statistics).
struct Checkpoint {
  ModelState<float> state;
  std::optional<geodata::Standardizer> hsi_standardizer;
  std::optional<geodata::Standardizer> als_standardizer;
  std::vector<std::string> classes;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace canopy::dsnn

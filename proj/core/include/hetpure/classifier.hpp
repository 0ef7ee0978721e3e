#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hetpure/attention.hpp"
#include "hetpure/data.hpp"
#include "hetpure/rng.hpp"
#include "hetpure/tensor.hpp"

namespace hetpure {

/// 3x3 same-padding convolution parameters.
struct ConvLayer {
  int in_ch = 0, out_ch = 0;
  std::vector<double> w;  // [out][in][3][3]
  std::vector<double> b;  // [out]

  void init(int in, int out);
  void init_glorot(int in, int out, Rng& rng);
  double& wt(int o, int i, int ky, int kx) {
    return w[((static_cast<std::size_t>(o) * in_ch + i) * 3 + ky) * 3 + kx];
  }
  double wt(int o, int i, int ky, int kx) const {
    return w[((static_cast<std::size_t>(o) * in_ch + i) * 3 + ky) * 3 + kx];
  }
};

struct DenseLayer {
  int in_dim = 0, out_dim = 0;
  std::vector<double> w;  // [out][in]
  std::vector<double> b;  // [out]

  void init(int in, int out);
  void init_glorot(int in, int out, Rng& rng);
};

struct Prediction {
  std::vector<double> logits;
  std::vector<double> probs;
  int label = 0;
};

Prediction prediction_from_logits(const std::vector<double>& logits);

struct ClassifierConfig {
  int in_channels = 1;
  int image_h = 16;
  int image_w = 16;
  std::vector<int> widths = {8, 16, 32, 64};  // one conv block per entry
  int classes = 2;

  int blocks() const { return static_cast<int>(widths.size()); }
  int feature_dim() const;
  void validate() const;
  std::string descriptor() const;
  static ClassifierConfig from_descriptor(const std::string& desc);
};

/// Small block-structured conv net: each block is conv3x3 -> relu -> avgpool2,
/// the relu output is the block's attention tap. Head is a single dense layer
/// over the flattened final pool; its input vector is the penultimate feature.
/// All gradients are hand-derived reverse mode.
class ClassifierModel {
 public:
  ClassifierModel() = default;
  explicit ClassifierModel(ClassifierConfig cfg);  // zero-initialised

  static ClassifierModel initialized(ClassifierConfig cfg, std::uint64_t seed);

  const ClassifierConfig& config() const { return cfg_; }

  Prediction predict(const Tensor& x) const;
  std::pair<Prediction, ActivationStack> forward_with_activations(const Tensor& x) const;

  /// Penultimate (pre-logit) feature vector.
  std::vector<double> features(const Tensor& x) const;

  /// Exact gradient of cross-entropy(label) with respect to the input.
  Tensor input_gradient(const Tensor& x, int label) const;

  double cross_entropy(const Tensor& x, int label) const;

  /// One averaged SGD step over a minibatch; returns mean loss.
  double sgd_step(const Dataset& batch, const std::vector<int>& idx, double lr);

  double accuracy(const Dataset& data) const;

  struct Segment {
    std::string name;
    std::vector<double>* data;
  };
  std::vector<Segment> segments();

  // exposed for gradient tests
  struct Grads;
  struct Trace;
  void forward_trace(const Tensor& x, Trace& tr) const;
  Tensor backward_trace(const Trace& tr, const std::vector<double>& grad_logits,
                        Grads* param_grads) const;

  std::vector<ConvLayer>& conv_layers() { return convs_; }
  DenseLayer& head() { return head_; }

 private:
  ClassifierConfig cfg_;
  std::vector<ConvLayer> convs_;
  DenseLayer head_;
};

struct ClassifierModel::Trace {
  std::vector<Tensor> conv_in;  // input of each conv
  std::vector<Tensor> preact;   // conv output before relu
  std::vector<Tensor> act;      // relu output (attention taps)
  std::vector<Tensor> pooled;   // after avgpool2
  std::vector<double> feat;
  std::vector<double> logits;
};

struct ClassifierModel::Grads {
  std::vector<ConvLayer> convs;  // same shapes, gradient values
  DenseLayer head;
  void init_like(const ClassifierModel& m);
  void accumulate(const Grads& other, double scale);
};

struct TrainReport {
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double final_loss = 0.0;
};

/// Plain seeded SGD, fixed learning rate, deterministic shuffling.
ClassifierModel train_classifier(const Dataset& train, const Dataset& val,
                                 ClassifierConfig cfg, int epochs, double lr,
                                 int batch, std::uint64_t seed,
                                 TrainReport* report = nullptr);

/// Euclidean distance between penultimate features of two inputs.
double feature_distance(const ClassifierModel& model, const Tensor& x1,
                        const Tensor& x2);

}  // namespace hetpure

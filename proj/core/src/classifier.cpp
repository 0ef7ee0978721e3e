#include "hetpure/classifier.hpp"

#include "hetpure/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace hetpure {

int count_classes(const Dataset& data) {
  std::set<int> labels;
  for (const auto& s : data) labels.insert(s.label);
  return static_cast<int>(labels.size());
}

void ConvLayer::init(int in, int out) {
  in_ch = in;
  out_ch = out;
  w.assign(static_cast<std::size_t>(out) * in * 9, 0.0);
  b.assign(out, 0.0);
}

void ConvLayer::init_glorot(int in, int out, Rng& rng) {
  init(in, out);
  int fan_in = in * 9, fan_out = out * 9;
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : w) v = rng.uniform(-bound, bound);
  // slight positive bias keeps rectifier units alive early in training
  for (double& v : b) v = 0.01;
}

void DenseLayer::init(int in, int out) {
  in_dim = in;
  out_dim = out;
  w.assign(static_cast<std::size_t>(out) * in, 0.0);
  b.assign(out, 0.0);
}

void DenseLayer::init_glorot(int in, int out, Rng& rng) {
  init(in, out);
  double bound = std::sqrt(6.0 / (in + out));
  for (double& v : w) v = rng.uniform(-bound, bound);
}

Prediction prediction_from_logits(const std::vector<double>& logits) {
  Prediction p;
  p.logits = logits;
  double max_l = *std::max_element(logits.begin(), logits.end());
  p.probs.resize(logits.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p.probs[i] = std::exp(logits[i] - max_l);
    denom += p.probs[i];
  }
  for (double& v : p.probs) v /= denom;
  p.label = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[p.label]) p.label = static_cast<int>(i);
  return p;
}

int ClassifierConfig::feature_dim() const {
  int h = image_h, w = image_w;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    h /= 2;
    w /= 2;
  }
  return widths.back() * h * w;
}

void ClassifierConfig::validate() const {
  if (in_channels < 1 || classes < 2 || widths.empty())
    throw std::invalid_argument("ClassifierConfig: bad shape");
  int h = image_h, w = image_w;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (h % 2 != 0 || w % 2 != 0)
      throw std::invalid_argument(
          "ClassifierConfig: image size must halve through every block");
    h /= 2;
    w /= 2;
  }
  if (h < 1 || w < 1)
    throw std::invalid_argument("ClassifierConfig: too many blocks for image");
}

std::string ClassifierConfig::descriptor() const {
  std::ostringstream os;
  os << "classifier-v1;relu-tap;in=" << in_channels << "x" << image_h << "x"
     << image_w << ";widths=";
  for (std::size_t i = 0; i < widths.size(); ++i)
    os << (i ? "," : "") << widths[i];
  os << ";classes=" << classes;
  return os.str();
}

ClassifierConfig ClassifierConfig::from_descriptor(const std::string& desc) {
  ClassifierConfig cfg;
  cfg.widths.clear();
  if (desc.rfind("classifier-v1;", 0) != 0)
    throw std::invalid_argument("not a classifier descriptor: " + desc);
  auto grab = [&](const std::string& key) {
    auto pos = desc.find(key + "=");
    if (pos == std::string::npos)
      throw std::invalid_argument("descriptor missing " + key);
    pos += key.size() + 1;
    auto end = desc.find(';', pos);
    return desc.substr(pos, end == std::string::npos ? end : end - pos);
  };
  std::string in = grab("in");
  if (std::sscanf(in.c_str(), "%dx%dx%d", &cfg.in_channels, &cfg.image_h,
                  &cfg.image_w) != 3)
    throw std::invalid_argument("bad descriptor input shape");
  std::stringstream ws(grab("widths"));
  std::string tok;
  while (std::getline(ws, tok, ',')) cfg.widths.push_back(std::stoi(tok));
  cfg.classes = std::stoi(grab("classes"));
  cfg.validate();
  return cfg;
}

using nn::avgpool2_backward;
using nn::avgpool2_forward;
using nn::conv_backward;
using nn::conv_forward;
using nn::relu_backward;
using nn::relu_forward;

ClassifierModel::ClassifierModel(ClassifierConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  int in = cfg_.in_channels;
  for (int wdt : cfg_.widths) {
    ConvLayer L;
    L.init(in, wdt);
    convs_.push_back(std::move(L));
    in = wdt;
  }
  head_.init(cfg_.feature_dim(), cfg_.classes);
}

ClassifierModel ClassifierModel::initialized(ClassifierConfig cfg, std::uint64_t seed) {
  ClassifierModel m(std::move(cfg));
  Rng rng(seed);
  int in = m.cfg_.in_channels;
  for (std::size_t i = 0; i < m.convs_.size(); ++i) {
    m.convs_[i].init_glorot(in, m.cfg_.widths[i], rng);
    in = m.cfg_.widths[i];
  }
  m.head_.init_glorot(m.cfg_.feature_dim(), m.cfg_.classes, rng);
  return m;
}

void ClassifierModel::forward_trace(const Tensor& x, Trace& tr) const {
  if (x.channels != cfg_.in_channels || x.height != cfg_.image_h ||
      x.width != cfg_.image_w)
    throw std::invalid_argument("classifier: input shape " + x.shape_str() +
                                " does not match model");
  const int M = cfg_.blocks();
  tr.conv_in.resize(M);
  tr.preact.resize(M);
  tr.act.resize(M);
  tr.pooled.resize(M);

  Tensor cur = x;
  for (int m = 0; m < M; ++m) {
    tr.conv_in[m] = cur;
    conv_forward(convs_[m], cur, tr.preact[m]);
    relu_forward(tr.preact[m], tr.act[m]);
    avgpool2_forward(tr.act[m], tr.pooled[m]);
    cur = tr.pooled[m];
  }
  tr.feat = cur.data;  // flatten
  tr.logits.assign(head_.out_dim, 0.0);
  for (int o = 0; o < head_.out_dim; ++o) {
    double acc = head_.b[o];
    const double* wr = &head_.w[static_cast<std::size_t>(o) * head_.in_dim];
    for (int i = 0; i < head_.in_dim; ++i) acc += wr[i] * tr.feat[i];
    tr.logits[o] = acc;
  }
  for (double v : tr.logits)
    if (!std::isfinite(v))
      throw std::runtime_error("classifier: non-finite logits");
}

Tensor ClassifierModel::backward_trace(const Trace& tr,
                                       const std::vector<double>& grad_logits,
                                       Grads* pg) const {
  const int M = cfg_.blocks();
  std::vector<double> gfeat(head_.in_dim, 0.0);
  for (int o = 0; o < head_.out_dim; ++o) {
    double g = grad_logits[o];
    if (pg) pg->head.b[o] += g;
    const double* wr = &head_.w[static_cast<std::size_t>(o) * head_.in_dim];
    double* gw = pg ? &pg->head.w[static_cast<std::size_t>(o) * head_.in_dim] : nullptr;
    for (int i = 0; i < head_.in_dim; ++i) {
      if (gw) gw[i] += g * tr.feat[i];
      gfeat[i] += g * wr[i];
    }
  }

  Tensor g = tr.pooled[M - 1];
  g.data = gfeat;  // unflatten
  for (int m = M - 1; m >= 0; --m) {
    Tensor ga = avgpool2_backward(tr.act[m].height, tr.act[m].width, g);
    Tensor gz = relu_backward(tr.preact[m], ga);
    g = conv_backward(convs_[m], tr.conv_in[m], gz, pg ? &pg->convs[m] : nullptr);
  }
  return g;
}

Prediction ClassifierModel::predict(const Tensor& x) const {
  Trace tr;
  forward_trace(x, tr);
  return prediction_from_logits(tr.logits);
}

std::pair<Prediction, ActivationStack> ClassifierModel::forward_with_activations(
    const Tensor& x) const {
  Trace tr;
  forward_trace(x, tr);
  return {prediction_from_logits(tr.logits), std::move(tr.act)};
}

std::vector<double> ClassifierModel::features(const Tensor& x) const {
  Trace tr;
  forward_trace(x, tr);
  return tr.feat;
}

double ClassifierModel::cross_entropy(const Tensor& x, int label) const {
  Trace tr;
  forward_trace(x, tr);
  Prediction p = prediction_from_logits(tr.logits);
  return -std::log(std::max(p.probs[label], 1e-300));
}

Tensor ClassifierModel::input_gradient(const Tensor& x, int label) const {
  Trace tr;
  forward_trace(x, tr);
  Prediction p = prediction_from_logits(tr.logits);
  std::vector<double> gl = p.probs;  // d CE / d logits = probs - onehot
  gl[label] -= 1.0;
  Tensor g = backward_trace(tr, gl, nullptr);
  require_finite(g, "input_gradient");
  return g;
}

void ClassifierModel::Grads::init_like(const ClassifierModel& m) {
  convs.clear();
  for (const auto& c : m.convs_) {
    ConvLayer g;
    g.init(c.in_ch, c.out_ch);
    convs.push_back(std::move(g));
  }
  head.init(m.head_.in_dim, m.head_.out_dim);
}

void ClassifierModel::Grads::accumulate(const Grads& o, double scale) {
  for (std::size_t m = 0; m < convs.size(); ++m) {
    for (std::size_t i = 0; i < convs[m].w.size(); ++i)
      convs[m].w[i] += scale * o.convs[m].w[i];
    for (std::size_t i = 0; i < convs[m].b.size(); ++i)
      convs[m].b[i] += scale * o.convs[m].b[i];
  }
  for (std::size_t i = 0; i < head.w.size(); ++i) head.w[i] += scale * o.head.w[i];
  for (std::size_t i = 0; i < head.b.size(); ++i) head.b[i] += scale * o.head.b[i];
}

double ClassifierModel::sgd_step(const Dataset& data, const std::vector<int>& idx,
                                 double lr) {
  Grads acc;
  acc.init_like(*this);
  double loss = 0.0;
  Trace tr;
  for (int id : idx) {
    const auto& s = data[id];
    forward_trace(s.image, tr);
    Prediction p = prediction_from_logits(tr.logits);
    loss += -std::log(std::max(p.probs[s.label], 1e-300));
    std::vector<double> gl = p.probs;
    gl[s.label] -= 1.0;
    Grads g;
    g.init_like(*this);
    backward_trace(tr, gl, &g);
    acc.accumulate(g, 1.0 / idx.size());
  }
  double step = -lr;
  for (std::size_t m = 0; m < convs_.size(); ++m) {
    for (std::size_t i = 0; i < convs_[m].w.size(); ++i)
      convs_[m].w[i] += step * acc.convs[m].w[i];
    for (std::size_t i = 0; i < convs_[m].b.size(); ++i)
      convs_[m].b[i] += step * acc.convs[m].b[i];
  }
  for (std::size_t i = 0; i < head_.w.size(); ++i) head_.w[i] += step * acc.head.w[i];
  for (std::size_t i = 0; i < head_.b.size(); ++i) head_.b[i] += step * acc.head.b[i];
  return loss / idx.size();
}

double ClassifierModel::accuracy(const Dataset& data) const {
  if (data.empty()) return 0.0;
  int ok = 0;
  for (const auto& s : data)
    if (predict(s.image).label == s.label) ++ok;
  return static_cast<double>(ok) / data.size();
}

std::vector<ClassifierModel::Segment> ClassifierModel::segments() {
  std::vector<Segment> segs;
  for (std::size_t m = 0; m < convs_.size(); ++m) {
    segs.push_back({"conv" + std::to_string(m) + ".w", &convs_[m].w});
    segs.push_back({"conv" + std::to_string(m) + ".b", &convs_[m].b});
  }
  segs.push_back({"head.w", &head_.w});
  segs.push_back({"head.b", &head_.b});
  return segs;
}

ClassifierModel train_classifier(const Dataset& train, const Dataset& val,
                                 ClassifierConfig cfg, int epochs, double lr,
                                 int batch, std::uint64_t seed,
                                 TrainReport* report) {
  if (train.empty()) throw std::invalid_argument("train_classifier: empty dataset");
  if (count_classes(train) < 2)
    throw std::invalid_argument("train_classifier: need at least 2 classes");
  if (batch < 1) throw std::invalid_argument("train_classifier: batch must be >= 1");

  ClassifierModel model = ClassifierModel::initialized(cfg, seed);
  Rng shuffle_rng(mix_seed(seed, 0x5f13ull));
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  double last_loss = 0.0;
  for (int e = 0; e < epochs; ++e) {
    // Fisher-Yates with our own stream, deterministic across platforms
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = shuffle_rng.next_below(i);
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    int nb = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::size_t end = std::min(order.size(), start + batch);
      std::vector<int> idx(order.begin() + start, order.begin() + end);
      epoch_loss += model.sgd_step(train, idx, lr);
      ++nb;
    }
    last_loss = epoch_loss / std::max(nb, 1);
  }

  if (report) {
    report->train_accuracy = model.accuracy(train);
    report->val_accuracy = val.empty() ? 0.0 : model.accuracy(val);
    report->final_loss = last_loss;
  }
  return model;
}

double feature_distance(const ClassifierModel& model, const Tensor& x1,
                        const Tensor& x2) {
  auto f1 = model.features(x1);
  auto f2 = model.features(x2);
  double s = 0.0;
  for (std::size_t i = 0; i < f1.size(); ++i) {
    double d = f1[i] - f2[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace hetpure

#include "hetpure/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hetpure/nn_ops.hpp"

namespace hetpure {

namespace {
constexpr double kLeakySlope = 0.1;
}

void DenoiserNetConfig::validate() const {
  if (channels < 1 || temb_dim < 2 || temb_dim % 2 != 0 || w1 < 1 || w2 < 1)
    throw std::invalid_argument("DenoiserNetConfig: bad shape");
  if (image_h % 4 != 0 || image_w % 4 != 0)
    throw std::invalid_argument(
        "DenoiserNetConfig: image size must be divisible by 4");
}

std::string DenoiserNetConfig::descriptor() const {
  std::ostringstream os;
  os << "denoiser-v1;leaky0.1;in=" << channels << "x" << image_h << "x"
     << image_w << ";w=" << w1 << "," << w2 << ";temb=" << temb_dim;
  return os.str();
}

DenoiserNetConfig DenoiserNetConfig::from_descriptor(const std::string& desc) {
  DenoiserNetConfig cfg;
  if (desc.rfind("denoiser-v1;", 0) != 0)
    throw std::invalid_argument("not a denoiser descriptor: " + desc);
  auto grab = [&](const std::string& key) {
    auto pos = desc.find(";" + key + "=");
    if (pos == std::string::npos)
      throw std::invalid_argument("descriptor missing " + key);
    pos += key.size() + 2;
    auto end = desc.find(';', pos);
    return desc.substr(pos, end == std::string::npos ? end : end - pos);
  };
  std::string in = grab("in");
  if (std::sscanf(in.c_str(), "%dx%dx%d", &cfg.channels, &cfg.image_h,
                  &cfg.image_w) != 3)
    throw std::invalid_argument("bad descriptor input shape");
  std::string w = grab("w");
  if (std::sscanf(w.c_str(), "%d,%d", &cfg.w1, &cfg.w2) != 2)
    throw std::invalid_argument("bad descriptor widths");
  cfg.temb_dim = std::stoi(grab("temb"));
  cfg.validate();
  return cfg;
}

std::vector<double> sinusoidal_embedding(int t, int dim) {
  std::vector<double> e(dim);
  int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * i / std::max(half - 1, 1));
    e[2 * i] = std::sin(t * freq);
    e[2 * i + 1] = std::cos(t * freq);
  }
  return e;
}

DenoiserModel DenoiserModel::analytic(Tensor mu0, double sigma0) {
  if (sigma0 < 0.0)
    throw std::invalid_argument("analytic denoiser: sigma0 must be >= 0");
  DenoiserModel m;
  m.kind_ = Kind::Analytic;
  m.mu0_ = std::move(mu0);
  m.sigma0_ = sigma0;
  return m;
}

DenoiserModel DenoiserModel::learned(DenoiserNetConfig cfg, std::uint64_t seed) {
  cfg.validate();
  DenoiserModel m;
  m.kind_ = Kind::Learned;
  m.net_cfg_ = cfg;
  Rng rng(seed);
  // decoder convs take skip concatenations so a full-resolution path exists
  m.convs_.resize(5);
  m.convs_[0].init_glorot(cfg.channels, cfg.w1, rng);
  m.convs_[1].init_glorot(cfg.w1, cfg.w2, rng);
  m.convs_[2].init_glorot(cfg.w2, cfg.w2, rng);
  m.convs_[3].init_glorot(2 * cfg.w2, cfg.w1, rng);
  m.convs_[4].init(2 * cfg.w1, cfg.channels);  // zero output head: eps_hat = 0 at init
  m.temb_proj_.resize(3);
  m.temb_proj_[0].init_glorot(cfg.temb_dim, cfg.w1, rng);
  m.temb_proj_[1].init_glorot(cfg.temb_dim, cfg.w2, rng);
  m.temb_proj_[2].init_glorot(cfg.temb_dim, cfg.w2, rng);
  return m;
}

namespace {

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  Tensor out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
  return out;
}

Tensor take_channels(const Tensor& t, int from, int count) {
  Tensor out(count, t.height, t.width);
  std::size_t plane = static_cast<std::size_t>(t.height) * t.width;
  std::copy(t.data.begin() + from * plane, t.data.begin() + (from + count) * plane,
            out.data.begin());
  return out;
}

}  // namespace

Tensor DenoiserModel::forward_net(const Tensor& x, int t,
                                  DenoiserTrace* trace) const {
  const auto& cfg = net_cfg_;
  if (x.channels != cfg.channels || x.height != cfg.image_h ||
      x.width != cfg.image_w)
    throw std::invalid_argument("denoiser: input shape " + x.shape_str() +
                                " does not match model");
  auto emb = sinusoidal_embedding(t, cfg.temb_dim);
  auto temb_bias = [&](int level, int out_ch) {
    std::vector<double> bias(out_ch, 0.0);
    const auto& P = temb_proj_[level];
    for (int o = 0; o < out_ch; ++o) {
      double acc = P.b[o];
      const double* wr = &P.w[static_cast<std::size_t>(o) * P.in_dim];
      for (int k = 0; k < P.in_dim; ++k) acc += wr[k] * emb[k];
      bias[o] = acc;
    }
    return bias;
  };

  DenoiserTrace local;
  DenoiserTrace& tr = trace ? *trace : local;
  tr.t = t;
  tr.conv_in.resize(5);
  tr.preact.resize(5);

  Tensor z, a;

  auto conv_block = [&](int idx, const Tensor& in, bool time_bias, bool leaky) {
    tr.conv_in[idx] = in;
    nn::conv_forward(convs_[idx], in, z);
    if (time_bias) {
      auto bias = temb_bias(idx, convs_[idx].out_ch);
      for (int c = 0; c < z.channels; ++c) {
        double b = bias[c];
        for (int y = 0; y < z.height; ++y)
          for (int xx = 0; xx < z.width; ++xx) z.at(c, y, xx) += b;
      }
    }
    tr.preact[idx] = z;
    if (leaky)
      nn::leaky_relu_forward(z, a, kLeakySlope);
    else
      a = z;
    return a;
  };

  Tensor h1 = conv_block(0, x, true, true);          // C -> w1 @ H
  Tensor p1;
  nn::avgpool2_forward(h1, p1);                      // @ H/2
  Tensor h2 = conv_block(1, p1, true, true);         // w1 -> w2
  Tensor p2;
  nn::avgpool2_forward(h2, p2);                      // @ H/4
  Tensor h3 = conv_block(2, p2, true, true);         // w2 -> w2
  Tensor u1;
  nn::upsample2_forward(h3, u1);                     // @ H/2
  Tensor h4 = conv_block(3, concat_channels(u1, h2), false, true);  // 2*w2 -> w1
  Tensor u2;
  nn::upsample2_forward(h4, u2);                     // @ H
  Tensor out = conv_block(4, concat_channels(u2, h1), false, false);  // 2*w1 -> C
  return out;
}

Tensor DenoiserModel::predict_eps(const Tensor& x, int t,
                                  const NoiseSchedule& schedule,
                                  CallCounter* counter,
                                  DenoiserTrace* trace) const {
  if (t < 1 || t > schedule.T)
    throw std::out_of_range("predict_eps: timestep out of range");
  require_finite(x, "predict_eps");
  if (counter) counter->calls += 1;

  if (kind_ == Kind::Analytic) {
    if (trace) {
      trace->t = t;
      trace->conv_in.clear();
      trace->preact.clear();
    }
    require_same_shape(x, mu0_, "predict_eps(analytic)");
    double ab = schedule.alpha_bar(t);
    double k = std::sqrt(1.0 - ab) / (ab * sigma0_ * sigma0_ + 1.0 - ab);
    double c = std::sqrt(ab);
    Tensor out = zeros_like(x);
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = k * (x.data[i] - c * mu0_.data[i]);
    return out;
  }
  return forward_net(x, t, trace);
}

Tensor DenoiserModel::backward(const DenoiserTrace& trace, const Tensor& grad_out,
                               Grads* pg) const {
  if (kind_ == Kind::Analytic)
    throw std::logic_error("backward: analytic model has no parameters");

  auto emb = sinusoidal_embedding(trace.t, net_cfg_.temb_dim);
  const int w1 = net_cfg_.w1, w2 = net_cfg_.w2;

  auto temb_grad = [&](int level, const Tensor& gz) {
    if (!pg) return;
    auto& P = pg->temb_proj[level];
    for (int c = 0; c < gz.channels; ++c) {
      double s = 0.0;
      for (int y = 0; y < gz.height; ++y)
        for (int x = 0; x < gz.width; ++x) s += gz.at(c, y, x);
      P.b[c] += s;
      double* wr = &P.w[static_cast<std::size_t>(c) * P.in_dim];
      for (int k = 0; k < P.in_dim; ++k) wr[k] += s * emb[k];
    }
  };

  // conv4 (linear output) over concat(u2, h1)
  Tensor g = nn::conv_backward(convs_[4], trace.conv_in[4], grad_out,
                               pg ? &pg->convs[4] : nullptr);
  Tensor g_h1_skip = take_channels(g, w1, w1);
  g = nn::upsample2_backward(take_channels(g, 0, w1));
  g = nn::leaky_relu_backward(trace.preact[3], g, kLeakySlope);
  g = nn::conv_backward(convs_[3], trace.conv_in[3], g, pg ? &pg->convs[3] : nullptr);
  Tensor g_h2_skip = take_channels(g, w2, w2);
  g = nn::upsample2_backward(take_channels(g, 0, w2));

  g = nn::leaky_relu_backward(trace.preact[2], g, kLeakySlope);
  temb_grad(2, g);
  g = nn::conv_backward(convs_[2], trace.conv_in[2], g, pg ? &pg->convs[2] : nullptr);
  g = nn::avgpool2_backward(trace.preact[1].height, trace.preact[1].width, g);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += g_h2_skip.data[i];
  g = nn::leaky_relu_backward(trace.preact[1], g, kLeakySlope);
  temb_grad(1, g);
  g = nn::conv_backward(convs_[1], trace.conv_in[1], g, pg ? &pg->convs[1] : nullptr);
  g = nn::avgpool2_backward(trace.preact[0].height, trace.preact[0].width, g);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += g_h1_skip.data[i];
  g = nn::leaky_relu_backward(trace.preact[0], g, kLeakySlope);
  temb_grad(0, g);
  g = nn::conv_backward(convs_[0], trace.conv_in[0], g, pg ? &pg->convs[0] : nullptr);
  return g;
}

Tensor DenoiserModel::input_vjp(const DenoiserTrace& trace, const Tensor& grad_out,
                                const NoiseSchedule& schedule) const {
  if (kind_ == Kind::Analytic) {
    double ab = schedule.alpha_bar(trace.t);
    double k = std::sqrt(1.0 - ab) / (ab * sigma0_ * sigma0_ + 1.0 - ab);
    Tensor g = grad_out;
    for (double& v : g.data) v *= k;
    return g;
  }
  return backward(trace, grad_out, nullptr);
}

void DenoiserModel::Grads::init_like(const DenoiserModel& m) {
  convs.resize(m.convs_.size());
  for (std::size_t i = 0; i < convs.size(); ++i)
    convs[i].init(m.convs_[i].in_ch, m.convs_[i].out_ch);
  temb_proj.resize(m.temb_proj_.size());
  for (std::size_t i = 0; i < temb_proj.size(); ++i)
    temb_proj[i].init(m.temb_proj_[i].in_dim, m.temb_proj_[i].out_dim);
}

std::vector<DenoiserModel::Segment> DenoiserModel::segments() {
  std::vector<Segment> segs;
  if (kind_ == Kind::Analytic) {
    segs.push_back({"mu0", &mu0_.data});
    return segs;
  }
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    segs.push_back({"conv" + std::to_string(i) + ".w", &convs_[i].w});
    segs.push_back({"conv" + std::to_string(i) + ".b", &convs_[i].b});
  }
  for (std::size_t i = 0; i < temb_proj_.size(); ++i) {
    segs.push_back({"temb" + std::to_string(i) + ".w", &temb_proj_[i].w});
    segs.push_back({"temb" + std::to_string(i) + ".b", &temb_proj_[i].b});
  }
  return segs;
}

std::string DenoiserModel::descriptor() const {
  if (kind_ == Kind::Analytic)
    return "denoiser-analytic-v1;sigma0=" + std::to_string(sigma0_);
  return net_cfg_.descriptor();
}

Tensor ddpm_step(const DenoiserModel& model, const Tensor& x_t, int t,
                 const NoiseSchedule& schedule, const Tensor& z,
                 CallCounter* counter, DenoiserTrace* trace) {
  require_same_shape(x_t, z, "ddpm_step");
  Tensor eps = model.predict_eps(x_t, t, schedule, counter, trace);
  double b = schedule.beta(t);
  double inv_sa = 1.0 / std::sqrt(schedule.alpha(t));
  double ec = b / std::sqrt(1.0 - schedule.alpha_bar(t));
  double sig = schedule.sigma(t);
  Tensor out = zeros_like(x_t);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = inv_sa * (x_t.data[i] - ec * eps.data[i]) + sig * z.data[i];
  return out;
}

Tensor ddim_jump(const DenoiserModel& model, const Tensor& x_at, int from_t,
                 int to_t, double sigma, const NoiseSchedule& schedule,
                 const Tensor* z, CallCounter* counter, DenoiserTrace* trace) {
  if (to_t >= from_t)
    throw std::invalid_argument("ddim_jump: need to_t < from_t");
  if (to_t < 0) throw std::invalid_argument("ddim_jump: to_t must be >= 0");
  double ab_to = schedule.alpha_bar(to_t);
  double ab_from = schedule.alpha_bar(from_t);
  double dir_sq = 1.0 - ab_to - sigma * sigma;
  if (dir_sq < 0.0)
    throw std::invalid_argument("ddim_jump: sigma^2 exceeds 1 - abar(to_t)");
  if (sigma > 0.0 && z == nullptr)
    throw std::invalid_argument("ddim_jump: sigma > 0 requires noise");

  Tensor eps = model.predict_eps(x_at, from_t, schedule, counter, trace);
  double c_keep = std::sqrt(ab_to / ab_from);
  double c_eps = std::sqrt(dir_sq) - c_keep * std::sqrt(1.0 - ab_from);
  Tensor out = zeros_like(x_at);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = c_keep * x_at.data[i] + c_eps * eps.data[i];
  if (sigma > 0.0)
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] += sigma * z->data[i];
  return out;
}

namespace {

// flat (param, grad) views over the learned net, in segment order
struct FlatView {
  std::vector<double*> params;
  std::vector<double*> grads;
  std::size_t total = 0;
};

FlatView flatten(DenoiserModel& model, DenoiserModel::Grads& g) {
  FlatView fv;
  auto add = [&](std::vector<double>& p, std::vector<double>& gr) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      fv.params.push_back(&p[i]);
      fv.grads.push_back(&gr[i]);
    }
  };
  auto& convs = model.conv_layers();
  for (std::size_t m = 0; m < convs.size(); ++m) {
    add(convs[m].w, g.convs[m].w);
    add(convs[m].b, g.convs[m].b);
  }
  auto& tembs = model.temb_projections();
  for (std::size_t m = 0; m < tembs.size(); ++m) {
    add(tembs[m].w, g.temb_proj[m].w);
    add(tembs[m].b, g.temb_proj[m].b);
  }
  fv.total = fv.params.size();
  return fv;
}

}  // namespace

DenoiserModel train_denoiser(const Dataset& dataset, const NoiseSchedule& schedule,
                             DenoiserNetConfig cfg, int epochs, double lr,
                             std::uint64_t seed, DenoiserTrainReport* report) {
  if (dataset.empty()) throw std::invalid_argument("train_denoiser: empty dataset");
  DenoiserModel model = DenoiserModel::learned(cfg, seed);
  Rng rng(mix_seed(seed, 0xd13ull));

  // Adam; the zero-initialised output head would starve plain SGD
  const int batch = 8;
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  DenoiserModel::Grads acc;
  acc.init_like(model);
  FlatView fv = flatten(model, acc);
  std::vector<double> m1(fv.total, 0.0), m2(fv.total, 0.0);
  long step = 0;

  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  double last_loss = -1.0;  // unmeasured until an epoch runs
  const double npix = static_cast<double>(cfg.channels) * cfg.image_h * cfg.image_w;
  for (int e = 0; e < epochs; ++e) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = rng.next_below(i);
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    long count = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::size_t end = std::min(order.size(), start + batch);
      for (double* g : fv.grads) *g = 0.0;
      double bloss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const Tensor& x0 = dataset[order[k]].image;
        int t = 1 + static_cast<int>(rng.next_below(schedule.T));
        Tensor eps = rng.normal_like(x0);
        Tensor xt = q_sample(schedule, x0, t, eps);
        DenoiserTrace tr;
        Tensor pred = model.predict_eps(xt, t, schedule, nullptr, &tr);
        Tensor gout = zeros_like(pred);
        double sample_loss = 0.0;
        double w = 1.0 / (end - start);
        for (std::size_t i2 = 0; i2 < pred.data.size(); ++i2) {
          double d = pred.data[i2] - eps.data[i2];
          sample_loss += d * d;
          gout.data[i2] = 2.0 * d / npix * w;
        }
        bloss += sample_loss / npix;
        model.backward(tr, gout, &acc);  // accumulates
      }
      ++step;
      double bc1 = 1.0 - std::pow(beta1, step);
      double bc2 = 1.0 - std::pow(beta2, step);
      for (std::size_t i = 0; i < fv.total; ++i) {
        double g = *fv.grads[i];
        m1[i] = beta1 * m1[i] + (1 - beta1) * g;
        m2[i] = beta2 * m2[i] + (1 - beta2) * g * g;
        *fv.params[i] -= lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + adam_eps);
      }
      epoch_loss += bloss;
      count += static_cast<long>(end - start);
    }
    last_loss = epoch_loss / std::max<long>(count, 1);
  }
  if (report) report->final_loss = last_loss;
  return model;
}

double dsm_loss(const DenoiserModel& model, const Dataset& dataset,
                const NoiseSchedule& schedule, int t, int n_draws,
                std::uint64_t seed) {
  Rng rng(seed);
  double total = 0.0;
  long count = 0;
  for (int n = 0; n < n_draws; ++n) {
    const Tensor& x0 = dataset[rng.next_below(dataset.size())].image;
    Tensor eps = rng.normal_like(x0);
    Tensor xt = q_sample(schedule, x0, t, eps);
    Tensor pred = model.predict_eps(xt, t, schedule);
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      double d = pred.data[i] - eps.data[i];
      total += d * d;
    }
    count += static_cast<long>(pred.data.size());
  }
  return total / count;
}

}  // namespace hetpure

#include "hetpure/nn_ops.hpp"

namespace hetpure::nn {

void conv_forward(const ConvLayer& L, const Tensor& in, Tensor& out) {
  const int h = in.height, w = in.width;
  out = Tensor(L.out_ch, h, w);
  for (int o = 0; o < L.out_ch; ++o) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = L.b[o];
        for (int i = 0; i < L.in_ch; ++i) {
          for (int ky = 0; ky < 3; ++ky) {
            int yy = y + ky - 1;
            if (yy < 0 || yy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              int xx = x + kx - 1;
              if (xx < 0 || xx >= w) continue;
              acc += L.wt(o, i, ky, kx) * in.at(i, yy, xx);
            }
          }
        }
        out.at(o, y, x) = acc;
      }
    }
  }
}

Tensor conv_backward(const ConvLayer& L, const Tensor& in, const Tensor& gout,
                     ConvLayer* grads) {
  const int h = in.height, w = in.width;
  Tensor gin(L.in_ch, h, w);
  for (int o = 0; o < L.out_ch; ++o) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double g = gout.at(o, y, x);
        if (g == 0.0) continue;
        if (grads) grads->b[o] += g;
        for (int i = 0; i < L.in_ch; ++i) {
          for (int ky = 0; ky < 3; ++ky) {
            int yy = y + ky - 1;
            if (yy < 0 || yy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              int xx = x + kx - 1;
              if (xx < 0 || xx >= w) continue;
              if (grads) grads->wt(o, i, ky, kx) += g * in.at(i, yy, xx);
              gin.at(i, yy, xx) += g * L.wt(o, i, ky, kx);
            }
          }
        }
      }
    }
  }
  return gin;
}

void relu_forward(const Tensor& z, Tensor& a) {
  a = z;
  for (double& v : a.data) v = v > 0.0 ? v : 0.0;
}

Tensor relu_backward(const Tensor& z, const Tensor& gout) {
  Tensor g = gout;
  for (std::size_t i = 0; i < g.data.size(); ++i)
    if (!(z.data[i] > 0.0)) g.data[i] = 0.0;
  return g;
}

void leaky_relu_forward(const Tensor& z, Tensor& a, double slope) {
  a = z;
  for (double& v : a.data)
    if (v < 0.0) v *= slope;
}

Tensor leaky_relu_backward(const Tensor& z, const Tensor& gout, double slope) {
  Tensor g = gout;
  for (std::size_t i = 0; i < g.data.size(); ++i)
    if (z.data[i] < 0.0) g.data[i] *= slope;
  return g;
}

void avgpool2_forward(const Tensor& in, Tensor& out) {
  out = Tensor(in.channels, in.height / 2, in.width / 2);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) =
            0.25 * (in.at(c, 2 * y, 2 * x) + in.at(c, 2 * y, 2 * x + 1) +
                    in.at(c, 2 * y + 1, 2 * x) + in.at(c, 2 * y + 1, 2 * x + 1));
}

Tensor avgpool2_backward(int in_h, int in_w, const Tensor& gout) {
  Tensor gin(gout.channels, in_h, in_w);
  for (int c = 0; c < gout.channels; ++c)
    for (int y = 0; y < gout.height; ++y)
      for (int x = 0; x < gout.width; ++x) {
        double g = 0.25 * gout.at(c, y, x);
        gin.at(c, 2 * y, 2 * x) = g;
        gin.at(c, 2 * y, 2 * x + 1) = g;
        gin.at(c, 2 * y + 1, 2 * x) = g;
        gin.at(c, 2 * y + 1, 2 * x + 1) = g;
      }
  return gin;
}

void upsample2_forward(const Tensor& in, Tensor& out) {
  out = Tensor(in.channels, in.height * 2, in.width * 2);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = in.at(c, y / 2, x / 2);
}

Tensor upsample2_backward(const Tensor& gout) {
  Tensor gin(gout.channels, gout.height / 2, gout.width / 2);
  for (int c = 0; c < gout.channels; ++c)
    for (int y = 0; y < gout.height; ++y)
      for (int x = 0; x < gout.width; ++x)
        gin.at(c, y / 2, x / 2) += gout.at(c, y, x);
  return gin;
}

}  // namespace hetpure::nn

#pragma once

#include "hetpure/classifier.hpp"
#include "hetpure/tensor.hpp"

namespace hetpure::nn {

// 3x3 same-padding convolution, stride 1.
void conv_forward(const ConvLayer& L, const Tensor& in, Tensor& out);

// Returns grad wrt input; accumulates weight/bias grads into *grads if given.
Tensor conv_backward(const ConvLayer& L, const Tensor& in, const Tensor& gout,
                     ConvLayer* grads);

void relu_forward(const Tensor& z, Tensor& a);
Tensor relu_backward(const Tensor& z, const Tensor& gout);  // derivative at 0 is 0

void leaky_relu_forward(const Tensor& z, Tensor& a, double slope);
Tensor leaky_relu_backward(const Tensor& z, const Tensor& gout, double slope);

void avgpool2_forward(const Tensor& in, Tensor& out);
Tensor avgpool2_backward(int in_h, int in_w, const Tensor& gout);

void upsample2_forward(const Tensor& in, Tensor& out);  // nearest neighbour
Tensor upsample2_backward(const Tensor& gout);

}  // namespace hetpure::nn

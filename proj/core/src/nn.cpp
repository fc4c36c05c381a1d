// SPDX-License-Identifier: Apache-2.0
#include "smartfreeze/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "smartfreeze/error.hpp"

namespace smartfreeze {

namespace {

std::string layer_context(std::size_t index, const LayerSpec& spec) {
  return "layer " + std::to_string(index) + " (" + to_string(spec.kind) + ")";
}

// Patch matrix of one sample: row p = (oh, ow) holds the C_in*k*k input
// values under the kernel at that position, zero where it overlaps padding.
void im2col(const double* src, std::size_t c_in, std::size_t h, std::size_t w,
            const LayerSpec& s, std::size_t ho, std::size_t wo, double* cols) {
  const std::size_t k = s.kernel;
  const std::size_t q = c_in * k * k;
  for (std::size_t oh = 0; oh < ho; ++oh) {
    for (std::size_t ow = 0; ow < wo; ++ow) {
      double* row = cols + (oh * wo + ow) * q;
      for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t kh = 0; kh < k; ++kh) {
          const std::size_t ih = oh * s.stride + kh;
          for (std::size_t kw = 0; kw < k; ++kw) {
            const std::size_t iw = ow * s.stride + kw;
            const bool inside = ih >= s.pad && ih < h + s.pad && iw >= s.pad && iw < w + s.pad;
            *row++ = inside ? src[(c * h + ih - s.pad) * w + iw - s.pad] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t c_in, std::size_t h, std::size_t w,
                const LayerSpec& s, std::size_t ho, std::size_t wo, double* dst) {
  const std::size_t k = s.kernel;
  const std::size_t q = c_in * k * k;
  for (std::size_t oh = 0; oh < ho; ++oh) {
    for (std::size_t ow = 0; ow < wo; ++ow) {
      const double* row = cols + (oh * wo + ow) * q;
      for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t kh = 0; kh < k; ++kh) {
          const std::size_t ih = oh * s.stride + kh;
          for (std::size_t kw = 0; kw < k; ++kw, ++row) {
            const std::size_t iw = ow * s.stride + kw;
            if (ih >= s.pad && ih < h + s.pad && iw >= s.pad && iw < w + s.pad) {
              dst[(c * h + ih - s.pad) * w + iw - s.pad] += *row;
            }
          }
        }
      }
    }
  }
}

Tensor conv_forward(const Layer& layer, const Tensor& in) {
  const auto& s = layer.spec;
  const std::size_t n = in.dim(0), c_in = in.dim(1), h = in.dim(2),
                    w = in.dim(3);
  const std::size_t k = s.kernel;
  const std::size_t ho = (h + 2 * s.pad - k) / s.stride + 1;
  const std::size_t wo = (w + 2 * s.pad - k) / s.stride + 1;
  const std::size_t q = c_in * k * k, positions = ho * wo;
  Tensor out({n, s.out, ho, wo});
  std::vector<double> cols(positions * q);
  const double* wt = layer.weight.data();
  for (std::size_t b = 0; b < n; ++b) {
    im2col(in.data() + b * c_in * h * w, c_in, h, w, s, ho, wo, cols.data());
    double* y = out.data() + b * s.out * positions;
    for (std::size_t o = 0; o < s.out; ++o) {
      const double* wr = wt + o * q;
      for (std::size_t p = 0; p < positions; ++p) {
        const double* cr = cols.data() + p * q;
        double acc = 0.0;
        for (std::size_t i = 0; i < q; ++i) acc += wr[i] * cr[i];
        y[o * positions + p] = layer.bias[o] + acc;
      }
    }
  }
  return out;
}

// Accumulates weight/bias gradients; fills grad_in when non-null.
void conv_backward(const Layer& layer, const Tensor& in, const Tensor& grad_out,
                   Tensor* grad_w, Tensor* grad_b, Tensor* grad_in) {
  const auto& s = layer.spec;
  const std::size_t n = in.dim(0), c_in = in.dim(1), h = in.dim(2),
                    w = in.dim(3);
  const std::size_t k = s.kernel;
  const std::size_t ho = grad_out.dim(2), wo = grad_out.dim(3);
  const std::size_t q = c_in * k * k, positions = ho * wo;
  std::vector<double> cols(positions * q), gcols(positions * q);
  const double* wt = layer.weight.data();
  for (std::size_t b = 0; b < n; ++b) {
    const double* go = grad_out.data() + b * s.out * positions;
    if (grad_b) {
      for (std::size_t o = 0; o < s.out; ++o) {
        double acc = 0.0;
        for (std::size_t p = 0; p < positions; ++p) acc += go[o * positions + p];
        (*grad_b)[o] += acc;
      }
    }
    if (grad_w) {
      im2col(in.data() + b * c_in * h * w, c_in, h, w, s, ho, wo, cols.data());
      double* gw = grad_w->data();
      for (std::size_t o = 0; o < s.out; ++o) {
        double* gr = gw + o * q;
        for (std::size_t p = 0; p < positions; ++p) {
          const double g = go[o * positions + p];
          const double* cr = cols.data() + p * q;
          for (std::size_t i = 0; i < q; ++i) gr[i] += g * cr[i];
        }
      }
    }
    if (grad_in) {
      std::fill(gcols.begin(), gcols.end(), 0.0);
      for (std::size_t p = 0; p < positions; ++p) {
        double* gc = gcols.data() + p * q;
        for (std::size_t o = 0; o < s.out; ++o) {
          const double g = go[o * positions + p];
          const double* wr = wt + o * q;
          for (std::size_t i = 0; i < q; ++i) gc[i] += g * wr[i];
        }
      }
      col2im_add(gcols.data(), c_in, h, w, s, ho, wo, grad_in->data() + b * c_in * h * w);
    }
  }
}

Tensor dense_forward(const Layer& layer, const Tensor& in) {
  const std::size_t n = in.dim(0), fi = layer.spec.in, fo = layer.spec.out;
  Tensor out({n, fo});
  const double* x = in.data();
  const double* wt = layer.weight.data();
  for (std::size_t b = 0; b < n; ++b) {
    const double* row = x + b * fi;
    for (std::size_t o = 0; o < fo; ++o) {
      const double* wr = wt + o * fi;
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < fi; ++i) acc += wr[i] * row[i];
      out[b * fo + o] = acc;
    }
  }
  return out;
}

void dense_backward(const Layer& layer, const Tensor& in,
                    const Tensor& grad_out, Tensor* grad_w, Tensor* grad_b,
                    Tensor* grad_in) {
  const std::size_t n = in.dim(0), fi = layer.spec.in, fo = layer.spec.out;
  const double* x = in.data();
  const double* go = grad_out.data();
  const double* wt = layer.weight.data();
  for (std::size_t b = 0; b < n; ++b) {
    const double* row = x + b * fi;
    for (std::size_t o = 0; o < fo; ++o) {
      const double g = go[b * fo + o];
      if (grad_b) (*grad_b)[o] += g;
      if (grad_w) {
        double* gw = grad_w->data() + o * fi;
        for (std::size_t i = 0; i < fi; ++i) gw[i] += g * row[i];
      }
      if (grad_in) {
        double* gi = grad_in->data() + b * fi;
        const double* wr = wt + o * fi;
        for (std::size_t i = 0; i < fi; ++i) gi[i] += g * wr[i];
      }
    }
  }
}

Tensor maxpool_forward(const Tensor& in) {
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor out({n, c, ho, wo});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = in.data() + p * h * w;
    double* dst = out.data() + p * ho * wo;
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        const double* a = src + (2 * oh) * w + 2 * ow;
        dst[oh * wo + ow] = std::max({a[0], a[1], a[w], a[w + 1]});
      }
    }
  }
  return out;
}

Tensor maxpool_backward(const Tensor& in, const Tensor& grad_out) {
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor grad_in(in.shape());
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = in.data() + p * h * w;
    double* dsrc = grad_in.data() + p * h * w;
    const double* g = grad_out.data() + p * ho * wo;
    for (std::size_t oh = 0; oh < ho; ++oh) {
      for (std::size_t ow = 0; ow < wo; ++ow) {
        const std::size_t base = (2 * oh) * w + 2 * ow;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        for (std::size_t q = 1; q < 4; ++q) {
          if (src[cand[q]] > src[best]) best = cand[q];
        }
        dsrc[best] += g[oh * wo + ow];
      }
    }
  }
  return grad_in;
}

Shape batched(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto k : {LayerKind::dense, LayerKind::conv2d, LayerKind::relu,
                 LayerKind::maxpool2x2, LayerKind::flatten}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in = in;
  s.out = out;
  return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in_channels, std::size_t out_channels,
                            std::size_t kernel, std::size_t stride,
                            std::size_t pad) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in = in_channels;
  s.out = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  s.pad = pad;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::maxpool2x2() {
  LayerSpec s;
  s.kind = LayerKind::maxpool2x2;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  return s;
}

bool LayerSpec::same_architecture(const LayerSpec& other) const noexcept {
  return kind == other.kind && in == other.in && out == other.out &&
         kernel == other.kernel && stride == other.stride && pad == other.pad;
}

Shape layer_output_shape(const LayerSpec& spec, const Shape& input) {
  switch (spec.kind) {
    case LayerKind::dense:
      if (input.size() != 1 || input[0] != spec.in) {
        throw ConfigError("dense expects [" + std::to_string(spec.in) +
                          "], got " + shape_to_string(input));
      }
      return {spec.out};
    case LayerKind::conv2d: {
      if (input.size() != 3 || input[0] != spec.in) {
        throw ConfigError("conv2d expects " + std::to_string(spec.in) +
                          " input channels, got " + shape_to_string(input));
      }
      if (spec.kernel == 0 || spec.stride == 0 ||
          input[1] + 2 * spec.pad < spec.kernel ||
          input[2] + 2 * spec.pad < spec.kernel) {
        throw ConfigError("conv2d kernel " + std::to_string(spec.kernel) +
                          " does not fit input " + shape_to_string(input));
      }
      return {spec.out, (input[1] + 2 * spec.pad - spec.kernel) / spec.stride + 1,
              (input[2] + 2 * spec.pad - spec.kernel) / spec.stride + 1};
    }
    case LayerKind::relu:
      return input;
    case LayerKind::maxpool2x2:
      if (input.size() != 3 || input[1] < 2 || input[2] < 2) {
        throw ConfigError("maxpool2x2 expects CxHxW with H,W >= 2, got " +
                          shape_to_string(input));
      }
      return {input[0], input[1] / 2, input[2] / 2};
    case LayerKind::flatten:
      return {shape_size(input)};
  }
  throw ConfigError("unknown layer kind");
}

Layer make_layer(const LayerSpec& spec, Rng& rng) {
  Layer layer{spec, {}, {}};
  std::size_t fan_in = 0;
  if (spec.kind == LayerKind::dense) {
    layer.weight = Tensor({spec.out, spec.in});
    fan_in = spec.in;
  } else if (spec.kind == LayerKind::conv2d) {
    layer.weight = Tensor({spec.out, spec.in, spec.kernel, spec.kernel});
    fan_in = spec.in * spec.kernel * spec.kernel;
  } else {
    return layer;
  }
  layer.bias = Tensor({spec.out});
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : layer.weight.values()) v = (2.0 * uniform01(rng) - 1.0) * bound;
  return layer;
}

std::vector<Shape> Network::output_shapes() const {
  std::vector<Shape> shapes;
  shapes.reserve(layers.size());
  Shape current = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    try {
      current = layer_output_shape(layers[i].spec, current);
    } catch (const ConfigError& e) {
      throw ConfigError(layer_context(i, layers[i].spec) + ": " + e.what());
    }
    shapes.push_back(current);
  }
  return shapes;
}

std::size_t Network::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.parameter_count();
  return n;
}

std::vector<bool> Network::trainable_mask() const {
  std::vector<bool> mask(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) mask[i] = layers[i].spec.trainable;
  return mask;
}

std::size_t Network::num_classes() const {
  auto shapes = output_shapes();
  if (shapes.empty() || shapes.back().size() != 1) {
    throw ConfigError("network does not end in a flat logits layer");
  }
  return shapes.back()[0];
}

Network make_network(Shape input_shape, const std::vector<LayerSpec>& specs,
                     Rng& rng) {
  Network net{std::move(input_shape), {}};
  net.layers.reserve(specs.size());
  for (const auto& s : specs) net.layers.push_back(make_layer(s, rng));
  net.output_shapes();
  return net;
}

std::vector<double> flatten_parameters(const Network& net, std::size_t first,
                                       std::size_t last) {
  std::vector<double> out;
  for (std::size_t i = first; i < last; ++i) {
    const auto& l = net.layers.at(i);
    out.insert(out.end(), l.weight.values().begin(), l.weight.values().end());
    out.insert(out.end(), l.bias.values().begin(), l.bias.values().end());
  }
  return out;
}

void assign_parameters(Network& net, std::size_t first, std::size_t last,
                       std::span<const double> values) {
  std::size_t pos = 0;
  for (std::size_t i = first; i < last; ++i) {
    auto& l = net.layers.at(i);
    for (Tensor* t : {&l.weight, &l.bias}) {
      if (pos + t->size() > values.size()) {
        throw ContractError("assign_parameters: too few values");
      }
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(pos), t->size(),
                  t->data());
      pos += t->size();
    }
  }
  if (pos != values.size()) {
    throw ContractError("assign_parameters: too many values");
  }
}

Activations forward(const Network& net, const Tensor& inputs) {
  if (inputs.rank() == 0) throw ConfigError("forward: empty input tensor");
  const Shape sample(inputs.shape().begin() + 1, inputs.shape().end());
  if (sample != net.input_shape) {
    throw ConfigError("forward: input sample shape " + shape_to_string(sample) +
                      " does not match network input " +
                      shape_to_string(net.input_shape));
  }
  const std::size_t n = inputs.dim(0);
  const auto shapes = net.output_shapes();
  Activations acts;
  acts.reserve(net.layers.size());
  const Tensor* x = &inputs;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& layer = net.layers[i];
    if (layer.spec.has_parameters() && (layer.weight.empty() || layer.bias.empty())) {
      throw ConfigError(layer_context(i, layer.spec) + ": parameters missing");
    }
    switch (layer.spec.kind) {
      case LayerKind::dense:
        acts.push_back(dense_forward(layer, *x));
        break;
      case LayerKind::conv2d:
        acts.push_back(conv_forward(layer, *x));
        break;
      case LayerKind::relu: {
        Tensor y = *x;
        for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
        acts.push_back(std::move(y));
        break;
      }
      case LayerKind::maxpool2x2:
        acts.push_back(maxpool_forward(*x));
        break;
      case LayerKind::flatten:
        acts.push_back(x->reshaped(batched(n, shapes[i])));
        break;
    }
    x = &acts.back();
  }
  if (!acts.empty() && !acts.back().all_finite()) {
    throw InputError("forward produced non-finite logits");
  }
  return acts;
}

std::vector<double> sample_losses(const Tensor& logits,
                                  std::span<const std::size_t> labels) {
  if (logits.rank() != 2) {
    throw ContractError("loss_ce expects N x C logits, got " +
                        shape_to_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) {
    throw InputError("loss_ce: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  }
  std::vector<double> losses(n);
  for (std::size_t b = 0; b < n; ++b) {
    if (labels[b] >= c) {
      throw InputError("label " + std::to_string(labels[b]) +
                       " out of range for " + std::to_string(c) + " classes");
    }
    const double* row = logits.data() + b * c;
    const double mx = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    losses[b] = std::log(sum) + mx - row[labels[b]];
  }
  return losses;
}

double loss_ce(const Tensor& logits, std::span<const std::size_t> labels) {
  const auto losses = sample_losses(logits, labels);
  if (losses.empty()) return 0.0;
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(losses.size());
}

Gradients backward(const Network& net, const Tensor& inputs,
                   const Activations& activations,
                   std::span<const std::size_t> labels,
                   const std::vector<bool>& mask, BackwardStats* stats) {
  const std::size_t count = net.layers.size();
  if (mask.size() != count || activations.size() != count) {
    throw ContractError("backward: mask/activations do not match layer count");
  }
  std::size_t first = count;
  for (std::size_t i = 0; i < count; ++i) {
    if (!mask[i]) continue;
    if (!net.layers[i].spec.has_parameters()) {
      throw ConfigError(layer_context(i, net.layers[i].spec) +
                        ": marked trainable but has no parameters");
    }
    if (first == count) first = i;
  }
  Gradients grads;
  if (first == count) return grads;

  const Tensor& logits = activations.back();
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw InputError("backward: label count mismatch");

  // dL/dlogits of the mean cross-entropy.
  Tensor grad(logits.shape());
  for (std::size_t b = 0; b < n; ++b) {
    if (labels[b] >= c) throw InputError("backward: label out of range");
    const double* row = logits.data() + b * c;
    double* g = grad.data() + b * c;
    const double mx = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      g[j] = std::exp(row[j] - mx);
      sum += g[j];
    }
    for (std::size_t j = 0; j < c; ++j) g[j] /= sum;
    g[labels[b]] -= 1.0;
    for (std::size_t j = 0; j < c; ++j) g[j] /= static_cast<double>(n);
  }
  std::size_t materialised = 1;

  for (std::size_t idx = count; idx-- > first;) {
    const auto& layer = net.layers[idx];
    const Tensor& in = idx == 0 ? inputs : activations[idx - 1];
    const bool need_input_grad = idx > first;
    Tensor grad_in;
    switch (layer.spec.kind) {
      case LayerKind::dense:
      case LayerKind::conv2d: {
        Tensor gw, gb;
        if (mask[idx]) {
          gw = Tensor(layer.weight.shape());
          gb = Tensor(layer.bias.shape());
        }
        if (need_input_grad) grad_in = Tensor(in.shape());
        if (layer.spec.kind == LayerKind::dense) {
          dense_backward(layer, in, grad, mask[idx] ? &gw : nullptr,
                         mask[idx] ? &gb : nullptr,
                         need_input_grad ? &grad_in : nullptr);
        } else {
          conv_backward(layer, in, grad, mask[idx] ? &gw : nullptr,
                        mask[idx] ? &gb : nullptr,
                        need_input_grad ? &grad_in : nullptr);
        }
        if (mask[idx]) {
          grads.emplace(ParamId{idx, ParamId::Role::weight}, std::move(gw));
          grads.emplace(ParamId{idx, ParamId::Role::bias}, std::move(gb));
        }
        break;
      }
      case LayerKind::relu:
        if (need_input_grad) {
          grad_in = grad;
          const Tensor& out = activations[idx];
          for (std::size_t i = 0; i < grad_in.size(); ++i) {
            if (!(out[i] > 0.0)) grad_in[i] = 0.0;
          }
        }
        break;
      case LayerKind::maxpool2x2:
        if (need_input_grad) grad_in = maxpool_backward(in, grad);
        break;
      case LayerKind::flatten:
        if (need_input_grad) grad_in = grad.reshaped(in.shape());
        break;
    }
    if (!need_input_grad) break;
    grad = std::move(grad_in);
    ++materialised;
  }
  if (stats) stats->activation_gradients = materialised;
  return grads;
}

OptimizerState make_optimizer(const Network& net, const SgdConfig& config) {
  OptimizerState opt{config, {}};
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    if (!l.spec.trainable || !l.spec.has_parameters()) continue;
    opt.velocity.emplace(ParamId{i, ParamId::Role::weight}, Tensor(l.weight.shape()));
    opt.velocity.emplace(ParamId{i, ParamId::Role::bias}, Tensor(l.bias.shape()));
  }
  return opt;
}

void sgd_step(Network& net, const Gradients& grads, OptimizerState& opt) {
  const auto& hp = opt.config;
  for (const auto& [id, g] : grads) {
    auto it = opt.velocity.find(id);
    if (it == opt.velocity.end() || id.layer >= net.layers.size()) {
      throw ContractError("sgd_step: gradient for non-trainable parameter at layer " +
                          std::to_string(id.layer));
    }
    auto& layer = net.layers[id.layer];
    Tensor& w = id.role == ParamId::Role::weight ? layer.weight : layer.bias;
    Tensor& v = it->second;
    if (g.shape() != w.shape() || v.shape() != w.shape()) {
      throw ContractError("sgd_step: shape mismatch at layer " +
                          std::to_string(id.layer));
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = hp.momentum * v[i] + g[i] + hp.weight_decay * w[i];
      w[i] -= hp.lr * v[i];
    }
  }
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t c = logits.dim(1);
  const double* r = logits.data() + row * c;
  return static_cast<std::size_t>(std::max_element(r, r + c) - r);
}

}  // namespace smartfreeze

// Copyright (c) 2026 the margin-metric authors.
// Released under the Apache License, Version 2.0; see LICENSE.

#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "ems/data.hpp"

namespace ems {

/// Conditional squeeze-excitation gate over a hidden activation vector.
/// The excite map takes the squeezed embedding with the domain bit appended
/// as one extra input column.
struct CseGateParams {
  Matrix squeeze_w;  // r x C
  Vector squeeze_b;  // r
  Matrix excite_w;   // C x (r + 1)
  Vector excite_b;   // C

  Index channels() const { return excite_w.rows(); }
  Index squeeze_dim() const { return squeeze_w.rows(); }

  void check() const {
    const Index c = channels();
    const Index r = squeeze_dim();
    require(r >= 1 && r <= c, "CseGateParams: need 1 <= r <= C");
    require(squeeze_w.cols() == c && squeeze_b.size() == r &&
                excite_w.cols() == r + 1 && excite_b.size() == c,
            "CseGateParams: inconsistent shapes");
    require_finite(squeeze_w, "squeeze weights");
    require_finite(excite_w, "excite weights");
  }
};

struct LayerParams {
  Matrix w;  // out x in
  Vector b;  // out
  std::optional<CseGateParams> gate;
};

struct EncoderParams {
  std::vector<LayerParams> layers;

  Index input_dim() const { return layers.front().w.cols(); }
  Index output_dim() const { return layers.back().w.rows(); }

  std::vector<int> layer_dims() const {
    std::vector<int> dims;
    dims.push_back(static_cast<int>(input_dim()));
    for (const auto& l : layers) dims.push_back(static_cast<int>(l.w.rows()));
    return dims;
  }

  void check() const {
    require(!layers.empty(), "EncoderParams: need at least one layer");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      require(l.b.size() == l.w.rows(), "EncoderParams: bias shape mismatch");
      require_finite(l.w, "layer weights");
      require_finite(l.b, "layer biases");
      if (i > 0)
        require(l.w.cols() == layers[i - 1].w.rows(),
                "EncoderParams: layer dimensions do not chain");
      if (l.gate) {
        l.gate->check();
        require(l.gate->channels() == l.w.rows(),
                "EncoderParams: gate width does not match layer output");
      }
    }
    require(!layers.back().gate, "EncoderParams: output layer must be ungated");
  }
};

/// Cached batch activations from one forward pass; owns a copy of the
/// parameters it was computed with so backward cannot go stale.
struct ForwardTrace {
  EncoderParams params;
  Matrix inputs;                 // N x D_in
  Vector domain_bits;            // N, 0 photo / 1 sketch
  std::vector<Matrix> pre_act;   // per layer, N x out
  std::vector<Matrix> hidden;    // post-ReLU (hidden layers only)
  std::vector<Matrix> squeeze_pre;
  std::vector<Matrix> squeeze_out;
  std::vector<Matrix> gate;
  std::vector<Matrix> output;    // layer output fed to the next layer
  Matrix embeddings;             // N x D_out
};

struct EncoderBackwardResult {
  EncoderParams param_grads;  // same shapes as the parameters
  Matrix input_grads;         // N x D_in
};

inline double domain_bit(Domain d) { return d == Domain::sketch ? 1.0 : 0.0; }

/// Gate a single feature vector: g = sigmoid(excite([relu(squeeze(f)); bit])),
/// output f * g elementwise.
inline Vector cse_gate(const Vector& features, Domain domain,
                       const CseGateParams& gate) {
  gate.check();
  require(features.size() == gate.channels(), "cse_gate: dimension mismatch");
  Vector z = (gate.squeeze_w * features + gate.squeeze_b).cwiseMax(0.0);
  Vector z_ext(z.size() + 1);
  z_ext << z, domain_bit(domain);
  Vector g = gate.excite_w * z_ext + gate.excite_b;
  g = 1.0 / (1.0 + (-g.array()).exp());
  return features.array() * g.array();
}

/// Batch forward pass: affine + ReLU + CSE gate on every hidden layer, a
/// plain affine output layer.
inline std::pair<Matrix, ForwardTrace> forward(
    const EncoderParams& params, const Matrix& inputs,
    const std::vector<Domain>& domains) {
  params.check();
  require(inputs.cols() == params.input_dim(),
          "forward: input dimension mismatch");
  require(static_cast<Index>(domains.size()) == inputs.rows(),
          "forward: domain count mismatch");
  require_finite(inputs, "forward inputs");

  const Index n = inputs.rows();
  const std::size_t num_layers = params.layers.size();

  ForwardTrace trace;
  trace.params = params;
  trace.inputs = inputs;
  trace.domain_bits.resize(n);
  for (Index i = 0; i < n; ++i)
    trace.domain_bits[i] = domain_bit(domains[static_cast<std::size_t>(i)]);
  trace.pre_act.resize(num_layers);
  trace.hidden.resize(num_layers);
  trace.squeeze_pre.resize(num_layers);
  trace.squeeze_out.resize(num_layers);
  trace.gate.resize(num_layers);
  trace.output.resize(num_layers);

  Matrix x = inputs;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const LayerParams& layer = params.layers[l];
    Matrix a = x * layer.w.transpose();
    a.rowwise() += layer.b.transpose();
    trace.pre_act[l] = a;
    if (l + 1 == num_layers) {
      trace.output[l] = a;
      x = std::move(a);
      break;
    }
    Matrix h = a.cwiseMax(0.0);
    trace.hidden[l] = h;
    if (layer.gate) {
      const CseGateParams& gp = *layer.gate;
      Matrix s = h * gp.squeeze_w.transpose();
      s.rowwise() += gp.squeeze_b.transpose();
      trace.squeeze_pre[l] = s;
      Matrix z = s.cwiseMax(0.0);
      trace.squeeze_out[l] = z;
      Matrix z_ext(n, z.cols() + 1);
      z_ext << z, trace.domain_bits;
      Matrix e = z_ext * gp.excite_w.transpose();
      e.rowwise() += gp.excite_b.transpose();
      Matrix g = (1.0 / (1.0 + (-e.array()).exp())).matrix();
      trace.gate[l] = g;
      h = h.cwiseProduct(g);
    }
    trace.output[l] = h;
    x = std::move(h);
  }
  trace.embeddings = x;
  return {trace.embeddings, trace};
}

inline EncoderParams zeros_like(const EncoderParams& params) {
  EncoderParams g;
  g.layers.reserve(params.layers.size());
  for (const auto& l : params.layers) {
    LayerParams gl;
    gl.w = Matrix::Zero(l.w.rows(), l.w.cols());
    gl.b = Vector::Zero(l.b.size());
    if (l.gate) {
      CseGateParams gg;
      gg.squeeze_w = Matrix::Zero(l.gate->squeeze_w.rows(), l.gate->squeeze_w.cols());
      gg.squeeze_b = Vector::Zero(l.gate->squeeze_b.size());
      gg.excite_w = Matrix::Zero(l.gate->excite_w.rows(), l.gate->excite_w.cols());
      gg.excite_b = Vector::Zero(l.gate->excite_b.size());
      gl.gate = std::move(gg);
    }
    g.layers.push_back(std::move(gl));
  }
  return g;
}

/// Exact reverse-mode pass through affine, ReLU, sigmoid gate and channel
/// product. The domain bit is data and receives no gradient.
inline EncoderBackwardResult backward(const ForwardTrace& trace,
                                      const Matrix& grad_embeddings) {
  const EncoderParams& params = trace.params;
  require(!params.layers.empty(), "backward: empty trace");
  require(grad_embeddings.rows() == trace.inputs.rows() &&
              grad_embeddings.cols() == params.output_dim(),
          "backward: upstream gradient shape does not match the trace");
  require_finite(grad_embeddings, "backward upstream gradient");

  EncoderBackwardResult result;
  result.param_grads = zeros_like(params);
  const std::size_t num_layers = params.layers.size();

  Matrix dout = grad_embeddings;
  for (std::size_t li = num_layers; li-- > 0;) {
    const LayerParams& layer = params.layers[li];
    LayerParams& grads = result.param_grads.layers[li];
    const Matrix& layer_in = li == 0 ? trace.inputs : trace.output[li - 1];

    Matrix da;
    if (li + 1 == num_layers) {
      da = dout;
    } else {
      const Matrix& h = trace.hidden[li];
      Matrix dh;
      if (layer.gate) {
        const CseGateParams& gp = *layer.gate;
        const Matrix& g = trace.gate[li];
        dh = dout.cwiseProduct(g);
        Matrix dgate = dout.cwiseProduct(h);
        Matrix de =
            dgate.cwiseProduct(g.cwiseProduct((1.0 - g.array()).matrix()));
        Matrix z_ext(h.rows(), trace.squeeze_out[li].cols() + 1);
        z_ext << trace.squeeze_out[li], trace.domain_bits;
        grads.gate->excite_w += de.transpose() * z_ext;
        grads.gate->excite_b += de.colwise().sum();
        Matrix dz_ext = de * gp.excite_w;
        Matrix dz = dz_ext.leftCols(trace.squeeze_out[li].cols());
        Matrix ds = dz.cwiseProduct(
            (trace.squeeze_pre[li].array() > 0.0).cast<double>().matrix());
        grads.gate->squeeze_w += ds.transpose() * h;
        grads.gate->squeeze_b += ds.colwise().sum();
        dh += ds * gp.squeeze_w;
      } else {
        dh = dout;
      }
      da = dh.cwiseProduct(
          (trace.pre_act[li].array() > 0.0).cast<double>().matrix());
    }
    grads.w += da.transpose() * layer_in;
    grads.b += da.colwise().sum();
    dout = da * layer.w;
  }
  result.input_grads = std::move(dout);
  return result;
}

/// He-initialized encoder: weights N(0, sqrt(2/fan_in)), zero biases,
/// squeeze width C / ratio (clamped to [1, C-1] where possible).
inline EncoderParams init_params(const std::vector<int>& layer_dims,
                                 int squeeze_ratio, std::uint64_t seed) {
  require(layer_dims.size() >= 2, "init_params: need at least one layer");
  for (int d : layer_dims) require(d >= 1, "init_params: invalid dimension");
  require(squeeze_ratio >= 1, "init_params: squeeze_ratio must be >= 1");

  Rng rng(seed);
  EncoderParams params;
  const std::size_t num_layers = layer_dims.size() - 1;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const Index in = layer_dims[l];
    const Index out = layer_dims[l + 1];
    LayerParams layer;
    layer.w = rng.normal_matrix(out, in, std::sqrt(2.0 / static_cast<double>(in)));
    layer.b = Vector::Zero(out);
    if (l + 1 < num_layers) {
      Index r = out / squeeze_ratio;
      r = std::max<Index>(1, std::min(r, std::max<Index>(1, out - 1)));
      CseGateParams gate;
      gate.squeeze_w =
          rng.normal_matrix(r, out, std::sqrt(2.0 / static_cast<double>(out)));
      gate.squeeze_b = Vector::Zero(r);
      gate.excite_w = rng.normal_matrix(
          out, r + 1, std::sqrt(2.0 / static_cast<double>(r + 1)));
      gate.excite_b = Vector::Zero(out);
      layer.gate = std::move(gate);
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

/// Flat views used by the optimizer; pack and unpack use the same order.
inline Index param_count(const EncoderParams& params) {
  Index n = 0;
  for (const auto& l : params.layers) {
    n += l.w.size() + l.b.size();
    if (l.gate)
      n += l.gate->squeeze_w.size() + l.gate->squeeze_b.size() +
           l.gate->excite_w.size() + l.gate->excite_b.size();
  }
  return n;
}

inline Vector pack(const EncoderParams& params) {
  Vector v(param_count(params));
  Index at = 0;
  auto put = [&](const double* data, Index n) {
    for (Index i = 0; i < n; ++i) v[at++] = data[i];
  };
  for (const auto& l : params.layers) {
    put(l.w.data(), l.w.size());
    put(l.b.data(), l.b.size());
    if (l.gate) {
      put(l.gate->squeeze_w.data(), l.gate->squeeze_w.size());
      put(l.gate->squeeze_b.data(), l.gate->squeeze_b.size());
      put(l.gate->excite_w.data(), l.gate->excite_w.size());
      put(l.gate->excite_b.data(), l.gate->excite_b.size());
    }
  }
  return v;
}

inline void unpack(const Vector& v, EncoderParams& params) {
  require(v.size() == param_count(params), "unpack: size mismatch");
  Index at = 0;
  auto get = [&](double* data, Index n) {
    for (Index i = 0; i < n; ++i) data[i] = v[at++];
  };
  for (auto& l : params.layers) {
    get(l.w.data(), l.w.size());
    get(l.b.data(), l.b.size());
    if (l.gate) {
      get(l.gate->squeeze_w.data(), l.gate->squeeze_w.size());
      get(l.gate->squeeze_b.data(), l.gate->squeeze_b.size());
      get(l.gate->excite_w.data(), l.gate->excite_w.size());
      get(l.gate->excite_b.data(), l.gate->excite_b.size());
    }
  }
}

}  // namespace ems

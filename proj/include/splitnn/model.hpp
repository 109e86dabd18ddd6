#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "splitnn/adam.hpp"
#include "splitnn/kernels.hpp"
#include "splitnn/rng.hpp"
#include "splitnn/tensor.hpp"

namespace splitnn {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class LayerKind : std::uint8_t { conv1d, leaky_relu, maxpool2, flatten, dense, softmax };

struct LayerSpec {
  LayerKind kind = LayerKind::conv1d;
  std::size_t filters = 0;      // conv1d
  std::size_t filter_size = 0;  // conv1d
  std::size_t units = 0;        // dense
  double alpha = 0.01;          // leaky_relu

  static LayerSpec conv(std::size_t filters, std::size_t size) {
    LayerSpec s;
    s.kind = LayerKind::conv1d;
    s.filters = filters;
    s.filter_size = size;
    return s;
  }
  static LayerSpec lrelu(double alpha = 0.01) {
    LayerSpec s;
    s.kind = LayerKind::leaky_relu;
    s.alpha = alpha;
    return s;
  }
  static LayerSpec pool() {
    LayerSpec s;
    s.kind = LayerKind::maxpool2;
    return s;
  }
  static LayerSpec flat() {
    LayerSpec s;
    s.kind = LayerKind::flatten;
    return s;
  }
  static LayerSpec dense(std::size_t units) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.units = units;
    return s;
  }
  static LayerSpec soft() {
    LayerSpec s;
    s.kind = LayerKind::softmax;
    return s;
  }
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::maxpool2: return "maxpool2";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

// Client owns layers [0, split_index), server owns the rest.
struct ModelConfig {
  std::size_t input_length = 128;
  std::size_t num_classes = 5;
  std::size_t split_index = 0;
  std::vector<LayerSpec> layers;
};

using Shape = std::vector<std::size_t>;

// Returns layers.size()+1 shapes; [0] is the input shape.
inline std::vector<Shape> propagate_shapes(const ModelConfig& cfg) {
  std::vector<Shape> shapes;
  shapes.push_back({1, cfg.input_length});
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    const Shape& in = shapes.back();
    const std::string at = "layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + ")";
    switch (l.kind) {
      case LayerKind::conv1d:
        if (in.size() != 2) throw ConfigError(at + ": needs a [channels, length] input, got " + shape_str(in));
        if (l.filters == 0 || l.filter_size == 0 || l.filter_size % 2 == 0)
          throw ConfigError(at + ": filters must be positive and filter size odd");
        shapes.push_back({l.filters, in[1]});
        break;
      case LayerKind::leaky_relu:
        shapes.push_back(in);
        break;
      case LayerKind::maxpool2:
        if (in.size() != 2) throw ConfigError(at + ": needs a 2D input");
        if (in[1] % 2 != 0) throw ConfigError(at + ": length " + std::to_string(in[1]) + " not even");
        shapes.push_back({in[0], in[1] / 2});
        break;
      case LayerKind::flatten:
        if (in.size() != 2) throw ConfigError(at + ": needs a 2D input");
        shapes.push_back({in[0] * in[1]});
        break;
      case LayerKind::dense:
        if (in.size() != 1) throw ConfigError(at + ": needs a flat input, got " + shape_str(in));
        if (l.units == 0) throw ConfigError(at + ": units must be positive");
        shapes.push_back({l.units});
        break;
      case LayerKind::softmax:
        if (in.size() != 1) throw ConfigError(at + ": needs a flat input");
        if (i + 1 != cfg.layers.size()) throw ConfigError(at + ": must be the final layer");
        shapes.push_back(in);
        break;
    }
  }
  return shapes;
}

inline void validate_config(const ModelConfig& cfg) {
  if (cfg.layers.empty()) throw ConfigError("model has no layers");
  if (cfg.input_length == 0) throw ConfigError("input length must be positive");
  std::vector<Shape> shapes = propagate_shapes(cfg);
  if (cfg.layers.back().kind != LayerKind::softmax)
    throw ConfigError("model must end with a softmax output layer");
  for (std::size_t i = 0; i + 1 < cfg.layers.size(); ++i)
    if (cfg.layers[i].kind == LayerKind::softmax) throw ConfigError("softmax before the final layer");
  if (shapes.back()[0] != cfg.num_classes)
    throw ConfigError("output width " + std::to_string(shapes.back()[0]) + " != num_classes " +
                      std::to_string(cfg.num_classes));
  if (cfg.split_index < 1 || cfg.split_index >= cfg.layers.size())
    throw ConfigError("split index " + std::to_string(cfg.split_index) + " out of range");
  // The transmitted tensor is an activation; pooling may trail it on the
  // client side, so walk back over pools to the producing layer.
  std::size_t i = cfg.split_index;
  while (i > 0 && cfg.layers[i - 1].kind == LayerKind::maxpool2) --i;
  if (i == 0 || cfg.layers[i - 1].kind != LayerKind::leaky_relu)
    throw ConfigError("split must fall directly after an activation (pools may follow it)");
}

// conv1 7-wide, conv2 5-wide, both 16 filters; two pools on the client;
// dense head of 128 then the class layer.
inline ModelConfig build_two_layer() {
  ModelConfig cfg;
  cfg.layers = {
      LayerSpec::conv(16, 7), LayerSpec::lrelu(), LayerSpec::pool(),
      LayerSpec::conv(16, 5), LayerSpec::lrelu(), LayerSpec::pool(),
      LayerSpec::flat(),      LayerSpec::dense(128), LayerSpec::lrelu(),
      LayerSpec::dense(5),    LayerSpec::soft(),
  };
  cfg.split_index = 6;
  validate_config(cfg);
  return cfg;
}

// Third conv block after the second pool; the split moves to its activation
// and no third pool is added, so the head geometry is unchanged.
inline ModelConfig build_three_layer() {
  ModelConfig cfg;
  cfg.layers = {
      LayerSpec::conv(16, 7), LayerSpec::lrelu(), LayerSpec::pool(),
      LayerSpec::conv(16, 5), LayerSpec::lrelu(), LayerSpec::pool(),
      LayerSpec::conv(16, 5), LayerSpec::lrelu(),
      LayerSpec::flat(),      LayerSpec::dense(128), LayerSpec::lrelu(),
      LayerSpec::dense(5),    LayerSpec::soft(),
  };
  cfg.split_index = 8;
  validate_config(cfg);
  return cfg;
}

// Depth family for the client-size sweep: k-2 extra conv blocks slot in
// between the second conv activation and the trailing client pool, so the
// pre-pool activation stays 16x64 for every k and the server part is
// identical across the sweep. k=2 reproduces build_two_layer().
inline ModelConfig build_depth_k(std::size_t k) {
  if (k < 2 || k > 8) throw ConfigError("depth must be in [2, 8], got " + std::to_string(k));
  ModelConfig cfg;
  cfg.layers = {
      LayerSpec::conv(16, 7), LayerSpec::lrelu(), LayerSpec::pool(),
      LayerSpec::conv(16, 5), LayerSpec::lrelu(),
  };
  for (std::size_t i = 2; i < k; ++i) {
    cfg.layers.push_back(LayerSpec::conv(16, 5));
    cfg.layers.push_back(LayerSpec::lrelu());
  }
  cfg.layers.push_back(LayerSpec::pool());
  cfg.split_index = cfg.layers.size();
  cfg.layers.push_back(LayerSpec::flat());
  cfg.layers.push_back(LayerSpec::dense(128));
  cfg.layers.push_back(LayerSpec::lrelu());
  cfg.layers.push_back(LayerSpec::dense(5));
  cfg.layers.push_back(LayerSpec::soft());
  validate_config(cfg);
  return cfg;
}

struct LayerParams {
  Tensor w, b;
  bool present() const { return w.size() > 0; }
};

// Each side draws its own layers from a part-tagged stream derived from the
// shared seed. Tying draws to part-relative order (not absolute layer index)
// keeps the server part bit-identical when the client grows deeper, and
// makes split and non-split initialization coincide.
inline std::vector<LayerParams> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  std::vector<Shape> shapes = propagate_shapes(cfg);
  Rng client_stream(mix_seed(seed, 0xC0117EA1ULL));
  Rng server_stream(mix_seed(seed, 0x5E77E401ULL));
  std::vector<LayerParams> params(cfg.layers.size());
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    Rng& stream = i < cfg.split_index ? client_stream : server_stream;
    if (l.kind == LayerKind::conv1d) {
      const std::size_t cin = shapes[i][0];
      params[i].w = Tensor({l.filters, cin, l.filter_size});
      params[i].b = Tensor({l.filters});
      const double fan_in = static_cast<double>(cin * l.filter_size);
      const double fan_out = static_cast<double>(l.filters * l.filter_size);
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : params[i].w.data) v = stream.uniform(-bound, bound);
    } else if (l.kind == LayerKind::dense) {
      const std::size_t in = shapes[i][0];
      params[i].w = Tensor({l.units, in});
      params[i].b = Tensor({l.units});
      const double bound = std::sqrt(6.0 / static_cast<double>(in + l.units));
      for (double& v : params[i].w.data) v = stream.uniform(-bound, bound);
    }
  }
  return params;
}

inline Tensor reshape(const Tensor& t, const Shape& shape) {
  Tensor out(shape);
  require(out.size() == t.size(), "reshape: element count mismatch");
  out.data = t.data;
  return out;
}

// A contiguous run of layers with parameters, gradient accumulators and
// per-batch activation caches. Both whole models and split halves are Models.
struct Model {
  std::vector<LayerSpec> layers;
  std::vector<Shape> shapes;  // layers.size()+1, [0] = part input shape
  std::vector<LayerParams> params;
  std::vector<LayerParams> grads;
  std::vector<AdamState> adam_w, adam_b;

  // per-batch caches
  std::vector<std::vector<Tensor>> input_cache;                // [layer][sample]
  std::vector<std::vector<std::vector<std::size_t>>> pool_cache;  // [layer][sample]
  std::vector<Tensor> outputs;                                 // [sample]
  bool cache_armed = false;

  std::size_t batch_size() const { return outputs.size(); }
  const Shape& output_shape() const { return shapes.back(); }
  bool ends_with_softmax() const {
    return !layers.empty() && layers.back().kind == LayerKind::softmax;
  }

  void zero_grads() {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (params[i].present()) {
        if (!grads[i].present()) {
          grads[i].w = Tensor(params[i].w.shape);
          grads[i].b = Tensor(params[i].b.shape);
        } else {
          grads[i].w.fill(0.0);
          grads[i].b.fill(0.0);
        }
      }
  }

  Tensor apply_layer(std::size_t i, const Tensor& in, std::vector<std::size_t>* pool_idx) const {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::conv1d: return conv1d_forward(in, params[i].w, params[i].b);
      case LayerKind::leaky_relu: return leaky_relu(in, l.alpha);
      case LayerKind::maxpool2: {
        std::vector<std::size_t> local;
        Tensor y = maxpool2(in, pool_idx ? *pool_idx : local);
        return y;
      }
      case LayerKind::flatten: return flatten(in);
      case LayerKind::dense: return dense_forward(params[i].w, params[i].b, in);
      case LayerKind::softmax: return softmax(in);
    }
    throw StateError("unreachable layer kind");
  }

  // train=true caches per-sample intermediates for one backward pass
  std::vector<Tensor> forward(const std::vector<Tensor>& batch, bool train) {
    const std::size_t n = batch.size();
    require(n > 0, "forward: empty batch");
    if (train) {
      input_cache.assign(layers.size(), {});
      pool_cache.assign(layers.size(), {});
      for (std::size_t i = 0; i < layers.size(); ++i) {
        input_cache[i].resize(n);
        if (layers[i].kind == LayerKind::maxpool2) pool_cache[i].resize(n);
      }
    }
    std::vector<Tensor> out(n);
    for (std::size_t s = 0; s < n; ++s) {
      require(batch[s].shape == shapes[0], "forward: sample shape " + shape_str(batch[s].shape) +
                                               " != part input " + shape_str(shapes[0]));
      Tensor cur = batch[s];
      for (std::size_t i = 0; i < layers.size(); ++i) {
        if (train) {
          input_cache[i][s] = std::move(cur);
          cur = apply_layer(i, input_cache[i][s],
                            layers[i].kind == LayerKind::maxpool2 ? &pool_cache[i][s] : nullptr);
        } else {
          cur = apply_layer(i, cur, nullptr);
        }
      }
      out[s] = std::move(cur);
    }
    if (train) {
      outputs = out;
      cache_armed = true;
    }
    return out;
  }

  // Seeds the reverse walk at layer `from` (exclusive upper bound) with g
  // for sample s and returns the gradient at the part input.
  Tensor backprop_sample(std::size_t s, std::size_t from, Tensor g) {
    for (std::size_t ii = from; ii-- > 0;) {
      const LayerSpec& l = layers[ii];
      const Tensor& in = input_cache[ii][s];
      switch (l.kind) {
        case LayerKind::conv1d:
          conv1d_backward_params(in, g, params[ii].w, grads[ii].w, grads[ii].b);
          g = conv1d_backward_input(g, params[ii].w);
          break;
        case LayerKind::leaky_relu:
          g = leaky_relu_backward(in, g, l.alpha);
          break;
        case LayerKind::maxpool2:
          g = maxpool2_backward(g, pool_cache[ii][s], in.shape);
          break;
        case LayerKind::flatten:
          g = reshape(g, in.shape);
          break;
        case LayerKind::dense:
          g = dense_backward(params[ii].w, in, g, grads[ii].w, grads[ii].b);
          break;
        case LayerKind::softmax:
          throw StateError("softmax cannot sit below the gradient seed");
      }
    }
    return g;
  }

  // For parts that end in softmax. Per-sample logit gradient is
  // (probs - onehot) / batch, matching a batch-mean loss.
  std::vector<Tensor> backward_from_labels(const std::vector<std::uint8_t>& labels) {
    if (!cache_armed) throw StateError("backward called before forward");
    if (!ends_with_softmax()) throw StateError("part does not own the output layer");
    const std::size_t n = outputs.size();
    require(labels.size() == n, "backward_from_labels: label count mismatch");
    zero_grads();
    std::vector<Tensor> gin(n);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t s = 0; s < n; ++s) {
      Tensor g = softmax_cross_entropy_grad(outputs[s], labels[s]);
      for (double& v : g.data) v *= inv;
      gin[s] = backprop_sample(s, layers.size() - 1, std::move(g));
    }
    cache_armed = false;
    return gin;
  }

  // For parts fed a gradient from the layer above (already batch-scaled).
  std::vector<Tensor> backward(const std::vector<Tensor>& gout) {
    if (!cache_armed) throw StateError("backward called before forward");
    if (ends_with_softmax()) throw StateError("output part must backprop from labels");
    const std::size_t n = outputs.size();
    require(gout.size() == n, "backward: gradient batch size mismatch");
    zero_grads();
    std::vector<Tensor> gin(n);
    for (std::size_t s = 0; s < n; ++s) {
      require(gout[s].shape == shapes.back(), "backward: gradient shape mismatch");
      gin[s] = backprop_sample(s, layers.size(), gout[s]);
    }
    cache_armed = false;
    return gin;
  }

  double mean_loss(const std::vector<std::uint8_t>& labels) const {
    if (!ends_with_softmax()) throw StateError("loss needs the output part");
    require(labels.size() == outputs.size(), "mean_loss: label count mismatch");
    double sum = 0.0;
    for (std::size_t s = 0; s < outputs.size(); ++s) sum += cross_entropy(outputs[s], labels[s]);
    return sum / static_cast<double>(outputs.size());
  }

  void adam_update(const AdamConfig& cfg) {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (params[i].present()) {
        adam_step(params[i].w, grads[i].w, adam_w[i], cfg);
        adam_step(params[i].b, grads[i].b, adam_b[i], cfg);
      }
  }
};

inline Model make_part(const ModelConfig& cfg, const std::vector<LayerParams>& all_params,
                       std::size_t first, std::size_t last) {
  validate_config(cfg);
  require(first < last && last <= cfg.layers.size(), "make_part: bad layer range");
  std::vector<Shape> shapes = propagate_shapes(cfg);
  Model m;
  m.layers.assign(cfg.layers.begin() + first, cfg.layers.begin() + last);
  m.shapes.assign(shapes.begin() + first, shapes.begin() + last + 1);
  m.params.assign(all_params.begin() + first, all_params.begin() + last);
  m.grads.resize(m.layers.size());
  m.adam_w.resize(m.layers.size());
  m.adam_b.resize(m.layers.size());
  return m;
}

inline Model build_full_model(const ModelConfig& cfg, std::uint64_t seed) {
  return make_part(cfg, init_params(cfg, seed), 0, cfg.layers.size());
}

struct SplitModel {
  Model client, server;
};

inline SplitModel split_model(const ModelConfig& cfg, std::uint64_t seed) {
  std::vector<LayerParams> p = init_params(cfg, seed);
  SplitModel sm;
  sm.client = make_part(cfg, p, 0, cfg.split_index);
  sm.server = make_part(cfg, p, cfg.split_index, cfg.layers.size());
  return sm;
}

// Index of the layer whose output is the conceptual split activation:
// the client's last layer, or the layer feeding its trailing pool chain.
inline std::size_t prepool_tap_index(const ModelConfig& cfg) {
  std::size_t i = cfg.split_index;
  while (i > 0 && cfg.layers[i - 1].kind == LayerKind::maxpool2) --i;
  return i;  // output shape of layer i-1 == shapes[i]
}

// ---- text form --------------------------------------------------------

inline std::string serialize_model_config(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "input_length = " << cfg.input_length << "\n";
  os << "num_classes = " << cfg.num_classes << "\n";
  os << "split_index = " << cfg.split_index << "\n";
  for (const LayerSpec& l : cfg.layers) {
    os << "layer = " << layer_kind_name(l.kind);
    if (l.kind == LayerKind::conv1d) os << " filters=" << l.filters << " size=" << l.filter_size;
    if (l.kind == LayerKind::dense) os << " units=" << l.units;
    if (l.kind == LayerKind::leaky_relu) os << " alpha=" << l.alpha;
    os << "\n";
  }
  return os.str();
}

inline ModelConfig parse_model_config(const std::string& text) {
  ModelConfig cfg;
  cfg.layers.clear();
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string key, eq;
    if (!(ls >> key)) continue;
    if (!(ls >> eq) || eq != "=")
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    auto bad = [&](const std::string& why) {
      return ConfigError("config line " + std::to_string(lineno) + ": " + why);
    };
    if (key == "input_length" || key == "num_classes" || key == "split_index") {
      std::size_t v;
      if (!(ls >> v)) throw bad("expected an integer");
      if (key == "input_length") cfg.input_length = v;
      if (key == "num_classes") cfg.num_classes = v;
      if (key == "split_index") cfg.split_index = v;
    } else if (key == "layer") {
      std::string kind;
      if (!(ls >> kind)) throw bad("missing layer kind");
      LayerSpec l;
      if (kind == "conv1d") l.kind = LayerKind::conv1d;
      else if (kind == "leaky_relu") l.kind = LayerKind::leaky_relu;
      else if (kind == "maxpool2") l.kind = LayerKind::maxpool2;
      else if (kind == "flatten") l.kind = LayerKind::flatten;
      else if (kind == "dense") l.kind = LayerKind::dense;
      else if (kind == "softmax") l.kind = LayerKind::softmax;
      else throw bad("unknown layer kind '" + kind + "'");
      std::string attr;
      while (ls >> attr) {
        std::size_t eqp = attr.find('=');
        if (eqp == std::string::npos) throw bad("attribute '" + attr + "' is not name=value");
        std::string name = attr.substr(0, eqp), val = attr.substr(eqp + 1);
        if (name != "filters" && name != "size" && name != "units" && name != "alpha")
          throw bad("unknown attribute '" + name + "'");
        try {
          if (name == "filters") l.filters = std::stoul(val);
          else if (name == "size") l.filter_size = std::stoul(val);
          else if (name == "units") l.units = std::stoul(val);
          else if (name == "alpha") l.alpha = std::stod(val);
        } catch (const std::logic_error&) {
          throw bad("bad value in '" + attr + "'");
        }
      }
      cfg.layers.push_back(l);
    } else {
      throw bad("unknown key '" + key + "'");
    }
  }
  validate_config(cfg);
  return cfg;
}

}  // namespace splitnn

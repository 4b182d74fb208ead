#pragma once

// Feed-forward network of frozen spiking layers (dense, same-size
// zero-padded conv, sum-pooling) topped by one plastic layer of
// two-compartment readout neurons.
//
// Layers are pipelined: at global step n layer 0 consumes the network input
// and layer l > 0 consumes the spikes layer l-1 emitted at step n-1.
// Activations are channel-last: flat index = (y * width + x) * channels + c.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "sgp/error.hpp"
#include "sgp/neuron.hpp"
#include "sgp/random.hpp"
#include "sgp/readout.hpp"
#include "sgp/rule.hpp"
#include "sgp/trace.hpp"
#include "sgp/weights.hpp"

namespace sgp {

enum class LayerKind : std::uint8_t { dense = 1, conv2d = 2, pool = 3, plastic_output = 4 };

inline std::string_view name_of(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::pool: return "pool";
    case LayerKind::plastic_output: return "plastic-output";
  }
  return "?";
}

struct Shape3 {
  std::size_t height = 1, width = 1, channels = 1;
  std::size_t size() const { return height * width * channels; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

inline std::string to_string(const Shape3& s) {
  if (s.height == 1 && s.width == 1) return std::to_string(s.channels);
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  Shape3 in, out;
  std::size_t kernel = 0;  // conv kernel size or pool window
  NeuronParams params;
  bool plastic = false;
  std::string notation;

  /// Number of stored weights (0 for pooling).
  std::size_t weight_rows() const {
    switch (kind) {
      case LayerKind::dense:
      case LayerKind::plastic_output: return out.size();
      case LayerKind::conv2d: return out.channels;
      case LayerKind::pool: return 0;
    }
    return 0;
  }
  std::size_t weight_cols() const {
    switch (kind) {
      case LayerKind::dense:
      case LayerKind::plastic_output: return in.size();
      case LayerKind::conv2d: return in.channels * kernel * kernel;
      case LayerKind::pool: return 0;
    }
    return 0;
  }
};

struct Topology {
  Shape3 input;
  std::vector<LayerSpec> layers;

  void validate() const {
    if (layers.empty()) throw ConfigError("topology has no layers");
    Shape3 prev = input;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const LayerSpec& s = layers[l];
      if (!(s.in == prev)) throw ShapeError("layer " + std::to_string(l) + " input shape does not match its source");
      const bool last = l + 1 == layers.size();
      if ((s.kind == LayerKind::plastic_output) != last)
        throw ConfigError("exactly one plastic-output layer is required and it must be last");
      if (s.kind == LayerKind::conv2d) {
        if (s.kernel % 2 == 0) throw ConfigError("conv kernel must be odd for same-size zero padding");
        if (s.out.height != s.in.height || s.out.width != s.in.width)
          throw ShapeError("conv output must keep spatial size");
      }
      if (s.kind == LayerKind::pool) {
        if (s.kernel == 0 || s.in.height % s.kernel || s.in.width % s.kernel)
          throw ShapeError("pool window must divide the input size");
        if (!(s.out == Shape3{s.in.height / s.kernel, s.in.width / s.kernel, s.in.channels}))
          throw ShapeError("pool output shape inconsistent with window");
      }
      s.params.validate();
      prev = s.out;
    }
  }

  const LayerSpec& plastic() const { return layers.back(); }
  Shape3 output() const { return layers.back().out; }
};

namespace detail {

inline std::size_t parse_count(std::string_view s, std::string_view whole) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || v == 0)
    throw ConfigError("malformed layer notation '" + std::string(whole) + "'");
  return v;
}

}  // namespace detail

/// Parses "128x128x2" (or "64" for a flat vector).
inline Shape3 parse_shape(std::string_view text) {
  std::vector<std::size_t> dims;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t x = text.find('x', start);
    const std::string_view part = text.substr(start, x == std::string_view::npos ? std::string_view::npos : x - start);
    dims.push_back(detail::parse_count(part, text));
    if (x == std::string_view::npos) break;
    start = x + 1;
  }
  if (dims.size() == 1) return Shape3{1, 1, dims[0]};
  if (dims.size() == 3) return Shape3{dims[0], dims[1], dims[2]};
  throw ConfigError("shape must be N or HxWxC: '" + std::string(text) + "'");
}

/// Builds one layer from table notation: "16c5z" (conv, 16 channels, 5x5,
/// zero padded), "4a" (4x4 sum-pool, stride 4) or "512" (dense).
inline LayerSpec parse_layer(std::string_view text, const Shape3& in, const NeuronParams& params) {
  LayerSpec s;
  s.in = in;
  s.params = params;
  s.notation = std::string(text);
  if (text.empty()) throw ConfigError("empty layer notation");
  if (text.back() == 'a') {
    s.kind = LayerKind::pool;
    s.kernel = detail::parse_count(text.substr(0, text.size() - 1), text);
    if (in.height % s.kernel || in.width % s.kernel)
      throw ShapeError("pool '" + std::string(text) + "' does not divide " + to_string(in));
    s.out = Shape3{in.height / s.kernel, in.width / s.kernel, in.channels};
    return s;
  }
  if (const std::size_t c = text.find('c'); c != std::string_view::npos) {
    if (text.back() != 'z') throw ConfigError("only zero-padded convolutions ('z') are supported: '" + std::string(text) + "'");
    s.kind = LayerKind::conv2d;
    const std::size_t channels = detail::parse_count(text.substr(0, c), text);
    s.kernel = detail::parse_count(text.substr(c + 1, text.size() - c - 2), text);
    if (s.kernel % 2 == 0) throw ConfigError("conv kernel must be odd: '" + std::string(text) + "'");
    s.out = Shape3{in.height, in.width, channels};
    return s;
  }
  s.kind = LayerKind::dense;
  s.out = Shape3{1, 1, detail::parse_count(text, text)};
  return s;
}

inline Topology parse_topology(std::string_view input_shape, const std::vector<std::string>& hidden,
                               std::size_t n_outputs, const NeuronParams& hidden_params,
                               const NeuronParams& output_params) {
  Topology t;
  t.input = parse_shape(input_shape);
  Shape3 prev = t.input;
  for (const std::string& h : hidden) {
    t.layers.push_back(parse_layer(h, prev, hidden_params));
    prev = t.layers.back().out;
  }
  if (n_outputs == 0) throw ConfigError("plastic output layer needs at least one neuron");
  LayerSpec out;
  out.kind = LayerKind::plastic_output;
  out.in = prev;
  out.out = Shape3{1, 1, n_outputs};
  out.params = output_params;
  out.plastic = true;
  out.notation = std::to_string(n_outputs);
  t.layers.push_back(out);
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------

/// State and parameters of the plastic readout layer.
struct PlasticLayer {
  ReadoutParams readout;
  TraceConfig x1_cfg, x2_cfg;
  std::vector<double> q, p;  // presynaptic PSC/PSP with the readout's time constants
  TraceBank pre, post;
  std::vector<ErrorCompartment> distal;
  std::vector<OutputCompartment> proximal;
  DenseMatrix effective;     // cached, refreshed after every learning pass

  std::size_t fan_in() const { return q.size(); }
  std::size_t size() const { return distal.size(); }

  void reset() {
    std::ranges::fill(q, 0.0);
    std::ranges::fill(p, 0.0);
    pre.reset();
    post.reset();
    std::ranges::fill(distal, ErrorCompartment{});
    std::ranges::fill(proximal, OutputCompartment{});
  }
};

struct NetworkInit {
  int frozen_range = 127;      // frozen integer weights uniform in [-range, range]
  int frozen_scale_exp = -5;
  bool balanced_rows = true;  // shift each frozen dense row to (near) zero sum
  int plastic_scale_exp = -6;
  std::optional<int> plastic_random_range;  // zero-initialized unless set
  ReadoutParams readout;
};

struct Network {
  Topology topology;
  std::vector<QuantizedWeightStore> weights;  // one per layer (empty for pooling)
  std::vector<DenseMatrix> frozen_effective;  // cached effective weights per frozen layer
  std::vector<LayerState> states;             // per frozen layer
  std::vector<SpikeVector> last_out;          // previous-step output of each frozen layer
  PlasticLayer plastic;
  std::string provenance;                     // which classes the frozen layers were produced from
  std::uint64_t step = 0;

  std::size_t frozen_count() const { return topology.layers.size() - 1; }
  QuantizedWeightStore& plastic_store() { return weights.back(); }
  const QuantizedWeightStore& plastic_store() const { return weights.back(); }

  void refresh_effective() {
    for (std::size_t l = 0; l < frozen_count(); ++l) frozen_effective[l] = weights[l].effective_matrix();
    plastic.effective = plastic_store().effective_matrix();
  }

  /// Zeroes every neuron, filter and trace; weights are kept.
  void reset_state() {
    for (auto& s : states) s.reset();
    for (auto& o : last_out) std::ranges::fill(o, std::uint8_t{0});
    plastic.reset();
    step = 0;
  }

  void set_readout(const ReadoutParams& rp) {
    rp.validate();
    plastic.readout = rp;
  }
};

inline void randomize_store(QuantizedWeightStore& store, int range, std::uint64_t seed) {
  const auto span = static_cast<double>(2 * range + 1);
  for (std::size_t k = 0; k < store.weights.size(); ++k) {
    const int v = static_cast<int>(std::floor(counter_uniform(seed, k) * span)) - range;
    store.weights[k] = static_cast<std::int8_t>(std::clamp(v, kWeightMin, kWeightMax));
  }
}

/// Subtracts the rounded row mean from every row so each neuron's total
/// weight is near zero and it responds to input contrast, not input level.
inline void balance_rows(QuantizedWeightStore& store) {
  for (std::size_t i = 0; i < store.rows; ++i) {
    long sum = 0;
    for (std::size_t j = 0; j < store.cols; ++j) sum += store.at(i, j);
    const auto mean = static_cast<int>(std::lround(static_cast<double>(sum) / static_cast<double>(store.cols)));
    for (std::size_t j = 0; j < store.cols; ++j) store.set(i, j, store.at(i, j) - mean);
  }
}

inline Network build_network(const Topology& topo, std::uint64_t seed, const NetworkInit& init = {}) {
  topo.validate();
  if (init.frozen_range < 0 || init.frozen_range > kWeightMax) throw ConfigError("frozen_range must lie in [0, 127]");
  Network net;
  net.topology = topo;
  const std::size_t n_layers = topo.layers.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const LayerSpec& s = topo.layers[l];
    const bool plastic = s.kind == LayerKind::plastic_output;
    QuantizedWeightStore store(s.weight_rows(), s.weight_cols(), plastic ? init.plastic_scale_exp : init.frozen_scale_exp,
                               derive_seed(seed, 1000 + l));
    if (!plastic) {
      randomize_store(store, init.frozen_range, derive_seed(seed, l));
      if (init.balanced_rows && s.kind == LayerKind::dense) balance_rows(store);
      net.states.emplace_back(s.in.size(), s.out.size());
      net.last_out.emplace_back(s.out.size(), 0);
    } else if (init.plastic_random_range) {
      randomize_store(store, *init.plastic_random_range, derive_seed(seed, l));
    }
    net.weights.push_back(std::move(store));
  }
  net.frozen_effective.resize(net.frozen_count());

  const LayerSpec& out = topo.plastic();
  PlasticLayer& pl = net.plastic;
  pl.readout = init.readout;
  pl.readout.neuron.tau_u = out.params.tau_u;
  pl.readout.neuron.tau_v = out.params.tau_v;
  pl.readout.neuron.tau_r = out.params.tau_r;
  pl.readout.neuron.v_th = out.params.v_th;
  pl.readout.neuron.quant = out.params.quant;
  pl.readout.validate();
  std::tie(pl.x1_cfg, pl.x2_cfg) = difference_kernel_traces(out.params);
  pl.q.assign(out.in.size(), 0.0);
  pl.p.assign(out.in.size(), 0.0);
  pl.pre = TraceBank(out.in.size());
  pl.post = TraceBank(out.out.size());
  pl.distal.assign(out.out.size(), ErrorCompartment{});
  pl.proximal.assign(out.out.size(), OutputCompartment{});
  net.refresh_effective();
  return net;
}

// ---------------------------------------------------------------------------
// Frozen-layer drives

namespace detail {

inline void dense_drive(const DenseMatrix& w, const LayerState& s, std::vector<double>& dq, std::vector<double>& dp) {
  for (std::size_t i = 0; i < w.rows; ++i) {
    const auto row = w.row(i);
    double aq = 0.0, ap = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      aq += row[j] * s.q[j];
      ap += row[j] * s.p[j];
    }
    dq[i] = aq;
    dp[i] = ap;
  }
}

// Weight layout: [c_out][c_in][ky][kx]; out-of-range taps read zero.
inline void conv_drive(const LayerSpec& spec, const DenseMatrix& w, const LayerState& s, std::vector<double>& dq,
                       std::vector<double>& dp) {
  const auto H = static_cast<long>(spec.in.height), W = static_cast<long>(spec.in.width);
  const std::size_t cin = spec.in.channels, cout = spec.out.channels, k = spec.kernel;
  const long half = static_cast<long>(k / 2);
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      for (std::size_t co = 0; co < cout; ++co) {
        const auto row = w.row(co);
        double aq = 0.0, ap = 0.0;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            const long yy = y + static_cast<long>(ky) - half;
            if (yy < 0 || yy >= H) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long xx = x + static_cast<long>(kx) - half;
              if (xx < 0 || xx >= W) continue;
              const double wt = row[(ci * k + ky) * k + kx];
              const std::size_t src = static_cast<std::size_t>(yy * W + xx) * cin + ci;
              aq += wt * s.q[src];
              ap += wt * s.p[src];
            }
          }
        }
        const std::size_t dst = static_cast<std::size_t>(y * W + x) * cout + co;
        dq[dst] = aq;
        dp[dst] = ap;
      }
    }
  }
}

// Sum-pooling with unit weights.
inline void pool_drive(const LayerSpec& spec, const LayerState& s, std::vector<double>& dq, std::vector<double>& dp) {
  const std::size_t k = spec.kernel, W = spec.in.width, C = spec.in.channels;
  const std::size_t oh = spec.out.height, ow = spec.out.width;
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      for (std::size_t c = 0; c < C; ++c) {
        double aq = 0.0, ap = 0.0;
        for (std::size_t dy = 0; dy < k; ++dy) {
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t src = ((y * k + dy) * W + (x * k + dx)) * C + c;
            aq += s.q[src];
            ap += s.p[src];
          }
        }
        const std::size_t dst = (y * ow + x) * C + c;
        dq[dst] = aq;
        dp[dst] = ap;
      }
    }
  }
}

}  // namespace detail

/// Explicit dense matrix equivalent to a conv layer's kernel (small shapes only).
inline DenseMatrix conv_as_dense(const LayerSpec& spec, const DenseMatrix& kernel) {
  DenseMatrix m(spec.out.size(), spec.in.size());
  const auto H = static_cast<long>(spec.in.height), W = static_cast<long>(spec.in.width);
  const std::size_t cin = spec.in.channels, cout = spec.out.channels, k = spec.kernel;
  const long half = static_cast<long>(k / 2);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long yy = y + static_cast<long>(ky) - half, xx = x + static_cast<long>(kx) - half;
              if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
              m(static_cast<std::size_t>(y * W + x) * cout + co, static_cast<std::size_t>(yy * W + xx) * cin + ci) =
                  kernel(co, (ci * k + ky) * k + kx);
            }
  return m;
}

/// Advances frozen layer `l` one step given its input spikes.
inline const SpikeVector& step_frozen_layer(Network& net, std::size_t l, std::span<const std::uint8_t> in) {
  const LayerSpec& spec = net.topology.layers[l];
  LayerState& s = net.states[l];
  advance_input_filters(s, in, spec.params);
  std::vector<double> dq(s.size()), dp(s.size());
  switch (spec.kind) {
    case LayerKind::dense: detail::dense_drive(net.frozen_effective[l], s, dq, dp); break;
    case LayerKind::conv2d: detail::conv_drive(spec, net.frozen_effective[l], s, dq, dp); break;
    case LayerKind::pool: detail::pool_drive(spec, s, dq, dp); break;
    case LayerKind::plastic_output: throw ConfigError("plastic layer stepped as frozen");
  }
  integrate_and_fire(s, dq, dp, spec.params);
  return s.spiked;
}

// ---------------------------------------------------------------------------
// Plastic layer and whole-network step

struct StepContext {
  TargetRouting targets;                  // empty during testing
  const SumOfProductsRule* rule = nullptr;  // null disables plasticity
  LearningSchedule schedule;
};

/// Per-step record of every layer's spikes plus the error spikes.
struct StepRecord {
  std::vector<SpikeVector> layer_spikes;  // frozen layers then proximal output
  SpikeVector error_spikes;
};

inline SpikeVector step_plastic_layer(Network& net, std::span<const std::uint8_t> in, const StepContext& ctx,
                                      SpikeVector* error_spikes = nullptr) {
  PlasticLayer& pl = net.plastic;
  const NeuronParams& n = pl.readout.neuron;
  require_shape(in.size() == pl.fan_in(), "plastic layer input does not match fan-in");
  const double aq = n.alpha_q(), gq = 1.0 / n.tau_u, ap = n.alpha_p(), gp = 1.0 / n.tau_v;
  for (std::size_t j = 0; j < pl.fan_in(); ++j) {
    pl.q[j] = aq * pl.q[j] + (in[j] ? gq : 0.0);
    pl.p[j] = ap * pl.p[j] + gp * pl.q[j];
    pl.pre.spike[j] = in[j];
    pl.pre.t1[j] = update_trace(pl.pre.t1[j], in[j] != 0, pl.x1_cfg);
    pl.pre.t2[j] = update_trace(pl.pre.t2[j], in[j] != 0, pl.x2_cfg);
  }
  SpikeVector out(pl.size(), 0);
  if (error_spikes) error_spikes->assign(pl.size(), 0);
  for (std::size_t i = 0; i < pl.size(); ++i) {
    const double drive = dot(pl.effective.row(i), pl.p);
    const bool tgt = ctx.targets.spike(i, net.step);
    const bool err = step_error(pl.distal[i], drive, tgt, pl.readout);
    out[i] = step_output(pl.proximal[i], pl.distal[i].u_err, tgt, pl.readout) ? 1 : 0;
    pl.post.spike[i] = err ? 1 : 0;
    pl.post.t1[i] = pl.distal[i].y1;
    pl.post.t2[i] = pl.distal[i].y2;
    if (error_spikes) (*error_spikes)[i] = err ? 1 : 0;
  }
  if (ctx.rule && learning_step(net.plastic_store(), *ctx.rule, pl.pre, pl.post, ctx.schedule, net.step))
    pl.effective = net.plastic_store().effective_matrix();
  return out;
}

/// Advances every layer one timestep and returns the proximal output spikes.
inline SpikeVector forward_step(Network& net, std::span<const std::uint8_t> in_spikes, const StepContext& ctx = {},
                                StepRecord* record = nullptr) {
  require_shape(in_spikes.size() == net.topology.input.size(), "input spikes do not match network input shape");
  const std::size_t nf = net.frozen_count();
  // Last layer first so each layer reads its source's previous-step output.
  SpikeVector plastic_in = nf == 0 ? SpikeVector(in_spikes.begin(), in_spikes.end()) : net.last_out[nf - 1];
  SpikeVector err;
  SpikeVector out = step_plastic_layer(net, plastic_in, ctx, record ? &err : nullptr);
  for (std::size_t l = nf; l-- > 0;) {
    const SpikeVector src = l == 0 ? SpikeVector(in_spikes.begin(), in_spikes.end()) : net.last_out[l - 1];
    net.last_out[l] = step_frozen_layer(net, l, src);
  }
  if (record) {
    record->layer_spikes.assign(net.last_out.begin(), net.last_out.end());
    record->layer_spikes.push_back(out);
    record->error_spikes = std::move(err);
  }
  ++net.step;
  return out;
}

}  // namespace sgp

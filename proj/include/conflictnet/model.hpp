// The clip classifier: TimeDistributed(CNN backbone) -> Dropout -> BiLSTM ->
// attention (or last timestep) -> Dense stack with Dropouts -> Dense(2) -> softmax.
#pragma once

#include <optional>

#include "conflictnet/clip_batch.hpp"
#include "conflictnet/key_value.hpp"
#include "conflictnet/layers/attention.hpp"
#include "conflictnet/layers/dropout.hpp"
#include "conflictnet/layers/frame_net.hpp"
#include "conflictnet/layers/lstm.hpp"

namespace conflictnet {

enum class Backbone { small_a, small_b, small_c };

inline std::string to_string(Backbone b) {
  switch (b) {
    case Backbone::small_a: return "small-a";
    case Backbone::small_b: return "small-b";
    case Backbone::small_c: return "small-c";
  }
  return "?";
}

inline Backbone parse_backbone(std::string_view s) {
  if (s == "small-a") return Backbone::small_a;
  if (s == "small-b") return Backbone::small_b;
  if (s == "small-c") return Backbone::small_c;
  throw ConfigError("backbone", "expected small-a, small-b or small-c, got '" + std::string(s) + "'");
}

/// Conv-block widths per backbone; every block is conv3x3(same)+relu+maxpool2.
inline std::vector<std::size_t> backbone_widths(Backbone b) {
  switch (b) {
    case Backbone::small_a: return {16, 32};
    case Backbone::small_b: return {16, 32, 64};
    case Backbone::small_c: return {16, 32, 64, 64};
  }
  return {};
}

struct ModelConfig {
  std::size_t seq_len = 15;
  std::size_t frame_h = 100;
  std::size_t frame_w = 100;
  std::size_t channels = 3;
  Backbone backbone = Backbone::small_a;
  std::size_t frame_feature_dim = 128;
  std::size_t lstm_units = 64;
  bool use_attention = true;
  AttentionNorm attention_norm = AttentionNorm::softmax;
  std::vector<std::size_t> dense_head{64};
  std::vector<double> dropout_rates{0.5, 0.5};  // [after backbone, after each head layer]
  std::size_t num_classes = 2;

  static constexpr std::size_t kConvKernel = 3;

  void validate() const {
    auto positive = [](const char* field, std::size_t v) {
      if (v == 0) throw ConfigError(field, "must be positive");
    };
    positive("seq_len", seq_len);
    positive("frame_h", frame_h);
    positive("frame_w", frame_w);
    positive("channels", channels);
    positive("frame_feature_dim", frame_feature_dim);
    positive("lstm_units", lstm_units);
    for (auto w : dense_head)
      if (w == 0) throw ConfigError("dense_head", "widths must be positive");
    if (num_classes != 2) throw ConfigError("num_classes", "must be 2, got " + std::to_string(num_classes));
    if (dropout_rates.size() != dense_head.size() + 1)
      throw ConfigError("dropout_rates", "expected " + std::to_string(dense_head.size() + 1) +
                                             " rates (one after the backbone, one per dense_head layer), got " +
                                             std::to_string(dropout_rates.size()));
    for (double r : dropout_rates)
      if (!(r >= 0.0 && r < 1.0)) throw ConfigError("dropout_rates", "each rate must be in [0,1)");
    std::size_t h = frame_h, w = frame_w;
    for (std::size_t i = 0; i < backbone_widths(backbone).size(); ++i) {
      if (h < 2 || w < 2)
        throw ConfigError("frame_h", "frames of " + std::to_string(frame_h) + "x" + std::to_string(frame_w) +
                                         " are too small for backbone " + to_string(backbone));
      h /= 2;
      w /= 2;
    }
  }

  KeyValues to_key_values() const {
    auto join_sizes = [](const std::vector<std::size_t>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s;
    };
    std::string rates;
    for (std::size_t i = 0; i < dropout_rates.size(); ++i) rates += (i ? "," : "") + format_double(dropout_rates[i]);
    return {
        {"seq_len", std::to_string(seq_len)},
        {"frame_h", std::to_string(frame_h)},
        {"frame_w", std::to_string(frame_w)},
        {"channels", std::to_string(channels)},
        {"backbone", to_string(backbone)},
        {"frame_feature_dim", std::to_string(frame_feature_dim)},
        {"lstm_units", std::to_string(lstm_units)},
        {"use_attention", use_attention ? "true" : "false"},
        {"attention_norm", to_string(attention_norm)},
        {"dense_head", join_sizes(dense_head)},
        {"dropout_rates", rates},
        {"num_classes", std::to_string(num_classes)},
    };
  }

  std::string to_text() const { return format_key_values(to_key_values()); }

  /// Applies one key; returns false if the key is not a model key.
  bool set(const std::string& key, const std::string& value) {
    if (key == "seq_len") seq_len = parse_uint(key, value);
    else if (key == "frame_h") frame_h = parse_uint(key, value);
    else if (key == "frame_w") frame_w = parse_uint(key, value);
    else if (key == "channels") channels = parse_uint(key, value);
    else if (key == "backbone") backbone = parse_backbone(value);
    else if (key == "frame_feature_dim") frame_feature_dim = parse_uint(key, value);
    else if (key == "lstm_units") lstm_units = parse_uint(key, value);
    else if (key == "use_attention") use_attention = parse_bool(key, value);
    else if (key == "attention_norm") {
      if (value == "softmax") attention_norm = AttentionNorm::softmax;
      else if (value == "linear") attention_norm = AttentionNorm::linear;
      else throw ConfigError(key, "expected softmax or linear, got '" + value + "'");
    } else if (key == "dense_head") {
      dense_head.clear();
      for (auto part : split_list(value)) dense_head.push_back(parse_uint(key, part));
    } else if (key == "dropout_rates") {
      dropout_rates.clear();
      for (auto part : split_list(value)) dropout_rates.push_back(parse_double(key, part));
    } else if (key == "num_classes") num_classes = parse_uint(key, value);
    else return false;
    return true;
  }

  static ModelConfig from_text(std::string_view text) {
    ModelConfig cfg;
    for (const auto& [k, v] : parse_key_values(text))
      if (!cfg.set(k, v)) throw ConfigError(k, "unknown model config key");
    cfg.validate();
    return cfg;
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Named reference to one trainable tensor and its gradient.
struct ParamRef {
  std::string name;
  Param* param;
};

class Model {
 public:
  /// Builds and initializes every layer from `config` using draws from `rng`.
  static Model build(const ModelConfig& config, Rng& rng) {
    config.validate();
    Model m;
    m.config_ = config;
    FrameNet net(config.frame_h, config.frame_w, config.channels);
    const auto widths = backbone_widths(config.backbone);
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const auto idx = std::to_string(i);
      net.conv("backbone.conv" + idx, ModelConfig::kConvKernel, widths[i], rng)
          .activation("backbone.relu" + idx, Activation::relu)
          .maxpool("backbone.pool" + idx, 2, 2);
    }
    net.flatten().dense("backbone.proj", config.frame_feature_dim, Activation::relu, rng);
    m.backbone_ = std::move(net);
    m.lstm_fwd_ = init_lstm("bilstm.fwd", config.frame_feature_dim, config.lstm_units, rng);
    m.lstm_bwd_ = init_lstm("bilstm.bwd", config.frame_feature_dim, config.lstm_units, rng);
    const std::size_t seq_dim = 2 * config.lstm_units;
    if (config.use_attention) m.attention_ = init_attention("attention", seq_dim, rng);
    std::size_t width = seq_dim;
    for (std::size_t i = 0; i < config.dense_head.size(); ++i) {
      m.head_.push_back(init_dense("head.dense" + std::to_string(i), width, config.dense_head[i], rng));
      width = config.dense_head[i];
    }
    m.output_ = init_dense("head.out", width, config.num_classes, rng);
    m.dropouts_.assign(config.dropout_rates.size(), LayerState("dropout"));
    return m;
  }

  const ModelConfig& config() const noexcept { return config_; }

  /// Class probabilities (B × 2) for frames of shape B×T×H×W×C.
  Tensor forward(const Tensor& frames, bool training, Rng& rng) {
    const Shape expect{frames.rank() ? frames.dim(0) : 0, config_.seq_len, config_.frame_h, config_.frame_w,
                       config_.channels};
    if (frames.shape() != expect)
      throw DimensionError("model expects B×" + std::to_string(config_.seq_len) + "×" +
                           std::to_string(config_.frame_h) + "×" + std::to_string(config_.frame_w) + "×" +
                           std::to_string(config_.channels) + " frames, got " + to_string(frames.shape()));
    Tensor feats = time_distributed_forward(backbone_, frames);
    feats = dropout_forward(feats, config_.dropout_rates[0], rng, training, dropouts_[0]);
    const Tensor seq = bilstm_forward(feats, lstm_fwd_, lstm_bwd_);
    Tensor x;
    if (attention_) {
      auto att = attention_forward(seq, *attention_, config_.attention_norm);
      last_attention_ = att.weights;
      x = std::move(att.context);
    } else {
      x = detail::get_time_slice(seq, config_.seq_len - 1, 0, seq.dim(2));
    }
    for (std::size_t i = 0; i < head_.size(); ++i) {
      x = dense_forward(x, head_[i], Activation::relu);
      x = dropout_forward(x, config_.dropout_rates[i + 1], rng, training, dropouts_[i + 1]);
    }
    Tensor logits = dense_forward(x, output_, Activation::identity);
    return softmax_rows(logits);
  }

  /// Backpropagates the gradient w.r.t. the pre-softmax logits, accumulating
  /// into every parameter gradient. Returns the gradient w.r.t. the frames.
  Tensor backward(const Tensor& dlogits) {
    Tensor g = dense_backward(dlogits, output_);
    for (std::size_t i = head_.size(); i-- > 0;) {
      g = dropout_backward(g, dropouts_[i + 1]);
      g = dense_backward(g, head_[i]);
    }
    Tensor dseq;
    if (attention_) {
      dseq = attention_backward(g, *attention_);
    } else {
      const std::size_t batch = g.dim(0);
      dseq = Tensor({batch, config_.seq_len, 2 * config_.lstm_units});
      detail::put_time_slice(dseq, config_.seq_len - 1, 0, g);
    }
    Tensor dfeats = bilstm_backward(dseq, lstm_fwd_, lstm_bwd_);
    dfeats = dropout_backward(dfeats, dropouts_[0]);
    return time_distributed_backward(backbone_, dfeats);
  }

  /// Every trainable tensor in canonical order.
  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    auto add = [&out](LayerState& s) {
      for (auto& p : s.params()) out.push_back({s.name() + "." + p.name, &p});
    };
    for (auto& st : backbone_.stages()) add(st.state);
    add(lstm_fwd_);
    add(lstm_bwd_);
    if (attention_) add(*attention_);
    for (auto& h : head_) add(h);
    add(output_);
    return out;
  }

  std::vector<LayerState*> layer_states() {
    std::vector<LayerState*> out;
    for (auto& st : backbone_.stages()) out.push_back(&st.state);
    out.push_back(&lstm_fwd_);
    out.push_back(&lstm_bwd_);
    if (attention_) out.push_back(&*attention_);
    for (auto& h : head_) out.push_back(&h);
    out.push_back(&output_);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = backbone_.parameter_count() + lstm_fwd_.parameter_count() + lstm_bwd_.parameter_count() +
                    output_.parameter_count();
    if (attention_) n += attention_->parameter_count();
    for (const auto& h : head_) n += h.parameter_count();
    return n;
  }

  void zero_grad() {
    for (auto* s : layer_states()) s->zero_grad();
  }

  /// ReLU masks and max-pool winners from the most recent forward.
  std::vector<std::size_t> activation_pattern() const {
    auto out = backbone_.activation_pattern();
    for (const auto& h : head_)
      if (const auto* c = h.peek<detail::DenseCache>())
        for (double v : c->output.values()) out.push_back(v > 0.0);
    return out;
  }

  bool has_attention() const noexcept { return attention_.has_value(); }

  /// Attention weights (B × T) from the most recent forward, if attention is on.
  const Tensor& last_attention_weights() const noexcept { return last_attention_; }

  FrameNet& backbone() noexcept { return backbone_; }

 private:
  Model() = default;

  ModelConfig config_;
  FrameNet backbone_;
  LayerState lstm_fwd_;
  LayerState lstm_bwd_;
  std::optional<LayerState> attention_;
  std::vector<LayerState> head_;
  LayerState output_;
  std::vector<LayerState> dropouts_;
  Tensor last_attention_;
};

inline Model build_model(const ModelConfig& config, Rng& rng) { return Model::build(config, rng); }

inline Tensor model_forward(Model& m, const Tensor& frames, bool training, Rng& rng) {
  return m.forward(frames, training, rng);
}

/// Argmax per row of class probabilities; an exact tie goes to class 0.
inline std::vector<int> predict_labels(const Tensor& probs) {
  if (probs.rank() != 2 || probs.dim(1) != 2)
    throw DimensionError("predict expects B×2 probabilities, got " + to_string(probs.shape()));
  std::vector<int> out(probs.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = probs[r * 2 + 1] > probs[r * 2] ? 1 : 0;
  return out;
}

inline Tensor model_forward(Model& m, const ClipBatch& batch, bool training, Rng& rng) {
  return m.forward(batch.frames(), training, rng);
}

inline std::vector<int> model_predict(Model& m, const Tensor& frames) {
  Rng unused(0);
  return predict_labels(m.forward(frames, false, unused));
}

inline std::vector<int> model_predict(Model& m, const ClipBatch& batch) { return model_predict(m, batch.frames()); }

}  // namespace conflictnet

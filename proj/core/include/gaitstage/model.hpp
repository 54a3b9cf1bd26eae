#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gaitstage/layers.hpp"
#include "gaitstage/rng.hpp"
#include "gaitstage/tensor.hpp"

namespace gaitstage {

// Ablation variants:
//   a    - temporal transformer removed (conv -> pool -> reduce directly)
//   b    - spatial transformer and the per-stream reduction layers removed
//   c    - both transformer stages removed (conv-only)
//   d    - conv stack removed (raw segments enter the temporal transformer)
enum class Ablation { full, a, b, c, d };

std::string to_string(Ablation variant);
Ablation ablation_from_string(const std::string& name);

struct ModelConfig {
  std::size_t sensor_count = 18;
  std::size_t segment_length = 100;
  std::size_t conv_blocks = 2;
  std::size_t temporal_blocks = 1;
  std::size_t spatial_blocks = 1;
  std::size_t head_count = 2;
  std::size_t reduced_dim = 10;
  std::array<std::size_t, 2> classifier_hidden{64, 32};
  std::size_t class_count = 4;
  double dropout_rate = 0.1;
  Ablation ablation = Ablation::full;

  bool has_conv() const { return ablation != Ablation::d; }
  bool has_temporal() const {
    return ablation == Ablation::full || ablation == Ablation::b || ablation == Ablation::d;
  }
  bool has_spatial() const {
    return ablation == Ablation::full || ablation == Ablation::a || ablation == Ablation::d;
  }
  // the per-stream reduction layers are removed together with the spatial stage
  bool has_reduce() const { return has_spatial(); }

  std::size_t temporal_model_dim() const;  // conv output channels (or embed dim)
  std::size_t token_dim() const;           // per-stream feature size entering concat
  std::size_t sequence_length() const;     // tokens entering the temporal stage

  // empty when the config is valid, otherwise one line per violated constraint
  std::vector<std::string> violations() const;
};

ModelConfig apply_ablation(ModelConfig config, Ablation variant);

// length after the Table-style conv stack (two width-3 valid convs and a
// stride-2 pool per block)
std::size_t conv_stack_output_length(std::size_t segment_length, std::size_t conv_blocks);
std::size_t conv_stack_output_channels(std::size_t conv_blocks);

struct StreamPipeline {
  std::vector<Conv1d> convs;  // pooled after every second conv
  Dense raw_embed;            // ablation d only
  PositionalEncoding temporal_pe;
  std::vector<EncoderBlock> temporal;
  Dense reduce;
};

struct HybridModel {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<StreamPipeline> streams;
  PositionalEncoding spatial_pe;
  std::vector<EncoderBlock> spatial;
  Dense classifier1, classifier2, output;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
};

// Deterministic for a fixed seed; throws InputError listing violated
// constraints on an invalid config.
HybridModel build_model(const ModelConfig& config, std::uint64_t seed);

std::size_t parameter_count(const ModelConfig& config);

// optional instrumentation filled during forward (for tests and audits)
struct ForwardProbe {
  Shape conv_output_shape;      // stream 0 output of the conv stack (batch, ch, len)
  Shape token_shape;            // (batch, S, token_dim) before the spatial stage
  std::vector<Tensor> stream_tokens;  // per-stream reduced features (batch, token_dim)
  Tensor classifier_input;      // (batch, S, token_dim) after the spatial stage
};

struct ForwardOptions {
  bool training = false;
  CounterRng* rng = nullptr;                // needed when training with dropout > 0
  std::optional<double> dropout_rate;       // overrides config.dropout_rate
  ForwardProbe* probe = nullptr;
};

// (batch, S, p) -> (batch, class_count) class probabilities (rows sum to 1)
Tensor forward(const HybridModel& model, const Tensor& batch,
               const ForwardOptions& options = {});

// --- checkpoint container: versioned header, little-endian payload ---
void save_checkpoint(const HybridModel& model, const std::string& path);
HybridModel load_checkpoint(const std::string& path);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json_text);

}  // namespace gaitstage

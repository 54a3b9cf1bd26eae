#include "gaitstage/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "gaitstage/errors.hpp"

namespace gaitstage {

namespace {

// fixed conv stack parameters (filter counts 8/16 then 16/16, width 3)
constexpr std::size_t kFirstConvChannels = 8;
constexpr std::size_t kConvChannels = 16;
constexpr std::size_t kKernelWidth = 3;
constexpr std::size_t kPoolWindow = 2;
constexpr std::size_t kPoolStride = 2;

}  // namespace

std::string to_string(Ablation variant) {
  switch (variant) {
    case Ablation::full: return "full";
    case Ablation::a: return "A";
    case Ablation::b: return "B";
    case Ablation::c: return "C";
    case Ablation::d: return "D";
  }
  return "full";
}

Ablation ablation_from_string(const std::string& name) {
  if (name == "full") return Ablation::full;
  if (name == "A" || name == "a") return Ablation::a;
  if (name == "B" || name == "b") return Ablation::b;
  if (name == "C" || name == "c") return Ablation::c;
  if (name == "D" || name == "d") return Ablation::d;
  throw InputError("unknown ablation variant: '" + name + "' (expected full, A, B, C or D)");
}

ModelConfig apply_ablation(ModelConfig config, Ablation variant) {
  config.ablation = variant;
  return config;
}

std::size_t conv_stack_output_length(std::size_t segment_length, std::size_t conv_blocks) {
  std::size_t len = segment_length;
  for (std::size_t b = 0; b < conv_blocks; ++b) {
    if (len < kKernelWidth) return 0;
    len = valid_out_length(len, kKernelWidth, 1);
    if (len < kKernelWidth) return 0;
    len = valid_out_length(len, kKernelWidth, 1);
    if (len < kPoolWindow) return 0;
    len = valid_out_length(len, kPoolWindow, kPoolStride);
  }
  return len;
}

std::size_t conv_stack_output_channels(std::size_t conv_blocks) {
  return conv_blocks >= 1 ? kConvChannels : 0;
}

std::size_t ModelConfig::temporal_model_dim() const {
  return has_conv() ? conv_stack_output_channels(conv_blocks) : kConvChannels;
}

std::size_t ModelConfig::token_dim() const {
  return has_reduce() ? reduced_dim : temporal_model_dim();
}

std::size_t ModelConfig::sequence_length() const {
  return has_conv() ? conv_stack_output_length(segment_length, conv_blocks) : segment_length;
}

std::vector<std::string> ModelConfig::violations() const {
  std::vector<std::string> v;
  if (sensor_count < 1) v.push_back("sensor_count must be >= 1");
  if (class_count < 2) v.push_back("class_count must be >= 2");
  if (reduced_dim < 1) v.push_back("reduced_dim must be >= 1");
  if (classifier_hidden[0] < 1 || classifier_hidden[1] < 1) {
    v.push_back("classifier_hidden sizes must be >= 1");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) v.push_back("dropout_rate must be in [0, 1)");
  if (head_count < 1) v.push_back("head_count must be >= 1");
  if (segment_length < 1) v.push_back("segment_length must be >= 1");
  if (has_conv()) {
    if (conv_blocks < 1) v.push_back("conv_blocks must be >= 1");
    else if (conv_stack_output_length(segment_length, conv_blocks) == 0) {
      v.push_back("segment_length " + std::to_string(segment_length) +
                  " too short for " + std::to_string(conv_blocks) + " conv blocks");
    }
  }
  if (has_temporal()) {
    if (temporal_blocks < 1) v.push_back("temporal_blocks must be >= 1");
    if (head_count >= 1 && temporal_model_dim() % head_count != 0) {
      v.push_back("temporal model dim " + std::to_string(temporal_model_dim()) +
                  " not divisible by head_count " + std::to_string(head_count));
    }
  }
  if (has_spatial()) {
    if (spatial_blocks < 1) v.push_back("spatial_blocks must be >= 1");
    if (head_count >= 1 && reduced_dim % head_count != 0) {
      v.push_back("reduced_dim " + std::to_string(reduced_dim) +
                  " not divisible by head_count " + std::to_string(head_count));
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// construction

HybridModel build_model(const ModelConfig& config, std::uint64_t seed) {
  const auto violations = config.violations();
  if (!violations.empty()) {
    std::string msg = "invalid model config:";
    for (const auto& s : violations) msg += "\n  - " + s;
    throw InputError(msg);
  }
  HybridModel m;
  m.config = config;
  m.seed = seed;
  Rng rng(derive_seed(seed, seed_salt::init));

  const std::size_t model_dim = config.temporal_model_dim();
  const std::size_t seq_len = config.sequence_length();
  m.streams.reserve(config.sensor_count);
  for (std::size_t s = 0; s < config.sensor_count; ++s) {
    StreamPipeline stream;
    if (config.has_conv()) {
      std::size_t in_ch = 1;
      for (std::size_t blk = 0; blk < config.conv_blocks; ++blk) {
        const std::size_t mid = blk == 0 ? kFirstConvChannels : kConvChannels;
        stream.convs.push_back(Conv1d::init(in_ch, mid, kKernelWidth, 1, rng));
        stream.convs.push_back(Conv1d::init(mid, kConvChannels, kKernelWidth, 1, rng));
        in_ch = kConvChannels;
      }
    } else {
      stream.raw_embed = Dense::init(1, model_dim, rng);
    }
    if (config.has_temporal()) {
      stream.temporal_pe = positional_encoding(seq_len, model_dim);
      for (std::size_t b = 0; b < config.temporal_blocks; ++b) {
        stream.temporal.push_back(EncoderBlock::init(model_dim, config.head_count, rng));
      }
    }
    if (config.has_reduce()) {
      stream.reduce = Dense::init(model_dim, config.reduced_dim, rng);
    }
    m.streams.push_back(std::move(stream));
  }
  if (config.has_spatial()) {
    m.spatial_pe = positional_encoding(config.sensor_count, config.reduced_dim);
    for (std::size_t b = 0; b < config.spatial_blocks; ++b) {
      m.spatial.push_back(EncoderBlock::init(config.reduced_dim, config.head_count, rng));
    }
  }
  const std::size_t flat_dim = config.sensor_count * config.token_dim();
  m.classifier1 = Dense::init(flat_dim, config.classifier_hidden[0], rng);
  m.classifier2 = Dense::init(config.classifier_hidden[0], config.classifier_hidden[1], rng);
  m.output = Dense::init(config.classifier_hidden[1], config.class_count, rng);
  return m;
}

namespace {

void add_dense(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name,
               const Dense& d) {
  out.emplace_back(name + ".weight", d.weight);
  out.emplace_back(name + ".bias", d.bias);
}

void add_block(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name,
               const EncoderBlock& blk) {
  add_dense(out, name + ".query", blk.query);
  add_dense(out, name + ".key", blk.key);
  add_dense(out, name + ".value", blk.value);
  add_dense(out, name + ".out_proj", blk.out_proj);
  add_dense(out, name + ".ff_expand", blk.ff_expand);
  add_dense(out, name + ".ff_contract", blk.ff_contract);
  out.emplace_back(name + ".norm1.gain", blk.norm1_gain);
  out.emplace_back(name + ".norm1.offset", blk.norm1_offset);
  out.emplace_back(name + ".norm2.gain", blk.norm2_gain);
  out.emplace_back(name + ".norm2.offset", blk.norm2_offset);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> HybridModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t s = 0; s < streams.size(); ++s) {
    const std::string prefix = "stream" + std::to_string(s);
    const StreamPipeline& stream = streams[s];
    for (std::size_t c = 0; c < stream.convs.size(); ++c) {
      out.emplace_back(prefix + ".conv" + std::to_string(c) + ".kernel",
                       stream.convs[c].kernel);
      out.emplace_back(prefix + ".conv" + std::to_string(c) + ".bias", stream.convs[c].bias);
    }
    if (stream.raw_embed.weight.defined()) add_dense(out, prefix + ".embed", stream.raw_embed);
    for (std::size_t b = 0; b < stream.temporal.size(); ++b) {
      add_block(out, prefix + ".temporal" + std::to_string(b), stream.temporal[b]);
    }
    if (stream.reduce.weight.defined()) add_dense(out, prefix + ".reduce", stream.reduce);
  }
  for (std::size_t b = 0; b < spatial.size(); ++b) {
    add_block(out, "spatial" + std::to_string(b), spatial[b]);
  }
  add_dense(out, "classifier1", classifier1);
  add_dense(out, "classifier2", classifier2);
  add_dense(out, "output", output);
  return out;
}

std::vector<Tensor> HybridModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t HybridModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

std::size_t parameter_count(const ModelConfig& config) {
  return build_model(config, 0).parameter_count();
}

// ---------------------------------------------------------------------------
// forward

Tensor forward(const HybridModel& model, const Tensor& batch, const ForwardOptions& options) {
  const ModelConfig& cfg = model.config;
  if (batch.rank() != 3 || batch.shape()[1] != cfg.sensor_count ||
      batch.shape()[2] != cfg.segment_length) {
    throw std::invalid_argument(
        "forward: expected batch of shape (n, " + std::to_string(cfg.sensor_count) + ", " +
        std::to_string(cfg.segment_length) + "), got " + shape_str(batch.shape()));
  }
  const std::size_t n = batch.shape()[0];
  const double rate = options.dropout_rate.value_or(cfg.dropout_rate);
  CounterRng idle_rng(0);
  CounterRng& rng = options.rng ? *options.rng : idle_rng;
  const bool training = options.training;
  if (training && rate > 0.0 && !options.rng) {
    throw std::invalid_argument("forward: training with dropout requires an rng");
  }

  std::vector<Tensor> tokens;
  tokens.reserve(cfg.sensor_count);
  for (std::size_t s = 0; s < cfg.sensor_count; ++s) {
    const StreamPipeline& stream = model.streams[s];
    Tensor xs = slice(batch, 1, s, 1);  // (n, 1, p)
    Tensor h;
    if (cfg.has_conv()) {
      h = xs;
      for (std::size_t c = 0; c < stream.convs.size(); ++c) {
        h = selu(stream.convs[c].forward(h));
        if (c % 2 == 1) h = maxpool1d(h, kPoolWindow, kPoolStride);
      }
      if (options.probe && s == 0) options.probe->conv_output_shape = h.shape();
      h = permute(h, {0, 2, 1});  // (n, seq, channels)
    } else {
      h = stream.raw_embed.forward(permute(xs, {0, 2, 1}));  // (n, p, model_dim)
    }
    if (cfg.has_temporal()) {
      h = add_positional_encoding(h, stream.temporal_pe);
      for (const EncoderBlock& blk : stream.temporal) {
        h = blk.forward(h, rate, training, rng);
      }
    }
    Tensor pooled = dropout(global_average_pool(h), rate, training, rng);  // (n, dim)
    Tensor token = cfg.has_reduce() ? selu(stream.reduce.forward(pooled)) : pooled;
    if (options.probe) options.probe->stream_tokens.push_back(token);
    tokens.push_back(reshape(token, Shape{n, 1, cfg.token_dim()}));
  }
  Tensor seq = concat(tokens, 1);  // (n, S, token_dim)
  if (options.probe) options.probe->token_shape = seq.shape();
  if (cfg.has_spatial()) {
    seq = add_positional_encoding(seq, model.spatial_pe);
    for (const EncoderBlock& blk : model.spatial) {
      seq = blk.forward(seq, rate, training, rng);
    }
  }
  if (options.probe) options.probe->classifier_input = seq;
  Tensor flat = reshape(seq, Shape{n, cfg.sensor_count * cfg.token_dim()});
  Tensor h1 = dropout(selu(model.classifier1.forward(flat)), rate, training, rng);
  Tensor h2 = selu(model.classifier2.forward(h1));
  return softmax(model.output.forward(h2), 1);
}

// ---------------------------------------------------------------------------
// config json

std::string model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["sensor_count"] = c.sensor_count;
  j["segment_length"] = c.segment_length;
  j["conv_blocks"] = c.conv_blocks;
  j["temporal_blocks"] = c.temporal_blocks;
  j["spatial_blocks"] = c.spatial_blocks;
  j["head_count"] = c.head_count;
  j["reduced_dim"] = c.reduced_dim;
  j["classifier_hidden"] = c.classifier_hidden;
  j["class_count"] = c.class_count;
  j["dropout_rate"] = c.dropout_rate;
  j["ablation"] = to_string(c.ablation);
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  ModelConfig c;
  c.sensor_count = j.at("sensor_count").get<std::size_t>();
  c.segment_length = j.at("segment_length").get<std::size_t>();
  c.conv_blocks = j.at("conv_blocks").get<std::size_t>();
  c.temporal_blocks = j.at("temporal_blocks").get<std::size_t>();
  c.spatial_blocks = j.at("spatial_blocks").get<std::size_t>();
  c.head_count = j.at("head_count").get<std::size_t>();
  c.reduced_dim = j.at("reduced_dim").get<std::size_t>();
  c.classifier_hidden = j.at("classifier_hidden").get<std::array<std::size_t, 2>>();
  c.class_count = j.at("class_count").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
  return c;
}

// ---------------------------------------------------------------------------
// checkpoint container
//
// layout (all integers and doubles little-endian):
//   magic "GSCK" | u32 version | u32 json_len | config json (with seed)
//   u64 param_count | per param: u32 name_len, name, u32 rank, u64 dims..., f64 data

namespace {

constexpr char kMagic[4] = {'G', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_bytes_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_bytes_le(std::istream& in, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == EOF) throw InputError("checkpoint truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

void save_checkpoint(const HybridModel& model, const std::string& path) {
  std::string buf;
  buf.append(kMagic, 4);
  put_bytes_le(buf, kVersion, 4);
  nlohmann::json j = nlohmann::json::parse(model_config_to_json(model.config));
  j["seed"] = model.seed;
  const std::string cfg = j.dump();
  put_bytes_le(buf, cfg.size(), 4);
  buf += cfg;
  const auto named = model.named_parameters();
  put_bytes_le(buf, named.size(), 8);
  for (const auto& [name, t] : named) {
    put_bytes_le(buf, name.size(), 4);
    buf += name;
    put_bytes_le(buf, t.rank(), 4);
    for (std::size_t d : t.shape()) put_bytes_le(buf, d, 8);
    for (double v : t.values()) put_bytes_le(buf, std::bit_cast<std::uint64_t>(v), 8);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw InputError("failed writing checkpoint: " + path);
}

HybridModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw InputError("not a checkpoint file: " + path);
  }
  const auto version = get_bytes_le(in, 4);
  if (version != kVersion) {
    throw InputError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto json_len = get_bytes_le(in, 4);
  std::string cfg_text(json_len, '\0');
  in.read(cfg_text.data(), static_cast<std::streamsize>(json_len));
  if (!in) throw InputError("checkpoint truncated");
  nlohmann::json j = nlohmann::json::parse(cfg_text);
  const std::uint64_t seed = j.value("seed", std::uint64_t{0});
  HybridModel model = build_model(model_config_from_json(cfg_text), seed);

  auto named = model.named_parameters();
  const auto count = get_bytes_le(in, 8);
  if (count != named.size()) {
    throw InputError("checkpoint holds " + std::to_string(count) + " parameters, model needs " +
                     std::to_string(named.size()));
  }
  for (std::size_t p = 0; p < count; ++p) {
    const auto name_len = get_bytes_le(in, 4);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!in) throw InputError("checkpoint truncated");
    if (name != named[p].first) {
      throw InputError("checkpoint parameter '" + name + "' does not match expected '" +
                       named[p].first + "'");
    }
    const auto rank = get_bytes_le(in, 4);
    Shape shape(rank);
    for (auto& d : shape) d = get_bytes_le(in, 8);
    Tensor& target = named[p].second;
    if (shape != target.shape()) {
      throw InputError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) +
                       ", model expects " + shape_str(target.shape()));
    }
    auto dst = target.values();
    for (double& v : dst) v = std::bit_cast<double>(get_bytes_le(in, 8));
  }
  return model;
}

}  // namespace gaitstage

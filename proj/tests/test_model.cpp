#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <vector>

#include "gaitstage/errors.hpp"
#include "gaitstage/model.hpp"
#include "gaitstage/training.hpp"
#include "support/oracles.hpp"

using namespace gaitstage;

namespace {

// toy architecture used throughout: fast but structurally complete
ModelConfig toy_config() {
  ModelConfig config;
  config.sensor_count = 3;
  config.segment_length = 20;
  config.classifier_hidden = {16, 8};
  return config;
}

Tensor random_batch(const ModelConfig& config, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> values(n * config.sensor_count * config.segment_length);
  for (double& v : values) v = rng.uniform(-1.0, 1.0);
  return Tensor({n, config.sensor_count, config.segment_length}, std::move(values));
}

std::vector<double> vec(const Tensor& t) {
  const auto v = t.values();
  return {v.begin(), v.end()};
}

}  // namespace

TEST_CASE("default config builds 18 streams ending at 22 x 16") {
  ModelConfig config;  // defaults
  CHECK(config.sensor_count == 18);
  CHECK(config.segment_length == 100);
  CHECK(config.sequence_length() == 22);
  CHECK(config.temporal_model_dim() == 16);
  const HybridModel model = build_model(config, 1);
  CHECK(model.streams.size() == 18);

  ForwardProbe probe;
  ForwardOptions opts;
  opts.probe = &probe;
  const Tensor out = forward(model, random_batch(config, 2, 3), opts);
  CHECK(probe.conv_output_shape == Shape{2, 16, 22});
  CHECK(probe.token_shape == Shape{2, 18, 10});
  CHECK(out.shape() == Shape{2, 4});
}

TEST_CASE("degenerate single-stream model") {
  ModelConfig config = toy_config();
  config.sensor_count = 1;
  const HybridModel model = build_model(config, 5);
  CHECK(model.streams.size() == 1);
  CHECK(model.spatial_pe.length == 1);  // spatial encoder over one token
  const Tensor out = forward(model, random_batch(config, 2, 9));
  CHECK(out.shape() == Shape{2, 4});
}

TEST_CASE("same seed gives bit-identical parameters") {
  const ModelConfig config = toy_config();
  const HybridModel a = build_model(config, 77);
  const HybridModel b = build_model(config, 77);
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(vec(pa[i].second) == vec(pb[i].second));
  }
  const HybridModel c = build_model(config, 78);
  CHECK(vec(c.classifier1.weight) != vec(a.classifier1.weight));
}

TEST_CASE("invalid configs list the violated constraints") {
  ModelConfig config = toy_config();
  config.segment_length = 5;  // too short for two conv blocks
  config.class_count = 1;
  try {
    build_model(config, 0);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("class_count") != std::string::npos);
    CHECK(msg.find("too short") != std::string::npos);
  }
  ModelConfig odd = toy_config();
  odd.reduced_dim = 7;  // not divisible by 2 heads
  CHECK_THROWS_AS(build_model(odd, 0), InputError);
}

TEST_CASE("forward rejects mismatched batch shapes") {
  const ModelConfig config = toy_config();
  const HybridModel model = build_model(config, 2);
  Tensor bad({2, 2, config.segment_length},
             std::vector<double>(2 * 2 * config.segment_length, 0.0));
  CHECK_THROWS_AS(forward(model, bad), std::invalid_argument);
}

TEST_CASE("output rows are probabilities summing to 1 within 1e-9") {
  for (const Ablation variant :
       {Ablation::full, Ablation::a, Ablation::b, Ablation::c, Ablation::d}) {
    ModelConfig config = apply_ablation(toy_config(), variant);
    const HybridModel model = build_model(config, 11);
    const Tensor out = forward(model, random_batch(config, 3, 13));
    REQUIRE(out.shape() == Shape{3, 4});
    const auto ov = out.values();
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(ov[r * 4 + c] >= 0.0);
        sum += ov[r * 4 + c];
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("zeroed output layer gives exactly uniform probabilities") {
  const ModelConfig config = toy_config();
  HybridModel model = build_model(config, 21);
  std::fill(model.output.weight.values().begin(), model.output.weight.values().end(), 0.0);
  std::fill(model.output.bias.values().begin(), model.output.bias.values().end(), 0.0);
  Tensor zeros({2, config.sensor_count, config.segment_length},
               std::vector<double>(2 * config.sensor_count * config.segment_length, 0.0));
  const Tensor out = forward(model, zeros);
  for (double v : out.values()) CHECK(v == 0.25);
}

TEST_CASE("untrained model predicts near-uniform: loss close to ln 4") {
  const ModelConfig config = toy_config();
  const HybridModel model = build_model(config, 31);
  const std::size_t n = 100;
  const Tensor batch = random_batch(config, n, 41);
  std::vector<int> labels(n);
  Rng rng(43);
  for (int& l : labels) l = static_cast<int>(rng.uniform_index(4));
  const Tensor probs = forward(model, batch);
  const Tensor loss = cross_entropy(probs, labels);
  CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(0.15 / std::log(4.0)));
}

TEST_CASE("ablation variants rewire the parameter set") {
  const ModelConfig base = toy_config();
  const auto names_of = [](const HybridModel& m) {
    std::set<std::string> names;
    for (const auto& [name, t] : m.named_parameters()) names.insert(name);
    return names;
  };

  const HybridModel full = build_model(base, 1);
  const auto full_names = names_of(full);
  CHECK(full_names.count("stream0.temporal0.query.weight") == 1);
  CHECK(full_names.count("spatial0.query.weight") == 1);
  CHECK(full_names.count("stream0.reduce.weight") == 1);

  SUBCASE("variant A drops the temporal stage only") {
    const auto names = names_of(build_model(apply_ablation(base, Ablation::a), 1));
    for (const auto& n : names) CHECK(n.find("temporal") == std::string::npos);
    CHECK(names.count("spatial0.query.weight") == 1);
    CHECK(names.count("stream0.reduce.weight") == 1);
  }
  SUBCASE("variant B drops the spatial stage and the reduction layers") {
    const auto names = names_of(build_model(apply_ablation(base, Ablation::b), 1));
    for (const auto& n : names) {
      CHECK(n.find("spatial") == std::string::npos);
      CHECK(n.find("reduce") == std::string::npos);
    }
    CHECK(names.count("stream0.temporal0.query.weight") == 1);
  }
  SUBCASE("variant C holds no attention weights at all") {
    const auto names = names_of(build_model(apply_ablation(base, Ablation::c), 1));
    for (const auto& n : names) {
      CHECK(n.find("temporal") == std::string::npos);
      CHECK(n.find("spatial") == std::string::npos);
      CHECK(n.find("query") == std::string::npos);
    }
    CHECK(names.count("stream0.conv0.kernel") == 1);
  }
  SUBCASE("variant D holds no convolution kernels") {
    const auto names = names_of(build_model(apply_ablation(base, Ablation::d), 1));
    for (const auto& n : names) CHECK(n.find("conv") == std::string::npos);
    CHECK(names.count("stream0.embed.weight") == 1);
    CHECK(names.count("stream0.temporal0.query.weight") == 1);
    CHECK(names.count("spatial0.query.weight") == 1);
  }
  SUBCASE("variant A output shape is unchanged") {
    ModelConfig config = apply_ablation(base, Ablation::a);
    const HybridModel model = build_model(config, 3);
    CHECK(forward(model, random_batch(config, 5, 7)).shape() == Shape{5, 4});
  }
  SUBCASE("unknown variant name is rejected") {
    CHECK_THROWS_AS(ablation_from_string("E"), InputError);
  }
}

TEST_CASE("parameter count is a pure function of the config") {
  const ModelConfig config = toy_config();
  CHECK(build_model(config, 1).parameter_count() == build_model(config, 999).parameter_count());
  CHECK(parameter_count(config) == build_model(config, 123).parameter_count());
  // ablations change the count deterministically
  CHECK(parameter_count(apply_ablation(config, Ablation::c)) < parameter_count(config));
}

TEST_CASE("gradient flows to every trainable parameter") {
  ModelConfig config = toy_config();
  config.dropout_rate = 0.0;
  const HybridModel model = build_model(config, 51);
  const Tensor batch = random_batch(config, 4, 53);
  const std::vector<int> labels{0, 1, 2, 3};
  Tape tape;
  {
    TapeScope scope(tape);
    const Tensor probs = forward(model, batch);
    tape.backward(cross_entropy(probs, labels));
  }
  for (const auto& [name, param] : model.named_parameters()) {
    INFO("parameter ", name);
    REQUIRE(param.has_grad());
    double norm = 0.0;
    for (double g : param.grad()) norm += g * g;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("streams are independent before concatenation") {
  ModelConfig config = toy_config();
  config.dropout_rate = 0.0;
  const HybridModel model = build_model(config, 61);
  const Tensor batch = random_batch(config, 2, 63);

  ForwardProbe base_probe;
  ForwardOptions opts;
  opts.probe = &base_probe;
  forward(model, batch, opts);

  const std::size_t zeroed = 1;
  std::vector<double> values = vec(batch);
  const std::size_t p = config.segment_length;
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < p; ++i) values[(b * 3 + zeroed) * p + i] = 0.0;
  }
  ForwardProbe zero_probe;
  ForwardOptions zopts;
  zopts.probe = &zero_probe;
  forward(model, Tensor(batch.shape(), std::move(values)), zopts);

  for (std::size_t s = 0; s < 3; ++s) {
    const auto before = vec(base_probe.stream_tokens[s]);
    const auto after = vec(zero_probe.stream_tokens[s]);
    if (s == zeroed) {
      CHECK(before != after);
    } else {
      CHECK(before == after);
    }
  }
}

TEST_CASE("permuted sensors with permuted encoding rows permute the classifier input") {
  ModelConfig config = toy_config();
  config.dropout_rate = 0.0;
  const HybridModel model = build_model(config, 71);
  const std::vector<std::size_t> perm{2, 0, 1};

  HybridModel permuted = model;  // shares parameter storage; rewires the order
  for (std::size_t s = 0; s < 3; ++s) permuted.streams[s] = model.streams[perm[s]];
  {
    std::vector<double> rows(permuted.spatial_pe.table.size());
    const auto src = model.spatial_pe.table.values();
    const std::size_t dim = config.reduced_dim;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < dim; ++j) rows[s * dim + j] = src[perm[s] * dim + j];
    }
    permuted.spatial_pe.table = Tensor(model.spatial_pe.table.shape(), std::move(rows));
  }

  const Tensor batch = random_batch(config, 2, 73);
  std::vector<double> shuffled(batch.size());
  const auto bv = batch.values();
  const std::size_t p = config.segment_length;
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t i = 0; i < p; ++i) {
        shuffled[(b * 3 + s) * p + i] = bv[(b * 3 + perm[s]) * p + i];
      }
    }
  }

  ForwardProbe probe_base, probe_perm;
  ForwardOptions o1, o2;
  o1.probe = &probe_base;
  o2.probe = &probe_perm;
  forward(model, batch, o1);
  forward(permuted, Tensor(batch.shape(), std::move(shuffled)), o2);

  const auto base_in = probe_base.classifier_input.values();
  const auto perm_in = probe_perm.classifier_input.values();
  const std::size_t dim = config.reduced_dim;
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < dim; ++j) {
        const double expect = base_in[(b * 3 + perm[s]) * dim + j];
        const double got = perm_in[(b * 3 + s) * dim + j];
        CHECK(got == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("checkpoint round-trip preserves config and parameters") {
  const ModelConfig config = toy_config();
  const HybridModel model = build_model(config, 81);
  const auto dir = std::filesystem::temp_directory_path() / "gaitstage_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.bin").string();
  save_checkpoint(model, path);

  const HybridModel loaded = load_checkpoint(path);
  CHECK(loaded.config.sensor_count == config.sensor_count);
  CHECK(loaded.config.segment_length == config.segment_length);
  CHECK(loaded.seed == model.seed);
  const auto pa = model.named_parameters();
  const auto pb = loaded.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(vec(pa[i].second) == vec(pb[i].second));  // bit-exact
  }
  // and the loaded model computes the same outputs
  const Tensor batch = random_batch(config, 2, 83);
  CHECK(vec(forward(model, batch)) == vec(forward(loaded, batch)));

  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint loader rejects damaged files") {
  const auto dir = std::filesystem::temp_directory_path() / "gaitstage_ckpt_bad";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "bad.bin").string();
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("not a checkpoint", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_checkpoint(path), InputError);
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.bin").string()), InputError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("full model gradients match finite differences at toy size") {
  ModelConfig config = toy_config();
  config.dropout_rate = 0.0;
  const HybridModel model = build_model(config, 91);
  const Tensor batch = random_batch(config, 2, 93);
  const std::vector<int> labels{1, 3};
  std::vector<Tensor> params;
  for (auto& [name, t] : model.named_parameters()) params.push_back(t);
  oracle::GradCheckOptions options;
  options.max_coords_per_tensor = 3;  // sampled coordinates, every tensor covered
  const double err = oracle::max_gradient_error(
      params, [&]() { return cross_entropy(forward(model, batch), labels); }, options);
  CHECK(err <= 1e-4);
}

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "acn/decoder.hpp"
#include "acn/model.hpp"
#include "support.hpp"

using namespace acn;
using namespace acn::testing;

namespace {

std::vector<TokenId> random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.below(vocab));
  return t;
}

double max_diff(std::span<const double> a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("config validation names the violated constraint") {
  ModelConfig c;
  c.d_model = 66;
  c.n_head = 4;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("divisible"), ConfigError);
  c = ModelConfig{};
  c.adapter_size = 0;
  CHECK_THROWS_AS(Model(c, 1), ConfigError);
  CHECK_NOTHROW(ModelConfig{}.validate());
}

TEST_CASE("parameter partitions are disjoint and exhaustive") {
  Model m(tiny_config(), 1);
  for (TrainMode mode : {TrainMode::PretrainFull, TrainMode::FinetuneAdapters, TrainMode::FinetuneFull}) {
    ParamPartition p = m.partition_for(mode);
    std::set<std::size_t> all(p.frozen.begin(), p.frozen.end());
    for (auto i : p.trainable) CHECK(all.insert(i).second);
    CHECK(all.size() == m.params().size());
  }
  ParamPartition ad = m.partition_for(TrainMode::FinetuneAdapters);
  for (auto i : ad.trainable) CHECK(m.params()[i].group != ParamGroup::Backbone);
  for (auto i : ad.frozen) CHECK(m.params()[i].group == ParamGroup::Backbone);
  ParamPartition dup = ad;
  dup.trainable.push_back(dup.frozen.front());
  CHECK_THROWS_AS(m.apply_partition(dup), ConfigError);
  CHECK(to_string(train_mode_from_string("finetune_full")) == std::string("finetune_full"));
  CHECK_THROWS_AS(train_mode_from_string("bogus"), ConfigError);
}

TEST_CASE("initialisation is seeded and clone is deep") {
  Model a(tiny_config(), 5), b(tiny_config(), 5), c(tiny_config(), 6);
  CHECK(std::ranges::equal(a.token_embedding().data(), b.token_embedding().data()));
  CHECK_FALSE(std::ranges::equal(a.token_embedding().data(), c.token_embedding().data()));
  Model d = a.clone();
  d.params()[0].value.mutable_data()[0] += 1.0;
  CHECK(d.token_embedding().data()[0] != a.token_embedding().data()[0]);
}

TEST_CASE("adapter with zero up-projection is the identity") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    AdapterLayer ad{random_tensor({8}, rng), random_tensor({8}, rng), random_tensor({8, 5}, rng),
                    Tensor::zeros({5, 8})};
    Tensor h = random_tensor({6, 8}, rng, 3.0, false);
    Tensor y = adapter_forward(ad, h);
    CHECK(max_diff(y.data(), {h.data().begin(), h.data().end()}) <= 1e-12);
  }
}

TEST_CASE("zero copy head gives gate exactly one half") {
  Model m(tiny_config(), 3);
  Rng rng(4);
  const auto tokens = random_tokens(rng, 7, 16);
  ForwardOutput out = m.forward(tokens);
  for (double g : out.gate_values()) CHECK(g == 0.5);
  std::vector<double> e(8, 1.5), h(8, -2.0);
  CHECK(copy_gate(m.copy_head(), e, h) == 0.5);
}

TEST_CASE("mixing at the gate extremes returns a source bit-exactly") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> gen(11), copy(11);
    for (auto& v : gen) v = rng.uniform();
    for (auto& v : copy) v = rng.uniform();
    CHECK(mix_distributions(gen, copy, 0.0) == gen);
    CHECK(mix_distributions(gen, copy, 1.0) == copy);
  }
  std::vector<double> a(3, 0.1);
  CHECK_THROWS_AS(mix_distributions(a, std::vector<double>(2), 0.5), DimensionError);
  CHECK_THROWS_AS(mix_distributions(a, a, 1.5), DimensionError);
}

TEST_CASE("copy distribution scatters attention onto context ids") {
  const std::vector<double> att = {0.1, 0.2, 0.3, 0.4};
  const std::vector<TokenId> ctx = {3, 1, 3, 0};
  auto c = copy_distribution(att, ctx, 5);
  CHECK(c[3] == doctest::Approx(0.4));
  CHECK(c[1] == 0.2);
  CHECK(c[0] == 0.4);
  CHECK(c[2] == 0.0);
  const std::vector<TokenId> bad = {9, 0, 0, 0};
  CHECK_THROWS_AS(copy_distribution(att, bad, 5), DimensionError);
}

TEST_CASE("mixed rows sum to one over random models") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Model m(tiny_config(), s);
    Rng rng(s + 77);
    randomize(m, rng, 0.5);
    const auto tokens = random_tokens(rng, 1 + rng.below(12), 16);
    ForwardOutput out = m.forward(tokens);
    const std::size_t v = m.config().vocab_size;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      double total = 0;
      for (std::size_t j = 0; j < v; ++j) total += out.mixed_probs.data()[t * v + j];
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("forward matches the straight-line reference") {
  for (bool adapters : {true, false}) {
    for (bool copy : {true, false}) {
      for (std::uint64_t s = 0; s < 5; ++s) {
        ModelConfig cfg = tiny_config();
        cfg.adapter_enabled = adapters;
        cfg.copy_enabled = copy;
        Model m(cfg, s);
        Rng rng(s + 10);
        randomize(m, rng, 0.4);
        const auto tokens = random_tokens(rng, 12, 16);
        ForwardOutput out = m.forward(tokens);
        Reference ref = reference_forward(m, tokens);
        double diff = 0;
        for (std::size_t t = 0; t < tokens.size(); ++t) {
          diff = std::max(diff, max_diff(out.gen_probs.data().subspan(t * 16, 16), ref.gen[t]));
          diff = std::max(diff, max_diff(out.mixed_probs.data().subspan(t * 16, 16), ref.mixed[t]));
          if (copy) diff = std::max(diff, std::abs(out.gate.data()[t] - ref.gate[t]));
        }
        CHECK(diff <= 1e-9);
      }
    }
  }
}

TEST_CASE("toggling adapters does not change the parameter set") {
  Model m(tiny_config(), 1);
  const std::size_t n = m.param_count();
  m.set_adapter_enabled(false);
  m.set_copy_enabled(false);
  CHECK(m.param_count() == n);
  Rng rng(3);
  ForwardOutput out = m.forward(random_tokens(rng, 4, 16));
  CHECK_FALSE(out.gate.defined());
  CHECK(out.mixed_probs.same(out.gen_probs));
}

TEST_CASE("sequence longer than max_positions is rejected") {
  Model m(tiny_config(), 1);
  std::vector<TokenId> tokens(13, 1);
  CHECK_THROWS_AS(m.forward(tokens), LengthError);
  CHECK_THROWS_AS(m.forward(std::vector<TokenId>{}), LengthError);
}

TEST_CASE("incremental decoder agrees with full forward at every position") {
  for (bool copy : {true, false}) {
    ModelConfig cfg = tiny_config();
    cfg.copy_enabled = copy;
    Model m(cfg, 21);
    Rng rng(22);
    randomize(m, rng, 0.4);
    const auto tokens = random_tokens(rng, 12, 16);
    ForwardOutput out = m.forward(tokens);
    IncrementalDecoder dec(m);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      dec.push(tokens[t]);
      StepDistribution step = dec.next();
      CHECK(max_diff(out.mixed_probs.data().subspan(t * 16, 16), step.mixed_probs) <= 1e-9);
      CHECK(max_diff(out.gen_probs.data().subspan(t * 16, 16), step.gen_probs) <= 1e-9);
      if (copy) CHECK(std::abs(step.gate - out.gate.data()[t]) <= 1e-9);
    }
    // Re-syncing onto a diverging context reuses only the common prefix.
    std::vector<TokenId> other(tokens.begin(), tokens.begin() + 5);
    other.push_back((tokens[5] + 1) % 16);
    dec.sync(other);
    CHECK(dec.length() == 6);
    ForwardOutput out2 = m.forward(other);
    CHECK(max_diff(out2.mixed_probs.data().subspan(5 * 16, 16), dec.next().mixed_probs) <= 1e-9);
    dec.truncate(2);
    CHECK(dec.tokens() == std::vector<TokenId>(tokens.begin(), tokens.begin() + 2));
    CHECK(max_diff(out.mixed_probs.data().subspan(16, 16), dec.next().mixed_probs) <= 1e-9);
  }
}

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "fatcc/errors.hpp"
#include "fatcc/federation.hpp"
#include "test_support.hpp"

using namespace fatcc;
using fatcc::testing::random_mlp;
using fatcc::testing::random_tensor;

namespace {

struct Fixture {
  Dataset train = synth_gaussian_split(3, 6, 20, 0.1, 5, 1);
  Dataset test = synth_gaussian_split(3, 6, 5, 0.1, 5, 2);
  ModelParams init = init_mlp(std::vector<std::size_t>{6, 8, 4, 3}, 17);

  RoundConfig round(Method m) const {
    RoundConfig c;
    c.method = m;
    c.train.learning_rate = 0.05;
    c.train.batch_size = 16;
    c.train_attack.epsilon = 0.1;
    c.train_attack.step_size = 0.02;
    c.train_attack.steps = 3;
    return c;
  }

  ClientShard all(std::size_t id = 0) const {
    ClientShard s{id, {}};
    s.indices.resize(train.size());
    std::iota(s.indices.begin(), s.indices.end(), std::size_t{0});
    return s;
  }
};

std::vector<AttackConfig> eval_suite() { return {AttackConfig::evaluation(AttackKind::kPgd, 0.1, 5)}; }

/// Independent loop: sum_i (D_i / sum D) * w_i over flattened parameters.
std::vector<double> weighted_mean_oracle(const std::vector<ModelParams>& ps, const std::vector<std::size_t>& sizes) {
  double total = 0;
  for (std::size_t s : sizes) total += static_cast<double>(s);
  std::vector<double> out(ps.front().flatten().size(), 0.0);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto f = ps[i].flatten();
    for (std::size_t j = 0; j < f.size(); ++j) out[j] += static_cast<double>(sizes[i]) / total * f[j];
  }
  return out;
}

}  // namespace

TEST_CASE("method names round-trip") {
  for (Method m : all_methods()) CHECK(parse_method(to_string(m)) == m);
  CHECK_THROWS_AS(parse_method("fedavg"), ConfigError);
  CHECK(terms_for(Method::kFst).adversarial == false);
  CHECK(terms_for(Method::kFatccNoCalib).calibration == false);
  CHECK(terms_for(Method::kFatccNoContrast).contrast == false);
}

TEST_CASE("derive_seed separates rounds and clients") {
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));
}

TEST_CASE("fedavg examples") {
  std::mt19937_64 rng(1);
  const auto p = random_mlp({3, 4, 2}, rng);
  SUBCASE("one client is returned exactly") {
    const std::vector<ModelParams> ps{p};
    const std::vector<std::size_t> n{7};
    CHECK(fedavg(ps, n) == p);
  }
  SUBCASE("p and -p with equal sizes cancel") {
    ModelParams q = p;
    auto f = q.flatten();
    for (double& v : f) v = -v;
    q.assign_flat(f);
    const std::vector<ModelParams> ps{p, q};
    const std::vector<std::size_t> n{5, 5};
    for (double v : fedavg(ps, n).flatten()) CHECK(v == 0.0);
  }
  SUBCASE("sizes (1, 3), scalars 0 and 4 give 3") {
    ModelParams a;
    a.layers.push_back({Tensor({1, 1}, std::vector<double>{0.0}), {0.0}});
    ModelParams b;
    b.layers.push_back({Tensor({1, 1}, std::vector<double>{4.0}), {4.0}});
    const std::vector<ModelParams> ps{a, b};
    const std::vector<std::size_t> n{1, 3};
    const auto m = fedavg(ps, n);
    CHECK(m.layers[0].weight(0, 0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(m.layers[0].bias[0] == doctest::Approx(3.0).epsilon(1e-15));
  }
  SUBCASE("errors") {
    const std::vector<ModelParams> none;
    const std::vector<std::size_t> no_sizes;
    CHECK_THROWS_AS(fedavg(none, no_sizes), std::invalid_argument);
    const std::vector<ModelParams> mixed{p, random_mlp({3, 5, 2}, rng)};
    const std::vector<std::size_t> n{1, 1};
    CHECK_THROWS_AS(fedavg(mixed, n), ShapeError);
    const std::vector<ModelParams> two{p, p};
    const std::vector<std::size_t> zero{1, 0};
    CHECK_THROWS_AS(fedavg(two, zero), std::invalid_argument);
  }
}

TEST_CASE("fedavg matches an independent weighted loop and stays within client bounds") {
  std::mt19937_64 rng(99);
  for (int t = 0; t < 40; ++t) {
    const std::size_t n = 1 + rng() % 6;
    std::vector<ModelParams> ps;
    std::vector<std::size_t> sizes;
    for (std::size_t i = 0; i < n; ++i) {
      ps.push_back(random_mlp({4, 5, 3}, rng));
      sizes.push_back(1 + rng() % 500);
    }
    const auto got = fedavg(ps, sizes).flatten();
    const auto want = weighted_mean_oracle(ps, sizes);
    for (std::size_t j = 0; j < got.size(); ++j) {
      CHECK(std::abs(got[j] - want[j]) <= 1e-12);
      double lo = 1e300, hi = -1e300;
      for (const auto& p : ps) {
        lo = std::min(lo, p.flatten()[j]);
        hi = std::max(hi, p.flatten()[j]);
      }
      CHECK(got[j] >= lo - 1e-12);
      CHECK(got[j] <= hi + 1e-12);
    }
  }
}

TEST_CASE("local_update: FST with zero learning rate returns the broadcast params") {
  Fixture f;
  auto cfg = f.round(Method::kFst);
  cfg.train.learning_rate = 0.0;
  const auto r = local_update(f.train, {0, f.all(), 3}, f.init, std::nullopt, cfg);
  CHECK(r.params == f.init);
  CHECK(r.num_samples == f.train.size());
  CHECK(r.prototypes.present_count() == 3);
}

TEST_CASE("local_update: FedPGD on one batch equals the hand-composed step") {
  Fixture f;
  auto cfg = f.round(Method::kFedPgd);
  cfg.train.batch_size = f.train.size();
  const std::uint64_t seed = 1234;
  const auto r = local_update(f.train, {0, f.all(), seed}, f.init, std::nullopt, cfg);

  // replay the client protocol: shuffle with the client rng, draw the attack seed, attack, descend
  std::mt19937_64 rng(seed);
  auto order = f.all().indices;
  std::shuffle(order.begin(), order.end(), rng);
  const std::uint64_t attack_seed = rng();
  const Tensor x = gather_rows(f.train.inputs, order);
  std::vector<int> y;
  for (std::size_t i : order) y.push_back(f.train.labels[i]);
  const Tensor adv = pgd(f.init, x, y, cfg.train_attack, attack_seed).perturbed;
  const double loss = cross_entropy(forward(f.init, adv).logits(), y);
  const auto g = backprop(f.init, adv, y, PlainCE{});
  const auto expected = sgd_step(f.init, g.param_grads, cfg.train.learning_rate);

  CHECK(r.params == expected);
  CHECK(r.mean_loss == doctest::Approx(loss).epsilon(1e-14));
  CHECK(r.prototypes == local_prototypes(forward(f.init, adv).features(), y, 3));
}

TEST_CASE("local_update: FatCC without global prototypes equals the no-contrast ablation") {
  Fixture f;
  const ClientState c{0, f.all(), 55};
  const auto a = local_update(f.train, c, f.init, std::nullopt, f.round(Method::kFatcc));
  const auto b = local_update(f.train, c, f.init, std::nullopt, f.round(Method::kFatccNoContrast));
  CHECK(a.params == b.params);
  CHECK(a.prototypes == b.prototypes);
  const auto d = local_update(f.train, c, f.init, std::nullopt, f.round(Method::kFedPgd));
  CHECK_FALSE(a.params == d.params);
}

TEST_CASE("local_update: contrast changes the update once prototypes exist") {
  Fixture f;
  const ClientState c{0, f.all(), 55};
  const auto first = local_update(f.train, c, f.init, std::nullopt, f.round(Method::kFatcc));
  const std::optional<PrototypeSet> g = first.prototypes;
  const auto a = local_update(f.train, c, f.init, g, f.round(Method::kFatcc));
  const auto b = local_update(f.train, c, f.init, g, f.round(Method::kFatccNoContrast));
  CHECK_FALSE(a.params == b.params);
}

TEST_CASE("local_update rejects an empty shard") {
  Fixture f;
  CHECK_THROWS_AS(local_update(f.train, {4, ClientShard{4, {}}, 1}, f.init, std::nullopt, f.round(Method::kFst)),
                  DomainError);
}

TEST_CASE("run_training: one client, zero learning rate keeps the initial model") {
  Fixture f;
  TrainingSetup s;
  s.shards = {f.all()};
  s.initial = f.init;
  s.round = f.round(Method::kFst);
  s.round.train.learning_rate = 0.0;
  s.eval_attacks = eval_suite();
  const auto r = run_training(f.train, f.test, s);
  CHECK(r.server.params == f.init);
  REQUIRE(r.reports.size() == 1);
  CHECK(r.reports[0].robust_accuracy.size() == 1);
}

TEST_CASE("run_training: identical shards average to a single client's params") {
  Fixture f;
  const ClientShard shard = f.all();
  const auto cfg = f.round(Method::kFedPgd);
  const auto solo = local_update(f.train, {0, shard, 3}, f.init, std::nullopt, cfg);
  const std::vector<ModelParams> ps{solo.params, solo.params};
  const std::vector<std::size_t> n{shard.size(), shard.size()};
  const auto avg = fedavg(ps, n).flatten();
  const auto one = solo.params.flatten();
  for (std::size_t j = 0; j < one.size(); ++j) CHECK(avg[j] == doctest::Approx(one[j]).epsilon(1e-14));
}

TEST_CASE("run_training replays the round protocol and skips empty shards") {
  Fixture f;
  std::vector<ClientShard> shards(3);
  for (std::size_t i = 0; i < f.train.size(); ++i) shards[i % 2 == 0 ? 0 : 2].indices.push_back(i);
  for (std::size_t k = 0; k < 3; ++k) shards[k].client_id = k;

  TrainingSetup s;
  s.shards = shards;
  s.initial = f.init;
  s.round = f.round(Method::kFatcc);
  s.eval_attacks = eval_suite();
  s.rounds = 3;
  s.master_seed = 21;
  std::vector<std::size_t> seen;
  const auto r = run_training(f.train, f.test, s, [&](const RoundReport& rep) { seen.push_back(rep.round); });
  CHECK(seen == std::vector<std::size_t>{1, 2, 3});

  // prototypes reaching round t are the aggregate of round t-1; round 1 gets none
  ModelParams w = f.init;
  std::optional<PrototypeSet> g;
  for (std::size_t t = 1; t <= 3; ++t) {
    std::vector<ModelParams> ps;
    std::vector<std::size_t> sizes;
    std::vector<PrototypeSet> zs;
    for (std::size_t id : {std::size_t{0}, std::size_t{2}}) {
      const auto lr = local_update(f.train, {id, shards[id], derive_seed(21, t, id)}, w, g, s.round);
      ps.push_back(lr.params);
      sizes.push_back(lr.num_samples);
      zs.push_back(lr.prototypes);
    }
    w = fedavg(ps, sizes);
    g = aggregate_global(zs);
  }
  CHECK(r.server.params == w);
  REQUIRE(r.server.prototypes.has_value());
  CHECK(*r.server.prototypes == *g);
  CHECK(r.server.round == 3);
}

TEST_CASE("run_training is schedule independent") {
  Fixture f;
  TrainingSetup s;
  s.shards = dirichlet_partition(f.train, {4, 0.5, 2});
  s.initial = f.init;
  s.round = f.round(Method::kFatcc);
  s.eval_attacks = eval_suite();
  s.rounds = 3;
  s.master_seed = 8;
  const auto seq = run_training(f.train, f.test, s);
  s.round.workers = 4;
  const auto par = run_training(f.train, f.test, s);
  CHECK(seq.server.params == par.server.params);
  REQUIRE(seq.reports.size() == par.reports.size());
  for (std::size_t i = 0; i < seq.reports.size(); ++i) {
    CHECK(seq.reports[i].clean_accuracy == par.reports[i].clean_accuracy);
    CHECK(seq.reports[i].robust_accuracy == par.reports[i].robust_accuracy);
    CHECK(seq.reports[i].train_loss == par.reports[i].train_loss);
  }
}

TEST_CASE("run_training: partial participation is seeded") {
  Fixture f;
  TrainingSetup s;
  s.shards = dirichlet_partition(f.train, {4, 5.0, 2});
  s.initial = f.init;
  s.round = f.round(Method::kFst);
  s.round.clients_per_round = 2;
  s.eval_attacks = eval_suite();
  s.rounds = 2;
  const auto a = run_training(f.train, f.test, s);
  const auto b = run_training(f.train, f.test, s);
  CHECK(a.server.params == b.server.params);
}

TEST_CASE("run_training errors") {
  Fixture f;
  TrainingSetup s;
  s.shards = {ClientShard{0, {}}};
  s.initial = f.init;
  s.round = f.round(Method::kFst);
  CHECK_THROWS_AS(run_training(f.train, f.test, s), DomainError);
  s.shards = {f.all()};
  s.rounds = 0;
  CHECK_THROWS_AS(run_training(f.train, f.test, s), DomainError);
  s.rounds = 1;
  s.initial = init_mlp(std::vector<std::size_t>{6, 4, 5}, 1);
  CHECK_THROWS_AS(run_training(f.train, f.test, s), ShapeError);

  // a diverging client is reported with its round and id
  s.initial = f.init;
  s.round.train.learning_rate = 1e300;
  s.round.train.batch_size = 4;
  CHECK_THROWS_WITH(run_training(f.train, f.test, s), doctest::Contains("round 1, client 0"));
}

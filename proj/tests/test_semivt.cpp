#include <cmath>

#include "doctest.h"
#include "sslv/data.hpp"
#include "sslv/rng.hpp"
#include "sslv/semivt.hpp"

using namespace sslv;
using namespace sslv::semivt;

TEST_CASE("prototype EMA updates") {
  PrototypeStore store(2, 3, 0.9);
  CHECK(!store.initialized(0));

  // first update copies the embedding
  store.update(0, std::vector<double>{0.0, 0.0, 0.0});
  CHECK(store.initialized(0));
  for (double v : store.prototype(0)) CHECK(v == 0.0);

  // one EMA step from the zero vector toward ones
  store.update(0, std::vector<double>{1.0, 1.0, 1.0});
  for (double v : store.prototype(0)) CHECK(v == doctest::Approx(0.1).epsilon(1e-12));

  CHECK_THROWS_AS(store.update(5, std::vector<double>{0, 0, 0}), InvalidInput);
  CHECK_THROWS_AS(store.update(0, std::vector<double>{0, 0}), InvalidInput);
  CHECK_THROWS_AS(store.update(0, std::vector<double>{0, 0, std::nan("")}),
                  InvalidInput);
}

TEST_CASE("prototype converges geometrically to a stationary embedding") {
  const double alpha = 0.9;
  PrototypeStore store(2, 4, alpha);
  const std::vector<double> p0{2.0, -1.0, 0.5, 3.0};
  const std::vector<double> e{0.25, 0.75, -0.5, 1.0};
  store.update(1, p0);
  double initial_gap = 0.0;
  for (int i = 0; i < 4; ++i) initial_gap += (p0[i] - e[i]) * (p0[i] - e[i]);
  initial_gap = std::sqrt(initial_gap);

  const int steps = 10;
  for (int t = 0; t < steps; ++t) store.update(1, e);
  double gap = 0.0;
  const auto p = store.prototype(1);
  for (int i = 0; i < 4; ++i) gap += (p[i] - e[i]) * (p[i] - e[i]);
  gap = std::sqrt(gap);
  CHECK(std::abs(gap - std::pow(alpha, steps) * initial_gap) <= 1e-9);
}

TEST_CASE("prototypes stay finite under random updates") {
  PrototypeStore store(3, 8, 0.95);
  rng::Xoshiro256ss gen(4242);
  std::vector<double> e(8);
  for (int i = 0; i < 10000; ++i) {
    for (double& v : e) v = gen.uniform(-10.0, 10.0);
    store.update(static_cast<int>(gen.uniform_int(0, 2)), e);
  }
  for (int cls = 0; cls < 3; ++cls) {
    for (double v : store.prototype(cls)) {
      CHECK(std::isfinite(v));
      CHECK(std::abs(v) <= 10.0);
    }
  }
}

TEST_CASE("hard negative prototype selection") {
  PrototypeStore store(3, 2, 0.9);
  store.update(0, std::vector<double>{0.0, 0.0});
  CHECK(!store.hard_negative(std::vector<double>{0.0, 0.0}, 0).has_value());

  store.update(1, std::vector<double>{0.3, 0.0});
  store.update(2, std::vector<double>{0.9, 0.0});
  const auto neg = store.hard_negative(std::vector<double>{0.0, 0.0}, 0);
  CHECK(neg.value() == 1);

  // two-class problem: the only other class
  PrototypeStore two(2, 2, 0.9);
  two.update(1, std::vector<double>{5.0, 5.0});
  CHECK(two.hard_negative(std::vector<double>{0.0, 0.0}, 0).value() == 1);
}

TEST_CASE("triplet loss hinge arithmetic") {
  // d+ = 0.1, d- = 0.5, margin 0.2 -> satisfied
  CHECK(clp_triplet_loss(std::vector<double>{0.0}, std::vector<double>{0.1},
                         std::vector<double>{0.5}, 0.2) == doctest::Approx(0.0));
  // d+ = 0.5, d- = 0.1, margin 0.2 -> 0.6
  CHECK(clp_triplet_loss(std::vector<double>{0.0}, std::vector<double>{0.5},
                         std::vector<double>{0.1}, 0.2) == doctest::Approx(0.6));
  // e == p+ == p- -> loss = margin
  const std::vector<double> same{0.3, 0.4};
  CHECK(clp_triplet_loss(same, same, same, 0.2) == doctest::Approx(0.2));
  CHECK_THROWS_AS(clp_triplet_loss(std::vector<double>{0.0},
                                   std::vector<double>{0.1, 0.2},
                                   std::vector<double>{0.5}, 0.2),
                  InvalidInput);
}

TEST_CASE("triplet gradient matches finite differences away from the hinge") {
  rng::Xoshiro256ss gen(606);
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 40; ++trial) {
    const int d = 5;
    std::vector<double> e(d), p(d), n(d);
    for (int i = 0; i < d; ++i) {
      e[i] = gen.uniform(-1.0, 1.0);
      p[i] = gen.uniform(-1.0, 1.0);
      n[i] = gen.uniform(-1.0, 1.0);
    }
    const double margin = 0.3;
    const double loss = clp_triplet_loss(e, p, n, margin);
    if (std::abs(loss) < 0.05) continue;  // too close to the hinge
    std::vector<double> grad(d);
    clp_triplet_loss_grad(e, p, n, margin, grad);
    const double h = 1e-6;
    for (int i = 0; i < d; ++i) {
      auto up = e, down = e;
      up[i] += h;
      down[i] -= h;
      const double fd = (clp_triplet_loss(up, p, n, margin) -
                         clp_triplet_loss(down, p, n, margin)) /
                        (2 * h);
      const double denom = std::max({1e-6, std::abs(fd), std::abs(grad[i])});
      CHECK(std::abs(fd - grad[i]) / denom < 1e-4);
    }
    ++checked;
  }
  CHECK(checked >= 20);
}

TEST_CASE("tcr_loss thresholding and cross-entropy") {
  const std::vector<double> teacher{0.9, 0.1};
  const std::vector<double> student{0.5, 0.5};
  const auto [loss, counted] = tcr_loss(teacher, student, 0.8);
  CHECK(counted);
  CHECK(loss == doctest::Approx(0.693147).epsilon(1e-5));

  const auto [l2, c2] = tcr_loss(std::vector<double>{0.6, 0.4}, student, 0.8);
  CHECK(!c2);
  CHECK(l2 == 0.0);

  const auto [l3, c3] = tcr_loss(teacher, std::vector<double>{1.0, 0.0}, 0.8);
  CHECK(c3);
  CHECK(l3 == doctest::Approx(0.0));

  // identical one-hot teacher and student
  const auto [l4, c4] = tcr_loss(std::vector<double>{1.0, 0.0},
                                 std::vector<double>{1.0, 0.0}, 0.8);
  CHECK(c4);
  CHECK(l4 == doctest::Approx(0.0));

  CHECK_THROWS_AS(tcr_loss(std::vector<double>{0.9, 0.2}, student, 0.8),
                  InvalidInput);
  CHECK_THROWS_AS(tcr_loss(teacher, std::vector<double>{0.5}, 0.8), InvalidInput);
}

TEST_CASE("raising tau never lets more samples through") {
  rng::Xoshiro256ss gen(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> teacher(4), student{0.25, 0.25, 0.25, 0.25};
    double sum = 0.0;
    for (double& v : teacher) {
      v = gen.uniform(0.0, 1.0);
      sum += v;
    }
    for (double& v : teacher) v /= sum;
    int previous = 1;
    for (double tau : {0.3, 0.5, 0.7, 0.9, 0.99}) {
      const auto [loss, counted] = tcr_loss(teacher, student, tau);
      CHECK(static_cast<int>(counted) <= previous);
      previous = counted;
    }
  }
}

TEST_CASE("EMA teacher matches the closed-form trajectory") {
  const double m = 0.99;
  rng::Xoshiro256ss gen(2);
  std::vector<double> students(10);
  for (double& s : students) s = gen.uniform(-1.0, 1.0);
  const double theta0 = 0.5;

  double teacher = theta0;
  for (double s : students) teacher = m * teacher + (1.0 - m) * s;

  double closed = std::pow(m, 10) * theta0;
  for (int i = 0; i < 10; ++i)
    closed += (1.0 - m) * std::pow(m, 9 - i) * students[static_cast<size_t>(i)];
  CHECK(std::abs(teacher - closed) <= 1e-9);
}

namespace {

struct TinyData {
  models::ModelConfig mcfg;
  data::ClipDataset dataset;
  std::vector<models::LabeledClip> labeled;
  std::vector<const core::VideoClip*> unlabeled;
  std::vector<models::LabeledClip> val;
};

TinyData tiny_data() {
  TinyData s;
  s.mcfg.num_classes = 2;
  s.mcfg.frames_per_view = 4;
  s.mcfg.height = 8;
  s.mcfg.width = 8;
  s.mcfg.embed_dim = 4;
  s.mcfg.conv1_channels = 2;
  s.mcfg.conv2_channels = 3;
  s.mcfg.head = models::HeadType::recurrent;

  data::SyntheticClipSpec spec;
  spec.num_classes = 2;
  spec.clips_per_class = 5;
  spec.frames = 8;
  spec.height = 8;
  spec.width = 8;
  spec.noise_sigma = 0.05;
  spec.seed = 31;
  s.dataset = data::generate_clip_dataset(spec);
  for (size_t i = 0; i < s.dataset.clips.size(); ++i) {
    const auto& clip = s.dataset.clips[i];
    if (i % 5 == 0)
      s.labeled.push_back({&clip, clip.label.value()});
    else if (i % 5 == 1)
      s.val.push_back({&clip, clip.label.value()});
    else
      s.unlabeled.push_back(&clip);
  }
  return s;
}

}  // namespace

TEST_CASE("fully ablated SemiVT replays the supervised trajectory bit-exactly") {
  auto s = tiny_data();
  SemiVtConfig cfg;
  cfg.model = s.mcfg;
  cfg.train.epochs = 4;
  cfg.train.batch_size = 2;
  cfg.lambda_clp = 0.0;
  cfg.lambda_tcr = 0.0;
  cfg.seed = 14;
  cfg.train.seed = 14;
  const auto result = train_semivt(s.labeled, s.unlabeled, s.val,
                                   s.dataset.label_space, cfg);

  models::ClipClassifier baseline(s.mcfg, rng::derive_seed(14, rng::salt::kInit));
  models::TrainConfig tc = cfg.train;
  tc.seed = 14;
  models::train_supervised(baseline, s.labeled, tc);

  CHECK(std::vector<double>(result.student.parameters().begin(),
                            result.student.parameters().end()) ==
        std::vector<double>(baseline.parameters().begin(),
                            baseline.parameters().end()));
}

TEST_CASE("tau = 1.0 keeps TCR silent") {
  auto s = tiny_data();
  SemiVtConfig cfg;
  cfg.model = s.mcfg;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 2;
  cfg.tau = 1.0;
  cfg.seed = 15;
  cfg.train.seed = 15;
  const auto result = train_semivt(s.labeled, s.unlabeled, s.val,
                                   s.dataset.label_space, cfg);
  for (const auto& epoch : result.epochs) {
    CHECK(epoch.tcr_pass_fraction == 0.0);
    CHECK(epoch.loss_tcr == 0.0);
  }
}

TEST_CASE("train_semivt reports epochs and validates inputs") {
  auto s = tiny_data();
  SemiVtConfig cfg;
  cfg.model = s.mcfg;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 2;
  cfg.seed = 16;
  cfg.train.seed = 16;
  const auto result = train_semivt(s.labeled, s.unlabeled, s.val,
                                   s.dataset.label_space, cfg);
  REQUIRE(result.epochs.size() == 3);
  for (const auto& e : result.epochs) {
    CHECK(e.loss_sup >= 0.0);
    CHECK(e.tcr_pass_fraction >= 0.0);
    CHECK(e.tcr_pass_fraction <= 1.0);
    CHECK(e.val_accuracy >= 0.0);
    CHECK(e.val_accuracy <= 1.0);
  }
  CHECK_THROWS_AS(train_semivt({}, s.unlabeled, s.val, s.dataset.label_space, cfg),
                  InvalidInput);
  cfg.tau = 0.0;
  CHECK_THROWS_AS(train_semivt(s.labeled, s.unlabeled, s.val,
                               s.dataset.label_space, cfg),
                  InvalidInput);
}

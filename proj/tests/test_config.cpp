#include <gtest/gtest.h>

#include <cmath>

#include "bregprior/config.hpp"

using namespace bregprior;

namespace {

std::string error_key(const std::string& text) {
  try {
    (void)parse_config(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

}  // namespace

TEST(Config, EmptyTextGivesDefaults) {
  const RunConfig c = parse_config("");
  EXPECT_EQ(c.testbed.rows, 64u);
  EXPECT_EQ(c.testbed.experiments, 64u);
  EXPECT_DOUBLE_EQ(c.testbed.sampling_fraction, 0.25);
  EXPECT_DOUBLE_EQ(c.testbed.snr_db, -11.37);
  EXPECT_EQ(c.bregman.iterations, 350u);
  EXPECT_EQ(c.stats.samples, 3200u);
  EXPECT_EQ(c.stats.std, StdConvention::Population);
  EXPECT_EQ(c.net.arch(c.shape()).output_shape(), (Shape{64, 64}));
  EXPECT_NEAR(c.net.resolved_init_scale(), std::sqrt(2.0 / 1.04), 1e-15);
}

TEST(Config, ReadsEverySection) {
  const RunConfig c = parse_config(R"(
[testbed]
rows = 32
cols = 16
kernel = ricker
snr_db = inf
gamma = 0
[constraints]
sets = box, l2
l2_radius = 3.5
[net]
base_rows = 4
base_cols = 2
stages = 3
[bregman]
iterations = 12
steplength = data_only
[sgld]
epsilon = 0.05
potential = half_latent
[em]
tuples = 3
loss = sum
[stats]
samples = 10
probes = 1:2 3:4
std = sample
)");
  EXPECT_EQ(c.testbed.kernel.kind, KernelSpec::Kind::Ricker);
  EXPECT_TRUE(std::isinf(c.testbed.snr_db));
  EXPECT_EQ(c.testbed.gamma, 0.0);
  EXPECT_EQ(c.constraints.sets, (std::vector<std::string>{"box", "l2"}));
  const auto stack = c.constraints.build(c.shape());
  ASSERT_EQ(stack.sets.size(), 2u);
  EXPECT_DOUBLE_EQ(std::get<L2Ball>(stack.sets[1]).radius, 3.5);
  EXPECT_EQ(c.bregman.options.rule, SteplengthRule::DataOnly);
  EXPECT_EQ(c.sgld.potential, LatentPotential::HalfLatent);
  EXPECT_EQ(c.em.loss, MStepLoss::Sum);
  EXPECT_EQ(c.stats.probes, (std::vector<Pixel>{{1, 2}, {3, 4}}));
  EXPECT_EQ(c.stats.std, StdConvention::Sample);
  EXPECT_EQ(c.train_config().tuples, 3u);
}

TEST(Config, UnknownKeysAndSectionsNameTheKey) {
  EXPECT_EQ(error_key("[em]\nrate = 1\n"), "em.rate");
  EXPECT_EQ(error_key("[testbed]\nrows = 32\nsnr = 3\n"), "testbed.snr");
  EXPECT_EQ(error_key("[solver]\niterations = 3\n"), "solver");
  EXPECT_EQ(error_key("iterations = 3\n"), "iterations");
}

TEST(Config, BadValuesNameTheKey) {
  EXPECT_EQ(error_key("[testbed]\nrows = many\n"), "testbed.rows");
  EXPECT_EQ(error_key("[testbed]\nrows = 8\n"), "testbed.rows");
  EXPECT_EQ(error_key("[testbed]\nsampling_fraction = 1.5\n"), "testbed.sampling_fraction");
  EXPECT_EQ(error_key("[sgld]\nepsilon = 2\n"), "sgld.epsilon");
  EXPECT_EQ(error_key("[constraints]\nsets = box, l2\n"), "constraints.l2_radius");
  EXPECT_EQ(error_key("[constraints]\nsets = simplex\n"), "constraints.sets");
  EXPECT_EQ(error_key("[net]\nstages = 2\n"), "net.stages");
  EXPECT_EQ(error_key("[em]\nthreads = 0\n"), "em.threads");
  EXPECT_EQ(error_key("[stats]\nprobes = 1-2\n"), "stats.probes");
  EXPECT_EQ(error_key("[bregman]\ntrack_objective = maybe\n"), "bregman.track_objective");
}

TEST(Config, ResolvedTextReparsesToTheSameConfig) {
  RunConfig c = parse_config("[testbed]\nrows = 32\ncols = 32\ngamma = 0.25\n[em]\nrounds = 7\n[stats]\nprobes = 0:1\n");
  const std::string text = render_config(c);
  EXPECT_EQ(render_config(parse_config(text)), text);
  c.override_seed(99);
  const RunConfig back = parse_config(render_config(c));
  EXPECT_EQ(back.testbed.noise_seed, 99u);
  EXPECT_EQ(back.em.seed, 99u);
  EXPECT_EQ(back.net.seed, 99u);
  EXPECT_EQ(back.em.lambda_ramp_rounds, 3u);
}

TEST(Config, MissingFileIsAConfigError) {
  EXPECT_THROW((void)load_config("/nonexistent/run.ini"), ConfigError);
}

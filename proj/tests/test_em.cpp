#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "bregprior/em.hpp"
#include "bregprior/testbed.hpp"
#include "support/projection_cases.hpp"
#include "support/test_util.hpp"

using namespace bregprior;
using cases::stack_of;

namespace {

struct Fixture {
  Survey survey;
  ConstraintStack stack = stack_of({BoxSet{-1, 1}, L1Ball{128.0}});
  Generator net{NetArch::small()};
  std::vector<double> w0 = net_init(NetArch::small(), 4, 1.0);

  explicit Fixture(std::size_t experiments = 8) {
    const GroundTruth truth = make_ground_truth({16, 16}, 1);
    survey = make_bank(truth, experiments, KernelSpec{}, 0.5, 2);
    NoiseSpec noise;
    noise.target_snr_db = 5.0;
    add_noise_to_snr(survey, truth, noise, 3);
  }
  const ExperimentBank& bank() const { return survey.bank; }
};

TrainConfig small_config() {
  TrainConfig c;
  c.tuples = 4;
  c.rounds = 3;
  c.bregman_steps_per_round = 4;
  c.sgld.steps = 5;
  c.lambda = {0.5, 1.0, 2};
  c.eta = 1e-4;
  c.seed = 11;
  return c;
}

NetArch scalar_arch() {
  NetArch a;
  a.latent_dim = 1;
  a.base_rows = 1;
  a.base_cols = 1;
  a.base_channels = 1;
  a.stages = {};
  a.final_kernel = 0;
  a.dense_bias = false;
  return a;
}

void expect_same_tuples(const std::vector<TrainTuple>& a, const std::vector<TrainTuple>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].experiment_ids, b[i].experiment_ids);
    EXPECT_EQ(a[i].state.primal, b[i].state.primal);
    EXPECT_EQ(a[i].state.dual, b[i].state.dual);
    EXPECT_EQ(a[i].state.iter, b[i].state.iter);
    EXPECT_EQ(a[i].z, b[i].z);
  }
}

}  // namespace

TEST(InitTuples, RoundRobinPartition) {
  const Fixture f(10);
  const auto t = init_tuples(f.bank(), 3, 64, 1);
  EXPECT_EQ(t[0].experiment_ids, (std::vector<std::size_t>{0, 3, 6, 9}));
  EXPECT_EQ(t[1].experiment_ids, (std::vector<std::size_t>{1, 4, 7}));
  EXPECT_EQ(t[2].experiment_ids, (std::vector<std::size_t>{2, 5, 8}));
  std::set<std::size_t> seen;
  for (const auto& tu : t) {
    EXPECT_EQ(tu.state.primal, Grid(16, 16));
    EXPECT_EQ(tu.state.dual, Grid(16, 16));
    for (std::size_t k : tu.experiment_ids) EXPECT_TRUE(seen.insert(k).second);
  }
  EXPECT_EQ(seen.size(), 10u);
}

TEST(InitTuples, ExtremeCounts) {
  const Fixture f(6);
  const auto each = init_tuples(f.bank(), 6, 8, 1);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(each[i].experiment_ids, (std::vector<std::size_t>{i}));
  const auto one = init_tuples(f.bank(), 1, 8, 1);
  EXPECT_EQ(one[0].experiment_ids.size(), 6u);
  EXPECT_THROW((void)init_tuples(f.bank(), 7, 8, 1), std::invalid_argument);
  EXPECT_THROW((void)init_tuples(f.bank(), 0, 8, 1), std::invalid_argument);
}

TEST(InitTuples, LatentStatistics) {
  const Fixture f(16);
  const auto t = init_tuples(f.bank(), 16, 64, 5);
  double sum = 0.0, sq = 0.0;
  for (const auto& tu : t)
    for (double v : tu.z) {
      sum += v;
      sq += v * v;
    }
  const double n = 16.0 * 64.0;
  const double mean = sum / n;
  EXPECT_LT(std::abs(mean), 0.1);
  EXPECT_LT(std::abs(sq / n - mean * mean - 1.0), 0.1);
  EXPECT_NE(t[0].z, t[1].z);
}

TEST(Schedule, LinearRampThenConstant) {
  const LambdaSchedule s{1.0, 3.0, 4};
  EXPECT_DOUBLE_EQ(s.at(0), 1.0);
  EXPECT_DOUBLE_EQ(s.at(2), 2.0);
  EXPECT_DOUBLE_EQ(s.at(4), 3.0);
  EXPECT_DOUBLE_EQ(s.at(40), 3.0);
  EXPECT_DOUBLE_EQ((LambdaSchedule{1.0, 3.0, 0}).at(0), 3.0);
}

TEST(Schedule, RadiusRelaxation) {
  TrainConfig c;
  c.lambda = {1.0, 1.0, 4};
  c.radius_scale_final = 3.0;
  const ConstraintStack base = stack_of({BoxSet{-1, 1}, L1Ball{10.0}, TvBall{2.0}});
  const auto mid = stack_for_round(base, c, 2);
  EXPECT_DOUBLE_EQ(std::get<L1Ball>(mid.sets[1]).radius, 20.0);
  EXPECT_DOUBLE_EQ(std::get<TvBall>(mid.sets[2]).radius, 4.0);
  EXPECT_DOUBLE_EQ(std::get<BoxSet>(mid.sets[0]).hi, 1.0);
  EXPECT_DOUBLE_EQ(std::get<L1Ball>(stack_for_round(base, c, 9).sets[1]).radius, 30.0);
}

TEST(MStep, ScalarHandArithmetic) {
  const Generator net(scalar_arch());
  std::vector<double> w{0.0};
  TrainTuple t;
  t.z = {1.0};
  t.state = {Grid(1, 1, 1.0), Grid(1, 1, 1.0), 0};
  const auto rep = m_step({t}, net, w, 0.5);
  EXPECT_DOUBLE_EQ(rep.loss, 1.0);
  EXPECT_DOUBLE_EQ(w[0], 1.0);
}

TEST(MStep, SumIsNTimesMean) {
  const Generator net(scalar_arch());
  std::vector<TrainTuple> ts(2);
  ts[0].z = {1.0};
  ts[0].state = {Grid(1, 1, 1.0), Grid(1, 1, 1.0), 0};
  ts[1].z = {2.0};
  ts[1].state = {Grid(1, 1, -1.0), Grid(1, 1, -1.0), 0};
  std::vector<double> wm{0.5}, ws{0.5};
  const auto mean = m_step(ts, net, wm, 0.1, MStepLoss::Mean);
  const auto sum = m_step(ts, net, ws, 0.1, MStepLoss::Sum);
  // losses (1 − 0.5)² and (−1 − 1)², gradients −2·0.5·1 and 2·2·2
  EXPECT_DOUBLE_EQ(sum.loss, 0.25 + 4.0);
  EXPECT_DOUBLE_EQ(mean.loss, 0.5 * (0.25 + 4.0));
  EXPECT_DOUBLE_EQ(ws[0], 0.5 - 0.1 * (-1.0 + 8.0));
  EXPECT_DOUBLE_EQ(wm[0], 0.5 - 0.1 * 0.5 * (-1.0 + 8.0));
}

TEST(MStep, FixedPointAndZeroStepLeaveWeights) {
  const Fixture f;
  auto tuples = init_tuples(f.bank(), 3, 64, 2);
  for (auto& t : tuples) t.state.primal = f.net.forward(f.w0, t.z);
  auto w = f.w0;
  const auto rep = m_step(tuples, f.net, w, 0.1);
  EXPECT_EQ(rep.loss, 0.0);
  EXPECT_EQ(w, f.w0);
  for (auto& t : tuples) t.state.primal = testutil::gaussian_grid(16, 16, t.id);
  m_step(tuples, f.net, w, 0.0);
  EXPECT_EQ(w, f.w0);
}

TEST(MStep, AscendingReductionOrder) {
  const Fixture f;
  auto tuples = init_tuples(f.bank(), 4, 64, 3);
  for (auto& t : tuples) t.state.primal = testutil::gaussian_grid(16, 16, 50 + t.id, 0.3);
  auto w = f.w0;
  m_step(tuples, f.net, w, 1e-3);
  std::vector<double> grad(w.size(), 0.0);
  for (const auto& t : tuples) {
    const Grid g = f.net.forward(f.w0, t.z);
    Grid up(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) up[i] = 2.0 * 0.25 * (g[i] - t.state.primal[i]);
    const auto gw = f.net.backward(f.w0, t.z, up).grad_w;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += gw[i];
  }
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(w[i], f.w0[i] - 1e-3 * grad[i]) << i;
}

TEST(MStep, NonFiniteAborts) {
  const Generator net(scalar_arch());
  std::vector<double> w{0.0};
  TrainTuple t;
  t.z = {1.0};
  t.state = {Grid(1, 1), Grid(1, 1, std::numeric_limits<double>::infinity()), 0};
  EXPECT_THROW(m_step({t}, net, w, 0.5), NumericalAbort);
}

TEST(EStep, NothingToDoLeavesTuplesUnchanged) {
  const Fixture f;
  TrainConfig c = small_config();
  c.bregman_steps_per_round = 0;
  c.sgld.steps = 0;
  auto tuples = init_tuples(f.bank(), 4, 64, 1);
  const auto before = tuples;
  e_step(tuples, f.bank(), f.net, f.w0, 1.0, f.stack, c, 0);
  expect_same_tuples(tuples, before);
}

TEST(EStep, ZeroLambdaDecouplesFromTheNet) {
  const Fixture f;
  TrainConfig c = small_config();
  c.sgld.steps = 0;
  auto a = init_tuples(f.bank(), 4, 64, 1);
  auto b = a;
  const auto other = net_init(f.net.arch(), 99, 3.0);
  e_step(a, f.bank(), f.net, f.w0, 0.0, f.stack, c, 0);
  e_step(b, f.bank(), f.net, other, 0.0, f.stack, c, 0);
  expect_same_tuples(a, b);
}

TEST(EStep, DrawsStayInsideTheBatch) {
  const Fixture f;
  TrainConfig c = small_config();
  TrainHooks hooks;
  hooks.on_step = [&](const TrainTuple& t, const StepRecord& r) {
    EXPECT_NE(std::find(t.experiment_ids.begin(), t.experiment_ids.end(), r.experiment), t.experiment_ids.end());
  };
  auto tuples = init_tuples(f.bank(), 4, 64, 1);
  e_step(tuples, f.bank(), f.net, f.w0, 1.0, f.stack, c, 0, hooks);
}

TEST(EStep, FeasibleAfterOneRound) {
  const Fixture f;
  auto tuples = init_tuples(f.bank(), 4, 64, 1);
  e_step(tuples, f.bank(), f.net, f.w0, 1.0, f.stack, small_config(), 0);
  for (const auto& t : tuples) EXPECT_TRUE(is_feasible(t.state.primal, f.stack, f.stack.dykstra_tol).feasible);
}

TEST(EStep, ScheduleIndependent) {
  const Fixture f;
  TrainConfig seq = small_config();
  TrainConfig par = seq;
  par.threads = 3;
  auto a = init_tuples(f.bank(), 4, 64, 1);
  auto b = a;
  e_step(a, f.bank(), f.net, f.w0, 1.0, f.stack, seq, 0);
  e_step(b, f.bank(), f.net, f.w0, 1.0, f.stack, par, 0);
  expect_same_tuples(a, b);
}

TEST(Train, ZeroRoundsReturnsInitialState) {
  const Fixture f;
  TrainConfig c = small_config();
  c.rounds = 0;
  const TrainState init = initial_train_state(f.bank(), f.net, f.w0, c);
  const auto r = train(f.bank(), f.stack, f.net, init, c);
  EXPECT_TRUE(r.rounds.empty());
  EXPECT_EQ(r.state.weights, f.w0);
  expect_same_tuples(r.state.tuples, init.tuples);
}

TEST(Train, ReducesToPlainInversion) {
  const Fixture f;
  TrainConfig c = small_config();
  c.tuples = 1;
  c.sgld.steps = 0;
  c.lambda = {0.0, 0.0, 0};
  c.eta = 0.0;
  c.rounds = 5;
  c.bregman_steps_per_round = 7;
  const auto r = train(f.bank(), f.stack, f.net, initial_train_state(f.bank(), f.net, f.w0, c), c);
  const auto plain = run_bregman(f.bank(), f.stack, 35, c.seed);
  ASSERT_EQ(r.bregman_traces[0].size(), plain.trace.size());
  for (std::size_t i = 0; i < plain.trace.size(); ++i)
    EXPECT_EQ(trace_row(r.bregman_traces[0][i]), trace_row(plain.trace[i]));
  EXPECT_EQ(r.state.tuples[0].state.primal, plain.state.primal);
  EXPECT_EQ(r.state.weights, f.w0);
}

TEST(Train, ThreadCountDoesNotChangeResults) {
  const Fixture f;
  TrainConfig seq = small_config();
  TrainConfig par = seq;
  par.threads = 4;
  const auto a = train(f.bank(), f.stack, f.net, initial_train_state(f.bank(), f.net, f.w0, seq), seq);
  const auto b = train(f.bank(), f.stack, f.net, initial_train_state(f.bank(), f.net, f.w0, par), par);
  EXPECT_EQ(a.state.weights, b.state.weights);
  expect_same_tuples(a.state.tuples, b.state.tuples);
  for (std::size_t i = 0; i < a.rounds.size(); ++i) EXPECT_EQ(round_trace_row(a.rounds[i]), round_trace_row(b.rounds[i]));
}

TEST(Train, RoundRecordsAndFeasibility) {
  const Fixture f;
  const TrainConfig c = small_config();
  std::size_t rounds_seen = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const TrainTuple& t, const StepRecord&) {
    EXPECT_TRUE(is_feasible(t.state.primal, f.stack, f.stack.dykstra_tol).feasible);
  };
  hooks.on_round = [&](const TrainState& s, const RoundRecord& r) {
    EXPECT_EQ(s.round, r.round);
    ++rounds_seen;
  };
  const auto r = train(f.bank(), f.stack, f.net, initial_train_state(f.bank(), f.net, f.w0, c), c, hooks);
  EXPECT_EQ(rounds_seen, 3u);
  ASSERT_EQ(r.rounds.size(), 3u);
  EXPECT_DOUBLE_EQ(r.rounds[0].lambda, 0.5);
  EXPECT_DOUBLE_EQ(r.rounds[1].lambda, 0.75);
  EXPECT_DOUBLE_EQ(r.rounds[2].lambda, 1.0);
  for (const auto& rec : r.rounds) {
    EXPECT_TRUE(std::isfinite(rec.mean_data_misfit));
    EXPECT_TRUE(std::isfinite(rec.mean_prior_misfit));
    EXPECT_GT(rec.m_loss, 0.0);
  }
  EXPECT_NE(r.state.weights, f.w0);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const Fixture f;
  TrainConfig c = small_config();
  c.rounds = 4;
  const auto full = train(f.bank(), f.stack, f.net, initial_train_state(f.bank(), f.net, f.w0, c), c);

  TrainHooks stop;
  stop.stop_after_round = 2;
  const auto half = train(f.bank(), f.stack, f.net, initial_train_state(f.bank(), f.net, f.w0, c), c, stop);
  EXPECT_EQ(half.state.round, 2u);
  const auto dir = testutil::scratch_dir("em_resume");
  write_checkpoint(dir, f.net.arch(), half.state);
  const TrainState restored = read_checkpoint(dir, f.net.arch());
  EXPECT_EQ(restored.round, 2u);
  EXPECT_EQ(restored.weights, half.state.weights);
  expect_same_tuples(restored.tuples, half.state.tuples);

  const auto rest = train(f.bank(), f.stack, f.net, restored, c);
  EXPECT_EQ(rest.state.weights, full.state.weights);
  expect_same_tuples(rest.state.tuples, full.state.tuples);
  ASSERT_EQ(rest.rounds.size(), 2u);
  EXPECT_EQ(round_trace_row(rest.rounds[1]), round_trace_row(full.rounds[3]));
}

TEST(Train, RejectsBadConfig) {
  const Fixture f;
  TrainConfig c = small_config();
  c.tuples = 9;
  EXPECT_THROW((void)initial_train_state(f.bank(), f.net, f.w0, c), std::invalid_argument);
  c = small_config();
  c.sgld.epsilon = 2.5;
  EXPECT_THROW((void)initial_train_state(f.bank(), f.net, f.w0, c), std::invalid_argument);
  c = small_config();
  EXPECT_THROW((void)initial_train_state(f.bank(), f.net, std::vector<double>(3), c), std::invalid_argument);
}

namespace {

double max_pairwise_distance(const std::vector<TrainTuple>& tuples) {
  double d = 0.0;
  for (std::size_t i = 0; i < tuples.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      d = std::max(d, std::sqrt(vec::dist_sq(tuples[i].state.primal.span(), tuples[j].state.primal.span())));
  return d;
}

}  // namespace

TEST(Train, TuplesSpreadLessUnderStrongerCoupling) {
  // Every tuple is pulled toward the same generator output, so a larger λ
  // leaves less room for the tuples to differ.
  const Fixture f;
  TrainConfig c = small_config();
  c.rounds = 4;
  c.bregman_steps_per_round = 10;
  c.sgld.steps = 0;
  c.eta = 0.0;
  auto spread = [&](double lambda) {
    c.lambda = {lambda, lambda, 0};
    TrainState s = initial_train_state(f.bank(), f.net, f.w0, c);
    for (auto& t : s.tuples) t.z = s.tuples[0].z;
    return max_pairwise_distance(train(f.bank(), f.stack, f.net, s, c).state.tuples);
  };
  const double loose = spread(0.1);
  const double tight = spread(1.0);
  EXPECT_GT(loose, 0.0);
  EXPECT_LT(tight, loose);
}

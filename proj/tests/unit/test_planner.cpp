#include <gtest/gtest.h>

#include <cmath>

#include "dpn/planner/analysis.hpp"
#include "dpn/planner/plan.hpp"
#include "dpn/planner/trace_io.hpp"

using namespace dpn;
using namespace dpn::planner;

namespace {

model::ModelConfig tiny() {
  model::ModelConfig c;
  c.height = c.width = 4;
  c.conv_channels = 2;
  c.z_dim = 4;
  c.outer_hidden = 4;
  c.inner_hidden = 4;
  return c;
}

Value random_z(std::size_t n, Rng& rng) {
  std::vector<double> d(n);
  for (double& x : d) x = rng.uniform(-1.0, 1.0);
  return Value::constant(std::move(d));
}

PlanTrace trace_of(std::vector<Selection> sels, BranchingMode mode = BranchingMode::all) {
  PlanTrace t;
  t.T = static_cast<int>(sels.size());
  t.mode = mode;
  for (std::size_t i = 0; i < sels.size(); ++i) t.steps.push_back({static_cast<int>(i + 1), sels[i], 0, 0.0, 0.0, 0.0});
  t.final_hidden = {0.0};
  return t;
}

}  // namespace

TEST(TransitionCount, PaperArithmetic) {
  EXPECT_EQ(transition_count(CountMethod::exhaustive_tree, 4, 3), 84u);
  EXPECT_EQ(transition_count(CountMethod::dpn, 4, 3), 3u);
  EXPECT_EQ(transition_count(CountMethod::fixed_rollouts, 4, 3, 5), 20u);
  const double reduction = 100.0 * (1.0 - 3.0 / 84.0);
  EXPECT_NEAR(reduction, 96.4, 0.05);
}

TEST(TransitionCount, SmallestCase) {
  EXPECT_EQ(transition_count(CountMethod::exhaustive_tree, 2, 1), 2u);
  EXPECT_EQ(transition_count(CountMethod::dpn, 2, 1), 1u);
}

TEST(TransitionCount, RejectsDegenerateInputs) {
  EXPECT_THROW(transition_count(CountMethod::dpn, 1, 3), ContractViolation);
  EXPECT_THROW(transition_count(CountMethod::exhaustive_tree, 4, 0), ContractViolation);
  EXPECT_THROW(transition_count(CountMethod::fixed_rollouts, 4, 3), ContractViolation);
}

TEST(Classifier, FigurePatterns) {
  EXPECT_EQ(classify_pattern(trace_of({Selection::current, Selection::root, Selection::root})),
            Pattern::breadth_first);
  EXPECT_EQ(classify_pattern(trace_of({Selection::root, Selection::current, Selection::current})),
            Pattern::depth_first);
  EXPECT_EQ(classify_pattern(trace_of({Selection::root, Selection::current, Selection::previous})), Pattern::mixed);
  EXPECT_EQ(classify_pattern(trace_of({Selection::root, Selection::previous})), Pattern::mixed);
}

TEST(Classifier, FirstStepIsIgnored) {
  for (auto first : {Selection::previous, Selection::current, Selection::root}) {
    EXPECT_EQ(classify_pattern(trace_of({first, Selection::current})), Pattern::depth_first);
  }
}

TEST(Classifier, NeedsTwoSteps) {
  EXPECT_THROW(classify_pattern(trace_of({Selection::root})), ContractViolation);
}

TEST(Plan, InitialTripletIsRootEverywhere) {
  const auto m = model::Model::init(tiny(), 1);
  Rng rng(2);
  const Value z0 = random_z(4, rng);
  NoiseTape tape(rng);
  const auto r = plan(m, z0, {1, BranchingMode::all, model::Metric::l1, true}, tape);
  ASSERT_EQ(r.anchors.size(), 1u);
  const std::vector<double> z(z0.data().begin(), z0.data().end());
  EXPECT_EQ(r.anchors[0].previous, z);
  EXPECT_EQ(r.anchors[0].current, z);
  EXPECT_EQ(r.anchors[0].root, z);
  EXPECT_EQ(r.anchors[0].source, z);
}

TEST(Plan, InvariantsOverManyPlans) {
  Rng rng(3);
  int violations = 0;
  for (int k = 0; k < 2000; ++k) {
    const auto m = model::Model::init(tiny(), static_cast<std::uint64_t>(k % 20));
    const int T = 1 + static_cast<int>(rng.below(4));
    const auto mode = static_cast<BranchingMode>(rng.below(3));
    const Value z0 = random_z(4, rng);
    const std::vector<double> z(z0.data().begin(), z0.data().end());
    NoiseTape tape(rng);
    const auto before = model::transition_call_counter().load();
    const auto r = plan(m, z0, {T, mode, model::Metric::l1, true}, tape);
    violations += model::transition_call_counter().load() - before != static_cast<std::uint64_t>(T);
    violations += !r.trace.complete() || !satisfies_mode(r.trace);
    for (int t = 0; t < T; ++t) {
      const auto& a = r.anchors[static_cast<std::size_t>(t)];
      violations += a.root != z;
      if (t > 0) {
        const auto& prev = r.anchors[static_cast<std::size_t>(t - 1)];
        violations += a.previous != prev.current;
      }
      const auto sel = r.trace.steps[static_cast<std::size_t>(t)].selection;
      const auto& expected = sel == Selection::previous ? a.previous : sel == Selection::current ? a.current : a.root;
      violations += a.source != expected;
      if (mode == BranchingMode::reset) violations += a.source != z;
    }
  }
  EXPECT_EQ(violations, 0);
}

TEST(Plan, ReplayingNoiseReproducesTrace) {
  const auto m = model::Model::init(tiny(), 4);
  Rng rng(5);
  const Value z0 = random_z(4, rng);
  NoiseTape rec(rng);
  const auto first = plan(m, z0, {3, BranchingMode::all, model::Metric::l2, false}, rec);
  NoiseTape rep(rec.draws());
  const auto second = plan(m, z0, {3, BranchingMode::all, model::Metric::l2, false}, rep);
  EXPECT_EQ(first.trace, second.trace);
  EXPECT_EQ(rep.consumed(), rec.draws().size());
}

TEST(Plan, RecordedUtilitiesRecompute) {
  const auto m = model::Model::init(tiny(), 6);
  Rng rng(7);
  for (auto metric : {model::Metric::l1, model::Metric::l2, model::Metric::cosine, model::Metric::kl}) {
    const Value z0 = random_z(4, rng);
    NoiseTape tape(rng);
    const auto r = plan(m, z0, {3, BranchingMode::all, metric, false}, tape);
    const auto u = recompute_utilities(m, z0, r.trace, metric);
    for (std::size_t i = 0; i < u.size(); ++i) {
      EXPECT_DOUBLE_EQ(u[i].total, r.trace.steps[i].utility);
      EXPECT_DOUBLE_EQ(u[i].value_term + u[i].distance_term, u[i].total);
    }
  }
}

TEST(Plan, ForcedModesDrawOnlyActionNoise) {
  const auto m = model::Model::init(tiny(), 8);
  Rng rng(9);
  NoiseTape tape(rng);
  (void)plan(m, random_z(4, rng), {3, BranchingMode::current, model::Metric::l1, false}, tape);
  EXPECT_EQ(tape.draws().size(), 3u * 4u);
}

TEST(Plan, RejectsZeroLength) {
  const auto m = model::Model::init(tiny(), 1);
  Rng rng(1);
  NoiseTape tape(rng);
  EXPECT_THROW(plan(m, random_z(4, rng), {0, BranchingMode::all, model::Metric::l1, false}, tape),
               ContractViolation);
}

TEST(TraceIo, RoundTrip) {
  const auto m = model::Model::init(tiny(), 10);
  Rng rng(11);
  NoiseTape tape(rng);
  auto r = plan(m, random_z(4, rng), {3, BranchingMode::all, model::Metric::kl, false}, tape);
  r.trace.initial_state = "e0:s0";
  const auto line = export_trace(r.trace);
  EXPECT_EQ(import_trace(line), r.trace);
  EXPECT_EQ(export_trace(import_trace(line)), line);
}

TEST(TraceIo, RejectsMalformedRecords) {
  EXPECT_THROW(import_trace("not json"), InvalidInput);
  EXPECT_THROW(import_trace(R"({"ref":"x","T":2,"mode":"all","steps":[],"final_hidden":[]})"), InvalidInput);
  EXPECT_THROW(import_trace(R"({"ref":"x","T":1,"mode":"sideways","steps":[],"final_hidden":[]})"), InvalidInput);
  PlanTrace incomplete = trace_of({Selection::root});
  incomplete.T = 2;
  EXPECT_THROW(export_trace(incomplete), ContractViolation);
}

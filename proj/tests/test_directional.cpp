// Multi-seed directional checks on the desk SW benchmark. Slow.

#include "grd/estimators.hpp"
#include "grd/hsic.hpp"

#include <doctest.h>

#include <algorithm>

using namespace grd;

namespace {

Benchmark desk(std::uint64_t seed) {
    SimConfig c = default_sim_config(BenchmarkKind::SmallWorld);
    c.master_seed = seed;
    return build_benchmark(c);
}

double best(const std::vector<double>& v) { return *std::min_element(v.begin(), v.end()); }

}  // namespace

TEST_CASE("more inner steps reach a lower stage-2 loss") {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Benchmark b = desk(seed);
        TrainConfig cfg;
        cfg.seed = seed;
        cfg.stage1_epochs = 300;
        cfg.stage2_epochs = 20;
        const Stage1Result s1 = train_stage1(b.in_sample, cfg);
        cfg.inner_steps = 1;
        const double one = best(train_stage2(b.in_sample, s1, cfg).gh_loss_history);
        cfg.inner_steps = 15;
        const double fifteen = best(train_stage2(b.in_sample, s1, cfg).gh_loss_history);
        wins += fifteen <= one;
    }
    CHECK(wins >= 7);
}

TEST_CASE("a large HSIC weight lowers embedding-covariate dependence") {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Benchmark b = desk(seed);
        TrainConfig cfg;
        cfg.seed = seed;
        cfg.epochs = 100;
        auto dependence = [&](double weight) {
            cfg.hsic_weight = weight;
            const auto model = train_graphite(b.in_sample, cfg);
            const Matrix table = model->embedding_table();
            Matrix emb(b.in_sample.n_units(), table.cols());
            for (int i = 0; i < b.in_sample.n_units(); ++i) emb.row(i) = table.row(b.in_sample.t[i]);
            return hsic_normalized(emb, model->covariate_representation(b.in_sample.x));
        };
        wins += dependence(1000.0) < dependence(0.0);
    }
    CHECK(wins >= 8);
}

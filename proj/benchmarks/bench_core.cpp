// Microbenchmarks for the hot paths: encoder forward/backward, a full
// adversarial train step, the CPM transform, and the test statistics.

#include <benchmark/benchmark.h>

#include "agepred/ingest.hpp"
#include "agepred/model.hpp"
#include "agepred/stats.hpp"
#include "agepred/synth.hpp"
#include "agepred/trainer.hpp"

using namespace agepred;

namespace {

TrainingData bench_data(int n, int d, std::uint64_t seed) {
    RngState rng(seed);
    TrainingData td;
    td.x.resize(n, d);
    for (Eigen::Index i = 0; i < td.x.size(); ++i) {
        td.x.data()[i] = rng.next_gaussian();
    }
    td.age.resize(n);
    for (int i = 0; i < n; ++i) {
        td.age[i] = rng.next_uniform(3.0, 30.0);
        td.sample_ids.push_back("s" + std::to_string(i));
    }
    td.attr_names = {"sex", "tissue", "platform", "series_id"};
    for (int k : {2, 4, 2, 4}) {
        Mat onehot = Mat::Zero(n, k);
        for (int i = 0; i < n; ++i) {
            onehot(i, Eigen::Index(rng.next_below(std::uint64_t(k)))) = 1.0;
        }
        td.attrs.push_back(std::move(onehot));
        td.attr_vocab.push_back({});
    }
    return td;
}

ModelConfig bench_config(int d) {
    ModelConfig cfg;
    cfg.input_dim = d;
    cfg.latent_dim = 60;
    cfg.batch_size = 64;
    cfg.seed = 7;
    return cfg;
}

void BM_EncoderForward(benchmark::State& state) {
    const int d = int(state.range(0));
    ModelConfig cfg = bench_config(d);
    AdversarialModel model(cfg, {2, 4, 2, 4});
    model.init_params();
    RngState rng(1);
    Mat x(64, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.next_gaussian();
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.encode(x));
    }
}
BENCHMARK(BM_EncoderForward)->Arg(500)->Arg(2000);

void BM_TrainStep(benchmark::State& state) {
    const int d = int(state.range(0));
    TrainingData td = bench_data(600, d, 3);
    ModelConfig cfg = bench_config(d);
    TrainContext ctx(cfg, td.attr_class_counts(), td.attr_names);
    for (auto _ : state) {
        ctx.train_step(td);
    }
}
BENCHMARK(BM_TrainStep)->Arg(500)->Unit(benchmark::kMillisecond);

void BM_CpmLogTransform(benchmark::State& state) {
    SynthConfig cfg;
    cfg.n_per_env = 150;
    cfg.n_genes = int(state.range(0));
    cfg.k_signal = 20;
    cfg.k_confound = 20;
    cfg.seed = 5;
    const SynthDataset data = generate(cfg);
    GeneSet genes;
    genes.gene_ids = data.counts.gene_ids;
    for (auto _ : state) {
        benchmark::DoNotOptimize(cpm_log_transform(data.counts, genes));
    }
}
BENCHMARK(BM_CpmLogTransform)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_WelchBh(benchmark::State& state) {
    RngState rng(11);
    std::vector<std::vector<double>> groups;
    for (int g = 0; g < 64; ++g) {
        std::vector<double> v;
        for (int i = 0; i < 8; ++i) v.push_back(rng.next_gaussian());
        groups.push_back(std::move(v));
    }
    for (auto _ : state) {
        std::vector<double> p;
        for (int g = 0; g < 32; ++g) {
            p.push_back(welch_t_test(groups[2 * g], groups[2 * g + 1]).p);
        }
        benchmark::DoNotOptimize(bh_adjust(p));
    }
}
BENCHMARK(BM_WelchBh);

}  // namespace

BENCHMARK_MAIN();

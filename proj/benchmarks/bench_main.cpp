#include <benchmark/benchmark.h>

#include "ota/losses.hpp"
#include "ota/network.hpp"
#include "ota/shiftbench.hpp"

namespace {

ota::Tensor random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  ota::Rng rng(seed);
  ota::Tensor t = ota::Tensor::matrix(rows, cols);
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

void BM_ForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  ota::Rng rng(1);
  ota::Network net = ota::Network::build(ota::ArchSpec::parse("32-64-64-10"), rng);
  net.set_mode(ota::Mode::train);
  const ota::Tensor x = random_batch(batch, 32, 2);
  std::vector<int> y(batch);
  for (std::size_t i = 0; i < batch; ++i) y[i] = static_cast<int>(i % 10);
  for (auto _ : state) {
    const ota::Tensor logits = net.forward(x);
    const ota::Probs p = ota::softmax(logits);
    const ota::LossValue loss = ota::cross_entropy(p, y, 0.1);
    net.backward(ota::softmax_backward(p, loss.grad));
    benchmark::DoNotOptimize(loss.value);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch));
}
BENCHMARK(BM_ForwardBackward)->Arg(64)->Arg(256);

void BM_InfoNce(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const ota::Tensor q = random_batch(batch, 16, 3);
  const ota::Tensor k = random_batch(batch, 16, 4);
  for (auto _ : state) {
    const ota::PairLossValue loss = ota::infonce_loss(q, k, 0.2);
    benchmark::DoNotOptimize(loss.value);
  }
}
BENCHMARK(BM_InfoNce)->Arg(64)->Arg(256);

void BM_StrongAugment(benchmark::State& state) {
  const ota::Tensor x = random_batch(256, 32, 5);
  const ota::AugmentationPolicy policy;
  ota::Rng rng(6);
  for (auto _ : state) {
    ota::Tensor out = ota::augment(x, policy, ota::AugmentMode::strong, rng);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_StrongAugment);

}  // namespace
BENCHMARK_MAIN();

// Times the OpenMP kernels against the serial reference loops on the shapes
// that dominate desk-scale training (32x32 sky stacks, 20 input channels).

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pvnow/kernels.hpp"

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_per_call(const std::function<void()>& fn, double budget_s) {
  fn();
  int calls = 0;
  const auto start = clock_type::now();
  double elapsed = 0;
  do {
    fn();
    ++calls;
    elapsed = std::chrono::duration<double>(clock_type::now() - start).count();
  } while (elapsed < budget_s);
  return elapsed / calls;
}

std::vector<float> random_buffer(std::size_t n, std::mt19937& rng) {
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

void report(const std::string& name, double flops, double serial_s, double parallel_s) {
  std::printf("%-34s serial %9.3f ms %7.2f GFLOP/s | parallel %9.3f ms %7.2f GFLOP/s | x%.1f\n",
              name.c_str(), serial_s * 1e3, flops / serial_s * 1e-9, parallel_s * 1e3,
              flops / parallel_s * 1e-9, serial_s / parallel_s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial reference vs parallel kernel timings"};
  int threads = 0;
  double budget = 0.5;
  app.add_option("--threads", threads, "OpenMP threads for the parallel kernels (0 = runtime default)");
  app.add_option("--budget", budget, "Seconds spent timing each kernel");
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) pvnow::kernels::set_num_threads(threads);
  std::printf("parallel kernels use %d thread(s)\n", pvnow::kernels::num_threads());

  std::mt19937 rng(7);
  for (std::size_t n : {64, 256, 512}) {
    auto a = random_buffer(n * n, rng), b = random_buffer(n * n, rng);
    std::vector<float> c(n * n);
    const double flops = 2.0 * n * n * n;
    const double s = seconds_per_call(
        [&] { pvnow::kernels::reference::gemm<float>(false, false, n, n, n, a.data(), b.data(), c.data(), false); },
        budget);
    const double p = seconds_per_call(
        [&] { pvnow::kernels::gemm<float>(false, false, n, n, n, a.data(), b.data(), c.data(), false); },
        budget);
    report("gemm f32 " + std::to_string(n) + "^3", flops, s, p);
  }

  struct Case {
    const char* name;
    pvnow::kernels::ConvShape shape;
  };
  const Case cases[] = {
      {"conv stem 5x5 20->64 @32 (N=8)", {8, 20, 32, 32, 64, 5, 5, 1, 2}},
      {"conv expand 3x3 16->32 @16 (N=8)", {8, 16, 16, 16, 32, 3, 3, 1, 1}},
      {"conv head 8x8 64->256 @8 (N=8)", {8, 64, 8, 8, 256, 8, 8, 1, 0}},
  };
  for (const auto& cs : cases) {
    const auto& s = cs.shape;
    auto x = random_buffer(s.batch * s.in_channels * s.height * s.width, rng);
    auto w = random_buffer(s.out_channels * s.patch_size(), rng);
    std::vector<float> out(s.batch * s.out_channels * s.out_height() * s.out_width());
    const double flops = 2.0 * out.size() * s.patch_size();
    const double sf = seconds_per_call(
        [&] { pvnow::kernels::reference::conv2d_forward<float>(s, x.data(), w.data(), nullptr, out.data()); },
        budget);
    const double pf = seconds_per_call(
        [&] { pvnow::kernels::conv2d_forward<float>(s, x.data(), w.data(), nullptr, out.data()); },
        budget);
    report(std::string(cs.name) + " fwd", flops, sf, pf);

    std::vector<float> gx(x.size()), gw(w.size());
    const double sb = seconds_per_call(
        [&] {
          pvnow::kernels::reference::conv2d_backward<float>(s, x.data(), w.data(), out.data(), gx.data(),
                                                            gw.data(), nullptr);
        },
        budget);
    const double pb = seconds_per_call(
        [&] {
          pvnow::kernels::conv2d_backward<float>(s, x.data(), w.data(), out.data(), gx.data(), gw.data(),
                                                 nullptr);
        },
        budget);
    report(std::string(cs.name) + " bwd", 2 * flops, sb, pb);
  }
  return 0;
}

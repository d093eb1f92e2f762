#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "pvnow/kernels.hpp"

namespace k = pvnow::kernels;

namespace {

template <class T>
std::vector<T> buffer(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return v;
}

template <class T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(double(a[i]) - double(b[i])));
  return d;
}

struct ThreadScope {
  int saved = k::num_threads();
  explicit ThreadScope(int n) { k::set_num_threads(n); }
  ~ThreadScope() { k::set_num_threads(saved); }
};

}  // namespace

TEST_CASE("gemm matches the reference for every transpose combination") {
  const std::size_t dims[][3] = {{1, 1, 1}, {7, 5, 3}, {13, 70, 33}, {50, 129, 300}};
  for (const auto& d : dims) {
    const std::size_t m = d[0], n = d[1], kk = d[2];
    for (int ta = 0; ta < 2; ++ta) {
      for (int tb = 0; tb < 2; ++tb) {
        const auto a = buffer<double>(m * kk, 1), b = buffer<double>(kk * n, 2);
        auto c0 = buffer<double>(m * n, 3);
        auto c1 = c0;
        k::reference::gemm<double>(ta, tb, m, n, kk, a.data(), b.data(), c0.data(), true);
        k::gemm<double>(ta, tb, m, n, kk, a.data(), b.data(), c1.data(), true);
        CHECK(max_abs_diff(c0, c1) < 1e-10 * kk);
      }
    }
  }
}

TEST_CASE("conv and pool kernels match the reference") {
  const k::ConvShape shapes[] = {
      {2, 3, 9, 7, 4, 3, 3, 1, 1}, {3, 2, 8, 8, 5, 5, 5, 1, 2}, {1, 4, 9, 9, 3, 3, 3, 2, 0},
      {4, 6, 8, 8, 7, 8, 8, 1, 0}, {1, 5, 6, 6, 3, 1, 1, 1, 0},
  };
  for (const auto& s : shapes) {
    const auto x = buffer<double>(s.batch * s.in_channels * s.height * s.width, 4);
    const auto w = buffer<double>(s.out_channels * s.patch_size(), 5);
    const auto bias = buffer<double>(s.out_channels, 6);
    const std::size_t out_n = s.batch * s.out_channels * s.out_height() * s.out_width();
    std::vector<double> o0(out_n), o1(out_n);
    k::reference::conv2d_forward<double>(s, x.data(), w.data(), bias.data(), o0.data());
    k::conv2d_forward<double>(s, x.data(), w.data(), bias.data(), o1.data());
    CHECK(max_abs_diff(o0, o1) < 1e-12);

    const auto g = buffer<double>(out_n, 7);
    std::vector<double> gx0(x.size()), gx1(x.size()), gw0(w.size()), gw1(w.size()), gb0(bias.size()),
        gb1(bias.size());
    k::reference::conv2d_backward<double>(s, x.data(), w.data(), g.data(), gx0.data(), gw0.data(), gb0.data());
    k::conv2d_backward<double>(s, x.data(), w.data(), g.data(), gx1.data(), gw1.data(), gb1.data());
    CHECK(max_abs_diff(gx0, gx1) < 1e-12);
    CHECK(max_abs_diff(gw0, gw1) < 1e-12);
    CHECK(max_abs_diff(gb0, gb1) < 1e-12);
  }

  const auto x = buffer<float>(3 * 8 * 6, 8);
  std::vector<float> p0(3 * 4 * 3), p1(p0.size());
  std::vector<std::uint32_t> a0(p0.size()), a1(p0.size());
  k::reference::max_pool2d_forward<float>(3, 8, 6, 2, x.data(), p0.data(), a0.data());
  k::max_pool2d_forward<float>(3, 8, 6, 2, x.data(), p1.data(), a1.data());
  CHECK(p0 == p1);
  CHECK(a0 == a1);
}

TEST_CASE("parallel kernels are bit-identical across thread counts") {
  const k::ConvShape s{6, 8, 16, 16, 12, 3, 3, 1, 1};
  const auto x = buffer<double>(s.batch * s.in_channels * s.height * s.width, 9);
  const auto w = buffer<double>(s.out_channels * s.patch_size(), 10);
  const std::size_t out_n = s.batch * s.out_channels * s.out_height() * s.out_width();
  const auto g = buffer<double>(out_n, 11);
  const auto a = buffer<double>(97 * 211, 12), b = buffer<double>(211 * 150, 13);

  auto run = [&](int threads) {
    ThreadScope scope(threads);
    std::vector<double> out(out_n), gx(x.size()), gw(w.size()), c(97 * 150);
    k::conv2d_forward<double>(s, x.data(), w.data(), nullptr, out.data());
    k::conv2d_backward<double>(s, x.data(), w.data(), g.data(), gx.data(), gw.data(), nullptr);
    k::gemm<double>(false, false, 97, 150, 211, a.data(), b.data(), c.data(), false);
    out.insert(out.end(), gx.begin(), gx.end());
    out.insert(out.end(), gw.begin(), gw.end());
    out.insert(out.end(), c.begin(), c.end());
    return out;
  };
  const auto one = run(1);
  CHECK(one == run(2));
  CHECK(one == run(4));
}

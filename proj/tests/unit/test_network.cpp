#include <doctest.h>

#include <cmath>

#include "pjdm/nn/network.hpp"
#include "pjdm/rng.hpp"

using namespace pjdm;
using namespace pjdm::nn;

namespace {

Tensor3<double> random_input(int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor3<double> t(c, h, w);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = rng.normal();
  return t;
}

// Scalar loss sum(r .* F(x)) with fixed random r, so dL/dF = r.
double probe_loss(const Network<double>& net, const Tensor3<double>& x, double tau,
                  const Tensor3<double>& r) {
  return net.forward(x, tau).data.cwiseProduct(r.data).sum();
}

struct GradCheck {
  double worst_param = 0.0;
  double worst_input = 0.0;
};

GradCheck check(const Architecture& arch, int h, int w, std::uint64_t seed) {
  Network<double> net(arch);
  net.randomize(seed, 0.3);
  const auto x = random_input(arch.in_channels, h, w, seed + 1);
  const auto r = random_input(1, h, w, seed + 2);
  const double tau = 0.37;

  Tape<double> tape;
  net.forward(x, tau, &tape);
  std::vector<double> grads(net.params().size(), 0.0);
  const auto gx = net.backward(tape, r, grads);

  GradCheck out;
  const double eps = 1e-6;
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max(1.0, std::abs(n)); };
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const double keep = net.params()[i];
    net.params()[i] = keep + eps;
    const double up = probe_loss(net, x, tau, r);
    net.params()[i] = keep - eps;
    const double dn = probe_loss(net, x, tau, r);
    net.params()[i] = keep;
    out.worst_param = std::max(out.worst_param, rel(grads[i], (up - dn) / (2 * eps)));
  }
  auto xp = x;
  for (Eigen::Index i = 0; i < x.data.size(); ++i) {
    const double keep = xp.data.data()[i];
    xp.data.data()[i] = keep + eps;
    const double up = probe_loss(net, xp, tau, r);
    xp.data.data()[i] = keep - eps;
    const double dn = probe_loss(net, xp, tau, r);
    xp.data.data()[i] = keep;
    out.worst_input = std::max(out.worst_input, rel(gx.data.data()[i], (up - dn) / (2 * eps)));
  }
  return out;
}

}  // namespace

TEST_CASE("unet gradients match central differences") {
  Architecture arch;
  arch.in_channels = 2;
  arch.widths = {3, 4, 5};
  arch.time_dim = 4;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CAPTURE(seed);
    // Odd sizes exercise the pooling floor and the clamped upsample.
    const auto g = check(arch, 9, 10, seed);
    CHECK(g.worst_param < 1e-4);
    CHECK(g.worst_input < 1e-4);
  }
}

TEST_CASE("linear model gradients match central differences") {
  Architecture arch;
  arch.kind = Architecture::Kind::Linear;
  arch.in_channels = 1;
  arch.time_dim = 2;
  for (std::uint64_t seed = 11; seed <= 15; ++seed) {
    const auto g = check(arch, 5, 4, seed);
    CHECK(g.worst_param < 1e-4);
    CHECK(g.worst_input < 1e-4);
  }
}

TEST_CASE("parameter count matches the layout") {
  Architecture arch;
  Network<float> net(arch);
  // time 8x16+8, enc 8x1x9+8, 8x8x9+8, 16x8x9+16, 16x16x9+16, 32x16x9+32,
  // 32x32x9+32, dec 16x48x9+16, 8x24x9+8, out 1x8x9+1
  const std::size_t expect = 136 + 80 + 584 + 1168 + 2320 + 4640 + 9248 + 6928 + 1736 + 73;
  CHECK(arch.parameter_count() == expect);
  CHECK(net.params().size() == expect);
}

TEST_CASE("fresh network outputs zero and init is seeded") {
  Architecture arch;
  Network<float> a(arch), b(arch), c(arch);
  a.init(7);
  b.init(7);
  c.init(8);
  CHECK(a.params() == b.params());
  CHECK(a.params() != c.params());
  Tensor3<float> x(1, 12, 16);
  x.data.setConstant(0.5f);
  CHECK(a.forward(x, 0.1).data.cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("stale tape is rejected") {
  Architecture arch;
  arch.widths = {2, 2};
  arch.time_dim = 2;
  Network<double> net(arch);
  net.randomize(3, 0.2);
  Tape<double> tape;
  Tensor3<double> x(1, 4, 4);
  const auto y = net.forward(x, 0.0, &tape);
  std::vector<double> grads;
  net.backward(tape, y, grads);
  CHECK_THROWS_AS(net.backward(tape, y, grads), std::logic_error);
}

TEST_CASE("architecture descriptor round-trips and validates") {
  Architecture a;
  a.widths = {4, 8};
  a.time_scale = 100.0;
  CHECK(Architecture::parse(a.to_string()) == a);
  Architecture lin;
  lin.kind = Architecture::Kind::Linear;
  lin.in_channels = 2;
  CHECK(Architecture::parse(lin.to_string()) == lin);
  CHECK_THROWS(Architecture::parse("mlp in=1"));
  CHECK_THROWS(Architecture::parse("unet in=0 widths=4 temb=4 tscale=1"));
  CHECK_THROWS(Architecture::parse("unet in=1 widths=4 temb=3 tscale=1"));
  CHECK_THROWS(Network<float>(Architecture::parse("unet in=1 widths=4 temb=4 tscale=1"))
                   .forward(Tensor3<float>(2, 4, 4), 0.0));
}

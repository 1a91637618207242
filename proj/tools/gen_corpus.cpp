// Writes the frozen two-body regression corpus: radial cases valued by the
// radial quadrature and planar cases valued by the Lambert free-time search.
// Usage: gen_corpus OUT_DIR [BASE_SEED]

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>

#include "horokit/horokit.hpp"

using namespace horokit;

namespace {

constexpr int kRadialCases = 10;
constexpr int kKeplerCases = 10;
constexpr double kEnergies[] = {0.5, 1.0, 2.0};

const std::vector<std::vector<double>> kMassPairs = {{1.0, 1.0}, {1.0, 2.0}, {0.5, 3.0}, {2.0, 1.5}};

// Body positions with the centre of mass at the origin and relative vector r.
Vec place(const MassSystem& sys, const Eigen::Vector2d& r) {
  const double m1 = sys.mass(0), m2 = sys.mass(1), M = m1 + m2;
  Vec x(4);
  x.segment(0, 2) = -(m2 / M) * r;
  x.segment(2, 2) = (m1 / M) * r;
  return x;
}

io::Record header(const std::string& id, const std::string& kind, std::uint64_t seed, const MassSystem& sys) {
  io::Record rec;
  rec.add("id", id).add("kind", kind).add("seed", static_cast<std::size_t>(seed));
  rec.add("system.masses", sys.masses()).add("system.dim", sys.dim());
  return rec;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: gen_corpus OUT_DIR [BASE_SEED]\n";
    return 64;
  }
  const std::filesystem::path out = argv[1];
  const std::uint64_t base = argc > 2 ? std::stoull(argv[2]) : 20240611ULL;

  for (int c = 0; c < kRadialCases + kKeplerCases; ++c) {
    const std::uint64_t seed = base + static_cast<std::uint64_t>(c);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const MassSystem sys(kMassPairs[rng() % kMassPairs.size()], 2);
    const double h = kEnergies[rng() % 3];
    const double phase = 2.0 * M_PI * unit(rng);
    const Eigen::Vector2d e(std::cos(phase), std::sin(phase));
    char id[32];
    if (c < kRadialCases) {
      // Outward or inward along one ray.
      double r0 = 0.5 + 1.5 * unit(rng), r1 = r0 * (1.3 + 1.7 * unit(rng));
      if (rng() & 1) std::swap(r0, r1);
      const Configuration x(place(sys, r0 * e)), y(place(sys, r1 * e));
      const double value = radial_two_body_action(sys, x, y, h);
      std::snprintf(id, sizeof id, "radial_%02d", c);
      auto rec = header(id, "radial", seed, sys);
      rec.add("input.x", x.vec()).add("input.y", y.vec()).add("input.h", h);
      rec.add("oracle.value", value);
      io::write_atomic(out / (std::string(id) + ".case"), rec.str());
    } else {
      const double r0 = 0.7 + 2.3 * unit(rng), r1 = 0.7 + 2.3 * unit(rng);
      const double turn = (20.0 + 130.0 * unit(rng)) * M_PI / 180.0;
      const Eigen::Vector2d f(std::cos(phase + turn), std::sin(phase + turn));
      const Configuration x(place(sys, r0 * e)), y(place(sys, r1 * f));
      const auto k = kepler_free_time_phi(sys, x, y, h);
      std::snprintf(id, sizeof id, "kepler_%02d", c - kRadialCases);
      auto rec = header(id, "kepler", seed, sys);
      rec.add("input.x", x.vec()).add("input.y", y.vec()).add("input.h", h);
      rec.add("oracle.value", k.value).add("oracle.tau", k.tau);
      io::write_atomic(out / (std::string(id) + ".case"), rec.str());
    }
    std::cout << id << "\n";
  }
  return 0;
}

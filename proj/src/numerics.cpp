#include "optctl/numerics.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace optctl {

TimeGrid make_time_grid(double t_start, double dt, std::int64_t n_steps,
                        std::optional<std::int64_t> m_tau) {
  if (!(dt > 0.0) || !std::isfinite(dt))
    throw ConfigError("time grid: dt must be positive and finite, got " + std::to_string(dt));
  if (n_steps < 1) throw ConfigError("time grid: n_steps must be >= 1, got " + std::to_string(n_steps));
  if (!std::isfinite(t_start)) throw ConfigError("time grid: t_start must be finite");
  TimeGrid grid{t_start, dt, n_steps, 0};
  if (m_tau) {
    if (*m_tau < 1) throw ConfigError("time grid: m_tau must be >= 1, got " + std::to_string(*m_tau));
    if (n_steps % *m_tau != 0)
      throw ConfigError("time grid: n_steps = " + std::to_string(n_steps) +
                        " is not a multiple of m_tau = " + std::to_string(*m_tau));
    grid.m_tau = *m_tau;
  }
  return grid;
}

TimeGrid make_delay_grid(double tau, std::int64_t m_tau, std::int64_t layers) {
  if (!(tau > 0.0)) throw ConfigError("delay grid: tau must be positive");
  if (m_tau < 1) throw ConfigError("delay grid: m_tau must be >= 1");
  if (layers < 1) throw ConfigError("delay grid: need at least one delay interval after t = 0");
  const double dt = tau / static_cast<double>(m_tau);
  // t_start is -m_tau * dt (not -tau) so that tau == m_tau * dt holds exactly.
  return make_time_grid(-static_cast<double>(m_tau) * dt, dt, (layers + 1) * m_tau, m_tau);
}

double SeededRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::index(std::uint64_t n) {
  if (n == 0) throw ConfigError("SeededRng::index: empty range");
  // Reject draws above the largest multiple of n.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double SeededRng::normal() {
  if (spare_normal_) {
    const double v = *spare_normal_;
    spare_normal_.reset();
    return v;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_normal_ = v * f;
  return u * f;
}

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

SeededRng SeededRng::child(std::uint64_t stream) const {
  return SeededRng(mix_seed(mix_seed(seed_) ^ mix_seed(stream + 0x5851f42d4c957f2dULL)));
}

std::vector<std::int64_t> SeededRng::permutation(std::int64_t n) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(index(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  return order;
}

}  // namespace optctl

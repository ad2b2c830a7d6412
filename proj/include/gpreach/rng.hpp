#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace gpreach {

/**
 * @brief Deterministic random stream keyed by (master seed, stream index).
 *
 * Every sampled function, noise generator and Monte Carlo draw owns one, so
 * results do not depend on evaluation order or thread count.
 */
class RngStream
{
public:
  RngStream() : RngStream(0, 0) {}

  RngStream(std::uint64_t seed, std::uint64_t index) : seed_(seed), index_(index)
  {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32),
                      0x9e3779b9u};
    engine_.seed(seq);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t index() const { return index_; }

  double normal() { return normal_(engine_); }

  double uniform(double a = 0.0, double b = 1.0) { return std::uniform_real_distribution<double>(a, b)(engine_); }

  Eigen::VectorXd normals(Eigen::Index n)
  {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) { v(i) = normal(); }
    return v;
  }

  std::mt19937_64 & engine() { return engine_; }

private:
  std::uint64_t seed_;
  std::uint64_t index_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace gpreach

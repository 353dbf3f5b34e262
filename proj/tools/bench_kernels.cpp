// Timing comparison between the serial reference kernel and the OpenMP
// buffered kernel on a synthetic decomposition workload.

#include <chrono>
#include <cstdio>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "vardecomp/assignment.hpp"
#include "vardecomp/decompose.hpp"
#include "vardecomp/outcome.hpp"
#include "vardecomp/simulation.hpp"

using namespace vardecomp;
namespace chrono = std::chrono;

namespace {

double ms_since(chrono::steady_clock::time_point t0) {
  return chrono::duration<double, std::milli>(chrono::steady_clock::now() - t0).count();
}

class BenchGrid final : public CellGrid {
 public:
  BenchGrid(const DataSet& d, const OutcomeParams& theta, const AssignmentModel& eta)
      : d_(d), theta_(theta), eta_(eta) {
    cell_base_.resize(d.hierarchy().cells());
    for (int c = 0; c < d.hierarchy().cells(); ++c) {
      cell_base_[c] = theta.alpha0 + theta.hospital_effects[d.hierarchy().cell_hospital(c)] +
                      theta.surgeon_effects[c];
    }
  }
  const Hierarchy& hierarchy() const override { return d_.hierarchy(); }
  int points() const override { return static_cast<int>(d_.size()); }
  bool equal_weights() const override { return true; }
  double weight(int) const override { return 1.0 / static_cast<double>(d_.size()); }
  void fill(int i, std::span<double> mu, std::span<double> cellp,
            std::span<double> cv) const override {
    const double bx = theta_.beta.dot(d_.x().row(i));
    for (std::size_t c = 0; c < mu.size(); ++c) {
      const double p = logistic(cell_base_[c] + bx);
      mu[c] = p;
      cv[c] = p * (1.0 - p);
    }
    eta_.cell_probs_into(d_.x().row(i), cellp);
  }

 private:
  const DataSet& d_;
  const OutcomeParams& theta_;
  const AssignmentModel& eta_;
  std::vector<double> cell_base_;
};

}  // namespace

int main(int argc, char** argv) {
  const int n = argc > 1 ? std::atoi(argv[1]) : 50000;
  const int repeats = argc > 2 ? std::atoi(argv[2]) : 5;

  SimConfig cfg;
  cfg.n = n;
  cfg.m = 5;
  cfg.q = 25;
  cfg.seed = 99;
  auto [data, mech] = generate_population(cfg);
  const AssignmentModel eta = fit_joint_multinomial(data);
  const OutcomeParams theta = fit_logistic_mixed(data);
  const BenchGrid grid(data, theta, eta);

  std::printf("decomposition kernel, n=%d, q=%d, %d repeats\n", n, cfg.q, repeats);

  auto t0 = chrono::steady_clock::now();
  VarianceComponents ref;
  for (int r = 0; r < repeats; ++r) ref = decompose_grid_reference(grid, ResidualMode::model_based);
  const double t_ref = ms_since(t0) / repeats;
  std::printf("  serial reference : %8.2f ms/run\n", t_ref);

#ifdef _OPENMP
  for (int threads : {1, 2, 4, omp_get_max_threads()}) {
    omp_set_num_threads(threads);
    t0 = chrono::steady_clock::now();
    VarianceComponents par;
    for (int r = 0; r < repeats; ++r) par = decompose_grid(grid, ResidualMode::model_based);
    const double t_par = ms_since(t0) / repeats;
    double max_diff = 0.0;
    for (int j = 0; j < 4; ++j) {
      max_diff = std::max(max_diff, std::abs(par.as_array()[j] - ref.as_array()[j]));
    }
    std::printf("  openmp %2d thread%s: %8.2f ms/run  (speedup %.2fx, max |diff| %.3g)\n",
                threads, threads == 1 ? " " : "s", t_par, t_ref / t_par, max_diff);
  }
#else
  t0 = chrono::steady_clock::now();
  for (int r = 0; r < repeats; ++r) (void)decompose_grid(grid, ResidualMode::model_based);
  std::printf("  buffered kernel  : %8.2f ms/run\n", ms_since(t0) / repeats);
#endif
  return 0;
}

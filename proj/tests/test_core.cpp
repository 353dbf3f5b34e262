#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "test_helpers.hpp"
#include "vardecomp/dataset.hpp"
#include "vardecomp/math.hpp"
#include "vardecomp/rng.hpp"

using namespace vardecomp;
namespace fs = std::filesystem;

TEST_CASE("pairwise sum matches simple accumulation") {
  std::vector<double> v(1001);
  Rng rng(42);
  long double direct = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    direct += x;
  }
  CHECK(pairwise_sum(v) == doctest::Approx(static_cast<double>(direct)).epsilon(1e-13));
}

TEST_CASE("quantile interpolation") {
  std::vector<double> v = {4.0, 1.0, 3.0, 2.0};
  CHECK(quantile(v, 0.0) == 1.0);
  CHECK(quantile(v, 1.0) == 4.0);
  CHECK(quantile(v, 0.5) == doctest::Approx(2.5));
}

TEST_CASE("rng streams are deterministic and distinct") {
  Rng a = Rng::stream(7, 3);
  Rng b = Rng::stream(7, 3);
  Rng c = Rng::stream(7, 4);
  bool all_equal = true;
  bool any_differs_from_c = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    all_equal = all_equal && va == b.next_u64();
    any_differs_from_c = any_differs_from_c || va != c.next_u64();
  }
  CHECK(all_equal);
  CHECK(any_differs_from_c);
}

TEST_CASE("rng normal moments") {
  Rng rng(11);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sum2 += z * z;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.02).scale(1.0));
  CHECK(sum2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("empirical variance hand values") {
  auto d = testing::make_dataset({1, 1}, {0, 0, 1, 1}, {0, 0, 1, 1}, {0, 0, 0, 0},
                                 {{0.0}, {0.0}, {0.0}, {0.0}}, OutcomeKind::binary);
  CHECK(empirical_variance(d) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  auto constant = testing::make_dataset({1}, {2.5, 2.5, 2.5}, {0, 0, 0}, {0, 0, 0},
                                        {{0.0}, {0.0}, {0.0}}, OutcomeKind::continuous);
  CHECK(empirical_variance(constant) == 0.0);

  auto single = testing::make_dataset({1}, {1.0}, {0}, {0}, {{0.0}}, OutcomeKind::continuous);
  CHECK_THROWS_AS(empirical_variance(single), DataError);
}

TEST_CASE("empirical variance is permutation invariant") {
  Rng rng(5);
  std::vector<double> y;
  std::vector<int> hosp, surg;
  std::vector<std::vector<double>> x;
  for (int i = 0; i < 101; ++i) {
    y.push_back(rng.normal() * 3.0 + 1.0);
    hosp.push_back(0);
    surg.push_back(0);
    x.push_back({0.0});
  }
  auto d1 = testing::make_dataset({1}, y, hosp, surg, x, OutcomeKind::continuous);
  std::reverse(y.begin(), y.end());
  auto d2 = testing::make_dataset({1}, y, hosp, surg, x, OutcomeKind::continuous);
  CHECK(empirical_variance(d1) == doctest::Approx(empirical_variance(d2)).epsilon(1e-14));
}

TEST_CASE("logistic draws have variance pi^2/3") {
  Rng rng(2024);
  const long n = 1000000;
  std::vector<double> y(n);
  for (long i = 0; i < n; ++i) y[i] = rng.logistic();
  const double var = sample_variance(y);
  CHECK(var == doctest::Approx(std::numbers::pi * std::numbers::pi / 3.0).epsilon(0.02));
}

TEST_CASE("csv round trip preserves records exactly") {
  Rng rng(9);
  std::vector<double> y;
  std::vector<int> hosp, surg;
  std::vector<std::vector<double>> x;
  for (int i = 0; i < 50; ++i) {
    hosp.push_back(i % 3);
    surg.push_back(i % 2);
    y.push_back(rng.normal() * 1.7);
    x.push_back({rng.normal(), rng.bernoulli(0.5) ? 1.0 : 0.0});
  }
  auto d = testing::make_dataset({2, 2, 2}, y, hosp, surg, x, OutcomeKind::continuous);
  const fs::path path = fs::temp_directory_path() / "vardecomp_roundtrip.csv";
  write_dataset(path.string(), d);
  const DataSet back = load_dataset(path.string());
  REQUIRE(back.size() == d.size());
  REQUIRE(back.hierarchy().same_shape(d.hierarchy()));
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    CHECK(back.y()[i] == d.y()[i]);
    CHECK(back.hospital_of(i) == d.hospital_of(i));
    CHECK(back.surgeon_of(i) == d.surgeon_of(i));
    for (int j = 0; j < d.covariate_dim(); ++j) CHECK(back.x()(i, j) == d.x()(i, j));
  }
  fs::remove(path);
}

TEST_CASE("load_dataset small file and error paths") {
  const fs::path path = fs::temp_directory_path() / "vardecomp_small.csv";
  {
    std::ofstream out(path);
    out << "id,hospital,surgeon,y,x1\n";
    out << "1,1,1,0,0.5\n2,1,1,1,-0.25\n3,2,1,1,0\n4,2,1,0,1\n";
  }
  const DataSet d = load_dataset(path.string());
  CHECK(d.hierarchy().hospitals() == 2);
  CHECK(d.hierarchy().surgeons_in(0) == 1);
  CHECK(d.hierarchy().surgeons_in(1) == 1);
  CHECK(d.size() == 4);
  CHECK(d.outcome_kind() == OutcomeKind::binary);

  {
    std::ofstream out(path);
    out << "id,hospital,surgeon,y,x1\n1,1,1,2,0\n2,1,1,0,0\n";
  }
  LoadSchema binary_schema;
  binary_schema.outcome_kind = OutcomeKind::binary;
  CHECK_THROWS_WITH_AS(load_dataset(path.string(), binary_schema),
                       doctest::Contains("outcome out of range"), DataError);

  {
    std::ofstream out(path);
    out << "id,hospital,surgeon,y,x1\n1,0,1,1,0\n";
  }
  CHECK_THROWS_AS(load_dataset(path.string()), DataError);

  {
    std::ofstream out(path);
    out << "id,site,surgeon,y,x1\n1,1,1,1,0\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(path.string()), doctest::Contains("unknown column"),
                       DataError);
  fs::remove(path);
}

TEST_CASE("load_dataset relabels non-contiguous ids and keeps labels") {
  const fs::path path = fs::temp_directory_path() / "vardecomp_labels.csv";
  {
    std::ofstream out(path);
    out << "id,hospital,surgeon,y,x1\n";
    out << "1,10,7,0.5,0\n2,10,9,1.5,1\n3,30,2,2.5,0\n";
  }
  const DataSet d = load_dataset(path.string());
  CHECK(d.hierarchy().hospitals() == 2);
  CHECK(d.hospital_labels() == std::vector<long>{10, 30});
  CHECK(d.surgeon_labels() == std::vector<long>{7, 9, 2});
  fs::remove(path);
}

TEST_CASE("positivity report flags and totals") {
  // Balanced: 10 patients per cell, both covariate strata present.
  std::vector<double> y;
  std::vector<int> hosp, surg;
  std::vector<std::vector<double>> x;
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < 10; ++i) {
      hosp.push_back(c);
      surg.push_back(0);
      y.push_back(i % 2);
      x.push_back({static_cast<double>(i % 2), 0.5 * i});
    }
  }
  auto balanced = testing::make_dataset({1, 1}, y, hosp, surg, x, OutcomeKind::binary);
  const PositivityReport rep = positivity_report(balanced);
  CHECK(rep.total_count() == 20);
  CHECK_FALSE(rep.has_flags());
  CHECK(rep.binary_covariates == std::vector<int>{0});

  // Second cell observed only at x1 = 1.
  for (int i = 0; i < 10; ++i) x[10 + i][0] = 1.0;
  auto skewed = testing::make_dataset({1, 1}, y, hosp, surg, x, OutcomeKind::binary);
  const PositivityReport rep2 = positivity_report(skewed);
  REQUIRE(rep2.cells.size() == 2);
  CHECK(rep2.cells[0].flags.empty());
  REQUIRE(rep2.cells[1].flags.size() == 1);
  CHECK(rep2.cells[1].flags[0] == "x1=0");
  CHECK(rep2.total_count() == 20);
  CHECK(rep2.to_csv().find("hospital,surgeon,count,flags") == 0);
}

#include <doctest.h>

#include <cmath>
#include <functional>

#include "crb/error.hpp"
#include "crb/stage_cls.hpp"
#include "support.hpp"

using namespace crb;
using crb::test::labeled;

namespace {

// Direct evaluation: p_c = exp(n_c / N) / sum exp(n_c' / N), H = -sum p ln p.
double brute_entropy(const std::vector<std::size_t>& counts) {
  double n = 0.0;
  for (auto c : counts) n += static_cast<double>(c);
  if (n == 0.0) return 0.0;
  double z = 0.0;
  for (auto c : counts) z += std::exp(static_cast<double>(c) / n);
  double h = 0.0;
  for (auto c : counts) {
    const double p = std::exp(static_cast<double>(c) / n) / z;
    h -= p * std::log(p);
  }
  return h;
}

void for_each_histogram(std::size_t classes, std::size_t max_boxes,
                        const std::function<void(const std::vector<std::size_t>&)>& fn) {
  std::vector<std::size_t> counts(classes, 0);
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t c, std::size_t left) {
    if (c == classes) {
      fn(counts);
      return;
    }
    for (std::size_t k = 0; k <= left; ++k) {
      counts[c] = k;
      rec(c + 1, left - k);
    }
    counts[c] = 0;
  };
  rec(0, max_boxes);
}

cls::LabelHistogram hist_of(const std::vector<std::size_t>& counts) {
  cls::LabelHistogram h;
  h.counts = counts;
  for (auto c : counts) h.n_boxes += c;
  return h;
}

}  // namespace

TEST_CASE("entropy matches direct evaluation on every small histogram") {
  for (std::size_t c = 1; c <= 3; ++c) {
    for_each_histogram(c, 6, [](const std::vector<std::size_t>& counts) {
      CHECK(std::abs(cls::label_entropy(hist_of(counts)) - brute_entropy(counts)) < 1e-12);
    });
  }
}

TEST_CASE("entropy fixed points") {
  CHECK(cls::label_entropy(hist_of({5, 5, 5})) == std::log(3.0));
  CHECK(cls::label_entropy(hist_of({2, 2})) == std::log(2.0));
  CHECK(cls::label_entropy(hist_of({0, 0, 0})) == 0.0);
  CHECK_FALSE(cls::class_probs(hist_of({0, 0})).has_value());

  // [10,0,0]: softmax(1,0,0) = (e, 1, 1) / (e + 2).
  const double e = std::exp(1.0);
  const auto p = *cls::class_probs(hist_of({10, 0, 0}));
  CHECK(p[0] == doctest::Approx(e / (e + 2)).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(1 / (e + 2)).epsilon(1e-14));
  const double h = -(e / (e + 2)) * std::log(e / (e + 2)) - 2 / (e + 2) * std::log(1 / (e + 2));
  CHECK(cls::label_entropy(hist_of({10, 0, 0})) == doctest::Approx(h).epsilon(1e-14));
}

TEST_CASE("entropy bounds and maximizer") {
  for (std::size_t c = 1; c <= 4; ++c) {
    for_each_histogram(c, 8, [c](const std::vector<std::size_t>& counts) {
      const double h = cls::label_entropy(hist_of(counts));
      CHECK(h >= 0.0);
      CHECK(h <= std::log(static_cast<double>(c)) + 1e-15);
      std::size_t n = 0;
      bool equal = true;
      for (auto k : counts) {
        n += k;
        equal = equal && k == counts[0];
      }
      if (n > 0 && !equal) CHECK(h < std::log(static_cast<double>(c)) - 1e-12);
    });
  }
}

TEST_CASE("moving a box toward a larger class never raises entropy") {
  for (std::size_t c = 2; c <= 3; ++c) {
    for_each_histogram(c, 6, [c](const std::vector<std::size_t>& counts) {
      const double before = cls::label_entropy(hist_of(counts));
      for (std::size_t a = 0; a < c; ++a) {
        for (std::size_t b = 0; b < c; ++b) {
          if (a == b || counts[a] == 0 || counts[a] > counts[b]) continue;
          auto moved = counts;
          --moved[a];
          ++moved[b];
          CHECK(cls::label_entropy(hist_of(moved)) <= before + 1e-15);
        }
      }
    });
  }
}

TEST_CASE("histogram of a record") {
  const auto h = cls::LabelHistogram::of(labeled("a", {0, 2, 2, 1}), 3);
  CHECK(h.counts == std::vector<std::size_t>{1, 1, 2});
  CHECK(h.n_boxes == 4);
  CHECK_THROWS_AS(cls::LabelHistogram::of(labeled("a", {3}), 3), SchemaError);
}

TEST_CASE("top-k ranking with ties by id") {
  std::vector<PoolRecord> pool = {labeled("e", {0, 0}), labeled("d", {0, 1, 2}), labeled("c", {0, 1}),
                                  labeled("b", {0, 1, 2}), labeled("a", {})};
  CHECK(cls::select_top_k1(pool, 2, 3) == std::vector<std::string>{"b", "d"});
  CHECK(cls::select_top_k1(pool, 10, 3) == std::vector<std::string>{"b", "d", "c", "e", "a"});
  CHECK(cls::select_top_k1(pool, 0, 3).empty());
}

TEST_CASE("empty clouds rank after every cloud with boxes") {
  std::vector<PoolRecord> pool = {labeled("a", {}), labeled("b", {1}), labeled("c", {})};
  const auto top = cls::select_top_k1(pool, 3, 2);
  CHECK(top.front() == "b");
}

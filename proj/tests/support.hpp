#pragma once

#include <string>
#include <vector>

#include "crb/pool.hpp"
#include "crb/rng.hpp"

namespace crb::test {

inline BoxPrediction make_box(int cls, double density = 10.0, Box7 b = {1.0, 2.0, -1.0, 4.0, 1.8, 1.5, 0.1},
                              double confidence = 0.8) {
  BoxPrediction p;
  p.class_id = cls;
  p.confidence = confidence;
  p.box7 = b;
  p.point_density = density;
  return p;
}

// Record whose boxes carry the given labels (and densities, default 10).
inline PoolRecord labeled(std::string id, const std::vector<int>& labels,
                          const std::vector<double>& densities = {}) {
  std::vector<BoxPrediction> boxes;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    boxes.push_back(make_box(labels[i], densities.empty() ? 10.0 : densities[i]));
  }
  return PoolRecord(std::move(id), std::move(boxes));
}

inline Box7 random_box(Rng& rng) {
  return {rng.uniform(0.0, 60.0), rng.uniform(-30.0, 30.0), rng.normal(-1.0, 0.3), rng.uniform(0.5, 4.5),
          rng.uniform(0.5, 2.0),  rng.uniform(1.0, 2.0),    rng.uniform(-3.0, 3.0)};
}

// Random record with M passes scattered around the predicted boxes.
inline PoolRecord random_record(std::string id, Rng& rng, std::size_t num_classes, std::size_t n_boxes,
                                std::size_t passes, double spread = 1.0) {
  std::vector<BoxPrediction> boxes;
  for (std::size_t b = 0; b < n_boxes; ++b) {
    boxes.push_back(make_box(static_cast<int>(rng.index(num_classes)), rng.uniform(1.0, 100.0), random_box(rng),
                             rng.uniform(0.3, 1.0)));
  }
  std::vector<double> values;
  for (std::size_t m = 0; m < passes; ++m) {
    for (const auto& b : boxes) {
      for (double v : b.box7) values.push_back(v + spread * rng.normal());
    }
  }
  return PoolRecord(std::move(id), std::move(boxes), McPasses(passes, n_boxes, std::move(values)));
}

inline std::string id_of(std::size_t i) {
  std::string s = std::to_string(i);
  return "c" + std::string(4 - std::min<std::size_t>(4, s.size()), '0') + s;
}

}  // namespace crb::test

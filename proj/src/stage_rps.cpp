#include "crb/stage_rps.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "crb/error.hpp"
#include "crb/parallel.hpp"

namespace crb::rps {

HypotheticalLabel average_passes(const McPasses& passes) {
  if (passes.passes() == 0) throw DataError("average_passes: no passes");
  HypotheticalLabel out;
  out.boxes = passes.boxes();
  out.b_bar.assign(out.boxes * kBoxDims, 0.0);
  for (std::size_t m = 0; m < passes.passes(); ++m) {
    for (std::size_t b = 0; b < out.boxes; ++b) {
      const auto coords = passes.box(m, b);
      for (std::size_t k = 0; k < kBoxDims; ++k) out.b_bar[b * kBoxDims + k] += coords[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(passes.passes());
  for (double& v : out.b_bar) v *= inv;
  return out;
}

double smooth_l1(double residual) {
  const double a = std::abs(residual);
  return a < 1.0 ? 0.5 * residual * residual : a - 0.5;
}

std::array<double, kBoxDims> smooth_l1_grad(std::span<const double> pred,
                                            std::span<const double> target) {
  std::array<double, kBoxDims> g{};
  for (std::size_t k = 0; k < kBoxDims; ++k) {
    const double r = pred[k] - target[k];
    if (std::abs(r) < 1.0) {
      g[k] = r;
    } else {
      g[k] = r > 0.0 ? 1.0 : -1.0;
    }
  }
  return g;
}

std::vector<double> identity_head_params() {
  std::vector<double> w(kHeadParams, 0.0);
  for (std::size_t k = 0; k < kBoxDims; ++k) w[k * kHeadInputs + k] = 1.0;
  return w;
}

namespace {

void check_head(std::span<const double> head_params) {
  if (head_params.size() != kHeadParams) {
    throw SchemaError("surrogate head expects " + std::to_string(kHeadParams) + " parameters, got " +
                      std::to_string(head_params.size()));
  }
}

const McPasses& require_passes(const PoolRecord& record) {
  if (!record.mc_passes()) {
    throw DataError("record '" + record.cloud_id() +
                    "' has no mc_passes; supply an ingested gradient_embedding instead");
  }
  return *record.mc_passes();
}

std::array<double, kHeadInputs> head_input(const BoxPrediction& box) {
  std::array<double, kHeadInputs> x{};
  std::copy(box.box7.begin(), box.box7.end(), x.begin());
  x[kBoxDims] = 1.0;
  return x;
}

std::array<double, kBoxDims> head_forward(std::span<const double> w,
                                          const std::array<double, kHeadInputs>& x) {
  std::array<double, kBoxDims> y{};
  for (std::size_t k = 0; k < kBoxDims; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < kHeadInputs; ++j) acc += w[k * kHeadInputs + j] * x[j];
    y[k] = acc;
  }
  return y;
}

}  // namespace

double surrogate_loss(const PoolRecord& record, std::span<const double> head_params) {
  check_head(head_params);
  if (record.num_boxes() == 0) return 0.0;
  const HypotheticalLabel label = average_passes(require_passes(record));
  double loss = 0.0;
  for (std::size_t i = 0; i < record.num_boxes(); ++i) {
    const auto pred = head_forward(head_params, head_input(record.boxes()[i]));
    const auto target = label.box(i);
    for (std::size_t k = 0; k < kBoxDims; ++k) loss += smooth_l1(pred[k] - target[k]);
  }
  return loss;
}

GradientEmbedding surrogate_gradient(const PoolRecord& record, std::span<const double> head_params) {
  check_head(head_params);
  GradientEmbedding out;
  out.source = EmbeddingSource::surrogate;
  out.vec.assign(kHeadParams, 0.0);
  if (record.num_boxes() == 0) return out;
  const HypotheticalLabel label = average_passes(require_passes(record));
  // dL/dW_kj = sum_i g_ik * x_ij, with g the smooth-L1 derivative.
  for (std::size_t i = 0; i < record.num_boxes(); ++i) {
    const auto x = head_input(record.boxes()[i]);
    const auto pred = head_forward(head_params, x);
    const auto g = smooth_l1_grad(pred, label.box(i));
    for (std::size_t k = 0; k < kBoxDims; ++k) {
      for (std::size_t j = 0; j < kHeadInputs; ++j) out.vec[k * kHeadInputs + j] += g[k] * x[j];
    }
  }
  return out;
}

Embeddings resolve_embeddings(std::span<const PoolRecord> records) {
  Embeddings out;
  std::size_t ingested = 0;
  for (const PoolRecord& r : records) ingested += r.gradient_embedding() ? 1 : 0;
  out.vectors.resize(records.size());
  if (ingested == records.size()) {
    out.source = EmbeddingSource::ingested;
    for (std::size_t i = 0; i < records.size(); ++i) out.vectors[i] = *records[i].gradient_embedding();
    return out;
  }
  if (ingested != 0) {
    throw SchemaError("pool mixes ingested gradient_embedding with records that lack one");
  }
  out.source = EmbeddingSource::surrogate;
  for (const PoolRecord& r : records) {
    if (r.num_boxes() > 0 && !r.mc_passes()) {
      throw DataError("field 'mc_passes' is required to compute surrogate embeddings; first record "
                      "without it: '" + r.cloud_id() + "'");
    }
  }
  const std::vector<double> head = identity_head_params();
  parallel_for(records.size(), [&](std::size_t i) {
    out.vectors[i] = surrogate_gradient(records[i], head).vec;
  });
  return out;
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    acc += d * d;
  }
  return std::sqrt(acc);
}

DistanceMatrix pairwise_distances(std::span<const std::vector<double>> points) {
  const std::size_t n = points.size();
  if (n > 0) {
    for (const auto& p : points) {
      if (p.size() != points[0].size()) {
        throw SchemaError("pairwise_distances: embeddings differ in dimension");
      }
    }
  }
  DistanceMatrix dist(n);
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) dist.at(i, j) = euclidean(points[i], points[j]);
  }, 64);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) dist.at(i, j) = dist(j, i);
  }
  return dist;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Nearest {
  std::vector<std::size_t> owner;  // position in the medoid list
  std::vector<double> first;
  std::vector<double> second;
};

Nearest nearest_medoids(const DistanceMatrix& dist, const std::vector<std::size_t>& medoids) {
  const std::size_t n = dist.size();
  Nearest out{std::vector<std::size_t>(n, 0), std::vector<double>(n, kInf),
              std::vector<double>(n, kInf)};
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t m = 0; m < medoids.size(); ++m) {
      const double d = dist(medoids[m], j);
      if (d < out.first[j]) {
        out.second[j] = out.first[j];
        out.first[j] = d;
        out.owner[j] = m;
      } else if (d < out.second[j]) {
        out.second[j] = d;
      }
    }
  }
  return out;
}

}  // namespace

MedoidResult k_medoids(std::span<const std::string> ids, const DistanceMatrix& dist,
                       std::size_t k2, std::uint64_t /*seed*/) {
  const std::size_t n = ids.size();
  if (dist.size() != n) throw SchemaError("k_medoids: distance matrix does not match ids");
  MedoidResult result;
  if (k2 >= n) {
    if (k2 > n) {
      result.warnings.push_back("k2=" + std::to_string(k2) + " exceeds " + std::to_string(n) +
                                " points; every point is a medoid");
    }
    result.medoid_ids.assign(ids.begin(), ids.end());
    std::sort(result.medoid_ids.begin(), result.medoid_ids.end());
    for (std::size_t m = 0; m < result.medoid_ids.size(); ++m) result.assignment[result.medoid_ids[m]] = m;
    result.cost_trace.push_back(0.0);
    return result;
  }
  if (k2 == 0) throw ConfigError("k_medoids: k2 must be >= 1");

  // Candidates are scanned in ascending id order so the first strict optimum
  // found is also the tie-break winner.
  std::vector<std::size_t> by_id(n);
  std::iota(by_id.begin(), by_id.end(), std::size_t{0});
  std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

  std::vector<char> is_medoid(n, 0);
  std::vector<std::size_t> medoids;
  std::vector<double> nearest(n, kInf);

  // BUILD
  {
    std::size_t best = by_id[0];
    double best_sum = kInf;
    for (std::size_t i : by_id) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += dist(i, j);
      if (s < best_sum) {
        best_sum = s;
        best = i;
      }
    }
    medoids.push_back(best);
    is_medoid[best] = 1;
    for (std::size_t j = 0; j < n; ++j) nearest[j] = dist(best, j);
  }
  while (medoids.size() < k2) {
    std::size_t best = n;
    double best_gain = -1.0;
    for (std::size_t i : by_id) {
      if (is_medoid[i]) continue;
      double gain = 0.0;
      for (std::size_t j = 0; j < n; ++j) gain += std::max(0.0, nearest[j] - dist(i, j));
      if (gain > best_gain) {
        best_gain = gain;
        best = i;
      }
    }
    medoids.push_back(best);
    is_medoid[best] = 1;
    for (std::size_t j = 0; j < n; ++j) nearest[j] = std::min(nearest[j], dist(best, j));
  }

  auto current_cost = [&] {
    double c = 0.0;
    for (std::size_t j = 0; j < n; ++j) c += nearest[j];
    return c;
  };
  result.cost_trace.push_back(current_cost());

  // SWAP
  struct Swap {
    double delta = 0.0;
    std::size_t medoid_pos = 0;
    std::size_t candidate = 0;
    bool valid = false;
  };
  const std::size_t max_iterations = 100 * n + 100;
  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    const Nearest near = nearest_medoids(dist, medoids);
    // Evaluate medoids in ascending id order.
    std::vector<std::size_t> positions(k2);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    std::sort(positions.begin(), positions.end(),
              [&](std::size_t a, std::size_t b) { return ids[medoids[a]] < ids[medoids[b]]; });

    std::vector<Swap> best_per_medoid(k2);
    parallel_for(k2, [&](std::size_t slot) {
      const std::size_t pos = positions[slot];
      Swap best;
      for (std::size_t o : by_id) {
        if (is_medoid[o]) continue;
        double delta = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double d_oj = dist(o, j);
          if (near.owner[j] == pos) {
            delta += std::min(d_oj, near.second[j]) - near.first[j];
          } else if (d_oj < near.first[j]) {
            delta += d_oj - near.first[j];
          }
        }
        if (!best.valid || delta < best.delta) best = {delta, pos, o, true};
      }
      best_per_medoid[slot] = best;
    }, 8);

    Swap best;
    for (const Swap& s : best_per_medoid) {
      if (s.valid && (!best.valid || s.delta < best.delta)) best = s;
    }
    const double tolerance = 1e-12 * std::max(1.0, result.cost_trace.back());
    if (!best.valid || !(best.delta < -tolerance)) break;

    is_medoid[medoids[best.medoid_pos]] = 0;
    medoids[best.medoid_pos] = best.candidate;
    is_medoid[best.candidate] = 1;
    for (std::size_t j = 0; j < n; ++j) {
      double d = kInf;
      for (std::size_t m : medoids) d = std::min(d, dist(m, j));
      nearest[j] = d;
    }
    result.cost_trace.push_back(current_cost());
  }

  std::sort(medoids.begin(), medoids.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  for (std::size_t m : medoids) result.medoid_ids.push_back(ids[m]);
  result.total_cost = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t owner = 0;
    for (std::size_t m = 1; m < medoids.size(); ++m) {
      if (dist(medoids[m], j) < dist(medoids[owner], j)) owner = m;
    }
    result.assignment[ids[j]] = owner;
    result.total_cost += dist(medoids[owner], j);
  }
  return result;
}

}  // namespace crb::rps

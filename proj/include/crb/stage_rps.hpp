#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "crb/pool.hpp"

// Representative prototype selection: hypothetical regression labels from
// MC-dropout passes, gradient embeddings of the smooth-L1 regression loss, and
// K2-medoids (PAM) in gradient space.
namespace crb::rps {

// Per-box mean of the M pass outputs, N_B x 7 row-major.
struct HypotheticalLabel {
  std::size_t boxes = 0;
  std::vector<double> b_bar;

  std::span<const double> box(std::size_t i) const { return {b_bar.data() + i * kBoxDims, kBoxDims}; }
};

HypotheticalLabel average_passes(const McPasses& passes);

// Smooth-L1 on a scalar residual: r^2/2 inside |r| < 1, |r| - 1/2 outside.
double smooth_l1(double residual);

// Per-coordinate derivative in r = pred - target: r inside the unit band,
// sign(r) outside (including the kink itself).
std::array<double, kBoxDims> smooth_l1_grad(std::span<const double> pred,
                                            std::span<const double> target);

// The surrogate head is a linear layer on the per-box feature [box7; 1]:
// pred_i = W [box7_i; 1], W a 7 x 8 matrix stored row-major.
inline constexpr std::size_t kHeadInputs = kBoxDims + 1;
inline constexpr std::size_t kHeadParams = kBoxDims * kHeadInputs;

// W = [I | 0]: the head reproduces the detector's deterministic boxes.
std::vector<double> identity_head_params();

// sum_i sum_k smooth_l1((W x_i)_k - b_bar_ik). Requires mc_passes.
double surrogate_loss(const PoolRecord& record, std::span<const double> head_params);

enum class EmbeddingSource { ingested, surrogate };

struct GradientEmbedding {
  std::vector<double> vec;
  EmbeddingSource source = EmbeddingSource::surrogate;
};

// Analytic gradient of surrogate_loss with respect to W, flattened row-major.
// Throws DataError when the record has boxes but no mc_passes.
GradientEmbedding surrogate_gradient(const PoolRecord& record, std::span<const double> head_params);

struct Embeddings {
  std::vector<std::vector<double>> vectors;
  EmbeddingSource source = EmbeddingSource::ingested;
};

// Ingested gradient_embedding when every record carries one, otherwise the
// surrogate gradient at identity_head_params(). A pool that mixes the two is
// rejected with SchemaError.
Embeddings resolve_embeddings(std::span<const PoolRecord> records);

class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n_(n), d_(n * n, 0.0) {}

  std::size_t size() const noexcept { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }
  double& at(std::size_t i, std::size_t j) { return d_[i * n_ + j]; }

 private:
  std::size_t n_ = 0;
  std::vector<double> d_;
};

double euclidean(std::span<const double> a, std::span<const double> b);

// Euclidean distances; throws SchemaError on a dimension mismatch.
DistanceMatrix pairwise_distances(std::span<const std::vector<double>> points);

struct MedoidResult {
  std::vector<std::string> medoid_ids;            // ascending
  std::map<std::string, std::size_t> assignment;  // id -> index into medoid_ids
  double total_cost = 0.0;
  std::vector<double> cost_trace;  // after BUILD, then after each accepted swap
  std::vector<std::string> warnings;
};

// PAM: greedy BUILD followed by best-improvement SWAP until no swap lowers the
// cost. Ties go to the lexicographically smallest ids. PAM itself draws no
// random numbers; seed is accepted for interface stability.
MedoidResult k_medoids(std::span<const std::string> ids, const DistanceMatrix& dist,
                       std::size_t k2, std::uint64_t seed = 0);

}  // namespace crb::rps

#pragma once

// Shared fixtures and brute-force oracles for the unit and acceptance tests.
// Oracles here are written independently of the library code they check.

#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fraudkit/classify.hpp"
#include "fraudkit/data.hpp"
#include "fraudkit/types.hpp"

namespace testsupport {

using fraudkit::Labels;
using fraudkit::Matrix;
using fraudkit::RowVector;
using fraudkit::Vector;

// Numeric schema named f0, f1, ...
fraudkit::data::FeatureSchema numeric_schema(std::size_t d);
fraudkit::data::Dataset numeric_dataset(const Matrix& x, const Labels& y);

Matrix uniform_matrix(std::mt19937_64& rng, std::size_t n, std::size_t d, double lo = 0.0,
                      double hi = 1.0);

// Two Gaussian blobs; class 1 shifted by `shift` on every coordinate.
fraudkit::data::Dataset gaussian_blobs(std::size_t negatives, std::size_t positives, std::size_t d,
                                       double shift, std::uint64_t seed);

// k nearest other rows by Euclidean distance, ties to the lowest index.
std::vector<std::size_t> brute_neighbors(const Matrix& x, std::size_t i, std::size_t k);

// Rows of `label` whose k-neighbour vote is won by the other class.
std::set<std::size_t> brute_enn(const Matrix& x, const Labels& y, std::size_t k, int label);

// Opposite-label mutual nearest neighbour pairs (lower, higher).
std::set<std::pair<std::size_t, std::size_t>> brute_tomek(const Matrix& x, const Labels& y);

// Shapley values by averaging marginal contributions over all d! feature
// orders; v(S) is the background mean with S taken from the instance.
using OutputFn = std::function<Vector(const Matrix&)>;
Vector permutation_shapley(const OutputFn& f, const RowVector& x, const Matrix& background);

// ABOD factor over every pair of reference rows at positive distance.
double brute_abod(const Matrix& ref, const RowVector& q);

// Smallest covariance determinant (divisor h) over every h-subset.
double exhaustive_mcd_determinant(const Matrix& x, std::size_t h);

// Two-sided Student t p-value by Simpson integration of the density.
double t_two_sided_p(double t, double df);

}  // namespace testsupport

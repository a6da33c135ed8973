#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "gradcache/errors.hpp"
#include "gradcache/rng.hpp"

namespace gradcache {

using Scalar = double;
using FeatureTensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using FeatureRef = Eigen::Ref<const FeatureTensor>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr Scalar kLayerNormEps = 1e-5;

// total L1 mass: sum of |x_ij| over all elements
Scalar l1_total(const FeatureRef& x);

// a*x + b*y, shapes must match
FeatureTensor lincomb(Scalar a, const FeatureRef& x, Scalar b, const FeatureRef& y);

FeatureTensor add(const FeatureRef& x, const FeatureRef& y);

FeatureTensor matmul(const FeatureRef& a, const FeatureRef& b);

// numerically stable softmax along each row
FeatureTensor row_softmax(const FeatureRef& x);

// per-row standardization with population variance: (x - mean) / sqrt(var + eps)
FeatureTensor layer_norm_rows(const FeatureRef& x, Scalar eps = kLayerNormEps);

// exact gelu, x * Phi(x)
FeatureTensor gelu(const FeatureRef& x);

FeatureTensor gaussian_fill(Rng& rng, Eigen::Index rows, Eigen::Index cols);

bool all_finite(const FeatureRef& x);

// throws NumericError naming `where` if x contains NaN or infinity
void require_finite(const FeatureRef& x, const char* where);

// FNV-1a over the raw bytes in row-major order; bit-level identity check
std::uint64_t checksum(const FeatureRef& x);

}  // namespace gradcache

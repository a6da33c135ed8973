#include "gradcache/tensor.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace gradcache {

namespace {

void check_same_shape(const FeatureRef& x, const FeatureRef& y, const char* op) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) {
        throw ShapeError(std::string(op) + ": incompatible operands " +
                         std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + " vs " +
                         std::to_string(y.rows()) + "x" + std::to_string(y.cols()));
    }
}

}  // namespace

Scalar l1_total(const FeatureRef& x) {
    return x.cwiseAbs().sum();
}

FeatureTensor lincomb(Scalar a, const FeatureRef& x, Scalar b, const FeatureRef& y) {
    check_same_shape(x, y, "lincomb");
    return a * x + b * y;
}

FeatureTensor add(const FeatureRef& x, const FeatureRef& y) {
    check_same_shape(x, y, "add");
    return x + y;
}

FeatureTensor matmul(const FeatureRef& a, const FeatureRef& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: incompatible operands " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
    return a * b;
}

FeatureTensor row_softmax(const FeatureRef& x) {
    FeatureTensor out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Scalar m = x.row(i).maxCoeff();
        out.row(i) = (x.row(i).array() - m).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

FeatureTensor layer_norm_rows(const FeatureRef& x, Scalar eps) {
    if (x.cols() == 0) {
        throw ShapeError("layer_norm_rows: empty rows");
    }
    FeatureTensor out(x.rows(), x.cols());
    const Scalar n = static_cast<Scalar>(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Scalar mean = x.row(i).mean();
        const Scalar var = (x.row(i).array() - mean).square().sum() / n;
        out.row(i) = (x.row(i).array() - mean) / std::sqrt(var + eps);
    }
    return out;
}

FeatureTensor gelu(const FeatureRef& x) {
    const Scalar inv_sqrt2 = 0.7071067811865475244;
    return x.unaryExpr([inv_sqrt2](Scalar v) { return v * 0.5 * (1.0 + std::erf(v * inv_sqrt2)); });
}

FeatureTensor gaussian_fill(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    if (rows <= 0 || cols <= 0) {
        throw ShapeError("gaussian_fill: non-positive shape");
    }
    FeatureTensor out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            out(i, j) = rng.gaussian();
        }
    }
    return out;
}

bool all_finite(const FeatureRef& x) {
    return x.allFinite();
}

void require_finite(const FeatureRef& x, const char* where) {
    if (!x.allFinite()) {
        throw NumericError(std::string("non-finite values in ") + where);
    }
}

std::uint64_t checksum(const FeatureRef& x) {
    std::uint64_t h = 14695981039346656037ull;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const Scalar v = x(i, j);
            unsigned char bytes[sizeof(Scalar)];
            std::memcpy(bytes, &v, sizeof(Scalar));
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 1099511628211ull;
            }
        }
    }
    return h;
}

}  // namespace gradcache

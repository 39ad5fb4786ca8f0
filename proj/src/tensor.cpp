#include "trajvid/tensor.hpp"

#include <cmath>
#include <sstream>

namespace trajvid {

int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    for (int64_t d : shape) {
        if (d < 0) throw validation_error("negative dimension in shape " + shape_str(shape));
    }
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
}

Tensor Tensor::full(std::vector<int64_t> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t(std::vector<int64_t>{1});
    t.data[0] = v;
    return t;
}

Tensor Tensor::from_vector(std::vector<int64_t> s, std::vector<double> d) {
    if (numel_of(s) != static_cast<int64_t>(d.size()))
        throw validation_error("data length " + std::to_string(d.size()) +
                               " does not match shape " + shape_str(s));
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

void require_shape(const Tensor& t, const std::vector<int64_t>& shape, const std::string& what) {
    bool ok = t.shape.size() == shape.size();
    for (size_t i = 0; ok && i < shape.size(); ++i)
        if (shape[i] >= 0 && t.shape[i] != shape[i]) ok = false;
    if (!ok)
        throw validation_error(what + ": expected shape " + shape_str(shape) + ", got " +
                               shape_str(t.shape));
}

void require_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite()) throw validation_error(what + ": non-finite entries");
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

int64_t Rng::randint(int64_t n) {
    if (n <= 0) throw validation_error("randint bound must be positive");
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
}

uint64_t Rng::derive(uint64_t seed, uint64_t salt) {
    // splitmix64 over the combined value
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t Rng::hash_str(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

Tensor randn(std::vector<int64_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.normal();
    return t;
}

Tensor rand_uniform(std::vector<int64_t> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

Tensor orthogonal(int64_t rows, int64_t cols, Rng& rng) {
    const bool tall = rows > cols;
    const int64_t n = tall ? cols : rows;  // vectors to orthonormalize
    const int64_t m = tall ? rows : cols;  // their length
    std::vector<std::vector<double>> basis;
    basis.reserve(static_cast<size_t>(n));
    while (static_cast<int64_t>(basis.size()) < n) {
        std::vector<double> v(static_cast<size_t>(m));
        for (double& x : v) x = rng.normal();
        for (const auto& b : basis) {
            double dot = 0.0;
            for (int64_t i = 0; i < m; ++i) dot += v[i] * b[i];
            for (int64_t i = 0; i < m; ++i) v[i] -= dot * b[i];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-8) continue;  // degenerate draw, retry
        for (double& x : v) x /= norm;
        basis.push_back(std::move(v));
    }
    Tensor t({rows, cols});
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
            t.data[r * cols + c] = tall ? basis[static_cast<size_t>(c)][static_cast<size_t>(r)]
                                        : basis[static_cast<size_t>(r)][static_cast<size_t>(c)];
    return t;
}

}  // namespace trajvid

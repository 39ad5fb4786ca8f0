#ifndef TRAJVID_TENSOR_HPP
#define TRAJVID_TENSOR_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "trajvid/errors.hpp"

namespace trajvid {

// Dense row-major tensor of doubles. Shapes follow the frames x height x width
// x channels convention for volumes and slices x tokens x features for token
// grids; flat vectors use a single axis.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s);

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int64_t> s, double v);
    static Tensor scalar(double v);
    static Tensor from_vector(std::vector<int64_t> s, std::vector<double> d);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    double& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double& at3(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double at3(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double& at4(int64_t i, int64_t j, int64_t k, int64_t l) {
        return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }
    double at4(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return data[static_cast<size_t>(((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

int64_t numel_of(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

// negative entries act as wildcards matching any extent
void require_shape(const Tensor& t, const std::vector<int64_t>& shape, const std::string& what);
void require_finite(const Tensor& t, const std::string& what);

// Deterministic RNG. Gaussian draws use an explicit Box-Muller transform so
// that sequences are reproducible independent of the standard library's
// distribution implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal();

    // uniform integer in [0, n)
    int64_t randint(int64_t n);

    // uniform integer in [lo, hi], inclusive
    int64_t randint(int64_t lo, int64_t hi) { return lo + randint(hi - lo + 1); }

    // derive an independent stream, e.g. one per clip
    static uint64_t derive(uint64_t seed, uint64_t salt);
    static uint64_t hash_str(const std::string& s);

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

Tensor randn(std::vector<int64_t> shape, Rng& rng);
Tensor rand_uniform(std::vector<int64_t> shape, Rng& rng, double lo = 0.0, double hi = 1.0);

// Random [rows, cols] matrix with orthonormal rows (rows <= cols) or
// orthonormal columns (rows > cols).
Tensor orthogonal(int64_t rows, int64_t cols, Rng& rng);

}  // namespace trajvid

#endif

#pragma once

#include "mdm/matrix.hpp"
#include "mdm/rng.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mdm::data {

/// Per-modality features: [steps][dim]. Plain vectors are sequences of length 1.
using Sequence = std::vector<std::vector<double>>;

struct MultimodalSample {
    Sequence a;
    Sequence v;
    Sequence l;
    double y = 0.0;  // sentiment in [-3, 3]

    friend bool operator==(const MultimodalSample&, const MultimodalSample&) = default;
};

using Dataset = std::vector<MultimodalSample>;

struct DatasetSplits {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Feature dims and sequence length shared by every sample of a dataset.
struct DatasetShape {
    std::size_t d_a = 0;
    std::size_t d_v = 0;
    std::size_t d_l = 0;
    std::size_t steps = 0;
};

/// Throws SchemaError when samples disagree on dims, steps are ragged, an
/// entry is non-finite or a label leaves [-3, 3].
DatasetShape validate_dataset(const Dataset& samples);

// ---------------------------------------------------------------------------
// Correlated Gaussians

struct GaussianSpec {
    std::size_t dim = 5;        // d per variable
    double rho = 0.0;           // corr(X_j[i], X_k[i']) = rho * [i == i'] for j != k
    std::size_t variables = 2;  // 2 or 3
    std::size_t n = 10000;
    /// Full (variables*dim)^2 covariance overriding rho when present.
    std::optional<Matrix> covariance;
};

/// Builds and checks the joint covariance; throws ContractError when it is
/// not positive definite.
Matrix gaussian_covariance(const GaussianSpec& spec);

/// Lower-triangular L with L L^T = a. Throws ContractError when a is not
/// symmetric positive definite.
Matrix cholesky(const Matrix& a);

/// One [n x dim] matrix per variable.
std::vector<Matrix> gen_correlated_gaussian(const GaussianSpec& spec, Rng& rng);

/// Total correlation in nats: 0.5 * (sum_j log det S_jj - log det S).
double gaussian_dependency_oracle(const GaussianSpec& spec);

// ---------------------------------------------------------------------------
// Latent-factor multimodal task

/// z ~ N(0, I_k); x_j = W_j z + noise_j; y = clamp(w.z + noise_y, [-3, 3]).
/// The language-like modality gets the smallest noise.
struct SyntheticTaskSpec {
    std::size_t latent_dim = 8;
    std::size_t d_a = 8;
    std::size_t d_v = 8;
    std::size_t d_l = 8;
    std::size_t seq_len = 1;
    double loading_scale = 1.0;
    double noise_a = 1.5;
    double noise_v = 1.5;
    double noise_l = 0.6;
    double label_noise = 0.3;
    double label_scale = 1.5;
    std::size_t n_train = 2000;
    std::size_t n_val = 500;
    std::size_t n_test = 500;
};

void validate(const SyntheticTaskSpec& spec);

DatasetSplits gen_synthetic_multimodal(const SyntheticTaskSpec& spec, Rng& rng);

// ---------------------------------------------------------------------------
// JSON-lines I/O: {"a":[...],"v":[...],"l":[...] or [[...],...],"y":...}

std::string to_json_line(const MultimodalSample& sample);
/// `line_no` is 1-based and only used in error messages.
MultimodalSample parse_json_line(const std::string& line, std::size_t line_no);

void save_dataset(const std::filesystem::path& path, const Dataset& samples);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace mdm::data

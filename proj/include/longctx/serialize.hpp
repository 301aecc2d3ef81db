#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace longctx {

// Checkpoint container: magic, u32 version, u32 tensor count, then per tensor
// a length-prefixed name, u32 rank, u64 dims and little-endian f64 data.
struct Tensor {
    std::vector<uint64_t> dims;
    Eigen::VectorXd data;  // column-major for rank 2
};

using TensorMap = std::map<std::string, Tensor>;

inline Tensor tensor_of(const Eigen::VectorXd& v) {
    return Tensor{{uint64_t(v.size())}, v};
}
inline Tensor tensor_of(const Eigen::MatrixXd& m) {
    Tensor t;
    t.dims = {uint64_t(m.rows()), uint64_t(m.cols())};
    t.data = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    return t;
}
Eigen::MatrixXd as_matrix(const Tensor& t);
Eigen::VectorXd as_vector(const Tensor& t);

void save_tensors(const std::string& path, const TensorMap& tensors, uint32_t version = 1);
TensorMap load_tensors(const std::string& path);

uint64_t fnv1a_file(const std::string& path);

}  // namespace longctx

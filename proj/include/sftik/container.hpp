#pragma once

#include <filesystem>

#include "sftik/tensor.hpp"

namespace sftik {

// Binary tensor file: a one-line JSON header
//   {"dtype":"f32"|"f64","order":"row-major","shape":[...]}\n
// followed by exactly product(shape) little-endian IEEE-754 values.
// Round-trips are bitwise lossless.

void write_container(const std::filesystem::path& path, const Tensor<float>& t);
void write_container(const std::filesystem::path& path, const Tensor<double>& t);

template <class T>
Tensor<T> read_container(const std::filesystem::path& path);

extern template Tensor<float> read_container<float>(const std::filesystem::path&);
extern template Tensor<double> read_container<double>(const std::filesystem::path&);

}  // namespace sftik

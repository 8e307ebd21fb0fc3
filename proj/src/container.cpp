#include "sftik/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace sftik {

static_assert(std::endian::native == std::endian::little, "container payload I/O assumes a little-endian host");

namespace {

template <class T>
const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>)
        return "f32";
    else
        return "f64";
}

template <class T>
void write_impl(const std::filesystem::path& path, const Tensor<T>& t) {
    nlohmann::json header;
    header["dtype"] = dtype_name<T>();
    header["order"] = "row-major";
    header["shape"] = t.shape();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("write_container: cannot open " + path.string());
    const std::string line = header.dump() + "\n";
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    auto data = t.data();
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
    if (!out) throw IoError("write_container: write failed for " + path.string());
}

}  // namespace

void write_container(const std::filesystem::path& path, const Tensor<float>& t) { write_impl(path, t); }
void write_container(const std::filesystem::path& path, const Tensor<double>& t) { write_impl(path, t); }

template <class T>
Tensor<T> read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_container: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw FormatError("read_container: missing header line in " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("read_container: bad header in " + path.string() + " at byte offset 0: " + e.what());
    }
    const std::string dtype = header.value("dtype", "");
    if (dtype != "f32" && dtype != "f64") {
        throw FormatError("read_container: unknown dtype '" + dtype + "' in " + path.string());
    }
    if (dtype != dtype_name<T>()) {
        throw FormatError("read_container: " + path.string() + " holds " + dtype + ", requested " + dtype_name<T>());
    }
    if (header.value("order", "") != "row-major") {
        throw FormatError("read_container: unsupported order in " + path.string());
    }
    if (!header.contains("shape") || !header["shape"].is_array()) {
        throw FormatError("read_container: missing shape in " + path.string());
    }
    std::vector<int64_t> shape = header["shape"].get<std::vector<int64_t>>();
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw FormatError("read_container: negative dimension in " + path.string());
        n *= d;
    }
    if (shape.empty()) n = 1;
    std::vector<T> values(static_cast<size_t>(n));
    const std::streamsize want = static_cast<std::streamsize>(values.size() * sizeof(T));
    in.read(reinterpret_cast<char*>(values.data()), want);
    if (in.gcount() != want) {
        throw FormatError("read_container: " + path.string() + " payload truncated at byte offset " +
                          std::to_string(static_cast<long long>(line.size()) + 1 + in.gcount()) + " (expected " +
                          std::to_string(want) + " payload bytes)");
    }
    // Trailing bytes mean the header lied about the shape.
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0) {
        throw FormatError("read_container: " + path.string() + " has trailing bytes beyond the declared payload");
    }
    return Tensor<T>::from_vector(std::move(shape), std::move(values));
}

template Tensor<float> read_container<float>(const std::filesystem::path&);
template Tensor<double> read_container<double>(const std::filesystem::path&);

}  // namespace sftik

#include "dim/tensor_file.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "dim/error.hpp"

namespace dim {

namespace {

constexpr char kMagic[4] = {'D', 'I', 'M', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw TensorFileError(TensorFileError::Kind::Truncated,
                                  std::string("DIMT truncated while reading ") + what);
        }
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(bytes_[pos_++])) << (8 * i);
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(bytes_[pos_++])) << (8 * i);
        return v;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    std::size_t pos() const { return pos_; }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

std::uint64_t checked_count(const std::vector<std::uint64_t>& shape) {
    std::uint64_t n = 1;
    for (auto d : shape) {
        if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
            throw TensorFileError(TensorFileError::Kind::Truncated, "DIMT shape overflows");
        }
        n *= d;
    }
    return n;
}

}  // namespace

std::uint64_t Tensor::element_count() const { return checked_count(shape); }

Tensor Tensor::from_floats(std::vector<std::uint64_t> shape, std::vector<float> values) {
    Tensor t{std::move(shape), std::move(values)};
    if (t.element_count() != t.floats().size()) throw InvalidArgument("tensor shape/data size mismatch");
    return t;
}

Tensor Tensor::from_ints(std::vector<std::uint64_t> shape, std::vector<std::int32_t> values) {
    Tensor t{std::move(shape), std::move(values)};
    if (t.element_count() != t.ints().size()) throw InvalidArgument("tensor shape/data size mismatch");
    return t;
}

Tensor Tensor::from_matrix(const Matrix& m) {
    std::vector<float> v(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) v[i] = static_cast<float>(m.data()[i]);
    return from_floats({static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())},
                       std::move(v));
}

Matrix Tensor::to_matrix() const {
    if (dtype() != DType::Float32) throw InvalidArgument("to_matrix requires a float32 tensor");
    Eigen::Index rows = 0, cols = 0;
    if (shape.size() == 2) {
        rows = static_cast<Eigen::Index>(shape[0]);
        cols = static_cast<Eigen::Index>(shape[1]);
    } else if (shape.size() == 1) {
        rows = 1;
        cols = static_cast<Eigen::Index>(shape[0]);
    } else {
        throw InvalidArgument("to_matrix requires a 1-D or 2-D tensor");
    }
    Matrix m(rows, cols);
    const auto& f = floats();
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f[i];
    return m;
}

std::string encode_tensor(const Tensor& t) {
    const std::uint64_t n = t.element_count();
    std::string out;
    out.reserve(4 + 4 + 4 + 8 * t.shape.size() + 1 + 4 * n);
    out.append(kMagic, 4);
    put_u32(out, kTensorFileVersion);
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u64(out, d);
    out.push_back(static_cast<char>(t.dtype()));
    if (t.dtype() == DType::Float32) {
        if (t.floats().size() != n) throw InvalidArgument("tensor shape/data size mismatch");
        for (float f : t.floats()) put_u32(out, std::bit_cast<std::uint32_t>(f));
    } else {
        if (t.ints().size() != n) throw InvalidArgument("tensor shape/data size mismatch");
        for (std::int32_t i : t.ints()) put_u32(out, static_cast<std::uint32_t>(i));
    }
    return out;
}

Tensor decode_tensor(const std::string& bytes) {
    Reader r(bytes);
    r.need(4, "magic");
    if (bytes.compare(0, 4, kMagic, 4) != 0) {
        throw TensorFileError(TensorFileError::Kind::BadMagic, "not a DIMT file (bad magic)");
    }
    for (int i = 0; i < 4; ++i) r.u8("magic");
    const std::uint32_t version = r.u32("version");
    if (version != kTensorFileVersion) {
        throw TensorFileError(TensorFileError::Kind::VersionMismatch,
                              "unsupported DIMT version " + std::to_string(version));
    }
    const std::uint32_t ndim = r.u32("ndim");
    r.need(std::size_t(ndim) * 8, "dims");
    std::vector<std::uint64_t> shape(ndim);
    for (auto& d : shape) d = r.u64("dims");
    const std::uint8_t code = r.u8("dtype");
    if (code != static_cast<std::uint8_t>(DType::Float32) && code != static_cast<std::uint8_t>(DType::Int32)) {
        throw TensorFileError(TensorFileError::Kind::UnknownDtype,
                              "unknown DIMT dtype code " + std::to_string(code));
    }
    const std::uint64_t n = checked_count(shape);
    if (n > r.remaining() / 4) {
        throw TensorFileError(TensorFileError::Kind::Truncated, "DIMT payload truncated");
    }
    if (r.remaining() != 4 * n) {
        throw TensorFileError(TensorFileError::Kind::Truncated, "DIMT payload has trailing bytes");
    }
    if (code == static_cast<std::uint8_t>(DType::Float32)) {
        std::vector<float> v(n);
        for (auto& f : v) f = std::bit_cast<float>(r.u32("payload"));
        return Tensor{std::move(shape), std::move(v)};
    }
    std::vector<std::int32_t> v(n);
    for (auto& i : v) i = static_cast<std::int32_t>(r.u32("payload"));
    return Tensor{std::move(shape), std::move(v)};
}

void save_tensor_file(const Tensor& t, const std::filesystem::path& path) {
    const std::string bytes = encode_tensor(t);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw TensorFileError(TensorFileError::Kind::Io, "cannot open for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw TensorFileError(TensorFileError::Kind::Io, "write failed: " + path.string());
}

Tensor load_tensor_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TensorFileError(TensorFileError::Kind::Io, "cannot open for reading: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_tensor(bytes);
}

void save_matrix(const Matrix& m, const std::filesystem::path& path) {
    save_tensor_file(Tensor::from_matrix(m), path);
}

Matrix load_matrix(const std::filesystem::path& path) { return load_tensor_file(path).to_matrix(); }

void round_to_float32(Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(m.data()[i]);
}

}  // namespace dim

#pragma once

// Binary container of named numeric arrays with a trailing integrity
// checksum. Used for the corpus payload, checkpoints, and mel artifacts.
//
// Layout (little endian):
//   magic "EDAF" | u32 version | u64 meta_len | meta bytes (utf-8 json)
//   u32 array_count
//   per array: u32 name_len | name | u8 dtype | u64 rows | u64 cols | payload
//   u64 fnv1a64 of everything above

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "emodub/common.hpp"

namespace emodub {

enum class Dtype : uint8_t { F32 = 0, F64 = 1, I64 = 2 };

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NamedArray {
    std::string name;
    Dtype dtype = Dtype::F32;
    uint64_t rows = 0;
    uint64_t cols = 0;
    std::vector<unsigned char> bytes;  // row-major payload

    static NamedArray f32(const std::string& name, const Eigen::MatrixXd& m) {
        NamedArray a;
        a.name = name;
        a.dtype = Dtype::F32;
        a.rows = m.rows();
        a.cols = m.cols();
        MatF rm = m.cast<float>();
        a.bytes.resize(sizeof(float) * rm.size());
        std::memcpy(a.bytes.data(), rm.data(), a.bytes.size());
        return a;
    }

    static NamedArray f64(const std::string& name, const Eigen::MatrixXd& m) {
        NamedArray a;
        a.name = name;
        a.dtype = Dtype::F64;
        a.rows = m.rows();
        a.cols = m.cols();
        MatD rm = m;
        a.bytes.resize(sizeof(double) * rm.size());
        std::memcpy(a.bytes.data(), rm.data(), a.bytes.size());
        return a;
    }

    static NamedArray i64(const std::string& name, const std::vector<int64_t>& v) {
        NamedArray a;
        a.name = name;
        a.dtype = Dtype::I64;
        a.rows = 1;
        a.cols = v.size();
        a.bytes.resize(sizeof(int64_t) * v.size());
        std::memcpy(a.bytes.data(), v.data(), a.bytes.size());
        return a;
    }

    // f32 payloads come back as doubles holding exactly the stored values.
    Eigen::MatrixXd as_matrix() const {
        if (dtype == Dtype::F32) {
            MatF rm(rows, cols);
            std::memcpy(rm.data(), bytes.data(), bytes.size());
            return rm.cast<double>();
        }
        if (dtype == Dtype::F64) {
            MatD rm(rows, cols);
            std::memcpy(rm.data(), bytes.data(), bytes.size());
            return rm;
        }
        throw IoError("array '" + name + "' is not a float array");
    }

    std::vector<int64_t> as_i64() const {
        if (dtype != Dtype::I64) throw IoError("array '" + name + "' is not an integer array");
        std::vector<int64_t> v(cols);
        std::memcpy(v.data(), bytes.data(), bytes.size());
        return v;
    }
};

class ArrayFile {
  public:
    static constexpr uint32_t kVersion = 1;

    std::string meta;  // free-form json string
    std::vector<NamedArray> arrays;

    void add(NamedArray a) { arrays.push_back(std::move(a)); }

    const NamedArray* find(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return &a;
        return nullptr;
    }

    const NamedArray& require(const std::string& name) const {
        const NamedArray* a = find(name);
        if (!a) throw IoError("missing array '" + name + "'");
        return *a;
    }

    std::vector<unsigned char> serialize() const {
        std::vector<unsigned char> buf;
        buf.reserve(1024);
        auto put = [&buf](const void* p, size_t n) {
            const unsigned char* b = static_cast<const unsigned char*>(p);
            buf.insert(buf.end(), b, b + n);
        };
        put("EDAF", 4);
        uint32_t version = kVersion;
        put(&version, 4);
        uint64_t meta_len = meta.size();
        put(&meta_len, 8);
        put(meta.data(), meta.size());
        uint32_t count = static_cast<uint32_t>(arrays.size());
        put(&count, 4);
        for (const auto& a : arrays) {
            uint32_t name_len = static_cast<uint32_t>(a.name.size());
            put(&name_len, 4);
            put(a.name.data(), a.name.size());
            uint8_t dt = static_cast<uint8_t>(a.dtype);
            put(&dt, 1);
            put(&a.rows, 8);
            put(&a.cols, 8);
            put(a.bytes.data(), a.bytes.size());
        }
        uint64_t checksum = fnv1a64(buf.data(), buf.size());
        put(&checksum, 8);
        return buf;
    }

    void save(const std::string& path) const {
        std::vector<unsigned char> buf = serialize();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + path + "' for writing");
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!out) throw IoError("short write to '" + path + "'");
    }

    uint64_t checksum() const {
        std::vector<unsigned char> buf = serialize();
        uint64_t sum;
        std::memcpy(&sum, buf.data() + buf.size() - 8, 8);
        return sum;
    }

    static ArrayFile load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open '" + path + "'");
        std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return deserialize(buf, path);
    }

    static ArrayFile deserialize(const std::vector<unsigned char>& buf, const std::string& origin) {
        if (buf.size() < 4 + 4 + 8 + 4 + 8) throw IoError("'" + origin + "': truncated (checksum unverifiable)");
        uint64_t stored;
        std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
        uint64_t computed = fnv1a64(buf.data(), buf.size() - 8);
        if (stored != computed)
            throw IoError("'" + origin + "': checksum mismatch (stored " + hex64(stored) + ", computed " +
                          hex64(computed) + ")");

        size_t pos = 0;
        auto get = [&buf, &pos, &origin](void* p, size_t n) {
            if (pos + n > buf.size() - 8) throw IoError("'" + origin + "': truncated record");
            std::memcpy(p, buf.data() + pos, n);
            pos += n;
        };
        char magic[4];
        get(magic, 4);
        if (std::memcmp(magic, "EDAF", 4) != 0) throw IoError("'" + origin + "': bad magic");
        uint32_t version;
        get(&version, 4);
        if (version != kVersion)
            throw IoError("'" + origin + "': unsupported container version " + std::to_string(version));

        ArrayFile f;
        uint64_t meta_len;
        get(&meta_len, 8);
        f.meta.resize(meta_len);
        if (meta_len) get(f.meta.data(), meta_len);
        uint32_t count;
        get(&count, 4);
        f.arrays.reserve(count);
        for (uint32_t i = 0; i < count; ++i) {
            NamedArray a;
            uint32_t name_len;
            get(&name_len, 4);
            a.name.resize(name_len);
            if (name_len) get(a.name.data(), name_len);
            uint8_t dt;
            get(&dt, 1);
            a.dtype = static_cast<Dtype>(dt);
            get(&a.rows, 8);
            get(&a.cols, 8);
            size_t elem = a.dtype == Dtype::F32 ? 4 : 8;
            a.bytes.resize(elem * a.rows * a.cols);
            if (!a.bytes.empty()) get(a.bytes.data(), a.bytes.size());
            f.arrays.push_back(std::move(a));
        }
        return f;
    }
};

}  // namespace emodub

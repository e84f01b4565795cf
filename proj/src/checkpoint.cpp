#include "loomweave/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace loomweave {

namespace {
constexpr char kMagic[4] = {'L', 'W', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    LW_CHECK(in.good(), "checkpoint truncated");
}

void write_tensor(std::ofstream& out, const Tensor& t) {
    uint32_t nd = static_cast<uint32_t>(t.ndim());
    write_pod(out, nd);
    for (int i = 0; i < t.ndim(); ++i) write_pod(out, static_cast<int32_t>(t.dim(i)));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(double) * t.numel()));
}

Tensor read_tensor(std::ifstream& in) {
    uint32_t nd;
    read_pod(in, nd);
    LW_CHECK(nd <= 8, "corrupt checkpoint: tensor rank");
    std::vector<int> shape(nd);
    for (uint32_t i = 0; i < nd; ++i) {
        int32_t d;
        read_pod(in, d);
        shape[i] = d;
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(double) * t.numel()));
    LW_CHECK(in.good(), "checkpoint truncated");
    return t;
}
}  // namespace

void save_checkpoint(const std::string& path, uint64_t config_hash, int64_t step,
                     const ParamStore& params, const Adam* optimizer) {
    std::ofstream out(path, std::ios::binary);
    LW_CHECK(out.good(), "cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, config_hash);
    write_pod(out, step);
    write_pod(out, static_cast<uint32_t>(params.params.size()));
    for (const auto& p : params.params) {
        uint32_t len = static_cast<uint32_t>(p->name.size());
        write_pod(out, len);
        out.write(p->name.data(), len);
        write_tensor(out, p->value);
    }
    uint8_t has_opt = optimizer ? 1 : 0;
    write_pod(out, has_opt);
    if (optimizer) {
        LW_CHECK(optimizer->m.size() == params.params.size(),
                 "optimizer state does not match parameters");
        write_pod(out, optimizer->t);
        for (size_t i = 0; i < params.params.size(); ++i) {
            write_tensor(out, optimizer->m[i]);
            write_tensor(out, optimizer->v[i]);
        }
    }
    LW_CHECK(out.good(), "checkpoint write failed: " + path);
}

CheckpointInfo peek_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    LW_CHECK(in.good(), "cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    LW_CHECK(in.good() && std::memcmp(magic, kMagic, 4) == 0,
             "not a loomweave checkpoint: " + path);
    uint32_t version;
    read_pod(in, version);
    LW_CHECK(version == kVersion, "unsupported checkpoint version");
    CheckpointInfo info;
    read_pod(in, info.config_hash);
    read_pod(in, info.step);
    return info;
}

CheckpointInfo load_checkpoint(const std::string& path, uint64_t expected_hash,
                               ParamStore& params, Adam* optimizer) {
    std::ifstream in(path, std::ios::binary);
    LW_CHECK(in.good(), "cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    LW_CHECK(in.good() && std::memcmp(magic, kMagic, 4) == 0,
             "not a loomweave checkpoint: " + path);
    uint32_t version;
    read_pod(in, version);
    LW_CHECK(version == kVersion, "unsupported checkpoint version");
    CheckpointInfo info;
    read_pod(in, info.config_hash);
    read_pod(in, info.step);
    if (expected_hash != 0)
        LW_CHECK(info.config_hash == expected_hash,
                 "checkpoint/config hash mismatch for " + path);
    uint32_t count;
    read_pod(in, count);
    LW_CHECK(count == params.params.size(), "checkpoint parameter count mismatch");
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t len;
        read_pod(in, len);
        LW_CHECK(len < 4096, "corrupt checkpoint: name length");
        std::string name(len, '\0');
        in.read(name.data(), len);
        Tensor t = read_tensor(in);
        Var p = params.params[i];
        LW_CHECK(p->name == name, "checkpoint parameter order mismatch at " + name);
        LW_CHECK(p->value.same_shape(t), "checkpoint shape mismatch for " + name);
        p->value = std::move(t);
    }
    uint8_t has_opt;
    read_pod(in, has_opt);
    info.has_optimizer = has_opt != 0;
    if (has_opt && optimizer) {
        read_pod(in, optimizer->t);
        for (uint32_t i = 0; i < count; ++i) {
            optimizer->m[i] = read_tensor(in);
            optimizer->v[i] = read_tensor(in);
        }
    }
    return info;
}

}  // namespace loomweave

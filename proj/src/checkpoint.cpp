// Copyright (c) 2026 astain contributors
// SPDX-License-Identifier: Apache-2.0

#include "astain/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace astain {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'N', 'N', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t x) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((x >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t x) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((x >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64_array(std::ostream& os, const double* data, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        uint64_t bits;
        std::memcpy(&bits, &data[i], 8);
        write_u64(os, bits);
    }
}

bool read_exact(std::istream& is, void* dst, size_t n) {
    is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    return static_cast<size_t>(is.gcount()) == n;
}

uint32_t read_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!read_exact(is, b, 4)) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(b[i]) << (8 * i);
    return x;
}

uint64_t read_u64(std::istream& is, const char* what) {
    unsigned char b[8];
    if (!read_exact(is, b, 8)) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(b[i]) << (8 * i);
    return x;
}

void write_record(std::ostream& os, const std::string& name, const Tensor& t) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int e : t.shape) write_u64(os, static_cast<uint64_t>(e));
    write_f64_array(os, t.data(), t.size());
}

void append_network(std::ostream& os, std::vector<NamedTensor> params,
                    std::vector<std::pair<std::string, ops::BatchNormState*>> states) {
    for (const auto& nt : params) write_record(os, nt.name, *nt.tensor);
    for (const auto& [name, st] : states) {
        if (!st->initialized) continue;
        write_record(os, "rs." + name + ".mean", st->running_mean);
        write_record(os, "rs." + name + ".var", st->running_var);
    }
}

struct RecordMap {
    std::map<std::string, Tensor> records;

    Tensor take(const std::string& name) {
        auto it = records.find(name);
        if (it == records.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
        Tensor t = std::move(it->second);
        records.erase(it);
        return t;
    }

    bool has(const std::string& name) const { return records.count(name) > 0; }
};

void restore_network(RecordMap& rm, std::vector<NamedTensor> params,
                     std::vector<std::pair<std::string, ops::BatchNormState*>> states) {
    for (auto& nt : params) {
        Tensor t = rm.take(nt.name);
        if (t.shape != nt.tensor->shape)
            throw CheckpointError("checkpoint tensor '" + nt.name + "' has shape " + t.shape_str() + ", expected " +
                                  nt.tensor->shape_str());
        *nt.tensor = std::move(t);
    }
    for (auto& [name, st] : states) {
        const std::string mean_name = "rs." + name + ".mean";
        const std::string var_name = "rs." + name + ".var";
        if (rm.has(mean_name) != rm.has(var_name))
            throw CheckpointError("checkpoint has partial running statistics for '" + name + "'");
        if (rm.has(mean_name)) {
            st->running_mean = rm.take(mean_name);
            st->running_var = rm.take(var_name);
            st->initialized = true;
        }
    }
}

}  // namespace

void save_checkpoint(MitosisClassifier& model, DomainBranch* branch, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
    os.write(kMagic, 8);
    write_u32(os, kVersion);
    append_network(os, model.named_parameters(), model.named_bn_states());
    if (branch) append_network(os, branch->named_parameters(), branch->named_bn_states());
    os.flush();
    if (!os) throw CheckpointError("write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open '" + path + "'");
    char magic[8];
    if (!read_exact(is, magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw CheckpointError("'" + path + "' is not a DANNCKPT checkpoint (bad magic)");
    const uint32_t version = read_u32(is, "format version");
    if (version != kVersion)
        throw CheckpointError("unsupported checkpoint format version " + std::to_string(version));

    RecordMap rm;
    while (true) {
        is.peek();
        if (is.eof()) break;
        const uint32_t name_len = read_u32(is, "record name length");
        if (name_len == 0 || name_len > 4096) throw CheckpointError("implausible record name length in checkpoint");
        std::string name(name_len, '\0');
        if (!read_exact(is, name.data(), name_len)) throw CheckpointError("checkpoint truncated while reading record name");
        const uint32_t rank = read_u32(is, "tensor rank");
        if (rank > 8) throw CheckpointError("implausible tensor rank in checkpoint");
        std::vector<int> shape;
        int64_t n = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            const uint64_t e = read_u64(is, "tensor extent");
            if (e == 0 || e > (1ull << 30)) throw CheckpointError("implausible tensor extent in checkpoint");
            shape.push_back(static_cast<int>(e));
            n *= static_cast<int64_t>(e);
        }
        Tensor t(shape);
        for (int64_t i = 0; i < n; ++i) {
            const uint64_t bits = read_u64(is, "tensor values");
            std::memcpy(&t.v[static_cast<size_t>(i)], &bits, 8);
        }
        if (rm.records.count(name)) throw CheckpointError("duplicate tensor '" + name + "' in checkpoint");
        rm.records.emplace(std::move(name), std::move(t));
    }

    Checkpoint ckpt{MitosisClassifier(0), std::nullopt};
    restore_network(rm, ckpt.model.named_parameters(), ckpt.model.named_bn_states());

    if (rm.has("d.fc2.weight")) {
        auto it = rm.records.find("d.fc2.weight");
        if (it->second.rank() != 2) throw CheckpointError("checkpoint tensor 'd.fc2.weight' must be 2-D");
        const int num_domains = it->second.shape[0];
        ckpt.branch.emplace(num_domains, 0);
        restore_network(rm, ckpt.branch->named_parameters(), ckpt.branch->named_bn_states());
    }

    if (!rm.records.empty())
        throw CheckpointError("checkpoint contains unknown tensor '" + rm.records.begin()->first + "'");
    return ckpt;
}

}  // namespace astain

// SPDX-License-Identifier: Apache-2.0
#include "dld/checkpoint.hpp"

#include <algorithm>

#include "binio.hpp"
#include "dld/errors.hpp"

namespace dld {

TrainMode parse_train_mode(const std::string& name) {
    if (name == "reference") return TrainMode::Reference;
    if (name == "dld-student") return TrainMode::DldStudent;
    if (name == "rd-student") return TrainMode::RdStudent;
    throw ContractError("unknown train mode '" + name +
                        "' (valid: reference, dld-student, rd-student)");
}

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::Reference: return "reference";
        case TrainMode::DldStudent: return "dld-student";
        case TrainMode::RdStudent: return "rd-student";
    }
    return "?";
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

ModelParams Checkpoint::to_model_params(bool requires_grad) const {
    RngStream unused(0);
    ModelParams params = ModelParams::init(config, unused, requires_grad);
    params.for_each_param([&](const std::string& name, Tensor& t) {
        const Tensor* src = find(name);
        if (!src) throw ContractError("checkpoint: missing tensor '" + name + "'");
        if (src->shape() != t.shape())
            throw ContractError("checkpoint: tensor '" + name + "' has shape " +
                                shape_str(src->shape()) + ", expected " + shape_str(t.shape()));
        t = src->clone();
        t.set_requires_grad(requires_grad);
    });
    return params;
}

bool checkpoints_equal(const Checkpoint& a, const Checkpoint& b) {
    if (a.version != b.version || !(a.config == b.config) || a.mode != b.mode || a.step != b.step ||
        a.blank != b.blank || a.rng_states != b.rng_states || a.tensors.size() != b.tensors.size())
        return false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        if (a.tensors[i].first != b.tensors[i].first) return false;
        const Tensor& x = a.tensors[i].second;
        const Tensor& y = b.tensors[i].second;
        if (x.shape() != y.shape() || x.values() != y.values()) return false;
    }
    return true;
}

namespace {
constexpr char kCheckpointMagic[5] = "DLDC";
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    binio::write_bytes(os, kCheckpointMagic, 4);
    binio::write_pod<std::uint32_t>(os, ckpt.version);
    const auto& c = ckpt.config;
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.num_blocks));
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.model_dim));
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.ffn_dim));
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.vocab_size));
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.input_dim));
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(c.max_frames));
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.mode));
    binio::write_pod<std::uint64_t>(os, ckpt.step);
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.blank));
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.rng_states.size()));
    for (const auto& rs : ckpt.rng_states) {
        binio::write_string(os, rs.name);
        binio::write_pod<std::uint64_t>(os, rs.seed);
        binio::write_pod<std::uint64_t>(os, rs.counter);
    }
    binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, tensor] : ckpt.tensors) {
        binio::write_string(os, name);
        binio::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(tensor.rank()));
        for (int i = 0; i < tensor.rank(); ++i)
            binio::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.dim(i)));
        binio::write_f64s(os, tensor.values());
    }
    os.flush();
    if (!os) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    binio::expect_magic(is, kCheckpointMagic, path.string());
    Checkpoint ckpt;
    ckpt.version = binio::read_pod<std::uint32_t>(is);
    if (ckpt.version != 1)
        throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(ckpt.version));
    auto& c = ckpt.config;
    c.num_blocks = binio::read_pod<std::uint32_t>(is);
    c.model_dim = binio::read_pod<std::uint32_t>(is);
    c.ffn_dim = binio::read_pod<std::uint32_t>(is);
    c.vocab_size = binio::read_pod<std::uint32_t>(is);
    c.input_dim = binio::read_pod<std::uint32_t>(is);
    c.max_frames = binio::read_pod<std::uint32_t>(is);
    c.validate();
    ckpt.mode = static_cast<TrainMode>(binio::read_pod<std::uint32_t>(is));
    ckpt.step = binio::read_pod<std::uint64_t>(is);
    ckpt.blank = static_cast<std::int32_t>(binio::read_pod<std::uint32_t>(is));
    const auto num_streams = binio::read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < num_streams; ++i) {
        RngState rs;
        rs.name = binio::read_string(is);
        rs.seed = binio::read_pod<std::uint64_t>(is);
        rs.counter = binio::read_pod<std::uint64_t>(is);
        ckpt.rng_states.push_back(std::move(rs));
    }
    const auto num_tensors = binio::read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < num_tensors; ++i) {
        std::string name = binio::read_string(is);
        const auto rank = binio::read_pod<std::uint8_t>(is);
        Shape shape;
        for (std::uint8_t r = 0; r < rank; ++r)
            shape.push_back(static_cast<std::int64_t>(binio::read_pod<std::uint32_t>(is)));
        std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
        binio::read_f64s(is, values);
        ckpt.tensors.emplace_back(std::move(name), Tensor::from_data(shape, std::move(values)));
    }
    return ckpt;
}

}  // namespace dld

#include "lidarseg/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "binary_io.hpp"

namespace lidarseg {
namespace detail {

std::vector<char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<char>& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace detail

namespace tensorcore {
namespace {

constexpr std::string_view kMagic = "LSQW";
constexpr std::uint64_t kMaxExactStep = 1ull << 24;

}  // namespace

void write_tensor_records(const std::filesystem::path& path, const TensorMap<float>& tensors) {
    detail::ByteWriter w;
    w.bytes(kMagic);
    w.u16(kCheckpointVersion);
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xFFFF) throw UsageError("tensor name too long: " + name.substr(0, 32) + "...");
        if (t.rank() > 0xFF) throw UsageError("tensor rank too large for '" + name + "'");
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name);
        w.u8(static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (float v : t.data()) w.f32(v);
    }
    detail::write_file(path.string(), w.buffer());
}

TensorMap<float> read_tensor_records(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path.string());
    detail::ByteReader r(bytes, path.string());
    if (bytes.size() < kMagic.size() || r.bytes(kMagic.size()) != kMagic)
        throw FormatError(path.string() + ": bad magic, not an LSQW file");
    const auto version = r.u16();
    if (version != kCheckpointVersion)
        throw FormatError(path.string() + ": unsupported LSQW version " + std::to_string(version));
    TensorMap<float> out;
    while (!r.at_end()) {
        const auto len = r.u16();
        std::string name = r.bytes(len);
        const auto rank = r.u8();
        Shape shape;
        for (std::uint8_t i = 0; i < rank; ++i) {
            const auto d = r.u32();
            if (d == 0) throw FormatError(path.string() + ": zero dimension in record '" + name + "'");
            shape.push_back(d);
        }
        const std::size_t n = shape_size(shape);
        if (r.remaining() / 4 < n) throw FormatError(path.string() + ": truncated payload for '" + name + "'");
        std::vector<float> data(n);
        for (auto& v : data) v = r.f32();
        if (out.contains(name)) throw FormatError(path.string() + ": duplicate record '" + name + "'");
        if (rank == 0) shape = {1};
        out.emplace(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
    }
    return out;
}

std::filesystem::path adam_state_path(const std::filesystem::path& checkpoint) {
    auto p = checkpoint;
    p += ".adam";
    return p;
}

void save_checkpoint(const TensorMap<float>& params, const AdamState& state, const std::filesystem::path& path) {
    if (state.step >= kMaxExactStep) throw UsageError("optimizer step count too large to store exactly");
    write_tensor_records(path, params);
    TensorMap<float> records;
    for (const auto& [name, m] : state.first_moment) records.emplace("m/" + name, m);
    for (const auto& [name, v] : state.second_moment) records.emplace("v/" + name, v);
    records.emplace("adam/step", Tensor<float>({1}, static_cast<float>(state.step)));
    records.emplace("adam/hyper",
                    Tensor<float>({4}, std::vector<float>{state.learning_rate, state.beta1, state.beta2, state.epsilon}));
    write_tensor_records(adam_state_path(path), records);
}

TensorMap<float> load_params(const std::filesystem::path& path) { return read_tensor_records(path); }

AdamState load_adam_state(const std::filesystem::path& checkpoint) {
    const auto path = adam_state_path(checkpoint);
    auto records = read_tensor_records(path);
    AdamState s;
    auto step = records.find("adam/step");
    auto hyper = records.find("adam/hyper");
    if (step == records.end() || hyper == records.end() || step->second.size() != 1 || hyper->second.size() != 4)
        throw FormatError(path.string() + ": missing optimizer header records");
    s.step = static_cast<std::uint64_t>(step->second[0]);
    s.learning_rate = hyper->second[0];
    s.beta1 = hyper->second[1];
    s.beta2 = hyper->second[2];
    s.epsilon = hyper->second[3];
    for (auto& [name, t] : records) {
        if (name.starts_with("m/"))
            s.first_moment.emplace(name.substr(2), std::move(t));
        else if (name.starts_with("v/"))
            s.second_moment.emplace(name.substr(2), std::move(t));
        else if (!name.starts_with("adam/"))
            throw FormatError(path.string() + ": unexpected record '" + name + "'");
    }
    return s;
}

}  // namespace tensorcore
}  // namespace lidarseg

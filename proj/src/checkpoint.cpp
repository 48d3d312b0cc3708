#include "ptwin/checkpoint.hpp"

#include <map>

#include "ptwin/io.hpp"

namespace ptwin {

void save_checkpoint(const std::string& path, const nn::NamedTensors<float>& tensors) {
    io::BinaryWriter w(path);
    w.magic("PTWT");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& nt : tensors) {
        if (nt.name.size() > 0xffff) throw IoError("tensor name too long: " + nt.name);
        w.u16(static_cast<std::uint16_t>(nt.name.size()));
        w.bytes(nt.name.data(), nt.name.size());
        const auto& shape = nt.tensor.shape();
        w.u8(static_cast<std::uint8_t>(shape.size()));
        for (const auto d : shape) w.u32(static_cast<std::uint32_t>(d));
        w.f32_array(nt.tensor.data().data(), nt.tensor.data().size());
    }
    w.close();
}

void load_checkpoint(const std::string& path, nn::NamedTensors<float>& tensors) {
    io::BinaryReader r(path);
    r.expect_magic("PTWT");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw IoError("unsupported checkpoint version in " + path);
    const std::uint32_t count = r.u32();

    std::map<std::string, nn::NamedTensor<float>*> by_name;
    for (auto& nt : tensors) by_name[nt.name] = &nt;
    if (count != tensors.size())
        throw IoError("checkpoint tensor count mismatch in " + path);

    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t len = r.u16();
        const std::string name = r.read_string(len);
        const std::uint8_t rank = r.u8();
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::int64_t>(r.u32());
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("unknown tensor '" + name + "' in " + path);
        auto& dst = it->second->tensor;
        if (dst.shape() != shape)
            throw IoError("shape mismatch for '" + name + "' in " + path + ": file " +
                          shape_str(shape) + " model " + shape_str(dst.shape()));
        r.f32_array(dst.data().data(), dst.data().size());
    }
}

}  // namespace ptwin

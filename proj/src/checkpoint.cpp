#include "dslm/checkpoint.hpp"

#include <bit>
#include <cstring>

namespace dslm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'S', 'L', 'M', 'C', 'K', 'P', 'T'};

struct Blob {
    std::string name;
    std::vector<std::size_t> shape;
    const float* data;
    std::size_t size;
};

ordered_json shape_json(const std::vector<std::size_t>& shape) {
    ordered_json a = ordered_json::array();
    for (auto s : shape) a.push_back(s);
    return a;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::vector<Blob> blobs;
    for (const auto& t : ck.params.layout.tensors) {
        blobs.push_back({t.name, t.shape, ck.params.data.data() + t.offset, t.size});
    }
    if (ck.lora) {
        for (const auto& t : ck.lora->tensors) {
            blobs.push_back({t.name, t.shape, ck.lora->data.data() + t.offset, t.size});
        }
    }
    if (!ck.opt_m.empty()) {
        blobs.push_back({"optimizer.m", {ck.opt_m.size()}, ck.opt_m.data(), ck.opt_m.size()});
        blobs.push_back({"optimizer.v", {ck.opt_v.size()}, ck.opt_v.data(), ck.opt_v.size()});
    }

    ordered_json header;
    header["format_version"] = kCheckpointFormatVersion;
    header["config"] = ck.params.config.to_json();
    header["stage"] = ck.stage;
    header["step"] = ck.step;
    header["rng_state"] = ck.rng_state;
    if (ck.lora) {
        header["lora"] = {{"rank", ck.lora->rank}, {"alpha", ck.lora->alpha}};
    }
    header["optimizer_t"] = ck.opt_t;
    ordered_json tensors = ordered_json::array();
    std::size_t offset = 0;
    for (const auto& b : blobs) {
        ordered_json t;
        t["name"] = b.name;
        t["shape"] = shape_json(b.shape);
        t["offset"] = offset;
        t["bytes"] = b.size * sizeof(float);
        tensors.push_back(t);
        offset += b.size * sizeof(float);
    }
    header["tensors"] = tensors;
    header["meta"] = ordered_json::parse(ck.meta.dump());

    const std::string head = header.dump();
    std::string out;
    out.reserve(16 + head.size() + offset);
    out.append(kMagic, 8);
    const std::uint64_t hlen = head.size();
    out.append(reinterpret_cast<const char*>(&hlen), 8);
    out += head;
    for (const auto& b : blobs) out.append(reinterpret_cast<const char*>(b.data), b.size * sizeof(float));
    write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expect) {
    const std::string raw = read_file(path);
    if (raw.size() < 16 || std::memcmp(raw.data(), kMagic, 8) != 0) {
        throw ValidationError("'" + path + "' is not a checkpoint file");
    }
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, raw.data() + 8, 8);
    if (16 + hlen > raw.size()) throw ValidationError("checkpoint '" + path + "' is truncated");
    json header;
    try {
        header = json::parse(raw.substr(16, hlen));
    } catch (const json::parse_error& e) {
        throw ValidationError("checkpoint '" + path + "' has a corrupt header: " + e.what());
    }
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
        throw ValidationError("checkpoint '" + path + "' has format version " + std::to_string(version) +
                              ", expected " + std::to_string(kCheckpointFormatVersion));
    }
    Checkpoint ck;
    const ModelConfig cfg = ModelConfig::from_json(header.at("config"));
    if (expect != nullptr && !(cfg == *expect)) {
        throw ValidationError("checkpoint '" + path + "' config " + cfg.to_json().dump() +
                              " does not match expected " + expect->to_json().dump());
    }
    ck.params.config = cfg;
    ck.params.layout = ParamLayout::build(cfg);
    ck.params.data.assign(ck.params.layout.total, 0.0f);
    ck.stage = header.at("stage").get<std::string>();
    ck.step = header.at("step").get<long>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    ck.opt_t = header.value("optimizer_t", 0L);
    ck.meta = header.value("meta", json::object());
    if (header.contains("lora")) {
        ck.lora = lora_attach(ck.params, header["lora"].at("rank").get<int>(), header["lora"].at("alpha").get<double>(), 0);
    }

    const std::size_t payload = 16 + hlen;
    auto copy_into = [&](const json& t, float* dst, std::size_t n) {
        const auto off = t.at("offset").get<std::size_t>();
        const auto bytes = t.at("bytes").get<std::size_t>();
        if (bytes != n * sizeof(float) || payload + off + bytes > raw.size()) {
            throw ValidationError("checkpoint tensor '" + t.at("name").get<std::string>() + "' has a bad size");
        }
        std::memcpy(dst, raw.data() + payload + off, bytes);
    };
    std::size_t seen = 0;
    for (const auto& t : header.at("tensors")) {
        const auto name = t.at("name").get<std::string>();
        const auto n = t.at("bytes").get<std::size_t>() / sizeof(float);
        if (name == "optimizer.m" || name == "optimizer.v") {
            auto& v = name == "optimizer.m" ? ck.opt_m : ck.opt_v;
            v.assign(n, 0.0f);
            copy_into(t, v.data(), n);
            continue;
        }
        const std::vector<TensorSpec>& specs =
            name.find(".lora_") != std::string::npos && ck.lora ? ck.lora->tensors : ck.params.layout.tensors;
        float* base = &specs == &ck.params.layout.tensors ? ck.params.data.data() : ck.lora->data.data();
        const TensorSpec* spec = nullptr;
        for (const auto& s : specs) {
            if (s.name == name) spec = &s;
        }
        if (spec == nullptr) throw ValidationError("checkpoint has unknown tensor '" + name + "'");
        if (t.at("shape").get<std::vector<std::size_t>>() != spec->shape) {
            throw ValidationError("checkpoint tensor '" + name + "' has the wrong shape");
        }
        copy_into(t, base + spec->offset, spec->size);
        ++seen;
    }
    const std::size_t expected = ck.params.layout.tensors.size() + (ck.lora ? ck.lora->tensors.size() : 0);
    if (seen != expected) throw ValidationError("checkpoint '" + path + "' is missing tensors");
    return ck;
}

ModelParams<float> inference_params(const Checkpoint& ckpt) {
    return ckpt.lora ? lora_merge(ckpt.params, *ckpt.lora) : ckpt.params;
}

}  // namespace dslm

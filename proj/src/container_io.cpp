#include "mrgr/container_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mrgr/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "container format is little-endian; big-endian hosts are not supported");

namespace mrgr {

using nlohmann::json;

namespace {

void write_bytes(std::ofstream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

} // namespace

void write_container(const std::string& path, const char* magic8, const json& meta,
                     const std::vector<NamedTensor>& tensors) {
    json manifest;
    manifest["meta"] = meta;
    json tensor_list = json::array();
    uint64_t offset = 0;
    for (const NamedTensor& nt : tensors) {
        if (!nt.tensor->all_finite()) {
            throw NumericError("refusing to serialize non-finite tensor '" + nt.name + "'");
        }
        json tj;
        tj["name"] = nt.name;
        tj["shape"] = nt.tensor->shape();
        tj["offset"] = offset;
        tensor_list.push_back(std::move(tj));
        offset += static_cast<uint64_t>(nt.tensor->size()) * sizeof(double);
    }
    manifest["tensors"] = std::move(tensor_list);
    const std::string mtext = manifest.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write file: " + tmp);
        write_bytes(out, magic8, 8);
        const uint32_t version = CONTAINER_VERSION;
        write_bytes(out, &version, sizeof(version));
        const uint64_t mlen = mtext.size();
        write_bytes(out, &mlen, sizeof(mlen));
        write_bytes(out, mtext.data(), mtext.size());
        for (const NamedTensor& nt : tensors) {
            write_bytes(out, nt.tensor->data(), static_cast<size_t>(nt.tensor->size()) * sizeof(double));
        }
        out.flush();
        if (!out.good()) throw IoError("failed writing file: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp + " into place: " + ec.message());
}

const Tensor& LoadedContainer::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return t;
    }
    throw FormatError("container has no tensor named '" + name + "'");
}

LoadedContainer read_container(const std::string& path, const char* magic8) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);

    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, magic8, 8) != 0) {
        throw FormatError(path + ": bad magic; not a " + std::string(magic8, 8) + " container");
    }
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != CONTAINER_VERSION) {
        throw FormatError(path + ": unknown container version " + std::to_string(version));
    }
    uint64_t mlen = 0;
    in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    if (!in || mlen > (1ULL << 31)) throw FormatError(path + ": implausible manifest length");
    std::string mtext(mlen, '\0');
    in.read(mtext.data(), static_cast<std::streamsize>(mlen));
    if (static_cast<uint64_t>(in.gcount()) != mlen) throw FormatError(path + ": truncated manifest");

    json manifest;
    try {
        manifest = json::parse(mtext);
    } catch (const json::exception& e) {
        throw FormatError(path + ": manifest parse failure: " + e.what());
    }
    if (!manifest.contains("meta") || !manifest.contains("tensors") || !manifest["tensors"].is_array()) {
        throw FormatError(path + ": manifest missing meta/tensors");
    }

    const std::streampos payload_start = in.tellg();
    LoadedContainer out;
    out.meta = manifest["meta"];
    for (const auto& tj : manifest["tensors"]) {
        if (!tj.contains("name") || !tj.contains("shape") || !tj.contains("offset")) {
            throw FormatError(path + ": tensor record missing fields");
        }
        const std::string name = tj["name"].get<std::string>();
        std::vector<int64_t> shape = tj["shape"].get<std::vector<int64_t>>();
        const uint64_t offset = tj["offset"].get<uint64_t>();
        Tensor t(shape);
        in.seekg(payload_start + static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (static_cast<int64_t>(in.gcount()) != t.size() * static_cast<int64_t>(sizeof(double))) {
            throw FormatError(path + ": truncated payload for tensor '" + name + "'");
        }
        if (!t.all_finite()) {
            throw FormatError(path + ": tensor '" + name + "' contains non-finite values");
        }
        out.tensors.emplace_back(name, std::move(t));
    }
    return out;
}

// ------------------------------------------------------------ checkpoints ----

namespace {

json model_config_to_json(const ModelConfig& c) {
    json j;
    j["vocab_size"] = c.vocab_size;
    j["d_model"] = c.d_model;
    j["n_layers"] = c.n_layers;
    j["split_layer"] = c.split_layer;
    j["n_heads"] = c.n_heads;
    j["ff_dim"] = c.ff_dim;
    j["max_seq_len"] = c.max_seq_len;
    j["dropout"] = c.dropout;
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    try {
        c.vocab_size = j.at("vocab_size").get<int64_t>();
        c.d_model = j.at("d_model").get<int64_t>();
        c.n_layers = j.at("n_layers").get<int64_t>();
        c.split_layer = j.at("split_layer").get<int64_t>();
        c.n_heads = j.at("n_heads").get<int64_t>();
        c.ff_dim = j.at("ff_dim").get<int64_t>();
        c.max_seq_len = j.at("max_seq_len").get<int64_t>();
        c.dropout = j.at("dropout").get<double>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint config: ") + e.what());
    }
    return c;
}

} // namespace

void save_backbone(const BackboneParams& p, const std::string& path) {
    json meta;
    meta["role"] = "backbone";
    meta["config"] = model_config_to_json(p.config);
    std::vector<NamedTensor> tensors;
    for (auto& [name, t] : const_cast<BackboneParams&>(p).named_params()) {
        tensors.push_back({name, t});
    }
    write_container(path, MAGIC_CHECKPOINT, meta, tensors);
}

BackboneParams load_backbone(const std::string& path) {
    LoadedContainer c = read_container(path, MAGIC_CHECKPOINT);
    if (!c.meta.contains("role") || c.meta["role"] != "backbone") {
        throw FormatError(path + ": checkpoint role is not 'backbone'");
    }
    ModelConfig cfg = model_config_from_json(c.meta.at("config"));
    cfg.validate();
    BackboneParams p;
    p.config = cfg;
    // allocate correctly shaped tensors, then copy by name
    BackboneParams shaped = BackboneParams::init(cfg, 0);
    p.tok_emb = std::move(shaped.tok_emb);
    p.pos_emb = std::move(shaped.pos_emb);
    p.layers = std::move(shaped.layers);
    p.lnf_g = std::move(shaped.lnf_g);
    p.lnf_b = std::move(shaped.lnf_b);
    p.w_out = std::move(shaped.w_out);
    p.b_out = std::move(shaped.b_out);
    size_t idx = 0;
    for (auto& [name, t] : p.named_params()) {
        if (idx >= c.tensors.size() || c.tensors[idx].first != name) {
            throw FormatError(path + ": checkpoint tensor list mismatch at '" + name + "'");
        }
        const Tensor& loaded = c.tensors[idx].second;
        if (!loaded.same_shape(*t)) {
            throw FormatError(path + ": tensor '" + name + "' has shape " + loaded.shape_str() +
                              ", expected " + t->shape_str());
        }
        *t = loaded;
        ++idx;
    }
    if (idx != c.tensors.size()) throw FormatError(path + ": extra tensors in checkpoint");
    p.frozen = true;
    return p;
}

} // namespace mrgr

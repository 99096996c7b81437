#include "nodulenet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace nodulenet {

namespace {

constexpr char kMagic[4] = {'N', 'O', 'D', 'L'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f, const char* what) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    return v;
}

} // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
    for (const auto& r : records)
        if (r.name == name) return &r;
    return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path);
    f.write(kMagic, 4);
    write_pod<uint32_t>(f, ckpt.version);
    const std::string manifest = ckpt.manifest.dump();
    write_pod<uint64_t>(f, manifest.size());
    f.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    write_pod<uint64_t>(f, ckpt.records.size());
    for (const auto& r : ckpt.records) {
        write_pod<uint32_t>(f, static_cast<uint32_t>(r.name.size()));
        f.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        write_pod<uint8_t>(f, r.dtype);
        write_pod<uint32_t>(f, static_cast<uint32_t>(r.dims.size()));
        for (int64_t d : r.dims) write_pod<uint64_t>(f, static_cast<uint64_t>(d));
        if (r.dtype == 0) {
            for (double v : r.values) write_pod<float>(f, static_cast<float>(v));
        } else {
            for (double v : r.values) write_pod<double>(f, v);
        }
    }
    if (!f) throw std::runtime_error("write failure on checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open checkpoint " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("bad checkpoint magic in " + path);
    Checkpoint c;
    c.version = read_pod<uint32_t>(f, "version");
    if (c.version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(c.version));
    const uint64_t mlen = read_pod<uint64_t>(f, "manifest length");
    std::string manifest(mlen, '\0');
    f.read(manifest.data(), static_cast<std::streamsize>(mlen));
    if (!f) throw FormatError("checkpoint truncated in manifest");
    try {
        c.manifest = nlohmann::json::parse(manifest);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt checkpoint manifest: ") + e.what());
    }
    const uint64_t nrec = read_pod<uint64_t>(f, "record count");
    for (uint64_t i = 0; i < nrec; ++i) {
        TensorRecord r;
        const uint32_t nlen = read_pod<uint32_t>(f, "name length");
        r.name.resize(nlen);
        f.read(r.name.data(), nlen);
        if (!f) throw FormatError("checkpoint truncated in record name");
        r.dtype = read_pod<uint8_t>(f, "dtype");
        if (r.dtype > 1) throw FormatError("unknown dtype tag in record " + r.name);
        const uint32_t rank = read_pod<uint32_t>(f, "rank");
        for (uint32_t d = 0; d < rank; ++d)
            r.dims.push_back(static_cast<int64_t>(read_pod<uint64_t>(f, "dims")));
        const int64_t n = r.size();
        r.values.resize(static_cast<size_t>(n));
        for (int64_t v = 0; v < n; ++v)
            r.values[static_cast<size_t>(v)] = r.dtype == 0
                                                   ? static_cast<double>(read_pod<float>(f, "payload"))
                                                   : read_pod<double>(f, "payload");
        c.records.push_back(std::move(r));
    }
    return c;
}

Checkpoint make_checkpoint(Network<float>& net, const Adadelta<float>* opt, int epoch,
                           nlohmann::json config_echo) {
    Checkpoint c;
    c.manifest = {{"format_version", kVersion},
                  {"arch_manifest", net.manifest()},
                  {"epoch", epoch},
                  {"config", std::move(config_echo)}};
    for (const auto& p : net.params()) {
        TensorRecord r;
        r.name = p.name;
        r.dtype = 0;
        r.dims = p.tensor.shape();
        r.values.assign(p.tensor.data().begin(), p.tensor.data().end());
        c.records.push_back(std::move(r));
    }
    for (const auto& [name, buf] : net.buffers()) {
        TensorRecord r;
        r.name = name;
        r.dtype = 1;
        r.dims = {static_cast<int64_t>(buf->size())};
        r.values = *buf;
        c.records.push_back(std::move(r));
    }
    if (opt) {
        std::map<std::string, const Adadelta<float>::Slot*> sorted;
        for (const auto& [n, s] : opt->slots()) sorted[n] = &s;
        for (const auto& [name, slot] : sorted) {
            TensorRecord g{"opt/acc_grad/" + name, 1,
                           {static_cast<int64_t>(slot->acc_grad.size())}, slot->acc_grad};
            TensorRecord u{"opt/acc_update/" + name, 1,
                           {static_cast<int64_t>(slot->acc_update.size())}, slot->acc_update};
            c.records.push_back(std::move(g));
            c.records.push_back(std::move(u));
        }
    }
    return c;
}

std::unique_ptr<Network<float>> network_from_checkpoint(const Checkpoint& ckpt) {
    const auto& m = ckpt.manifest.at("arch_manifest");
    return std::make_unique<Network<float>>(parse_arch(m.at("arch").get<std::string>()),
                                            m.at("width_scale").get<double>(),
                                            m.at("init_seed").get<uint64_t>());
}

void apply_checkpoint(const Checkpoint& ckpt, Network<float>& net, Adadelta<float>* opt) {
    const auto& m = ckpt.manifest.at("arch_manifest");
    if (m.at("arch").get<std::string>() != arch_name(net.kind()))
        throw IncompatibilityError("checkpoint architecture " +
                                   m.at("arch").get<std::string>() + " does not match network " +
                                   arch_name(net.kind()));
    for (const auto& p : net.params()) {
        const TensorRecord* r = ckpt.find(p.name);
        if (!r) throw IncompatibilityError("checkpoint misses parameter " + p.name);
        if (r->dims != p.tensor.shape())
            throw IncompatibilityError("parameter " + p.name + " has shape " +
                                       shape_str(r->dims) + " in checkpoint but " +
                                       shape_str(p.tensor.shape()) + " in network");
        auto& dst = const_cast<Tensor<float>&>(p.tensor).data();
        for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(r->values[i]);
    }
    for (auto& [name, buf] : net.buffers()) {
        const TensorRecord* r = ckpt.find(name);
        if (!r) throw IncompatibilityError("checkpoint misses buffer " + name);
        if (r->values.size() != buf->size())
            throw IncompatibilityError("buffer " + name + " size mismatch");
        *buf = r->values;
    }
    if (opt) {
        opt->slots().clear();
        for (const auto& r : ckpt.records) {
            if (r.name.rfind("opt/acc_grad/", 0) == 0)
                opt->slots()[r.name.substr(13)].acc_grad = r.values;
            else if (r.name.rfind("opt/acc_update/", 0) == 0)
                opt->slots()[r.name.substr(15)].acc_update = r.values;
        }
    }
}

} // namespace nodulenet

#pragma once

#include <json.hpp>

#include "nodulenet/adadelta.hpp"
#include "nodulenet/network.hpp"

namespace nodulenet {

/// One serialized tensor. dtype 0 = f32, 1 = f64; f32 payloads survive the
/// double staging exactly, so save -> load -> save is byte-identical.
struct TensorRecord {
    std::string name;
    uint8_t dtype = 0;
    std::vector<int64_t> dims;
    std::vector<double> values;

    int64_t size() const {
        int64_t n = 1;
        for (int64_t d : dims) n *= d;
        return n;
    }
};

struct Checkpoint {
    uint32_t version = 1;
    nlohmann::json manifest; // arch manifest + epoch + config echo
    std::vector<TensorRecord> records;

    const TensorRecord* find(const std::string& name) const;
};

/// Binary layout: magic "NODL", u32 version, u64 manifest length + bytes,
/// u64 record count, then per record: u32 name length, name bytes, u8 dtype,
/// u32 rank, u64 dims, little-endian payload.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Snapshot of parameters, batch-norm running statistics, and (optionally)
/// optimizer accumulators.
Checkpoint make_checkpoint(Network<float>& net, const Adadelta<float>* opt, int epoch,
                           nlohmann::json config_echo);

/// Writes checkpoint tensors back into a freshly built network; shapes are
/// validated against the manifest and the graph.
void apply_checkpoint(const Checkpoint& ckpt, Network<float>& net, Adadelta<float>* opt);

/// Rebuilds the network a checkpoint was saved from.
std::unique_ptr<Network<float>> network_from_checkpoint(const Checkpoint& ckpt);

} // namespace nodulenet

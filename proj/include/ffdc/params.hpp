#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ffdc/tensor.hpp"

namespace ffdc {

enum class ParamInit {
    fan_in_uniform,  // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), fan_in = rows
    zeros,
    ones,
};

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;  // Adam first moment
    Tensor v;  // Adam second moment
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Named parameter arrays with gradient accumulators and optimizer moments.
// Initialization draws from a per-parameter stream keyed by (seed, name), so
// registration order never changes the values.
class ParamStore {
public:
    explicit ParamStore(uint64_t seed) : seed_(seed) {}

    int add(const std::string& name, int rows, int cols, ParamInit init = ParamInit::fan_in_uniform);
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    Tensor& value(const std::string& name) { return at(name).value; }
    const Tensor& value(const std::string& name) const { return at(name).value; }
    Tensor& grad(const std::string& name) { return at(name).grad; }

    size_t count() const { return params_.size(); }
    const std::vector<Param>& params() const { return params_; }
    std::vector<Param>& params() { return params_; }

    void zero_grads();

    // Bias-corrected adaptive-moment update; clears gradients afterwards.
    // Throws if any gradient entry is non-finite, naming the parameter.
    void adam_step(const AdamConfig& cfg);
    int64_t adam_t() const { return adam_t_; }

    // Checkpoint format: magic "FFDC1", u64 LE header length, UTF-8 JSON header
    // {"meta": ..., "params": [{name, rows, cols, offset}, ...]}, then the raw
    // little-endian 64-bit float arrays in manifest order. A load followed by a
    // save reproduces the file byte for byte.
    void save(const std::string& path) const;
    static ParamStore load(const std::string& path);

    std::string meta_json;  // model metadata embedded in the manifest
    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    int64_t adam_t_ = 0;
    std::vector<Param> params_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace ffdc

#include "ffdc/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "ffdc/rng.hpp"

namespace ffdc {

int ParamStore::add(const std::string& name, int rows, int cols, ParamInit init) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
    Param p;
    p.name = name;
    p.value = Tensor(rows, cols);
    p.grad = Tensor(rows, cols);
    p.m = Tensor(rows, cols);
    p.v = Tensor(rows, cols);
    switch (init) {
        case ParamInit::fan_in_uniform: {
            Rng rng = Rng::stream(seed_, name);
            const double bound = 1.0 / std::sqrt(static_cast<double>(rows > 0 ? rows : 1));
            for (double& x : p.value.v) x = rng.uniform(-bound, bound);
            break;
        }
        case ParamInit::zeros:
            break;
        case ParamInit::ones:
            p.value.fill(1.0);
            break;
    }
    const int id = static_cast<int>(params_.size());
    params_.push_back(std::move(p));
    index_[name] = id;
    return id;
}

Param& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
    return params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
    return params_[it->second];
}

void ParamStore::zero_grads() {
    for (auto& p : params_) p.grad.fill(0.0);
}

void ParamStore::adam_step(const AdamConfig& cfg) {
    for (const auto& p : params_)
        if (!p.grad.all_finite())
            throw std::runtime_error("adam_step: non-finite gradient in parameter '" + p.name + "'");
    adam_t_ += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam_t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam_t_));
    for (auto& p : params_) {
        for (size_t i = 0; i < p.value.v.size(); ++i) {
            const double g = p.grad.v[i];
            p.m.v[i] = cfg.beta1 * p.m.v[i] + (1.0 - cfg.beta1) * g;
            p.v.v[i] = cfg.beta2 * p.v.v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = p.m.v[i] / bc1;
            const double vhat = p.v.v[i] / bc2;
            p.value.v[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
        p.grad.fill(0.0);
    }
}

namespace {

constexpr char kMagic[5] = {'F', 'F', 'D', 'C', '1'};

void write_u64_le(std::ostream& os, uint64_t x) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((x >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(b[i]) << (8 * i);
    return x;
}

void write_f64_le(std::ostream& os, double d) {
    uint64_t x;
    std::memcpy(&x, &d, 8);
    write_u64_le(os, x);
}

double read_f64_le(std::istream& is) {
    const uint64_t x = read_u64_le(is);
    double d;
    std::memcpy(&d, &x, 8);
    return d;
}

}  // namespace

void ParamStore::save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["meta"] = meta_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(meta_json);
    manifest["seed"] = seed_;
    nlohmann::json plist = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& p : params_) {
        plist.push_back({{"name", p.name}, {"rows", p.value.rows}, {"cols", p.value.cols}, {"offset", offset}});
        offset += p.value.size() * 8;
    }
    manifest["params"] = plist;
    const std::string header = manifest.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint save: cannot open " + path);
    os.write(kMagic, 5);
    write_u64_le(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& p : params_)
        for (double d : p.value.v) write_f64_le(os, d);
    if (!os) throw std::runtime_error("checkpoint save: write failed for " + path);
}

ParamStore ParamStore::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint load: cannot open " + path);
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, kMagic, 5) != 0)
        throw std::runtime_error("checkpoint load: bad magic in " + path);
    const uint64_t hlen = read_u64_le(is);
    std::string header(hlen, '\0');
    is.read(header.data(), static_cast<std::streamsize>(hlen));
    if (!is) throw std::runtime_error("checkpoint load: truncated header in " + path);
    nlohmann::json manifest = nlohmann::json::parse(header);

    ParamStore store(manifest.value("seed", uint64_t{0}));
    store.meta_json = manifest["meta"].dump();
    for (const auto& entry : manifest["params"]) {
        const std::string name = entry["name"];
        const int rows = entry["rows"];
        const int cols = entry["cols"];
        const int id = store.add(name, rows, cols, ParamInit::zeros);
        for (double& d : store.params_[id].value.v) d = read_f64_le(is);
    }
    if (!is) throw std::runtime_error("checkpoint load: truncated data in " + path);
    return store;
}

}  // namespace ffdc

#include "redforge/optim.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace redforge::optim {

void ParamMap::add(std::string name, TensorPtr t, bool trainable) {
    for (const auto& e : entries_)
        if (e.name == name) throw std::runtime_error("duplicate parameter name: " + name);
    entries_.push_back({std::move(name), std::move(t), trainable});
}

void ParamMap::merge(const ParamMap& other, const std::string& prefix) {
    for (const auto& e : other.entries_) add(prefix + "." + e.name, e.tensor, e.trainable);
}

std::vector<TensorPtr> ParamMap::trainable() const {
    std::vector<TensorPtr> out;
    for (const auto& e : entries_)
        if (e.trainable) out.push_back(e.tensor);
    return out;
}

TensorPtr ParamMap::find(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e.tensor;
    return nullptr;
}

std::size_t ParamMap::total_values() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor->values.size();
    return n;
}

void ParamMap::zero_grad() const {
    for (const auto& e : entries_) e.tensor->zero_grad();
}

AdamW::AdamW(std::vector<TensorPtr> params, Options opt) : params_(std::move(params)), opt_(opt) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p->values.size(), 0.0);
        v_.emplace_back(p->values.size(), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = *params_[pi];
        if (p.grad.size() != p.values.size()) p.ensure_grad();
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            const double g = p.grad[i];
            m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
            v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.values[i] -= opt_.lr * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * p.values[i]);
        }
    }
}

void AdamW::zero_grad() {
    for (const auto& p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------

namespace {
template <class T>
void write_raw(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void read_raw(std::ifstream& f, T& v, const char* what) {
    if (!f.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw std::runtime_error(std::string("CKPT1 parse error: truncated ") + what);
}
}  // namespace

void save_checkpoint(const ParamMap& params, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint for write: " + path.string());
    f.write("CKPT1", 5);
    write_raw(f, static_cast<std::uint32_t>(params.entries().size()));
    for (const auto& e : params.entries()) {
        write_raw(f, static_cast<std::uint32_t>(e.name.size()));
        f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_raw(f, static_cast<std::uint32_t>(e.tensor->shape.size()));
        for (int d : e.tensor->shape) write_raw(f, static_cast<std::uint32_t>(d));
        f.write(reinterpret_cast<const char*>(e.tensor->values.data()),
                static_cast<std::streamsize>(e.tensor->values.size() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("short checkpoint write: " + path.string());
}

void load_checkpoint(ParamMap& params, const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path.string());
    char magic[5];
    if (!f.read(magic, 5) || std::memcmp(magic, "CKPT1", 5) != 0)
        throw std::runtime_error("CKPT1 parse error: bad magic in " + path.string());
    std::uint32_t count = 0;
    read_raw(f, count, "tensor count");
    if (count != params.entries().size())
        throw std::runtime_error("CKPT1: tensor count " + std::to_string(count) + " does not match model (" +
                                 std::to_string(params.entries().size()) + ")");
    for (const auto& e : params.entries()) {
        std::uint32_t name_len = 0;
        read_raw(f, name_len, "name length");
        std::string name(name_len, '\0');
        if (!f.read(name.data(), name_len)) throw std::runtime_error("CKPT1 parse error: truncated name");
        if (name != e.name)
            throw std::runtime_error("CKPT1: tensor '" + name + "' where '" + e.name + "' was expected");
        std::uint32_t rank = 0;
        read_raw(f, rank, "rank");
        autodiff::Shape shape(rank);
        for (auto& d : shape) {
            std::uint32_t v = 0;
            read_raw(f, v, "dim");
            d = static_cast<int>(v);
        }
        if (shape != e.tensor->shape)
            throw std::runtime_error("CKPT1: shape mismatch for '" + name + "'");
        if (!f.read(reinterpret_cast<char*>(e.tensor->values.data()),
                    static_cast<std::streamsize>(e.tensor->values.size() * sizeof(double))))
            throw std::runtime_error("CKPT1 parse error: truncated values for '" + name + "'");
    }
}

}  // namespace redforge::optim

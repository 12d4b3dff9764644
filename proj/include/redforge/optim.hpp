#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "redforge/autodiff.hpp"

namespace redforge::optim {

using autodiff::TensorPtr;

// Ordered, named parameter collection. Order is fixed at registration and
// drives optimizer state layout and checkpoint layout.
struct ParamEntry {
    std::string name;
    TensorPtr tensor;
    bool trainable = true;  // false for running BN statistics
};

class ParamMap {
public:
    void add(std::string name, TensorPtr t, bool trainable = true);
    void merge(const ParamMap& other, const std::string& prefix);

    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::vector<TensorPtr> trainable() const;
    TensorPtr find(const std::string& name) const;
    std::size_t total_values() const;

    void zero_grad() const;

private:
    std::vector<ParamEntry> entries_;
};

// Decoupled-weight-decay Adam. State is owned here, one slot per parameter.
class AdamW {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW(std::vector<TensorPtr> params, Options opt);

    void step();
    void zero_grad();
    Options& options() { return opt_; }

private:
    std::vector<TensorPtr> params_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
    Options opt_;
};

// CKPT1 checkpoint: magic "CKPT1", u32 tensor count, then per tensor
// u32 name length + UTF-8 name, u32 rank, u32 dims, f64 values (all LE).
void save_checkpoint(const ParamMap& params, const std::filesystem::path& path);
void load_checkpoint(ParamMap& params, const std::filesystem::path& path);

}  // namespace redforge::optim

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lvmae/rng.hpp"
#include "lvmae/tensor.hpp"

namespace lvmae {

// Named trainable parameters; the unit of checkpointing.
struct ParamStore {
    std::map<std::string, TensorPtr> items;

    TensorPtr& at(const std::string& name) {
        auto it = items.find(name);
        if (it == items.end()) throw std::out_of_range("param not found: " + name);
        return it->second;
    }
    const TensorPtr& at(const std::string& name) const {
        auto it = items.find(name);
        if (it == items.end()) throw std::out_of_range("param not found: " + name);
        return it->second;
    }
    TensorPtr add(const std::string& name, TensorPtr t) {
        t->requires_grad = true;
        t->ensure_grad();
        items[name] = t;
        return t;
    }
    void zero_grad() {
        for (auto& [name, t] : items) t->zero_grad();
    }
};

TensorPtr init_trunc_normal(Shape shape, double stddev, RngStream& rng);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct AdamState {
    std::vector<double> m, v;
    std::int64_t t = 0;
};

// Bias-corrected Adam with decoupled weight decay; reads param.grad.
void adam_update(Tensor& param, AdamState& state, const AdamConfig& cfg, double lr);

struct LrSchedule {
    double peak_lr = 1.5e-4;
    std::int64_t warmup_steps = 0;
    std::int64_t total_steps = 1;
    double min_lr = 0.0;
};

// Linear ramp 0 -> peak over warmup, cosine peak -> min_lr afterward.
double lr_at(std::int64_t step, const LrSchedule& schedule);

// Adam over a ParamStore, one state per named parameter.
class Optimizer {
public:
    explicit Optimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamStore& params, double lr) {
        for (auto& [name, t] : params.items) {
            auto& st = states_[name];
            if (st.m.empty()) {
                st.m.assign(t->data.size(), 0.0);
                st.v.assign(t->data.size(), 0.0);
            }
            adam_update(*t, st, cfg_, lr);
        }
    }

    const AdamConfig& config() const { return cfg_; }

    // exposed so training runs can checkpoint and resume bit-identically
    std::map<std::string, AdamState>& states() { return states_; }
    const std::map<std::string, AdamState>& states() const { return states_; }

private:
    AdamConfig cfg_;
    std::map<std::string, AdamState> states_;
};

// LVMT checkpoint: magic, version u32, then per-tensor records
// (name-len u32, name, rank u32, dims u32..., f64 payload little-endian).
void save_checkpoint(const std::string& path, const ParamStore& params);
ParamStore load_checkpoint(const std::string& path);

// LVMO optimizer-state sidecar: per-parameter Adam moments and step counts,
// same little-endian conventions as the checkpoint format.
void save_optimizer_state(const std::string& path, const Optimizer& opt);
void load_optimizer_state(const std::string& path, Optimizer& opt);

}  // namespace lvmae

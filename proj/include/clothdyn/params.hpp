#pragma once

#include "clothdyn/common.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace clothdyn::ad {

struct Slot {
    std::string name;
    Mat value;
    Mat grad;
    bool trainable = true;
    // Adam state
    Mat m;
    Mat v;
};

// Named parameter slots. Initialization is a pure function of
// (master_seed, slot name, fan_in), so construction order never matters.
class ParamStore {
  public:
    explicit ParamStore(std::uint64_t master_seed = 0) : master_seed_(master_seed) {}

    // Uniform init on [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    Slot& create(const std::string& name, int rows, int cols, int fan_in, bool trainable = true);
    Slot& create_zeros(const std::string& name, int rows, int cols, bool trainable = true);
    Slot& create_value(const std::string& name, Mat value, bool trainable = true);

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    Slot& slot(const std::string& name);
    const Slot& slot(const std::string& name) const;
    Slot& slot(int idx) { return slots_[idx]; }
    const Slot& slot(int idx) const { return slots_[idx]; }
    int index_of(const std::string& name) const;
    int size() const { return static_cast<int>(slots_.size()); }

    void zero_grads();
    void set_trainable(const std::string& prefix, bool trainable);  // by name prefix
    std::vector<std::string> names_sorted() const;

    std::uint64_t master_seed() const { return master_seed_; }
    std::uint64_t step_count() const { return step_count_; }
    void set_step_count(std::uint64_t t) { step_count_ = t; }

    std::map<std::string, std::string>& meta() { return meta_; }
    const std::map<std::string, std::string>& meta() const { return meta_; }

  private:
    std::uint64_t master_seed_ = 0;
    std::uint64_t step_count_ = 0;
    std::vector<Slot> slots_;
    std::map<std::string, int> index_;
    std::map<std::string, std::string> meta_;
};

// Versioned checkpoint container. Layout (all integers little-endian):
//   magic "CDCK", u32 version=1, u64 master_seed, u64 step_count,
//   u32 n_meta, n_meta x { str key, str value },
//   u32 n_slots, n_slots x { str name, u8 trainable, u64 rows, u64 cols,
//                            rows*cols f64 row-major }
// where str = u32 byte length + bytes. Round-trips bit-exactly.
void save_checkpoint(const ParamStore& store, const std::string& path);
ParamStore load_checkpoint(const std::string& path);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
};

// Bias-corrected Adam with decoupled weight decay (applied to the parameter
// before the adaptive step). t is the 1-based step index. Frozen slots are
// untouched. Throws NumericalError naming the slot on a non-finite gradient.
void adam_step(ParamStore& store, const AdamConfig& cfg, std::uint64_t t);

// Max over sampled coordinates of |analytic - central difference| / max(1, |analytic|).
// The closure must be a deterministic function of the store's values.
// Samples up to max_coords_per_slot coordinates from every trainable slot.
double grad_check(const std::function<double()>& loss_closure,
                  const std::function<void()>& grad_closure,
                  ParamStore& store, double h = 1e-5, int max_coords_per_slot = 6,
                  std::uint64_t sample_seed = 42);

}  // namespace clothdyn::ad

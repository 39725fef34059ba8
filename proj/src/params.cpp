#include "clothdyn/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace clothdyn::ad {

Slot& ParamStore::create(const std::string& name, int rows, int cols, int fan_in, bool trainable) {
    if (index_.count(name)) throw UsageError("ParamStore: duplicate slot name " + name);
    Slot s;
    s.name = name;
    s.trainable = trainable;
    s.value.resize(rows, cols);
    std::mt19937_64 rng(master_seed_ ^ fnv1a64(name));
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) s.value(r, c) = (2.0 * uniform01(rng) - 1.0) * bound;
    s.grad = Mat::Zero(rows, cols);
    s.m = Mat::Zero(rows, cols);
    s.v = Mat::Zero(rows, cols);
    index_[name] = static_cast<int>(slots_.size());
    slots_.push_back(std::move(s));
    return slots_.back();
}

Slot& ParamStore::create_zeros(const std::string& name, int rows, int cols, bool trainable) {
    return create_value(name, Mat::Zero(rows, cols), trainable);
}

Slot& ParamStore::create_value(const std::string& name, Mat value, bool trainable) {
    if (index_.count(name)) throw UsageError("ParamStore: duplicate slot name " + name);
    Slot s;
    s.name = name;
    s.trainable = trainable;
    s.grad = Mat::Zero(value.rows(), value.cols());
    s.m = Mat::Zero(value.rows(), value.cols());
    s.v = Mat::Zero(value.rows(), value.cols());
    s.value = std::move(value);
    index_[name] = static_cast<int>(slots_.size());
    slots_.push_back(std::move(s));
    return slots_.back();
}

Slot& ParamStore::slot(const std::string& name) { return slots_[index_of(name)]; }

const Slot& ParamStore::slot(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("ParamStore: unknown slot " + name);
    return slots_[it->second];
}

int ParamStore::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("ParamStore: unknown slot " + name);
    return it->second;
}

void ParamStore::zero_grads() {
    for (Slot& s : slots_) s.grad.setZero();
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
    for (Slot& s : slots_)
        if (s.name.rfind(prefix, 0) == 0) s.trainable = trainable;
}

std::vector<std::string> ParamStore::names_sorted() const {
    std::vector<std::string> names;
    names.reserve(slots_.size());
    for (const auto& [name, idx] : index_) names.push_back(name);
    return names;  // std::map iterates in sorted order
}

// ----------------------------------------------------------------- checkpoint

namespace {

void write_u32(std::ostream& os, std::uint32_t x) { os.write(reinterpret_cast<const char*>(&x), 4); }
void write_u64(std::ostream& os, std::uint64_t x) { os.write(reinterpret_cast<const char*>(&x), 8); }
void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t x;
    is.read(reinterpret_cast<char*>(&x), 4);
    return x;
}
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t x;
    is.read(reinterpret_cast<char*>(&x), 8);
    return x;
}
std::string read_str(std::istream& is) {
    std::uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    return s;
}

constexpr char kMagic[4] = {'C', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u64(os, store.master_seed());
    write_u64(os, store.step_count());
    write_u32(os, static_cast<std::uint32_t>(store.meta().size()));
    for (const auto& [k, v] : store.meta()) {
        write_str(os, k);
        write_str(os, v);
    }
    std::vector<std::string> names = store.names_sorted();
    write_u32(os, static_cast<std::uint32_t>(names.size()));
    for (const std::string& name : names) {
        const Slot& s = store.slot(name);
        write_str(os, name);
        char tr = s.trainable ? 1 : 0;
        os.write(&tr, 1);
        write_u64(os, static_cast<std::uint64_t>(s.value.rows()));
        write_u64(os, static_cast<std::uint64_t>(s.value.cols()));
        for (Eigen::Index r = 0; r < s.value.rows(); ++r)
            for (Eigen::Index c = 0; c < s.value.cols(); ++c) {
                double d = s.value(r, c);
                os.write(reinterpret_cast<const char*>(&d), 8);
            }
    }
    if (!os) throw DataError("checkpoint write failed: " + path);
}

ParamStore load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw DataError("not a checkpoint file: " + path);
    std::uint32_t version = read_u32(is);
    if (version != kVersion) throw DataError("unsupported checkpoint version in " + path);
    std::uint64_t seed = read_u64(is);
    std::uint64_t steps = read_u64(is);
    ParamStore store(seed);
    store.set_step_count(steps);
    std::uint32_t n_meta = read_u32(is);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = read_str(is);
        store.meta()[k] = read_str(is);
    }
    std::uint32_t n_slots = read_u32(is);
    for (std::uint32_t i = 0; i < n_slots; ++i) {
        std::string name = read_str(is);
        char tr;
        is.read(&tr, 1);
        auto rows = static_cast<Eigen::Index>(read_u64(is));
        auto cols = static_cast<Eigen::Index>(read_u64(is));
        Mat value(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) {
                double d;
                is.read(reinterpret_cast<char*>(&d), 8);
                value(r, c) = d;
            }
        store.create_value(name, std::move(value), tr != 0);
    }
    if (!is) throw DataError("truncated checkpoint: " + path);
    return store;
}

// ----------------------------------------------------------------------- Adam

void adam_step(ParamStore& store, const AdamConfig& cfg, std::uint64_t t) {
    if (t < 1) throw UsageError("adam_step: step index must be >= 1");
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (const std::string& name : store.names_sorted()) {
        Slot& s = store.slot(name);
        if (!s.trainable) continue;
        if (!s.grad.allFinite()) throw NumericalError("non-finite gradient in slot " + name);
        if (cfg.weight_decay != 0.0) s.value -= (cfg.lr * cfg.weight_decay) * s.value;
        s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * s.grad;
        s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * s.grad.cwiseProduct(s.grad);
        Mat m_hat = s.m / bc1;
        Mat v_hat = s.v / bc2;
        s.value -= cfg.lr * m_hat.cwiseQuotient(v_hat.cwiseSqrt().array().matrix() + Mat::Constant(v_hat.rows(), v_hat.cols(), cfg.eps));
        check_finite(s.value, "adam_step on slot " + name);
    }
    store.set_step_count(t);
}

// ----------------------------------------------------------------- grad check

double grad_check(const std::function<double()>& loss_closure,
                  const std::function<void()>& grad_closure,
                  ParamStore& store, double h, int max_coords_per_slot,
                  std::uint64_t sample_seed) {
    grad_closure();
    // Stash the analytic gradients before finite differencing overwrites them.
    std::vector<Mat> analytic;
    std::vector<std::string> names = store.names_sorted();
    for (const std::string& name : names) analytic.push_back(store.slot(name).grad);

    double max_rel = 0.0;
    for (std::size_t si = 0; si < names.size(); ++si) {
        Slot& s = store.slot(names[si]);
        if (!s.trainable) continue;
        Eigen::Index n = s.value.size();
        std::mt19937_64 rng(sample_seed ^ fnv1a64(names[si]));
        std::vector<Eigen::Index> coords;
        if (n <= max_coords_per_slot) {
            for (Eigen::Index i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int i = 0; i < max_coords_per_slot; ++i)
                coords.push_back(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n)));
        }
        for (Eigen::Index ci : coords) {
            double* p = s.value.data() + ci;
            double orig = *p;
            *p = orig + h;
            double lp = loss_closure();
            *p = orig - h;
            double lm = loss_closure();
            *p = orig;
            double fd = (lp - lm) / (2.0 * h);
            double an = analytic[si].data()[ci];
            double rel = std::abs(an - fd) / std::max(1.0, std::abs(an));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace clothdyn::ad

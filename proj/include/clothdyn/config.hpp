#pragma once

#include "clothdyn/env.hpp"
#include "clothdyn/model.hpp"
#include "clothdyn/trainer.hpp"

#include <map>
#include <string>

namespace clothdyn::config {

// Flat "key = value" text config ('#' comments). Every key has a default;
// unknown keys in a file are rejected. The canonical form prints the full
// key-sorted map, and the config hash is the SHA-256 of that form.
class RunConfig {
  public:
    RunConfig();  // defaults
    static RunConfig from_file(const std::string& path);

    const std::string& get(const std::string& key) const;
    void set(const std::string& key, const std::string& value);
    double get_double(const std::string& key) const;
    int get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;

    std::string canonical() const;
    std::string hash() const;
    // Hash over the keys that determine dataset content (grid, seed, sim.*,
    // ea.*, band.*, lift.*, actions.*); train/eval keys do not participate.
    std::string dataset_hash() const;

    sim::SimConfig sim_config() const;
    train::TrainConfig train_config(model::Variant variant) const;
    std::string grid() const { return get("grid"); }
    std::uint64_t seed() const { return get_u64("seed"); }
    int jobs() const { return get_int("jobs"); }

  private:
    std::map<std::string, std::string> kv_;
};

std::string sha256_hex(const std::string& data);

}  // namespace clothdyn::config

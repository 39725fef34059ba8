#include "clothdyn/config.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace clothdyn::config {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::map<std::string, std::string> default_kv() {
    std::map<std::string, std::string> kv;
    kv["grid"] = "desk";
    kv["seed"] = "12345";
    kv["jobs"] = "1";

    sim::SimConfig s;
    kv["sim.rows"] = std::to_string(s.rows);
    kv["sim.cols"] = std::to_string(s.cols);
    kv["sim.graph_rows"] = std::to_string(s.graph_rows);
    kv["sim.graph_cols"] = std::to_string(s.graph_cols);
    kv["sim.spacing"] = fmt(s.spacing);
    kv["sim.node_mass"] = fmt(s.node_mass);
    kv["sim.dt"] = fmt(s.dt);
    kv["sim.gravity_z"] = fmt(s.gravity_z);
    kv["sim.damping"] = fmt(s.damping);
    kv["sim.settle_damping"] = fmt(s.settle_damping);
    kv["sim.settle_tol"] = fmt(s.settle_tol);
    kv["sim.settle_max_steps"] = std::to_string(s.settle_max_steps);
    kv["sim.contact_stiffness"] = fmt(s.contact_stiffness);

    kv["ea.hold_z"] = fmt(s.ea_hold_z);
    kv["ea.raw_steps"] = std::to_string(s.ea_raw_steps);
    kv["ea.pull_dist"] = fmt(s.ea_pull_dist);
    kv["ea.store_frames"] = std::to_string(s.ea_store_frames);
    kv["ea.savgol_window"] = std::to_string(s.savgol_window);
    kv["ea.savgol_order"] = std::to_string(s.savgol_order);

    kv["band.cyl_radius"] = fmt(s.cyl_radius);
    kv["band.cyl_z"] = fmt(s.cyl_z);
    kv["band.grip_x"] = fmt(s.band_grip_x);
    kv["band.grip_z"] = fmt(s.band_grip_z);
    kv["band.apex_z"] = fmt(s.band_apex_z);
    kv["band.fmax"] = fmt(s.fmax);

    kv["lift.sphere_radius"] = fmt(s.sphere_radius);
    kv["lift.sphere_mass"] = fmt(s.sphere_mass);
    kv["lift.hold_z"] = fmt(s.lift_hold_z);
    kv["lift.table_z"] = fmt(s.table_z);
    kv["lift.speed"] = fmt(s.lift_speed);
    kv["lift.dmax"] = fmt(s.dmax);

    kv["actions.count"] = std::to_string(s.action_count);

    kv["model.latent_dim"] = "32";
    kv["model.hidden"] = "32";
    kv["model.prop_steps"] = "4";
    kv["model.T"] = "5";
    kv["model.multihop"] = "parallel";

    kv["train.epochs"] = "300";
    kv["train.batch"] = "8";
    kv["train.lr"] = fmt(1e-3);
    kv["train.weight_decay"] = fmt(1e-5);
    kv["train.beta1"] = fmt(0.9);
    kv["train.beta2"] = fmt(0.999);
    kv["train.eps"] = fmt(1e-8);
    kv["train.os_lambda"] = fmt(1.0);

    kv["split.train"] = fmt(0.8);
    kv["split.val"] = fmt(0.1);
    kv["split.test"] = fmt(0.1);
    return kv;
}

}  // namespace

RunConfig::RunConfig() : kv_(default_kv()) {}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("cannot open config file: " + path);
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string::size_type hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key, eq, value;
        if (!(ls >> key)) continue;  // blank
        if (!(ls >> eq >> value) || eq != "=")
            throw UsageError("malformed config line " + std::to_string(lineno) + " in " + path);
        cfg.set(key, value);
    }
    return cfg;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw UsageError("unknown config key: " + key);
    return it->second;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw UsageError("unknown config key: " + key);
    it->second = value;
}

double RunConfig::get_double(const std::string& key) const {
    try {
        return std::stod(get(key));
    } catch (const std::exception&) {
        throw UsageError("config key " + key + " is not a number: " + get(key));
    }
}

int RunConfig::get_int(const std::string& key) const {
    try {
        return std::stoi(get(key));
    } catch (const std::exception&) {
        throw UsageError("config key " + key + " is not an integer: " + get(key));
    }
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
    try {
        return std::stoull(get(key));
    } catch (const std::exception&) {
        throw UsageError("config key " + key + " is not an unsigned integer: " + get(key));
    }
}

std::string RunConfig::canonical() const {
    std::ostringstream os;
    for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
    return os.str();
}

std::string RunConfig::hash() const { return sha256_hex(canonical()); }

std::string RunConfig::dataset_hash() const {
    static const char* prefixes[] = {"grid", "seed", "sim.", "ea.", "band.", "lift.", "actions."};
    std::ostringstream os;
    for (const auto& [k, v] : kv_)
        for (const char* p : prefixes)
            if (k.rfind(p, 0) == 0) {
                os << k << " = " << v << "\n";
                break;
            }
    return sha256_hex(os.str());
}

sim::SimConfig RunConfig::sim_config() const {
    sim::SimConfig s;
    s.rows = get_int("sim.rows");
    s.cols = get_int("sim.cols");
    s.graph_rows = get_int("sim.graph_rows");
    s.graph_cols = get_int("sim.graph_cols");
    s.spacing = get_double("sim.spacing");
    s.node_mass = get_double("sim.node_mass");
    s.dt = get_double("sim.dt");
    s.gravity_z = get_double("sim.gravity_z");
    s.damping = get_double("sim.damping");
    s.settle_damping = get_double("sim.settle_damping");
    s.settle_tol = get_double("sim.settle_tol");
    s.settle_max_steps = get_int("sim.settle_max_steps");
    s.contact_stiffness = get_double("sim.contact_stiffness");
    s.ea_hold_z = get_double("ea.hold_z");
    s.ea_raw_steps = get_int("ea.raw_steps");
    s.ea_pull_dist = get_double("ea.pull_dist");
    s.ea_store_frames = get_int("ea.store_frames");
    s.savgol_window = get_int("ea.savgol_window");
    s.savgol_order = get_int("ea.savgol_order");
    s.cyl_radius = get_double("band.cyl_radius");
    s.cyl_z = get_double("band.cyl_z");
    s.band_grip_x = get_double("band.grip_x");
    s.band_grip_z = get_double("band.grip_z");
    s.band_apex_z = get_double("band.apex_z");
    s.fmax = get_double("band.fmax");
    s.sphere_radius = get_double("lift.sphere_radius");
    s.sphere_mass = get_double("lift.sphere_mass");
    s.lift_hold_z = get_double("lift.hold_z");
    s.table_z = get_double("lift.table_z");
    s.lift_speed = get_double("lift.speed");
    s.dmax = get_double("lift.dmax");
    s.action_count = get_int("actions.count");
    return s;
}

train::TrainConfig RunConfig::train_config(model::Variant variant) const {
    train::TrainConfig tc;
    tc.model.latent_dim = get_int("model.latent_dim");
    tc.model.hidden = get_int("model.hidden");
    tc.model.prop_steps = get_int("model.prop_steps");
    tc.model.obs_frames = variant == model::Variant::Edo1 ? 1 : get_int("model.T");
    tc.model.multihop_parallel = get("model.multihop") != "union";
    tc.model.variant = variant;
    tc.epochs = get_int("train.epochs");
    tc.batch_size = get_int("train.batch");
    tc.adam.lr = get_double("train.lr");
    tc.adam.weight_decay = get_double("train.weight_decay");
    tc.adam.beta1 = get_double("train.beta1");
    tc.adam.beta2 = get_double("train.beta2");
    tc.adam.eps = get_double("train.eps");
    tc.seed = seed();
    tc.os_lambda = get_double("train.os_lambda");
    return tc;
}

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw NumericalError("sha256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

}  // namespace clothdyn::config

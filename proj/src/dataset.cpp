#include "clothdyn/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace clothdyn::train {

std::vector<sim::PhysicalParams> parameter_grid(const std::string& name) {
    std::vector<double> ks, bs;
    if (name == "full") {
        for (int i = 0; i < 13; ++i) ks.push_back(10.0 + 3.0 * i);   // 10..46
        for (int i = 0; i < 11; ++i) bs.push_back(0.01 + 0.5 * i);   // 0.01..5.01
    } else if (name == "desk") {
        for (int i = 0; i < 5; ++i) ks.push_back(10.0 + 9.0 * i);    // 10..46
        for (int i = 0; i < 5; ++i) bs.push_back(0.01 + 1.25 * i);   // 0.01..5.01
    } else {
        throw UsageError("unknown grid: " + name + " (expected full|desk)");
    }
    std::vector<sim::PhysicalParams> grid;
    for (double k : ks)
        for (double b : bs) grid.push_back(sim::PhysicalParams{k, b});
    return grid;
}

namespace {

struct SampleData {
    std::vector<sim::Observation> ea;
    std::vector<Interaction> inter;
};

SampleData gen_sample(const sim::SimConfig& cfg, int id, const sim::PhysicalParams& params) {
    SampleData out;
    try {
        out.ea = sim::run_pulling_ea(cfg, params, cfg.ea_raw_steps, cfg.ea_store_frames);

        sim::ClothState bandage_eq = sim::bandage_before(cfg, params);
        Points before_b = sim::extract_graph(cfg, bandage_eq).node_positions;
        for (double a : sim::action_grid(cfg.fmax, cfg.action_count)) {
            sim::ClothState after = sim::bandage_apply(cfg, bandage_eq, a);
            Interaction rec;
            rec.sample = id;
            rec.env = graph::Env::Bandage;
            rec.action = a;
            rec.before = before_b;
            rec.delta = sim::extract_graph(cfg, after).node_positions - before_b;
            out.inter.push_back(std::move(rec));
        }

        sim::LiftingWorld lift_eq = sim::lifting_before(cfg, params);
        Points before_l = sim::extract_graph(cfg, lift_eq.cloth).node_positions;
        for (double a : sim::action_grid(cfg.dmax, cfg.action_count)) {
            sim::LiftingWorld after = sim::lifting_apply(cfg, lift_eq, a);
            Interaction rec;
            rec.sample = id;
            rec.env = graph::Env::Lifting;
            rec.action = a;
            rec.before = before_l;
            rec.delta = sim::extract_graph(cfg, after.cloth).node_positions - before_l;
            out.inter.push_back(std::move(rec));
        }
    } catch (const NumericalError& e) {
        std::ostringstream os;
        os << "dataset generation failed at cell " << id << " (stiffness " << params.stiffness
           << ", bending " << params.bending << "): " << e.what();
        throw NumericalError(os.str());
    }
    return out;
}

}  // namespace

Dataset gen_dataset(const sim::SimConfig& cfg, const std::string& grid, std::uint64_t seed,
                    const std::string& config_hash, int jobs) {
    require(cfg.ea_store_frames >= 10, "gen_dataset: need at least 10 stored EA frames");
    Dataset ds;
    ds.grid_name = grid;
    ds.seed = seed;
    ds.config_hash = config_hash;
    ds.sim = cfg;
    std::vector<sim::PhysicalParams> cells = parameter_grid(grid);
    int n = static_cast<int>(cells.size());
    for (int i = 0; i < n; ++i) ds.samples.push_back(SampleInfo{i, cells[i]});

    std::vector<SampleData> results(n);
    if (jobs <= 1) {
        for (int i = 0; i < n; ++i) results[i] = gen_sample(cfg, i, cells[i]);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(jobs);
        for (int w = 0; w < jobs; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (;;) {
                        int i = next.fetch_add(1);
                        if (i >= n) return;
                        results[i] = gen_sample(cfg, i, cells[i]);
                    }
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    for (int i = 0; i < n; ++i) {
        ds.ea.push_back(std::move(results[i].ea));
        for (Interaction& rec : results[i].inter) ds.interactions.push_back(std::move(rec));
    }
    return ds;
}

Split split_samples(int n, double f_train, double f_val, double f_test, std::uint64_t seed) {
    require(std::abs(f_train + f_val + f_test - 1.0) < 1e-9, "split: fractions must sum to 1");
    double fracs[3] = {f_train, f_val, f_test};
    int counts[3];
    double rema[3];
    int total = 0;
    for (int i = 0; i < 3; ++i) {
        double want = fracs[i] * n;
        counts[i] = static_cast<int>(std::floor(want));
        rema[i] = want - counts[i];
        total += counts[i];
    }
    while (total < n) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (rema[i] > rema[best]) best = i;
        ++counts[best];
        rema[best] = -1.0;
        ++total;
    }
    if (counts[0] == 0 || counts[1] == 0 || counts[2] == 0)
        throw DataError("split: too few samples for a nonempty train/val/test split");

    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    for (int i = n - 1; i > 0; --i) {
        int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(idx[i], idx[j]);
    }
    Split s;
    s.train.assign(idx.begin(), idx.begin() + counts[0]);
    s.val.assign(idx.begin() + counts[0], idx.begin() + counts[0] + counts[1]);
    s.test.assign(idx.begin() + counts[0] + counts[1], idx.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

graph::NormStats fit_norm_stats(const Dataset& ds, const std::vector<int>& train_samples) {
    graph::NormStats st;
    std::vector<char> in_train(ds.n_samples(), 0);
    for (int i : train_samples) in_train[i] = 1;

    std::vector<double> vals;
    for (int axis = 0; axis < 3; ++axis) {
        vals.clear();
        for (int i : train_samples)
            for (const sim::Observation& o : ds.ea[i])
                for (int v = 0; v < o.graph.n(); ++v) vals.push_back(o.graph.node_positions(v, axis));
        st.ea_pos[axis] = graph::fit_stat(vals, "ea_pos[" + std::to_string(axis) + "]");
    }
    vals.clear();
    for (int i : train_samples)
        for (const sim::Observation& o : ds.ea[i])
            for (int c = 0; c < 3; ++c) vals.push_back(o.force(c));
    st.ea_force = graph::fit_stat(vals, "ea_force");

    vals.clear();
    for (int i : train_samples) vals.push_back(ds.samples[i].params.stiffness);
    st.param_k = graph::fit_stat(vals, "param_k");
    vals.clear();
    for (int i : train_samples) vals.push_back(ds.samples[i].params.bending);
    st.param_b = graph::fit_stat(vals, "param_b");

    for (int e = 0; e < 2; ++e) {
        auto env = static_cast<graph::Env>(e);
        for (int axis = 0; axis < 3; ++axis) {
            vals.clear();
            for (const Interaction& rec : ds.interactions)
                if (rec.env == env && in_train[rec.sample])
                    for (int v = 0; v < rec.before.rows(); ++v) vals.push_back(rec.before(v, axis));
            st.env[e].pos[axis] =
                graph::fit_stat(vals, std::string(graph::env_name(env)) + "_pos[" + std::to_string(axis) + "]");
        }
        vals.clear();
        for (const Interaction& rec : ds.interactions)
            if (rec.env == env && in_train[rec.sample])
                for (int v = 0; v < rec.delta.rows(); ++v)
                    for (int c = 0; c < 3; ++c) vals.push_back(rec.delta(v, c));
        st.env[e].disp = graph::fit_stat(vals, std::string(graph::env_name(env)) + "_disp");
        vals.clear();
        for (const Interaction& rec : ds.interactions)
            if (rec.env == env && in_train[rec.sample]) vals.push_back(rec.action);
        st.env[e].action = graph::fit_stat(vals, std::string(graph::env_name(env)) + "_action");
    }
    return st;
}

// ---------------------------------------------------------------- text IO

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_points(std::ostream& os, const Points& p) {
    for (Eigen::Index r = 0; r < p.rows(); ++r)
        for (int c = 0; c < 3; ++c) os << ' ' << fmt(p(r, c));
}

Points read_points(std::istream& is, int n) {
    Points p(n, 3);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < 3; ++c) is >> p(r, c);
    return p;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir, bool force) {
    fs::path root(dir);
    if (fs::exists(root) && !fs::is_empty(root) && !force)
        throw UsageError("output directory exists and is not empty (use --force): " + dir);
    fs::create_directories(root);

    int n_bandage = 0, n_lifting = 0;
    for (const Interaction& rec : ds.interactions)
        (rec.env == graph::Env::Bandage ? n_bandage : n_lifting) += 1;

    {
        std::ofstream m(root / "manifest.txt");
        m << "format = clothdyn-dataset-v1\n";
        m << "grid = " << ds.grid_name << "\n";
        m << "seed = " << ds.seed << "\n";
        m << "config_hash = " << ds.config_hash << "\n";
        m << "n_samples = " << ds.n_samples() << "\n";
        m << "ea_frames_per_sample = " << (ds.ea.empty() ? 0 : ds.ea[0].size()) << "\n";
        m << "interactions_bandage = " << n_bandage << "\n";
        m << "interactions_lifting = " << n_lifting << "\n";
        m << "graph_nodes = " << ds.sim.graph_rows * ds.sim.graph_cols << "\n";
        if (!m) throw DataError("manifest write failed");
    }

    std::ofstream os(root / "dataset.txt");
    os << "# clothdyn dataset v1\n";
    os << "# sample <id> k <stiffness> b <bending>\n";
    os << "# ea <sample> t <frame> force <fx> <fy> <fz> pos <3N floats row-major>\n";
    os << "# inter <env bandage|lifting> <sample> action <a> before <3N floats> delta <3N floats>\n";
    for (const SampleInfo& s : ds.samples)
        os << "sample " << s.id << " k " << fmt(s.params.stiffness) << " b " << fmt(s.params.bending)
           << "\n";
    for (int i = 0; i < ds.n_samples(); ++i)
        for (const sim::Observation& o : ds.ea[i]) {
            os << "ea " << i << " t " << o.t << " force " << fmt(o.force.x()) << ' '
               << fmt(o.force.y()) << ' ' << fmt(o.force.z()) << " pos";
            write_points(os, o.graph.node_positions);
            os << "\n";
        }
    for (const Interaction& rec : ds.interactions) {
        os << "inter " << graph::env_name(rec.env) << ' ' << rec.sample << " action "
           << fmt(rec.action) << " before";
        write_points(os, rec.before);
        os << " delta";
        write_points(os, rec.delta);
        os << "\n";
    }
    if (!os) throw DataError("dataset write failed");
}

Dataset load_dataset(const std::string& dir) {
    fs::path root(dir);
    std::ifstream m(root / "manifest.txt");
    if (!m) throw DataError("missing manifest.txt in " + dir);
    Dataset ds;
    int n_samples = 0, graph_nodes = 64;
    std::string line;
    while (std::getline(m, line)) {
        std::istringstream ls(line);
        std::string key, eq;
        ls >> key >> eq;
        if (key == "grid") ls >> ds.grid_name;
        else if (key == "seed") ls >> ds.seed;
        else if (key == "config_hash") ls >> ds.config_hash;
        else if (key == "n_samples") ls >> n_samples;
        else if (key == "graph_nodes") ls >> graph_nodes;
    }
    ds.ea.resize(n_samples);

    std::ifstream is(root / "dataset.txt");
    if (!is) throw DataError("missing dataset.txt in " + dir);
    int grid_side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(graph_nodes))));
    graph::GraphState proto = graph::grid_graph(grid_side, grid_side);
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "sample") {
            SampleInfo s;
            std::string tag;
            ls >> s.id >> tag >> s.params.stiffness >> tag >> s.params.bending;
            ds.samples.push_back(s);
        } else if (kind == "ea") {
            int sample;
            std::string tag;
            sim::Observation o;
            ls >> sample >> tag >> o.t >> tag >> o.force.x() >> o.force.y() >> o.force.z() >> tag;
            o.graph = proto;
            o.graph.node_positions = read_points(ls, graph_nodes);
            if (!ls) throw DataError("malformed ea record in dataset.txt");
            ds.ea[sample].push_back(std::move(o));
        } else if (kind == "inter") {
            Interaction rec;
            std::string env, tag;
            ls >> env >> rec.sample >> tag >> rec.action >> tag;
            rec.env = env == "bandage" ? graph::Env::Bandage : graph::Env::Lifting;
            rec.before = read_points(ls, graph_nodes);
            ls >> tag;
            rec.delta = read_points(ls, graph_nodes);
            if (!ls) throw DataError("malformed inter record in dataset.txt");
            ds.interactions.push_back(std::move(rec));
        } else {
            throw DataError("unknown record kind in dataset.txt: " + kind);
        }
    }
    if (static_cast<int>(ds.samples.size()) != n_samples)
        throw DataError("dataset.txt sample count does not match manifest");
    return ds;
}

// -------------------------------------------------------------- normalization

sim::Observation normalize_observation(const sim::Observation& o, const graph::NormStats& stats) {
    sim::Observation out = o;
    out.graph.node_positions = graph::normalize_points(o.graph.node_positions, stats.ea_pos);
    for (int c = 0; c < 3; ++c) out.force(c) = graph::normalize(o.force(c), stats.ea_force);
    out.graph.normalized = true;
    out.normalized = true;
    return out;
}

NormalizedData normalize_dataset(const Dataset& ds, const graph::NormStats& stats) {
    NormalizedData nd;
    nd.stats = stats;
    nd.ea.resize(ds.n_samples());
    for (int i = 0; i < ds.n_samples(); ++i)
        for (const sim::Observation& o : ds.ea[i]) nd.ea[i].push_back(normalize_observation(o, stats));
    nd.params_norm.resize(ds.n_samples(), 2);
    for (int i = 0; i < ds.n_samples(); ++i) {
        nd.params_norm(i, 0) = graph::normalize(ds.samples[i].params.stiffness, stats.param_k);
        nd.params_norm(i, 1) = graph::normalize(ds.samples[i].params.bending, stats.param_b);
    }
    for (const Interaction& rec : ds.interactions) {
        const graph::EnvStats& es = stats.env[static_cast<int>(rec.env)];
        NormalizedData::Rec r;
        r.sample = rec.sample;
        r.env = rec.env;
        r.action_raw = rec.action;
        r.action_norm = graph::normalize(rec.action, es.action);
        r.before = graph::normalize_points(rec.before, es.pos);
        r.delta = graph::normalize_pooled(rec.delta, es.disp);
        nd.rec_by_env[static_cast<int>(rec.env)].push_back(static_cast<int>(nd.recs.size()));
        nd.recs.push_back(std::move(r));
    }
    return nd;
}

}  // namespace clothdyn::train

#pragma once

#include "clothdyn/dataset.hpp"
#include "clothdyn/model.hpp"
#include "clothdyn/params.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace clothdyn::train {

struct TrainConfig {
    model::ModelConfig model;
    int epochs = 300;
    int batch_size = 8;
    ad::AdamConfig adam;
    std::uint64_t seed = 12345;
    double os_lambda = 1.0;  // weight of the supervised latent term (os variant)
};

struct EpochStat {
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    ad::ParamStore store;  // best-validation parameters
    std::vector<EpochStat> history;
    double best_val = 0.0;
    int best_epoch = -1;
    double final_val = 0.0;
};

// Name bundle for all networks of one model variant.
struct ModelBundle {
    model::ModelConfig cfg;
    model::AdaptModule adapt;  // meaningful only when the variant adapts
    model::DynModule dyn;
    model::Linear os_head;  // latent -> params supervision (os variant)

    static ModelBundle ensure(ad::ParamStore& store, const model::ModelConfig& cfg);
};

// Assembles stacked batches over one environment's interaction records and
// builds the self-supervised loss on a tape. The per-sample latent is
// recomputed inside the differentiated graph; nc omits conditioning and
// of feeds ground-truth parameters instead.
class BatchBuilder {
  public:
    BatchBuilder(const NormalizedData& nd, graph::Env env, const ModelBundle& bundle);

    ad::Var predict(ad::Tape& t, const std::vector<int>& recs) const;
    // One record stacked across candidate normalized actions.
    ad::Var predict_with_actions(ad::Tape& t, int rec, const std::vector<double>& actions_norm) const;
    Mat targets(const std::vector<int>& recs) const;  // (B*V) x 3 normalized deltas
    ad::Var loss(ad::Tape& t, const std::vector<int>& recs, double os_lambda) const;
    const ModelBundle& bundle() const { return bundle_; }

    const model::DynPlan& plan(int batch) const;
    const NormalizedData& data() const { return nd_; }
    int nodes_per_graph() const { return v_; }
    graph::Env env() const { return env_; }

    // Latent conditioning rows for the given records (adaptation or oracle).
    ad::Var conditioning(ad::Tape& t, const std::vector<int>& recs) const;

  private:
    const NormalizedData& nd_;
    graph::Env env_;
    const ModelBundle& bundle_;
    int v_ = 0;
    std::vector<char> gripper_mask_;
    graph::NeighborTable nt_;
    mutable std::map<int, model::DynPlan> plans_;
    std::vector<Mat> ea_feats_;  // per sample, (T*V) x 6 subsampled features
};

// Record indices of one environment restricted to a set of samples.
std::vector<int> records_of(const NormalizedData& nd, graph::Env env, const std::vector<int>& samples);

// Mean loss over records in fixed-order batches (no gradient side effects).
double eval_loss(ad::ParamStore& store, const BatchBuilder& builder, const std::vector<int>& recs,
                 int batch_size, double os_lambda);

// Adam training loop with per-epoch shuffling, per-epoch train/val loss
// history, and best-validation checkpoint selection. `init` continues from
// an existing store (fine-tuning); freeze_adaptation locks every adapt/
// slot including the learned initialization.
TrainResult train_model(const Dataset& ds, const Split& split, graph::Env env,
                        const TrainConfig& cfg, const ad::ParamStore* init = nullptr,
                        bool freeze_adaptation = false);

// Norm stats ride inside checkpoints as frozen slots.
void stats_to_store(const graph::NormStats& st, ad::ParamStore& store);
graph::NormStats stats_from_store(const ad::ParamStore& store);

}  // namespace clothdyn::train

#pragma once

#include "clothdyn/dataset.hpp"
#include "clothdyn/trainer.hpp"

#include <functional>
#include <string>
#include <vector>

namespace clothdyn::evalsuite {

struct MetricReport {
    std::string experiment;
    std::string variant;
    std::string env;
    int T = 0;
    std::vector<std::pair<int, double>> per_sample;  // (sample id, mse)
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation (n-1), 0 for n==1
    std::string config_hash;
};

MetricReport finalize_report(std::string experiment, std::string variant, std::string env, int T,
                             std::vector<std::pair<int, double>> per_sample, std::string config_hash);

// Normalized per-record prediction of the displacement field, (V x 3).
using Predictor = std::function<Mat(const train::NormalizedData::Rec&)>;

// Per-sample mean MSE of predicted vs ground-truth normalized displacements
// over each test sample's interactions.
MetricReport eval_state_prediction(ad::ParamStore& store, const train::Dataset& ds,
                                   const train::Split& split, graph::Env env,
                                   const std::string& config_hash);

// Same metric with an injected predictor (harness self-tests).
MetricReport eval_state_prediction_with(const Predictor& predict, const train::NormalizedData& nd,
                                        const std::vector<int>& samples, graph::Env env,
                                        std::string experiment, std::string variant,
                                        std::string config_hash);

// ---------------------------------------------------------------- decoding

struct DecodeResult {
    std::string variant;
    std::vector<int> t_values;
    std::vector<double> seen_mse;    // train samples
    std::vector<double> unseen_mse;  // val + test samples
    std::vector<std::vector<std::pair<int, double>>> unseen_per_sample;  // per T
};

// Freezes the checkpoint's adaptation module, trains an MLP regressor from
// the latent to the normalized physical parameters on train-split pairs,
// and reports the decode MSE for seen and unseen samples per T.
DecodeResult decode_params(const ad::ParamStore& store, const train::Dataset& ds,
                           const train::Split& split, const std::vector<int>& t_values,
                           int epochs = 800, std::uint64_t seed = 7);

// ---------------------------------------------------------------- transfer

struct TransferResult {
    train::TrainResult fine_tuned;
    MetricReport report;
    bool adaptation_bits_identical = false;
};

// Fine-tunes the forward dynamics of a bandage checkpoint on the lifting
// train split with the adaptation module and learned initialization frozen,
// then evaluates state prediction on the lifting test split.
TransferResult transfer_bandage2lifting(const ad::ParamStore& bandage_store,
                                        const train::Dataset& ds, const train::Split& split,
                                        const train::TrainConfig& cfg,
                                        const std::string& config_hash);

// ------------------------------------------------------------ inverse model

struct InverseResult {
    ad::ParamStore store;
    MetricReport report;
};

// Trains the action-regression head (conditioned on the frozen adaptation
// latent, the ground-truth parameters for oi, or nothing for nc) on the
// train split and evaluates normalized action MSE per test sample.
InverseResult train_eval_inverse(const ad::ParamStore* cond_source, model::Variant variant,
                                 const train::Dataset& ds, const train::Split& split,
                                 graph::Env env, int T, const train::TrainConfig& cfg,
                                 const std::string& config_hash);

// Same metric with an injected action predictor (harness self-test).
MetricReport eval_inverse_with(const std::function<double(const train::NormalizedData::Rec&)>& predict,
                               const train::NormalizedData& nd, const std::vector<int>& samples,
                               graph::Env env, std::string variant, std::string config_hash);

// ----------------------------------------------------------- action selection

// argmin over the discretized action grid of the squared distance between
// the predicted and goal displacement fields; ties resolve to the smaller
// action. Returns the selected raw action.
double select_action(ad::ParamStore& store, const train::BatchBuilder& builder,
                     const train::NormalizedData::Rec& rec, const Mat& goal_delta_norm,
                     const std::vector<double>& grid_raw, const std::vector<double>& grid_norm);

// Mean |a* - a_true| (raw action units) per test sample, using each
// interaction's outcome as the goal state.
MetricReport eval_action_prediction(ad::ParamStore& store, const train::Dataset& ds,
                                    const train::Split& split, graph::Env env,
                                    const std::string& config_hash);

// ------------------------------------------------------------------ reports

// CSV schema: experiment,variant,env,T,mean_mse,std_mse,n_samples,config_hash.
void write_reports_csv(const std::string& path, std::vector<MetricReport> reports);
std::vector<MetricReport> read_reports_csv(const std::string& path);
// One line per sample: "<sample> <mse>".
void write_per_sample_dump(const std::string& path, const MetricReport& report);
// Two-column (T, mse) curve file per variant for the decode sweep.
void write_decode_plot_data(const std::string& dir, const DecodeResult& result);

}  // namespace clothdyn::evalsuite

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jmfuse/fusion.hpp"
#include "jmfuse/jacobian.hpp"
#include "jmfuse/tensor.hpp"
#include "jmfuse/volume.hpp"

namespace jmfuse {

struct ExperimentConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    int batch = 16;
    int epochs = 20;
    int folds = 5;
    ModelHyper hyper;               // d = 128, heads = 4, bottleneck = 4
    uint64_t seed = 42;
    FusionKind kind = FusionKind::cross;
    std::string task = "synthetic";
    int64_t input_size = 32;        // resample target when a volume can't feed the encoder as-is
    JsmOptions jsm;                 // log-map settings for the deformation branch
};

struct AdamState {
    std::vector<std::vector<double>> m, v;
    int64_t t = 0;
};

AdamState init_adam(const std::vector<Tensor>& params);
void adam_step(std::vector<Tensor>& params, AdamState& state, const ExperimentConfig& cfg);

// Seeded per-class shuffle dealt round-robin with a running cursor, so both the
// per-class counts and the fold sizes differ by at most one.
std::vector<std::vector<int64_t>> stratified_kfold(const std::vector<int>& labels, int k,
                                                   uint64_t seed);

struct SubjectData {
    std::string id;
    int label = 0;
    Tensor smri; // [1, S, S, S], z-scored
    Tensor jsm;  // [1, S, S, S], log-Jacobian values as computed
};

// Loads every subject, computes its JSM from the deformation field, and
// normalizes the intensity channel. Volumes whose extents already fit the
// encoder run at native resolution; everything else is resampled to input_size.
std::vector<SubjectData> load_dataset(const std::string& manifest_path, const ExperimentConfig& cfg);

struct TrainResult {
    FusionModel model;
    std::vector<double> epoch_loss;
};

TrainResult train_model(const std::vector<const SubjectData*>& train_set,
                        const ExperimentConfig& cfg, uint64_t seed);

// class-1 probability of one subject under the trained model, tape-free
double score_subject(const FusionModel& m, const SubjectData& s);

struct FoldResult {
    int fold = 0;
    std::vector<std::string> subject_ids;
    std::vector<double> scores;
    std::vector<int> labels;
    double auc = 0.0;
    double final_loss = 0.0;
    double seconds = 0.0;
    std::vector<double> epoch_loss;
};

struct CvResult {
    std::vector<FoldResult> folds;
    double mean_auc = 0.0;
    double std_auc = 0.0; // sample standard deviation over folds
    int64_t param_count = 0;
};

CvResult run_cv_experiment(const std::vector<SubjectData>& dataset, const ExperimentConfig& cfg);

// results.csv (fusion,task,fold,auc,final_loss), summary.csv, scores.csv; wall
// times go to timings.csv so the result files stay byte-reproducible.
void write_experiment_csv(const std::string& out_dir, const ExperimentConfig& cfg,
                          const CvResult& cv, bool append);

} // namespace jmfuse

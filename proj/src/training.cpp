#include "jmfuse/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "jmfuse/errors.hpp"
#include "jmfuse/metrics.hpp"

namespace jmfuse {

AdamState init_adam(const std::vector<Tensor>& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor& p : params) {
        s.m.emplace_back(static_cast<size_t>(p.numel()), 0.0);
        s.v.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    }
    return s;
}

void adam_step(std::vector<Tensor>& params, AdamState& state, const ExperimentConfig& cfg) {
    if (state.m.size() != params.size()) {
        throw ValidationError("adam_step: state tracks " + std::to_string(state.m.size()) +
                              " tensors, model has " + std::to_string(params.size()));
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        const std::vector<double>& g = p.grad();
        if (static_cast<int64_t>(g.size()) != p.numel()) {
            throw ValidationError("adam_step: gradient size mismatch on parameter " + std::to_string(i));
        }
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        std::vector<double>& x = p.mutable_data();
        for (size_t j = 0; j < g.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            x[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps_adam);
        }
    }
}

std::vector<std::vector<int64_t>> stratified_kfold(const std::vector<int>& labels, int k,
                                                   uint64_t seed) {
    if (k < 2) throw ValidationError("stratified_kfold: k must be >= 2, got " + std::to_string(k));
    std::vector<int64_t> class0, class1;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 0) {
            class0.push_back(static_cast<int64_t>(i));
        } else if (labels[i] == 1) {
            class1.push_back(static_cast<int64_t>(i));
        } else {
            throw ValidationError("stratified_kfold: label " + std::to_string(labels[i]) +
                                  " outside {0,1}");
        }
    }
    if (class0.empty() || class1.empty()) {
        throw ValidationError("stratified_kfold: both classes need at least one member");
    }
    const size_t min_class = std::min(class0.size(), class1.size());
    if (static_cast<size_t>(k) > min_class) {
        std::cerr << "warning: " << k << " folds exceed the smaller class (" << min_class
                  << " members); some folds will miss that class\n";
    }

    SplitMix64 rng(mix_seed(seed, 0x6b666f6c64)); // "kfold" stream
    std::vector<std::vector<int64_t>> folds(static_cast<size_t>(k));
    size_t cursor = 0;
    for (std::vector<int64_t>* cls : {&class0, &class1}) {
        shuffle(*cls, rng);
        for (int64_t idx : *cls) {
            folds[cursor % static_cast<size_t>(k)].push_back(idx);
            ++cursor;
        }
    }
    return folds;
}

std::vector<SubjectData> load_dataset(const std::string& manifest_path,
                                      const ExperimentConfig& cfg) {
    const std::vector<SubjectRecord> records = load_manifest(manifest_path);
    const int64_t factor = EncoderConfig{}.pool_factor();

    auto fits_encoder = [factor](const Volume& v) {
        return v.nx == v.ny && v.ny == v.nz && v.nx % factor == 0;
    };
    auto load_volume = [](const std::string& path) {
        const std::filesystem::path p(path);
        if (p.extension() == ".nii") return load_nifti(path);
        return load_rawvol(path);
    };

    std::vector<SubjectData> out;
    out.reserve(records.size());
    for (const SubjectRecord& r : records) {
        Volume smri = load_volume(r.smri_path);
        if (smri.channels != 1) {
            throw ValidationError("subject " + r.subject_id + ": intensity volume " + r.smri_path +
                                  " must have 1 channel, has " + std::to_string(smri.channels));
        }
        Volume field = load_volume(r.field_path);
        require_deformation_field(field);
        Volume jsm = jsm_pipeline(field, cfg.jsm);

        if (!smri.same_grid(jsm)) {
            throw ValidationError("subject " + r.subject_id +
                                  ": intensity and deformation grids differ");
        }
        if (!fits_encoder(smri)) {
            smri = resample_trilinear(smri, cfg.input_size, cfg.input_size, cfg.input_size);
            jsm = resample_trilinear(jsm, cfg.input_size, cfg.input_size, cfg.input_size);
        }

        // z-score intensities per subject; keep JSM magnitudes as computed
        double mean = 0.0;
        for (double v : smri.data) mean += v;
        mean /= static_cast<double>(smri.data.size());
        double var = 0.0;
        for (double v : smri.data) var += (v - mean) * (v - mean);
        var /= static_cast<double>(smri.data.size());
        const double inv_sd = 1.0 / std::sqrt(var + 1e-12);
        for (double& v : smri.data) v = (v - mean) * inv_sd;

        SubjectData s;
        s.id = r.subject_id;
        s.label = r.label;
        s.smri = volume_to_tensor(smri);
        s.jsm = volume_to_tensor(jsm);
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

double batch_pass(FusionModel& model, const std::vector<const SubjectData*>& batch) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    double loss_sum = 0.0;
    for (const SubjectData* s : batch) {
        const Tensor logits = stack_rows({model_forward(model, s->smri, s->jsm)});
        const Tensor loss = cross_entropy_loss(logits, {s->label});
        loss_sum += loss.item();
        // scale so the accumulated gradients match the batch-mean loss
        backward(scale(loss, inv));
    }
    return loss_sum * inv;
}

} // namespace

TrainResult train_model(const std::vector<const SubjectData*>& train_set,
                        const ExperimentConfig& cfg, uint64_t seed) {
    if (train_set.empty()) throw ValidationError("train_model: empty training set");
    bool has0 = false, has1 = false;
    for (const SubjectData* s : train_set) {
        (s->label == 0 ? has0 : has1) = true;
    }
    if (!has0 || !has1) {
        throw ValidationError("train_model: training set contains a single class only");
    }
    if (cfg.batch < 1) throw ValidationError("train_model: batch size must be >= 1");

    SplitMix64 init_rng(mix_seed(seed, 0x696e6974)); // "init" stream
    TrainResult result{build_fusion_model(cfg.kind, cfg.hyper, init_rng), {}};
    AdamState adam = init_adam(result.model.params);

    std::vector<int64_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        SplitMix64 epoch_rng(mix_seed(seed, 0x65706f63 + static_cast<uint64_t>(epoch)));
        shuffle(order, epoch_rng);
        double epoch_loss = 0.0;
        size_t pos = 0;
        while (pos < order.size()) {
            const size_t take = std::min(static_cast<size_t>(cfg.batch), order.size() - pos);
            std::vector<const SubjectData*> batch;
            batch.reserve(take);
            for (size_t i = 0; i < take; ++i) {
                batch.push_back(train_set[static_cast<size_t>(order[pos + i])]);
            }
            pos += take;
            for (Tensor& p : result.model.params) p.zero_grad();
            epoch_loss += batch_pass(result.model, batch) * static_cast<double>(take);
            adam_step(result.model.params, adam, cfg);
        }
        result.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    return result;
}

double score_subject(const FusionModel& m, const SubjectData& s) {
    NoGradGuard ng;
    const Tensor logits = model_forward(m, s.smri, s.jsm);
    const double l0 = logits.data()[0], l1 = logits.data()[1];
    const double mx = std::max(l0, l1);
    const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
    return e1 / (e0 + e1);
}

CvResult run_cv_experiment(const std::vector<SubjectData>& dataset, const ExperimentConfig& cfg) {
    if (dataset.empty()) throw ValidationError("run_cv_experiment: empty dataset");
    std::vector<int> labels;
    labels.reserve(dataset.size());
    for (const SubjectData& s : dataset) labels.push_back(s.label);
    const std::vector<std::vector<int64_t>> folds = stratified_kfold(labels, cfg.folds, cfg.seed);

    CvResult cv;
    for (int f = 0; f < cfg.folds; ++f) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<const SubjectData*> train_set;
        for (int g = 0; g < cfg.folds; ++g) {
            if (g == f) continue;
            for (int64_t idx : folds[static_cast<size_t>(g)]) {
                train_set.push_back(&dataset[static_cast<size_t>(idx)]);
            }
        }
        const uint64_t fold_seed = cfg.seed + static_cast<uint64_t>(f);
        TrainResult trained = train_model(train_set, cfg, fold_seed);

        FoldResult fr;
        fr.fold = f;
        fr.epoch_loss = trained.epoch_loss;
        fr.final_loss = trained.epoch_loss.empty() ? 0.0 : trained.epoch_loss.back();
        for (int64_t idx : folds[static_cast<size_t>(f)]) {
            const SubjectData& s = dataset[static_cast<size_t>(idx)];
            fr.subject_ids.push_back(s.id);
            fr.labels.push_back(s.label);
            fr.scores.push_back(score_subject(trained.model, s));
        }
        fr.auc = roc_auc(fr.scores, fr.labels);
        fr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (f == 0) cv.param_count = count_parameters(trained.model.params);
        cv.folds.push_back(std::move(fr));
    }

    double mean = 0.0;
    for (const FoldResult& fr : cv.folds) mean += fr.auc;
    mean /= static_cast<double>(cv.folds.size());
    double ss = 0.0;
    for (const FoldResult& fr : cv.folds) ss += (fr.auc - mean) * (fr.auc - mean);
    cv.mean_auc = mean;
    cv.std_auc = cv.folds.size() > 1
                     ? std::sqrt(ss / static_cast<double>(cv.folds.size() - 1))
                     : 0.0;
    return cv;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::ofstream open_csv(const std::filesystem::path& p, const std::string& header, bool append) {
    const bool exists = std::filesystem::exists(p);
    std::ofstream out(p, append ? std::ios::app : std::ios::trunc);
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
    if (!append || !exists) out << header << "\n";
    return out;
}

} // namespace

void write_experiment_csv(const std::string& out_dir, const ExperimentConfig& cfg,
                          const CvResult& cv, bool append) {
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    const std::string kind = fusion_kind_name(cfg.kind);

    std::ofstream results = open_csv(dir / "results.csv", "fusion,task,fold,auc,final_loss", append);
    for (const FoldResult& fr : cv.folds) {
        results << kind << "," << cfg.task << "," << fr.fold << "," << fmt(fr.auc) << ","
                << fmt(fr.final_loss) << "\n";
    }

    std::ofstream summary =
        open_csv(dir / "summary.csv", "fusion,task,mean_auc,std_auc,params", append);
    summary << kind << "," << cfg.task << "," << fmt(cv.mean_auc) << "," << fmt(cv.std_auc) << ","
            << cv.param_count << "\n";

    std::ofstream scores =
        open_csv(dir / "scores.csv", "fusion,task,fold,subject_id,label,score", append);
    for (const FoldResult& fr : cv.folds) {
        for (size_t i = 0; i < fr.scores.size(); ++i) {
            scores << kind << "," << cfg.task << "," << fr.fold << "," << fr.subject_ids[i] << ","
                   << fr.labels[i] << "," << fmt(fr.scores[i]) << "\n";
        }
    }

    // wall time lives apart from results.csv so reruns stay byte-identical there
    std::ofstream timings = open_csv(dir / "timings.csv", "fusion,task,fold,seconds", append);
    for (const FoldResult& fr : cv.folds) {
        timings << kind << "," << cfg.task << "," << fr.fold << "," << fmt(fr.seconds) << "\n";
    }
}

} // namespace jmfuse

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jmfuse/errors.hpp"
#include "jmfuse/gradcheck.hpp"
#include "jmfuse/jacobian.hpp"
#include "jmfuse/metrics.hpp"
#include "jmfuse/synthgen.hpp"
#include "jmfuse/training.hpp"
#include "jmfuse/volume.hpp"

namespace {

using namespace jmfuse;

int cmd_jacobian(const std::string& in_path, const std::string& out_path, bool want_det,
                 bool signed_log, const std::string& convention, double eps,
                 const std::string& units) {
    if (units == "mm") {
        throw UnsupportedError("--units mm is reserved and not implemented; fields are voxel-unit");
    }
    if (units != "voxel") {
        throw ValidationError("--units must be voxel or mm, got `" + units + "`");
    }
    JsmOptions opts;
    if (convention == "displacement") {
        opts.convention = FieldConvention::displacement;
    } else if (convention == "total") {
        opts.convention = FieldConvention::total_map;
    } else {
        throw ValidationError("--convention must be displacement or total, got `" + convention + "`");
    }
    opts.eps = eps;
    opts.signed_log = signed_log;

    const Volume field = load_rawvol(in_path);
    require_deformation_field(field);
    Volume out;
    ClampStats stats;
    if (want_det) {
        out = determinant_map(jacobian_matrix_field(field, opts.convention));
    } else {
        out = jsm_pipeline(field, opts, &stats);
        if (stats.clamped > 0) {
            std::fprintf(stderr, "clamped %lld voxels with determinant below %g\n",
                         static_cast<long long>(stats.clamped), eps);
        }
    }
    save_rawvol(out, out_path, kRawvolDtypeF64);
    return 0;
}

int cmd_synth(int n, int64_t dim, double alpha, uint64_t seed, const std::string& out_dir) {
    SynthConfig cfg;
    cfg.n_subjects = n;
    cfg.dim = dim;
    cfg.atrophy_alpha = alpha;
    cfg.seed = seed;
    const std::string manifest = generate_dataset(cfg, out_dir);
    std::printf("wrote %d subjects, manifest %s\n", n, manifest.c_str());
    return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& manifest,
              const std::string& out_dir) {
    const std::vector<SubjectData> dataset = load_dataset(manifest, cfg);
    const CvResult cv = run_cv_experiment(dataset, cfg);
    write_experiment_csv(out_dir, cfg, cv, /*append=*/false);
    std::printf("%s: mean auc %.4f, std %.4f, %lld parameters\n",
                fusion_kind_name(cfg.kind).c_str(), cv.mean_auc, cv.std_auc,
                static_cast<long long>(cv.param_count));
    return 0;
}

int cmd_gradcheck() {
    const std::vector<GradCheckEntry> entries = run_gradcheck_suite();
    double worst = 0.0;
    for (const GradCheckEntry& e : entries) {
        std::printf("%-16s %10.3e  (%lld elements)\n", e.name.c_str(), e.max_rel_err,
                    static_cast<long long>(e.elements));
        worst = std::max(worst, e.max_rel_err);
    }
    std::printf("max relative error %.3e\n", worst);
    if (worst >= 1e-5) {
        std::fprintf(stderr, "gradient check failed the 1e-5 gate\n");
        return 1;
    }
    return 0;
}

int cmd_compare(ExperimentConfig cfg, const std::string& manifest, const std::string& fusions,
                const std::string& out_dir) {
    std::vector<FusionKind> kinds;
    std::string cur;
    for (char ch : fusions + ",") {
        if (ch == ',') {
            if (!cur.empty()) kinds.push_back(parse_fusion_kind(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (kinds.empty()) throw ValidationError("--fusions lists no fusion kinds");

    const std::vector<SubjectData> dataset = load_dataset(manifest, cfg);
    std::filesystem::create_directories(out_dir);
    // same seed for every kind: identical folds make the comparison paired
    bool first = true;
    for (FusionKind kind : kinds) {
        cfg.kind = kind;
        const CvResult cv = run_cv_experiment(dataset, cfg);
        write_experiment_csv(out_dir, cfg, cv, /*append=*/!first);
        first = false;
        std::printf("%-12s mean %.4f  std %.4f  params %lld\n", fusion_kind_name(kind).c_str(),
                    cv.mean_auc, cv.std_auc, static_cast<long long>(cv.param_count));
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deformation-aware multimodal fusion pipeline"};
    app.require_subcommand(1);

    // jacobian
    std::string jac_in, jac_out, jac_convention = "displacement", jac_units = "voxel";
    bool jac_det = false, jac_log = false, jac_signed = false;
    double jac_eps = 1e-6;
    CLI::App* jac = app.add_subcommand("jacobian", "deformation field -> determinant / log map");
    jac->add_option("--in", jac_in, "input 3-channel RAWVOL field")->required();
    jac->add_option("--out", jac_out, "output RAWVOL map")->required();
    CLI::Option* optlog = jac->add_flag("--log", jac_log, "write the folded log map (default)");
    jac->add_flag("--det", jac_det, "write the raw determinant map")->excludes(optlog);
    jac->add_flag("--signed-log", jac_signed, "plain ln(det) instead of the folded form");
    jac->add_option("--convention", jac_convention, "displacement|total (default displacement)");
    jac->add_option("--eps", jac_eps, "determinant clamp floor (default 1e-6)");
    jac->add_option("--units", jac_units, "voxel|mm (mm reserved, default voxel)");

    // synth
    int synth_n = 200;
    int64_t synth_dim = 32;
    double synth_alpha = 0.25;
    uint64_t synth_seed = 42;
    std::string synth_out;
    CLI::App* synth = app.add_subcommand("synth", "generate a paired synthetic dataset");
    synth->add_option("--n", synth_n, "subject count (default 200)");
    synth->add_option("--dim", synth_dim, "cubic volume extent (default 32)");
    synth->add_option("--alpha", synth_alpha, "peak contraction strength (default 0.25)");
    synth->add_option("--seed", synth_seed, "generator seed (default 42)");
    synth->add_option("--out", synth_out, "output directory")->required();

    // train
    ExperimentConfig tc;
    std::string train_manifest, train_fusion = "cross", train_out;
    CLI::App* train = app.add_subcommand("train", "cross-validated training and evaluation");
    train->add_option("--manifest", train_manifest, "dataset manifest csv")->required();
    train->add_option("--fusion", train_fusion,
                      "cross|self|bottleneck|ilf|ilf-sa|flf|flf-sa|sc|sc-sa|single-smri|single-jsm");
    train->add_option("--folds", tc.folds, "cross-validation folds (default 5)");
    train->add_option("--epochs", tc.epochs, "epochs per fold (default 20)");
    train->add_option("--batch", tc.batch, "minibatch size (default 16)");
    train->add_option("--lr", tc.lr, "Adam learning rate (default 1e-4)");
    train->add_option("--embed", tc.hyper.d, "attention embedding dim (default 128)");
    train->add_option("--heads", tc.hyper.heads, "attention heads (default 4)");
    train->add_option("--bottleneck", tc.hyper.bottleneck_tokens, "bottleneck token count (default 4)");
    train->add_option("--seed", tc.seed, "experiment seed (default 42)");
    train->add_option("--out", train_out, "output directory for csv files")->required();

    // gradcheck
    app.add_subcommand("gradcheck", "finite-difference gradient suite");

    // compare
    ExperimentConfig cc;
    std::string cmp_manifest, cmp_fusions = "cross,self,bottleneck,ilf,flf,sc", cmp_out;
    CLI::App* cmp = app.add_subcommand("compare", "run several fusion kinds on shared folds");
    cmp->add_option("--manifest", cmp_manifest, "dataset manifest csv")->required();
    cmp->add_option("--fusions", cmp_fusions, "comma-separated fusion kinds");
    cmp->add_option("--seed", cc.seed, "experiment seed (default 42)");
    cmp->add_option("--out", cmp_out, "output directory for csv files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (jac->parsed()) {
            return cmd_jacobian(jac_in, jac_out, jac_det, jac_signed, jac_convention, jac_eps,
                                jac_units);
        }
        if (synth->parsed()) {
            return cmd_synth(synth_n, synth_dim, synth_alpha, synth_seed, synth_out);
        }
        if (train->parsed()) {
            tc.kind = parse_fusion_kind(train_fusion);
            return cmd_train(tc, train_manifest, train_out);
        }
        if (app.get_subcommand("gradcheck")->parsed()) {
            return cmd_gradcheck();
        }
        if (cmp->parsed()) {
            return cmd_compare(cc, cmp_manifest, cmp_fusions, cmp_out);
        }
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

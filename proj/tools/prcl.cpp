// prcl: synthetic semi-supervised segmentation lab with probabilistic
// representations, streaming distribution prototypes and virtual negatives.
//
// Subcommands: gen-data, train, eval, ablate. Exit codes: 0 success,
// 2 config/contract error, 3 numeric failure, 4 I/O or parse error.

#include <cmath>
#include <iostream>

#include <CLI11.hpp>

#include "prcl/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_override;
    std::int64_t seed_override = -1;
};

prcl::RunConfig load(const CommonOpts& opts) {
    prcl::RunConfig cfg = prcl::load_config(opts.config_path);
    if (opts.seed_override >= 0)
        cfg.hp.seed = static_cast<std::uint64_t>(opts.seed_override);
    if (!opts.out_override.empty()) cfg.output_dir = opts.out_override;
    cfg.validate();
    return cfg;
}

fs::path ensure_out_dir(const prcl::RunConfig& cfg) {
    fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    return dir;
}

fs::path dataset_file(const prcl::RunConfig& cfg, const fs::path& out_dir) {
    return cfg.dataset_path.empty() ? out_dir / "dataset.bin" : fs::path(cfg.dataset_path);
}

int cmd_gen_data(const CommonOpts& opts) {
    prcl::RunConfig cfg = load(opts);
    const fs::path out_dir = ensure_out_dir(cfg);
    const fs::path path = dataset_file(cfg, out_dir);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    prcl::Dataset ds = prcl::generate(cfg.data);
    prcl::export_scenes(ds, path);
    std::cout << "wrote " << ds.scenes.size() << " scenes (" << ds.labeled_count()
              << " labeled) to " << path.string() << "\n";
    return 0;
}

int cmd_train(const CommonOpts& opts) {
    prcl::RunConfig cfg = load(opts);
    const fs::path out_dir = ensure_out_dir(cfg);
    prcl::Dataset ds = prcl::import_scenes(dataset_file(cfg, out_dir));

    prcl::Trainer trainer(cfg, ds);
    prcl::TrainResult result = trainer.run();

    prcl::write_metrics_csv(result.trace, out_dir / "metrics.csv");
    prcl::write_timing_csv(result.trace, out_dir / "timing.csv");
    prcl::save_checkpoint(result.final_checkpoint, out_dir / "checkpoint.bin");
    prcl::write_embedding_dump(result.final_checkpoint.student, ds, result.val_scenes,
                               out_dir / "embeddings.jsonl");
    const auto& last = result.trace.back();
    std::cout << "final: iter=" << last.iteration << " miou=" << last.eval.miou
              << " silhouette=" << last.eval.silhouette << " dbi=" << last.eval.dbi << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_path,
             const std::string& out_path) {
    prcl::Checkpoint ckpt = prcl::load_checkpoint(checkpoint_path);
    prcl::Dataset ds = prcl::import_scenes(dataset_path);
    if (ckpt.student.num_classes != static_cast<int>(ds.spec.num_classes))
        throw prcl::ContractError(
            "checkpoint/dataset class count mismatch: " +
            std::to_string(ckpt.student.num_classes) + " vs " +
            std::to_string(ds.spec.num_classes));
    if (ckpt.student.feature_dim != static_cast<int>(ds.spec.feature_dim))
        throw prcl::ContractError("checkpoint/dataset feature dim mismatch");

    const auto split = prcl::detail::make_split(ds);
    const prcl::EvalMetrics m = prcl::evaluate_model(ckpt.student, ds, split.val);
    std::string row = std::to_string(ckpt.iteration) + "," + prcl::detail::fmt(m.miou) + "," +
                      prcl::detail::fmt(m.silhouette) + "," + prcl::detail::fmt(m.dbi);
    if (!out_path.empty()) {
        std::ofstream os(out_path);
        if (!os) throw prcl::IoError("cannot open " + out_path);
        os << "iteration,miou_val,silhouette,dbi\n" << row << "\n";
    }
    std::cout << "iteration,miou_val,silhouette,dbi\n" << row << "\n";
    return 0;
}

int cmd_ablate(const CommonOpts& opts) {
    prcl::RunConfig cfg = load(opts);
    const fs::path out_dir = ensure_out_dir(cfg);
    const fs::path data_path = dataset_file(cfg, out_dir);
    prcl::Dataset ds;
    if (fs::exists(data_path)) {
        ds = prcl::import_scenes(data_path);
    } else {
        ds = prcl::generate(cfg.data);
        prcl::export_scenes(ds, data_path);
    }

    std::ofstream results(out_dir / "ablation_results.csv");
    if (!results) throw prcl::IoError("cannot open ablation_results.csv");
    results << "row,seed,status,miou,silhouette,dbi,neg_state_bytes,ms_per_iter\n";

    std::ofstream summary(out_dir / "ablation_summary.csv");
    if (!summary) throw prcl::IoError("cannot open ablation_summary.csv");
    summary << "row,seeds,miou_mean,miou_std,silhouette_mean,dbi_mean,neg_state_bytes,"
               "ms_per_iter_mean\n";

    for (const std::string& row : cfg.ablate_rows) {
        std::vector<double> mious, sils, dbis, ms;
        std::size_t bytes = 0;
        for (int s = 0; s < cfg.ablate_seeds; ++s) {
            prcl::RunConfig sub = cfg;
            sub.strategy = prcl::strategy_row(row);
            sub.hp.seed = cfg.hp.seed + static_cast<std::uint64_t>(s);
            try {
                prcl::Trainer trainer(sub, ds);
                prcl::TrainResult res = trainer.run();
                const auto& last = res.trace.back();
                results << row << ',' << sub.hp.seed << ",ok,"
                        << prcl::detail::fmt(last.eval.miou) << ','
                        << prcl::detail::fmt(last.eval.silhouette) << ','
                        << prcl::detail::fmt(last.eval.dbi) << ',' << last.neg_state_bytes
                        << ',' << prcl::detail::fmt(last.ms_per_iter) << "\n";
                mious.push_back(last.eval.miou);
                sils.push_back(last.eval.silhouette);
                dbis.push_back(last.eval.dbi);
                ms.push_back(last.ms_per_iter);
                bytes = last.neg_state_bytes;
            } catch (const std::exception& e) {
                results << row << ',' << sub.hp.seed << ",failed:" << e.what()
                        << ",,,,,\n";
            }
        }
        if (mious.empty()) continue;
        auto mean = [](const std::vector<double>& v) {
            double acc = 0.0;
            for (double x : v) acc += x;
            return acc / static_cast<double>(v.size());
        };
        const double mu = mean(mious);
        double var = 0.0;
        for (double x : mious) var += (x - mu) * (x - mu);
        const double sd = mious.size() > 1 ? std::sqrt(var / (mious.size() - 1.0)) : 0.0;
        summary << row << ',' << mious.size() << ',' << prcl::detail::fmt(mu) << ','
                << prcl::detail::fmt(sd) << ',' << prcl::detail::fmt(mean(sils)) << ','
                << prcl::detail::fmt(mean(dbis)) << ',' << bytes << ','
                << prcl::detail::fmt(mean(ms)) << "\n";
        std::cout << row << ": miou " << mu << " +- " << sd << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"probabilistic representation contrastive learning lab"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string checkpoint_path, dataset_path, eval_out;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", opts.config_path, "key=value config file")->required();
        cmd->add_option("--seed", opts.seed_override, "override the config seed");
        cmd->add_option("--out", opts.out_override, "override the output directory");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    add_common(gen);
    CLI::App* train = app.add_subcommand("train", "train a model on a generated dataset");
    add_common(train);
    CLI::App* ablate = app.add_subcommand("ablate", "run the strategy grid over seeds");
    add_common(ablate);
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    eval->add_option("--dataset", dataset_path, "dataset file")->required();
    eval->add_option("--out", eval_out, "write the CSV row here as well");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(opts);
        if (train->parsed()) return cmd_train(opts);
        if (ablate->parsed()) return cmd_ablate(opts);
        if (eval->parsed()) return cmd_eval(checkpoint_path, dataset_path, eval_out);
    } catch (const prcl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const prcl::ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const prcl::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const prcl::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 4;
    } catch (const prcl::IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "prcl/trainer.hpp"

using namespace prcl;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config(const std::string& row) {
    RunConfig cfg;
    cfg.data.num_scenes = 10;
    cfg.data.labeled_fraction = 0.3;
    cfg.data.num_classes = 3;
    cfg.data.grid = 8;
    cfg.data.feature_dim = 5;
    cfg.data.seed = 5;
    cfg.total_iters = 60;
    cfg.eval_every = 20;
    cfg.hidden_dim = 8;
    cfg.repr_dim = 4;
    cfg.strategy = strategy_row(row);
    cfg.hp.seed = 11;
    // low thresholds so the contrastive machinery engages within a short run
    cfg.hp.delta_w = 0.30;
    cfg.hp.delta_s = 0.90;
    return cfg;
}

TrainResult run_tiny(const std::string& row) {
    const RunConfig cfg = tiny_config(row);
    Trainer trainer(cfg, generate(cfg.data));
    return trainer.run();
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("every strategy row trains without diverging") {
    for (const char* row :
         {"baseline", "baseline_plus", "pr", "pr_gdp", "pr_gdp_vn", "pr_gdp_mb"}) {
        CAPTURE(row);
        const TrainResult res = run_tiny(row);
        REQUIRE(res.trace.size() == 3);  // 60 iters / eval_every 20
        for (const auto& r : res.trace) {
            CHECK(std::isfinite(r.loss_s));
            CHECK(std::isfinite(r.loss_u));
            CHECK(std::isfinite(r.loss_c));
            CHECK(r.loss_c >= 0.0);
            CHECK(r.eval.miou >= 0.0);
            CHECK(r.eval.miou <= 1.0);
            CHECK(r.lambda > 0.0);
        }
        CHECK(res.trace.back().iteration == 60);
        CHECK(res.final_checkpoint.iteration == 60);
    }
}

TEST_CASE("negative state accounting per strategy") {
    CHECK(run_tiny("baseline").trace.back().neg_state_bytes == 0);
    CHECK(run_tiny("pr_gdp").trace.back().neg_state_bytes == 0);

    const TrainResult vn = run_tiny("pr_gdp_vn");
    // virtual negatives persist only the prototype bank: fixed-size per class
    const std::size_t per_class = 2 * 4 * sizeof(double) + sizeof(std::uint64_t) + sizeof(int);
    CHECK(!vn.final_checkpoint.bank.entries.empty());
    CHECK(vn.trace.back().neg_state_bytes ==
          vn.final_checkpoint.bank.entries.size() * per_class);

    const TrainResult mb = run_tiny("pr_gdp_mb");
    CHECK(mb.trace.back().neg_state_bytes > 0);
    CHECK(mb.trace.back().neg_state_bytes >= mb.trace.front().neg_state_bytes);
}

TEST_CASE("identical configurations give identical traces") {
    const TrainResult a = run_tiny("pr_gdp_vn");
    const TrainResult b = run_tiny("pr_gdp_vn");
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].loss_s == b.trace[i].loss_s);
        CHECK(a.trace[i].loss_u == b.trace[i].loss_u);
        CHECK(a.trace[i].loss_c == b.trace[i].loss_c);
        CHECK(a.trace[i].eval.miou == b.trace[i].eval.miou);
        CHECK(a.trace[i].eval.silhouette == b.trace[i].eval.silhouette);
        CHECK(a.trace[i].eval.dbi == b.trace[i].eval.dbi);
        CHECK(a.trace[i].proto_shift_mean == b.trace[i].proto_shift_mean);
    }
    CHECK(a.final_checkpoint.student.enc.w == b.final_checkpoint.student.enc.w);
    CHECK(a.final_checkpoint.teacher.prob2.w == b.final_checkpoint.teacher.prob2.w);
}

TEST_CASE("different seeds give different trajectories") {
    RunConfig cfg = tiny_config("pr_gdp_vn");
    const Dataset data = generate(cfg.data);
    Trainer t1(cfg, data);
    cfg.hp.seed = 12;
    Trainer t2(cfg, data);
    CHECK(t1.run().final_checkpoint.student.enc.w != t2.run().final_checkpoint.student.enc.w);
}

TEST_CASE("metrics csv is byte-identical across reruns, timing is separate") {
    const fs::path dir = fs::temp_directory_path();
    const fs::path m1 = dir / "prcl_test_m1.csv", m2 = dir / "prcl_test_m2.csv";
    const fs::path t1 = dir / "prcl_test_t1.csv";
    write_metrics_csv(run_tiny("pr_gdp_vn").trace, m1);
    const TrainResult second = run_tiny("pr_gdp_vn");
    write_metrics_csv(second.trace, m2);
    write_timing_csv(second.trace, t1);

    const std::string a = slurp(m1), b = slurp(m2);
    CHECK(a == b);
    CHECK(a.rfind(kMetricsHeader, 0) == 0);
    CHECK(a.find("ms_per_iter") == std::string::npos);
    CHECK(slurp(t1).rfind("iteration,ms_per_iter", 0) == 0);
    fs::remove(m1);
    fs::remove(m2);
    fs::remove(t1);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    const TrainResult res = run_tiny("pr_gdp_vn");
    const fs::path file = fs::temp_directory_path() / "prcl_test_ckpt.bin";
    save_checkpoint(res.final_checkpoint, file);
    const Checkpoint back = load_checkpoint(file);

    CHECK(back.grid == res.final_checkpoint.grid);
    CHECK(back.iteration == res.final_checkpoint.iteration);
    CHECK(back.student.enc.w == res.final_checkpoint.student.enc.w);
    CHECK(back.student.prob2.b == res.final_checkpoint.student.prob2.b);
    CHECK(back.teacher.seg.w == res.final_checkpoint.teacher.seg.w);
    REQUIRE(back.bank.entries.size() == res.final_checkpoint.bank.entries.size());
    for (const auto& [cls, proto] : res.final_checkpoint.bank.entries) {
        const GlobalPrototype& loaded = back.bank.entries.at(cls);
        CHECK(loaded.mu_hat == proto.mu_hat);
        CHECK(loaded.sigma2_hat == proto.sigma2_hat);
        CHECK(loaded.n_updates == proto.n_updates);
    }
    fs::remove(file);
}

TEST_CASE("evaluation is a pure function of checkpoint and dataset") {
    const RunConfig cfg = tiny_config("pr_gdp_vn");
    const Dataset data = generate(cfg.data);
    Trainer trainer(cfg, data);
    const TrainResult res = trainer.run();
    const EvalMetrics again =
        evaluate_model(res.final_checkpoint.student, data, res.val_scenes);
    CHECK(again.miou == res.trace.back().eval.miou);
    CHECK(again.silhouette == res.trace.back().eval.silhouette);
    CHECK(again.dbi == res.trace.back().eval.dbi);
}

TEST_CASE("embedding dump carries a schema line and one record per sample") {
    const RunConfig cfg = tiny_config("pr");
    const Dataset data = generate(cfg.data);
    Trainer trainer(cfg, data);
    const TrainResult res = trainer.run();
    const fs::path file = fs::temp_directory_path() / "prcl_test_embed.jsonl";
    write_embedding_dump(res.final_checkpoint.student, data, res.val_scenes, file);

    std::ifstream is(file);
    std::string line;
    REQUIRE(std::getline(is, line));
    CHECK(line == R"({"schema":"prcl-embeddings","version":1})");
    std::size_t records = 0;
    while (std::getline(is, line)) {
        CHECK(line.find("\"mu\":[") != std::string::npos);
        CHECK(line.find("\"sigma2\":[") != std::string::npos);
        ++records;
    }
    CHECK(records == eval_pixel_sample(data, res.val_scenes).size());
    fs::remove(file);
}

TEST_CASE("train/val split is seed-stable and keeps a labeled scene in train") {
    const RunConfig cfg = tiny_config("pr");
    const Dataset data = generate(cfg.data);
    const auto s1 = detail::make_split(data);
    const auto s2 = detail::make_split(data);
    CHECK(s1.train == s2.train);
    CHECK(s1.val == s2.val);
    CHECK(s1.train.size() + s1.val.size() == data.scenes.size());
    bool labeled = false;
    for (std::size_t i : s1.train) labeled |= data.scenes[i].is_labeled;
    CHECK(labeled);
}

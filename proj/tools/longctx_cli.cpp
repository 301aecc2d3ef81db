// Experiment runner: teacher pretraining and ERFT, the two distillation
// stages, evaluation, ablation presets, and report aggregation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "longctx/config.hpp"
#include "longctx/erft.hpp"
#include "longctx/evalproto.hpp"
#include "longctx/metrics.hpp"
#include "longctx/model.hpp"
#include "longctx/rollout.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace longctx;

namespace {

struct RunDir {
    fs::path dir;
    fs::path lock;

    explicit RunDir(const std::string& path) : dir(path), lock(dir / ".lock") {
        fs::create_directories(dir);
        if (fs::exists(lock))
            throw std::invalid_argument("output directory is locked by another run: " +
                                        dir.string());
        std::ofstream(lock.string()) << "locked\n";
    }
    ~RunDir() {
        std::error_code ec;
        fs::remove(lock, ec);
    }

    std::string file(const std::string& name) const { return (dir / name).string(); }
};

void write_snapshot(const RunDir& run, const ExperimentConfig& cfg) {
    std::ofstream(run.file("config.snapshot")) << serialize_config(cfg);
    std::ofstream(run.file("seed")) << cfg.seed << "\n";
}

ExperimentConfig resolve_config(const std::string& config_path,
                                const std::vector<std::string>& overrides,
                                std::optional<uint64_t> seed, std::optional<std::string> out) {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    for (const auto& ov : overrides) apply_override(cfg, ov);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out_dir = *out;
    validate(cfg);
    return cfg;
}

void require_file(const std::string& path, const std::string& what, const std::string& key) {
    if (path.empty())
        throw std::invalid_argument("missing prerequisite: " + what + " (set " + key + ")");
    if (!fs::exists(path))
        throw std::invalid_argument("missing prerequisite: " + what + " not found at '" + path +
                                    "' (set " + key + ")");
}

int cmd_teacher_pretrain(const ExperimentConfig& cfg) {
    RunDir run(cfg.out_dir);
    write_snapshot(run, cfg);
    Domain d = build_domain(cfg);
    MetricWriter mw(run.file("metrics.jsonl"));
    ScoreParams teacher =
        teacher_pretrain(teacher_config(cfg, d), [&](const json& j) { mw.write(j); });
    save_score(run.file("teacher.ckpt"), teacher);
    std::cout << "teacher checkpoint: " << run.file("teacher.ckpt") << "\n";
    return 0;
}

int cmd_teacher_erft(const ExperimentConfig& cfg) {
    require_file(cfg.erft_init_checkpoint, "pretrained teacher checkpoint",
                 "erft.init_checkpoint");
    RunDir run(cfg.out_dir);
    write_snapshot(run, cfg);
    Domain d = build_domain(cfg);
    ScoreParams pre = load_score(cfg.erft_init_checkpoint);
    MetricWriter mw(run.file("metrics.jsonl"));
    ErftConfig ecfg = erft_config(cfg);
    if (!cfg.ablate_erft) ecfg.perturb.bernoulli_p = 0.0;  // clean fine-tune baseline
    ErftResult res =
        teacher_erft(teacher_config(cfg, d), ecfg, pre, [&](const json& j) { mw.write(j); });
    save_score(run.file("teacher_erft.ckpt"), res.teacher);
    save_bank(run.file("bank.ckpt"), res.bank);
    std::cout << "erft teacher checkpoint: " << run.file("teacher_erft.ckpt") << "\n";
    return 0;
}

int cmd_stage1(const ExperimentConfig& cfg) {
    RunDir run(cfg.out_dir);
    write_snapshot(run, cfg);
    Domain d = build_domain(cfg);
    MetricWriter mw(run.file("metrics.jsonl"));
    Stage1Result res = train_stage1(stage1_config(cfg, d), [&](const json& j) { mw.write(j); });
    mw.write(json{{"stage", 1},
                  {"event", "final"},
                  {"kl_initial", res.kl_initial},
                  {"kl_final", res.kl_final}});
    save_generator(run.file("gen_stage1.ckpt"), res.gen);
    save_score(run.file("fake_stage1.ckpt"), res.fake);
    std::cout << "stage1 generator: " << run.file("gen_stage1.ckpt") << "\n";
    std::cout << "kl " << res.kl_initial << " -> " << res.kl_final << "\n";
    return 0;
}

int cmd_stage2(const ExperimentConfig& cfg) {
    require_file(cfg.stage2_init_checkpoint, "stage-1 generator checkpoint",
                 "stage2.init_checkpoint");
    RunDir run(cfg.out_dir);
    write_snapshot(run, cfg);
    Domain d = build_domain(cfg);
    Stage2Config scfg = stage2_config(cfg, d);
    if (scfg.teacher_kind == TeacherKind::Trained) {
        require_file(cfg.stage2_teacher_checkpoint, "trained teacher checkpoint",
                     "stage2.teacher_checkpoint");
        scfg.trained_teacher = load_score(cfg.stage2_teacher_checkpoint);
    }
    GeneratorParams init = load_generator(cfg.stage2_init_checkpoint);
    MetricWriter mw(run.file("metrics.jsonl"));
    Stage2Result res = train_stage2(scfg, init, [&](const json& j) { mw.write(j); });
    save_generator(run.file("gen_stage2.ckpt"), res.gen);
    save_score(run.file("fake_stage2.ckpt"), res.fake);
    std::cout << "stage2 generator: " << run.file("gen_stage2.ckpt") << "\n";
    return 0;
}

int cmd_eval(const ExperimentConfig& cfg) {
    require_file(cfg.eval_checkpoint, "generator checkpoint", "eval.checkpoint");
    RunDir run(cfg.out_dir);
    write_snapshot(run, cfg);
    Domain d = build_domain(cfg);
    GeneratorParams gen = load_generator(cfg.eval_checkpoint);
    EvalModel model{&gen, &d.proc, &d.cm, &d.sched, d.cache, cfg.ablate_bounded_pe};

    Rng rng(cfg.seed);
    ConsistencyCurve curve = consistency_curve(model, cfg.eval_n_chunks, cfg.eval_marks,
                                               cfg.eval_seeds, rng.sub("curve"));
    {
        std::ofstream csv(run.file("curve.csv"));
        csv << "mark,mean,std,seeds\n";
        char buf[64];
        for (size_t i = 0; i < curve.marks.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%d\n", curve.marks[i], curve.mean[i],
                          curve.std_dev[i], curve.seeds);
            csv << buf;
        }
    }
    // semantic alignment over fresh rollouts
    double align = 0.0;
    {
        Rng arng = rng.sub("align");
        for (int s = 0; s < cfg.eval_seeds; ++s) {
            Rng srng = arng.sub(uint64_t(s));
            Eigen::VectorXd cond = sample_condition_marginal(d.cm, d.proc, srng);
            RolloutPlan plan;
            plan.length = std::min(cfg.eval_n_chunks, 12);
            plan.exit_step = d.sched.steps;
            plan.teacher_len = 1;
            plan.cond = cond;
            RolloutResult rr = self_rollout(gen, plan, d.sched, d.cache, srng.sub("roll"));
            align += semantic_alignment(rr.chunks, cond, d.proc, d.cm);
        }
        align /= cfg.eval_seeds;
    }
    ProbeConfig pc;
    double recall = 0.0, baseline = 0.0;
    {
        Rng prng = rng.sub("probe");
        for (int s = 0; s < cfg.eval_seeds; ++s) {
            ProbeOutcome o = effective_context_probe(model, pc, prng.sub(uint64_t(s)));
            recall += o.recall;
            baseline += o.baseline;
        }
        recall /= cfg.eval_seeds;
        baseline /= cfg.eval_seeds;
    }
    json summary{{"marks", curve.marks},
                 {"consistency_mean", curve.mean},
                 {"consistency_std", curve.std_dev},
                 {"semantic_alignment", align},
                 {"probe_recall", recall},
                 {"probe_baseline", baseline},
                 {"strategy", cfg.cache_strategy},
                 {"bounded_pe", cfg.ablate_bounded_pe},
                 {"seeds", cfg.eval_seeds}};
    std::ofstream(run.file("summary.json")) << summary.dump(2) << "\n";
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_path) {
    std::ostringstream table;
    table << "run";
    bool header_done = false;
    for (const auto& dir : run_dirs) {
        fs::path p = fs::path(dir) / "summary.json";
        if (!fs::exists(p)) throw std::invalid_argument("report: no summary.json in " + dir);
        json s;
        std::ifstream(p.string()) >> s;
        if (!header_done) {
            for (const auto& m : s["marks"]) table << "\tc@" << m.get<int>();
            table << "\talign\trecall\n";
            header_done = true;
        }
        table << fs::path(dir).filename().string();
        char buf[32];
        for (const auto& v : s["consistency_mean"]) {
            std::snprintf(buf, sizeof buf, "\t%.4f", v.get<double>());
            table << buf;
        }
        std::snprintf(buf, sizeof buf, "\t%.4f", s["semantic_alignment"].get<double>());
        table << buf;
        std::snprintf(buf, sizeof buf, "\t%.4f", s["probe_recall"].get<double>());
        table << buf << "\n";
    }
    std::cout << table.str();
    if (!out_path.empty()) std::ofstream(out_path) << table.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"long-context chunk generator: training and evaluation pipelines"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<uint64_t> seed;
    std::optional<std::string> out;
    app.add_option("--config", config_path, "flat key-value config file");
    app.add_option("--set", overrides, "override, repeatable: key=value");
    app.add_option_function<uint64_t>("--seed", [&](uint64_t v) { seed = v; }, "run seed");
    app.add_option_function<std::string>("--out", [&](std::string v) { out = std::move(v); },
                                         "output directory");
    if (const char* root = std::getenv("LONGCTX_OUT_ROOT"); root && !out) {
        // environment default applies only when --out is absent
        out = std::string(root);
    }

    auto* sc_teacher = app.add_subcommand("teacher-pretrain", "train the context teacher");
    auto* sc_erft = app.add_subcommand("teacher-erft", "error-recycling fine-tune of the teacher");
    auto* sc_stage1 = app.add_subcommand("stage1", "short-window distillation warmup");
    auto* sc_stage2 = app.add_subcommand("stage2", "contextual distillation over self-rollouts");
    auto* sc_eval = app.add_subcommand("eval", "consistency curve, alignment and recall probe");
    auto* sc_ablate = app.add_subcommand("ablate", "run a named ablation preset");
    std::string preset;
    sc_ablate->add_option("preset", preset,
                          "uniform1 | uniform2 | no-cdmd | no-bounded-pe | no-erft")
        ->required();
    auto* sc_report = app.add_subcommand("report", "aggregate run summaries into a table");
    std::vector<std::string> report_dirs;
    std::string report_out;
    sc_report->add_option("dirs", report_dirs, "run directories")->required();
    sc_report->add_option("--table", report_out, "also write the table to this file");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sc_report->parsed()) return cmd_report(report_dirs, report_out);

        if (sc_ablate->parsed()) {
            if (preset == "uniform1") overrides.push_back("cache.strategy=uniform1");
            else if (preset == "uniform2") overrides.push_back("cache.strategy=uniform2");
            else if (preset == "no-bounded-pe") overrides.push_back("ablate.bounded_pe=false");
            else if (preset == "no-cdmd") overrides.push_back("ablate.cdmd=false");
            else if (preset == "no-erft") overrides.push_back("ablate.erft=false");
            else throw std::invalid_argument("unknown ablation preset: " + preset);
        }
        ExperimentConfig cfg = resolve_config(config_path, overrides, seed, out);

        if (sc_teacher->parsed()) return cmd_teacher_pretrain(cfg);
        if (sc_erft->parsed()) return cmd_teacher_erft(cfg);
        if (sc_stage1->parsed()) return cmd_stage1(cfg);
        if (sc_stage2->parsed()) return cmd_stage2(cfg);
        if (sc_eval->parsed()) return cmd_eval(cfg);
        if (sc_ablate->parsed()) {
            if (preset == "no-erft") return cmd_teacher_erft(cfg);
            return cmd_eval(cfg);  // the remaining presets are evaluation-time switches
        }
        throw std::invalid_argument("no subcommand");
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}

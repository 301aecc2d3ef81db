#include "longctx/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace longctx {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_marks(const std::vector<int>& marks) {
    std::ostringstream os;
    for (size_t i = 0; i < marks.size(); ++i) os << (i ? "," : "") << marks[i];
    return os.str();
}

std::vector<int> parse_marks(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(std::stoi(item));
    }
    return out;
}

// key registry binding dotted names to struct fields
struct Field {
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

std::vector<std::pair<std::string, Field>> field_registry() {
    std::vector<std::pair<std::string, Field>> r;
    auto add_int = [&r](const std::string& k, int ExperimentConfig::* p) {
        r.push_back({k, {[p](const ExperimentConfig& c) { return std::to_string(c.*p); },
                         [p, k](ExperimentConfig& c, const std::string& v) {
                             try { c.*p = std::stoi(v); }
                             catch (...) { throw std::invalid_argument("config: bad integer for " + k); }
                         }}});
    };
    auto add_long = [&r](const std::string& k, long ExperimentConfig::* p) {
        r.push_back({k, {[p](const ExperimentConfig& c) { return std::to_string(c.*p); },
                         [p, k](ExperimentConfig& c, const std::string& v) {
                             try { c.*p = std::stol(v); }
                             catch (...) { throw std::invalid_argument("config: bad integer for " + k); }
                         }}});
    };
    auto add_u64 = [&r](const std::string& k, uint64_t ExperimentConfig::* p) {
        r.push_back({k, {[p](const ExperimentConfig& c) { return std::to_string(c.*p); },
                         [p, k](ExperimentConfig& c, const std::string& v) {
                             try { c.*p = std::stoull(v); }
                             catch (...) { throw std::invalid_argument("config: bad integer for " + k); }
                         }}});
    };
    auto add_dbl = [&r](const std::string& k, double ExperimentConfig::* p) {
        r.push_back({k, {[p](const ExperimentConfig& c) { return fmt_double(c.*p); },
                         [p, k](ExperimentConfig& c, const std::string& v) {
                             try { c.*p = std::stod(v); }
                             catch (...) { throw std::invalid_argument("config: bad number for " + k); }
                         }}});
    };
    auto add_str = [&r](const std::string& k, std::string ExperimentConfig::* p) {
        r.push_back({k, {[p](const ExperimentConfig& c) { return c.*p; },
                         [p](ExperimentConfig& c, const std::string& v) { c.*p = v; }}});
    };
    auto add_bool = [&r](const std::string& k, bool ExperimentConfig::* p) {
        r.push_back({k, {[p](const ExperimentConfig& c) { return std::string(c.*p ? "true" : "false"); },
                         [p, k](ExperimentConfig& c, const std::string& v) {
                             if (v == "true") c.*p = true;
                             else if (v == "false") c.*p = false;
                             else throw std::invalid_argument("config: bad bool for " + k);
                         }}});
    };

    add_int("version", &ExperimentConfig::version);
    add_u64("seed", &ExperimentConfig::seed);
    add_u64("domain_seed", &ExperimentConfig::domain_seed);
    add_str("out", &ExperimentConfig::out_dir);
    add_int("scene.identity_dim", &ExperimentConfig::scene_identity_dim);
    add_int("scene.frame_dim", &ExperimentConfig::scene_frame_dim);
    add_int("scene.chunk_size", &ExperimentConfig::scene_chunk_size);
    add_dbl("scene.mixing_scale", &ExperimentConfig::scene_mixing_scale);
    add_dbl("scene.transition", &ExperimentConfig::scene_transition);
    add_dbl("scene.noise_scale", &ExperimentConfig::scene_noise_scale);
    add_int("cond.dim", &ExperimentConfig::cond_dim);
    add_dbl("cond.noise", &ExperimentConfig::cond_noise);
    add_int("schedule.steps", &ExperimentConfig::schedule_steps);
    add_str("schedule.kind", &ExperimentConfig::schedule_kind);
    add_int("cache.n_sink", &ExperimentConfig::cache_n_sink);
    add_int("cache.n_slow", &ExperimentConfig::cache_n_slow);
    add_int("cache.n_fast", &ExperimentConfig::cache_n_fast);
    add_dbl("cache.tau", &ExperimentConfig::cache_tau);
    add_int("cache.interval", &ExperimentConfig::cache_interval);
    add_str("cache.keep", &ExperimentConfig::cache_keep);
    add_str("cache.strategy", &ExperimentConfig::cache_strategy);
    add_int("net.key_dim", &ExperimentConfig::net_key_dim);
    add_int("net.val_dim", &ExperimentConfig::net_val_dim);
    add_int("net.hidden", &ExperimentConfig::net_hidden);
    add_int("net.window_hidden", &ExperimentConfig::net_window_hidden);
    add_int("net.teacher_hidden", &ExperimentConfig::net_teacher_hidden);
    add_int("curriculum.l0", &ExperimentConfig::curriculum_l0);
    add_int("curriculum.l1", &ExperimentConfig::curriculum_l1);
    add_long("curriculum.decay", &ExperimentConfig::curriculum_decay);
    add_int("rollout.teacher_len", &ExperimentConfig::rollout_teacher_len);
    add_dbl("rollout.inject_prob", &ExperimentConfig::rollout_inject_prob);
    add_dbl("rollout.inject_scale", &ExperimentConfig::rollout_inject_scale);
    add_int("stage1.steps", &ExperimentConfig::stage1_steps);
    add_int("stage1.batch", &ExperimentConfig::stage1_batch);
    add_dbl("stage1.gen_lr", &ExperimentConfig::stage1_gen_lr);
    add_dbl("stage1.fake_lr", &ExperimentConfig::stage1_fake_lr);
    add_int("stage1.fake_steps", &ExperimentConfig::stage1_fake_steps);
    add_int("stage1.gen_warmup", &ExperimentConfig::stage1_gen_warmup);
    add_int("stage2.steps", &ExperimentConfig::stage2_steps);
    add_int("stage2.rollouts", &ExperimentConfig::stage2_rollouts);
    add_dbl("stage2.gen_lr", &ExperimentConfig::stage2_gen_lr);
    add_dbl("stage2.fake_lr", &ExperimentConfig::stage2_fake_lr);
    add_int("stage2.fake_steps", &ExperimentConfig::stage2_fake_steps);
    add_int("stage2.gen_warmup", &ExperimentConfig::stage2_gen_warmup);
    add_str("stage2.teacher", &ExperimentConfig::stage2_teacher);
    add_str("stage2.teacher_scope", &ExperimentConfig::stage2_teacher_scope);
    add_str("stage2.init_checkpoint", &ExperimentConfig::stage2_init_checkpoint);
    add_str("stage2.teacher_checkpoint", &ExperimentConfig::stage2_teacher_checkpoint);
    add_int("teacher.steps", &ExperimentConfig::teacher_steps);
    add_int("teacher.batch", &ExperimentConfig::teacher_batch);
    add_dbl("teacher.lr", &ExperimentConfig::teacher_lr);
    add_int("erft.steps", &ExperimentConfig::erft_steps);
    add_int("erft.batch", &ExperimentConfig::erft_batch);
    add_dbl("erft.lr", &ExperimentConfig::erft_lr);
    add_dbl("erft.bernoulli_p", &ExperimentConfig::erft_bernoulli_p);
    add_dbl("erft.scale", &ExperimentConfig::erft_scale);
    add_int("erft.bank_capacity", &ExperimentConfig::erft_bank_capacity);
    add_str("erft.init_checkpoint", &ExperimentConfig::erft_init_checkpoint);
    add_int("eval.seeds", &ExperimentConfig::eval_seeds);
    add_int("eval.n_chunks", &ExperimentConfig::eval_n_chunks);
    add_str("eval.checkpoint", &ExperimentConfig::eval_checkpoint);
    r.push_back({"eval.marks",
                 {[](const ExperimentConfig& c) { return fmt_marks(c.eval_marks); },
                  [](ExperimentConfig& c, const std::string& v) { c.eval_marks = parse_marks(v); }}});
    add_bool("ablate.bounded_pe", &ExperimentConfig::ablate_bounded_pe);
    add_bool("ablate.cdmd", &ExperimentConfig::ablate_cdmd);
    add_bool("ablate.erft", &ExperimentConfig::ablate_erft);
    return r;
}

const std::vector<std::pair<std::string, Field>>& registry() {
    static const auto r = field_registry();
    return r;
}

const Field& find_field(const std::string& key) {
    for (const auto& [k, f] : registry())
        if (k == key) return f;
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        " has no '='");
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        find_field(key).set(cfg, val);
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    for (const auto& [k, f] : registry()) os << k << " = " << f.get(cfg) << "\n";
    return os.str();
}

void apply_override(ExperimentConfig& cfg, const std::string& key_value) {
    size_t eq = key_value.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("override must look like key=value: " + key_value);
    find_field(trim(key_value.substr(0, eq))).set(cfg, trim(key_value.substr(eq + 1)));
}

void validate(const ExperimentConfig& cfg) {
    auto bad = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (cfg.version != 1) bad("unsupported version");
    if (cfg.scene_identity_dim < 1 || cfg.scene_frame_dim < 1 || cfg.scene_chunk_size < 1)
        bad("scene dimensions must be positive");
    if (!(cfg.scene_transition > 0.0) || cfg.scene_transition > 1.0)
        bad("scene.transition must be in (0,1]");
    if (!(cfg.scene_noise_scale > 0.0)) bad("scene.noise_scale must be > 0");
    if (cfg.schedule_steps < 1) bad("schedule.steps must be >= 1");
    if (cfg.schedule_kind != "vp") bad("schedule.kind must be 'vp'");
    if (cfg.cache_n_sink < 0 || cfg.cache_n_slow < 0 || cfg.cache_n_fast < 0)
        bad("cache capacities must be >= 0");
    if (cfg.cache_n_sink + cfg.cache_n_slow + cfg.cache_n_fast < 1) bad("cache must have a slot");
    if (cfg.cache_tau < -1.0 || cfg.cache_tau > 1.0) bad("cache.tau must be in [-1,1]");
    if (cfg.cache_interval < 1) bad("cache.interval must be >= 1");
    if (cfg.cache_keep != "first" && cfg.cache_keep != "all") bad("cache.keep must be first|all");
    if (cfg.cache_strategy != "surprisal" && cfg.cache_strategy != "uniform1" &&
        cfg.cache_strategy != "uniform2")
        bad("cache.strategy must be surprisal|uniform1|uniform2");
    if (cfg.curriculum_l0 < 1 || cfg.curriculum_l1 < cfg.curriculum_l0)
        bad("curriculum needs 1 <= l0 <= l1");
    if (cfg.curriculum_decay < 1) bad("curriculum.decay must be >= 1");
    if (cfg.rollout_teacher_len < 1) bad("rollout.teacher_len must be >= 1");
    if (cfg.rollout_inject_prob < 0.0 || cfg.rollout_inject_prob > 1.0)
        bad("rollout.inject_prob must be in [0,1]");
    if (cfg.erft_bernoulli_p < 0.0 || cfg.erft_bernoulli_p > 1.0)
        bad("erft.bernoulli_p must be in [0,1]");
    if (cfg.erft_scale < 0.0) bad("erft.scale must be >= 0");
    if (cfg.erft_bank_capacity < 1) bad("erft.bank_capacity must be >= 1");
    if (cfg.stage2_teacher != "analytic" && cfg.stage2_teacher != "trained")
        bad("stage2.teacher must be analytic|trained");
    if (cfg.stage2_teacher_scope != "full" && cfg.stage2_teacher_scope != "fast_only" &&
        cfg.stage2_teacher_scope != "none")
        bad("stage2.teacher_scope must be full|fast_only|none");
    for (int m : cfg.eval_marks)
        if (m < 0 || m >= cfg.eval_n_chunks) bad("eval.marks must lie inside eval.n_chunks");
    if (cfg.eval_seeds < 1) bad("eval.seeds must be >= 1");
}

Domain build_domain(const ExperimentConfig& cfg) {
    validate(cfg);
    Rng drng(cfg.domain_seed);
    Domain d;
    d.proc = make_scene(cfg.scene_identity_dim, cfg.scene_frame_dim, cfg.scene_chunk_size,
                        cfg.scene_mixing_scale, cfg.scene_transition, cfg.scene_noise_scale,
                        drng.sub("scene"));
    d.cm = make_condition_model(d.proc, cfg.cond_dim, cfg.cond_noise, drng.sub("cond"));
    d.sched = make_schedule(cfg.schedule_steps);
    d.cache.n_sink = cfg.cache_n_sink;
    d.cache.n_slow = cfg.cache_n_slow;
    d.cache.n_fast = cfg.cache_n_fast;
    d.cache.tau = cfg.cache_tau;
    d.cache.consolidation_interval = cfg.cache_interval;
    d.cache.keep_policy = cfg.cache_keep == "first" ? KeepPolicy::FirstFrame : KeepPolicy::AllFrames;
    d.cache.strategy = cfg.cache_strategy == "surprisal"  ? SamplingStrategy::Surprisal
                       : cfg.cache_strategy == "uniform1" ? SamplingStrategy::UniformInterval1
                                                          : SamplingStrategy::UniformInterval2;
    int D = d.proc.chunk_dim();
    d.gen_net = NetConfig{D, cfg.cond_dim, cfg.net_key_dim, cfg.net_val_dim, cfg.net_hidden,
                          NetArch::Mlp2};
    d.score_net = NetConfig{D, cfg.cond_dim, cfg.net_key_dim, cfg.net_val_dim, cfg.net_hidden,
                            NetArch::Mlp2};
    d.score_net.hidden = cfg.net_teacher_hidden;
    d.window_net = NetConfig{D * cfg.curriculum_l0, cfg.cond_dim, 0, 0, cfg.net_window_hidden,
                             NetArch::Mlp2};
    return d;
}

Stage1Config stage1_config(const ExperimentConfig& cfg, const Domain& d) {
    Stage1Config s;
    s.proc = d.proc;
    s.cm = d.cm;
    s.sched = d.sched;
    s.cache = d.cache;
    s.gen_cfg = d.gen_net;
    s.fake_cfg = d.window_net;
    s.window_chunks = cfg.curriculum_l0;
    s.steps = cfg.stage1_steps;
    s.batch = cfg.stage1_batch;
    s.gen_lr = cfg.stage1_gen_lr;
    s.fake_lr = cfg.stage1_fake_lr;
    s.fake_steps = cfg.stage1_fake_steps;
    s.gen_warmup = cfg.stage1_gen_warmup;
    s.seed = cfg.seed;
    s.domain_seed = cfg.domain_seed;
    return s;
}

Stage2Config stage2_config(const ExperimentConfig& cfg, const Domain& d) {
    Stage2Config s;
    s.proc = d.proc;
    s.cm = d.cm;
    s.sched = d.sched;
    s.cache = d.cache;
    s.curriculum = CurriculumSchedule{cfg.curriculum_l0, cfg.curriculum_l1,
                                      cfg.curriculum_decay, 0};
    s.fake_cfg = d.score_net;
    s.teacher_kind = cfg.stage2_teacher == "analytic" ? TeacherKind::Analytic : TeacherKind::Trained;
    s.teacher_scope = cfg.stage2_teacher_scope == "full"      ? TeacherScope::Full
                      : cfg.stage2_teacher_scope == "fast_only" ? TeacherScope::FastOnly
                                                                : TeacherScope::None;
    s.steps = cfg.stage2_steps;
    s.rollouts_per_iter = cfg.stage2_rollouts;
    s.teacher_len = cfg.rollout_teacher_len;
    s.gen_lr = cfg.stage2_gen_lr;
    s.fake_lr = cfg.stage2_fake_lr;
    s.fake_steps = cfg.stage2_fake_steps;
    s.gen_warmup = cfg.stage2_gen_warmup;
    s.inject_prob = cfg.rollout_inject_prob;
    s.inject_scale = cfg.rollout_inject_scale;
    s.seed = cfg.seed;
    return s;
}

TeacherPretrainConfig teacher_config(const ExperimentConfig& cfg, const Domain& d) {
    TeacherPretrainConfig t;
    t.proc = d.proc;
    t.cm = d.cm;
    t.sched = d.sched;
    t.cache = d.cache;
    t.net_cfg = d.score_net;
    t.steps = cfg.teacher_steps;
    t.batch = cfg.teacher_batch;
    t.lr = cfg.teacher_lr;
    t.seed = cfg.seed;
    t.domain_seed = cfg.domain_seed;
    return t;
}

ErftConfig erft_config(const ExperimentConfig& cfg) {
    ErftConfig e;
    e.perturb.bernoulli_p = cfg.erft_bernoulli_p;
    e.perturb.scale = cfg.erft_scale;
    e.bank_capacity = cfg.erft_bank_capacity;
    e.steps = cfg.erft_steps;
    e.batch = cfg.erft_batch;
    e.lr = cfg.erft_lr;
    e.seed = cfg.seed;
    return e;
}

}  // namespace longctx

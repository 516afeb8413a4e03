#include "mlcil/runner.hpp"

#include <cmath>
#include <filesystem>
#include <json.hpp>
#include <set>

#include "mlcil/errors.hpp"
#include "mlcil/labels.hpp"
#include "mlcil/rng.hpp"

namespace mlcil {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

constexpr const char* kTrainFeatures = "train_features.clf";
constexpr const char* kTrainLabels = "train_labels.txt";
constexpr const char* kTestFeatures = "test_features.clf";
constexpr const char* kTestLabels = "test_labels.txt";
constexpr const char* kGenManifest = "gen_manifest.json";

void ensure_dir(const std::string& dir) {
    require_data(!dir.empty(), "output directory not given");
    std::error_code ec;
    fs::create_directories(dir, ec);
    require_data(!ec, "cannot create directory '" + dir + "': " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void check_known_keys(const ordered_json& j, const std::string& section,
                      const std::set<std::string>& allowed) {
    for (const auto& [k, v] : j.items())
        require_data(allowed.count(k) > 0, "config: unknown key '" + section + k + "'");
}

template <typename T>
void pick(const ordered_json& j, const char* key, T& into) {
    if (!j.contains(key)) return;
    try {
        into = j.at(key).get<T>();
    } catch (const std::exception&) {
        throw DataError(std::string("config: bad value for '") + key + "'");
    }
}

ordered_json config_to_json(const RunnerConfig& c) {
    ordered_json j;
    j["gen"] = {{"classes", c.gen.classes},
                {"train_per_class", c.gen.train_per_class},
                {"test_per_class", c.gen.test_per_class},
                {"patches", c.gen.patches},
                {"feature_dim", c.gen.feature_dim},
                {"signal_patches", c.gen.signal_patches},
                {"noise_std", c.gen.noise_std},
                {"co_rate", c.gen.co_rate},
                {"seed", c.gen.seed}};
    j["model"] = {{"kind", c.model_kind},
                  {"model_dim", c.model.model_dim},
                  {"heads", c.model.heads},
                  {"proj_dim", c.model.proj_dim},
                  {"token_init", c.model.token_init}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"batch", c.train.batch},
                  {"lr_base", c.train.lr_base},
                  {"lr_inc", c.train.lr_inc},
                  {"weight_decay", c.train.weight_decay},
                  {"alpha", c.train.alpha},
                  {"beta", c.train.beta},
                  {"gamma_pos", c.train.gamma_pos},
                  {"gamma_neg", c.train.gamma_neg},
                  {"mper", c.train.mper},
                  {"pseudo_pos", c.train.pseudo_pos},
                  {"pseudo_neg", c.train.pseudo_neg},
                  {"seed", c.train.seed},
                  {"warmup_frac", c.train.warmup_frac},
                  {"mc_on_replay", c.train.mc_on_replay},
                  {"mc_on_pseudo", c.train.mc_on_pseudo},
                  {"keep_unlabeled", c.train.keep_unlabeled},
                  {"single_assignment", c.train.single_assignment}};
    j["protocol"] = c.protocol;
    return j;
}

ordered_json metrics_to_json(const MetricsSummary& m) {
    ordered_json j;
    j["map"] = m.map;
    j["cf1"] = m.cf1;
    j["of1"] = m.of1;
    j["eval_samples"] = m.samples;
    j["eval_classes"] = m.classes;
    j["skipped_classes"] = m.skipped_classes;
    j["per_class_ap"] = m.per_class_ap;
    return j;
}

ordered_json report_to_json(const SessionReport& r) {
    ordered_json j;
    j["session"] = r.session;
    j["classes_seen"] = r.classes_seen;
    j["train_samples"] = r.train_samples;
    j["replay_samples"] = r.replay_samples;
    j["pseudo_filled"] = r.pseudo_filled;
    j["buffer_total"] = r.buffer_total;
    j["steps"] = r.steps;
    j["mean_ce"] = r.mean_ce;
    j["mean_mc"] = r.mean_mc;
    j["mean_kd"] = r.mean_kd;
    j["mean_total"] = r.mean_total;
    const ordered_json m = metrics_to_json(r.metrics);
    for (const auto& [k, v] : m.items()) j[k] = v;
    return j;
}

SessionSpec spec_for(const RunnerConfig& cfg) {
    const auto name = parse_protocol(cfg.protocol);
    return split_protocol(cfg.gen.classes, name.base, name.increment);
}

GeneratedData load_data_dir(const std::string& dir, std::size_t* classes_out) {
    const std::string manifest_path = join(dir, kGenManifest);
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(read_file(manifest_path));
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError("cannot parse '" + manifest_path + "': " + e.what());
    }
    require_data(manifest.contains("classes"), "'" + manifest_path + "' lacks a class count");
    GeneratedData data;
    data.classes = manifest.at("classes").get<std::size_t>();
    data.train.features = read_features(join(dir, kTrainFeatures));
    data.train.labels = read_annotations(join(dir, kTrainLabels));
    data.test.features = read_features(join(dir, kTestFeatures));
    data.test.labels = read_annotations(join(dir, kTestLabels));
    require_data(data.train.features.dim(0) == data.train.labels.size(),
                 "train features and annotations disagree on the sample count");
    require_data(data.test.features.dim(0) == data.test.labels.size(),
                 "test features and annotations disagree on the sample count");
    if (classes_out) *classes_out = data.classes;
    return data;
}

// sessions rebuilt from a checkpoint's per-session class counts
SessionSpec spec_from_blocks(const std::vector<std::size_t>& blocks) {
    require_data(!blocks.empty(), "checkpoint lists no sessions");
    SessionSpec spec;
    spec.base = blocks[0];
    spec.increment = blocks.size() > 1 ? blocks[1] : blocks[0];
    std::size_t begin = 0;
    for (auto n : blocks) {
        spec.ranges.emplace_back(begin, begin + n);
        begin += n;
    }
    spec.total_classes = begin;
    return spec;
}

struct TrainCore {
    std::vector<SessionReport> reports;
    RunSummary summary;
};

TrainCore train_core(const RunnerConfig& cfg, const GeneratedData& data,
                     const std::string& out_dir, bool write_checkpoints) {
    const SessionSpec spec = spec_for(cfg);
    require_data(spec.total_classes == data.classes,
                 "protocol covers " + std::to_string(spec.total_classes) +
                     " classes but the stream has " + std::to_string(data.classes));
    CinetConfig mc = cfg.model;
    mc.feature_dim = data.train.features.dim(2);

    auto model = make_model(cfg.model_kind, mc, {}, mix_seed(cfg.train.seed, fnv1a("init")));
    Trainer trainer(std::move(model), cfg.train);

    std::function<void(std::size_t, const IncrementalModel&)> hook;
    if (write_checkpoints && !out_dir.empty())
        hook = [&](std::size_t t, const IncrementalModel& m) {
            save_checkpoint(join(out_dir, "session_" + std::to_string(t) + ".clc"), m, t);
        };

    TrainCore out;
    out.reports = trainer.run(data.train, data.test, spec, hook);
    out.summary = summarize_run(out.reports);
    return out;
}

void write_reports(const std::string& out_dir, const RunnerConfig& cfg, const TrainCore& core,
                   TrainOutcome& outcome) {
    std::string lines;
    for (const auto& r : core.reports) lines += report_to_json(r).dump() + "\n";
    outcome.report_path = join(out_dir, "reports.jsonl");
    atomic_write_file(outcome.report_path, lines);

    ordered_json summary;
    summary["protocol"] = cfg.protocol;
    summary["sessions"] = core.reports.size();
    summary["session_map"] = core.summary.session_map;
    summary["average_map"] = core.summary.average_map;
    summary["final_map"] = core.summary.final_map;
    summary["config"] = config_to_json(cfg);
    outcome.summary_path = join(out_dir, "summary.json");
    atomic_write_file(outcome.summary_path, summary.dump(2) + "\n");
}

}  // namespace

RunnerConfig load_config(const std::string& path) {
    RunnerConfig cfg;
    if (path.empty()) return cfg;
    ordered_json j;
    try {
        j = ordered_json::parse(read_file(path));
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError("cannot parse config '" + path + "': " + e.what());
    }
    check_known_keys(j, "", {"gen", "model", "train", "protocol"});
    if (j.contains("gen")) {
        const auto& g = j.at("gen");
        check_known_keys(g, "gen.",
                         {"classes", "train_per_class", "test_per_class", "patches",
                          "feature_dim", "signal_patches", "noise_std", "co_rate", "seed"});
        pick(g, "classes", cfg.gen.classes);
        pick(g, "train_per_class", cfg.gen.train_per_class);
        pick(g, "test_per_class", cfg.gen.test_per_class);
        pick(g, "patches", cfg.gen.patches);
        pick(g, "feature_dim", cfg.gen.feature_dim);
        pick(g, "signal_patches", cfg.gen.signal_patches);
        pick(g, "noise_std", cfg.gen.noise_std);
        pick(g, "co_rate", cfg.gen.co_rate);
        pick(g, "seed", cfg.gen.seed);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        check_known_keys(m, "model.", {"kind", "model_dim", "heads", "proj_dim", "token_init"});
        pick(m, "kind", cfg.model_kind);
        pick(m, "model_dim", cfg.model.model_dim);
        pick(m, "heads", cfg.model.heads);
        pick(m, "proj_dim", cfg.model.proj_dim);
        pick(m, "token_init", cfg.model.token_init);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_known_keys(t, "train.",
                         {"epochs", "batch", "lr_base", "lr_inc", "weight_decay", "alpha",
                          "beta", "gamma_pos", "gamma_neg", "mper", "pseudo_pos", "pseudo_neg",
                          "seed", "warmup_frac", "mc_on_replay", "mc_on_pseudo",
                          "keep_unlabeled", "single_assignment"});
        pick(t, "epochs", cfg.train.epochs);
        pick(t, "batch", cfg.train.batch);
        pick(t, "lr_base", cfg.train.lr_base);
        pick(t, "lr_inc", cfg.train.lr_inc);
        pick(t, "weight_decay", cfg.train.weight_decay);
        pick(t, "alpha", cfg.train.alpha);
        pick(t, "beta", cfg.train.beta);
        pick(t, "gamma_pos", cfg.train.gamma_pos);
        pick(t, "gamma_neg", cfg.train.gamma_neg);
        pick(t, "mper", cfg.train.mper);
        pick(t, "pseudo_pos", cfg.train.pseudo_pos);
        pick(t, "pseudo_neg", cfg.train.pseudo_neg);
        pick(t, "seed", cfg.train.seed);
        pick(t, "warmup_frac", cfg.train.warmup_frac);
        pick(t, "mc_on_replay", cfg.train.mc_on_replay);
        pick(t, "mc_on_pseudo", cfg.train.mc_on_pseudo);
        pick(t, "keep_unlabeled", cfg.train.keep_unlabeled);
        pick(t, "single_assignment", cfg.train.single_assignment);
    }
    pick(j, "protocol", cfg.protocol);
    return cfg;
}

void apply_overrides(RunnerConfig& cfg, const CliOverrides& o) {
    if (o.seed) {
        cfg.train.seed = *o.seed;
        cfg.gen.seed = *o.seed;
    }
    if (o.mper) cfg.train.mper = *o.mper;
    if (o.alpha) cfg.train.alpha = *o.alpha;
    if (o.beta) cfg.train.beta = *o.beta;
    if (o.protocol) cfg.protocol = *o.protocol;
}

std::string config_json(const RunnerConfig& cfg) { return config_to_json(cfg).dump(2) + "\n"; }

GenOutcome cmd_gen(const RunnerConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const GeneratedData data = generate_stream(cfg.gen);
    write_features(join(out_dir, kTrainFeatures), data.train.features);
    write_annotations(join(out_dir, kTrainLabels), data.train.labels);
    write_features(join(out_dir, kTestFeatures), data.test.features);
    write_annotations(join(out_dir, kTestLabels), data.test.labels);

    double cardinality = 0.0;
    for (const auto& l : data.train.labels) cardinality += static_cast<double>(l.size());
    cardinality /= static_cast<double>(data.train.labels.size());

    ordered_json manifest;
    manifest["classes"] = data.classes;
    manifest["train_samples"] = data.train.labels.size();
    manifest["test_samples"] = data.test.labels.size();
    manifest["mean_train_cardinality"] = cardinality;
    manifest["config"] = config_to_json(cfg)["gen"];
    ordered_json hashes = ordered_json::object();
    for (const char* f : {kTrainFeatures, kTrainLabels, kTestFeatures, kTestLabels})
        hashes[f] = hash_hex(file_hash(join(out_dir, f)));
    manifest["hashes"] = hashes;

    GenOutcome out;
    out.manifest_path = join(out_dir, kGenManifest);
    out.train_samples = data.train.labels.size();
    out.test_samples = data.test.labels.size();
    atomic_write_file(out.manifest_path, manifest.dump(2) + "\n");
    return out;
}

std::string cmd_split(const RunnerConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const SessionSpec spec = spec_for(cfg);
    const std::string path = join(out_dir, "sessions.txt");
    atomic_write_file(path, format_session_manifest(spec));
    return path;
}

TrainOutcome cmd_train(const RunnerConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir) {
    ensure_dir(out_dir);
    GeneratedData data;
    ordered_json provenance;
    if (data_dir.empty()) {
        data = generate_stream(cfg.gen);
        provenance["source"] = "generated";
        provenance["gen_seed"] = cfg.gen.seed;
    } else {
        data = load_data_dir(data_dir, nullptr);
        provenance["source"] = data_dir;
        ordered_json hashes = ordered_json::object();
        for (const char* f : {kTrainFeatures, kTrainLabels, kTestFeatures, kTestLabels})
            hashes[f] = hash_hex(file_hash(join(data_dir, f)));
        provenance["hashes"] = hashes;
    }

    const TrainCore core = train_core(cfg, data, out_dir, true);
    TrainOutcome outcome;
    outcome.reports = core.reports;
    outcome.summary = core.summary;
    write_reports(out_dir, cfg, core, outcome);

    ordered_json manifest;
    manifest["command"] = "train";
    manifest["config"] = config_to_json(cfg);
    manifest["data"] = provenance;
    ordered_json outputs = ordered_json::array();
    outputs.push_back("reports.jsonl");
    outputs.push_back("summary.json");
    for (const auto& r : core.reports)
        outputs.push_back("session_" + std::to_string(r.session) + ".clc");
    manifest["outputs"] = outputs;
    atomic_write_file(join(out_dir, "run_manifest.json"), manifest.dump(2) + "\n");
    return outcome;
}

EvalOutcome cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
                     const std::string& out_dir) {
    ensure_dir(out_dir);
    auto loaded = load_checkpoint(checkpoint_path);
    require_data(loaded.session >= 1, "checkpoint has not completed any session");
    const SessionSpec spec = spec_from_blocks(loaded.model->session_classes());

    std::size_t classes = 0;
    GeneratedData data = load_data_dir(data_dir, &classes);
    require_data(spec.total_classes <= classes,
                 "checkpoint covers " + std::to_string(spec.total_classes) +
                     " classes but the stream has only " + std::to_string(classes));

    TrainConfig tc;  // defaults; only batch size matters for prediction
    Trainer trainer(std::move(loaded.model), tc);
    EvalOutcome out;
    out.session = loaded.session;
    out.metrics = trainer.evaluate(data.test, spec, loaded.session - 1);

    ordered_json j;
    j["checkpoint"] = fs::path(checkpoint_path).filename().string();
    j["session"] = out.session;
    const ordered_json m = metrics_to_json(out.metrics);
    for (const auto& [k, v] : m.items()) j[k] = v;
    out.report_path = join(out_dir, "eval_report.json");
    atomic_write_file(out.report_path, j.dump(2) + "\n");
    return out;
}

GradCheckOutcome run_gradcheck(std::size_t feature_dim, std::size_t patches,
                               std::size_t classes, std::size_t heads, std::size_t batch,
                               std::uint64_t seed) {
    require(classes >= 2, "gradcheck: need at least two classes");
    CinetConfig cfg;
    cfg.feature_dim = feature_dim;
    cfg.model_dim = feature_dim;
    cfg.heads = heads;
    // unit-scale tokens condition the check: the training default (0.02)
    // puts a 1/sigma^3 layer-norm curvature under the token rows and central
    // differences at step 1e-5 then read ~1e-6 of pure truncation noise
    cfg.token_init = 0.5;

    // two session blocks so the distillation slice is a real sub-range
    const std::vector<std::size_t> blocks{classes - classes / 2, classes / 2};
    auto model = make_model("cinet", cfg, blocks, seed);

    // the distillation target starts from the same weights and gets a small
    // deterministic nudge: the term then has signal along every adjoint path
    // while its value stays small, which keeps the finite-difference
    // evaluations from drowning tiny gradients in reduction roundoff
    auto old_model = make_model("cinet", cfg, {blocks[0]}, seed);
    Rng jitter(mix_seed(seed, fnv1a("old.jitter")));
    for (auto& [name, entry] : old_model->params().entries()) {
        (void)name;
        for (auto& v : entry.tensor.node()->value) v += 0.05 * jitter.normal();
    }
    auto old_frozen = old_model->clone_frozen();

    Rng rng(mix_seed(seed, fnv1a("gradcheck.batch")));
    auto features = Tensor::randn({batch, patches, feature_dim}, rng);

    // fixed supervision pattern: positives, negatives and ignores, with
    // repeated classes so the contrastive set has same- and cross-class pairs
    LabelMatrix targets(batch, classes);
    std::vector<McAnchor> anchors;
    for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t c = 0; c < classes; ++c) {
            switch ((i + c) % 3) {
                case 0:
                    targets.set(i, c, kPositive);
                    anchors.push_back({i, c});
                    break;
                case 1:
                    targets.set(i, c, kNegative);
                    break;
                default:
                    targets.set(i, c, kIgnore);
                    break;
            }
        }

    const auto old_emb = old_frozen->forward(features).embeddings;
    const double alpha = 0.5, beta = 1.0;
    auto loss_fn = [&] {
        auto out = model->forward(features);
        auto ce = asl_loss(out.probs, targets, 0.0, 4.0);
        auto mc = mc_loss(out.projected, anchors);
        auto kd = kd_loss(slice_axis1(out.embeddings, 0, blocks[0]), old_emb);
        return total_loss_graph(ce, mc, kd, alpha, beta);
    };

    auto report = finite_diff_check(loss_fn, model->params(), 1e-5);
    GradCheckOutcome out;
    out.max_rel_err = report.max_rel_err;
    out.worst_param = report.worst_param;
    out.checked = report.checked;
    return out;
}

std::vector<AblateRow> cmd_ablate(const RunnerConfig& cfg,
                                  const std::vector<std::string>& variants,
                                  std::size_t seed_count, const std::string& out_dir) {
    require(seed_count > 0, "ablate: need at least one seed");
    ensure_dir(out_dir);
    const GeneratedData data = generate_stream(cfg.gen);

    std::vector<AblateRow> rows;
    for (const auto& variant : variants) {
        RunnerConfig vc = cfg;
        if (variant == "baseline") {
            vc.model_kind = "baseline";
            vc.train.alpha = 0.0;
        } else if (variant == "cinet") {
            vc.model_kind = "cinet";
            vc.train.alpha = 0.0;
        } else if (variant == "cinet_mc") {
            vc.model_kind = "cinet";
        } else {
            throw DataError("ablate: unknown variant '" + variant + "'");
        }

        AblateRow row;
        row.variant = variant;
        for (std::size_t k = 0; k < seed_count; ++k) {
            vc.train.seed = cfg.train.seed + k;
            const std::string run_dir =
                join(out_dir, variant + "_seed" + std::to_string(vc.train.seed));
            ensure_dir(run_dir);
            const TrainCore core = train_core(vc, data, run_dir, false);
            TrainOutcome tmp;
            write_reports(run_dir, vc, core, tmp);
            row.final_map.push_back(core.summary.final_map);
            row.average_map.push_back(core.summary.average_map);
        }
        row.mean_final = mean_of(row.final_map);
        row.mean_average = mean_of(row.average_map);
        rows.push_back(std::move(row));
    }

    ordered_json j = ordered_json::array();
    for (const auto& r : rows) {
        ordered_json e;
        e["variant"] = r.variant;
        e["final_map"] = r.final_map;
        e["average_map"] = r.average_map;
        e["mean_final"] = r.mean_final;
        e["mean_average"] = r.mean_average;
        j.push_back(e);
    }
    atomic_write_file(join(out_dir, "ablate.json"), j.dump(2) + "\n");
    return rows;
}

std::vector<SweepRow> cmd_sweep_buffer(const RunnerConfig& cfg,
                                       const std::vector<std::size_t>& mpers,
                                       const std::string& out_dir) {
    require(!mpers.empty(), "sweep-buffer: no capacities given");
    ensure_dir(out_dir);
    const GeneratedData data = generate_stream(cfg.gen);

    std::vector<SweepRow> rows;
    for (auto mper : mpers) {
        RunnerConfig vc = cfg;
        vc.train.mper = mper;
        const std::string run_dir = join(out_dir, "mper" + std::to_string(mper));
        ensure_dir(run_dir);
        const TrainCore core = train_core(vc, data, run_dir, false);
        TrainOutcome tmp;
        write_reports(run_dir, vc, core, tmp);
        rows.push_back({mper, core.summary.final_map, core.summary.average_map});
    }

    ordered_json j = ordered_json::array();
    for (const auto& r : rows) {
        ordered_json e;
        e["mper"] = r.mper;
        e["final_map"] = r.final_map;
        e["average_map"] = r.average_map;
        j.push_back(e);
    }
    atomic_write_file(join(out_dir, "sweep.json"), j.dump(2) + "\n");
    return rows;
}

}  // namespace mlcil

// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.
//
// moelab — plan, count, verify, train, evaluate, gradient-check and ablate
// mixture-of-experts configurations from one binary.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 invariant violation.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "moelab/checkpoint.hpp"
#include "moelab/report.hpp"

namespace fs = std::filesystem;
using namespace moelab;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = "out";
    std::string corpus_path;
    i64 steps = -1;
    i64 seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool wants_corpus) {
    cmd->add_option("--config", args.config_path, "JSON configuration file");
    cmd->add_option("--set", args.overrides, "dotted-path override key=value (repeatable)");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "top-level seed (overrides config)");
    cmd->add_option("--steps", args.steps, "training steps (overrides config)");
    if (wants_corpus) cmd->add_option("--corpus", args.corpus_path, "corpus file (raw bytes)");
}

/// Defaults for every section; a config file and --set overrides layer on top.
json default_config() {
    ModelConfig model;
    model.d = 48;
    model.n_layers = 2;
    model.n_heads_attn = 4;
    model.context_len = 64;
    model.dense_d_ff = 128;
    MoEConfig moe;
    moe.d = 48;
    moe.h = 2;
    moe.d_expert = 48;
    moe.n_experts = 8;
    moe.top_k = 2;
    model.moe = moe;

    const MoEConfig smoe = MoEConfig::smoe(48, 128, 8, 1, Activation::swiglu3mat);
    TrainHyper hyper;
    hyper.total_steps = 300;

    json doc;
    doc["model"] = model;
    doc["train"] = hyper;
    doc["suite"] = {{"smoe", smoe},
                    {"with_shared_expert", false},
                    {"include_dense", true},
                    {"eval_every", 0},
                    {"target_drop", 0.0},
                    {"param_tolerance", 0.05}};
    doc["layer"] = smoe;
    doc["plan"] = {{"h", 2}, {"k", 2}, {"rounding", "nearest"}};
    doc["flops"] = {{"batch_tokens", 2}};
    return doc;
}

json resolve_config(const CommonArgs& args) {
    json doc = default_config();
    if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        if (!in) throw ConfigError("cannot open config file: " + args.config_path);
        json file_doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
        doc.merge_patch(file_doc);
    }
    for (const std::string& assignment : args.overrides) apply_override(doc, assignment);
    if (args.seed >= 0) {
        doc["model"]["seed"] = args.seed;
    }
    if (args.steps >= 0) doc["train"]["total_steps"] = args.steps;
    return doc;
}

/// Every command echoes the fully-resolved configuration it ran with, so any
/// run can be reproduced from its own output.
void echo_config(const json& doc, const std::string& out_dir) {
    std::cout << "resolved config:\n" << doc.dump(2) << "\n";
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream out(out_dir + "/config.json");
        out << doc.dump(2) << "\n";
    }
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << text;
}

Corpus corpus_from(const CommonArgs& args) {
    if (args.corpus_path.empty()) throw ConfigError("--corpus is required for this command");
    const Corpus corpus = load_corpus(args.corpus_path);
    if (corpus.size() < 2) throw ConfigError("corpus is empty: " + args.corpus_path);
    return corpus;
}

int cmd_plan(const CommonArgs& args) {
    const json doc = resolve_config(args);
    echo_config(doc, args.out_dir);
    const MoEConfig baseline = doc.at("layer").get<MoEConfig>();
    const i64 h = doc.at("plan").at("h").get<i64>();
    const i64 k = doc.at("plan").at("k").get<i64>();
    const Rounding rounding = doc.at("plan").at("rounding").get<std::string>() == "floor"
                                  ? Rounding::floor
                                  : Rounding::nearest;

    const ParityPlan plan = solve_parity(baseline, h, k, rounding);
    const ParityVerification verification =
        verify_parity(plan, {1, 2, 8}, {baseline.d, 2 * baseline.d, 4 * baseline.d});

    json report;
    report["plan"] = plan;
    report["verification"] = verification;
    std::cout << report.dump(2) << "\n\n" << plan_markdown(plan) << "\n"
              << verification_markdown(verification);
    write_file(args.out_dir + "/report.json", report.dump(2) + "\n");
    write_file(args.out_dir + "/table.md",
               plan_markdown(plan) + "\n" + verification_markdown(verification));
    return 0;
}

int cmd_flops(const CommonArgs& args, bool inject_fault) {
    const json doc = resolve_config(args);
    echo_config(doc, args.out_dir);
    const MoEConfig cfg = doc.at("layer").get<MoEConfig>();
    const i64 batch_tokens = doc.at("flops").at("batch_tokens").get<i64>();

    const CostReport analytic = count_layer_ops(cfg, batch_tokens);

    Rng rng(derive_seed(doc.at("model").value("seed", u64{1}), "flops-check"));
    const MHMoEParams params = init_params(cfg, rng);
    Tensor x = Tensor::zeros({batch_tokens, cfg.d});
    for (double& v : x.values()) v = rng.normal();
    OpCounter counter;
    mhmoe_forward(x, params, cfg, &counter);

    i64 measured = static_cast<i64>(counter.flops());
    if (cfg.shared_expert_dim)
        measured -= count_ffn_ops(batch_tokens, cfg.d, *cfg.shared_expert_dim, cfg.activation);
    if (inject_fault) measured += 1;

    json report;
    report["analytic"] = analytic;
    report["measured_total_ops"] = measured;
    report["batch_tokens"] = batch_tokens;
    report["match"] = measured == analytic.total_ops;
    std::cout << report.dump(2) << "\n";
    std::cout << "analytic/measured: " << analytic.total_ops << "/" << measured << "\n";
    write_file(args.out_dir + "/report.json", report.dump(2) + "\n");

    if (measured != analytic.total_ops) {
        std::cerr << "count mismatch: analytic " << analytic.total_ops << " != measured "
                  << measured << "\n";
        return 2;
    }
    return 0;
}

int cmd_train(const CommonArgs& args) {
    const json doc = resolve_config(args);
    echo_config(doc, args.out_dir);
    const ModelConfig cfg = doc.at("model").get<ModelConfig>();
    const TrainHyper hyper = doc.at("train").get<TrainHyper>();
    const Corpus corpus = corpus_from(args);
    const auto [train_bytes, val_bytes] = split_corpus(corpus);

    TrainState state = init_train_state(cfg);
    const EvalResult before = evaluate_perplexity(state.model, val_bytes);

    std::ofstream metrics_out(args.out_dir + "/metrics.jsonl");
    std::vector<MetricsRow> metrics;
    const i64 chunk = 50;
    while (state.step < hyper.total_steps) {
        metrics.clear();
        train(state, train_bytes, std::min<i64>(chunk, hyper.total_steps - state.step), hyper,
              &metrics);
        for (const MetricsRow& row : metrics) {
            const json line = {{"step", row.step},
                               {"loss", row.loss},
                               {"ppl", row.ppl},
                               {"balance_loss", row.balance_loss},
                               {"ops_per_token", row.ops_per_token}};
            metrics_out << line.dump() << "\n";
            if (row.step % 50 == 0 || row.step == 1)
                std::cout << "step " << row.step << "  loss " << format_double(row.loss) << "  ppl "
                          << format_double(row.ppl, 2) << "\n";
        }
    }
    metrics_out.close();

    const EvalResult after = evaluate_perplexity(state.model, val_bytes);
    save_checkpoint(args.out_dir + "/final.ckpt", state, hyper);

    json report{{"initial_val_loss", before.mean_nll},   {"initial_ppl", before.perplexity},
                {"final_val_loss", after.mean_nll},      {"final_ppl", after.perplexity},
                {"loss_drop_frac", 1.0 - after.mean_nll / before.mean_nll},
                {"steps", state.step},                   {"params", state.model.param_count()},
                {"checkpoint", args.out_dir + "/final.ckpt"}};
    std::cout << report.dump(2) << "\n";
    write_file(args.out_dir + "/report.json", report.dump(2) + "\n");
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_path) {
    const json doc = resolve_config(args);
    const Corpus corpus = corpus_from(args);
    Model model = [&] {
        if (!checkpoint_path.empty()) return load_checkpoint(checkpoint_path).state.model;
        echo_config(doc, args.out_dir);
        return build_model(doc.at("model").get<ModelConfig>());
    }();
    const EvalResult r = evaluate_perplexity(model, corpus);
    json report{{"mean_nll", r.mean_nll}, {"perplexity", r.perplexity}, {"positions", r.positions}};
    std::cout << report.dump(2) << "\n";
    fs::create_directories(args.out_dir);
    write_file(args.out_dir + "/report.json", report.dump(2) + "\n");
    return 0;
}

/// Layer-level finite-difference gradient audit of every suite variant.
int cmd_gradcheck(const CommonArgs& args) {
    const json doc = resolve_config(args);
    echo_config(doc, args.out_dir);
    const MoEConfig smoe = doc.at("suite").at("smoe").get<MoEConfig>();

    SuiteConfig suite;
    suite.base = doc.at("model").get<ModelConfig>();
    suite.base.moe.reset();
    suite.smoe_baseline = smoe;
    suite.with_shared_expert = doc.at("suite").value("with_shared_expert", false);
    suite.hyper = doc.at("train").get<TrainHyper>();

    double worst_overall = 0.0;
    json rows = json::array();
    for (const auto& [name, cfg] : suite_variants(suite)) {
        if (!cfg.moe) continue;
        // shrink to gradient-check scale while keeping the structure
        MoEConfig layer = *cfg.moe;
        layer.d = 6 % layer.h == 0 ? 6 : 6 * layer.h;
        layer.d_expert = 5;
        layer.n_experts = std::min<i64>(layer.n_experts, 4);
        layer.top_k = std::min(layer.top_k, layer.n_experts);
        if (layer.shared_expert_dim) layer.shared_expert_dim = 4;

        Rng rng(derive_seed(suite.base.seed, "gradcheck", static_cast<u64>(rows.size())));
        MHMoEParams params = init_params(layer, rng);
        Tensor x = Tensor::zeros({3, layer.d});
        for (double& v : x.values()) v = rng.normal();

        double worst = 0.0;
        std::vector<Tensor*> targets{&params.gate, &params.experts[0].w1, &params.experts[0].w2};
        if (params.w_head.defined()) targets.push_back(&params.w_head);
        if (params.w_merge.defined()) targets.push_back(&params.w_merge);
        for (Tensor* param : targets) {
            Tensor& slot = *param;
            const Tensor original = slot;
            const double err = finite_difference_check(
                [&](const Tensor& probe) {
                    slot = probe;
                    const Tensor y = mhmoe_forward(x, params, layer);
                    slot = original;
                    return mean_all(hadamard(y, y));
                },
                original);
            worst = std::max(worst, err);
        }
        worst_overall = std::max(worst_overall, worst);
        rows.push_back({{"variant", name}, {"max_relative_error", worst}});
        std::cout << name << ": max relative error " << worst << "\n";
    }
    json report{{"rows", rows}, {"max_relative_error", worst_overall}, {"threshold", 1e-4}};
    write_file(args.out_dir + "/report.json", report.dump(2) + "\n");
    if (worst_overall > 1e-4) {
        std::cerr << "gradient check failed: " << worst_overall << " > 1e-4\n";
        return 2;
    }
    std::cout << "gradient checks passed (threshold 1e-4)\n";
    return 0;
}

int cmd_suite(const CommonArgs& args) {
    const json doc = resolve_config(args);
    echo_config(doc, args.out_dir);
    SuiteConfig suite;
    suite.base = doc.at("model").get<ModelConfig>();
    suite.base.moe.reset();
    suite.smoe_baseline = doc.at("suite").at("smoe").get<MoEConfig>();
    suite.smoe_baseline.activation = suite.base.activation;
    suite.with_shared_expert = doc.at("suite").value("with_shared_expert", false);
    suite.include_dense = doc.at("suite").value("include_dense", true);
    suite.hyper = doc.at("train").get<TrainHyper>();
    suite.eval_every = doc.at("suite").value("eval_every", i64{0});
    suite.target_drop = doc.at("suite").value("target_drop", 0.0);
    suite.param_tolerance = doc.at("suite").value("param_tolerance", 0.05);

    const Corpus corpus = corpus_from(args);
    const SuiteResult result = run_variant_suite(suite, corpus);

    json report = result;
    std::cout << report.dump(2) << "\n\n" << suite_markdown(result);
    write_file(args.out_dir + "/report.json", report.dump(2) + "\n");
    write_file(args.out_dir + "/table.md", suite_markdown(result));
    return 0;
}

int cmd_ablate(const CommonArgs& args) {
    const json doc = resolve_config(args);
    echo_config(doc, args.out_dir);
    ModelConfig cfg = doc.at("model").get<ModelConfig>();
    if (!cfg.moe) throw ConfigError("ablate needs model.moe in the configuration");
    const TrainHyper hyper = doc.at("train").get<TrainHyper>();
    const Corpus corpus = corpus_from(args);

    const std::vector<AblationRow> rows = run_ablation_grid(cfg, corpus, hyper);
    json report{{"rows", rows}};
    std::cout << report.dump(2) << "\n\n" << ablation_markdown(rows);
    write_file(args.out_dir + "/report.json", report.dump(2) + "\n");
    write_file(args.out_dir + "/table.md", ablation_markdown(rows));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"moelab: a desk-scale mixture-of-experts laboratory"};
    app.require_subcommand(1);

    CommonArgs plan_args, flops_args, train_args, eval_args, grad_args, suite_args, ablate_args;
    bool inject_fault = false;
    std::string checkpoint_path;

    add_common(app.add_subcommand("plan", "solve an SMoE -> MH-MoE parity plan"), plan_args, false);
    CLI::App* flops = app.add_subcommand("flops", "analytic vs instrumented operation counts");
    add_common(flops, flops_args, false);
    flops->add_flag("--inject-count-fault", inject_fault,
                    "perturb the measured count (for exit-code tests)");
    add_common(app.add_subcommand("train", "train one model configuration"), train_args, true);
    CLI::App* eval = app.add_subcommand("eval", "perplexity of a model on a corpus");
    add_common(eval, eval_args, true);
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint to load instead of a fresh model");
    add_common(app.add_subcommand("gradcheck", "finite-difference audit per variant"), grad_args,
               false);
    add_common(app.add_subcommand("suite", "train all matched variants and tabulate"), suite_args,
               true);
    add_common(app.add_subcommand("ablate", "head/merge 2x2 ablation grid"), ablate_args, true);

    try {
        app.parse(argc, argv);
        if (app.got_subcommand("plan")) return cmd_plan(plan_args);
        if (app.got_subcommand("flops")) return cmd_flops(flops_args, inject_fault);
        if (app.got_subcommand("train")) return cmd_train(train_args);
        if (app.got_subcommand("eval")) return cmd_eval(eval_args, checkpoint_path);
        if (app.got_subcommand("gradcheck")) return cmd_gradcheck(grad_args);
        if (app.got_subcommand("suite")) return cmd_suite(suite_args);
        if (app.got_subcommand("ablate")) return cmd_ablate(ablate_args);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const InvariantError& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 1;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 1;
    } catch (const ParityError& e) {
        std::cerr << "infeasible plan: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

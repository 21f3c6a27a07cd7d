// Command-line front end: one subcommand per pipeline stage, a synthetic
// dataset generator for self-contained runs, and a completions-protocol
// server exposing the internal model as an external endpoint.

#include "fairicl/checkpoint.hpp"
#include "fairicl/dataset_io.hpp"
#include "fairicl/experiment.hpp"
#include "fairicl/kvfile.hpp"
#include "fairicl/synthetic.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

using fairicl::exp::ExperimentConfig;

struct ConfigArgs {
    std::string config_path;
    std::string output_override;
    std::uint64_t seed_override = 0;
    bool seed_set = false;

    ExperimentConfig load() const {
        ExperimentConfig cfg = ExperimentConfig::load(config_path);
        if (!output_override.empty()) cfg.output_dir = output_override;
        if (seed_set) cfg.base_seed = seed_override;
        return cfg;
    }
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config file")->required();
    cmd->add_option("--output", args.output_override, "override the output directory");
    cmd->add_option("--seed", args.seed_override, "override the base seed")
        ->each([&args](const std::string&) { args.seed_set = true; });
}

int run_synth(const std::string& out_dir, std::size_t n, std::size_t pool, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    fairicl::synth::SyntheticConfig scfg;
    scfg.n = n + pool;
    scfg.seed = seed;
    const fairicl::Dataset data = fairicl::synth::generate_planted_bias(scfg);
    fairicl::save_csv(data, fs::path(out_dir) / "data.csv");
    fairicl::save_schema(*data.schema, fs::path(out_dir) / "employee.schema");
    fairicl::save_template(fairicl::synth::employee_template(),
                           fs::path(out_dir) / "employee.template");

    std::ofstream cfg(fs::path(out_dir) / "synth.config", std::ios::binary);
    cfg << "data_csv data.csv\n"
        << "schema employee.schema\n"
        << "template employee.template\n"
        << "output out\n"
        << "train_size " << n << "\n"
        << "test_per_cell 50\n"
        << "n_tilde " << n << "\n"
        << "lm_layers 2\nlm_dim 64\nlm_heads 4\nlm_context 384\n"
        << "lm_epochs 3\nlm_lr 0.002\nlm_batch 8\nlm_corpus_q 4\nlm_corpus_label_match 0.75\n"
        << "concept_slots 10\nconcept_c 10\nconcept_lr 0.0001\nconcept_epochs 5\nconcept_q 2\n"
        << "select_m 100\nselect_k 4\n"
        << "strategies random,balanced,latent_concept,fairicl\n"
        << "target internal\n"
        << "runs 5\n"
        << "base_seed " << seed << "\n";
    std::printf("wrote data.csv (%zu rows), employee.schema, employee.template, synth.config to %s\n",
                data.records.size(), out_dir.c_str());
    return 0;
}

int run_serve(const std::string& checkpoint, const std::string& host, int port, int max_new_cap) {
    const fairicl::lm::Lm model = fairicl::load_lm(checkpoint);
    httplib::Server server;
    server.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
        try {
            const auto body = nlohmann::json::parse(req.body);
            std::string prompt = body.at("prompt").get<std::string>();
            int max_tokens = body.value("max_tokens", 4);
            max_tokens = std::min(max_tokens, max_new_cap);
            while (!prompt.empty() && (prompt.back() == ' ' || prompt.back() == '\n'))
                prompt.pop_back();
            std::vector<int> tokens{fairicl::Tokenizer::kBos};
            for (int id : model.tokenizer.encode(prompt)) tokens.push_back(id);
            const std::string text = fairicl::lm::generate(model.params, model.config,
                                                           model.tokenizer, nullptr, tokens,
                                                           std::max(1, max_tokens));
            nlohmann::json out;
            out["choices"] = nlohmann::json::array({{{"text", text}}});
            res.set_content(out.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(std::string("{\"error\":\"") + e.what() + "\"}", "application/json");
        }
    });
    std::printf("serving %s on http://%s:%d/v1/completions\n", checkpoint.c_str(), host.c_str(),
                port);
    return server.listen(host, port) ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"FairICL: fairness-promoting demonstration selection for in-context learning"};
    app.require_subcommand(1);

    // synth
    std::string synth_out = "synth";
    std::size_t synth_n = 600, synth_pool = 800;
    std::uint64_t synth_seed = 1;
    auto* synth = app.add_subcommand("synth", "generate a planted-bias synthetic dataset");
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--n", synth_n, "training rows");
    synth->add_option("--pool", synth_pool, "extra rows for the test pool");
    synth->add_option("--seed", synth_seed, "generation seed");

    ConfigArgs stage_args[9];
    const char* stage_names[9] = {"prepare", "augment",  "train-lm", "learn-concept", "rank",
                                  "infer",   "evaluate", "pipeline", "sweep"};
    const char* stage_help[9] = {
        "load the CSV and write train/test splits",
        "generate the decorrelated dataset",
        "train the frozen internal language model",
        "learn the latent concept soft prompt",
        "score all training examples by concept likelihood",
        "select demonstrations and predict the test queries",
        "compute utility and fairness reports",
        "run every stage in order",
        "re-run the affected stages over a parameter grid"};
    CLI::App* stage_cmds[9];
    for (int i = 0; i < 9; ++i) {
        stage_cmds[i] = app.add_subcommand(stage_names[i], stage_help[i]);
        add_config_options(stage_cmds[i], stage_args[i]);
    }
    std::string sweep_param;
    std::string sweep_values;
    stage_cmds[8]->add_option("--param", sweep_param, "q | k | n_tilde_fraction | epochs")
        ->required();
    stage_cmds[8]->add_option("--values", sweep_values, "comma-separated values")->required();

    // serve
    std::string serve_ckpt, serve_host = "127.0.0.1";
    int serve_port = 8080, serve_cap = 16;
    auto* serve = app.add_subcommand("serve", "expose an lm checkpoint as a completions endpoint");
    serve->add_option("--checkpoint", serve_ckpt, "lm checkpoint (.ficl)")->required();
    serve->add_option("--host", serve_host, "bind host");
    serve->add_option("--port", serve_port, "bind port");
    serve->add_option("--max-new", serve_cap, "cap on generated tokens per request");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth(synth_out, synth_n, synth_pool, synth_seed);
        if (serve->parsed()) return run_serve(serve_ckpt, serve_host, serve_port, serve_cap);
        for (int i = 0; i < 9; ++i) {
            if (!stage_cmds[i]->parsed()) continue;
            const ExperimentConfig cfg = stage_args[i].load();
            switch (i) {
                case 0: fairicl::exp::stage_prepare(cfg); break;
                case 1: fairicl::exp::stage_augment(cfg); break;
                case 2: fairicl::exp::stage_train_lm(cfg); break;
                case 3: fairicl::exp::stage_learn_concept(cfg); break;
                case 4: fairicl::exp::stage_rank(cfg); break;
                case 5: fairicl::exp::stage_infer(cfg); break;
                case 6: fairicl::exp::stage_evaluate(cfg); break;
                case 7: fairicl::exp::run_pipeline(cfg); break;
                case 8: {
                    std::vector<double> values;
                    for (const auto& v : fairicl::split_char(sweep_values, ','))
                        if (!fairicl::trim(v).empty()) values.push_back(std::stod(fairicl::trim(v)));
                    fairicl::exp::run_sweep(cfg, fairicl::exp::sweep_param_from(sweep_param),
                                            values);
                    break;
                }
            }
            std::printf("%s: done\n", stage_names[i]);
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "attamba/checkpoint.hpp"
#include "attamba/cost_model.hpp"
#include "attamba/decode.hpp"
#include "attamba/harness.hpp"

namespace {

using nlohmann::json;

int run_train(const std::string& config_path, const std::string& corpus,
              const std::string& out, int steps) {
    attamba::TrainConfig tc = attamba::load_train_config(config_path);
    if (!corpus.empty()) tc.corpus_path = corpus;
    if (!out.empty()) tc.out_dir = out;
    if (steps > 0) tc.steps = steps;
    if (tc.corpus_path.empty())
        throw attamba::ConfigError("train: no corpus_path in config and no --corpus");
    attamba::TrainResult r = attamba::train(tc, &std::cout);
    json summary{{"initial_train_loss", r.initial_train_loss},
                 {"final_train_loss", r.final_train_loss},
                 {"final_eval_loss", r.final_eval_loss},
                 {"ppl", r.final_ppl},
                 {"tokens", r.tokens},
                 {"wall_s", r.wall_seconds},
                 {"checkpoint", r.checkpoint_path}};
    std::cout << summary.dump() << "\n";
    return 0;
}

int run_eval(const std::string& ckpt, const std::string& corpus, int swa, int lead,
             int windows) {
    attamba::ModelParams<float> model = attamba::load_checkpoint(ckpt);
    attamba::Corpus data = attamba::ingest_corpus(corpus);
    attamba::EvalOptions opt;
    opt.max_windows = windows;
    opt.swa_window = swa;
    opt.lead_override = lead;
    double loss = attamba::evaluate(model, data.eval, opt);
    json row{{"eval_loss", loss},
             {"ppl", std::exp(loss)},
             {"windows", windows},
             {"mode", attamba::mode_name(model.cfg.mode)}};
    std::cout << row.dump() << "\n";
    return 0;
}

json cost_row(long long b, long long l, long long e, long long h, long long ds,
              long long p) {
    attamba::CostInputs in{b, l, e, h, ds, p};
    attamba::CostReport a = attamba::attamba_cost(in);
    attamba::CostReport t = attamba::transformer_cost(b, l, e, h);
    json row{{"chunk_size", p},
             {"compressed",
              {{"proj_flops", a.proj_flops},
               {"ssm_flops", a.ssm_flops},
               {"attn_flops", a.attn_flops},
               {"total_flops", a.total_flops},
               {"kv_bytes", a.kv_bytes},
               {"activation_bytes", a.activation_bytes}}},
             {"full_attention_at_same_width",
              {{"total_flops", t.total_flops},
               {"kv_bytes", t.kv_bytes},
               {"activation_bytes", t.activation_bytes}}},
             {"iso_kv_width", attamba::solve_iso_kv(e, p, l, ds, h)},
             {"iso_flops_width", attamba::solve_iso_flops(e, p, l, ds, h)}};
    auto act = attamba::solve_iso_activation(e, p, l, ds, h);
    if (act)
        row["iso_activation_width"] = *act;
    else
        row["iso_activation_width"] = nullptr;
    return row;
}

int run_cost(long long b, long long l, long long e, long long h, long long ds,
             long long p, bool sweep, bool csv) {
    std::vector<long long> chunks = sweep ? std::vector<long long>{1, 2, 4, 8, 16, 32, 64}
                                          : std::vector<long long>{p};
    if (csv) {
        std::cout << "chunk_size,total_flops,attn_flops,kv_bytes,activation_bytes,"
                     "iso_kv_width,iso_flops_width,iso_activation_width\n";
        for (long long pc : chunks) {
            attamba::CostReport a = attamba::attamba_cost({b, l, e, h, ds, pc});
            auto act = attamba::solve_iso_activation(e, pc, l, ds, h);
            std::cout << pc << "," << a.total_flops << "," << a.attn_flops << ","
                      << a.kv_bytes << "," << a.activation_bytes << ","
                      << attamba::solve_iso_kv(e, pc, l, ds, h) << ","
                      << attamba::solve_iso_flops(e, pc, l, ds, h) << ","
                      << (act ? std::to_string(*act) : std::string("")) << "\n";
        }
    } else {
        for (long long pc : chunks) std::cout << cost_row(b, l, e, h, ds, pc).dump(2) << "\n";
    }
    return 0;
}

int run_decode_sim(const std::string& ckpt, const std::string& prompt, int steps,
                   bool verify) {
    attamba::ModelParams<float> model = attamba::load_checkpoint(ckpt);
    if (prompt.empty()) throw attamba::ContractError("decode-sim: empty prompt");
    std::vector<int> tokens;
    for (unsigned char c : prompt) tokens.push_back(c);
    int total = static_cast<int>(tokens.size()) + steps;

    attamba::PrefillResult pf = attamba::prefill(model, tokens, total);
    auto argmax = [](const std::vector<float>& v) {
        return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    };
    int next = argmax(pf.last_logits);
    std::vector<int> generated;
    for (int s = 0; s < steps; ++s) {
        generated.push_back(next);
        std::vector<float> logits = attamba::decode_step(model, pf.cache, next);
        attamba::CacheReport rep = attamba::cache_report(model.cfg, pf.cache);
        json row{{"pos", pf.cache.next_pos - 1},
                 {"entries", rep.entries},
                 {"bytes", rep.bytes},
                 {"top_token", argmax(logits)}};
        std::cout << row.dump() << "\n";
        next = argmax(logits);
    }

    if (verify && steps > 0) {
        std::vector<int> all = tokens;
        all.insert(all.end(), generated.begin(), generated.end());
        attamba::ChunkPlan plan = attamba::build_plan(model.cfg, total);
        attamba::ForwardOptions opt;
        opt.plan = &plan;
        attamba::NoGradGuard ng;
        attamba::Tensor<float> full = attamba::lm_forward(model, all, opt);
        // Each decoded position's logits against the same row of one batched pass.
        double worst = 0.0;
        attamba::PrefillResult pf2 = attamba::prefill(model, tokens, total);
        int pos = static_cast<int>(tokens.size());
        for (int g : generated) {
            std::vector<float> logits = attamba::decode_step(model, pf2.cache, g);
            for (int vtok = 0; vtok < model.cfg.vocab; ++vtok) {
                double d = std::abs(static_cast<double>(logits[vtok]) -
                                    full.at(static_cast<std::size_t>(pos) * model.cfg.vocab +
                                            vtok));
                worst = std::max(worst, d);
            }
            ++pos;
        }
        std::cout << json{{"verify_max_abs_deviation", worst}}.dump() << "\n";
    }
    return 0;
}

int run_mask_dump(int n, int p, const std::string& strategy, int layer, int lead,
                  uint64_t seed, bool as_json) {
    attamba::ChunkStrategy s = attamba::strategy_from_name(strategy);
    attamba::ChunkPlan plan;
    int layers = layer + 1;
    switch (s) {
        case attamba::ChunkStrategy::Uniform: plan = attamba::uniform_plan(n, p, layers); break;
        case attamba::ChunkStrategy::Cyclic: plan = attamba::cyclic_plan(n, p, layers); break;
        case attamba::ChunkStrategy::Random:
            plan = attamba::random_plan(n, p, layers, seed);
            break;
        default:
            throw attamba::ConfigError(
                "mask-dump supports uniform, cyclic, and random layouts; attention-guided "
                "layouts need a trained model");
    }
    attamba::MaskMatrix mask = attamba::train_mask(plan, layer, lead);
    if (as_json) {
        json rows = json::array();
        for (const auto& row : mask.rows) rows.push_back(row);
        json out{{"n", n},
                 {"layer", layer},
                 {"lead", lead},
                 {"boundaries", plan.layer_boundaries(layer)},
                 {"rows", rows}};
        std::cout << out.dump() << "\n";
    } else {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) std::cout << (mask.at(i, j) ? '#' : '.');
            std::cout << "\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention over compressed multi-token states: training, inference, "
                 "and cost accounting"};
    app.require_subcommand(1);

    auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
    std::string config_path, corpus, out_dir;
    int steps_override = 0;
    train_cmd->add_option("--config", config_path, "JSON config path")->required();
    train_cmd->add_option("--corpus", corpus, "override corpus path");
    train_cmd->add_option("--out", out_dir, "override output directory");
    train_cmd->add_option("--steps", steps_override, "override step count");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
    std::string ckpt_path, eval_corpus;
    int swa = 0, lead = 0, windows = 8;
    eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    eval_cmd->add_option("--corpus", eval_corpus, "corpus path")->required();
    eval_cmd->add_option("--swa", swa, "sliding window width for baseline modes");
    eval_cmd->add_option("--lead", lead, "override the uncompressed lead length");
    eval_cmd->add_option("--windows", windows, "number of eval windows");

    auto* cost_cmd = app.add_subcommand("cost", "analytical flop and memory accounting");
    long long cb = 1, cl = 4096, ce = 512, ch = 8, cds = 32, cp = 4;
    bool sweep = false, csv = false;
    cost_cmd->add_option("-B,--batch", cb, "batch size");
    cost_cmd->add_option("-L,--seq-len", cl, "sequence length");
    cost_cmd->add_option("-E,--model-dim", ce, "model width");
    cost_cmd->add_option("-H,--heads", ch, "attention heads");
    cost_cmd->add_option("--Ds,--state-dim", cds, "state width");
    cost_cmd->add_option("-P,--chunk", cp, "chunk size");
    cost_cmd->add_flag("--sweep", sweep, "sweep chunk sizes 1..64");
    cost_cmd->add_flag("--csv", csv, "emit CSV");

    auto* decode_cmd = app.add_subcommand(
        "decode-sim", "greedy decode with the compressed cache, reporting its size");
    std::string dckpt, prompt;
    int dsteps = 32;
    bool verify = false;
    decode_cmd->add_option("--ckpt", dckpt, "checkpoint path")->required();
    decode_cmd->add_option("--prompt", prompt, "prompt text (bytes become tokens)")
        ->required();
    decode_cmd->add_option("--steps", dsteps, "tokens to generate");
    decode_cmd->add_flag("--verify", verify,
                         "compare decoded logits against one batched forward pass");

    auto* mask_cmd = app.add_subcommand("mask-dump", "print a training attention mask");
    int mn = 16, mp = 4, mlayer = 0, mlead = 4;
    uint64_t mseed = 1;
    std::string mstrategy = "uniform";
    bool mjson = false;
    mask_cmd->add_option("--n", mn, "sequence length");
    mask_cmd->add_option("--chunk", mp, "chunk size");
    mask_cmd->add_option("--strategy", mstrategy, "uniform, cyclic, or random");
    mask_cmd->add_option("--layer", mlayer, "layer index");
    mask_cmd->add_option("--lead", mlead, "uncompressed lead length");
    mask_cmd->add_option("--seed", mseed, "seed for the random layout");
    mask_cmd->add_flag("--json", mjson, "emit JSON instead of a grid");

    auto* preset_cmd = app.add_subcommand("preset", "run a named experiment bundle");
    std::string preset_name, preset_corpus, preset_out = "runs";
    preset_cmd->add_option("name", preset_name, "preset name")->required();
    preset_cmd->add_option("--corpus", preset_corpus,
                           "corpus path (generated under --out when omitted)");
    preset_cmd->add_option("--out", preset_out, "output directory");

    auto* gen_cmd = app.add_subcommand("gen-corpus", "write a deterministic text corpus");
    std::string gen_out = "corpus.txt";
    std::size_t gen_bytes = 2000000;
    uint64_t gen_seed = 1;
    gen_cmd->add_option("--out", gen_out, "output path");
    gen_cmd->add_option("--bytes", gen_bytes, "corpus size in bytes");
    gen_cmd->add_option("--seed", gen_seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(train_cmd))
            return run_train(config_path, corpus, out_dir, steps_override);
        if (app.got_subcommand(eval_cmd))
            return run_eval(ckpt_path, eval_corpus, swa, lead, windows);
        if (app.got_subcommand(cost_cmd)) return run_cost(cb, cl, ce, ch, cds, cp, sweep, csv);
        if (app.got_subcommand(decode_cmd))
            return run_decode_sim(dckpt, prompt, dsteps, verify);
        if (app.got_subcommand(mask_cmd))
            return run_mask_dump(mn, mp, mstrategy, mlayer, mlead, mseed, mjson);
        if (app.got_subcommand(preset_cmd)) {
            if (preset_corpus.empty()) {
                std::filesystem::create_directories(preset_out);
                preset_corpus = preset_out + "/corpus.txt";
                attamba::write_synthetic_corpus(preset_corpus, 2000000, 1);
            }
            auto results = attamba::run_preset(preset_name, preset_corpus, preset_out,
                                               &std::cout);
            for (auto& [name, r] : results)
                std::cout << name << ": eval " << r.final_eval_loss << " ppl " << r.final_ppl
                          << "\n";
            return 0;
        }
        if (app.got_subcommand(gen_cmd)) {
            attamba::write_synthetic_corpus(gen_out, gen_bytes, gen_seed);
            std::cout << "wrote " << gen_bytes << " bytes to " << gen_out << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

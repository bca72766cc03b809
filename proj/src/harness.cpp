#include "attamba/harness.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "attamba/checkpoint.hpp"
#include "attamba/cost_model.hpp"

namespace attamba {
namespace {

using nlohmann::json;

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).template get<std::decay_t<decltype(field)>>();
    };
    get("vocab", cfg.vocab);
    get("seq_len", cfg.seq_len);
    get("model_dim", cfg.model_dim);
    get("heads", cfg.heads);
    get("layers", cfg.layers);
    get("chunk_size", cfg.chunk_size);
    get("lead", cfg.lead);
    get("state_dim", cfg.state_dim);
    get("baseline_attn_dim", cfg.baseline_attn_dim);
    get("baseline_heads", cfg.baseline_heads);
    get("swa_window", cfg.swa_window);
    get("ffn_hidden", cfg.ffn_hidden);
    get("fssm_splits", cfg.fssm_splits);
    get("seed", cfg.seed);
    if (j.contains("mode")) cfg.mode = mode_from_name(j.at("mode").get<std::string>());
    if (j.contains("chunk_strategy"))
        cfg.chunk_strategy = strategy_from_name(j.at("chunk_strategy").get<std::string>());
    return cfg;
}

json model_config_to_json(const ModelConfig& cfg) {
    return json{{"vocab", cfg.vocab},
                {"seq_len", cfg.seq_len},
                {"model_dim", cfg.model_dim},
                {"heads", cfg.heads},
                {"layers", cfg.layers},
                {"chunk_size", cfg.chunk_size},
                {"lead", cfg.lead},
                {"state_dim", cfg.state_dim},
                {"mode", mode_name(cfg.mode)},
                {"chunk_strategy", strategy_name(cfg.chunk_strategy)},
                {"baseline_attn_dim", cfg.baseline_attn_dim},
                {"baseline_heads", cfg.baseline_heads},
                {"swa_window", cfg.swa_window},
                {"ffn_hidden", cfg.ffn_hidden},
                {"fssm_splits", cfg.fssm_splits},
                {"seed", cfg.seed}};
}

double lr_at(const TrainConfig& tc, int step) {
    if (tc.warmup_steps > 0 && step < tc.warmup_steps)
        return tc.learning_rate * (step + 1) / static_cast<double>(tc.warmup_steps);
    int span = std::max(1, tc.steps - tc.warmup_steps);
    double prog = std::min(1.0, (step - tc.warmup_steps) / static_cast<double>(span));
    return tc.learning_rate * 0.5 * (1.0 + std::cos(prog * 3.14159265358979323846));
}

struct AdamState {
    struct Slot {
        std::vector<float> m, v;
    };
    std::vector<Slot> slots;
    long long t = 0;
};

void adam_step(std::vector<std::pair<std::string, Tensor<float>*>>& params,
               AdamState& state, double lr, double grad_clip) {
    constexpr double beta1 = 0.9, beta2 = 0.95, eps = 1e-8;
    if (state.slots.empty()) {
        state.slots.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.slots[i].m.assign(params[i].second->numel(), 0.0f);
            state.slots[i].v.assign(params[i].second->numel(), 0.0f);
        }
    }
    double sq = 0.0;
    for (auto& [name, t] : params) {
        const float* g = t->grad_ptr();
        for (std::size_t i = 0; i < t->numel(); ++i)
            sq += static_cast<double>(g[i]) * g[i];
    }
    double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("optimizer: non-finite gradient norm");
    double scale = (grad_clip > 0.0 && norm > grad_clip) ? grad_clip / norm : 1.0;

    ++state.t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t s = 0; s < params.size(); ++s) {
        Tensor<float>& t = *params[s].second;
        float* p = t.ptr();
        const float* g = t.grad_ptr();
        auto& slot = state.slots[s];
        for (std::size_t i = 0; i < t.numel(); ++i) {
            double gi = static_cast<double>(g[i]) * scale;
            double m = beta1 * slot.m[i] + (1.0 - beta1) * gi;
            double v = beta2 * slot.v[i] + (1.0 - beta2) * gi * gi;
            slot.m[i] = static_cast<float>(m);
            slot.v[i] = static_cast<float>(v);
            p[i] -= static_cast<float>(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
        }
    }
}

std::vector<int> window_tokens(const std::vector<uint8_t>& data, std::size_t start,
                               int count) {
    std::vector<int> w(count);
    for (int i = 0; i < count; ++i) w[i] = data[start + i];
    return w;
}

int effective_swa(const ModelConfig& cfg, int requested) {
    if (requested > 0) return requested;
    if (cfg.mode == ModelMode::BaselineKvcSwa)
        return std::max(1, cfg.seq_len / cfg.chunk_size);
    return 0;
}

TrainConfig preset_base(const std::string& corpus, int steps) {
    TrainConfig tc;
    tc.model.vocab = 256;
    tc.model.seq_len = 256;
    tc.model.model_dim = 64;
    tc.model.heads = 2;
    tc.model.layers = 2;
    tc.model.state_dim = 16;
    tc.model.chunk_size = 4;
    tc.model.lead = 4;
    tc.model.mode = ModelMode::Attamba;
    tc.model.chunk_strategy = ChunkStrategy::Cyclic;
    tc.model.seed = 7;
    tc.batch = 2;
    tc.steps = steps;
    tc.learning_rate = 3e-3;
    tc.warmup_steps = 100;
    tc.grad_clip = 1.0;
    tc.eval_interval = 100;
    tc.corpus_path = corpus;
    tc.seed = 7;
    return tc;
}

}  // namespace

TrainConfig train_config_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw IoError("train config: malformed JSON");
    TrainConfig tc;
    if (j.contains("model")) tc.model = model_config_from_json(j.at("model"));
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).template get<std::decay_t<decltype(field)>>();
    };
    get("batch", tc.batch);
    get("steps", tc.steps);
    get("learning_rate", tc.learning_rate);
    get("warmup_steps", tc.warmup_steps);
    get("grad_clip", tc.grad_clip);
    get("eval_interval", tc.eval_interval);
    get("eval_windows", tc.eval_windows);
    get("corpus_path", tc.corpus_path);
    get("out_dir", tc.out_dir);
    get("seed", tc.seed);
    return tc;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return train_config_from_json(text);
}

std::string train_config_to_json(const TrainConfig& cfg) {
    json j{{"model", model_config_to_json(cfg.model)},
           {"batch", cfg.batch},
           {"steps", cfg.steps},
           {"learning_rate", cfg.learning_rate},
           {"warmup_steps", cfg.warmup_steps},
           {"grad_clip", cfg.grad_clip},
           {"eval_interval", cfg.eval_interval},
           {"eval_windows", cfg.eval_windows},
           {"corpus_path", cfg.corpus_path},
           {"out_dir", cfg.out_dir},
           {"seed", cfg.seed}};
    return j.dump(2);
}

Corpus ingest_corpus(const std::string& path, double eval_fraction) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    if (bytes.size() < 64) throw IoError("corpus " + path + " is too small");
    if (!(eval_fraction > 0.0) || eval_fraction >= 1.0)
        throw ContractError("ingest_corpus: eval fraction must lie in (0,1)");
    std::size_t eval_len = std::max<std::size_t>(
        1, static_cast<std::size_t>(static_cast<double>(bytes.size()) * eval_fraction));
    std::size_t split = bytes.size() - eval_len;
    Corpus c;
    c.train.assign(bytes.begin(), bytes.begin() + static_cast<long>(split));
    c.eval.assign(bytes.begin() + static_cast<long>(split), bytes.end());
    return c;
}

double evaluate(ModelParams<float>& model, const std::vector<uint8_t>& data,
                const EvalOptions& opt) {
    NoGradGuard no_grad;
    const ModelConfig& cfg = model.cfg;
    int w = cfg.seq_len + 1;
    int count = static_cast<int>(data.size() / static_cast<std::size_t>(w));
    count = std::min(count, std::max(1, opt.max_windows));
    if (count < 1) throw ContractError("evaluate: split shorter than one window");
    ForwardOptions fo;
    fo.lead_override = opt.lead_override;
    fo.swa_window = effective_swa(cfg, opt.swa_window);
    fo.plan_seed = opt.plan_seed;
    double total = 0.0;
    for (int i = 0; i < count; ++i) {
        std::vector<int> window = window_tokens(data, static_cast<std::size_t>(i) * w, w);
        Tensor<float> loss = lm_loss(model, window, fo);
        total += (*loss.data)[0];
    }
    return total / count;
}

TrainResult train(const TrainConfig& tc, std::ostream* log) {
    tc.model.validate();
    if (tc.batch < 1 || tc.steps < 1) throw ConfigError("train: batch and steps must be positive");
    if (tc.eval_interval < 1) throw ConfigError("train: eval interval must be positive");
    Corpus corpus = ingest_corpus(tc.corpus_path);
    std::size_t need = static_cast<std::size_t>(tc.model.seq_len) + 1;
    if (corpus.train.size() < need + 1)
        throw ContractError("train: corpus too small for the configured sequence length");

    ModelParams<float> model = init_params<float>(tc.model, tc.model.seed);
    auto params = model.named_tensors();
    AdamState adam;
    Rng data_rng(Rng::mix(tc.seed, 0xda7a));

    std::ofstream metrics;
    TrainResult result;
    if (!tc.out_dir.empty()) {
        std::filesystem::create_directories(tc.out_dir);
        result.metrics_path = tc.out_dir + "/metrics.jsonl";
        metrics.open(result.metrics_path, std::ios::trunc);
        if (!metrics) throw IoError("train: cannot write " + result.metrics_path);
    }

    int edge = std::min(tc.steps, 10);  // steps averaged into initial/final loss
    double head_sum = 0.0;
    std::vector<double> tail;
    double window_sum = 0.0;
    int window_count = 0;
    auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&t0] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    for (int step = 0; step < tc.steps; ++step) {
        double lr = lr_at(tc, step);
        for (auto& [name, t] : params) t->zero_grad();
        double step_loss = 0.0;
        for (int b = 0; b < tc.batch; ++b) {
            std::size_t start = data_rng.below(corpus.train.size() - need + 1);
            std::vector<int> window =
                window_tokens(corpus.train, start, static_cast<int>(need));
            ForwardOptions fo;
            fo.plan_seed = Rng::mix(static_cast<uint64_t>(step) + 1,
                                    static_cast<uint64_t>(b));
            try {
                Tensor<float> loss = lm_loss(model, window, fo);
                step_loss += (*loss.data)[0];
                Tensor<float> scaled = scale(loss, 1.0f / static_cast<float>(tc.batch));
                backward(scaled);
            } catch (NumericError& err) {
                throw NumericError("training diverged at step " + std::to_string(step + 1) +
                                   ": " + err.what());
            }
        }
        step_loss /= tc.batch;
        adam_step(params, adam, lr, tc.grad_clip);

        if (step < edge) head_sum += step_loss;
        tail.push_back(step_loss);
        if (static_cast<int>(tail.size()) > edge) tail.erase(tail.begin());
        window_sum += step_loss;
        ++window_count;

        bool last = step + 1 == tc.steps;
        if ((step + 1) % tc.eval_interval == 0 || last) {
            double eval_loss = evaluate(model, corpus.eval,
                                        EvalOptions{tc.eval_windows, 0, 0, 0});
            double train_avg = window_sum / window_count;
            window_sum = 0.0;
            window_count = 0;
            result.final_eval_loss = eval_loss;
            result.final_ppl = std::exp(eval_loss);
            result.tokens =
                static_cast<long long>(step + 1) * tc.batch * tc.model.seq_len;
            json row{{"step", step + 1},          {"train_loss", train_avg},
                     {"eval_loss", eval_loss},    {"ppl", result.final_ppl},
                     {"tokens", result.tokens},   {"wall_s", elapsed()}};
            if (metrics.is_open()) metrics << row.dump() << "\n" << std::flush;
            if (log)
                *log << "step " << step + 1 << "  train " << train_avg << "  eval "
                     << eval_loss << "  ppl " << result.final_ppl << "\n";
        }
    }

    result.initial_train_loss = head_sum / edge;
    double tail_sum = 0.0;
    for (double v : tail) tail_sum += v;
    result.final_train_loss = tail_sum / static_cast<double>(tail.size());
    result.wall_seconds = elapsed();
    if (!tc.out_dir.empty()) {
        result.checkpoint_path = tc.out_dir + "/model.ckpt";
        save_checkpoint(result.checkpoint_path, model);
    }
    return result;
}

std::vector<std::string> preset_names() {
    return {"iso-baselines", "chunk-strategies", "chunk-sizes", "pseudo", "ssm-dims"};
}

std::vector<PresetRun> preset_runs(const std::string& preset, const std::string& corpus,
                                   const std::string& out_root) {
    std::vector<PresetRun> runs;
    auto add = [&runs, &out_root](const std::string& name, TrainConfig tc) {
        tc.out_dir = out_root + "/" + name;
        runs.push_back({name, std::move(tc)});
    };
    if (preset == "iso-baselines") {
        TrainConfig a = preset_base(corpus, 2000);
        add("attamba_p4", a);
        TrainConfig kvc = a;
        kvc.model.mode = ModelMode::BaselineKvc;
        kvc.model.baseline_attn_dim = static_cast<int>(
            solve_iso_kv(a.model.model_dim, a.model.chunk_size, a.model.seq_len,
                         a.model.state_dim, a.model.heads));
        kvc.model.baseline_heads = a.model.heads;
        add("baseline_kvc", kvc);
        TrainConfig full = a;
        full.model.mode = ModelMode::BaselineFull;
        full.model.baseline_attn_dim = a.model.model_dim;
        full.model.baseline_heads = a.model.heads;
        add("baseline_full", full);
    } else if (preset == "chunk-strategies") {
        for (ChunkStrategy s : {ChunkStrategy::Uniform, ChunkStrategy::Cyclic,
                                ChunkStrategy::Random, ChunkStrategy::FAttn,
                                ChunkStrategy::FSSM}) {
            TrainConfig tc = preset_base(corpus, 600);
            tc.model.chunk_strategy = s;
            add(strategy_name(s), tc);
        }
    } else if (preset == "chunk-sizes") {
        for (int p : {2, 4, 8, 16}) {
            TrainConfig tc = preset_base(corpus, 600);
            tc.model.chunk_size = p;
            tc.model.lead = p;
            add("p" + std::to_string(p), tc);
        }
    } else if (preset == "pseudo") {
        TrainConfig a = preset_base(corpus, 600);
        add("attamba_p4", a);
        TrainConfig ps = a;
        ps.model.mode = ModelMode::PseudoChunk;
        add("pseudo_chunk", ps);
        TrainConfig full = a;
        full.model.mode = ModelMode::BaselineFull;
        full.model.baseline_attn_dim = a.model.model_dim;
        full.model.baseline_heads = a.model.heads;
        add("baseline_full", full);
    } else if (preset == "ssm-dims") {
        for (int ds : {4, 16, 32}) {
            TrainConfig tc = preset_base(corpus, 600);
            tc.model.state_dim = ds;
            tc.model.chunk_size = 8;
            tc.model.lead = 8;
            add("ds" + std::to_string(ds), tc);
        }
    } else {
        throw ConfigError("unknown preset: " + preset);
    }
    return runs;
}

std::map<std::string, TrainResult> run_preset(const std::string& preset,
                                              const std::string& corpus,
                                              const std::string& out_root,
                                              std::ostream* log) {
    std::map<std::string, TrainResult> results;
    json summary;
    for (PresetRun& run : preset_runs(preset, corpus, out_root)) {
        if (log) *log << "== " << run.name << " ==\n";
        TrainResult r = train(run.config, log);
        summary[run.name] = {{"initial_train_loss", r.initial_train_loss},
                             {"final_train_loss", r.final_train_loss},
                             {"final_eval_loss", r.final_eval_loss},
                             {"ppl", r.final_ppl},
                             {"tokens", r.tokens},
                             {"wall_s", r.wall_seconds}};
        results.emplace(run.name, std::move(r));
    }
    std::filesystem::create_directories(out_root);
    std::ofstream out(out_root + "/summary.json", std::ios::trunc);
    if (!out) throw IoError("cannot write preset summary in " + out_root);
    out << summary.dump(2) << "\n";
    return results;
}

void write_synthetic_corpus(const std::string& path, std::size_t bytes, uint64_t seed) {
    static const char* subjects[] = {
        "the miller",      "a quiet fox",      "the harbor crew", "old casimir",
        "the night clerk", "a copper kettle",  "the survey team", "little anneli",
        "the lighthouse",  "a patient welder", "the archivist",   "the ferry pilot"};
    static const char* verbs[] = {"carries", "mends",    "weighs",  "charts",
                                  "polishes", "stores",  "repairs", "counts",
                                  "paints",   "signals", "trades",  "guards"};
    static const char* objects[] = {
        "the copper lamp",  "a crate of pears", "the tide tables", "two spare oars",
        "the ledger pages", "a coil of rope",   "the iron stove",  "nine glass jars",
        "the harbor chain", "a sack of flour",  "the old compass", "the spare sail"};
    static const char* tails[] = {"before dawn",      "after the storm", "every winter",
                                  "by candlelight",   "without a sound", "near the pier",
                                  "in steady rain",   "for the voyage",  "at low tide",
                                  "under the bridge", "once a week",     "with great care"};
    Rng rng(seed);
    std::string text;
    text.reserve(bytes + 128);
    int line_len = 0;
    while (text.size() < bytes) {
        std::string sentence = std::string(subjects[rng.below(12)]) + " " +
                               verbs[rng.below(12)] + " " + objects[rng.below(12)] + " " +
                               tails[rng.below(12)] + ".";
        if (rng.below(8) == 0)
            sentence += " cargo " + std::to_string(100 + rng.below(900)) + " kg.";
        if (line_len + static_cast<int>(sentence.size()) > 88) {
            text += "\n";
            line_len = 0;
            if (rng.below(12) == 0) text += "\n";
        } else if (line_len > 0) {
            text += " ";
            ++line_len;
        }
        text += sentence;
        line_len += static_cast<int>(sentence.size());
    }
    text.resize(bytes);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write corpus " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("short write to " + path);
}

}  // namespace attamba

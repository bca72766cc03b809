#include "attamba/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace attamba {
namespace {

constexpr char kMagic[4] = {'A', 'T', 'M', 'B'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

void write_u64(std::ostream& out, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

void write_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw IoError("checkpoint: truncated file");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw IoError("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

float read_f32(std::istream& in) {
    uint32_t bits = read_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

struct Record {
    std::vector<int> shape;
    std::vector<float> values;
};

void write_record(std::ostream& out, const std::string& name, const Record& r) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, r.shape.size());
    std::size_t numel = 1;
    for (int d : r.shape) {
        write_u64(out, static_cast<uint64_t>(d));
        numel *= static_cast<std::size_t>(d);
    }
    if (numel != r.values.size())
        throw IoError("checkpoint: record payload does not match its extents");
    for (float v : r.values) write_f32(out, v);
}

std::pair<std::string, Record> read_record(std::istream& in) {
    uint64_t name_len = read_u64(in);
    if (name_len > (1u << 16)) throw IoError("checkpoint: unreasonable name length");
    std::string name(name_len, '\0');
    if (name_len && !in.read(name.data(), static_cast<std::streamsize>(name_len)))
        throw IoError("checkpoint: truncated file");
    Record r;
    uint64_t rank = read_u64(in);
    if (rank > 8) throw IoError("checkpoint: unreasonable rank");
    std::size_t numel = 1;
    for (uint64_t i = 0; i < rank; ++i) {
        uint64_t d = read_u64(in);
        if (d > (1u << 30)) throw IoError("checkpoint: unreasonable extent");
        r.shape.push_back(static_cast<int>(d));
        numel *= d;
    }
    if (numel > (1u << 28)) throw IoError("checkpoint: unreasonable payload");
    r.values.resize(numel);
    for (std::size_t i = 0; i < numel; ++i) r.values[i] = read_f32(in);
    return {std::move(name), std::move(r)};
}

Record scalar_record(float v) { return Record{{}, {v}}; }

std::vector<std::pair<std::string, Record>> config_records(const ModelConfig& cfg) {
    std::vector<std::pair<std::string, Record>> recs;
    auto put = [&recs](const char* key, int v) {
        recs.emplace_back(std::string("cfg.") + key, scalar_record(static_cast<float>(v)));
    };
    put("vocab", cfg.vocab);
    put("seq_len", cfg.seq_len);
    put("model_dim", cfg.model_dim);
    put("heads", cfg.heads);
    put("layers", cfg.layers);
    put("chunk_size", cfg.chunk_size);
    put("lead", cfg.lead);
    put("state_dim", cfg.state_dim);
    put("mode", static_cast<int>(cfg.mode));
    put("chunk_strategy", static_cast<int>(cfg.chunk_strategy));
    put("baseline_attn_dim", cfg.baseline_attn_dim);
    put("baseline_heads", cfg.baseline_heads);
    put("swa_window", cfg.swa_window);
    put("ffn_hidden", cfg.ffn_hidden);
    put("fssm_splits", cfg.fssm_splits);
    // 16-bit words keep the full 64-bit seed exact in f32 payloads.
    Record seed{{4}, std::vector<float>(4)};
    for (int w = 0; w < 4; ++w)
        seed.values[w] = static_cast<float>((cfg.seed >> (16 * w)) & 0xffffu);
    recs.emplace_back("cfg.seed_words", std::move(seed));
    return recs;
}

int take_int(std::map<std::string, Record>& recs, const std::string& key) {
    auto it = recs.find(key);
    if (it == recs.end()) throw IoError("checkpoint: missing record " + key);
    if (it->second.values.size() != 1)
        throw IoError("checkpoint: " + key + " is not a scalar");
    int v = static_cast<int>(it->second.values[0]);
    recs.erase(it);
    return v;
}

ModelConfig config_from_records(std::map<std::string, Record>& recs) {
    ModelConfig cfg;
    cfg.vocab = take_int(recs, "cfg.vocab");
    cfg.seq_len = take_int(recs, "cfg.seq_len");
    cfg.model_dim = take_int(recs, "cfg.model_dim");
    cfg.heads = take_int(recs, "cfg.heads");
    cfg.layers = take_int(recs, "cfg.layers");
    cfg.chunk_size = take_int(recs, "cfg.chunk_size");
    cfg.lead = take_int(recs, "cfg.lead");
    cfg.state_dim = take_int(recs, "cfg.state_dim");
    cfg.mode = static_cast<ModelMode>(take_int(recs, "cfg.mode"));
    cfg.chunk_strategy = static_cast<ChunkStrategy>(take_int(recs, "cfg.chunk_strategy"));
    cfg.baseline_attn_dim = take_int(recs, "cfg.baseline_attn_dim");
    cfg.baseline_heads = take_int(recs, "cfg.baseline_heads");
    cfg.swa_window = take_int(recs, "cfg.swa_window");
    cfg.ffn_hidden = take_int(recs, "cfg.ffn_hidden");
    cfg.fssm_splits = take_int(recs, "cfg.fssm_splits");
    auto it = recs.find("cfg.seed_words");
    if (it == recs.end() || it->second.values.size() != 4)
        throw IoError("checkpoint: missing or malformed cfg.seed_words");
    cfg.seed = 0;
    for (int w = 0; w < 4; ++w)
        cfg.seed |= static_cast<uint64_t>(it->second.values[w]) << (16 * w);
    recs.erase(it);
    return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, ModelParams<float>& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
    out.write(kMagic, 4);
    write_u32(out, kVersion);

    auto cfg_recs = config_records(params.cfg);
    auto named = params.named_tensors();
    write_u64(out, cfg_recs.size() + named.size());
    for (auto& [name, rec] : cfg_recs) write_record(out, name, rec);
    for (auto& [name, t] : named) {
        Record r;
        r.shape = t->shape;
        r.values = *t->data;
        write_record(out, name, r);
    }
    if (!out) throw IoError("checkpoint: write to " + path + " failed");
}

ModelParams<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    uint32_t version = read_u32(in);
    if (version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));

    uint64_t count = read_u64(in);
    if (count > (1u << 20)) throw IoError("checkpoint: unreasonable record count");
    std::map<std::string, Record> recs;
    for (uint64_t i = 0; i < count; ++i) {
        auto [name, rec] = read_record(in);
        if (!recs.emplace(std::move(name), std::move(rec)).second)
            throw IoError("checkpoint: duplicate record name");
    }

    ModelConfig cfg = config_from_records(recs);
    cfg.validate();
    ModelParams<float> params = init_params<float>(cfg, cfg.seed);
    for (auto& [name, t] : params.named_tensors()) {
        auto it = recs.find(name);
        if (it == recs.end()) throw IoError("checkpoint: missing tensor " + name);
        if (it->second.shape != t->shape)
            throw IoError("checkpoint: shape mismatch for " + name);
        *t->data = std::move(it->second.values);
        recs.erase(it);
    }
    if (!recs.empty())
        throw IoError("checkpoint: unexpected extra record " + recs.begin()->first);
    return params;
}

}  // namespace attamba

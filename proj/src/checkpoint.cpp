#include "duet/checkpoint.hpp"

#include <cstring>

namespace duet {

namespace {

constexpr char kMagic[8] = {'D', 'U', 'E', 'T', 'C', 'K', 'P', '1'};

void put_u64(std::string& s, uint64_t v) {
    for (int i = 0; i < 8; i++) s.push_back(char((v >> (8 * i)) & 0xff));
}

uint64_t get_u64(const std::string& s, size_t& off) {
    DUET_REQUIRE(off + 8 <= s.size(), "truncated checkpoint");
    uint64_t v = 0;
    for (int i = 0; i < 8; i++) v |= uint64_t(uint8_t(s[off + static_cast<size_t>(i)])) << (8 * i);
    off += 8;
    return v;
}

std::string get_bytes(const std::string& s, size_t& off, uint64_t n) {
    DUET_REQUIRE(off + n <= s.size(), "truncated checkpoint");
    std::string out = s.substr(off, n);
    off += n;
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, Checkpoint& c) {
    std::string body;
    body.append(kMagic, sizeof(kMagic));
    std::string cfg = config_to_json(c.config);
    put_u64(body, cfg.size());
    body += cfg;
    put_u64(body, c.stage.size());
    body += c.stage;
    put_u64(body, c.step);
    put_u64(body, c.params.size());
    for (const auto& [name, data] : c.params) {
        put_u64(body, name.size());
        body += name;
        body.push_back(0);  // dtype: float32
        put_u64(body, data.size());
        size_t at = body.size();
        body.resize(at + data.size() * sizeof(float));
        std::memcpy(body.data() + at, data.data(), data.size() * sizeof(float));
    }
    c.content_hash = Sha256::of_string(body);
    body += c.content_hash;
    write_text_file(path, body);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::string raw = read_text_file(path);
    DUET_REQUIRE(raw.size() > sizeof(kMagic) + 64, "checkpoint too small: " + path);
    std::string body = raw.substr(0, raw.size() - 64);
    std::string hash = raw.substr(raw.size() - 64);
    DUET_REQUIRE(Sha256::of_string(body) == hash,
                 "checkpoint content hash mismatch (corrupt file): " + path);
    size_t off = 0;
    DUET_REQUIRE(std::memcmp(body.data(), kMagic, sizeof(kMagic)) == 0,
                 "not a checkpoint file: " + path);
    off = sizeof(kMagic);
    Checkpoint c;
    c.content_hash = hash;
    uint64_t cfg_len = get_u64(body, off);
    c.config = config_from_json(get_bytes(body, off, cfg_len));
    uint64_t stage_len = get_u64(body, off);
    c.stage = get_bytes(body, off, stage_len);
    c.step = get_u64(body, off);
    uint64_t n = get_u64(body, off);
    for (uint64_t i = 0; i < n; i++) {
        uint64_t name_len = get_u64(body, off);
        std::string name = get_bytes(body, off, name_len);
        std::string dtype = get_bytes(body, off, 1);
        DUET_REQUIRE(dtype[0] == 0, "unsupported checkpoint dtype for " + name);
        uint64_t count = get_u64(body, off);
        std::string bytes = get_bytes(body, off, count * sizeof(float));
        std::vector<float> data(count);
        std::memcpy(data.data(), bytes.data(), bytes.size());
        c.params.emplace(std::move(name), std::move(data));
    }
    DUET_REQUIRE(off == body.size(), "trailing bytes in checkpoint: " + path);
    return c;
}

}  // namespace duet

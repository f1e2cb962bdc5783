#include "t1map/io.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace t1map::io {

using nlohmann::json;

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

// float32 <-> little-endian bytes (byte-order safe)
void push_f32_le(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(f);
    out.push_back(static_cast<std::uint8_t>(u & 0xff));
    out.push_back(static_cast<std::uint8_t>((u >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((u >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((u >> 24) & 0xff));
}

float pop_f32_le(const std::uint8_t* p) {
    std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                      (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(u);
}

json load_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    json j;
    in >> j;
    return j;
}

void save_json(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json array_entry(const std::string& name, const std::string& dtype,
                 const std::vector<std::size_t>& shape, const fs::path& dir,
                 const std::string& file) {
    return json{{"name", name},
                {"dtype", dtype},
                {"shape", shape},
                {"file", file},
                {"checksum", file_checksum(dir / file)}};
}

void verify_arrays(const json& manifest, const fs::path& dir) {
    for (const auto& entry : manifest.at("arrays")) {
        const std::string file = entry.at("file");
        const std::string expected = entry.at("checksum");
        const std::string actual = file_checksum(dir / file);
        if (expected != actual)
            throw std::runtime_error("checksum mismatch for " + (dir / file).string());
    }
}

} // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    static const auto table = make_crc_table();
    std::uint32_t c = 0xffffffffu;
    for (std::uint8_t b : bytes) c = table[(c ^ b) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

std::string file_checksum(const fs::path& path) {
    const auto bytes = read_bytes(path);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "crc32:%08x", crc32(bytes));
    return buf;
}

void write_f32(const fs::path& path, std::span<const double> values) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(values.size() * 4);
    for (double v : values) push_f32_le(bytes, static_cast<float>(v));
    write_bytes(path, bytes);
}

std::vector<double> read_f32(const fs::path& path, std::size_t expected_count) {
    const auto bytes = read_bytes(path);
    if (bytes.size() != expected_count * 4)
        throw std::runtime_error("unexpected size of " + path.string());
    std::vector<double> out(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i)
        out[i] = static_cast<double>(pop_f32_le(bytes.data() + 4 * i));
    return out;
}

void write_i32(const fs::path& path, std::span<const int> values) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(values.size() * 4);
    for (int v : values) {
        const std::uint32_t u = static_cast<std::uint32_t>(v);
        bytes.push_back(static_cast<std::uint8_t>(u & 0xff));
        bytes.push_back(static_cast<std::uint8_t>((u >> 8) & 0xff));
        bytes.push_back(static_cast<std::uint8_t>((u >> 16) & 0xff));
        bytes.push_back(static_cast<std::uint8_t>((u >> 24) & 0xff));
    }
    write_bytes(path, bytes);
}

std::vector<int> read_i32(const fs::path& path, std::size_t expected_count) {
    const auto bytes = read_bytes(path);
    if (bytes.size() != expected_count * 4)
        throw std::runtime_error("unexpected size of " + path.string());
    std::vector<int> out(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i) {
        const std::uint8_t* p = bytes.data() + 4 * i;
        const std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                                (static_cast<std::uint32_t>(p[1]) << 8) |
                                (static_cast<std::uint32_t>(p[2]) << 16) |
                                (static_cast<std::uint32_t>(p[3]) << 24);
        out[i] = static_cast<int>(u);
    }
    return out;
}

void write_u8(const fs::path& path, std::span<const std::uint8_t> values) {
    write_bytes(path, values);
}

std::vector<std::uint8_t> read_u8(const fs::path& path, std::size_t expected_count) {
    auto bytes = read_bytes(path);
    if (bytes.size() != expected_count)
        throw std::runtime_error("unexpected size of " + path.string());
    return bytes;
}

namespace {

json schedule_to_json(const MolliSchedule& s) {
    return json{{"times_ms", s.times_ms},
                {"ll_labels", s.ll_labels},
                {"scheme", s.scheme},
                {"rr_ms", s.rr_ms},
                {"ti_offsets_ms", s.ti_offsets_ms}};
}

MolliSchedule schedule_from_json(const json& j) {
    MolliSchedule s;
    s.times_ms = j.at("times_ms").get<std::vector<double>>();
    s.ll_labels = j.at("ll_labels").get<std::vector<int>>();
    s.scheme = j.at("scheme");
    s.rr_ms = j.at("rr_ms");
    s.ti_offsets_ms = j.at("ti_offsets_ms").get<std::vector<double>>();
    return s;
}

json range_to_json(const TissueRange& r) {
    return json{{"t1_lo", r.t1_lo}, {"t1_hi", r.t1_hi}, {"k_lo", r.k_lo},
                {"k_hi", r.k_hi},   {"c_lo", r.c_lo},   {"c_hi", r.c_hi}};
}

TissueRange range_from_json(const json& j) {
    return TissueRange{j.at("t1_lo"), j.at("t1_hi"), j.at("k_lo"),
                       j.at("k_hi"),  j.at("c_lo"),  j.at("c_hi")};
}

} // namespace

void write_volume(const fs::path& dir, const PhantomVolume& volume, const PhantomSpec& spec) {
    fs::create_directories(dir);
    const std::size_t nvox = static_cast<std::size_t>(volume.voxel_count());
    const std::size_t ntime = static_cast<std::size_t>(volume.schedule.size());

    std::vector<double> c(nvox), k(nvox), t1s(nvox);
    for (std::size_t v = 0; v < nvox; ++v) {
        c[v] = volume.truth[v].c;
        k[v] = volume.truth[v].k;
        t1s[v] = volume.truth[v].t1_star;
    }
    std::vector<double> sig(nvox * ntime), mag(nvox * ntime);
    for (std::size_t v = 0; v < nvox; ++v)
        for (std::size_t i = 0; i < ntime; ++i) {
            sig[v * ntime + i] = volume.signed_signals(static_cast<long>(v), static_cast<long>(i));
            mag[v * ntime + i] =
                volume.magnitude_signals(static_cast<long>(v), static_cast<long>(i));
        }
    std::vector<std::uint8_t> tissue(nvox);
    for (std::size_t v = 0; v < nvox; ++v)
        tissue[v] = static_cast<std::uint8_t>(volume.tissue[v]);

    write_f32(dir / "truth_c.f32", c);
    write_f32(dir / "truth_k.f32", k);
    write_f32(dir / "truth_t1star.f32", t1s);
    write_f32(dir / "signed.f32", sig);
    write_f32(dir / "magnitude.f32", mag);
    write_u8(dir / "tissue.u8", tissue);
    write_u8(dir / "roi_mask.u8", volume.roi_mask);

    json manifest{
        {"format", "t1map.volume/1"},
        {"dims", volume.dims},
        {"noise_sigma", volume.noise_sigma},
        {"seed", volume.seed},
        {"regime", volume.regime},
        {"tissue_legend",
         {{"0", "background"}, {"1", "myocardium"}, {"2", "blood"}}},
        {"schedule", schedule_to_json(volume.schedule)},
        {"spec",
         {{"regime", spec.regime},
          {"myocardium", range_to_json(spec.myocardium)},
          {"blood", range_to_json(spec.blood)},
          {"blood_radius_frac", spec.blood_radius_frac},
          {"myo_radius_frac", spec.myo_radius_frac},
          {"noise_relative", spec.noise_relative}}},
    };
    manifest["arrays"] = json::array({
        array_entry("truth_c", "f32", {nvox}, dir, "truth_c.f32"),
        array_entry("truth_k", "f32", {nvox}, dir, "truth_k.f32"),
        array_entry("truth_t1star", "f32", {nvox}, dir, "truth_t1star.f32"),
        array_entry("signed", "f32", {nvox, ntime}, dir, "signed.f32"),
        array_entry("magnitude", "f32", {nvox, ntime}, dir, "magnitude.f32"),
        array_entry("tissue", "u8", {nvox}, dir, "tissue.u8"),
        array_entry("roi_mask", "u8", {nvox}, dir, "roi_mask.u8"),
    });
    save_json(dir / "manifest.json", manifest);
}

LoadedVolume read_volume(const fs::path& dir) {
    const json manifest = load_json(dir / "manifest.json");
    if (manifest.at("format") != "t1map.volume/1")
        throw std::runtime_error("not a volume directory: " + dir.string());
    verify_arrays(manifest, dir);

    LoadedVolume loaded;
    PhantomVolume& vol = loaded.volume;
    vol.dims = manifest.at("dims").get<std::array<int, 3>>();
    vol.noise_sigma = manifest.at("noise_sigma");
    vol.seed = manifest.at("seed");
    vol.regime = manifest.at("regime");
    vol.schedule = schedule_from_json(manifest.at("schedule"));

    const std::size_t nvox = static_cast<std::size_t>(vol.voxel_count());
    const std::size_t ntime = static_cast<std::size_t>(vol.schedule.size());
    const auto c = read_f32(dir / "truth_c.f32", nvox);
    const auto k = read_f32(dir / "truth_k.f32", nvox);
    const auto t1s = read_f32(dir / "truth_t1star.f32", nvox);
    vol.truth.resize(nvox);
    for (std::size_t v = 0; v < nvox; ++v) vol.truth[v] = RelaxationParams{c[v], k[v], t1s[v]};
    const auto sig = read_f32(dir / "signed.f32", nvox * ntime);
    const auto mag = read_f32(dir / "magnitude.f32", nvox * ntime);
    vol.signed_signals.resize(static_cast<long>(nvox), static_cast<long>(ntime));
    vol.magnitude_signals.resize(static_cast<long>(nvox), static_cast<long>(ntime));
    for (std::size_t v = 0; v < nvox; ++v)
        for (std::size_t i = 0; i < ntime; ++i) {
            vol.signed_signals(static_cast<long>(v), static_cast<long>(i)) = sig[v * ntime + i];
            vol.magnitude_signals(static_cast<long>(v), static_cast<long>(i)) =
                mag[v * ntime + i];
        }
    const auto tissue = read_u8(dir / "tissue.u8", nvox);
    vol.tissue.resize(nvox);
    for (std::size_t v = 0; v < nvox; ++v) vol.tissue[v] = static_cast<Tissue>(tissue[v]);
    vol.roi_mask = read_u8(dir / "roi_mask.u8", nvox);

    PhantomSpec& spec = loaded.spec;
    const json& js = manifest.at("spec");
    spec.dims = vol.dims;
    spec.regime = js.at("regime");
    spec.myocardium = range_from_json(js.at("myocardium"));
    spec.blood = range_from_json(js.at("blood"));
    spec.blood_radius_frac = js.at("blood_radius_frac");
    spec.myo_radius_frac = js.at("myo_radius_frac");
    spec.noise_relative = js.value("noise_relative", false);
    spec.noise_sigma = vol.noise_sigma;
    spec.schedule = vol.schedule;
    return loaded;
}

void write_labels(const fs::path& dir, const PhantomVolume& volume, const LabelSet& labels) {
    fs::create_directories(dir);
    const std::size_t nvox = static_cast<std::size_t>(volume.voxel_count());
    if (labels.params.size() != nvox || labels.valid.size() != nvox)
        throw std::invalid_argument("labels do not match volume size");
    std::vector<double> c(nvox), k(nvox), t1s(nvox);
    for (std::size_t v = 0; v < nvox; ++v) {
        c[v] = labels.params[v].c;
        k[v] = labels.params[v].k;
        t1s[v] = labels.params[v].t1_star;
    }
    write_f32(dir / "label_c.f32", c);
    write_f32(dir / "label_k.f32", k);
    write_f32(dir / "label_t1star.f32", t1s);
    write_u8(dir / "label_valid.u8", labels.valid);
    json manifest{{"format", "t1map.labels/1"}, {"dims", volume.dims}};
    manifest["arrays"] = json::array({
        array_entry("label_c", "f32", {nvox}, dir, "label_c.f32"),
        array_entry("label_k", "f32", {nvox}, dir, "label_k.f32"),
        array_entry("label_t1star", "f32", {nvox}, dir, "label_t1star.f32"),
        array_entry("label_valid", "u8", {nvox}, dir, "label_valid.u8"),
    });
    save_json(dir / "manifest.json", manifest);
}

LabelSet read_labels(const fs::path& dir, const PhantomVolume& volume) {
    const json manifest = load_json(dir / "manifest.json");
    if (manifest.at("format") != "t1map.labels/1")
        throw std::runtime_error("not a labels directory: " + dir.string());
    const auto dims = manifest.at("dims").get<std::array<int, 3>>();
    if (dims != volume.dims) throw std::runtime_error("labels/volume dimension mismatch");
    verify_arrays(manifest, dir);
    const std::size_t nvox = static_cast<std::size_t>(volume.voxel_count());
    const auto c = read_f32(dir / "label_c.f32", nvox);
    const auto k = read_f32(dir / "label_k.f32", nvox);
    const auto t1s = read_f32(dir / "label_t1star.f32", nvox);
    LabelSet labels;
    labels.params.resize(nvox);
    for (std::size_t v = 0; v < nvox; ++v)
        labels.params[v] = RelaxationParams{c[v], k[v], t1s[v]};
    labels.valid = read_u8(dir / "label_valid.u8", nvox);
    return labels;
}

void write_maps(const fs::path& dir, const VolumeMaps& maps) {
    fs::create_directories(dir);
    const std::size_t nvox = maps.t1_map.size();
    write_f32(dir / "t1_map.f32", maps.t1_map);
    write_i32(dir / "null_index_map.i32", maps.null_index_map);
    write_f32(dir / "residual_map.f32", maps.residual_map);
    write_f32(dir / "c_map.f32", maps.c_map);
    write_f32(dir / "k_map.f32", maps.k_map);
    write_f32(dir / "t1_star_map.f32", maps.t1_star_map);
    write_u8(dir / "valid_mask.u8", maps.valid_mask);
    json arrays = json::array({
        array_entry("t1_map", "f32", {nvox}, dir, "t1_map.f32"),
        array_entry("null_index_map", "i32", {nvox}, dir, "null_index_map.i32"),
        array_entry("residual_map", "f32", {nvox}, dir, "residual_map.f32"),
        array_entry("c_map", "f32", {nvox}, dir, "c_map.f32"),
        array_entry("k_map", "f32", {nvox}, dir, "k_map.f32"),
        array_entry("t1_star_map", "f32", {nvox}, dir, "t1_star_map.f32"),
        array_entry("valid_mask", "u8", {nvox}, dir, "valid_mask.u8"),
    });
    if (!maps.sd_map.empty()) {
        write_f32(dir / "sd_map.f32", maps.sd_map);
        arrays.push_back(array_entry("sd_map", "f32", {nvox}, dir, "sd_map.f32"));
    }
    json manifest{{"format", "t1map.maps/1"},
                  {"dims", maps.dims},
                  {"source", maps.source},
                  {"arrays", arrays}};
    save_json(dir / "manifest.json", manifest);
}

VolumeMaps read_maps(const fs::path& dir) {
    const json manifest = load_json(dir / "manifest.json");
    if (manifest.at("format") != "t1map.maps/1")
        throw std::runtime_error("not a maps directory: " + dir.string());
    verify_arrays(manifest, dir);
    VolumeMaps maps;
    maps.dims = manifest.at("dims").get<std::array<int, 3>>();
    maps.source = manifest.at("source");
    const std::size_t nvox =
        static_cast<std::size_t>(maps.dims[0]) * maps.dims[1] * maps.dims[2];
    maps.t1_map = read_f32(dir / "t1_map.f32", nvox);
    maps.null_index_map = read_i32(dir / "null_index_map.i32", nvox);
    maps.residual_map = read_f32(dir / "residual_map.f32", nvox);
    maps.c_map = read_f32(dir / "c_map.f32", nvox);
    maps.k_map = read_f32(dir / "k_map.f32", nvox);
    maps.t1_star_map = read_f32(dir / "t1_star_map.f32", nvox);
    maps.valid_mask = read_u8(dir / "valid_mask.u8", nvox);
    if (fs::exists(dir / "sd_map.f32")) maps.sd_map = read_f32(dir / "sd_map.f32", nvox);
    return maps;
}

std::string model_kind(const ModelCheckpoint& ckpt) {
    if (std::holds_alternative<LstmOdeModel>(ckpt)) return "lstm_ode";
    const FcnnModel& m = std::get<FcnnModel>(ckpt);
    return m.head == FcnnHead::DirectT1 ? "fcnn_direct" : "fcnn_physics";
}

namespace {

const ParamStore& checkpoint_params(const ModelCheckpoint& ckpt) {
    if (std::holds_alternative<LstmOdeModel>(ckpt)) return std::get<LstmOdeModel>(ckpt).params;
    return std::get<FcnnModel>(ckpt).params;
}

} // namespace

void write_checkpoint(const fs::path& dir, const ModelCheckpoint& ckpt,
                      const std::string& training_metadata_json) {
    fs::create_directories(dir);
    const ParamStore& params = checkpoint_params(ckpt);

    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(params.total_size()));
    json arrays = json::array();
    std::size_t offset = 0;
    for (const auto& [name, m] : params.entries) {
        arrays.push_back(json{{"name", name},
                              {"shape", {m.rows(), m.cols()}},
                              {"offset_floats", offset}});
        // column-major within each array, matching Eigen's layout
        for (long c = 0; c < m.cols(); ++c)
            for (long r = 0; r < m.rows(); ++r) flat.push_back(m(r, c));
        offset += static_cast<std::size_t>(m.size());
    }
    write_f32(dir / "weights.f32", flat);

    json manifest{{"format", "t1map.checkpoint/1"},
                  {"kind", model_kind(ckpt)},
                  {"arrays", arrays},
                  {"weights_file", "weights.f32"},
                  {"checksum", file_checksum(dir / "weights.f32")},
                  {"training", json::parse(training_metadata_json)}};
    if (std::holds_alternative<LstmOdeModel>(ckpt)) {
        const LstmOdeModel& m = std::get<LstmOdeModel>(ckpt);
        manifest["config"] = {{"d_emb", m.config.d_emb},
                              {"hidden", m.config.hidden},
                              {"dyn_hidden", m.config.dyn_hidden},
                              {"dec_hidden", m.config.dec_hidden},
                              {"rtol", m.config.rtol},
                              {"atol", m.config.atol}};
        manifest["s_ref"] = m.s_ref;
        manifest["t_ref"] = m.t_ref;
        manifest["seed"] = m.seed;
    } else {
        const FcnnModel& m = std::get<FcnnModel>(ckpt);
        manifest["config"] = {{"arity", m.config.arity}, {"hidden", m.config.hidden}};
        manifest["s_ref"] = m.s_ref;
        manifest["t_ref"] = m.t_ref;
        manifest["seed"] = m.seed;
    }
    save_json(dir / "manifest.json", manifest);
}

ModelCheckpoint read_checkpoint(const fs::path& dir) {
    const json manifest = load_json(dir / "manifest.json");
    if (manifest.at("format") != "t1map.checkpoint/1")
        throw std::runtime_error("not a checkpoint directory: " + dir.string());
    const std::string weights_file = manifest.at("weights_file");
    const std::string expected = manifest.at("checksum");
    if (file_checksum(dir / weights_file) != expected)
        throw std::runtime_error("checkpoint weights checksum mismatch");
    const std::string kind = manifest.at("kind");

    ModelCheckpoint ckpt;
    if (kind == "lstm_ode") {
        LstmOdeConfig config;
        const json& jc = manifest.at("config");
        config.d_emb = jc.at("d_emb");
        config.hidden = jc.at("hidden");
        config.dyn_hidden = jc.at("dyn_hidden");
        config.dec_hidden = jc.at("dec_hidden");
        config.rtol = jc.at("rtol");
        config.atol = jc.at("atol");
        LstmOdeModel m = LstmOdeModel::init(config, manifest.at("seed"));
        m.s_ref = manifest.at("s_ref");
        m.t_ref = manifest.at("t_ref");
        ckpt = std::move(m);
    } else if (kind == "fcnn_direct" || kind == "fcnn_physics") {
        FcnnConfig config;
        const json& jc = manifest.at("config");
        config.arity = jc.at("arity");
        config.hidden = jc.at("hidden").get<std::vector<int>>();
        FcnnModel m = FcnnModel::init(
            config, kind == "fcnn_direct" ? FcnnHead::DirectT1 : FcnnHead::PhysicsParams,
            manifest.at("seed"));
        m.s_ref = manifest.at("s_ref");
        m.t_ref = manifest.at("t_ref");
        ckpt = std::move(m);
    } else {
        throw std::runtime_error("unknown checkpoint kind '" + kind + "'");
    }

    ParamStore& params = std::holds_alternative<LstmOdeModel>(ckpt)
                             ? std::get<LstmOdeModel>(ckpt).params
                             : std::get<FcnnModel>(ckpt).params;
    std::size_t total = 0;
    for (const auto& [name, m] : params.entries) total += static_cast<std::size_t>(m.size());
    const auto flat = read_f32(dir / weights_file, total);
    for (const auto& entry : manifest.at("arrays")) {
        const std::string name = entry.at("name");
        const std::size_t offset = entry.at("offset_floats");
        Eigen::MatrixXd& m = params.at(name);
        const long rows = entry.at("shape")[0], cols = entry.at("shape")[1];
        if (rows != m.rows() || cols != m.cols())
            throw std::runtime_error("checkpoint array shape mismatch for " + name);
        std::size_t idx = offset;
        for (long c = 0; c < m.cols(); ++c)
            for (long r = 0; r < m.rows(); ++r) m(r, c) = flat[idx++];
    }
    return ckpt;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_loss_csv(const fs::path& path, std::span<const TraceRow> trace) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "epoch,l_t1,l_physics,l_total\n";
    for (const TraceRow& row : trace)
        out << row.epoch << ',' << format_double(row.l_t1) << ','
            << format_double(row.l_physics) << ',' << format_double(row.l_total) << '\n';
}

std::vector<TraceRow> read_loss_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line); // header
    std::vector<TraceRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        TraceRow row;
        std::istringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        row.epoch = std::stoi(field);
        std::getline(ss, field, ',');
        row.l_t1 = std::stod(field);
        std::getline(ss, field, ',');
        row.l_physics = std::stod(field);
        std::getline(ss, field, ',');
        row.l_total = std::stod(field);
        rows.push_back(row);
    }
    return rows;
}

} // namespace t1map::io

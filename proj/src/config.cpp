#include "patchspn/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "patchspn/errors.hpp"
#include "patchspn/rng.hpp"

namespace patchspn {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(static_cast<std::size_t>(std::stoull(item)));
    }
    if (out.empty()) throw ValueError("empty size list");
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path.string());
    RunConfig cfg;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = t.substr(1, t.size() - 2);
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ValueError("config line " + std::to_string(lineno) + " is not key=value: " + t);
        }
        cfg.apply(section, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

void RunConfig::apply(const std::string& section, const std::string& key, const std::string& value) {
    try {
        if (section == "paths") {
            if (key == "data_root") data_root = value;
            else if (key == "output_root") output_root = value;
            else throw ValueError("");
        } else if (section == "seeds") {
            if (key == "global") seed = std::stoull(value);
            else throw ValueError("");
        } else if (section == "ae") {
            if (key == "variant") ae_variant = value;
            else if (key == "epochs") ae_epochs = std::stoull(value);
            else if (key == "lr") ae_lr = std::stod(value);
            else if (key == "batch") ae_batch = std::stoull(value);
            else if (key == "patch") patch_size = std::stoull(value);
            else if (key == "channels") channels = parse_sizes(value);
            else if (key == "latent") latent_dim = std::stoull(value);
            else if (key == "beta") beta = std::stod(value);
            else if (key == "codebook") codebook_size = std::stoull(value);
            else if (key == "embed_dim") embed_dim = std::stoull(value);
            else if (key == "commitment") commitment = std::stod(value);
            else if (key == "residual_blocks") residual_blocks = std::stoull(value);
            else throw ValueError("");
        } else if (section == "spn") {
            if (key == "depth") spn_depth = std::stoull(value);
            else if (key == "replicas") spn_replicas = std::stoull(value);
            else if (key == "inputs") spn_inputs = std::stoull(value);
            else if (key == "sums") spn_sums = std::stoull(value);
            else if (key == "roots") spn_roots = std::stoull(value);
            else if (key == "em_epochs") em_epochs = std::stoull(value);
            else if (key == "em_batch") em_batch = std::stoull(value);
            else if (key == "em_step") em_step = std::stod(value);
            else if (key == "em_mode") em_mode = value;
            else throw ValueError("");
        } else if (section == "pipeline") {
            if (key == "patches_per_image") patches_per_image = std::stoull(value);
            else if (key == "stride") stride = std::stoull(value);
            else if (key == "percentile") percentile = std::stod(value);
            else if (key == "train_frac") train_frac = std::stod(value);
            else throw ValueError("");
        } else if (section == "run") {
            if (key == "threads") threads = std::stoi(value);
            else throw ValueError("");
        } else {
            throw ValueError("unknown config section [" + section + "]");
        }
    } catch (const ValueError& e) {
        if (e.what()[0] != '\0') throw;
        throw ValueError("unknown config key '" + key + "' in section [" + section + "]");
    } catch (const std::exception&) {
        throw ValueError("bad value for config key '" + key + "' in section [" + section + "]: " + value);
    }
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os << "[paths]\n";
    os << "data_root=" << data_root << "\n";
    os << "output_root=" << output_root << "\n";
    os << "[seeds]\n";
    os << "global=" << seed << "\n";
    os << "[ae]\n";
    os << "variant=" << ae_variant << "\n";
    os << "epochs=" << ae_epochs << "\n";
    os << "lr=" << fmt_double(ae_lr) << "\n";
    os << "batch=" << ae_batch << "\n";
    os << "patch=" << patch_size << "\n";
    os << "channels=" << join_sizes(channels) << "\n";
    os << "latent=" << latent_dim << "\n";
    os << "beta=" << fmt_double(beta) << "\n";
    os << "codebook=" << codebook_size << "\n";
    os << "embed_dim=" << embed_dim << "\n";
    os << "commitment=" << fmt_double(commitment) << "\n";
    os << "residual_blocks=" << residual_blocks << "\n";
    os << "[spn]\n";
    os << "depth=" << spn_depth << "\n";
    os << "replicas=" << spn_replicas << "\n";
    os << "inputs=" << spn_inputs << "\n";
    os << "sums=" << spn_sums << "\n";
    os << "roots=" << spn_roots << "\n";
    os << "em_epochs=" << em_epochs << "\n";
    os << "em_batch=" << em_batch << "\n";
    os << "em_step=" << fmt_double(em_step) << "\n";
    os << "em_mode=" << em_mode << "\n";
    os << "[pipeline]\n";
    os << "patches_per_image=" << patches_per_image << "\n";
    os << "stride=" << stride << "\n";
    os << "percentile=" << fmt_double(percentile) << "\n";
    os << "train_frac=" << fmt_double(train_frac) << "\n";
    os << "[run]\n";
    os << "threads=" << threads << "\n";
    return os.str();
}

std::uint64_t RunConfig::config_hash() const {
    const std::string text = to_text();
    return fnv1a64(text.data(), text.size());
}

AeConfig RunConfig::ae_config() const {
    AeConfig cfg;
    cfg.variant = ae_variant_from_string(ae_variant);
    cfg.patch_size = patch_size;
    cfg.channels = channels;
    cfg.latent_dim = latent_dim;
    cfg.beta = beta;
    cfg.codebook_size = codebook_size;
    cfg.embed_dim = embed_dim;
    cfg.commitment = commitment;
    cfg.residual_blocks = residual_blocks;
    return cfg;
}

AeTrainConfig RunConfig::ae_train_config(std::uint64_t stage_seed) const {
    AeTrainConfig cfg = AeTrainConfig::defaults_for(ae_variant_from_string(ae_variant));
    if (ae_epochs > 0) cfg.epochs = ae_epochs;
    if (ae_lr > 0.0) cfg.lr = ae_lr;
    cfg.batch_size = ae_batch;
    cfg.seed = stage_seed;
    return cfg;
}

EmConfig RunConfig::em_config(std::uint64_t stage_seed) const {
    EmConfig cfg;
    cfg.epochs = em_epochs;
    cfg.batch_size = em_batch;
    cfg.step_size = em_step;
    cfg.seed = stage_seed;
    if (em_mode == "full_batch") cfg.mode = EmMode::full_batch;
    else if (em_mode == "stochastic") cfg.mode = EmMode::stochastic;
    else throw ValueError("em_mode must be full_batch or stochastic, got '" + em_mode + "'");
    return cfg;
}

// ------------------------------------------------------------------ digests

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot digest missing file: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof buf);
        const std::streamsize got = is.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// --------------------------------------------------------------- run lock

RunLock::RunLock(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    path_ = dir / ".patchspn.lock";
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (f == nullptr) {
        throw ValueError("run directory " + dir.string() +
                         " is locked by another instance (remove " + path_.string() + " if stale)");
    }
    std::fclose(f);
    held_ = true;
}

RunLock::~RunLock() {
    if (held_) {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
}

// ------------------------------------------------------------ run manifest

RunManifest::RunManifest(std::string command, const RunConfig& cfg)
    : command_(std::move(command)), config_hash_(hex64(cfg.config_hash())), seed_(cfg.seed) {}

void RunManifest::add_input(const std::filesystem::path& path) {
    inputs_.emplace_back(path.string(), hex64(fnv1a64_file(path)));
}

void RunManifest::add_output(const std::filesystem::path& path) {
    outputs_.emplace_back(path.string(), hex64(fnv1a64_file(path)));
}

void RunManifest::write(const std::filesystem::path& dir) const {
    std::ofstream os(dir / "run_manifest.txt");
    if (!os) throw IoError("cannot write run manifest in " + dir.string());
    os << "RUN v1\n";
    os << "command=" << command_ << "\n";
    os << "config_hash=" << config_hash_ << "\n";
    os << "seed=" << seed_ << "\n";
    for (const auto& [p, d] : inputs_) os << "input\t" << p << "\t" << d << "\n";
    for (const auto& [p, d] : outputs_) os << "output\t" << p << "\t" << d << "\n";
}

}  // namespace patchspn

#include "tokendrop/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

namespace tokendrop {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

bool parse_bool(const std::string& v, bool& out) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        out = true;
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        out = false;
        return true;
    }
    return false;
}

}  // namespace

void Config::register_key(const std::string& key, Type t, const std::string& def, const char* help) {
    entries_.emplace(key, Entry{t, def, help});
}

Config Config::defaults() {
    Config c;
    // data
    c.register_key("seed", Type::Int, "1", "master seed for data, init, and training");
    c.register_key("image_size", Type::Int, "32", "square image side in pixels");
    c.register_key("channels", Type::Int, "1", "image channels");
    c.register_key("class_count", Type::Int, "2", "synthetic classes (1..4)");
    c.register_key("region_size", Type::Int, "12", "informative square side in pixels");
    c.register_key("texture_period", Type::Int, "4", "stripe period inside the region");
    c.register_key("train_count", Type::Int, "256", "training samples");
    c.register_key("test_count", Type::Int, "128", "held-out samples");
    // model
    c.register_key("patch_size", Type::Int, "8", "patch side in pixels");
    c.register_key("d_emb", Type::Int, "64", "embedding width");
    c.register_key("heads", Type::Int, "4", "backbone attention heads");
    c.register_key("blocks", Type::Int, "6", "attention+feed-forward block count");
    c.register_key("group_count", Type::Int, "3", "interpreter groups");
    c.register_key("interp_heads", Type::Int, "0", "interpreter heads (0 = same as backbone)");
    c.register_key("interp_bias", Type::Bool, "true", "biases in interpreter projections");
    c.register_key("threshold", Type::Double, "0.5", "keep threshold on informative scores");
    // training
    c.register_key("backbone_epochs", Type::Int, "30", "dense pre-training epochs");
    c.register_key("interpreter_epochs", Type::Int, "10", "policy epochs per group");
    c.register_key("block_epochs", Type::Int, "20", "fine-tune epochs per group");
    c.register_key("batch_size", Type::Int, "16", "mini-batch size");
    c.register_key("lr_backbone", Type::Double, "5e-4", "backbone step size");
    c.register_key("lr_interpreter", Type::Double, "1e-3", "interpreter step size");
    c.register_key("lr_blocks", Type::Double, "4e-5", "fine-tune step size");
    c.register_key("tau", Type::Double, "1.5", "penalty for wrong predictions");
    c.register_key("squared_reward", Type::Bool, "true", "square the keep fraction in the reward");
    // evaluation and sweeps
    c.register_key("drop_ratio", Type::Double, "0.3", "baseline drop fraction");
    c.register_key("attention_block", Type::Int, "1", "block whose class attention ranks tokens");
    c.register_key("sweep_thresholds", Type::String, "0.48,0.49,0.50,0.51,0.52",
                   "thresholds for sweep-threshold");
    c.register_key("sweep_taus", Type::String, "0.5,1.0,1.5", "penalties for sweep-tau");
    c.register_key("prune_ratios", Type::String, "0,0.1,0.2,0.3,0.4,0.5",
                   "ratios for sweep-prune and the combined curve");
    c.register_key("combined_thresholds", Type::String, "0,0.50,0.51,0.52",
                   "thresholds for the combined curve (0 = interpreters off)");
    c.register_key("heat_group", Type::Int, "1", "group whose scores drive heatmaps (0-based)");
    c.register_key("binarize_mode", Type::String, "mean", "heatmap binarization: mean|fixed");
    c.register_key("binarize_threshold", Type::Double, "0.5", "cutoff for binarize_mode=fixed");
    c.register_key("upsample_mode", Type::String, "bilinear", "heatmap upsampling: bilinear|nearest");
    return c;
}

const Config::Entry& Config::entry(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
    return it->second;
}

void Config::set(const std::string& key, const std::string& raw) {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
    const std::string value = trim(raw);
    char* end = nullptr;
    switch (it->second.type) {
        case Type::Int: {
            const long long v = std::strtoll(value.c_str(), &end, 10);
            if (end == value.c_str() || *end != '\0') {
                throw std::invalid_argument("config key '" + key + "' expects an integer, got '" + value + "'");
            }
            (void)v;
            break;
        }
        case Type::Double: {
            std::strtod(value.c_str(), &end);
            if (end == value.c_str() || *end != '\0') {
                throw std::invalid_argument("config key '" + key + "' expects a number, got '" + value + "'");
            }
            break;
        }
        case Type::Bool: {
            bool b;
            if (!parse_bool(value, b)) {
                throw std::invalid_argument("config key '" + key + "' expects a boolean, got '" + value + "'");
            }
            break;
        }
        case Type::String:
            break;
    }
    it->second.value = value;
}

void Config::set_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
        throw std::invalid_argument("expected key=value, got '" + kv + "'");
    }
    set(trim(kv.substr(0, eq)), kv.substr(eq + 1));
}

void Config::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        try {
            set_assignment(t);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

int Config::geti(const std::string& key) const { return static_cast<int>(std::strtoll(entry(key).value.c_str(), nullptr, 10)); }
std::uint64_t Config::getu64(const std::string& key) const {
    return static_cast<std::uint64_t>(std::strtoull(entry(key).value.c_str(), nullptr, 10));
}
double Config::getd(const std::string& key) const { return std::strtod(entry(key).value.c_str(), nullptr); }
bool Config::getb(const std::string& key) const {
    bool b = false;
    parse_bool(entry(key).value, b);
    return b;
}
const std::string& Config::gets(const std::string& key) const { return entry(key).value; }

std::vector<double> Config::get_list(const std::string& key) const {
    const std::string& s = entry(key).value;
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const auto comma = s.find(',', pos);
        const std::string item = trim(s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
        if (!item.empty()) {
            char* end = nullptr;
            const double v = std::strtod(item.c_str(), &end);
            if (end == item.c_str() || *end != '\0') {
                throw std::invalid_argument("config key '" + key + "': bad list entry '" + item + "'");
            }
            out.push_back(v);
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

std::string Config::dump() const {
    std::string out;
    for (const auto& [key, e] : entries_) {
        out += key;
        out += " = ";
        out += e.value;
        out += "\n";
    }
    return out;
}

}  // namespace tokendrop

#include "mdm/config.hpp"

#include "mdm/errors.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace mdm::cli {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const char* end = text.data() + text.size();
    auto res = std::from_chars(text.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end) throw ConfigError("key '" + key + "': not a number: '" + text + "'");
    return v;
}

const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        {"seed", "0"},
        {"out", "out"},
        // data source
        {"data.dir", ""},
        {"data.synthetic", "false"},
        {"synthetic.latent_dim", "8"},
        {"synthetic.d_a", "8"},
        {"synthetic.d_v", "8"},
        {"synthetic.d_l", "8"},
        {"synthetic.seq_len", "1"},
        {"synthetic.loading_scale", "1.0"},
        {"synthetic.noise_a", "1.5"},
        {"synthetic.noise_v", "1.5"},
        {"synthetic.noise_l", "0.6"},
        {"synthetic.label_noise", "0.3"},
        {"synthetic.label_scale", "1.5"},
        {"synthetic.n_train", "2000"},
        {"synthetic.n_val", "500"},
        {"synthetic.n_test", "500"},
        // fusion encoder
        {"encoder.variant", "concat_mlp"},
        {"encoder.hidden", "32"},
        {"encoder.d_in", "16"},
        {"encoder.dropout", "0.2"},
        // critic
        {"critic.output", "auto"},
        {"critic.dropout", "0.4"},
        {"critic.width_scale", "1"},
        {"critic.input", "fused"},
        {"critic.ema_correction", "false"},
        // total loss and optimisation
        {"loss.lambda", "0.1"},
        {"loss.kind", "kl"},
        {"loss.downstream", "l1"},
        {"loss.unroll", "10"},
        {"loss.clip", "0.05"},
        {"train.lr", "0.001"},
        {"train.critic_lr", "auto"},
        {"train.weight_decay", "0.01"},
        {"train.batch_size", "32"},
        {"train.epochs", "40"},
        {"train.patience", "10"},
        {"shuffle.static", "false"},
        // grid runner (train command)
        {"grid.lambdas", ""},
        {"grid.lrs", ""},
        {"grid.kinds", ""},
        {"grid.seeds", "1"},
        // gaussian benchmark
        {"gaussian.d", "5"},
        {"gaussian.variables", "2"},
        {"gaussian.n", "10000"},
        {"gaussian.rhos", "0,0.3,0.5,0.7,0.9"},
        {"gaussian.covariance", ""},
        {"bench.kinds", "kl,f,w"},
        {"bench.steps", "4000"},
        {"bench.batch_size", "256"},
        {"bench.lr", "0.002"},
        {"bench.width_scale", "4"},
        {"bench.dropout", "0"},
        {"bench.clip", "0.05"},
        {"bench.eval_shuffles", "5"},
        {"bench.eval_every", "250"},
        {"bench.w_output", "sigmoid"},
        // evaluation
        {"drop.substitution", "zeros"},
        {"score.k", "5"},
        {"score.split", "test"},
    };
    return d;
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
    it->second = value;
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(std::string_view(body).substr(0, eq));
        const std::string value = trim(std::string_view(body).substr(eq + 1));
        try {
            set(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    load_text(ss.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
    return it->second;
}

double RunConfig::get_double(const std::string& key) const { return parse_double(key, get(key)); }

std::size_t RunConfig::get_size(const std::string& key) const {
    const std::uint64_t v = get_u64(key);
    return static_cast<std::size_t>(v);
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
    const std::string& text = get(key);
    std::uint64_t v = 0;
    const char* end = text.data() + text.size();
    auto res = std::from_chars(text.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end) {
        throw ConfigError("key '" + key + "': not a non-negative integer: '" + text + "'");
    }
    return v;
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& text = get(key);
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError("key '" + key + "': not a boolean: '" + text + "'");
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : split_list(get(key))) out.push_back(parse_double(key, item));
    return out;
}

std::vector<std::string> RunConfig::get_strings(const std::string& key) const { return split_list(get(key)); }

// ---------------------------------------------------------------------------

data::SyntheticTaskSpec synthetic_spec(const RunConfig& c) {
    data::SyntheticTaskSpec s;
    s.latent_dim = c.get_size("synthetic.latent_dim");
    s.d_a = c.get_size("synthetic.d_a");
    s.d_v = c.get_size("synthetic.d_v");
    s.d_l = c.get_size("synthetic.d_l");
    s.seq_len = c.get_size("synthetic.seq_len");
    s.loading_scale = c.get_double("synthetic.loading_scale");
    s.noise_a = c.get_double("synthetic.noise_a");
    s.noise_v = c.get_double("synthetic.noise_v");
    s.noise_l = c.get_double("synthetic.noise_l");
    s.label_noise = c.get_double("synthetic.label_noise");
    s.label_scale = c.get_double("synthetic.label_scale");
    s.n_train = c.get_size("synthetic.n_train");
    s.n_val = c.get_size("synthetic.n_val");
    s.n_test = c.get_size("synthetic.n_test");
    try {
        data::validate(s);
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }
    return s;
}

fusion::FusionEncoderSpec encoder_spec(const RunConfig& c, const data::DatasetShape& shape) {
    fusion::FusionEncoderSpec s;
    s.variant = fusion::parse_variant(c.get("encoder.variant"));
    s.d_a = shape.d_a;
    s.d_v = shape.d_v;
    s.d_l = shape.d_l;
    s.seq_len = std::max<std::size_t>(shape.steps, 1);
    s.hidden = c.get_size("encoder.hidden");
    s.d_in = c.get_size("encoder.d_in");
    s.dropout = c.get_double("encoder.dropout");
    try {
        fusion::validate(s);
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }
    return s;
}

fusion::TotalLossConfig loss_config(const RunConfig& c) {
    fusion::TotalLossConfig l;
    l.lambda = c.get_double("loss.lambda");
    l.kind = est::parse_kind(c.get("loss.kind"));
    l.downstream = fusion::parse_downstream(c.get("loss.downstream"));
    l.unroll = c.get_size("loss.unroll");
    l.clip = c.get_double("loss.clip");
    l.lr = c.get_double("train.lr");
    if (c.get("train.critic_lr") != "auto") l.critic_lr = c.get_double("train.critic_lr");
    l.weight_decay = c.get_double("train.weight_decay");
    l.batch_size = c.get_size("train.batch_size");
    l.epochs = c.get_size("train.epochs");
    l.patience = c.get_size("train.patience");
    l.static_shuffle = c.get_bool("shuffle.static");
    l.ema_correction = c.get_bool("critic.ema_correction");
    const std::string input = c.get("critic.input");
    if (input == "fused") l.critic_input = fusion::CriticInput::Fused;
    else if (input == "raw") l.critic_input = fusion::CriticInput::Raw;
    else throw ConfigError("critic.input must be 'fused' or 'raw'");
    if (c.get("critic.output") != "auto") l.critic_output = est::parse_output(c.get("critic.output"));
    l.critic_dropout = c.get_double("critic.dropout");
    l.critic_width_scale = c.get_size("critic.width_scale");
    try {
        fusion::validate(l);
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }
    return l;
}

fusion::Substitution substitution(const RunConfig& c) {
    const std::string s = c.get("drop.substitution");
    if (s == "zeros") return fusion::Substitution::Zeros;
    if (s == "train_mean") return fusion::Substitution::TrainMean;
    throw ConfigError("drop.substitution must be 'zeros' or 'train_mean'");
}

}  // namespace mdm::cli

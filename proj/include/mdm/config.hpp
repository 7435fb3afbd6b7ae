#pragma once

// Flat key/value run configuration.
//
//   # comment
//   loss.lambda = 0.1
//   critic.output = sigmoid
//
// Every key has a default; unknown keys are rejected. Later sources
// override earlier ones: defaults < file < command-line overrides.

#include "mdm/data.hpp"
#include "mdm/estimators.hpp"
#include "mdm/fusion.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mdm::cli {

class RunConfig {
public:
    RunConfig();

    void load_file(const std::filesystem::path& path);
    /// Parses "key = value" text; `origin` names the source in errors.
    void load_text(const std::string& text, const std::string& origin);
    void set(const std::string& key, const std::string& value);

    [[nodiscard]] bool has_key(const std::string& key) const { return values_.count(key) != 0; }
    [[nodiscard]] const std::string& get(const std::string& key) const;
    [[nodiscard]] double get_double(const std::string& key) const;
    [[nodiscard]] std::size_t get_size(const std::string& key) const;
    [[nodiscard]] std::uint64_t get_u64(const std::string& key) const;
    [[nodiscard]] bool get_bool(const std::string& key) const;
    [[nodiscard]] std::vector<double> get_doubles(const std::string& key) const;
    [[nodiscard]] std::vector<std::string> get_strings(const std::string& key) const;

    [[nodiscard]] const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

data::SyntheticTaskSpec synthetic_spec(const RunConfig& config);
fusion::FusionEncoderSpec encoder_spec(const RunConfig& config, const data::DatasetShape& shape);
fusion::TotalLossConfig loss_config(const RunConfig& config);
fusion::Substitution substitution(const RunConfig& config);

}  // namespace mdm::cli

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "m2t/data.h"
#include "m2t/model.h"
#include "m2t/normalization.h"
#include "m2t/optim.h"

namespace m2t {

enum class TrainMode { byol_m2t, byol_plain, byol_synced, moco };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct DatasetSpec {
    DataSource source = DataSource::synthetic;
    int num_classes = 10;
    std::size_t dim = 32;
    std::size_t per_class = 500;
    double spread = 0.3;
    std::string images;  // idx only
    std::string labels;  // idx only
    double test_fraction = 0.2;
};

struct NetworkSpec {
    std::vector<std::size_t> encoder{32, 64, 64};
    std::vector<std::size_t> projector{64, 64, 32};
    std::vector<std::size_t> predictor{32, 32, 32};

    MlpSpec encoder_spec() const { return MlpSpec::uniform(encoder, false); }
    MlpSpec projector_spec() const { return MlpSpec::uniform(projector, true); }
    MlpSpec predictor_spec() const { return MlpSpec::uniform(predictor, true); }
};

struct MocoSpec {
    std::size_t queue_size = 256;
    double temperature = 0.2;
    double alpha = 0.064;
    double m = 0.01;
    TeacherNorm teacher_bn = TeacherNorm::shuffling;
};

struct ProbeSpec {
    int epochs = 80;
    double lr = 0.5;
    std::size_t batch_size = 256;
};

struct TrainConfig {
    TrainMode mode = TrainMode::byol_m2t;
    std::uint64_t seed = 0;
    int epochs = 30;
    std::size_t batch_size = 128;
    std::size_t workers = 4;

    OptimizerKind optimizer = OptimizerKind::sgd;
    double lr_base = 0.1;
    std::size_t reference_batch = 256;  // lr = lr_base * batch_size / reference_batch
    int warmup_epochs = 2;
    double warmup_factor = 0.001;
    OptimizerHyper optim;

    double m_base = 0.032;
    double alpha_base = 1.0;
    AlphaSemantics alpha_semantics = AlphaSemantics::weight_on_batch;
    double bn_eps = 1e-5;

    /// Override the mode's default BN placement (used by the ablation grid).
    std::optional<StudentNorm> student_bn;
    std::optional<TeacherNorm> teacher_bn;

    std::size_t log_interval = 1;
    /// Write measured seconds per iteration to the metrics CSV. Off by
    /// default so that metrics files are reproducible byte for byte.
    bool record_timing = false;

    DatasetSpec dataset;
    NetworkSpec network;
    AugmentSpec augment;
    MocoSpec moco;
    ProbeSpec probe;

    StudentNorm student_norm() const;
    TeacherNorm teacher_norm() const;
    /// Cross-field checks; throws ConfigError naming the field.
    void validate() const;
};

/// Parses and validates a config document. Unknown keys, wrong types and
/// missing required fields (mode, seed, epochs, batch_size, workers,
/// dataset.source) raise ConfigError with the field path.
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const TrainConfig& c);

/// Applies "a.b.c=value" overrides; the value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides);

TrainConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Training split and held-out split for the configured dataset.
std::pair<Dataset, Dataset> load_dataset(const TrainConfig& c);

}  // namespace m2t

#include "m2t/config.h"

#include <fstream>
#include <set>

#include "m2t/errors.h"

namespace m2t {

using nlohmann::json;

namespace {

std::string join(const std::string& prefix, const std::string& key) { return prefix.empty() ? key : prefix + "." + key; }

// Walks one JSON object, checking types and recording which keys were read
// so that leftovers can be rejected as unknown fields.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

    const json& require(const std::string& key) {
        seen_.insert(key);
        if (!has(key)) throw ConfigError(join(path_, key), "missing required field");
        return j_.at(key);
    }

    template <class T>
    T get(const std::string& key, T fallback) {
        seen_.insert(key);
        if (!has(key)) return fallback;
        return convert<T>(j_.at(key), join(path_, key));
    }

    template <class T>
    T get_required(const std::string& key) {
        return convert<T>(require(key), join(path_, key));
    }

    Reader child(const std::string& key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Reader(has(key) ? j_.at(key) : empty, join(path_, key));
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError(join(path_, k), "unknown field");
        }
    }

    template <class T>
    static T convert(const json& v, const std::string& path) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(path, "expected a string");
            return v.get<std::string>();
        } else if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) throw ConfigError(path, "expected a number");
            return v.get<double>();
        } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
            if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
                throw ConfigError(path, "expected a non-negative integer");
            }
            return v.get<T>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
            return v.get<T>();
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
            if (!v.is_array()) throw ConfigError(path, "expected an array of widths");
            std::vector<std::size_t> out;
            for (std::size_t i = 0; i < v.size(); ++i) {
                out.push_back(convert<std::size_t>(v[i], path + "[" + std::to_string(i) + "]"));
            }
            return out;
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class F>
auto enum_field(const std::string& path, const std::string& value, F parse) {
    try {
        return parse(value);
    } catch (const ValueError& e) {
        throw ConfigError(path, e.what());
    }
}

}  // namespace

std::string to_string(TrainMode m) {
    switch (m) {
        case TrainMode::byol_m2t: return "byol_m2t";
        case TrainMode::byol_plain: return "byol_plain";
        case TrainMode::byol_synced: return "byol_synced";
        case TrainMode::moco: return "moco";
    }
    return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "byol_m2t") return TrainMode::byol_m2t;
    if (s == "byol_plain") return TrainMode::byol_plain;
    if (s == "byol_synced") return TrainMode::byol_synced;
    if (s == "moco") return TrainMode::moco;
    throw ValueError("unknown mode '" + s + "' (expected byol_m2t, byol_plain, byol_synced or moco)");
}

StudentNorm TrainConfig::student_norm() const {
    if (student_bn) return *student_bn;
    return mode == TrainMode::byol_synced ? StudentNorm::synced : StudentNorm::plain;
}

TeacherNorm TrainConfig::teacher_norm() const {
    if (teacher_bn) return *teacher_bn;
    switch (mode) {
        case TrainMode::byol_m2t: return TeacherNorm::momentum;
        case TrainMode::byol_plain: return TeacherNorm::plain;
        case TrainMode::byol_synced: return TeacherNorm::synced;
        case TrainMode::moco: return moco.teacher_bn;
    }
    return TeacherNorm::momentum;
}

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs", "must be >= 0");
    if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
    if (workers == 0) throw ConfigError("workers", "must be positive");
    if (batch_size % workers != 0) throw ConfigError("batch_size", "must be divisible by workers");
    if (!(lr_base >= 0.0)) throw ConfigError("lr_base", "must be >= 0");
    if (reference_batch == 0) throw ConfigError("reference_batch", "must be positive");
    if (warmup_epochs < 0) throw ConfigError("warmup_epochs", "must be >= 0");
    if (epochs > 0 && warmup_epochs >= epochs) throw ConfigError("warmup_epochs", "must be smaller than epochs");
    if (!(warmup_factor > 0.0 && warmup_factor <= 1.0)) throw ConfigError("warmup_factor", "must be in (0, 1]");
    if (!(m_base >= 0.0 && m_base <= 1.0)) throw ConfigError("m_base", "must be in [0, 1]");
    if (!(alpha_base >= 0.0 && alpha_base <= 1.0)) throw ConfigError("alpha_base", "must be in [0, 1]");
    if (!(bn_eps > 0.0)) throw ConfigError("bn_eps", "must be positive");
    if (log_interval == 0) throw ConfigError("log_interval", "must be positive");
    if (!(optim.momentum >= 0.0 && optim.momentum < 1.0)) throw ConfigError("momentum", "must be in [0, 1)");
    if (!(optim.weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be >= 0");
    if (!(optim.lars_eta > 0.0)) throw ConfigError("lars_eta", "must be positive");
    if (dataset.source == DataSource::synthetic) {
        if (dataset.num_classes < 2) throw ConfigError("dataset.num_classes", "must be >= 2");
        if (dataset.dim < 2) throw ConfigError("dataset.dim", "must be >= 2");
        if (dataset.per_class == 0) throw ConfigError("dataset.per_class", "must be positive");
        if (!(dataset.spread >= 0.0)) throw ConfigError("dataset.spread", "must be >= 0");
        if (network.encoder.empty() || network.encoder.front() != dataset.dim) {
            throw ConfigError("network.encoder", "first width must equal dataset.dim");
        }
    } else {
        if (dataset.images.empty()) throw ConfigError("dataset.images", "missing required field");
        if (dataset.labels.empty()) throw ConfigError("dataset.labels", "missing required field");
    }
    if (!(dataset.test_fraction > 0.0 && dataset.test_fraction < 1.0)) {
        throw ConfigError("dataset.test_fraction", "must be in (0, 1)");
    }
    auto check_mlp = [](const std::vector<std::size_t>& w, const char* path) {
        if (w.size() < 2) throw ConfigError(path, "needs at least two widths");
        for (std::size_t x : w)
            if (x == 0) throw ConfigError(path, "widths must be positive");
    };
    check_mlp(network.encoder, "network.encoder");
    check_mlp(network.projector, "network.projector");
    check_mlp(network.predictor, "network.predictor");
    if (network.projector.front() != network.encoder.back()) {
        throw ConfigError("network.projector", "first width must equal the encoder output width");
    }
    if (network.predictor.front() != network.projector.back() || network.predictor.back() != network.projector.back()) {
        throw ConfigError("network.predictor", "must map the projection width to itself");
    }
    try {
        augment.validate();
    } catch (const ValueError& e) {
        throw ConfigError("augment", e.what());
    }
    if (moco.queue_size == 0) throw ConfigError("moco.queue_size", "must be positive");
    if (!(moco.temperature > 0.0)) throw ConfigError("moco.temperature", "must be positive");
    if (!(moco.alpha >= 0.0 && moco.alpha <= 1.0)) throw ConfigError("moco.alpha", "must be in [0, 1]");
    if (!(moco.m >= 0.0 && moco.m <= 1.0)) throw ConfigError("moco.m", "must be in [0, 1]");
    if (probe.epochs < 1) throw ConfigError("probe.epochs", "must be >= 1");
    if (probe.batch_size == 0) throw ConfigError("probe.batch_size", "must be positive");
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    Reader r(j, "");
    c.mode = enum_field("mode", r.get_required<std::string>("mode"), train_mode_from_string);
    c.seed = r.get_required<std::uint64_t>("seed");
    c.epochs = r.get_required<int>("epochs");
    c.batch_size = r.get_required<std::size_t>("batch_size");
    c.workers = r.get_required<std::size_t>("workers");
    c.optimizer = enum_field("optimizer", r.get<std::string>("optimizer", to_string(c.optimizer)),
                             optimizer_from_string);
    c.lr_base = r.get("lr_base", c.lr_base);
    c.reference_batch = r.get("reference_batch", c.reference_batch);
    c.warmup_epochs = r.get("warmup_epochs", c.warmup_epochs);
    c.warmup_factor = r.get("warmup_factor", c.warmup_factor);
    c.optim.momentum = r.get("momentum", c.optim.momentum);
    c.optim.weight_decay = r.get("weight_decay", c.optim.weight_decay);
    c.optim.lars_eta = r.get("lars_eta", c.optim.lars_eta);
    c.optim.exclude_bias_and_bn = r.get("exclude_bias_and_bn", c.optim.exclude_bias_and_bn);
    c.m_base = r.get("m_base", c.m_base);
    c.alpha_base = r.get("alpha_base", c.alpha_base);
    c.alpha_semantics = enum_field("alpha_semantics",
                                   r.get<std::string>("alpha_semantics", to_string(c.alpha_semantics)),
                                   alpha_semantics_from_string);
    c.bn_eps = r.get("bn_eps", c.bn_eps);
    if (r.has("student_bn")) {
        c.student_bn = enum_field("student_bn", r.get<std::string>("student_bn", ""), student_norm_from_string);
    } else {
        r.get<std::string>("student_bn", "");
    }
    if (r.has("teacher_bn")) {
        c.teacher_bn = enum_field("teacher_bn", r.get<std::string>("teacher_bn", ""), teacher_norm_from_string);
    } else {
        r.get<std::string>("teacher_bn", "");
    }
    c.log_interval = r.get("log_interval", c.log_interval);
    c.record_timing = r.get("record_timing", c.record_timing);

    {
        Reader d = r.child("dataset");
        if (!r.has("dataset")) throw ConfigError("dataset", "missing required field");
        const std::string src = d.get_required<std::string>("source");
        if (src == "synthetic") {
            c.dataset.source = DataSource::synthetic;
        } else if (src == "idx") {
            c.dataset.source = DataSource::idx_file;
        } else {
            throw ConfigError("dataset.source", "expected synthetic or idx, got '" + src + "'");
        }
        c.dataset.num_classes = d.get("num_classes", c.dataset.num_classes);
        c.dataset.dim = d.get("dim", c.dataset.dim);
        c.dataset.per_class = d.get("per_class", c.dataset.per_class);
        c.dataset.spread = d.get("spread", c.dataset.spread);
        c.dataset.images = d.get("images", c.dataset.images);
        c.dataset.labels = d.get("labels", c.dataset.labels);
        c.dataset.test_fraction = d.get("test_fraction", c.dataset.test_fraction);
        d.finish();
    }
    {
        Reader n = r.child("network");
        c.network.encoder = n.get("encoder", c.network.encoder);
        c.network.projector = n.get("projector", c.network.projector);
        c.network.predictor = n.get("predictor", c.network.predictor);
        n.finish();
    }
    {
        Reader a = r.child("augment");
        c.augment.noise_std = a.get("noise_std", c.augment.noise_std);
        c.augment.mask_prob = a.get("mask_prob", c.augment.mask_prob);
        c.augment.scale_lo = a.get("scale_lo", c.augment.scale_lo);
        c.augment.scale_hi = a.get("scale_hi", c.augment.scale_hi);
        c.augment.flip = a.get("flip", c.augment.flip);
        c.augment.crop_pad = a.get("crop_pad", c.augment.crop_pad);
        c.augment.solarize_prob_student = a.get("solarize_prob_student", c.augment.solarize_prob_student);
        c.augment.solarize_prob_teacher = a.get("solarize_prob_teacher", c.augment.solarize_prob_teacher);
        c.augment.solarize_threshold = a.get("solarize_threshold", c.augment.solarize_threshold);
        a.finish();
    }
    {
        Reader m = r.child("moco");
        c.moco.queue_size = m.get("queue_size", c.moco.queue_size);
        c.moco.temperature = m.get("temperature", c.moco.temperature);
        c.moco.alpha = m.get("alpha", c.moco.alpha);
        c.moco.m = m.get("m", c.moco.m);
        c.moco.teacher_bn = enum_field("moco.teacher_bn",
                                       m.get<std::string>("teacher_bn", to_string(c.moco.teacher_bn)),
                                       teacher_norm_from_string);
        m.finish();
    }
    {
        Reader p = r.child("probe");
        c.probe.epochs = p.get("epochs", c.probe.epochs);
        c.probe.lr = p.get("lr", c.probe.lr);
        c.probe.batch_size = p.get("batch_size", c.probe.batch_size);
        p.finish();
    }
    r.finish();
    c.validate();
    return c;
}

json config_to_json(const TrainConfig& c) {
    json j;
    j["mode"] = to_string(c.mode);
    j["seed"] = c.seed;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["workers"] = c.workers;
    j["optimizer"] = to_string(c.optimizer);
    j["lr_base"] = c.lr_base;
    j["reference_batch"] = c.reference_batch;
    j["warmup_epochs"] = c.warmup_epochs;
    j["warmup_factor"] = c.warmup_factor;
    j["momentum"] = c.optim.momentum;
    j["weight_decay"] = c.optim.weight_decay;
    j["lars_eta"] = c.optim.lars_eta;
    j["exclude_bias_and_bn"] = c.optim.exclude_bias_and_bn;
    j["m_base"] = c.m_base;
    j["alpha_base"] = c.alpha_base;
    j["alpha_semantics"] = to_string(c.alpha_semantics);
    j["bn_eps"] = c.bn_eps;
    j["student_bn"] = c.student_bn ? json(to_string(*c.student_bn)) : json(nullptr);
    j["teacher_bn"] = c.teacher_bn ? json(to_string(*c.teacher_bn)) : json(nullptr);
    j["log_interval"] = c.log_interval;
    j["record_timing"] = c.record_timing;
    j["dataset"] = {
        {"source", c.dataset.source == DataSource::synthetic ? "synthetic" : "idx"},
        {"num_classes", c.dataset.num_classes},
        {"dim", c.dataset.dim},
        {"per_class", c.dataset.per_class},
        {"spread", c.dataset.spread},
        {"images", c.dataset.images},
        {"labels", c.dataset.labels},
        {"test_fraction", c.dataset.test_fraction},
    };
    j["network"] = {
        {"encoder", c.network.encoder}, {"projector", c.network.projector}, {"predictor", c.network.predictor}};
    j["augment"] = {
        {"noise_std", c.augment.noise_std},
        {"mask_prob", c.augment.mask_prob},
        {"scale_lo", c.augment.scale_lo},
        {"scale_hi", c.augment.scale_hi},
        {"flip", c.augment.flip},
        {"crop_pad", c.augment.crop_pad},
        {"solarize_prob_student", c.augment.solarize_prob_student},
        {"solarize_prob_teacher", c.augment.solarize_prob_teacher},
        {"solarize_threshold", c.augment.solarize_threshold},
    };
    j["moco"] = {
        {"queue_size", c.moco.queue_size},
        {"temperature", c.moco.temperature},
        {"alpha", c.moco.alpha},
        {"m", c.moco.m},
        {"teacher_bn", to_string(c.moco.teacher_bn)},
    };
    j["probe"] = {{"epochs", c.probe.epochs}, {"lr", c.probe.lr}, {"batch_size", c.probe.batch_size}};
    return j;
}

void apply_overrides(json& j, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError(o, "override must look like key=value");
        const std::string key = o.substr(0, eq);
        const std::string raw = o.substr(eq + 1);
        json value = json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;
        json* node = &j;
        std::size_t start = 0;
        while (true) {
            const auto dot = key.find('.', start);
            const std::string part = key.substr(start, dot - start);
            if (dot == std::string::npos) {
                (*node)[part] = value;
                break;
            }
            if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
            node = &(*node)[part];
            start = dot + 1;
        }
    }
}

TrainConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string(), "cannot open config file");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError(path.string(), "not valid JSON");
    apply_overrides(j, overrides);
    return config_from_json(j);
}

std::pair<Dataset, Dataset> load_dataset(const TrainConfig& c) {
    Dataset full = c.dataset.source == DataSource::synthetic
                       ? synth_clusters(c.dataset.num_classes, c.dataset.dim, c.dataset.per_class, c.dataset.spread,
                                        c.seed)
                       : load_idx(c.dataset.images, c.dataset.labels);
    full.validate();
    return train_test_split(full, c.dataset.test_fraction, c.seed);
}

}  // namespace m2t

#include "m2t/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "m2t/errors.h"

namespace m2t {

namespace {

constexpr char kMagic[8] = {'M', '2', 'T', 'C', 'K', 'P', 'T', '\0'};

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Parser {
public:
    explicit Parser(const std::vector<std::uint8_t>& b) : b_(b) {}

    void need(std::size_t n, const char* what) const {
        if (pos_ + n > b_.size()) throw FormatError(std::string("truncated checkpoint reading ") + what, pos_);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[pos_ + i]} << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{b_[pos_ + i]} << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
    std::string str(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == b_.size(); }

private:
    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 0;
};

NamedArray from_tensor(std::string name, const Tensor& t) {
    return {std::move(name), t.shape(), {t.values().begin(), t.values().end()}};
}

}  // namespace

const NamedArray& Checkpoint::array(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return a;
    throw Error("checkpoint has no array '" + name + "'");
}

std::vector<std::string> expected_array_names(const MlpSpec& encoder) {
    std::vector<std::string> names;
    for (std::size_t l = 0; l < encoder.layers(); ++l) {
        const std::string base = "encoder." + std::to_string(l);
        names.push_back(base + ".weight");
        names.push_back(base + ".bias");
        if (encoder.use_bn[l]) {
            names.push_back(base + ".bn.gamma");
            names.push_back(base + ".bn.beta");
            names.push_back(base + ".bn.hist_mean");
            names.push_back(base + ".bn.hist_var");
        }
    }
    return names;
}

Checkpoint checkpoint_from_encoder(const Mlp& encoder, AlphaSemantics semantics) {
    Checkpoint ck;
    ck.encoder = encoder.spec;
    ck.alpha_semantics = semantics;
    for (std::size_t l = 0; l < encoder.layers.size(); ++l) {
        const Layer& layer = encoder.layers[l];
        const std::string base = "encoder." + std::to_string(l);
        ck.arrays.push_back(from_tensor(base + ".weight", layer.weight));
        ck.arrays.push_back(from_tensor(base + ".bias", layer.bias));
        if (layer.norm) {
            ck.bn_eps = layer.norm->eps;
            ck.arrays.push_back(from_tensor(base + ".bn.gamma", layer.norm->gamma));
            ck.arrays.push_back(from_tensor(base + ".bn.beta", layer.norm->beta));
            const std::size_t c = layer.norm->channels();
            std::vector<double> mean(c, 0.0), var(c, 1.0);
            if (layer.momentum) {
                mean = layer.momentum->hist_mean;
                var = layer.momentum->hist_var;
            }
            ck.arrays.push_back({base + ".bn.hist_mean", {1, c}, std::move(mean)});
            ck.arrays.push_back({base + ".bn.hist_var", {1, c}, std::move(var)});
        }
    }
    return ck;
}

Checkpoint dump_teacher(const StudentTeacherPair& pair) {
    AlphaSemantics semantics = AlphaSemantics::weight_on_batch;
    for (const auto& l : pair.teacher_encoder.layers)
        if (l.momentum) semantics = l.momentum->semantics;
    return checkpoint_from_encoder(pair.teacher_encoder, semantics);
}

Mlp encoder_from_checkpoint(const Checkpoint& ck) {
    ck.encoder.validate();
    Mlp mlp;
    mlp.spec = ck.encoder;
    for (std::size_t l = 0; l < ck.encoder.layers(); ++l) {
        const std::string base = "encoder." + std::to_string(l);
        const std::size_t in = ck.encoder.widths[l], out = ck.encoder.widths[l + 1];
        auto load = [&](const std::string& name, Shape shape) {
            const NamedArray& a = ck.array(name);
            if (a.shape != shape) {
                throw DimensionError("checkpoint array " + name + " has shape " + shape_str(a.shape) + ", expected " +
                                     shape_str(shape));
            }
            return a.values;
        };
        Layer layer;
        layer.weight = Tensor::from({in, out}, load(base + ".weight", {in, out}));
        layer.bias = Tensor::from({1, out}, load(base + ".bias", {1, out}));
        if (ck.encoder.use_bn[l]) {
            layer.norm = NormParams{Tensor::from({1, out}, load(base + ".bn.gamma", {1, out})),
                                    Tensor::from({1, out}, load(base + ".bn.beta", {1, out})), ck.bn_eps};
            MomentumBNState s;
            s.hist_mean = load(base + ".bn.hist_mean", {1, out});
            s.hist_var = load(base + ".bn.hist_var", {1, out});
            s.initialized = true;
            s.semantics = ck.alpha_semantics;
            layer.momentum = std::move(s);
        }
        layer.relu = ck.encoder.use_relu[l];
        mlp.layers.push_back(std::move(layer));
    }
    return mlp;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
    nlohmann::json header;
    header["encoder"] = {{"widths", ck.encoder.widths},
                         {"use_bn", ck.encoder.use_bn},
                         {"use_relu", ck.encoder.use_relu}};
    header["bn_eps"] = ck.bn_eps;
    header["alpha_semantics"] = to_string(ck.alpha_semantics);
    std::vector<std::size_t> channels;
    for (std::size_t l = 0; l < ck.encoder.layers(); ++l)
        if (ck.encoder.use_bn[l]) channels.push_back(ck.encoder.widths[l + 1]);
    header["channels"] = channels;

    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(ck.version);
    w.str(header.dump());
    w.u32(static_cast<std::uint32_t>(ck.arrays.size()));
    for (const auto& a : ck.arrays) {
        w.str(a.name);
        w.u32(static_cast<std::uint32_t>(a.shape.size()));
        for (std::size_t d : a.shape) w.u64(d);
        for (double v : a.values) w.f64(v);
    }
    return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Parser r(bytes);
    r.need(sizeof kMagic, "magic");
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw FormatError("not a checkpoint (bad magic)", 0);
    r.u64("magic");

    Checkpoint ck;
    const std::size_t version_offset = r.pos();
    ck.version = r.u32("version");
    if (ck.version != kCheckpointVersion) {
        throw VersionError("unsupported checkpoint version " + std::to_string(ck.version) + " (this build reads " +
                           std::to_string(kCheckpointVersion) + ", offset " + std::to_string(version_offset) + ")");
    }
    const std::size_t header_offset = r.pos();
    const nlohmann::json header = nlohmann::json::parse(r.str("header"), nullptr, false);
    if (header.is_discarded() || !header.is_object()) throw FormatError("checkpoint header is not JSON", header_offset);
    try {
        ck.encoder.widths = header.at("encoder").at("widths").get<std::vector<std::size_t>>();
        ck.encoder.use_bn = header.at("encoder").at("use_bn").get<std::vector<bool>>();
        ck.encoder.use_relu = header.at("encoder").at("use_relu").get<std::vector<bool>>();
        ck.bn_eps = header.at("bn_eps").get<double>();
        ck.alpha_semantics = alpha_semantics_from_string(header.at("alpha_semantics").get<std::string>());
        ck.encoder.validate();
    } catch (const std::exception& e) {
        throw FormatError(std::string("bad checkpoint header: ") + e.what(), header_offset);
    }

    const std::uint32_t count = r.u32("array count");
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray a;
        a.name = r.str("array name");
        const std::uint32_t rank = r.u32("array rank");
        for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(r.u64("array dims"));
        const std::size_t n = shape_numel(a.shape);
        r.need(n * 8, "array values");
        a.values.resize(n);
        for (double& v : a.values) v = r.f64("array values");
        ck.arrays.push_back(std::move(a));
    }
    if (!r.done()) throw FormatError("trailing bytes after checkpoint arrays", r.pos());

    std::vector<std::string> got;
    for (const auto& a : ck.arrays) got.push_back(a.name);
    if (got != expected_array_names(ck.encoder)) {
        throw FormatError("checkpoint array set does not match the encoder spec", header_offset);
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    const auto bytes = encode_checkpoint(ck);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_checkpoint(bytes);
}

}  // namespace m2t

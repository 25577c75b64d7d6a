#include "m2t/model.h"

#include <cmath>

#include "m2t/errors.h"

namespace m2t {

MlpSpec MlpSpec::uniform(std::vector<std::size_t> widths, bool plain_last) {
    MlpSpec s;
    s.widths = std::move(widths);
    const std::size_t n = s.layers();
    s.use_bn.assign(n, true);
    s.use_relu.assign(n, true);
    if (plain_last && n > 0) {
        s.use_bn.back() = false;
        s.use_relu.back() = false;
    }
    return s;
}

void MlpSpec::validate() const {
    if (widths.size() < 2) throw ValueError("MLP needs at least one layer (two widths)");
    for (std::size_t w : widths) {
        if (w == 0) throw ValueError("MLP widths must be >= 1");
    }
    if (use_bn.size() != layers() || use_relu.size() != layers()) {
        throw ValueError("MLP flags must have one entry per layer");
    }
}

Mlp Mlp::init(const MlpSpec& spec, Rng& rng, bool requires_grad) {
    spec.validate();
    Mlp mlp;
    mlp.spec = spec;
    for (std::size_t l = 0; l < spec.layers(); ++l) {
        const std::size_t in = spec.widths[l], out = spec.widths[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        std::vector<double> w(in * out);
        for (double& v : w) v = rng.uniform(-bound, bound);
        Layer layer;
        layer.weight = Tensor::from({in, out}, std::move(w), requires_grad);
        layer.bias = Tensor::zeros({1, out}, requires_grad);
        if (spec.use_bn[l]) layer.norm = NormParams::identity(out, requires_grad);
        layer.relu = spec.use_relu[l];
        mlp.layers.push_back(std::move(layer));
    }
    return mlp;
}

std::vector<Mlp::Param> Mlp::parameters(const std::string& prefix) const {
    std::vector<Param> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string base = prefix + "." + std::to_string(l);
        out.push_back({base + ".weight", layers[l].weight, false});
        out.push_back({base + ".bias", layers[l].bias, true});
        if (layers[l].norm) {
            out.push_back({base + ".bn.gamma", layers[l].norm->gamma, true});
            out.push_back({base + ".bn.beta", layers[l].norm->beta, true});
        }
    }
    return out;
}

std::string to_string(StudentNorm n) { return n == StudentNorm::plain ? "plain" : "synced"; }

std::string to_string(TeacherNorm n) {
    switch (n) {
        case TeacherNorm::plain: return "plain";
        case TeacherNorm::synced: return "synced";
        case TeacherNorm::momentum: return "momentum";
        case TeacherNorm::shuffling: return "shuffling";
    }
    return "?";
}

StudentNorm student_norm_from_string(const std::string& s) {
    if (s == "plain") return StudentNorm::plain;
    if (s == "synced") return StudentNorm::synced;
    throw ValueError("unknown student BN '" + s + "' (expected plain or synced)");
}

TeacherNorm teacher_norm_from_string(const std::string& s) {
    if (s == "plain") return TeacherNorm::plain;
    if (s == "synced") return TeacherNorm::synced;
    if (s == "momentum") return TeacherNorm::momentum;
    if (s == "shuffling") return TeacherNorm::shuffling;
    throw ValueError("unknown teacher BN '" + s + "' (expected plain, synced, momentum or shuffling)");
}

namespace {

Mlp teacher_copy(const Mlp& student, AlphaSemantics semantics) {
    Mlp t;
    t.spec = student.spec;
    for (const auto& sl : student.layers) {
        Layer tl;
        tl.weight = sl.weight.clone(false);
        tl.bias = sl.bias.clone(false);
        if (sl.norm) {
            tl.norm = NormParams{sl.norm->gamma.clone(false), sl.norm->beta.clone(false), sl.norm->eps};
            tl.momentum = MomentumBNState::fresh(sl.norm->channels(), semantics);
        }
        tl.relu = sl.relu;
        t.layers.push_back(std::move(tl));
    }
    return t;
}

void check_input(const Mlp& mlp, const Tensor& x) {
    if (x.rank() != 2 || x.cols() != mlp.spec.input_width()) {
        throw DimensionError("MLP expects input width " + std::to_string(mlp.spec.input_width()) + ", got " +
                             shape_str(x.shape()));
    }
}

Tensor linear(const Layer& l, const Tensor& x) { return matmul(x, l.weight) + l.bias; }

void ema_tensor(Tensor& teacher, const Tensor& student, double m) {
    auto t = teacher.mutable_values();
    auto s = student.values();
    if (m == 1.0) {
        std::copy(s.begin(), s.end(), t.begin());
        return;
    }
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = (1.0 - m) * t[i] + m * s[i];
}

void ema_mlp(Mlp& teacher, const Mlp& student, double m) {
    for (std::size_t l = 0; l < teacher.layers.size(); ++l) {
        ema_tensor(teacher.layers[l].weight, student.layers[l].weight, m);
        ema_tensor(teacher.layers[l].bias, student.layers[l].bias, m);
        if (teacher.layers[l].norm) {
            ema_tensor(teacher.layers[l].norm->gamma, student.layers[l].norm->gamma, m);
            ema_tensor(teacher.layers[l].norm->beta, student.layers[l].norm->beta, m);
        }
    }
}

}  // namespace

StudentTeacherPair StudentTeacherPair::init(const MlpSpec& encoder, const MlpSpec& projector,
                                            const MlpSpec& predictor, Rng& rng, AlphaSemantics semantics) {
    if (encoder.output_width() != projector.input_width() || projector.output_width() != predictor.input_width()) {
        throw DimensionError("encoder/projector/predictor widths do not chain");
    }
    if (predictor.output_width() != projector.output_width()) {
        throw DimensionError("predictor must map back to the projection width");
    }
    StudentTeacherPair pair;
    pair.student_encoder = Mlp::init(encoder, rng, true);
    pair.student_projector = Mlp::init(projector, rng, true);
    pair.student_predictor = Mlp::init(predictor, rng, true);
    pair.teacher_encoder = teacher_copy(pair.student_encoder, semantics);
    pair.teacher_projector = teacher_copy(pair.student_projector, semantics);
    return pair;
}

std::vector<Mlp::Param> StudentTeacherPair::student_parameters() const {
    auto out = student_encoder.parameters("encoder");
    for (auto& p : student_projector.parameters("projector")) out.push_back(std::move(p));
    for (auto& p : student_predictor.parameters("predictor")) out.push_back(std::move(p));
    return out;
}

std::vector<Mlp::Param> StudentTeacherPair::teacher_parameters() const {
    auto out = teacher_encoder.parameters("encoder");
    for (auto& p : teacher_projector.parameters("projector")) out.push_back(std::move(p));
    return out;
}

std::vector<MomentumBNState*> StudentTeacherPair::teacher_bn_states() {
    std::vector<MomentumBNState*> out;
    for (Mlp* mlp : {&teacher_encoder, &teacher_projector})
        for (auto& l : mlp->layers)
            if (l.momentum) out.push_back(&*l.momentum);
    return out;
}

std::vector<const MomentumBNState*> StudentTeacherPair::teacher_bn_states() const {
    std::vector<const MomentumBNState*> out;
    for (const Mlp* mlp : {&teacher_encoder, &teacher_projector})
        for (const auto& l : mlp->layers)
            if (l.momentum) out.push_back(&*l.momentum);
    return out;
}

bool StudentTeacherPair::teacher_has_grad() const {
    for (const auto& p : teacher_parameters()) {
        if (p.tensor.requires_grad() || p.tensor.has_grad()) return true;
    }
    return false;
}

Tensor mlp_forward_student(const Mlp& mlp, const Tensor& x, const WorkerLayout& layout, StudentNorm norm) {
    check_input(mlp, x);
    Tensor h = x;
    for (const auto& l : mlp.layers) {
        h = linear(l, h);
        if (l.norm) {
            h = norm == StudentNorm::plain ? plain_bn_forward(h, layout, *l.norm) : synced_bn_forward(h, layout, *l.norm);
        }
        if (l.relu) h = relu(h);
    }
    return h;
}

Tensor mlp_forward_teacher(Mlp& mlp, const Tensor& x, const WorkerLayout& layout, const TeacherForwardOptions& opt,
                           const std::string& name) {
    check_input(mlp, x);
    if (x.rows() != layout.batch_size()) {
        throw DimensionError("teacher batch of " + std::to_string(x.rows()) + " rows vs layout of " +
                             std::to_string(layout.batch_size()));
    }
    NoGradGuard guard;
    Tensor h = x;
    for (std::size_t li = 0; li < mlp.layers.size(); ++li) {
        Layer& l = mlp.layers[li];
        h = linear(l, h);
        if (l.norm) {
            const std::string lname = name + "." + std::to_string(li);
            std::vector<BatchStats> worker_stats;
            std::vector<Tensor> outs;
            for (std::size_t w = 0; w < layout.num_workers(); ++w) {
                const auto [b, e] = layout.range(w);
                Tensor slice = slice_rows(h, b, e);
                if (opt.norm == TeacherNorm::momentum) {
                    MomentumBNOutput r = momentum_bn_forward(slice, *l.momentum, opt.alpha, *l.norm);
                    if (opt.trace) opt.trace->push_back({opt.view, lname, w, r.batch, r.used});
                    worker_stats.push_back(std::move(r.batch));
                    outs.push_back(std::move(r.output));
                } else {
                    worker_stats.push_back(batch_stats(slice));
                }
            }
            switch (opt.norm) {
                case TeacherNorm::momentum: h = concat_rows(outs); break;
                case TeacherNorm::plain: h = plain_bn_forward(h, layout, *l.norm); break;
                case TeacherNorm::synced: h = synced_bn_forward(h, layout, *l.norm); break;
                case TeacherNorm::shuffling:
                    h = shuffling_bn_forward(h, layout, *l.norm, opt.shuffle_seed + li);
                    break;
            }
            l.momentum->pending.push_back(average_stats(worker_stats));
        }
        if (l.relu) h = relu(h);
    }
    return h;
}

Tensor mlp_forward_inference(const Mlp& mlp, const Tensor& x) {
    check_input(mlp, x);
    NoGradGuard guard;
    Tensor h = x;
    for (const auto& l : mlp.layers) {
        h = linear(l, h);
        if (l.norm) {
            if (!l.momentum) throw Error("inference forward needs stored BN statistics");
            const BatchStats hist{l.momentum->hist_mean, l.momentum->hist_var, 1};
            h = bn_apply(h, hist, *l.norm);
        }
        if (l.relu) h = relu(h);
    }
    return h;
}

StudentOutput forward_student(const StudentTeacherPair& pair, const Tensor& v, const WorkerLayout& layout,
                              StudentNorm norm) {
    Tensor z = mlp_forward_student(pair.student_projector,
                                   mlp_forward_student(pair.student_encoder, v, layout, norm), layout, norm);
    Tensor p = mlp_forward_student(pair.student_predictor, z, layout, norm);
    return {std::move(z), std::move(p)};
}

Tensor forward_teacher(StudentTeacherPair& pair, const Tensor& v, const WorkerLayout& layout,
                       const TeacherForwardOptions& opt) {
    TeacherForwardOptions proj_opt = opt;
    proj_opt.shuffle_seed = opt.shuffle_seed + 1000;
    Tensor y = mlp_forward_teacher(pair.teacher_encoder, v, layout, opt, "encoder");
    return mlp_forward_teacher(pair.teacher_projector, y, layout, proj_opt, "projector");
}

void ema_update(StudentTeacherPair& pair, double m) {
    if (!(m >= 0.0 && m <= 1.0)) throw ValueError("EMA coefficient m must be in [0, 1], got " + std::to_string(m));
    if (m == 0.0) return;
    ema_mlp(pair.teacher_encoder, pair.student_encoder, m);
    ema_mlp(pair.teacher_projector, pair.student_projector, m);
}

double commit_teacher_bn(StudentTeacherPair& pair, double alpha) {
    double drift2 = 0.0;
    for (MomentumBNState* s : pair.teacher_bn_states()) {
        const double d = commit_pending(*s, alpha);
        drift2 += d * d;
    }
    return std::sqrt(drift2);
}

}  // namespace m2t

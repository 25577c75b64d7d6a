#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "m2t/gradcheck.h"
#include "m2t/normalization.h"
#include "m2t/rng.h"
#include "m2t/tensor.h"

namespace m2t {

/// Widths (input, hidden..., output) and per-layer BN / ReLU flags.
struct MlpSpec {
    std::vector<std::size_t> widths;
    std::vector<bool> use_bn;    // one per layer
    std::vector<bool> use_relu;  // one per layer

    /// Every layer BN+ReLU except, when `plain_last`, the last one (linear only).
    static MlpSpec uniform(std::vector<std::size_t> widths, bool plain_last);

    std::size_t layers() const { return widths.empty() ? 0 : widths.size() - 1; }
    std::size_t input_width() const { return widths.front(); }
    std::size_t output_width() const { return widths.back(); }
    void validate() const;

    bool operator==(const MlpSpec&) const = default;
};

struct Layer {
    Tensor weight;  // [in x out]
    Tensor bias;    // [1 x out]
    std::optional<NormParams> norm;
    std::optional<MomentumBNState> momentum;  // teacher only
    bool relu = false;
};

struct Mlp {
    MlpSpec spec;
    std::vector<Layer> layers;

    /// Glorot-uniform weights, zero bias, gamma = 1, beta = 0.
    static Mlp init(const MlpSpec& spec, Rng& rng, bool requires_grad);

    /// Parameters in a fixed order. `excluded` marks biases and BN gamma/beta.
    struct Param {
        std::string name;
        Tensor tensor;
        bool excluded;
    };
    std::vector<Param> parameters(const std::string& prefix) const;
};

/// How student BN layers compute statistics.
enum class StudentNorm { plain, synced };
/// How teacher BN layers compute statistics.
enum class TeacherNorm { plain, synced, momentum, shuffling };

std::string to_string(StudentNorm n);
std::string to_string(TeacherNorm n);
StudentNorm student_norm_from_string(const std::string& s);
TeacherNorm teacher_norm_from_string(const std::string& s);

/// Per teacher BN layer and worker slice: the statistics that were measured
/// and the ones that normalized the slice.
struct TeacherTraceEntry {
    int view = 0;
    std::string layer;
    std::size_t worker = 0;
    BatchStats batch;
    BatchStats used;
};
using TeacherTrace = std::vector<TeacherTraceEntry>;

struct StudentTeacherPair {
    Mlp student_encoder;    // f_theta
    Mlp student_projector;  // g_theta
    Mlp student_predictor;  // q_theta
    Mlp teacher_encoder;    // f_xi
    Mlp teacher_projector;  // g_xi

    /// Student from `rng`; teacher starts as an exact copy with fresh
    /// (uninitialized) momentum histories and no gradient tracking.
    static StudentTeacherPair init(const MlpSpec& encoder, const MlpSpec& projector, const MlpSpec& predictor,
                                   Rng& rng, AlphaSemantics semantics);

    std::vector<Mlp::Param> student_parameters() const;
    std::vector<Mlp::Param> teacher_parameters() const;
    /// Teacher momentum BN states in encoder-then-projector order.
    std::vector<MomentumBNState*> teacher_bn_states();
    std::vector<const MomentumBNState*> teacher_bn_states() const;
    /// True if any teacher parameter is tracked or holds a gradient buffer.
    bool teacher_has_grad() const;
};

/// Student MLP forward. Statistics per worker slice (plain) or over the
/// union (synced); the full tape is recorded.
Tensor mlp_forward_student(const Mlp& mlp, const Tensor& x, const WorkerLayout& layout, StudentNorm norm);

struct TeacherForwardOptions {
    TeacherNorm norm = TeacherNorm::momentum;
    double alpha = 1.0;
    std::uint64_t shuffle_seed = 0;
    int view = 0;
    TeacherTrace* trace = nullptr;
};

/// Teacher MLP forward without gradient tracking. Each BN layer stages the
/// view's statistics (average over worker slices) in its momentum state for
/// the lazy commit; the history itself is not modified.
Tensor mlp_forward_teacher(Mlp& mlp, const Tensor& x, const WorkerLayout& layout,
                           const TeacherForwardOptions& opt, const std::string& name);

/// Forward with BN layers normalizing by their stored history only
/// (inference mode, per-sample affine).
Tensor mlp_forward_inference(const Mlp& mlp, const Tensor& x);

struct StudentOutput {
    Tensor projection;  // z = g(f(v))
    Tensor prediction;  // p = q(z)
};

StudentOutput forward_student(const StudentTeacherPair& pair, const Tensor& v, const WorkerLayout& layout,
                              StudentNorm norm = StudentNorm::plain);

/// z' = g_xi(f_xi(v')).
Tensor forward_teacher(StudentTeacherPair& pair, const Tensor& v, const WorkerLayout& layout,
                       const TeacherForwardOptions& opt);

/// xi <- (1 - m) xi + m theta for every teacher weight, bias, gamma and beta.
/// Momentum BN histories are left alone. Throws ValueError unless 0 <= m <= 1.
void ema_update(StudentTeacherPair& pair, double m);

/// Commits every teacher BN layer's staged statistics. Returns the L2 norm of
/// the combined history change.
double commit_teacher_bn(StudentTeacherPair& pair, double alpha);

}  // namespace m2t

#pragma once

#include <cstddef>
#include <cstdint>

#include "m2t/checkpoint.h"
#include "m2t/config.h"
#include "m2t/data.h"

namespace m2t {

/// Threads for feature extraction: M2T_THREADS if set (>= 1), else 1.
std::size_t worker_threads();

/// Frozen encoder applied to every row, BN layers using their stored
/// histories. Labels and metadata are carried over; image_shape is dropped.
Dataset extract_features(const Mlp& encoder, const Dataset& d);
Dataset extract_features(const Checkpoint& ck, const Dataset& d);

struct ProbeResult {
    double test_acc = 0.0;
    double train_acc = 0.0;
    double final_loss = 0.0;
};

/// BN (statistics fixed to the training features, learnable gamma/beta)
/// followed by one linear layer, trained with SGD momentum 0.9, no weight
/// decay and cosine lr. Throws ValueError if the training labels hold fewer
/// than two classes.
ProbeResult linear_probe(const Dataset& train, const Dataset& test, const ProbeSpec& spec, std::uint64_t seed);

/// Cosine-similarity k-NN vote. Among equally similar neighbours the lower
/// index comes first; vote ties go to the lower class. Throws ValueError when
/// k is 0 or exceeds the training set.
double knn_eval(const Dataset& train, const Dataset& test, std::size_t k);

/// Predicted labels of knn_eval, one per test row.
std::vector<int> knn_predict(const Dataset& train, const Dataset& test, std::size_t k);

}  // namespace m2t

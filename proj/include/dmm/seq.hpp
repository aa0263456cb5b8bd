#pragma once

#include <cstddef>
#include <vector>

#include "dmm/tensor.hpp"

namespace dmm {

/// Per-timestep diagonal-Gaussian parameters over latents: the output of both
/// the inference networks and the exact smoother. means/vars are [T x d].
struct GaussianSeq {
    Tensor means;
    Tensor vars;

    std::size_t T() const { return means.rank() == 2 ? means.dim(0) : 0; }
    std::size_t dim() const { return means.rank() == 2 ? means.dim(1) : 0; }
};

/// One observed sequence. x and mask are [T x obs_dim]; u (actions) is
/// [T x action_dim] when present; z_star holds ground-truth latents
/// [T x latent_dim] for synthetic data. Empty tensors mean "absent";
/// an absent mask means fully observed.
struct Sequence {
    Tensor x;
    Tensor mask;
    Tensor u;
    Tensor z_star;

    std::size_t T() const { return x.rank() == 2 ? x.dim(0) : 0; }
    bool has_mask() const { return mask.numel() != 0; }
    bool has_u() const { return u.numel() != 0; }
    bool has_z_star() const { return z_star.numel() != 0; }
};

/// A dataset: sequences plus the dims they share. Sequences may differ in T.
struct SequenceBatch {
    std::vector<Sequence> seqs;
    std::size_t obs_dim = 0;
    std::size_t action_dim = 0;

    std::size_t size() const { return seqs.size(); }
};

}  // namespace dmm

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tabledet/checkpoint.hpp"
#include "tabledet/conv.hpp"
#include "tabledet/tensor.hpp"

namespace tabledet {

struct StageSpec {
    int out_channels = 0;
    int num_blocks = 1;
    bool downsample = false;
    bool deformable = false;
};

struct GroupNormLayer {
    Tensor gamma;  // init 1
    Tensor beta;   // init 0
    int groups = 1;

    Tensor forward(const Tensor& x) const { return group_norm(x, gamma, beta, groups); }
};

GroupNormLayer make_group_norm(int channels);

// conv -> groupnorm -> add skip -> relu; the 3x3 becomes deformable (with
// its own zero-initialised offset head) when the stage asks for it. Group
// normalisation keeps batch-1 from-scratch training stable.
struct ResidualBlock {
    ConvKernel conv;
    GroupNormLayer norm;
    std::optional<OffsetHead> offset_head;
    std::optional<ConvKernel> skip_proj;  // 1x1, present when shape changes
    std::optional<GroupNormLayer> skip_norm;

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

struct Stage {
    StageSpec spec;
    std::vector<ResidualBlock> blocks;

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

Stage make_stage(int in_ch, const StageSpec& spec, SplitMix64& rng);
inline Tensor stage_forward(const Tensor& x, const Stage& stage) { return stage.forward(x); }

struct Backbone {
    std::vector<Stage> stages;

    std::vector<Tensor> forward(const Tensor& image) const;  // per-stage outputs
    void collect(const std::string& prefix, NamedParams& out) const;
};

Backbone make_backbone(int in_ch, const std::vector<StageSpec>& specs, SplitMix64& rng);

// Assistant + lead twin backbones. From stage 2 on, the lead stage input is
// its own previous output plus g(assistant stage output), where g is a
// zero-initialised 1x1 projection followed by a nearest-neighbour resize.
// With g at zero (or enabled=false) the lead runs exactly alone.
struct CompositeBackbone {
    Backbone lead;
    Backbone assistant;
    std::vector<ConvKernel> g_projections;  // one per stage >= 2
    bool enabled = true;

    std::vector<Tensor> forward(const Tensor& image) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

CompositeBackbone make_composite_backbone(int in_ch, const std::vector<StageSpec>& specs,
                                          bool enabled, SplitMix64& rng);

inline std::vector<Tensor> composite_forward(const Tensor& image, const CompositeBackbone& cb) {
    return cb.forward(image);
}

struct FeaturePyramid {
    std::vector<Tensor> levels;  // fine to coarse
    std::vector<int> strides;    // strictly increasing
};

// Lateral 1x1 to a common width, top-down nearest upsample + add, then a
// 3x3 smoothing conv (group-normalised) per level.
struct Fpn {
    std::vector<ConvKernel> lateral;
    std::vector<ConvKernel> smooth;
    std::vector<GroupNormLayer> smooth_norm;
    std::vector<int> strides;
    int out_channels = 0;

    FeaturePyramid forward(const std::vector<Tensor>& stage_outputs) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

Fpn make_fpn(const std::vector<int>& in_channels, const std::vector<int>& strides,
             int out_channels, SplitMix64& rng);

inline FeaturePyramid fpn_forward(const std::vector<Tensor>& stage_outputs, const Fpn& fpn) {
    return fpn.forward(stage_outputs);
}

}  // namespace tabledet

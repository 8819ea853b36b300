#include "tabledet/backbone.hpp"

#include <stdexcept>
#include <string>

namespace tabledet {

namespace {

// Resizes src to the reference spatial size. Identity when already equal,
// error when the ratio is not a whole number in both axes.
Tensor match_spatial(const Tensor& src, int ref_h, int ref_w, const char* who) {
    int h = src.dim(1), w = src.dim(2);
    if (h == ref_h && w == ref_w) return src;
    if (ref_h % h != 0 || ref_w % w != 0)
        throw std::runtime_error(std::string(who) + ": cannot reconcile " + std::to_string(h) +
                                 "x" + std::to_string(w) + " with " + std::to_string(ref_h) + "x" +
                                 std::to_string(ref_w) + " (non-integer resize ratio)");
    return upsample_nearest(src, ref_h, ref_w);
}

}  // namespace

GroupNormLayer make_group_norm(int channels) {
    GroupNormLayer gn;
    gn.gamma = Tensor::full({channels}, 1.0, true);
    gn.beta = Tensor::zeros({channels}, true);
    gn.groups = std::min(8, channels);
    while (channels % gn.groups != 0) --gn.groups;
    return gn;
}

Tensor ResidualBlock::forward(const Tensor& x) const {
    Tensor main;
    if (offset_head) {
        Tensor off = offset_field(*offset_head, x);
        main = deform_conv2d(x, conv, off);
    } else {
        main = conv2d(x, conv);
    }
    main = norm.forward(main);
    Tensor shortcut = x;
    if (skip_proj) shortcut = skip_norm->forward(conv2d(x, *skip_proj));
    return relu(add(main, shortcut));
}

void ResidualBlock::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".conv.w", conv.w);
    out.emplace_back(prefix + ".conv.b", conv.b);
    out.emplace_back(prefix + ".gn.g", norm.gamma);
    out.emplace_back(prefix + ".gn.b", norm.beta);
    if (offset_head) {
        out.emplace_back(prefix + ".off.w", offset_head->conv.w);
        out.emplace_back(prefix + ".off.b", offset_head->conv.b);
    }
    if (skip_proj) {
        out.emplace_back(prefix + ".skip.w", skip_proj->w);
        out.emplace_back(prefix + ".skip.b", skip_proj->b);
        out.emplace_back(prefix + ".skipgn.g", skip_norm->gamma);
        out.emplace_back(prefix + ".skipgn.b", skip_norm->beta);
    }
}

Tensor Stage::forward(const Tensor& x) const {
    Tensor h = x;
    for (const auto& block : blocks) h = block.forward(h);
    return h;
}

void Stage::collect(const std::string& prefix, NamedParams& out) const {
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect(prefix + ".b" + std::to_string(i), out);
}

Stage make_stage(int in_ch, const StageSpec& spec, SplitMix64& rng) {
    if (spec.out_channels <= 0 || spec.num_blocks < 1)
        throw std::invalid_argument("bad stage spec");
    Stage stage;
    stage.spec = spec;
    int ch = in_ch;
    for (int b = 0; b < spec.num_blocks; ++b) {
        int stride = (b == 0 && spec.downsample) ? 2 : 1;
        ResidualBlock block;
        block.conv = make_conv_kernel(spec.out_channels, ch, 3, 3, stride, 1, WeightInit::Xavier, &rng);
        block.norm = make_group_norm(spec.out_channels);
        if (spec.deformable)
            block.offset_head = make_offset_head(ch, 3, 3, stride, 1);
        if (ch != spec.out_channels || stride != 1) {
            block.skip_proj =
                make_conv_kernel(spec.out_channels, ch, 1, 1, stride, 0, WeightInit::Xavier, &rng);
            block.skip_norm = make_group_norm(spec.out_channels);
        }
        stage.blocks.push_back(std::move(block));
        ch = spec.out_channels;
    }
    return stage;
}

std::vector<Tensor> Backbone::forward(const Tensor& image) const {
    std::vector<Tensor> outs;
    outs.reserve(stages.size());
    Tensor x = image;
    for (const auto& stage : stages) {
        x = stage.forward(x);
        outs.push_back(x);
    }
    return outs;
}

void Backbone::collect(const std::string& prefix, NamedParams& out) const {
    for (size_t i = 0; i < stages.size(); ++i)
        stages[i].collect(prefix + ".s" + std::to_string(i + 1), out);
}

Backbone make_backbone(int in_ch, const std::vector<StageSpec>& specs, SplitMix64& rng) {
    Backbone bb;
    int ch = in_ch;
    for (const auto& spec : specs) {
        bb.stages.push_back(make_stage(ch, spec, rng));
        ch = spec.out_channels;
    }
    return bb;
}

std::vector<Tensor> CompositeBackbone::forward(const Tensor& image) const {
    if (!enabled) return lead.forward(image);
    if (assistant.stages.size() != lead.stages.size())
        throw std::runtime_error("assistant/lead stage geometry differs");

    std::vector<Tensor> assist_outs = assistant.forward(image);
    std::vector<Tensor> outs;
    outs.reserve(lead.stages.size());
    Tensor x = image;
    for (size_t l = 0; l < lead.stages.size(); ++l) {
        if (l >= 1) {
            Tensor proj = conv2d(assist_outs[l], g_projections[l - 1]);
            proj = match_spatial(proj, x.dim(1), x.dim(2), "composite connection");
            x = add(x, proj);
        }
        x = lead.stages[l].forward(x);
        outs.push_back(x);
    }
    return outs;
}

void CompositeBackbone::collect(const std::string& prefix, NamedParams& out) const {
    lead.collect(prefix + ".lead", out);
    if (enabled) {
        assistant.collect(prefix + ".assistant", out);
        for (size_t i = 0; i < g_projections.size(); ++i) {
            out.emplace_back(prefix + ".g" + std::to_string(i + 2) + ".w", g_projections[i].w);
            out.emplace_back(prefix + ".g" + std::to_string(i + 2) + ".b", g_projections[i].b);
        }
    }
}

CompositeBackbone make_composite_backbone(int in_ch, const std::vector<StageSpec>& specs,
                                          bool enabled, SplitMix64& rng) {
    CompositeBackbone cb;
    cb.enabled = enabled;
    cb.lead = make_backbone(in_ch, specs, rng);
    if (enabled) {
        cb.assistant = make_backbone(in_ch, specs, rng);
        // g: assistant stage-l output channels -> lead stage-l input channels,
        // zero so step 0 degenerates to the single-backbone forward
        for (size_t l = 1; l < specs.size(); ++l) {
            int lead_in = specs[l - 1].out_channels;
            cb.g_projections.push_back(
                make_conv_kernel(lead_in, specs[l].out_channels, 1, 1, 1, 0, WeightInit::Zero, nullptr));
        }
    }
    return cb;
}

FeaturePyramid Fpn::forward(const std::vector<Tensor>& stage_outputs) const {
    if (stage_outputs.size() < 2) throw std::invalid_argument("fpn needs at least 2 levels");
    if (stage_outputs.size() != lateral.size())
        throw std::invalid_argument("fpn level count mismatch");

    std::vector<Tensor> lat(stage_outputs.size());
    for (size_t i = 0; i < stage_outputs.size(); ++i) lat[i] = conv2d(stage_outputs[i], lateral[i]);

    std::vector<Tensor> td(lat.size());
    td.back() = lat.back();
    for (int i = static_cast<int>(lat.size()) - 2; i >= 0; --i) {
        Tensor up = match_spatial(td[static_cast<size_t>(i) + 1], lat[static_cast<size_t>(i)].dim(1),
                                  lat[static_cast<size_t>(i)].dim(2), "fpn top-down");
        td[static_cast<size_t>(i)] = add(lat[static_cast<size_t>(i)], up);
    }

    FeaturePyramid pyr;
    pyr.strides = strides;
    for (size_t i = 0; i < td.size(); ++i)
        pyr.levels.push_back(smooth_norm[i].forward(conv2d(td[i], smooth[i])));
    return pyr;
}

void Fpn::collect(const std::string& prefix, NamedParams& out) const {
    for (size_t i = 0; i < lateral.size(); ++i) {
        out.emplace_back(prefix + ".lat" + std::to_string(i) + ".w", lateral[i].w);
        out.emplace_back(prefix + ".lat" + std::to_string(i) + ".b", lateral[i].b);
        out.emplace_back(prefix + ".smooth" + std::to_string(i) + ".w", smooth[i].w);
        out.emplace_back(prefix + ".smooth" + std::to_string(i) + ".b", smooth[i].b);
        out.emplace_back(prefix + ".smoothgn.g" + std::to_string(i), smooth_norm[i].gamma);
        out.emplace_back(prefix + ".smoothgn.b" + std::to_string(i), smooth_norm[i].beta);
    }
}

Fpn make_fpn(const std::vector<int>& in_channels, const std::vector<int>& strides,
             int out_channels, SplitMix64& rng) {
    if (in_channels.size() != strides.size())
        throw std::invalid_argument("fpn channel/stride count mismatch");
    for (size_t i = 1; i < strides.size(); ++i)
        if (strides[i] <= strides[i - 1])
            throw std::invalid_argument("fpn strides must strictly increase");
    Fpn fpn;
    fpn.strides = strides;
    fpn.out_channels = out_channels;
    for (int c : in_channels) {
        fpn.lateral.push_back(make_conv_kernel(out_channels, c, 1, 1, 1, 0, WeightInit::Xavier, &rng));
        fpn.smooth.push_back(
            make_conv_kernel(out_channels, out_channels, 3, 3, 1, 1, WeightInit::Xavier, &rng));
        fpn.smooth_norm.push_back(make_group_norm(out_channels));
    }
    return fpn;
}

}  // namespace tabledet

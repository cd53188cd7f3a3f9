// SPDX-License-Identifier: Apache-2.0
#include "senet/arch.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace senet {

using nlohmann::json;

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Linear: return "linear";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::Relu: return "relu";
        case LayerKind::Pool: return "pool";
        case LayerKind::ResidualAdd: return "residual-add";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
    if (name == "conv") return LayerKind::Conv;
    if (name == "linear") return LayerKind::Linear;
    if (name == "batchnorm") return LayerKind::BatchNorm;
    if (name == "relu") return LayerKind::Relu;
    if (name == "pool") return LayerKind::Pool;
    if (name == "residual-add") return LayerKind::ResidualAdd;
    if (name == "flatten") return LayerKind::Flatten;
    throw ValidationError("unknown layer kind '" + name + "'");
}

namespace {

std::string format_rate(double r) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), r);
    (void)ec;
    return std::string(buf, end);
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ValidationError(where + ": unknown key '" + it.key() + "'");
        }
    }
}

} // namespace

void ModelSpec::validate() const {
    if (in_channels <= 0 || in_height <= 0 || in_width <= 0) {
        throw ValidationError("model spec: input_shape must be positive");
    }
    if (class_count <= 0) throw ValidationError("model spec: classes must be positive");
    if (layers.empty()) throw ValidationError("model spec: no layers");
    if (dropout_rates.empty()) throw ValidationError("model spec: dropout_rates empty");
    for (std::size_t i = 0; i < dropout_rates.size(); ++i) {
        const double r = dropout_rates[i];
        if (r <= 0.0 || r > 1.0) {
            throw ValidationError("model spec: dropout rate " + format_rate(r) + " outside (0,1]");
        }
        if (i > 0 && dropout_rates[i] <= dropout_rates[i - 1]) {
            throw ValidationError("model spec: dropout_rates must be strictly increasing");
        }
    }
    if (dropout_rates.back() != 1.0) {
        throw ValidationError("model spec: dropout_rates must contain 1.0");
    }
    std::set<std::string> names;
    for (const auto& l : layers) {
        if (l.name.empty()) throw ValidationError("model spec: layer with empty name");
        if (!names.insert(l.name).second) {
            throw ValidationError("model spec: duplicate layer name '" + l.name + "'");
        }
    }
    const LayerSpec& last = layers.back();
    if (last.kind != LayerKind::Linear || last.features != class_count) {
        throw ValidationError("model spec: final layer must be a linear layer with features == classes");
    }
    propagate_shapes(*this);
}

std::map<std::string, LayerShape> propagate_shapes(const ModelSpec& spec) {
    std::map<std::string, LayerShape> shapes;
    LayerShape input_shape{spec.in_channels, spec.in_height, spec.in_width, false};
    std::string prev = "@input";
    shapes["@input"] = input_shape;

    auto resolve = [&](const std::string& ref, const std::string& who) -> const LayerShape& {
        const std::string key = ref.empty() ? prev : ref;
        auto it = shapes.find(key);
        if (it == shapes.end()) {
            throw ValidationError("layer '" + who + "': input '" + key + "' not defined before it");
        }
        return it->second;
    };

    for (const auto& l : spec.layers) {
        const LayerShape in = resolve(l.input, l.name);
        LayerShape out;
        switch (l.kind) {
            case LayerKind::Conv: {
                if (in.flat) throw ValidationError("layer '" + l.name + "': conv on flattened input");
                if (l.out_channels <= 0 || l.kernel <= 0) {
                    throw ValidationError("layer '" + l.name + "': conv needs out_channels and kernel");
                }
                if (in.h + 2 * l.padding < l.kernel || in.w + 2 * l.padding < l.kernel) {
                    throw ValidationError("layer '" + l.name + "': kernel " + std::to_string(l.kernel) +
                                          " exceeds padded input " + std::to_string(in.h) + "x" +
                                          std::to_string(in.w));
                }
                out.c = l.out_channels;
                out.h = (in.h + 2 * l.padding - l.kernel) / l.stride + 1;
                out.w = (in.w + 2 * l.padding - l.kernel) / l.stride + 1;
                break;
            }
            case LayerKind::Linear: {
                if (!in.flat) {
                    throw ValidationError("layer '" + l.name + "': linear needs a flattened input");
                }
                if (l.features <= 0) throw ValidationError("layer '" + l.name + "': features missing");
                out = LayerShape{l.features, 0, 0, true};
                break;
            }
            case LayerKind::BatchNorm:
            case LayerKind::Relu: {
                out = in;
                break;
            }
            case LayerKind::Pool: {
                if (in.flat) throw ValidationError("layer '" + l.name + "': pool on flattened input");
                if (l.pool_global) {
                    out = LayerShape{in.c, 0, 0, true};
                } else {
                    if (in.h < l.pool_size || in.w < l.pool_size) {
                        throw ValidationError("layer '" + l.name + "': pool window larger than input");
                    }
                    out.c = in.c;
                    out.h = (in.h - l.pool_size) / l.pool_stride + 1;
                    out.w = (in.w - l.pool_size) / l.pool_stride + 1;
                }
                break;
            }
            case LayerKind::ResidualAdd: {
                const LayerShape b = resolve(l.input2, l.name);
                if (in.c != b.c || in.h != b.h || in.w != b.w || in.flat != b.flat) {
                    throw ValidationError("layer '" + l.name + "': residual operands disagree in shape");
                }
                out = in;
                break;
            }
            case LayerKind::Flatten: {
                if (in.flat) throw ValidationError("layer '" + l.name + "': flatten of flattened input");
                out = LayerShape{in.c * in.h * in.w, 0, 0, true};
                break;
            }
        }
        shapes[l.name] = out;
        prev = l.name;
    }
    return shapes;
}

std::vector<ReluShape> relu_shapes(const ModelSpec& spec) {
    auto shapes = propagate_shapes(spec);
    std::vector<ReluShape> out;
    std::string prev = "@input";
    for (const auto& l : spec.layers) {
        const std::string key = l.input.empty() ? prev : l.input;
        if (l.kind == LayerKind::Relu) {
            const LayerShape& s = shapes.at(key);
            if (s.flat) {
                out.push_back({l.name, 1, 1, s.c});
            } else {
                out.push_back({l.name, s.h, s.w, s.c});
            }
        }
        prev = l.name;
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> relu_parameter_pairing(const ModelSpec& spec) {
    std::vector<std::pair<std::string, std::string>> pairing;
    std::string last_param;
    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::Conv || l.kind == LayerKind::Linear) {
            last_param = l.name;
        } else if (l.kind == LayerKind::Relu) {
            if (last_param.empty()) {
                throw ValidationError("relu layer '" + l.name + "' has no preceding conv/linear layer");
            }
            pairing.emplace_back(l.name, last_param);
        }
    }
    return pairing;
}

// --- JSON ---

ModelSpec model_spec_from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("model spec: JSON parse error: ") + e.what());
    }
    check_keys(doc, {"input_shape", "classes", "dropout_rates", "layers"}, "model spec");
    ModelSpec spec;
    try {
        const auto& ishape = doc.at("input_shape");
        if (!ishape.is_array() || ishape.size() != 3) {
            throw ValidationError("model spec: input_shape must be [C,H,W]");
        }
        spec.in_channels = ishape[0].get<int>();
        spec.in_height = ishape[1].get<int>();
        spec.in_width = ishape[2].get<int>();
        spec.class_count = doc.at("classes").get<int>();
        if (doc.contains("dropout_rates")) {
            spec.dropout_rates = doc["dropout_rates"].get<std::vector<double>>();
        }
        for (const auto& jl : doc.at("layers")) {
            LayerSpec l;
            l.kind = layer_kind_from_name(jl.at("kind").get<std::string>());
            l.name = jl.at("name").get<std::string>();
            switch (l.kind) {
                case LayerKind::Conv:
                    check_keys(jl, {"kind", "name", "input", "out_channels", "kernel", "stride", "padding"},
                               "layer '" + l.name + "'");
                    l.out_channels = jl.at("out_channels").get<int>();
                    l.kernel = jl.at("kernel").get<int>();
                    l.stride = jl.value("stride", 1);
                    l.padding = jl.value("padding", 0);
                    break;
                case LayerKind::Linear:
                    check_keys(jl, {"kind", "name", "input", "features"}, "layer '" + l.name + "'");
                    l.features = jl.at("features").get<int>();
                    break;
                case LayerKind::Pool:
                    check_keys(jl, {"kind", "name", "input", "op", "size", "stride", "global"},
                               "layer '" + l.name + "'");
                    {
                        const std::string op = jl.value("op", std::string("max"));
                        if (op == "max") {
                            l.pool_max = true;
                        } else if (op == "avg") {
                            l.pool_max = false;
                        } else {
                            throw ValidationError("layer '" + l.name + "': pool op must be max|avg");
                        }
                    }
                    l.pool_global = jl.value("global", false);
                    l.pool_size = jl.value("size", 2);
                    l.pool_stride = jl.value("stride", 2);
                    if (l.pool_global && l.pool_max) {
                        throw ValidationError("layer '" + l.name + "': global pooling is avg only");
                    }
                    break;
                case LayerKind::ResidualAdd:
                    check_keys(jl, {"kind", "name", "inputs"}, "layer '" + l.name + "'");
                    {
                        const auto& ins = jl.at("inputs");
                        if (!ins.is_array() || ins.size() != 2) {
                            throw ValidationError("layer '" + l.name + "': residual-add needs inputs [a,b]");
                        }
                        l.input = ins[0].get<std::string>();
                        l.input2 = ins[1].get<std::string>();
                    }
                    break;
                case LayerKind::BatchNorm:
                case LayerKind::Relu:
                case LayerKind::Flatten:
                    check_keys(jl, {"kind", "name", "input"}, "layer '" + l.name + "'");
                    break;
            }
            if (l.kind != LayerKind::ResidualAdd) {
                l.input = jl.value("input", std::string());
            }
            spec.layers.push_back(std::move(l));
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("model spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

std::string model_spec_to_json_text(const ModelSpec& spec) {
    json doc;
    doc["input_shape"] = {spec.in_channels, spec.in_height, spec.in_width};
    doc["classes"] = spec.class_count;
    doc["dropout_rates"] = spec.dropout_rates;
    doc["layers"] = json::array();
    for (const auto& l : spec.layers) {
        json jl;
        jl["kind"] = layer_kind_name(l.kind);
        jl["name"] = l.name;
        switch (l.kind) {
            case LayerKind::Conv:
                jl["out_channels"] = l.out_channels;
                jl["kernel"] = l.kernel;
                jl["stride"] = l.stride;
                jl["padding"] = l.padding;
                break;
            case LayerKind::Linear:
                jl["features"] = l.features;
                break;
            case LayerKind::Pool:
                jl["op"] = l.pool_max ? "max" : "avg";
                if (l.pool_global) {
                    jl["global"] = true;
                } else {
                    jl["size"] = l.pool_size;
                    jl["stride"] = l.pool_stride;
                }
                break;
            case LayerKind::ResidualAdd:
                jl["inputs"] = {l.input, l.input2};
                break;
            default:
                break;
        }
        if (l.kind != LayerKind::ResidualAdd && !l.input.empty()) {
            jl["input"] = l.input;
        }
        doc["layers"].push_back(std::move(jl));
    }
    return doc.dump(2) + "\n";
}

ModelSpec load_model_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open model spec " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return model_spec_from_json_text(text);
}

void save_model_spec(const ModelSpec& spec, const std::string& path) {
    const std::string text = model_spec_to_json_text(spec);
    write_file_atomic(path, text.data(), text.size());
}

// --- Model ---

int Model::active_channels(double d_r, int full) {
    const int ac = static_cast<int>(std::ceil(d_r * full - 1e-9));
    return std::min(full, std::max(1, ac));
}

int Model::rate_index(double d_r) const {
    for (std::size_t i = 0; i < spec_.dropout_rates.size(); ++i) {
        if (std::abs(spec_.dropout_rates[i] - d_r) < 1e-9) return static_cast<int>(i);
    }
    throw ValidationError("rate not supported: d_r=" + format_rate(d_r) + " not in model dropout set");
}

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec_ = spec;
    m.shapes_ = propagate_shapes(spec);
    Rng rng = Rng(seed).substream("init");

    std::string prev = "@input";
    for (const auto& l : spec.layers) {
        const std::string in_key = l.input.empty() ? prev : l.input;
        const LayerShape in = m.shapes_.at(in_key);
        if (l.kind == LayerKind::Conv) {
            Tensor w({l.out_channels, in.c, l.kernel, l.kernel});
            const float bound = std::sqrt(6.0f / static_cast<float>(in.c * l.kernel * l.kernel));
            Rng lr = rng.substream(l.name);
            for (std::size_t i = 0; i < w.numel(); ++i) w.data()[i] = lr.next_uniform(-bound, bound);
            Var p = make_param(std::move(w), l.name + ".weight");
            m.weights_[l.name] = p;
            m.weight_order_.push_back(p);
            m.param_order_.push_back(p);
        } else if (l.kind == LayerKind::Linear) {
            Tensor w({l.features, in.c});
            const float bound = std::sqrt(6.0f / static_cast<float>(in.c));
            Rng lr = rng.substream(l.name);
            for (std::size_t i = 0; i < w.numel(); ++i) w.data()[i] = lr.next_uniform(-bound, bound);
            Var p = make_param(std::move(w), l.name + ".weight");
            m.weights_[l.name] = p;
            m.weight_order_.push_back(p);
            m.param_order_.push_back(p);
        } else if (l.kind == LayerKind::BatchNorm) {
            for (std::size_t ri = 0; ri < spec.dropout_rates.size(); ++ri) {
                const std::string tag = l.name + "@" + format_rate(spec.dropout_rates[ri]);
                ops::BnState st = ops::make_bn_state(in.c, tag);
                m.param_order_.push_back(st.gamma);
                m.param_order_.push_back(st.beta);
                m.bn_.emplace(std::make_pair(l.name, static_cast<int>(ri)), std::move(st));
            }
        }
        prev = l.name;
    }
    return m;
}

void Model::bind_mask(const ReluMask* mask) {
    if (mask != nullptr) {
        for (const auto& rs : relu_shapes(spec_)) {
            const MaskLayer* ml = mask->find(rs.name);
            if (ml == nullptr) {
                throw ValidationError("mask missing layer '" + rs.name + "'");
            }
            if (ml->h != rs.h || ml->w != rs.w || ml->c != rs.c) {
                throw ValidationError("mask layer '" + rs.name + "' dims " + std::to_string(ml->h) + "x" +
                                      std::to_string(ml->w) + "x" + std::to_string(ml->c) +
                                      " do not match activation " + std::to_string(rs.h) + "x" +
                                      std::to_string(rs.w) + "x" + std::to_string(rs.c));
            }
        }
    }
    mask_ = mask;
}

ForwardResult Model::forward(const Tensor& batch, double d_r, bool training) {
    const int ri = rate_index(d_r);
    if (batch.rank() != 4 || batch.dim(1) != spec_.in_channels || batch.dim(2) != spec_.in_height ||
        batch.dim(3) != spec_.in_width) {
        throw ValidationError("forward: batch shape " + shape_str(batch.shape()) +
                              " does not match model input " + std::to_string(spec_.in_channels) + "x" +
                              std::to_string(spec_.in_height) + "x" + std::to_string(spec_.in_width));
    }

    std::unordered_map<std::string, Var> values;
    std::unordered_map<std::string, int> active;   // physical channels of each value
    values["@input"] = make_input(batch);
    active["@input"] = spec_.in_channels;

    ForwardResult result;
    std::string prev = "@input";
    const std::string& last_name = spec_.layers.back().name;

    for (const auto& l : spec_.layers) {
        const std::string in_key = l.input.empty() ? prev : l.input;
        Var x = values.at(in_key);
        const int ai = active.at(in_key);
        Var y;
        int aout = ai;
        switch (l.kind) {
            case LayerKind::Conv: {
                aout = active_channels(d_r, l.out_channels);
                y = ops::conv2d(x, weights_.at(l.name), l.stride, l.padding, ai, aout);
                break;
            }
            case LayerKind::Linear: {
                const bool classifier = (l.name == last_name);
                aout = classifier ? l.features : active_channels(d_r, l.features);
                y = ops::linear(x, weights_.at(l.name), ai, aout);
                break;
            }
            case LayerKind::BatchNorm: {
                y = ops::batchnorm(x, bn_.at({l.name, ri}), training, ai);
                break;
            }
            case LayerKind::Relu: {
                const std::size_t per_sample = x->value.numel() / static_cast<std::size_t>(x->value.dim(0));
                const std::uint8_t* bits;
                if (mask_ != nullptr) {
                    const MaskLayer* ml = mask_->find(l.name);
                    if (ml == nullptr) throw ValidationError("mask missing layer '" + l.name + "'");
                    bits = ml->bits.data();   // prefix of ai channels is contiguous
                } else {
                    if (ones_scratch_.size() < per_sample) ones_scratch_.assign(per_sample, 1);
                    bits = ones_scratch_.data();
                }
                y = ops::masked_relu(x, bits, per_sample);
                result.post_relu.push_back(y);
                break;
            }
            case LayerKind::Pool: {
                y = l.pool_global ? ops::global_avgpool(x) : ops::maxpool2d(x, l.pool_size, l.pool_stride);
                break;
            }
            case LayerKind::ResidualAdd: {
                Var b = values.at(l.input2);
                y = ops::add(x, b);
                break;
            }
            case LayerKind::Flatten: {
                y = ops::flatten(x);
                aout = ai * x->value.dim(2) * x->value.dim(3);
                break;
            }
        }
        values[l.name] = y;
        active[l.name] = aout;
        prev = l.name;
    }
    result.logits = values.at(last_name);
    return result;
}

Checkpoint Model::to_checkpoint() const {
    Checkpoint ckpt;
    for (const auto& l : spec_.layers) {
        if (l.kind == LayerKind::Conv || l.kind == LayerKind::Linear) {
            ckpt.add(l.name + ".weight", weights_.at(l.name)->value);
        } else if (l.kind == LayerKind::BatchNorm) {
            for (std::size_t ri = 0; ri < spec_.dropout_rates.size(); ++ri) {
                const std::string tag = l.name + "@" + format_rate(spec_.dropout_rates[ri]);
                const ops::BnState& st = bn_.at({l.name, static_cast<int>(ri)});
                ckpt.add(tag + ".gamma", st.gamma->value);
                ckpt.add(tag + ".beta", st.beta->value);
                ckpt.add(tag + ".running_mean", st.running_mean);
                ckpt.add(tag + ".running_var", st.running_var);
            }
        }
    }
    return ckpt;
}

void Model::load_state(const Checkpoint& ckpt) {
    auto copy_into = [&](const std::string& name, Tensor& dst) {
        const Tensor* src = ckpt.find(name);
        if (src == nullptr) throw ValidationError("checkpoint missing tensor '" + name + "'");
        if (!src->same_shape(dst)) {
            throw ValidationError("checkpoint tensor '" + name + "' shape " + shape_str(src->shape()) +
                                  " does not match model " + shape_str(dst.shape()));
        }
        dst = *src;
    };
    std::size_t expected = 0;
    for (const auto& l : spec_.layers) {
        if (l.kind == LayerKind::Conv || l.kind == LayerKind::Linear) {
            copy_into(l.name + ".weight", weights_.at(l.name)->value);
            ++expected;
        } else if (l.kind == LayerKind::BatchNorm) {
            for (std::size_t ri = 0; ri < spec_.dropout_rates.size(); ++ri) {
                const std::string tag = l.name + "@" + format_rate(spec_.dropout_rates[ri]);
                ops::BnState& st = bn_.at({l.name, static_cast<int>(ri)});
                copy_into(tag + ".gamma", st.gamma->value);
                copy_into(tag + ".beta", st.beta->value);
                copy_into(tag + ".running_mean", st.running_mean);
                copy_into(tag + ".running_var", st.running_var);
                expected += 4;
            }
        }
    }
    if (expected != ckpt.entries.size()) {
        throw ValidationError("checkpoint has " + std::to_string(ckpt.entries.size()) +
                              " tensors, model expects " + std::to_string(expected));
    }
}

Model Model::clone() const {
    Model m = Model::build(spec_, 0);
    m.load_state(to_checkpoint());
    m.mask_ = mask_;
    return m;
}

} // namespace senet

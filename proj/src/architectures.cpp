#include "flora/architectures.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flora {

namespace {

// Appends nodes while tracking inferred shapes.
class GraphBuilder {
public:
    GraphBuilder(FeatureShape input, double bn_momentum, double bn_epsilon)
        : bn_momentum_(bn_momentum), bn_epsilon_(bn_epsilon) {
        LayerNode node;
        node.kind = LayerKind::Input;
        node.name = "input";
        node.in_shape = input;
        node.out_shape = input;
        nodes_.push_back(node);
    }

    int add(LayerNode node, std::vector<int> inputs) {
        std::vector<FeatureShape> shapes;
        for (int i : inputs) {
            if (i < 0 || static_cast<std::size_t>(i) >= nodes_.size()) {
                throw std::invalid_argument("node '" + node.name + "' references unknown input " + std::to_string(i));
            }
            shapes.push_back(nodes_[static_cast<std::size_t>(i)].out_shape);
        }
        node.inputs = std::move(inputs);
        node.in_shape = shapes.empty() ? node.in_shape : shapes.front();
        node.out_shape = infer_output_shape(node, shapes);
        nodes_.push_back(std::move(node));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int last() const { return static_cast<int>(nodes_.size()) - 1; }

    int conv(int in, const std::string& name, int filters, int kernel, int stride, Padding padding,
             bool bias = false) {
        LayerNode n;
        n.kind = LayerKind::Conv2D;
        n.name = name;
        n.filters = filters;
        n.kernel = kernel;
        n.stride = stride;
        n.padding = padding;
        n.use_bias = bias;
        return add(n, {in});
    }

    int depthwise(int in, const std::string& name, int kernel, int stride, Padding padding) {
        LayerNode n;
        n.kind = LayerKind::DepthwiseConv2D;
        n.name = name;
        n.kernel = kernel;
        n.stride = stride;
        n.padding = padding;
        return add(n, {in});
    }

    int separable(int in, const std::string& name, int filters) {
        LayerNode n;
        n.kind = LayerKind::SeparableConv2D;
        n.name = name;
        n.filters = filters;
        n.kernel = 3;
        n.padding = Padding::Same;
        return add(n, {in});
    }

    int bn(int in, const std::string& name) {
        LayerNode n;
        n.kind = LayerKind::BatchNorm;
        n.name = name;
        n.bn_momentum = bn_momentum_;
        n.bn_epsilon = bn_epsilon_;
        return add(n, {in});
    }

    int act(int in, const std::string& name, ActivationKind kind) {
        LayerNode n;
        n.kind = LayerKind::Activation;
        n.name = name;
        n.activation = kind;
        return add(n, {in});
    }

    int pool(int in, const std::string& name, LayerKind kind, int size, int stride, Padding padding) {
        LayerNode n;
        n.kind = kind;
        n.name = name;
        n.kernel = size;
        n.stride = stride;
        n.padding = padding;
        return add(n, {in});
    }

    int zero_pad(int in, const std::string& name, std::array<int, 4> pad) {
        LayerNode n;
        n.kind = LayerKind::ZeroPad;
        n.name = name;
        n.pad = pad;
        return add(n, {in});
    }

    int merge(LayerKind kind, const std::string& name, std::vector<int> inputs) {
        LayerNode n;
        n.kind = kind;
        n.name = name;
        return add(n, std::move(inputs));
    }

    int channels(int node) const { return static_cast<int>(nodes_[static_cast<std::size_t>(node)].out_shape.c); }

    std::vector<LayerNode> take() { return std::move(nodes_); }

private:
    std::vector<LayerNode> nodes_;
    double bn_momentum_;
    double bn_epsilon_;
};

void append_head(std::vector<LayerNode>& nodes, std::size_t num_classes, HeadKind head) {
    const FeatureShape base_out = nodes.back().out_shape;
    if (base_out.flat) throw std::invalid_argument("architecture base must end in a spatial map");

    LayerNode vec;
    vec.kind = head == HeadKind::Gap ? LayerKind::GlobalAvgPool : LayerKind::Flatten;
    vec.name = head == HeadKind::Gap ? "head_gap" : "head_flatten";
    vec.inputs = {static_cast<int>(nodes.size()) - 1};
    vec.in_shape = base_out;
    vec.out_shape = infer_output_shape(vec, std::span(&base_out, 1));
    nodes.push_back(vec);

    LayerNode dense;
    dense.kind = LayerKind::Dense;
    dense.name = "predictions";
    dense.filters = static_cast<int>(num_classes);
    dense.use_bias = true;
    dense.activation = ActivationKind::Softmax;
    dense.inputs = {static_cast<int>(nodes.size()) - 1};
    dense.in_shape = vec.out_shape;
    dense.out_shape = infer_output_shape(dense, std::span(&vec.out_shape, 1));
    nodes.push_back(dense);
}

// Depthwise separable block: [ZeroPad] DW3x3 BN ReLU6 PW1x1 BN ReLU6.
int mobilenet_block(GraphBuilder& g, int x, int filters, int stride, int id) {
    Padding padding = Padding::Same;
    if (stride == 2) {
        x = g.zero_pad(x, "conv_pad_" + std::to_string(id), {0, 1, 0, 1});
        padding = Padding::Valid;
    }
    x = g.depthwise(x, "conv_dw_" + std::to_string(id), 3, stride, padding);
    x = g.bn(x, "conv_dw_" + std::to_string(id) + "_bn");
    x = g.act(x, "conv_dw_" + std::to_string(id) + "_relu", ActivationKind::Relu6);
    x = g.conv(x, "conv_pw_" + std::to_string(id), filters, 1, 1, Padding::Same);
    x = g.bn(x, "conv_pw_" + std::to_string(id) + "_bn");
    return g.act(x, "conv_pw_" + std::to_string(id) + "_relu", ActivationKind::Relu6);
}

std::vector<LayerNode> mobilenet(FeatureShape input) {
    GraphBuilder g(input, 0.99, 1e-3);
    int x = g.conv(g.last(), "conv1", 32, 3, 2, Padding::Same);
    x = g.bn(x, "conv1_bn");
    x = g.act(x, "conv1_relu", ActivationKind::Relu6);
    const std::pair<int, int> blocks[] = {{64, 1},  {128, 2}, {128, 1}, {256, 2}, {256, 1},  {512, 2}, {512, 1},
                                          {512, 1}, {512, 1}, {512, 1}, {512, 1}, {1024, 2}, {1024, 1}};
    int id = 1;
    for (auto [filters, stride] : blocks) x = mobilenet_block(g, x, filters, stride, id++);
    return g.take();
}

std::vector<LayerNode> mini_mobilenet(FeatureShape input) {
    GraphBuilder g(input, 0.9, 1e-3);
    int x = g.conv(g.last(), "conv1", 16, 3, 2, Padding::Same);
    x = g.bn(x, "conv1_bn");
    x = g.act(x, "conv1_relu", ActivationKind::Relu6);
    x = mobilenet_block(g, x, 32, 1, 1);
    x = mobilenet_block(g, x, 64, 2, 2);
    mobilenet_block(g, x, 128, 2, 3);
    return g.take();
}

// BN ReLU Conv1x1(4k) BN ReLU Conv3x3(k) Concat.
int dense_layer(GraphBuilder& g, int x, int growth, const std::string& p) {
    int y = g.bn(x, p + "_0_bn");
    y = g.act(y, p + "_0_relu", ActivationKind::Relu);
    y = g.conv(y, p + "_1_conv", 4 * growth, 1, 1, Padding::Valid);
    y = g.bn(y, p + "_1_bn");
    y = g.act(y, p + "_1_relu", ActivationKind::Relu);
    y = g.conv(y, p + "_2_conv", growth, 3, 1, Padding::Same);
    return g.merge(LayerKind::Concat, p + "_concat", {x, y});
}

int transition(GraphBuilder& g, int x, const std::string& p) {
    x = g.bn(x, p + "_bn");
    x = g.act(x, p + "_relu", ActivationKind::Relu);
    x = g.conv(x, p + "_conv", g.channels(x) / 2, 1, 1, Padding::Valid);
    return g.pool(x, p + "_pool", LayerKind::AvgPool, 2, 2, Padding::Valid);
}

std::vector<LayerNode> densenet121(FeatureShape input) {
    GraphBuilder g(input, 0.99, 1.001e-5);
    int x = g.zero_pad(g.last(), "zero_padding2d", {3, 3, 3, 3});
    x = g.conv(x, "conv1_conv", 64, 7, 2, Padding::Valid);
    x = g.bn(x, "conv1_bn");
    x = g.act(x, "conv1_relu", ActivationKind::Relu);
    x = g.zero_pad(x, "zero_padding2d_1", {1, 1, 1, 1});
    x = g.pool(x, "pool1", LayerKind::MaxPool, 3, 2, Padding::Valid);
    const int blocks[] = {6, 12, 24, 16};
    for (int b = 0; b < 4; ++b) {
        for (int i = 1; i <= blocks[b]; ++i) {
            x = dense_layer(g, x, 32, "conv" + std::to_string(b + 2) + "_block" + std::to_string(i));
        }
        if (b < 3) x = transition(g, x, "pool" + std::to_string(b + 2));
    }
    x = g.bn(x, "bn");
    g.act(x, "relu", ActivationKind::Relu);
    return g.take();
}

std::vector<LayerNode> mini_densenet(FeatureShape input) {
    GraphBuilder g(input, 0.9, 1.001e-5);
    int x = g.conv(g.last(), "conv1_conv", 16, 3, 2, Padding::Same);
    x = g.bn(x, "conv1_bn");
    x = g.act(x, "conv1_relu", ActivationKind::Relu);
    for (int i = 1; i <= 4; ++i) x = dense_layer(g, x, 12, "conv2_block" + std::to_string(i));
    x = transition(g, x, "pool2");
    for (int i = 1; i <= 4; ++i) x = dense_layer(g, x, 12, "conv3_block" + std::to_string(i));
    x = g.bn(x, "bn");
    g.act(x, "relu", ActivationKind::Relu);
    return g.take();
}

// Strided residual module. The shortcut conv / BN land in the node order where a
// depth-sorted functional graph places them (after the second BN and after the pool).
int xception_down_module(GraphBuilder& g, int x, int mid, int out, const std::string& p, bool leading_act) {
    const int shortcut_in = x;
    int y = x;
    if (leading_act) y = g.act(y, p + "_sepconv1_act", ActivationKind::Relu);
    y = g.separable(y, p + "_sepconv1", mid);
    y = g.bn(y, p + "_sepconv1_bn");
    y = g.act(y, p + "_sepconv2_act", ActivationKind::Relu);
    y = g.separable(y, p + "_sepconv2", out);
    y = g.bn(y, p + "_sepconv2_bn");
    int r = g.conv(shortcut_in, p + "_shortcut", out, 1, 2, Padding::Same);
    y = g.pool(y, p + "_pool", LayerKind::MaxPool, 3, 2, Padding::Same);
    r = g.bn(r, p + "_shortcut_bn");
    return g.merge(LayerKind::Add, p + "_add", {y, r});
}

int xception_identity_module(GraphBuilder& g, int x, int filters, int convs, const std::string& p) {
    int y = x;
    for (int i = 1; i <= convs; ++i) {
        const std::string s = p + "_sepconv" + std::to_string(i);
        y = g.act(y, s + "_act", ActivationKind::Relu);
        y = g.separable(y, s, filters);
        y = g.bn(y, s + "_bn");
    }
    return g.merge(LayerKind::Add, p + "_add", {y, x});
}

std::vector<LayerNode> xception(FeatureShape input) {
    GraphBuilder g(input, 0.99, 1e-3);
    int x = g.conv(g.last(), "block1_conv1", 32, 3, 2, Padding::Valid);
    x = g.bn(x, "block1_conv1_bn");
    x = g.act(x, "block1_conv1_act", ActivationKind::Relu);
    x = g.conv(x, "block1_conv2", 64, 3, 1, Padding::Valid);
    x = g.bn(x, "block1_conv2_bn");
    x = g.act(x, "block1_conv2_act", ActivationKind::Relu);
    x = xception_down_module(g, x, 128, 128, "block2", false);
    x = xception_down_module(g, x, 256, 256, "block3", true);
    x = xception_down_module(g, x, 728, 728, "block4", true);
    for (int b = 5; b <= 12; ++b) x = xception_identity_module(g, x, 728, 3, "block" + std::to_string(b));
    x = xception_down_module(g, x, 728, 1024, "block13", true);
    x = g.separable(x, "block14_sepconv1", 1536);
    x = g.bn(x, "block14_sepconv1_bn");
    x = g.act(x, "block14_sepconv1_act", ActivationKind::Relu);
    x = g.separable(x, "block14_sepconv2", 2048);
    x = g.bn(x, "block14_sepconv2_bn");
    g.act(x, "block14_sepconv2_act", ActivationKind::Relu);
    return g.take();
}

std::vector<LayerNode> mini_xception(FeatureShape input) {
    GraphBuilder g(input, 0.9, 1e-3);
    int x = g.conv(g.last(), "block1_conv1", 16, 3, 2, Padding::Same);
    x = g.bn(x, "block1_conv1_bn");
    x = g.act(x, "block1_conv1_act", ActivationKind::Relu);
    x = g.conv(x, "block1_conv2", 32, 3, 1, Padding::Same);
    x = g.bn(x, "block1_conv2_bn");
    x = g.act(x, "block1_conv2_act", ActivationKind::Relu);
    x = xception_down_module(g, x, 64, 64, "block2", false);
    x = xception_identity_module(g, x, 64, 2, "block3");
    x = g.separable(x, "block4_sepconv1", 128);
    x = g.bn(x, "block4_sepconv1_bn");
    g.act(x, "block4_sepconv1_act", ActivationKind::Relu);
    return g.take();
}

std::string json_shape_error(const std::string& node, const FeatureShape& stored, const FeatureShape& derived) {
    return "descriptor node '" + node + "' stores shape " + stored.str() + " but inputs imply " + derived.str();
}

nlohmann::json shape_to_json(const FeatureShape& s) { return {s.h, s.w, s.c, s.flat}; }

FeatureShape shape_from_json(const nlohmann::json& j) {
    return {j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>(), j.at(2).get<std::size_t>(), j.at(3).get<bool>()};
}

}  // namespace

std::string_view to_string(HeadKind head) { return head == HeadKind::Gap ? "gap" : "flatten"; }

HeadKind head_from_string(std::string_view name) {
    if (name == "gap") return HeadKind::Gap;
    if (name == "flatten") return HeadKind::Flatten;
    throw std::invalid_argument("unknown head '" + std::string(name) + "' (expected gap or flatten)");
}

std::vector<std::size_t> FreezePlan::frozen_node_indices() const {
    std::vector<std::size_t> out(frozen_count);
    for (std::size_t i = 0; i < frozen_count; ++i) out[i] = i;
    return out;
}

const std::vector<std::string>& architecture_names() {
    static const std::vector<std::string> names = {"mobilenet",      "densenet121",   "xception",
                                                   "mini_mobilenet", "mini_densenet", "mini_xception"};
    return names;
}

bool is_mini_architecture(std::string_view name) { return name.starts_with("mini_"); }

std::size_t default_input_size(std::string_view name) {
    if (name == "xception") return 299;
    if (is_mini_architecture(name)) return 32;
    return 224;
}

ArchDescriptor build_architecture(std::string_view name, std::size_t input_size, std::size_t num_classes,
                                  HeadKind head) {
    const auto& names = architecture_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
        throw std::invalid_argument("unknown architecture '" + std::string(name) + "'");
    }
    if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
    if (is_mini_architecture(name)) {
        if (input_size < 32) {
            throw std::invalid_argument("mini architectures need input size >= 32, got " + std::to_string(input_size));
        }
    } else if (input_size != 224 && input_size != 299) {
        throw std::invalid_argument(std::string(name) + " accepts input size 224 or 299, got " +
                                    std::to_string(input_size));
    }

    const FeatureShape input{input_size, input_size, 3, false};
    ArchDescriptor desc;
    desc.name = std::string(name);
    desc.input_shape = input;
    desc.head = head;
    desc.num_classes = num_classes;
    if (name == "mobilenet") desc.nodes = mobilenet(input);
    else if (name == "densenet121") desc.nodes = densenet121(input);
    else if (name == "xception") desc.nodes = xception(input);
    else if (name == "mini_mobilenet") desc.nodes = mini_mobilenet(input);
    else if (name == "mini_densenet") desc.nodes = mini_densenet(input);
    else desc.nodes = mini_xception(input);
    append_head(desc.nodes, num_classes, head);
    return desc;
}

ArchDescriptor with_head(const ArchDescriptor& desc, std::size_t num_classes, HeadKind head) {
    if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
    ArchDescriptor out = desc;
    out.nodes.resize(desc.base_node_count());
    out.num_classes = num_classes;
    out.head = head;
    append_head(out.nodes, num_classes, head);
    return out;
}

bool same_base(const ArchDescriptor& a, const ArchDescriptor& b) {
    if (a.input_shape != b.input_shape || a.base_node_count() != b.base_node_count()) return false;
    return std::equal(a.nodes.begin(), a.nodes.begin() + static_cast<std::ptrdiff_t>(a.base_node_count()),
                      b.nodes.begin());
}

ParamCount count_parameters(const ArchDescriptor& desc, const std::optional<FreezePlan>& plan) {
    ParamCount total;
    for (std::size_t i = 0; i < desc.nodes.size(); ++i) {
        ParamCount c = layer_param_count(desc.nodes[i]);
        if (plan && plan->is_frozen(i)) {
            c.non_trainable += c.trainable;
            c.trainable = 0;
        }
        total += c;
    }
    return total;
}

std::size_t count_layers(const ArchDescriptor& desc) { return desc.base_node_count(); }

FreezePlan apply_freeze(const ArchDescriptor& desc, double ratio) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw std::invalid_argument("freeze ratio must be in [0, 1), got " + std::to_string(ratio));
    }
    FreezePlan plan;
    plan.ratio = ratio;
    // Truncation; the epsilon keeps ratios such as 0.5 * 66 from landing just below an integer.
    plan.frozen_count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(desc.base_node_count()) + 1e-9));
    return plan;
}

nlohmann::json descriptor_to_json(const ArchDescriptor& desc) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : desc.nodes) {
        nlohmann::json j;
        j["kind"] = to_string(n.kind);
        j["name"] = n.name;
        j["inputs"] = n.inputs;
        if (n.kernel) j["kernel"] = n.kernel;
        if (n.stride != 1) j["stride"] = n.stride;
        if (n.padding != Padding::Valid) j["padding"] = to_string(n.padding);
        if (n.filters) j["filters"] = n.filters;
        if (n.use_bias) j["use_bias"] = true;
        if (n.activation != ActivationKind::None) j["activation"] = to_string(n.activation);
        if (n.kind == LayerKind::ZeroPad) j["pad"] = n.pad;
        if (n.kind == LayerKind::BatchNorm) {
            j["bn_momentum"] = n.bn_momentum;
            j["bn_epsilon"] = n.bn_epsilon;
        }
        j["in_shape"] = shape_to_json(n.in_shape);
        j["out_shape"] = shape_to_json(n.out_shape);
        nodes.push_back(std::move(j));
    }
    return {
        {"name", desc.name},
        {"input_shape", shape_to_json(desc.input_shape)},
        {"head", to_string(desc.head)},
        {"num_classes", desc.num_classes},
        {"base_node_count", desc.base_node_count()},
        {"nodes", std::move(nodes)},
    };
}

ArchDescriptor descriptor_from_json(const nlohmann::json& doc) {
    ArchDescriptor desc;
    desc.name = doc.at("name").get<std::string>();
    desc.input_shape = shape_from_json(doc.at("input_shape"));
    desc.head = head_from_string(doc.at("head").get<std::string>());
    desc.num_classes = doc.at("num_classes").get<std::size_t>();
    for (const auto& j : doc.at("nodes")) {
        LayerNode n;
        n.kind = layer_kind_from_string(j.at("kind").get<std::string>());
        n.name = j.at("name").get<std::string>();
        n.inputs = j.at("inputs").get<std::vector<int>>();
        n.kernel = j.value("kernel", 0);
        n.stride = j.value("stride", 1);
        n.padding = padding_from_string(j.value("padding", std::string("valid")));
        n.filters = j.value("filters", 0);
        n.use_bias = j.value("use_bias", false);
        n.activation = activation_from_string(j.value("activation", std::string("none")));
        if (j.contains("pad")) n.pad = j.at("pad").get<std::array<int, 4>>();
        n.bn_momentum = j.value("bn_momentum", 0.99);
        n.bn_epsilon = j.value("bn_epsilon", 1e-3);
        n.in_shape = shape_from_json(j.at("in_shape"));
        n.out_shape = shape_from_json(j.at("out_shape"));

        std::vector<FeatureShape> shapes;
        for (int i : n.inputs) {
            if (i < 0 || static_cast<std::size_t>(i) >= desc.nodes.size()) {
                throw std::invalid_argument("descriptor node '" + n.name + "' references unknown input");
            }
            shapes.push_back(desc.nodes[static_cast<std::size_t>(i)].out_shape);
        }
        if (!shapes.empty() && shapes.front() != n.in_shape) {
            throw std::invalid_argument(json_shape_error(n.name, n.in_shape, shapes.front()));
        }
        const FeatureShape derived = infer_output_shape(n, shapes);
        if (derived != n.out_shape) throw std::invalid_argument(json_shape_error(n.name, n.out_shape, derived));
        desc.nodes.push_back(std::move(n));
    }
    if (desc.nodes.size() < 3 || desc.nodes.front().kind != LayerKind::Input) {
        throw std::invalid_argument("descriptor must start with an Input node and end with a head");
    }
    const auto& last = desc.nodes.back();
    if (last.kind != LayerKind::Dense || last.out_shape.c != desc.num_classes) {
        throw std::invalid_argument("descriptor head does not match num_classes");
    }
    return desc;
}

}  // namespace flora

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "flora/layers.hpp"

namespace flora {

enum class HeadKind { Gap, Flatten };

std::string_view to_string(HeadKind head);
HeadKind head_from_string(std::string_view name);

/// Ordered layer graph for one network. The last two nodes are always the head:
/// a vectorizer (GlobalAvgPool or Flatten) and Dense(num_classes) with softmax.
struct ArchDescriptor {
    std::string name;
    FeatureShape input_shape;
    std::vector<LayerNode> nodes;
    HeadKind head = HeadKind::Gap;
    std::size_t num_classes = 0;

    std::size_t base_node_count() const { return nodes.size() - 2; }
    bool operator==(const ArchDescriptor&) const = default;
};

/// Contiguous prefix of base nodes, counted from the input, excluded from training.
struct FreezePlan {
    double ratio = 0.0;
    std::size_t frozen_count = 0;

    bool is_frozen(std::size_t node_index) const { return node_index < frozen_count; }
    std::vector<std::size_t> frozen_node_indices() const;
};

const std::vector<std::string>& architecture_names();
bool is_mini_architecture(std::string_view name);
std::size_t default_input_size(std::string_view name);

/// Builds a descriptor. Full-size bases accept 224 or 299 square RGB inputs;
/// mini variants accept any square input of at least 32.
ArchDescriptor build_architecture(std::string_view name, std::size_t input_size, std::size_t num_classes,
                                  HeadKind head);

/// Replaces the head of `desc` (new class count and/or vectorizer), keeping the base.
ArchDescriptor with_head(const ArchDescriptor& desc, std::size_t num_classes, HeadKind head);

/// True when both descriptors share identical base nodes (everything but the head).
bool same_base(const ArchDescriptor& a, const ArchDescriptor& b);

ParamCount count_parameters(const ArchDescriptor& desc, const std::optional<FreezePlan>& plan = std::nullopt);
std::size_t count_layers(const ArchDescriptor& desc);

/// Freezes floor(ratio * base node count) nodes from the input side. Requires 0 <= ratio < 1.
FreezePlan apply_freeze(const ArchDescriptor& desc, double ratio);

nlohmann::json descriptor_to_json(const ArchDescriptor& desc);
/// Parses and re-derives every shape; throws if the stored shapes disagree.
ArchDescriptor descriptor_from_json(const nlohmann::json& doc);

}  // namespace flora

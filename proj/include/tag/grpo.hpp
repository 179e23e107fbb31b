#pragma once

#include "tag/geometry.hpp"
#include "tag/labels.hpp"
#include "tag/reward.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tag {

struct grpo_config {
    std::size_t group_size = 8;
    std::size_t rollouts_per_prompt = 8;
    double clip_epsilon = 0.2;
    double kl_beta = 0.04;
    /// Step size used by the toy simulator.
    double learning_rate = 0.05;
    /// Step size of the full-scale LoRA setting; recorded for reference only.
    double reference_learning_rate = 1e-6;
    /// Ascent steps taken on each batch of rollouts before re-sampling.
    std::size_t inner_steps = 4;

    /// Throws tag::error(invalid_argument) on G < 2, eps outside (0,1),
    /// beta < 0, non-positive learning rate or zero inner steps.
    void validate() const;
};

/// Tabular softmax policy: one categorical over `actions` per context.
class toy_policy {
public:
    toy_policy(std::size_t contexts, std::size_t actions);
    toy_policy(std::size_t contexts, std::size_t actions, std::vector<double> logits);

    std::size_t contexts() const noexcept { return contexts_; }
    std::size_t actions() const noexcept { return actions_; }

    std::span<const double> logits(std::size_t context) const;
    std::span<double> logits(std::size_t context);
    std::span<const double> all_logits() const noexcept { return logits_; }
    std::span<double> all_logits() noexcept { return logits_; }

    std::vector<double> probabilities(std::size_t context) const;
    double log_prob(std::size_t context, std::size_t action) const;

    bool same_alphabet(const toy_policy& other) const noexcept {
        return contexts_ == other.contexts_ && actions_ == other.actions_;
    }

private:
    std::size_t contexts_;
    std::size_t actions_;
    std::vector<double> logits_;
};

/// G rollouts for one context, sampled under the old policy.
struct trajectory_group {
    std::size_t context = 0;
    std::vector<std::size_t> actions;
    std::vector<double> rewards;
    std::vector<double> logp_old;
    std::vector<double> logp_new;

    std::size_t size() const noexcept { return rewards.size(); }
    /// All per-trajectory vectors have equal, non-zero length.
    void validate() const;
};

inline constexpr double advantage_std_floor = 1e-8;

/// (R - mean) / std with population std; all zeros when std <= 1e-8.
/// Throws tag::error(group_too_small) for fewer than two rewards.
std::vector<double> normalize_advantages(std::span<const double> rewards);

/// min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A). Throws on ratio <= 0.
double clipped_surrogate(double ratio, double advantage, double eps);

/// Exact categorical KL(new || old), averaged over contexts.
double kl_penalty(const toy_policy& policy_new, const toy_policy& policy_old);

/// Clipped group-relative surrogate averaged over groups (each group weighted
/// 1/G inside), minus beta * KL(policy || reference).
double grpo_objective(const toy_policy& policy, const toy_policy& reference,
                      std::span<const trajectory_group> groups, const grpo_config& config);

/// Exact gradient of grpo_objective with respect to the logits.
std::vector<double> grpo_gradient(const toy_policy& policy, const toy_policy& reference,
                                  std::span<const trajectory_group> groups,
                                  const grpo_config& config);

/// One gradient-ascent step of size config.learning_rate.
toy_policy grpo_step(const toy_policy& policy, const toy_policy& reference,
                     std::span<const trajectory_group> groups, const grpo_config& config);

// ---------------------------------------------------------------------------
// Toy grounding environment

/// One way of grounding a response: the boxes it emits and the AU tags it names.
struct box_choice {
    std::vector<bounding_box> boxes;
    std::set<int> au_ids;
};

struct toy_prompt {
    std::string id;
    expression_label gold_label = expression_label::neutral;
    au_ground_truth gold_au;
    /// Initial logits over the env's action alphabet; uniform when absent.
    std::optional<std::vector<double>> initial_logits;
};

/// Contextual bandit. Action a picks box_choices[a / labels.size()] and
/// labels[a % labels.size()]; each prompt is one context.
struct toy_env {
    std::vector<box_choice> box_choices;
    std::vector<expression_label> labels{all_labels.begin(), all_labels.end()};
    std::vector<toy_prompt> prompts;

    std::size_t action_count() const noexcept { return box_choices.size() * labels.size(); }
    const box_choice& box_of(std::size_t action) const { return box_choices[action / labels.size()]; }
    expression_label label_of(std::size_t action) const { return labels[action % labels.size()]; }
    std::size_t action_for(std::size_t box_index, expression_label label) const;

    /// Throws tag::error(invalid_argument) describing the first problem found.
    void validate() const;
    toy_policy initial_policy() const;
    /// Trace text emitted by `action`.
    std::string render_action(std::size_t action) const;
};

/// Built-in environment where a coarse whole-face box co-occurs with the
/// correct label more often than the tight AU boxes do.
toy_env shortcut_env();

enum class reward_mode { answer_only, answer_plus_au };

std::string_view to_string(reward_mode mode);
reward_mode parse_reward_mode(std::string_view text);

struct training_point {
    std::size_t step = 0;
    /// Means over the rollouts sampled at this step.
    double mean_reward = 0.0;
    double accuracy = 0.0;
    double mean_au_iou = 0.0;
    /// Exact expectations under the policy the rollouts were drawn from.
    double expected_accuracy = 0.0;
    double expected_au_iou = 0.0;
};

struct training_curve {
    std::vector<training_point> points;

    const training_point& initial() const { return points.front(); }
    const training_point& final() const { return points.back(); }
};

struct toy_training_options {
    std::size_t steps = 500;
    reward_config reward;
};

/// Records steps + 1 points: point t describes the policy after t updates.
/// Deterministic for a given seed.
training_curve run_toy_training(const toy_env& env, reward_mode mode, const grpo_config& config,
                                std::uint64_t seed, const toy_training_options& options = {});

/// Sample `count` actions from one context using a portable inverse-CDF draw.
std::vector<std::size_t> sample_actions(const toy_policy& policy, std::size_t context,
                                        std::size_t count, std::uint64_t seed);

} // namespace tag

#include "tag/grpo.hpp"

#include "tag/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace tag {

namespace {

[[noreturn]] void invalid(const std::string& what) {
    throw error(error_code::invalid_argument, what);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

double log_sum_exp(std::span<const double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
}

std::vector<double> log_softmax(std::span<const double> z) {
    const double lse = log_sum_exp(z);
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
    return out;
}

double categorical_kl(std::span<const double> logp, std::span<const double> logq) {
    double kl = 0.0;
    for (std::size_t k = 0; k < logp.size(); ++k) {
        const double p = std::exp(logp[k]);
        if (p == 0.0) continue;
        kl += p * (logp[k] - logq[k]);
    }
    return kl;
}

void check_groups(const toy_policy& policy, std::span<const trajectory_group> groups) {
    for (const auto& g : groups) {
        g.validate();
        if (g.context >= policy.contexts()) invalid("trajectory group context out of range");
        for (std::size_t a : g.actions) {
            if (a >= policy.actions()) invalid("trajectory action out of range");
        }
    }
}

} // namespace

void grpo_config::validate() const {
    if (group_size < 2) invalid("group_size must be at least 2");
    if (rollouts_per_prompt < 2) invalid("rollouts_per_prompt must be at least 2");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) invalid("clip_epsilon must be in (0, 1)");
    if (!(kl_beta >= 0.0)) invalid("kl_beta must be non-negative");
    if (!(learning_rate > 0.0)) invalid("learning_rate must be positive");
    if (inner_steps == 0) invalid("inner_steps must be positive");
    if (rollouts_per_prompt % group_size != 0) {
        invalid("rollouts_per_prompt must be a multiple of group_size");
    }
}

toy_policy::toy_policy(std::size_t contexts, std::size_t actions)
    : toy_policy(contexts, actions, std::vector<double>(contexts * actions, 0.0)) {}

toy_policy::toy_policy(std::size_t contexts, std::size_t actions, std::vector<double> values)
    : contexts_(contexts), actions_(actions), logits_(std::move(values)) {
    if (contexts_ == 0 || actions_ == 0) invalid("toy_policy needs at least one context and action");
    if (logits_.size() != contexts_ * actions_) invalid("toy_policy logits size mismatch");
    for (std::size_t c = 0; c < contexts_; ++c) {
        auto z = logits(c);
        if (std::any_of(z.begin(), z.end(), [](double v) { return std::isnan(v) || v == HUGE_VAL; }) ||
            std::none_of(z.begin(), z.end(), [](double v) { return std::isfinite(v); })) {
            invalid("toy_policy logits must be finite or -inf, with one finite entry per context");
        }
    }
}

std::span<const double> toy_policy::logits(std::size_t context) const {
    return std::span<const double>(logits_).subspan(context * actions_, actions_);
}

std::span<double> toy_policy::logits(std::size_t context) {
    return std::span<double>(logits_).subspan(context * actions_, actions_);
}

std::vector<double> toy_policy::probabilities(std::size_t context) const {
    auto lp = log_softmax(logits(context));
    for (double& v : lp) v = std::exp(v);
    return lp;
}

double toy_policy::log_prob(std::size_t context, std::size_t action) const {
    auto z = logits(context);
    return z[action] - log_sum_exp(z);
}

void trajectory_group::validate() const {
    const std::size_t n = rewards.size();
    if (actions.size() != n || logp_old.size() != n || logp_new.size() != n) {
        invalid("trajectory group vectors must have equal length");
    }
    if (n < 2) throw error(error_code::group_too_small, "trajectory group needs at least 2 rollouts");
}

std::vector<double> normalize_advantages(std::span<const double> rewards) {
    if (rewards.size() < 2) {
        throw error(error_code::group_too_small, "advantage normalization needs at least 2 rewards");
    }
    const double n = static_cast<double>(rewards.size());
    const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double sd = std::sqrt(var / n);

    std::vector<double> out(rewards.size(), 0.0);
    if (!(sd > advantage_std_floor)) return out;
    for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
    return out;
}

double clipped_surrogate(double ratio, double advantage, double eps) {
    if (!(ratio > 0.0)) invalid("importance ratio must be positive");
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    return std::min(ratio * advantage, clipped * advantage);
}

double kl_penalty(const toy_policy& policy_new, const toy_policy& policy_old) {
    if (!policy_new.same_alphabet(policy_old)) {
        throw error(error_code::alphabet_mismatch, "kl_penalty: policies have different alphabets");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < policy_new.contexts(); ++c) {
        total += categorical_kl(log_softmax(policy_new.logits(c)), log_softmax(policy_old.logits(c)));
    }
    return total / static_cast<double>(policy_new.contexts());
}

double grpo_objective(const toy_policy& policy, const toy_policy& reference,
                      std::span<const trajectory_group> groups, const grpo_config& config) {
    check_groups(policy, groups);
    double surrogate = 0.0;
    for (const auto& g : groups) {
        const auto adv = normalize_advantages(g.rewards);
        double sum = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double ratio = std::exp(policy.log_prob(g.context, g.actions[i]) - g.logp_old[i]);
            sum += clipped_surrogate(ratio, adv[i], config.clip_epsilon);
        }
        surrogate += sum / static_cast<double>(g.size());
    }
    if (!groups.empty()) surrogate /= static_cast<double>(groups.size());
    return surrogate - config.kl_beta * kl_penalty(policy, reference);
}

std::vector<double> grpo_gradient(const toy_policy& policy, const toy_policy& reference,
                                  std::span<const trajectory_group> groups,
                                  const grpo_config& config) {
    check_groups(policy, groups);
    if (!policy.same_alphabet(reference)) {
        throw error(error_code::alphabet_mismatch, "grpo_gradient: reference alphabet differs");
    }
    const std::size_t actions = policy.actions();
    std::vector<double> grad(policy.all_logits().size(), 0.0);

    // d/dz_k of the clipped term: dterm/drho * rho * (1[k == a] - p_k).
    const double group_weight = groups.empty() ? 0.0 : 1.0 / static_cast<double>(groups.size());
    for (const auto& g : groups) {
        const auto adv = normalize_advantages(g.rewards);
        const auto logp = log_softmax(policy.logits(g.context));
        double* row = grad.data() + g.context * actions;
        const double w = group_weight / static_cast<double>(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t a = g.actions[i];
            const double ratio = std::exp(logp[a] - g.logp_old[i]);
            const double clipped = std::clamp(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon);
            if (ratio * adv[i] > clipped * adv[i]) continue;  // clipped branch is flat in theta
            const double scale = w * adv[i] * ratio;
            if (scale == 0.0) continue;
            for (std::size_t k = 0; k < actions; ++k) row[k] -= scale * std::exp(logp[k]);
            row[a] += scale;
        }
    }

    // d/dz_k KL(p || q) = p_k (log p_k - log q_k - KL), averaged over contexts.
    if (config.kl_beta != 0.0) {
        const double w = config.kl_beta / static_cast<double>(policy.contexts());
        for (std::size_t c = 0; c < policy.contexts(); ++c) {
            const auto logp = log_softmax(policy.logits(c));
            const auto logq = log_softmax(reference.logits(c));
            const double kl = categorical_kl(logp, logq);
            double* row = grad.data() + c * actions;
            for (std::size_t k = 0; k < actions; ++k) {
                const double p = std::exp(logp[k]);
                if (p == 0.0) continue;
                row[k] -= w * p * (logp[k] - logq[k] - kl);
            }
        }
    }
    return grad;
}

toy_policy grpo_step(const toy_policy& policy, const toy_policy& reference,
                     std::span<const trajectory_group> groups, const grpo_config& config) {
    const auto grad = grpo_gradient(policy, reference, groups, config);
    std::vector<double> next(policy.all_logits().begin(), policy.all_logits().end());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += config.learning_rate * grad[i];
    return toy_policy(policy.contexts(), policy.actions(), std::move(next));
}

// ---------------------------------------------------------------------------

std::size_t toy_env::action_for(std::size_t box_index, expression_label label) const {
    const auto it = std::find(labels.begin(), labels.end(), label);
    if (box_index >= box_choices.size() || it == labels.end()) {
        invalid("toy_env: no such action");
    }
    return box_index * labels.size() + static_cast<std::size_t>(it - labels.begin());
}

void toy_env::validate() const {
    if (box_choices.empty()) invalid("env needs at least one box choice");
    if (labels.empty()) invalid("env needs at least one label");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (std::size_t j = i + 1; j < labels.size(); ++j) {
            if (labels[i] == labels[j]) invalid("env labels must be distinct");
        }
    }
    if (prompts.empty()) invalid("env needs at least one prompt");
    for (const auto& p : prompts) {
        if (p.initial_logits && p.initial_logits->size() != action_count()) {
            invalid("prompt '" + p.id + "': initial_logits must have " +
                    std::to_string(action_count()) + " entries");
        }
        for (const auto& b : p.gold_au.boxes) {
            if (!b.is_valid() || !b.in_canvas()) invalid("prompt '" + p.id + "': invalid gold box");
        }
    }
}

toy_policy toy_env::initial_policy() const {
    std::vector<double> logits;
    logits.reserve(prompts.size() * action_count());
    for (const auto& p : prompts) {
        if (p.initial_logits) {
            logits.insert(logits.end(), p.initial_logits->begin(), p.initial_logits->end());
        } else {
            logits.insert(logits.end(), action_count(), 0.0);
        }
    }
    return toy_policy(prompts.size(), action_count(), std::move(logits));
}

std::string toy_env::render_action(std::size_t action) const {
    const box_choice& choice = box_of(action);
    std::string text = "<think>Overall impression of the face.";
    auto id = choice.au_ids.begin();
    for (const auto& box : choice.boxes) {
        text += " Inspecting region";
        if (id != choice.au_ids.end()) {
            text += " <AU" + std::to_string(*id++) + ">";
        }
        text += " <bbox>" + format_box_payload(box) + "</bbox>";
    }
    for (; id != choice.au_ids.end(); ++id) text += " <AU" + std::to_string(*id) + ">";
    text += " Conclusion follows.</think><answer>";
    text += to_string(label_of(action));
    text += "</answer>";
    return text;
}

toy_env shortcut_env() {
    toy_env env;
    const bounding_box brows{110, 110, 402, 190};
    const bounding_box eyes{100, 190, 412, 290};
    const bounding_box mouth{150, 320, 362, 430};
    const bounding_box whole_face{0, 0, 512, 512};

    env.box_choices = {
        {{brows}, {4}},
        {{eyes}, {6}},
        {{mouth}, {12}},
        {{brows, mouth}, {1, 26}},
        {{eyes, mouth}, {6, 12}},
        {{whole_face}, {}},  // shortcut: one coarse box, no localized evidence
    };
    constexpr std::size_t shortcut = 5;

    struct spec {
        const char* id;
        expression_label gold;
        expression_label confuser;
        au_ground_truth au;
        std::vector<std::size_t> grounded;
    };
    const std::vector<spec> specs = {
        {"happy_0", expression_label::happiness, expression_label::neutral,
         {{eyes, mouth}, {6, 12}, {6, 12}}, {1, 2, 4}},
        {"surprise_0", expression_label::surprise, expression_label::fear,
         {{brows, mouth}, {1, 26}, {1, 26}}, {0, 2, 3}},
        {"anger_0", expression_label::anger, expression_label::disgust,
         {{brows}, {4}, {4}}, {0, 3}},
        {"sad_0", expression_label::sadness, expression_label::neutral,
         {{brows, mouth}, {1, 15}, {1, 15}}, {0, 3}},
        {"neutral_0", expression_label::neutral, expression_label::sadness, {}, {}},
    };

    for (const auto& s : specs) {
        toy_prompt p;
        p.id = s.id;
        p.gold_label = s.gold;
        p.gold_au = s.au;
        std::vector<double> logits(env.action_count(), 0.0);
        logits[env.action_for(shortcut, s.gold)] = 3.0;
        for (std::size_t g : s.grounded) {
            logits[env.action_for(g, s.gold)] = 1.5;
            logits[env.action_for(g, s.confuser)] = 2.0;
        }
        p.initial_logits = std::move(logits);
        env.prompts.push_back(std::move(p));
    }
    return env;
}

std::string_view to_string(reward_mode mode) {
    return mode == reward_mode::answer_only ? "answer_only" : "answer_plus_au";
}

reward_mode parse_reward_mode(std::string_view text) {
    if (text == "answer_only") return reward_mode::answer_only;
    if (text == "answer_plus_au") return reward_mode::answer_plus_au;
    invalid("reward mode must be 'answer_only' or 'answer_plus_au', got '" + std::string(text) + "'");
}

std::vector<std::size_t> sample_actions(const toy_policy& policy, std::size_t context,
                                        std::size_t count, std::uint64_t seed) {
    const auto probs = policy.probabilities(context);
    std::vector<double> cdf(probs.size());
    std::partial_sum(probs.begin(), probs.end(), cdf.begin());
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * cdf.back();
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        std::size_t a = static_cast<std::size_t>(it - cdf.begin());
        if (a >= probs.size()) a = probs.size() - 1;
        while (probs[a] == 0.0 && a > 0) --a;  // never land on an impossible action
        out.push_back(a);
    }
    return out;
}

training_curve run_toy_training(const toy_env& env, reward_mode mode, const grpo_config& config,
                                std::uint64_t seed, const toy_training_options& options) {
    env.validate();
    config.validate();

    reward_config rc = options.reward;
    rc.include_au = mode == reward_mode::answer_plus_au;

    // The reward landscape is fixed: precompute per (prompt, action).
    const std::size_t actions = env.action_count();
    const std::size_t prompts = env.prompts.size();
    std::vector<double> reward(prompts * actions);
    std::vector<double> correct(prompts * actions);
    std::vector<double> grounding(prompts * actions);
    std::vector<bool> eligible(prompts);
    for (std::size_t p = 0; p < prompts; ++p) {
        const auto& prompt = env.prompts[p];
        eligible[p] = !prompt.gold_au.boxes.empty();
        for (std::size_t a = 0; a < actions; ++a) {
            const std::string text = env.render_action(a);
            const auto r = total_reward(text, prompt.gold_label, prompt.gold_au, rc);
            reward[p * actions + a] = r.total;
            correct[p * actions + a] = env.label_of(a) == prompt.gold_label ? 1.0 : 0.0;
            grounding[p * actions + a] =
                au_iou_reward(env.box_of(a).boxes, prompt.gold_au).value_or(0.0);
        }
    }

    const std::size_t group = config.group_size;
    toy_policy policy = env.initial_policy();
    training_curve curve;
    for (std::size_t step = 0; step <= options.steps; ++step) {
        const toy_policy old = policy;
        std::vector<trajectory_group> groups;
        groups.reserve(prompts);

        training_point point;
        point.step = step;
        double samples = 0.0, grounded_samples = 0.0, eligible_prompts = 0.0;
        for (std::size_t p = 0; p < prompts; ++p) {
            const std::uint64_t stream = splitmix64(seed ^ splitmix64(step * 1'000'003ULL + p));
            const auto rollouts = sample_actions(old, p, config.rollouts_per_prompt, stream);
            for (std::size_t begin = 0; begin < rollouts.size(); begin += group) {
                trajectory_group g;
                g.context = p;
                g.actions.assign(rollouts.begin() + static_cast<std::ptrdiff_t>(begin),
                                 rollouts.begin() + static_cast<std::ptrdiff_t>(begin + group));
                for (std::size_t a : g.actions) {
                    const std::size_t idx = p * actions + a;
                    g.rewards.push_back(reward[idx]);
                    g.logp_old.push_back(old.log_prob(p, a));
                    point.mean_reward += reward[idx];
                    point.accuracy += correct[idx];
                    if (eligible[p]) {
                        point.mean_au_iou += grounding[idx];
                        grounded_samples += 1.0;
                    }
                    samples += 1.0;
                }
                g.logp_new = g.logp_old;
                groups.push_back(std::move(g));
            }

            const auto probs = old.probabilities(p);
            for (std::size_t a = 0; a < actions; ++a) {
                point.expected_accuracy += probs[a] * correct[p * actions + a];
                if (eligible[p]) point.expected_au_iou += probs[a] * grounding[p * actions + a];
            }
            if (eligible[p]) eligible_prompts += 1.0;
        }
        point.mean_reward /= samples;
        point.accuracy /= samples;
        point.expected_accuracy /= static_cast<double>(prompts);
        if (grounded_samples > 0.0) point.mean_au_iou /= grounded_samples;
        if (eligible_prompts > 0.0) point.expected_au_iou /= eligible_prompts;
        curve.points.push_back(point);

        if (step == options.steps) break;
        for (std::size_t k = 0; k < config.inner_steps; ++k) {
            policy = grpo_step(policy, old, groups, config);
        }
    }
    return curve;
}

} // namespace tag

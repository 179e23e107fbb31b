#include "tag/error.hpp"
#include "tag/grpo.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace tag;

namespace {

struct fixture {
    toy_policy policy;
    toy_policy reference;
    std::vector<trajectory_group> groups;
};

fixture random_fixture(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> dim(2, 6);
    std::normal_distribution<double> z(0.0, 1.0);
    const std::size_t contexts = dim(rng) - 1, actions = dim(rng);
    std::vector<double> a(contexts * actions), b(contexts * actions);
    for (auto& v : a) v = z(rng);
    for (auto& v : b) v = z(rng);
    fixture f{toy_policy(contexts, actions, a), toy_policy(contexts, actions, b), {}};
    for (std::size_t c = 0; c < contexts; ++c) {
        trajectory_group g;
        g.context = c;
        for (int i = 0; i < 4; ++i) {
            const std::size_t act = std::uniform_int_distribution<std::size_t>(0, actions - 1)(rng);
            g.actions.push_back(act);
            g.rewards.push_back(z(rng));
            g.logp_old.push_back(f.policy.log_prob(c, act) + 0.5 * z(rng));
        }
        g.logp_new = g.logp_old;
        f.groups.push_back(g);
    }
    return f;
}

} // namespace

TEST_CASE("advantages") {
    const std::vector<double> r{1, 2, 3, 4};
    const auto a = normalize_advantages(r);
    const double sd = std::sqrt(1.25);
    CHECK(a[0] == doctest::Approx(-1.5 / sd));
    CHECK(a[3] == doctest::Approx(1.5 / sd));
    double sum = 0;
    for (double v : a) sum += v;
    CHECK(sum == doctest::Approx(0.0).epsilon(1e-12));

    for (double v : normalize_advantages(std::vector<double>{2.5, 2.5, 2.5})) CHECK(v == 0.0);
    for (double v : normalize_advantages(std::vector<double>{1.0, 1.0 + 1e-10})) CHECK(v == 0.0);
    CHECK_THROWS_AS(normalize_advantages(std::vector<double>{1.0}), error);
    try {
        normalize_advantages({});
    } catch (const error& e) {
        CHECK(e.code() == error_code::group_too_small);
    }
}

TEST_CASE("clipped surrogate") {
    CHECK(clipped_surrogate(1.5, 1.0, 0.2) == doctest::Approx(1.2));
    CHECK(clipped_surrogate(0.5, 1.0, 0.2) == doctest::Approx(0.5));
    CHECK(clipped_surrogate(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
    CHECK(clipped_surrogate(1.5, -1.0, 0.2) == doctest::Approx(-1.5));
    CHECK(clipped_surrogate(1.1, 2.0, 0.2) == doctest::Approx(2.2));
    CHECK_THROWS_AS(clipped_surrogate(0.0, 1.0, 0.2), error);
}

TEST_CASE("KL") {
    toy_policy p(2, 3, {0, 0, 0, 1, 2, 3});
    CHECK(kl_penalty(p, p) == doctest::Approx(0.0));
    toy_policy q(2, 3, {std::log(0.5), std::log(0.25), std::log(0.25), 0, 0, 0});
    toy_policy u(2, 3);
    // Row 0: KL(q||u) = sum q log(3q); row 1 = 0.
    const double row0 = 0.5 * std::log(1.5) + 2 * 0.25 * std::log(0.75);
    CHECK(kl_penalty(q, u) == doctest::Approx(row0 / 2));
    CHECK(kl_penalty(q, u) >= 0.0);
    CHECK_THROWS_AS(kl_penalty(p, toy_policy(3, 2)), error);
    toy_policy masked(1, 2, {0, -INFINITY});
    CHECK(kl_penalty(masked, toy_policy(1, 2)) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("analytic gradient matches central differences") {
    std::mt19937_64 rng(17);
    grpo_config cfg;
    int checked = 0;
    for (int trial = 0; trial < 60; ++trial) {
        auto f = random_fixture(rng);
        const auto grad = grpo_gradient(f.policy, f.reference, f.groups, cfg);
        const double h = 1e-6;
        for (std::size_t i = 0; i < grad.size(); ++i) {
            auto plus = f.policy, minus = f.policy;
            plus.all_logits()[i] += h;
            minus.all_logits()[i] -= h;
            const double fd = (grpo_objective(plus, f.reference, f.groups, cfg) -
                               grpo_objective(minus, f.reference, f.groups, cfg)) / (2 * h);
            CHECK(std::abs(fd - grad[i]) <= 1e-5 * std::max(1.0, std::abs(fd)));
            ++checked;
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("gradient step increases the objective") {
    std::mt19937_64 rng(23);
    grpo_config cfg;
    cfg.learning_rate = 1e-3;
    for (int trial = 0; trial < 20; ++trial) {
        auto f = random_fixture(rng);
        const double before = grpo_objective(f.policy, f.reference, f.groups, cfg);
        const auto next = grpo_step(f.policy, f.reference, f.groups, cfg);
        CHECK(grpo_objective(next, f.reference, f.groups, cfg) >= before - 1e-12);
    }
}

TEST_CASE("config validation") {
    grpo_config c;
    CHECK_NOTHROW(c.validate());
    c.group_size = 1;
    CHECK_THROWS_AS(c.validate(), error);
    c = {};
    c.clip_epsilon = 1.0;
    CHECK_THROWS_AS(c.validate(), error);
    c = {};
    c.rollouts_per_prompt = 12;
    CHECK_THROWS_AS(c.validate(), error);
    c.group_size = 4;
    CHECK_NOTHROW(c.validate());
    c = {};
    c.kl_beta = -0.1;
    CHECK_THROWS_AS(c.validate(), error);
}

TEST_CASE("toy policy guards") {
    CHECK_THROWS_AS(toy_policy(0, 3), error);
    CHECK_THROWS_AS(toy_policy(1, 2, {0.0}), error);
    CHECK_THROWS_AS(toy_policy(1, 2, {NAN, 0.0}), error);
    CHECK_THROWS_AS(toy_policy(1, 2, {-INFINITY, -INFINITY}), error);
    toy_policy p(1, 3, {0, -INFINITY, 0});
    for (std::size_t a : sample_actions(p, 0, 500, 9)) CHECK(a != 1);
    CHECK(sample_actions(p, 0, 50, 9) == sample_actions(p, 0, 50, 9));
}

TEST_CASE("shortcut env ablation directions") {
    const auto env = shortcut_env();
    CHECK_NOTHROW(env.validate());
    grpo_config cfg;
    const auto au = run_toy_training(env, reward_mode::answer_plus_au, cfg, 7);
    const auto ans = run_toy_training(env, reward_mode::answer_only, cfg, 7);
    REQUIRE(au.points.size() == 501);
    CHECK(au.initial().expected_au_iou == ans.initial().expected_au_iou);
    CHECK(au.final().expected_au_iou > au.initial().expected_au_iou);
    CHECK(ans.final().expected_au_iou < ans.initial().expected_au_iou);
    CHECK(ans.final().expected_accuracy > ans.initial().expected_accuracy);
    CHECK(au.final().expected_accuracy > au.initial().expected_accuracy);

    const auto again = run_toy_training(env, reward_mode::answer_plus_au, cfg, 7);
    CHECK(again.final().expected_au_iou == au.final().expected_au_iou);
}

TEST_CASE("constant reward leaves the policy where it started") {
    toy_env env;
    env.box_choices = {{{{0, 0, 100, 100}}, {4}}};
    env.labels = {expression_label::anger};
    env.prompts = {{"p", expression_label::anger, {{{0, 0, 100, 100}}, {4}, {4}}, std::nullopt}};
    toy_training_options opts;
    opts.steps = 20;
    const auto c = run_toy_training(env, reward_mode::answer_plus_au, {}, 1, opts);
    for (const auto& pt : c.points) {
        CHECK(pt.mean_reward == doctest::Approx(2.5));
        CHECK(pt.expected_accuracy == 1.0);
    }
}

TEST_CASE("env validation and rendering") {
    auto env = shortcut_env();
    CHECK(env.action_count() == 42);
    CHECK(env.label_of(env.action_for(2, expression_label::fear)) == expression_label::fear);
    const auto text = env.render_action(env.action_for(4, expression_label::happiness));
    CHECK(text.find("<AU6> <bbox>[100, 190, 412, 290]</bbox>") != std::string::npos);
    CHECK(text.find("<answer>happiness</answer>") != std::string::npos);
    env.prompts[0].initial_logits->pop_back();
    CHECK_THROWS_AS(env.validate(), error);
    env = shortcut_env();
    env.labels.push_back(env.labels.front());
    CHECK_THROWS_AS(env.validate(), error);
    CHECK_THROWS_AS(parse_reward_mode("rlvr"), error);
}

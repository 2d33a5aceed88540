import json
import os
import shutil
import tempfile

import numpy as np
from django.test import SimpleTestCase

from td_engine.environments import (
    GridworldSpec,
    build_gridworld,
    epsilon_greedy_policy,
    greedy_actions,
    gridworld_target_policy,
    lazy_cycle_chain,
    random_ergodic_mdp,
    random_policy,
    uniform_random_policy,
)
from td_engine.exceptions import (
    ConfigError,
    DomainError,
    InputError,
    NonErgodicError,
    ShapeError,
    SingularSystemError,
)
from td_engine.learner import (
    LearnerConfig,
    LearnerState,
    LearningRateSchedule,
    Transition,
    compact_average_reward,
    learning_rate,
    monte_carlo_operator,
    run_trajectory,
    sample_trajectory,
    sampled_operator,
    step,
    step_compact,
)
from td_engine.mdp import (
    InducedChain,
    Policy,
    TabularMDP,
    coverage_violations,
    exact_solve,
    importance_ratios,
    induced_dynamics,
    is_ergodic,
    load_mdp,
    load_policy,
    mdp_from_dict,
    n_step_bellman_residual,
    n_step_kernel,
    poisson_residual,
    save_mdp,
    save_policy,
    stationary_distribution,
)
from td_engine.metrics import WeightedNorm, rmsve_tvr, weighted_rmsve
from td_engine.stability import (
    CERT_DOUBLY,
    CERT_ETA0,
    CERT_KERNEL,
    Verdict,
    analyze,
    build_matrices,
    check_bierkens,
    coefficient_matrix,
    eta0_bound,
    eta_sweep,
    expected_operator,
    fixed_point,
    is_doubly_stochastic,
    lipschitz_bound,
    lyapunov_check,
    positivity_horizon,
    spectrum,
)

TWO_STATE_P = [[0.9, 0.1], [0.2, 0.8]]
UNIFORM_P = [[0.5, 0.5], [0.5, 0.5]]


def random_instance(index, max_states=8, num_actions=2):
    """A random ergodic MDP with random target and behavior policies."""
    num_states = 2 + index % (max_states - 1)
    mdp = random_ergodic_mdp(num_states, num_actions, seed=index)
    target = random_policy(mdp, seed=10_000 + index)
    behavior = random_policy(mdp, seed=20_000 + index)
    return mdp, target, behavior


def two_state_chain(r=(1.0, 0.0)):
    return InducedChain(P=np.array(TWO_STATE_P), r=np.array(r))


class InducedDynamicsTests(SimpleTestCase):
    def setUp(self):
        transition = np.array([
            [[0.7, 0.3], [0.1, 0.9]],
            [[0.4, 0.6], [0.5, 0.5]],
        ])
        self.mdp = TabularMDP(
            transition=transition,
            reward=np.array([[1.0, 2.0], [3.0, 4.0]]),
            start=np.array([1.0, 0.0]),
        )

    def test_deterministic_policy_selects_action_slice(self):
        policy = Policy(probs=np.array([[1.0, 0.0], [1.0, 0.0]]))
        chain = induced_dynamics(self.mdp, policy)
        np.testing.assert_array_equal(chain.P, self.mdp.transition[:, 0, :])
        np.testing.assert_array_equal(chain.r, self.mdp.reward[:, 0])

    def test_identical_kernels_average_rewards(self):
        kernel = np.array([[0.3, 0.7], [0.6, 0.4]])
        mdp = TabularMDP(
            transition=np.stack([kernel, kernel], axis=1),
            reward=np.array([[1.0, 3.0], [0.0, 2.0]]),
            start=np.array([0.5, 0.5]),
        )
        chain = induced_dynamics(mdp, uniform_random_policy(mdp))
        np.testing.assert_allclose(chain.P, kernel, atol=1e-15)
        np.testing.assert_allclose(chain.r, [2.0, 1.0], atol=1e-15)

    def test_policy_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            induced_dynamics(self.mdp, Policy(probs=np.ones((2, 1))))

    def test_non_stochastic_transition_rejected(self):
        with self.assertRaises(InputError):
            TabularMDP(
                transition=np.full((2, 1, 2), 0.6),
                reward=np.zeros((2, 1)),
                start=np.array([1.0, 0.0]),
            )

    def test_arrays_are_read_only(self):
        with self.assertRaises(ValueError):
            self.mdp.transition[0, 0, 0] = 0.5


class StationaryDistributionTests(SimpleTestCase):
    def test_symmetric_chain(self):
        np.testing.assert_allclose(stationary_distribution(UNIFORM_P), [0.5, 0.5], atol=1e-12)

    def test_two_state_chain(self):
        np.testing.assert_allclose(stationary_distribution(TWO_STATE_P), [2 / 3, 1 / 3], atol=1e-12)

    def test_identity_is_not_ergodic(self):
        with self.assertRaises(NonErgodicError):
            stationary_distribution(np.eye(3))

    def test_non_square(self):
        with self.assertRaises(ShapeError):
            stationary_distribution(np.ones((2, 3)) / 3)

    def test_periodic_chain_detected(self):
        flip = np.array([[0.0, 1.0], [1.0, 0.0]])
        self.assertFalse(is_ergodic(flip))
        with self.assertRaises(NonErgodicError):
            exact_solve(InducedChain(P=flip, r=np.array([1.0, 0.0])))


class ExactSolveTests(SimpleTestCase):
    def test_constant_reward(self):
        chain = InducedChain(P=np.array(TWO_STATE_P), r=np.full(2, 0.7))
        solution = exact_solve(chain)
        self.assertAlmostEqual(solution.gain, 0.7, places=12)
        np.testing.assert_allclose(solution.bias, 0.0, atol=1e-12)

    def test_worked_two_state_example(self):
        solution = exact_solve(two_state_chain())
        self.assertAlmostEqual(solution.gain, 2 / 3, places=12)
        np.testing.assert_allclose(solution.bias, [10 / 9, -20 / 9], atol=1e-10)

    def test_reward_shift_moves_gain_only(self):
        base = exact_solve(two_state_chain())
        shifted = exact_solve(two_state_chain(r=(4.0, 3.0)))
        self.assertAlmostEqual(shifted.gain, base.gain + 3.0, places=12)
        np.testing.assert_allclose(shifted.bias, base.bias, atol=1e-10)

    def test_random_instances(self):
        for index in range(100):
            mdp, target, _ = random_instance(index)
            chain = induced_dynamics(mdp, target)
            solution = exact_solve(chain)
            d = solution.stationary
            self.assertTrue(np.all(d > 0))
            self.assertLessEqual(np.max(np.abs(d @ chain.P - d)), 1e-10)
            self.assertLessEqual(np.max(np.abs(poisson_residual(chain, solution.gain, solution.bias))), 1e-10)
            self.assertLessEqual(abs(d @ solution.bias), 1e-10)

    def test_solution_set_is_shift_invariant(self):
        mdp, target, _ = random_instance(3)
        chain = induced_dynamics(mdp, target)
        solution = exact_solve(chain)
        base = poisson_residual(chain, solution.gain, solution.bias)
        for c in (-5.0, 0.25, 12.0):
            shifted = poisson_residual(chain, solution.gain, solution.bias + c)
            np.testing.assert_allclose(shifted, base, atol=1e-12)

    def test_gridworld_gain_is_inverse_return_time(self):
        spec = GridworldSpec()
        mdp = build_gridworld(spec)
        chain = induced_dynamics(mdp, gridworld_target_policy(spec, 0.1, mdp=mdp))
        solution = exact_solve(chain)
        # expected hitting times of the goal, then one return excursion from it
        others = [s for s in range(spec.num_states) if s != spec.goal]
        sub = chain.P[np.ix_(others, others)]
        hitting = np.linalg.solve(np.eye(len(others)) - sub, np.ones(len(others)))
        times = np.zeros(spec.num_states)
        times[others] = hitting
        return_time = 1.0 + chain.P[spec.goal] @ times
        self.assertAlmostEqual(solution.gain, 1.0 / return_time, places=10)
        self.assertGreater(solution.gain, 0.0)
        self.assertLess(solution.gain, 1.0)

    def test_gridworld_gain_matches_rollout(self):
        spec = GridworldSpec()
        mdp = build_gridworld(spec)
        target = gridworld_target_policy(spec, 0.1, mdp=mdp)
        gain = exact_solve(induced_dynamics(mdp, target)).gain
        _, _, rewards = sample_trajectory(mdp, target, 1_000_000, np.random.default_rng(2024))
        batch_means = rewards.reshape(100, -1).mean(axis=1)
        stderr = batch_means.std(ddof=1) / np.sqrt(len(batch_means))
        self.assertLessEqual(abs(rewards.mean() - gain), 3 * stderr)


class NStepKernelTests(SimpleTestCase):
    def test_one_step(self):
        chain = two_state_chain()
        P_n, r_n = n_step_kernel(chain, 1)
        np.testing.assert_array_equal(P_n, chain.P)
        np.testing.assert_array_equal(r_n, chain.r)

    def test_two_steps_by_hand(self):
        chain = InducedChain(P=np.array(UNIFORM_P), r=np.array([1.0, 0.0]))
        P_n, r_n = n_step_kernel(chain, 2)
        np.testing.assert_allclose(P_n, UNIFORM_P, atol=1e-15)
        np.testing.assert_allclose(r_n, [1.5, 0.5], atol=1e-15)

    def test_zero_steps_rejected(self):
        with self.assertRaises(DomainError):
            n_step_kernel(two_state_chain(), 0)

    def test_stationary_weighted_reward_is_n_gain(self):
        mdp, target, _ = random_instance(5)
        chain = induced_dynamics(mdp, target)
        solution = exact_solve(chain)
        for n in range(1, 6):
            P_n, r_n = n_step_kernel(chain, n)
            self.assertLessEqual(np.max(np.abs(P_n.sum(axis=1) - 1.0)), 1e-10)
            self.assertAlmostEqual(solution.stationary @ r_n, n * solution.gain, places=10)
            self.assertLessEqual(np.max(np.abs(n_step_bellman_residual(chain, n, solution))), 1e-10)


class CoverageTests(SimpleTestCase):
    def test_violations_and_ratios(self):
        target = Policy(probs=np.array([[0.5, 0.5], [1.0, 0.0]]))
        behavior = Policy(probs=np.array([[1.0, 0.0], [0.25, 0.75]]))
        self.assertEqual(coverage_violations(target, behavior), [(0, 1)])
        np.testing.assert_allclose(importance_ratios(target, behavior), [[0.5, 0.0], [4.0, 0.0]])


class MdpFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_round_trip_is_lossless(self):
        mdp = random_ergodic_mdp(4, 3, seed=11)
        path = os.path.join(self.tmp, "mdp.json")
        save_mdp(mdp, path)
        loaded = load_mdp(path)
        np.testing.assert_array_equal(loaded.transition, mdp.transition)
        np.testing.assert_array_equal(loaded.reward, mdp.reward)
        np.testing.assert_array_equal(loaded.start, mdp.start)

        policy = random_policy(mdp, seed=12)
        policy_path = os.path.join(self.tmp, "policy.json")
        save_policy(policy, policy_path)
        np.testing.assert_array_equal(load_policy(policy_path).probs, policy.probs)

    def test_missing_field(self):
        with self.assertRaises(InputError):
            mdp_from_dict({"transition": [[[1.0]]], "reward": [[0.0]]})

    def test_declared_shape_mismatch(self):
        data = {"num_states": 2, "transition": [[[1.0]]], "reward": [[0.0]], "start": [1.0]}
        with self.assertRaises(ShapeError):
            mdp_from_dict(data)

    def test_policy_file_without_probs(self):
        path = os.path.join(self.tmp, "bad.json")
        with open(path, "w") as f:
            json.dump({"num_states": 1}, f)
        with self.assertRaises(InputError):
            load_policy(path)


class GridworldTests(SimpleTestCase):
    def setUp(self):
        self.spec = GridworldSpec()
        self.mdp = build_gridworld(self.spec)

    def test_shape(self):
        self.assertEqual(self.mdp.num_states, 25)
        self.assertEqual(self.mdp.num_actions, 4)
        self.assertEqual(self.spec.goal, 24)

    def test_wall_is_self_loop(self):
        up = 0
        self.assertEqual(self.mdp.transition[0, up, 0], 1.0)
        self.assertEqual(self.mdp.reward[0, up], 0.0)

    def test_goal_resets_to_start(self):
        np.testing.assert_array_equal(self.mdp.transition[24, :, 0], np.ones(4))
        np.testing.assert_array_equal(self.mdp.reward[24], np.zeros(4))

    def test_reward_on_landing_at_goal(self):
        right, down = 3, 1
        self.assertEqual(self.mdp.reward[23, right], 1.0)
        self.assertEqual(self.mdp.reward[19, down], 1.0)
        self.assertEqual(self.mdp.reward.sum(), 2.0)

    def test_greedy_actions(self):
        table = greedy_actions(self.spec)
        self.assertEqual(table[0], 1)  # down comes before right
        self.assertEqual(table[4], 1)
        self.assertEqual(table[20], 3)

    def test_too_small(self):
        with self.assertRaises(DomainError):
            GridworldSpec(width=1, height=5)
        with self.assertRaises(DomainError):
            GridworldSpec(width=2, height=2, goal=0)

    def test_full_support_chain_is_ergodic(self):
        chain = induced_dynamics(self.mdp, gridworld_target_policy(self.spec, 0.1, mdp=self.mdp))
        self.assertTrue(is_ergodic(chain.P))
        self.assertIsNotNone(positivity_horizon(chain.P))


class PolicyConstructorTests(SimpleTestCase):
    def setUp(self):
        self.mdp = build_gridworld(GridworldSpec())
        self.greedy = greedy_actions(GridworldSpec())

    def test_uniform(self):
        np.testing.assert_array_equal(uniform_random_policy(self.mdp).probs, np.full((25, 4), 0.25))
        single = TabularMDP(transition=np.ones((1, 1, 1)), reward=np.zeros((1, 1)), start=np.ones(1))
        np.testing.assert_array_equal(uniform_random_policy(single).probs, [[1.0]])

    def test_epsilon_greedy_probabilities(self):
        probs = epsilon_greedy_policy(self.mdp, self.greedy, 0.1).probs
        self.assertAlmostEqual(probs[0, self.greedy[0]], 0.925, places=12)
        self.assertAlmostEqual(probs[0, 0], 0.025, places=15)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-15)

    def test_epsilon_extremes(self):
        greedy = epsilon_greedy_policy(self.mdp, self.greedy, 0.0).probs
        np.testing.assert_array_equal(greedy.argmax(axis=1), self.greedy)
        self.assertEqual(greedy.max(axis=1).min(), 1.0)
        np.testing.assert_allclose(epsilon_greedy_policy(self.mdp, self.greedy, 1.0).probs, 0.25)

    def test_epsilon_out_of_range(self):
        with self.assertRaises(DomainError):
            epsilon_greedy_policy(self.mdp, self.greedy, 1.5)


class RandomMdpTests(SimpleTestCase):
    def test_deterministic_in_seed(self):
        a, b = random_ergodic_mdp(5, 3, seed=4), random_ergodic_mdp(5, 3, seed=4)
        np.testing.assert_array_equal(a.transition, b.transition)
        np.testing.assert_array_equal(a.reward, b.reward)

    def test_floor(self):
        mdp = random_ergodic_mdp(6, 2, seed=1, floor=1e-3)
        self.assertGreaterEqual(mdp.transition.min(), 1e-3 - 1e-15)
        self.assertTrue(np.all((mdp.reward >= 0) & (mdp.reward <= 1)))

    def test_stationary_succeeds(self):
        for seed in range(100):
            mdp = random_ergodic_mdp(2 + seed % 7, 2, seed=seed)
            chain = induced_dynamics(mdp, uniform_random_policy(mdp))
            self.assertAlmostEqual(stationary_distribution(chain.P).sum(), 1.0, places=12)

    def test_lazy_cycle_is_doubly_stochastic(self):
        chain = lazy_cycle_chain(6)
        self.assertTrue(is_doubly_stochastic(chain.P))
        with self.assertRaises(DomainError):
            lazy_cycle_chain(2)


class RmsveTests(SimpleTestCase):
    def setUp(self):
        self.d = WeightedNorm(np.array([0.2, 0.3, 0.5]))
        self.v_ref = np.array([1.0, -2.0, 0.5])

    def test_zero_on_reference(self):
        self.assertEqual(rmsve_tvr(self.v_ref, self.v_ref, self.d), 0.0)

    def test_shift_invariance(self):
        self.assertAlmostEqual(rmsve_tvr(self.v_ref + 7.0, self.v_ref, self.d), 0.0, places=12)
        v = np.array([0.3, 0.1, -1.0])
        for c in (-3.0, 0.5, 100.0):
            self.assertAlmostEqual(
                rmsve_tvr(v + c, self.v_ref, self.d), rmsve_tvr(v, self.v_ref, self.d), places=12
            )

    def test_closed_form_example(self):
        d = WeightedNorm(np.array([0.5, 0.5]))
        self.assertAlmostEqual(rmsve_tvr(np.array([1.0, -1.0]), np.zeros(2), d), 1.0, places=15)

    def test_brute_force_offset_search(self):
        rng = np.random.default_rng(0)
        offsets = np.arange(-10.0, 10.0 + 5e-4, 1e-3)
        for _ in range(100):
            size = int(rng.integers(2, 8))
            d = WeightedNorm(rng.dirichlet(np.ones(size)) * (1 - 1e-3 * size) + 1e-3)
            v, v_ref = rng.normal(size=size), rng.normal(size=size)
            diff = v - v_ref
            grid = np.sqrt(((diff[None, :] - offsets[:, None]) ** 2) @ d.weights)
            self.assertLessEqual(rmsve_tvr(v, v_ref, d), grid.min() + 1e-6)

    def test_matches_plain_rmsve_when_centered(self):
        diff = np.array([1.0, 1.0, -1.0])  # 0.2 + 0.3 - 0.5 = 0
        self.assertAlmostEqual(
            rmsve_tvr(self.v_ref + diff, self.v_ref, self.d),
            weighted_rmsve(self.v_ref + diff, self.v_ref, self.d),
            places=12,
        )

    def test_invalid_inputs(self):
        with self.assertRaises(ShapeError):
            rmsve_tvr(np.zeros(2), np.zeros(3), self.d)
        with self.assertRaises(InputError):
            WeightedNorm(np.array([0.0, 1.0]))
        with self.assertRaises(InputError):
            WeightedNorm(np.array([0.5, 0.6]))


class LearningRateTests(SimpleTestCase):
    def test_constant(self):
        schedule = LearningRateSchedule(kind="constant", c1=0.01)
        self.assertEqual(learning_rate(schedule, 0), 0.01)
        self.assertEqual(learning_rate(schedule, 123_456), 0.01)

    def test_polynomial_value(self):
        schedule = LearningRateSchedule(kind="polynomial", c1=1.0, c2=100.0, beta=0.6)
        self.assertAlmostEqual(learning_rate(schedule, 0), 100 ** -0.6, places=15)
        self.assertAlmostEqual(learning_rate(schedule, 0), 0.063096, places=6)

    def test_polynomial_non_increasing(self):
        for beta in (0.51, 0.6, 0.8, 1.0):
            schedule = LearningRateSchedule(kind="polynomial", c1=2.0, c2=1.0, beta=beta)
            rates = [learning_rate(schedule, t) for t in range(0, 10 ** 6 + 1, 997)]
            self.assertTrue(all(a >= b for a, b in zip(rates, rates[1:])))
            self.assertGreater(rates[-1], 0.0)

    def test_invalid_schedules(self):
        with self.assertRaises(ConfigError):
            LearningRateSchedule(kind="polynomial", c1=1.0, c2=1.0, beta=0.4)
        with self.assertRaises(ConfigError):
            LearningRateSchedule(kind="cosine")
        with self.assertRaises(ConfigError):
            LearningRateSchedule(kind="constant", c1=0.0)


class StepTests(SimpleTestCase):
    def config(self, n=1, eta=1.0, c1=0.1, num_states=2):
        return LearnerConfig(n=n, eta=eta, schedule=LearningRateSchedule(c1=c1), num_states=num_states)

    def test_single_step_by_hand(self):
        state = LearnerState.zeros(2)
        step(state, self.config(), Transition(0, 0, 1.0, 1))
        np.testing.assert_allclose(state.v, [0.1, 0.0])
        self.assertAlmostEqual(state.J, 0.1)
        self.assertEqual(state.updates, 1)

    def test_no_update_before_full_window(self):
        state = LearnerState.zeros(3)
        step(state, self.config(n=2, num_states=3), Transition(0, 0, 1.0, 1))
        np.testing.assert_array_equal(state.v, np.zeros(3))
        self.assertEqual(state.J, 0.0)
        self.assertEqual(state.updates, 0)
        self.assertEqual(len(state.window), 1)

    def test_zero_ratio_freezes_values(self):
        config = self.config(n=2, num_states=3)
        state = LearnerState.zeros(3)
        step(state, config, Transition(0, 0, 1.0, 1, rho=0.0))
        step(state, config, Transition(1, 0, 1.0, 2, rho=1.0))
        np.testing.assert_array_equal(state.v, np.zeros(3))
        self.assertEqual(state.J, 0.0)
        self.assertEqual(state.updates, 1)

    def test_window_stays_at_n(self):
        config = self.config(n=3, num_states=4)
        state = LearnerState.zeros(4)
        for t in range(10):
            step(state, config, Transition(t % 4, 0, 0.5, (t + 1) % 4))
            self.assertLessEqual(len(state.window), 3)
        self.assertEqual(len(state.window), 3)
        self.assertEqual(state.updates, 8)

    def test_only_origin_changes(self):
        config = self.config(n=2, num_states=4)
        state = LearnerState.zeros(4)
        for t, (s, s_next) in enumerate([(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]):
            before = state.v.copy()
            step(state, config, Transition(s, 0, 1.0 + t, s_next))
            changed = np.nonzero(state.v != before)[0]
            self.assertLessEqual(len(changed), 1)
            if len(changed):
                self.assertEqual(changed[0], state.window[0].state)

    def test_invalid_transitions(self):
        state = LearnerState.zeros(2)
        with self.assertRaises(ShapeError):
            step(state, self.config(), Transition(0, 0, 1.0, 5))
        with self.assertRaises(InputError):
            step(state, self.config(), Transition(0, 0, float("nan"), 1))
        with self.assertRaises(InputError):
            step(state, self.config(), Transition(0, 0, 1.0, 1, rho=float("inf")))

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            self.config(n=0)
        with self.assertRaises(ConfigError):
            self.config(eta=0.0)


class CompactRecursionTests(SimpleTestCase):
    def setUp(self):
        self.mdp = random_ergodic_mdp(4, 2, seed=42)
        self.behavior = uniform_random_policy(self.mdp)
        self.target = random_policy(self.mdp, seed=44)
        states, actions, rewards = sample_trajectory(
            self.mdp, self.behavior, 10_000, np.random.default_rng(7)
        )
        ratios = importance_ratios(self.target, self.behavior)[states[:-1], actions]
        self.transitions = [
            Transition(int(states[t]), int(actions[t]), float(rewards[t]), int(states[t + 1]), float(ratios[t]))
            for t in range(10_000)
        ]

    def run_both(self, config, full, compact):
        for tr in self.transitions:
            step(full, config, tr)
            step_compact(compact, config, tr)
            yield full, compact

    def test_bit_identical_values(self):
        for n in (1, 2):
            config = LearnerConfig(n=n, eta=float(n), schedule=LearningRateSchedule(c1=0.05), num_states=4)
            for full, compact in self.run_both(config, LearnerState.zeros(4), LearnerState.zeros(4)):
                np.testing.assert_array_equal(full.v, compact.v)
                np.testing.assert_array_equal([full.J], [compact_average_reward(compact, config)])

    def test_average_reward_identity(self):
        config = LearnerConfig(n=3, eta=0.3, schedule=LearningRateSchedule(c1=0.02), num_states=4)
        for full, compact in self.run_both(config, LearnerState.zeros(4), LearnerState.zeros(4)):
            self.assertAlmostEqual(full.J, config.eta / config.n * full.v.sum(), delta=1e-12)
        np.testing.assert_allclose(full.v, compact.v, atol=1e-9)
        self.assertAlmostEqual(full.J, compact_average_reward(compact, config), delta=1e-9)

    def test_non_zero_initialization(self):
        config = LearnerConfig(n=2, eta=0.5, schedule=LearningRateSchedule(c1=0.02), num_states=4)
        v0, J0 = np.array([0.3, -0.1, 0.2, 0.0]), 0.4
        full = LearnerState.initial(v0, J0)
        compact = LearnerState.initial(v0, J0, eta=config.eta, n=config.n)
        for full, compact in self.run_both(config, full, compact):
            pass
        np.testing.assert_allclose(full.v, compact.v, atol=1e-9)
        self.assertAlmostEqual(full.J, compact_average_reward(compact, config), delta=1e-9)

    def test_zero_reward_keeps_zero_values(self):
        config = LearnerConfig(n=2, eta=1.0, schedule=LearningRateSchedule(c1=0.1), num_states=4)
        state = LearnerState.zeros(4)
        for tr in self.transitions[:500]:
            step_compact(state, config, tr._replace(reward=0.0))
        np.testing.assert_array_equal(state.v, np.zeros(4))
        self.assertEqual(state.sigma, 0.0)


class TrajectoryTests(SimpleTestCase):
    def setUp(self):
        self.mdp = random_ergodic_mdp(3, 2, seed=3)
        self.policy = random_policy(self.mdp, seed=4)
        self.config = LearnerConfig(n=2, eta=1.0, schedule=LearningRateSchedule(c1=0.05), num_states=3)

    def test_sample_lengths(self):
        states, actions, rewards = sample_trajectory(self.mdp, self.policy, 50, np.random.default_rng(0))
        self.assertEqual((len(states), len(actions), len(rewards)), (51, 50, 50))
        np.testing.assert_array_equal(rewards, self.mdp.reward[states[:-1], actions])

    def test_deterministic_in_seed(self):
        a = run_trajectory(self.mdp, self.policy, self.policy, self.config, 1_000, seed=9, probe=100)
        b = run_trajectory(self.mdp, self.policy, self.policy, self.config, 1_000, seed=9, probe=100)
        self.assertEqual([p.step for p in a.probes], list(range(0, 1_001, 100)))
        for pa, pb in zip(a.probes, b.probes):
            np.testing.assert_array_equal(pa.v, pb.v)
            self.assertEqual(pa.J, pb.J)

    def test_on_policy_ratios_are_one(self):
        ratios = importance_ratios(self.policy, self.policy)
        np.testing.assert_array_equal(ratios, np.ones_like(ratios))

    def test_coverage_checked_before_sampling(self):
        behavior = Policy(probs=np.tile([1.0, 0.0], (3, 1)))
        with self.assertRaises(ConfigError):
            run_trajectory(self.mdp, behavior, self.policy, self.config, 10, seed=0)

    def test_converges_to_solution_set(self):
        mdp = random_ergodic_mdp(3, 2, seed=21)
        policy = random_policy(mdp, seed=22)
        solution = exact_solve(induced_dynamics(mdp, policy))
        weights = WeightedNorm(solution.stationary)
        config = LearnerConfig(
            n=1, eta=1.0,
            schedule=LearningRateSchedule(kind="polynomial", c1=1.0, c2=100.0, beta=0.6),
            num_states=3,
        )
        finals = []
        for seed in range(10):
            record = run_trajectory(mdp, policy, policy, config, 200_000, seed=seed, probe=50_000)
            finals.append(record.rmsve_series(solution.bias, weights)[-1])
        scale = weights.norm(solution.bias) + 1.0
        self.assertLessEqual(float(np.median(finals)), 0.05 * scale)


class SampledOperatorTests(SimpleTestCase):
    def test_single_segment(self):
        v = np.array([1.0, 2.0, 3.0])
        out = sampled_operator(v, ([0, 2, 1], [1.0, 0.5], [2.0, 0.5]), eta=0.5)
        # rho = 1, delta = 1.5 - 0.5 * 6 + 2 - 1 = -0.5
        np.testing.assert_allclose(out, [-0.5, 0.0, 0.0])

    def test_segment_shape(self):
        with self.assertRaises(ShapeError):
            sampled_operator(np.zeros(2), ([0, 1], [1.0, 1.0], [1.0, 1.0]), eta=1.0)

    def test_monte_carlo_matches_expected_operator(self):
        mdp = random_ergodic_mdp(3, 2, seed=31)
        behavior = uniform_random_policy(mdp)
        target = random_policy(mdp, seed=33)
        n, eta = 2, 0.5
        v = np.array([0.5, -0.2, 0.1])
        P_n, r_n = n_step_kernel(induced_dynamics(mdp, target), n)
        d_mu = stationary_distribution(induced_dynamics(mdp, behavior).P)
        expected = expected_operator(P_n, r_n, d_mu, eta, v)
        mean, stderr = monte_carlo_operator(mdp, behavior, target, v, n, eta, 10 ** 6, seed=5)
        self.assertTrue(np.all(np.abs(mean - expected) <= 3 * stderr), (mean, expected, stderr))


class BuildMatricesTests(SimpleTestCase):
    def test_two_state_by_hand(self):
        triple = build_matrices(UNIFORM_P, [0.5, 0.5], 1.0, n=1)
        np.testing.assert_allclose(triple.A, [[0.75, 0.25], [0.25, 0.75]], atol=1e-15)
        np.testing.assert_allclose(triple.B, np.eye(2) - triple.K, atol=0)

    def test_construction_routes_agree(self):
        for index in range(50):
            mdp, target, behavior = random_instance(index)
            P_n, _ = n_step_kernel(induced_dynamics(mdp, target), 1 + index % 3)
            d_mu = stationary_distribution(induced_dynamics(mdp, behavior).P)
            triple = build_matrices(P_n, d_mu, 0.7)
            np.testing.assert_allclose(triple.K.sum(axis=1), 1.0, atol=1e-10)
            self.assertTrue(np.all(triple.K >= 0))
            np.testing.assert_allclose(triple.A, coefficient_matrix(P_n, d_mu, 0.7), atol=1e-12)

    def test_zero_eta(self):
        triple = build_matrices(TWO_STATE_P, [2 / 3, 1 / 3], 0.0)
        np.testing.assert_array_equal(triple.A, triple.B)
        np.testing.assert_allclose(triple.A @ np.ones(2), 0.0, atol=1e-15)

    def test_invalid_inputs(self):
        with self.assertRaises(InputError):
            build_matrices([[0.5, 0.6], [0.5, 0.5]], [0.5, 0.5], 1.0)
        with self.assertRaises(InputError):
            build_matrices(UNIFORM_P, [1.0, 0.0], 1.0)


class SpectrumTests(SimpleTestCase):
    def test_identity(self):
        np.testing.assert_allclose(spectrum(np.eye(4)), np.ones(4))

    def test_two_by_two(self):
        np.testing.assert_allclose(spectrum([[0.75, 0.25], [0.25, 0.75]]), [0.5, 1.0], atol=1e-12)

    def test_stochastic_matrix_has_unit_eigenvalue(self):
        mdp, target, _ = random_instance(6)
        eigenvalues = spectrum(induced_dynamics(mdp, target).P)
        self.assertAlmostEqual(np.max(np.abs(eigenvalues)), 1.0, delta=1e-9)
        self.assertLessEqual(np.min(np.abs(eigenvalues - 1.0)), 1e-9)

    def test_non_square(self):
        with self.assertRaises(ShapeError):
            spectrum(np.ones((2, 3)))


class BierkensConditionTests(SimpleTestCase):
    def test_on_policy_kernel_annihilation(self):
        mdp, target, _ = random_instance(8)
        d_pi = exact_solve(induced_dynamics(mdp, target)).stationary
        P_n, _ = n_step_kernel(induced_dynamics(mdp, target), 2)
        verdicts = check_bierkens(build_matrices(P_n, d_pi, 1.0), d_pi)
        self.assertEqual(verdicts.c4, Verdict.HOLDS)

    def test_eta0_makes_entrywise_condition_hold(self):
        mdp, target, behavior = random_instance(9)
        P_n, _ = n_step_kernel(induced_dynamics(mdp, target), 1)
        d_pi = stationary_distribution(induced_dynamics(mdp, target).P)
        d_mu = stationary_distribution(induced_dynamics(mdp, behavior).P)
        verdicts = check_bierkens(build_matrices(P_n, d_mu, eta0_bound(P_n)), d_pi)
        self.assertEqual(verdicts.c5, Verdict.HOLDS)

    def test_kernel_conditions_on_random_instances(self):
        for index in range(100):
            mdp, target, behavior = random_instance(index)
            d_pi = stationary_distribution(induced_dynamics(mdp, target).P)
            d_mu = stationary_distribution(induced_dynamics(mdp, behavior).P)
            P_n, _ = n_step_kernel(induced_dynamics(mdp, target), 1 + index % 3)
            triple = build_matrices(P_n, d_mu, 0.5)
            verdicts = check_bierkens(triple, d_pi)
            self.assertTrue(verdicts.base_conditions, (index, verdicts.as_dict()))
            size = len(d_mu)
            self.assertEqual(verdicts.rank_B, size - 1)
            np.testing.assert_allclose(verdicts.kernel_right, np.ones(size) / np.sqrt(size), atol=1e-8)
            ratio = d_pi / d_mu
            np.testing.assert_allclose(verdicts.kernel_left, ratio / np.linalg.norm(ratio), atol=1e-8)
            np.testing.assert_allclose(triple.B @ np.ones(size), 0.0, atol=1e-10)
            np.testing.assert_allclose(ratio @ triple.B, 0.0, atol=1e-10)
            near_zero = np.sum(np.abs(spectrum(triple.B)) <= 1e-8)
            self.assertEqual(near_zero, 1)


class StabilityCertificateTests(SimpleTestCase):
    def test_on_policy_always_stable(self):
        for index in range(200):
            mdp, target, _ = random_instance(index)
            chain = induced_dynamics(mdp, target)
            d_pi = stationary_distribution(chain.P)
            for n in (1, 2, 3):
                P_n, _ = n_step_kernel(chain, n)
                for eta in (0.01, 0.1, 1.0, 10.0):
                    min_real = spectrum(build_matrices(P_n, d_pi, eta).A).real.min()
                    self.assertGreater(min_real, 1e-9, (index, n, eta))

    def test_off_policy_stable_up_to_eta0(self):
        for index in range(50):
            mdp, target, behavior = random_instance(index)
            P_n, _ = n_step_kernel(induced_dynamics(mdp, target), 1 + index % 2)
            d_pi = stationary_distribution(induced_dynamics(mdp, target).P)
            d_mu = stationary_distribution(induced_dynamics(mdp, behavior).P)
            eta0 = eta0_bound(P_n)
            self.assertGreater(eta0, 0.0)
            for eta in (eta0 / 2, eta0):
                report = analyze(P_n, d_mu, d_pi, eta)
                self.assertTrue(report.strictly_positive_stable)
                self.assertIn(CERT_ETA0, report.certificates)

    def test_gridworld_eta0_is_zero(self):
        spec = GridworldSpec()
        mdp = build_gridworld(spec)
        chain = induced_dynamics(mdp, gridworld_target_policy(spec, 0.1, mdp=mdp))
        P_3, _ = n_step_kernel(chain, 3)
        self.assertEqual(eta0_bound(P_3), 0.0)
        self.assertEqual(eta0_bound(UNIFORM_P), 1.0)

    def test_doubly_stochastic_lazy_cycles(self):
        rng = np.random.default_rng(3)
        for size in range(3, 11):
            chain = lazy_cycle_chain(size)
            d_mu = rng.dirichlet(np.ones(size)) * 0.9 + 0.1 / size
            d_pi = np.full(size, 1.0 / size)
            for eta in (0.1, 1.0, 10.0):
                self.assertTrue(lyapunov_check(chain.P, d_mu, eta))
                report = analyze(chain.P, d_mu, d_pi, eta)
                self.assertTrue(report.strictly_positive_stable)
                self.assertIn(CERT_DOUBLY, report.certificates)

    def test_degenerate_lyapunov(self):
        self.assertFalse(lyapunov_check(np.eye(3), np.full(3, 1 / 3), 0.0))

    def test_no_false_certificates(self):
        spec = GridworldSpec()
        mdp = build_gridworld(spec)
        target = gridworld_target_policy(spec, 0.1, mdp=mdp)
        chain = induced_dynamics(mdp, target)
        d_pi = stationary_distribution(chain.P)
        d_mu = stationary_distribution(induced_dynamics(mdp, uniform_random_policy(mdp)).P)
        P_3, _ = n_step_kernel(chain, 3)
        for eta in (0.1, 0.5, 1.0, 2.0):
            report = analyze(P_3, d_mu, d_pi, eta, n=3)
            self.assertNotIn(CERT_ETA0, report.certificates)
            self.assertNotIn(CERT_DOUBLY, report.certificates)
            self.assertFalse(report.doubly_stochastic)
            self.assertIsNone(report.lyapunov_pd)
            self.assertEqual(report.certified_stable, bool(report.certificates))

    def test_on_policy_report(self):
        mdp, target, _ = random_instance(12)
        chain = induced_dynamics(mdp, target)
        d_pi = stationary_distribution(chain.P)
        report = analyze(chain.P, d_pi, d_pi, 2.0, n=1)
        self.assertIn(CERT_KERNEL, report.certificates)
        data = report.to_dict()
        self.assertEqual(len(data["spectrum"]), mdp.num_states)
        self.assertEqual(set(data["bierkens"]), {"c1", "c2", "c3", "c4", "c5"})
        json.dumps(data)

    def test_eta_sweep(self):
        sweep = eta_sweep(UNIFORM_P, [0.5, 0.5], [0.0, 1.0, 2.0])
        self.assertEqual([eta for eta, _ in sweep], [0.0, 1.0, 2.0])
        self.assertAlmostEqual(sweep[0][1], 0.0, places=12)
        self.assertAlmostEqual(sweep[1][1], 0.5, places=12)


class LipschitzTests(SimpleTestCase):
    def test_values(self):
        self.assertEqual(lipschitz_bound(1.0, 1, 0.0, 1), 2.0)
        self.assertAlmostEqual(lipschitz_bound(0.5, 2, 0.1, 25), 18.0, places=12)
        self.assertAlmostEqual(lipschitz_bound(1.0, 3, 0.1, 25), 4.5, places=12)

    def test_domain(self):
        with self.assertRaises(DomainError):
            lipschitz_bound(0.0, 1, 1.0, 3)


class FixedPointTests(SimpleTestCase):
    def test_constant_reward(self):
        mdp, target, _ = random_instance(4)
        chain = induced_dynamics(mdp, target)
        n, eta, c = 3, 0.4, 0.8
        P_n, _ = n_step_kernel(chain, n)
        size = mdp.num_states
        v = fixed_point(P_n, np.full(size, n * c), eta)
        np.testing.assert_allclose(v, n * c / (eta * size), atol=1e-10)

    def test_fixed_point_zeroes_expected_operator(self):
        for index in range(20):
            mdp, target, behavior = random_instance(index)
            chain = induced_dynamics(mdp, target)
            solution = exact_solve(chain)
            d_mu = stationary_distribution(induced_dynamics(mdp, behavior).P)
            n = 1 + index % 3
            P_n, r_n = n_step_kernel(chain, n)
            v_inf = fixed_point(P_n, r_n, 0.5)
            system = np.eye(len(r_n)) - P_n + 0.5
            self.assertLessEqual(np.max(np.abs(system @ v_inf - r_n)), 1e-10)
            np.testing.assert_allclose(expected_operator(P_n, r_n, d_mu, 0.5, v_inf), 0.0, atol=1e-10)
            offset = v_inf - solution.bias
            self.assertLessEqual(np.ptp(offset), 1e-8)

    def test_two_state_offset_is_constant(self):
        chain = two_state_chain()
        P_2, r_2 = n_step_kernel(chain, 2)
        offset = fixed_point(P_2, r_2, 1.0) - exact_solve(chain).bias
        self.assertAlmostEqual(offset[0], offset[1], delta=1e-8)

    def test_expected_operator_zero(self):
        out = expected_operator(UNIFORM_P, np.zeros(2), [0.5, 0.5], 1.0, np.zeros(2))
        np.testing.assert_array_equal(out, np.zeros(2))
        with self.assertRaises(ShapeError):
            expected_operator(UNIFORM_P, np.zeros(3), [0.5, 0.5], 1.0, np.zeros(2))

    def test_singular_system_names_eta(self):
        with self.assertRaises(SingularSystemError) as ctx:
            fixed_point(UNIFORM_P, np.array([1.0, 0.0]), 0.0)
        self.assertEqual(ctx.exception.eta, 0.0)
        self.assertIn("eta=0.0", str(ctx.exception))


class PositivityHorizonTests(SimpleTestCase):
    def test_horizon(self):
        self.assertEqual(positivity_horizon(UNIFORM_P), 1)
        self.assertEqual(positivity_horizon([[0.0, 1.0], [0.5, 0.5]]), 2)
        self.assertIsNone(positivity_horizon([[0.0, 1.0], [1.0, 0.0]]))

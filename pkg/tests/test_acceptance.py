"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The experiment criteria (6 to 10) train real agents at desk scale and take
roughly half an hour on one CPU core in total.
"""
import math
import os
import time
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import spearmanr

from gradacl import cli, envs
from gradacl.config import preset
from gradacl.loop import MetricsLog, _streams, ema_smooth, evaluate_episodes, steps_to_threshold, train
from gradacl.nn import NetConfig, backward, forward, init_network
from gradacl.student import GradRecord, finalize_metrics, make_sac_nets
from gradacl.teacher import (
    TeacherConfig, TeacherObservation, TeacherSample, advantages, assign_task, make_teacher,
    policy_gradient, reinforce_update, surrogate_loss_and_grad,
)

from oracles import central_diff, max_rel_err, normal_pdf

SEEDS = (0, 1, 2, 3, 4)
UNIT_BOX = SimpleNamespace(init_lower=np.zeros(1), init_upper=np.ones(1), init_dim=1)
ZERO_OBS = TeacherObservation(np.zeros(2))


def bandit_reward(rho0):
    return -(float(rho0[0]) - 0.8) ** 2


# 1 -----------------------------------------------------------------------

def test_metric_definitions(criterion):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = -math.inf
    for _ in range(1000):
        T, d = int(rng.integers(1, 65)), int(rng.integers(10, 1001))
        grads = rng.normal(size=(T, d)) * rng.exponential(size=(T, 1))
        rec = GradRecord()
        for g in grads:
            rec.add(g)
        m1, m2 = finalize_metrics(rec)
        worst = max(worst, m2 - m1)
    single_equal = all(
        (lambda m: m[0] == m[1])(finalize_metrics(_record([rng.normal(size=int(rng.integers(10, 1001)))])))
        for _ in range(100)
    )
    anti_zero = all(
        (lambda g: finalize_metrics(_record([g, -g]))[1] == 0.0)(rng.normal(size=int(rng.integers(10, 1001))))
        for _ in range(100)
    )
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and single_equal and anti_zero and elapsed < 5.0
    criterion(1, ok, f"max(metric2 - metric1) = {worst:.3g}, T=1 equal: {single_equal}, "
                     f"antiparallel zero: {anti_zero}, {elapsed:.2f} s")
    assert ok


def _record(grads):
    rec = GradRecord()
    for g in grads:
        rec.add(g)
    return rec


# 2 -----------------------------------------------------------------------

def test_gradient_correctness(criterion):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(50):
        cfg = NetConfig(int(rng.integers(1, 7)), int(rng.integers(1, 5)), int(rng.integers(2, 9)),
                        int(rng.integers(1, 4)), ("tanh", "relu")[i % 2])
        p = init_network(cfg, i)
        p = p.with_values(p.values + rng.normal(scale=0.1, size=len(p)))
        x = rng.normal(size=(3, cfg.input_dim))
        target = rng.normal(size=(3, cfg.output_dim))

        def loss(v):
            out, _ = forward(p.with_values(v), cfg, x)
            return 0.5 * float(np.sum((out - target) ** 2))

        out, cache = forward(p, cfg, x)
        analytic = backward(p, cfg, cache, out - target).values
        worst = max(worst, max_rel_err(analytic, central_diff(loss, p.values)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 30.0
    criterion(2, ok, f"worst per-coordinate relative error {worst:.2e} over 50 nets, {elapsed:.2f} s")
    assert ok


# 3 -----------------------------------------------------------------------

def _bandit_value(mu, log_std):
    """Expected bandit reward under raw ~ N(mu, sigma), by quadrature."""
    sigma = math.exp(log_std)

    def integrand(z):
        rho = (math.tanh(mu + sigma * z) + 1.0) / 2.0
        return -(rho - 0.8) ** 2 * normal_pdf(z)

    return integrate.quad(integrand, -12.0, 12.0, epsabs=1e-14, epsrel=1e-13)[0]


def test_reinforce_matches_score_function_expectation(criterion):
    t0 = time.perf_counter()
    mu, log_std, n = 0.3, -0.5, 1_000_000
    cfg = TeacherConfig(k=n, reward_normalization="none")
    pol = make_teacher(1, cfg, 0)
    # zero observation and zero hidden biases: the mean is exactly the output bias
    values = pol.params.values.copy()
    values[-1] = mu
    pol = replace(pol, params=pol.params.with_values(values), log_std=np.array([log_std]))
    rng = np.random.default_rng(3)
    raw = mu + math.exp(log_std) * rng.standard_normal(n)
    rho = (np.tanh(raw) + 1.0) / 2.0
    rewards = -(rho - 0.8) ** 2

    obs = np.zeros((n, 2))
    _, grad = surrogate_loss_and_grad(pol, obs, raw[:, None], advantages(rewards, "none"))
    implemented = -np.array([grad[len(pol.params) - 1], grad[-1]])

    # exact gradient: finite differences of the quadrature value
    exact = central_diff(lambda v: _bandit_value(v[0], v[1]), np.array([mu, log_std]), h=1e-4)

    # independent Monte-Carlo score-function estimate (no baseline) on fresh draws
    rng2 = np.random.default_rng(4)
    z = rng2.standard_normal(n)
    r2 = -((np.tanh(mu + math.exp(log_std) * z) + 1.0) / 2.0 - 0.8) ** 2
    score = np.stack([r2 * z / math.exp(log_std), r2 * (z * z - 1.0)], axis=1)
    mc, mc_se = score.mean(axis=0), score.std(axis=0) / math.sqrt(n)

    zi = (raw - mu) / math.exp(log_std)
    adv = rewards - rewards.mean()
    per = np.stack([adv * zi / math.exp(log_std), adv * (zi * zi - 1.0)], axis=1)
    se = per.std(axis=0) / math.sqrt(n)
    elapsed = time.perf_counter() - t0
    dev = np.abs(implemented - exact) / se
    dev_mc = np.abs(mc - exact) / mc_se
    ok = bool(np.all(dev < 2.0) and np.all(dev_mc < 2.0) and elapsed < 60.0)
    criterion(3, ok, f"|implemented - exact| = {np.round(dev, 2).tolist()} SE, "
                     f"independent MC {np.round(dev_mc, 2).tolist()} SE, {elapsed:.1f} s")
    assert ok


def test_reinforce_full_path_agrees_with_stacked_gradient():
    # the dataset route used in training gives the same gradient as the stacked arrays
    cfg = TeacherConfig(k=64, reward_normalization="none")
    pol = make_teacher(1, cfg, 1)
    rng = np.random.default_rng(0)
    ds = []
    for _ in range(64):
        rho0, raw = assign_task(pol, ZERO_OBS, UNIT_BOX, rng)
        ds.append(TeacherSample(ZERO_OBS, raw, rho0, 0.0, bandit_reward(rho0)))
    obs = np.zeros((64, 2))
    raw = np.stack([s.raw_action for s in ds])
    _, stacked = surrogate_loss_and_grad(pol, obs, raw, advantages([s.reward for s in ds], "none"))
    np.testing.assert_array_equal(policy_gradient(pol, ds, cfg), stacked)


# 4 -----------------------------------------------------------------------

def _train_bandit(seed, k=16, n_updates=200):
    cfg = TeacherConfig(k=k)
    pol = make_teacher(1, cfg, seed)
    rng = np.random.default_rng(seed)
    for _ in range(n_updates):
        ds = []
        for _ in range(k):
            rho0, raw = assign_task(pol, ZERO_OBS, UNIT_BOX, rng)
            ds.append(TeacherSample(ZERO_OBS, raw, rho0, 0.0, bandit_reward(rho0)))
        pol = reinforce_update(pol, ds, cfg)
    # mean assignment: average over many draws from the final policy
    return float(np.mean([assign_task(pol, ZERO_OBS, UNIT_BOX, rng)[0][0] for _ in range(20_000)]))


def test_teacher_bandit_learnability(criterion):
    t0 = time.perf_counter()
    means = [_train_bandit(s) for s in SEEDS]
    hits = sum(abs(m - 0.8) < 0.1 for m in means)
    elapsed = time.perf_counter() - t0
    ok = hits >= 4 and elapsed < 120.0
    criterion(4, ok, f"mean assignments {[round(m, 3) for m in means]}, {hits}/5 within 0.1 of 0.8, "
                     f"{elapsed:.1f} s")
    assert ok


# 5 -----------------------------------------------------------------------

def test_ema_smoothing(criterion):
    cases = [
        (([4.0, -1.0, 2.5, 7.0], 0.0), [4.0, -1.0, 2.5, 7.0]),
        (([1.0, 3.0], 0.5), [1.0, 2.0]),
        (([5.0] * 4, 0.9), [5.0] * 4),
        (([0.0, 4.0, -2.0, 8.0], 0.5), [0.0, 2.0, 0.0, 4.0]),
        (([10.0, 0.0, 0.0], 0.9), [10.0, 9.0, 8.1]),
    ]
    got = [ema_smooth(*args) for args, _ in cases]
    ok = all(np.allclose(g, want, rtol=0, atol=1e-12) for g, (_, want) in zip(got, cases))
    criterion(5, ok, f"{sum(np.allclose(g, w, rtol=0, atol=1e-12) for g, (_, w) in zip(got, cases))}"
                     f"/{len(cases)} fixture series exact")
    assert ok


# 6 -----------------------------------------------------------------------

def _reach_rate(nets, spec, seed):
    eps = evaluate_episodes(nets, spec, 20, _streams(seed)["eval_seed"])
    return sum(e.final_goal_distance < 0.2 for e in eps) / len(eps)


@pytest.mark.slow
def test_student_competence(criterion):
    t0 = time.perf_counter()
    rows = []
    for seed in SEEDS:
        cfg = preset("desk-point", seed=seed, condition="no_teacher")
        spec = cfg.make_env()
        untrained = make_sac_nets(spec.obs_dim, spec.action_dim, cfg.sac, _streams(seed)["init"])
        trained = train(cfg).nets
        rows.append((_reach_rate(untrained, spec, seed), _reach_rate(trained, spec, seed)))
    good = sum(after >= 0.8 and before <= 0.2 for before, after in rows)
    ok = good >= 4
    criterion(6, ok, f"reach rate untrained -> trained {[f'{b:.0%}->{a:.0%}' for b, a in rows]}, "
                     f"{good}/5 seeds pass, {time.perf_counter() - t0:.0f} s")
    assert ok


# 7, 8 --------------------------------------------------------------------

@pytest.fixture(scope="module")
def relocate_runs():
    runs = {}
    for seed in SEEDS:
        for cond in ("no_teacher", "teacher_metric1"):
            runs[cond, seed] = train(preset("desk-relocate", seed=seed, condition=cond)).log
    return runs


def _batch_goal_distances(mlog, k):
    gd = [r["goal_distance"] for r in mlog.episode_rows()]
    return [float(np.mean(gd[i * k:(i + 1) * k])) for i in range(len(gd) // k)]


@pytest.mark.slow
def test_curriculum_emergence(criterion, relocate_runs):
    k = preset("desk-relocate").teacher.k
    qualifying, passing, details = 0, 0, []
    for seed in SEEDS:
        _, base = relocate_runs["no_teacher", seed].eval_series()
        _, ev = relocate_runs["teacher_metric1", seed].eval_series()
        qualifies = (ev[-1] - ev[0]) >= 0.5 * (base[-1] - base[0])
        rho = spearmanr(np.arange(len(means := _batch_goal_distances(relocate_runs["teacher_metric1", seed], k))),
                        means).statistic
        qualifying += qualifies
        passing += qualifies and rho > 0.3
        details.append(f"s{seed}:{rho:+.2f}{'' if qualifies else '(nq)'}")
    ok = qualifying > 0 and passing > qualifying / 2
    criterion(7, ok, f"Spearman(update index, mean goal distance) {' '.join(details)}; "
                     f"{passing}/{qualifying} qualifying runs above 0.3")
    assert ok


def _steps_to(mlog, threshold, lam):
    steps, values = mlog.eval_series()
    hit = steps_to_threshold(steps, ema_smooth(values, lam), threshold)
    return math.inf if hit is None else hit


@pytest.mark.slow
def test_teacher_benefit(criterion, relocate_runs):
    lam = preset("desk-relocate").smoothing_lambda
    base_steps, teacher_steps = [], []
    for seed in SEEDS:
        _, base = relocate_runs["no_teacher", seed].eval_series()
        smooth = ema_smooth(base, lam)
        # 90% of the way from the initial to the final smoothed no-teacher return
        threshold = smooth[0] + 0.9 * (smooth[-1] - smooth[0])
        base_steps.append(_steps_to(relocate_runs["no_teacher", seed], threshold, lam))
        teacher_steps.append(_steps_to(relocate_runs["teacher_metric1", seed], threshold, lam))
    med_t, med_b = float(np.median(teacher_steps)), float(np.median(base_steps))
    ok = med_t <= med_b
    criterion(8, ok, f"median steps to threshold teacher_metric1 {med_t:g} vs no_teacher {med_b:g} "
                     f"(per seed {teacher_steps} vs {base_steps})")
    assert ok


# 9 -----------------------------------------------------------------------

def _knob_config(clear, n_updates, tmp):
    return preset(
        "desk-relocate", condition="teacher_metric1", seed=7, total_env_steps=3000, eval_every=1000,
        eval_episodes=2, env__max_episode_steps=100, sac__batch_size=32, teacher__k=2,
        sac__clear_buffer_on_assignment=clear, teacher__n_teacher_updates=n_updates,
        out_dir=os.path.join(tmp, f"clear{clear}_n{n_updates}"),
    )


@pytest.mark.slow
def test_appendix_knobs(criterion, tmp_path):
    logs, problems = {}, []
    for clear in (True, False):
        for n in (1, 4, 16):
            events = []
            cfg = _knob_config(clear, n, str(tmp_path))
            result = train(cfg, on_episode=events.append)
            result.log.to_csv(os.path.join(str(tmp_path), f"{clear}_{n}.csv"))
            back = MetricsLog.from_csv(os.path.join(str(tmp_path), f"{clear}_{n}.csv"))
            logs[clear, n] = back
            if back.rows != result.log.rows:
                problems.append(f"round trip {clear},{n}")
            resets = [e["buffer_after"] == e["outcome"].steps for e in events[1:]]
            grows = [e["buffer_after"] == e["buffer_before"] + e["outcome"].steps for e in events]
            if clear and not (all(resets) and events[-1]["buffer_clears"] == len(events)):
                problems.append(f"no reset with clear_buffer n={n}")
            if not clear and (not all(grows) or events[-1]["buffer_clears"] != 0):
                problems.append(f"unexpected reset without clear_buffer n={n}")
            if result.n_teacher_updates != len(events) // 2:
                problems.append(f"teacher cadence {clear},{n}")
    # runs agree until the knob first takes effect
    k = 2
    for clear in (True, False):
        heads = {n: logs[clear, n].rows[: 1 + k] for n in (1, 4, 16)}
        if not heads[1] == heads[4] == heads[16]:
            problems.append(f"runs differ before the first teacher update (clear={clear})")
        if logs[clear, 1].rows == logs[clear, 16].rows:
            problems.append(f"n_teacher_updates had no effect (clear={clear})")
    first_episode = {c: logs[c, 4].episode_rows()[0] for c in (True, False)}
    if first_episode[True] != first_episode[False]:
        problems.append("clear_buffer changed the first episode")
    ok = not problems
    criterion(9, ok, "6 knob runs complete, schema-valid, resets iff clear_buffer"
              if ok else "; ".join(problems))
    assert ok


# 10 ----------------------------------------------------------------------

@pytest.mark.slow
def test_reproducibility_and_sweep(criterion, tmp_path):
    text = "\n".join([
        "env.kind = point_arena", "sac.hidden_size = 64", "sac.batch_size = 128",
        "sac.actor_lr = 0.001", "sac.critic_lr = 0.001", "teacher.lr = 0.01",
        "total_env_steps = 4000", "eval_every = 1000", "eval_episodes = 5",
    ]) + "\n"
    cfg = tmp_path / "desk.cfg"
    cfg.write_text(text)
    codes = []
    for name in ("a", "b"):
        codes.append(cli.main(["run", str(cfg), "--condition", "teacher_metric1", "--seed", "3",
                               "--out", str(tmp_path / name)]))
    identical = (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    runs = []
    for cond in ("no_teacher", "teacher_metric1", "teacher_metric2"):
        out = tmp_path / "sweep" / cond
        codes.append(cli.main(["run", str(cfg), "--condition", cond, "--seeds", "0,1", "--out", str(out)]))
        runs += [str(out / "seed0"), str(out / "seed1")]
    codes.append(cli.main(["compare", *runs, "--out", str(tmp_path / "cmp"), "--smoothing", "0.9"]))
    for r in runs:
        codes.append(cli.main(["plot", os.path.join(r, "metrics.csv"), "--column", "eval_return",
                               "--lambda", "0.9"]))
    made = all(os.path.exists(tmp_path / "cmp" / f) for f in ("compare.csv", "summary.csv", "compare.svg"))
    ok = identical and made and all(c == 0 for c in codes)
    criterion(10, ok, f"byte-identical rerun: {identical}; sweep exit codes {sorted(set(codes))}, "
                      f"{len(runs)} runs compared and plotted")
    assert ok

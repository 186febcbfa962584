"""Acceptance gate: one test per promised behavior.

Each test prints a single PASS/FAIL line with the measured numbers (visible
with -s or on failure; the pytest -v status line mirrors it). The condition
ordering test trains nine policies for 500k env steps each and dominates a
full-suite run; everything else finishes in seconds.
"""
import math
import os
import subprocess
import sys
import time

import numpy as np

from gestnav import evalkit, gesturesynth as gs, policy as po, ppotrain, scenegen, simcore
from gestnav import tensorkit as tk

# Scene calibration shared by the scripted-agent and condition-ordering
# criteria. Small, lightly occluded rooms keep sparse-reward training
# feasible within the pinned 500k steps for every condition; the margins in
# the ordering criterion are absolute, so the calibration favors the highest
# overall success level rather than artificial clutter (which scales all
# conditions down together and shrinks absolute gaps).
ACCEPT_PARAMS = scenegen.SceneGenParams(4.0, 4.5, max_wall_stubs=1)
TRAIN_SCENE_SEEDS = range(0, 5)
TEST_SCENE_SEEDS = range(200, 205)


def _verdict(name: str, ok: bool, detail: str):
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


def _rel_err(g: np.ndarray, fd: np.ndarray, floor: float = 1e-8) -> float:
    # the floor keeps near-zero-gradient coordinates, where central
    # differences are pure roundoff noise, from dividing by ~0
    denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
    return float(np.max(np.abs(g - fd) / denom))


# ---------------------------------------------------------- 1: gradients


def _op_cases(rng):
    """One small instance of every differentiable op, inputs kept away from
    kinks (relu/clip/minimum) so central differences are trustworthy."""
    a = rng.uniform(-1.5, 1.5, (3, 4))
    b = rng.uniform(-1.5, 1.5, (3, 4))
    row = rng.uniform(-1.5, 1.5, (4,))
    m = rng.uniform(-1.0, 1.0, (4, 2))
    signs = rng.choice([-1.0, 1.0], (3, 4))
    off_kink = signs * rng.uniform(0.1, 1.2, (3, 4))
    clip_safe = np.where(rng.random((3, 4)) < 0.5,
                         rng.uniform(-0.5, 0.5, (3, 4)),
                         signs * rng.uniform(0.7, 1.3, (3, 4)))
    bsep = a + signs * rng.uniform(0.1, 0.6, (3, 4))
    ridx = rng.integers(0, 3, 5)
    cidx = rng.integers(0, 4, 3)
    x6 = rng.uniform(-1.0, 1.0, (6,))
    h5 = rng.uniform(-1.0, 1.0, (5,))
    W = rng.uniform(-0.5, 0.5, (15, 6))
    U = rng.uniform(-0.5, 0.5, (15, 5))
    bg = rng.uniform(-0.3, 0.3, (15,))
    X = rng.uniform(-1.0, 1.0, (4, 6))
    resets = np.array([True, False, True, False])
    emb = rng.uniform(-1.0, 1.0, (7, 4))

    return [
        ("add", [a, b], lambda t: tk.add(t[0], t[1])),
        ("add_broadcast", [a, row], lambda t: tk.add(t[0], t[1])),
        ("sub", [a, b], lambda t: tk.sub(t[0], t[1])),
        ("mul", [a, b], lambda t: tk.mul(t[0], t[1])),
        ("scale", [a], lambda t: tk.scale(t[0], -1.7)),
        ("matmul", [a, m], lambda t: tk.matmul(t[0], t[1])),
        ("tanh", [a], lambda t: tk.tanh(t[0])),
        ("sigmoid", [a], lambda t: tk.sigmoid(t[0])),
        ("relu", [off_kink], lambda t: tk.relu(t[0])),
        ("exp", [a], lambda t: tk.exp(t[0])),
        ("clip", [clip_safe], lambda t: tk.clip(t[0], -0.6, 0.6)),
        ("minimum", [a, bsep], lambda t: tk.minimum(t[0], t[1])),
        ("concat", [a, b], lambda t: tk.concat([t[0], t[1]], axis=-1)),
        ("mean", [a], lambda t: tk.mean(t[0])),
        ("tsum_all", [a], lambda t: tk.tsum(t[0])),
        ("tsum_axis0", [a], lambda t: tk.tsum(t[0], axis=0)),
        ("neg", [a], lambda t: tk.neg(t[0])),
        ("gather_rows", [a], lambda t: tk.gather_rows(t[0], ridx)),
        ("select_columns", [a], lambda t: tk.select_columns(t[0], cidx)),
        ("log_softmax", [a], lambda t: tk.log_softmax(t[0])),
        ("linear_forward", [m.T.copy(), rng.uniform(-0.3, 0.3, (2,)), a],
         lambda t: tk.linear_forward(t[0], t[1], t[2])),
        ("embedding_lookup", [emb], lambda t: tk.embedding_lookup(t[0], 3)),
        ("gru_cell", [x6, h5, W, U, bg],
         lambda t: tk.gru_cell(t[0], t[1], t[2], t[3], t[4])),
        ("gru_segment", [X, h5, W, U, bg],
         lambda t: tk.gru_segment(t[0], t[1], t[2], t[3], t[4], resets)),
    ]


def _fd_check_op(name, arrays, build, rng) -> float:
    tensors = [tk.parameter(x.copy(), name=f"{name}{i}") for i, x in enumerate(arrays)]
    out = build(tensors)
    weight = tk.constant(rng.uniform(-1.0, 1.0, out.shape if out.shape else ()))
    loss = tk.tsum(tk.mul(out, weight))
    for t in tensors:
        t.grad = np.zeros_like(t.data)
    loss.backward()

    def loss_val():
        out2 = build(tensors)
        return float(tk.tsum(tk.mul(out2, weight)).data)

    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        g = t.grad.reshape(-1)
        for j in range(flat.size):
            h = 1e-5 * (1.0 + abs(flat[j]))
            keep = flat[j]
            flat[j] = keep + h
            lp = loss_val()
            flat[j] = keep - h
            lm = loss_val()
            flat[j] = keep
            fd = (lp - lm) / (2 * h)
            # op inputs and weights are O(1), so 1e-4 is far below scale
            worst = max(worst, _rel_err(np.array(g[j]), np.array(fd), floor=1e-4))
    return worst


def _ppo_loss_case(seed: int):
    """A tiny but complete PPO minibatch loss over a real policy graph."""
    rng = np.random.default_rng([seed, 50])
    params = po.PolicyParams.init(seed=seed % 7)
    # nudge every parameter off its init value: zero-init biases would pin
    # relu preactivations of the all-zero gesture exactly on the kink, where
    # central differences and the tape's one-sided convention disagree
    for tensor in params.t.values():
        shape = tensor.data.shape
        tensor.data += rng.choice([-1.0, 1.0], shape) * rng.uniform(0.01, 0.05, shape)
    T = 4
    vis = rng.standard_normal((T, 352)) * 0.8
    an = gs.GestureAnatomy(0)
    gest = [gs.referencing_gesture(rng.uniform(-math.pi, math.pi), an, seed * 10 + 1, 0.05),
            gs.zero_gesture(),
            gs.intervention_gesture(int(rng.integers(10)), an),
            gs.zero_gesture()]
    targets = rng.integers(0, 10, T)
    actions = rng.integers(0, 4, T)
    resets = np.array([True, False, False, True])
    h0 = np.zeros(256)

    base_logp, base_values, _ = po.evaluate(vis, gest, targets, actions, resets, h0, params)
    if seed % 2 == 0:
        # ratios strictly inside the clip band
        offsets = rng.uniform(-0.08, 0.08, T)
    else:
        # ratios pushed well past the band so the clipped branch is live
        offsets = rng.choice([-1.0, 1.0], T) * rng.uniform(0.45, 0.7, T)
    old_logp = base_logp.data - offsets
    adv = rng.choice([-1.0, 1.0], T) * rng.uniform(0.3, 1.2, T)
    returns = base_values.data[:, 0] + rng.standard_normal(T) * 0.3

    def build_loss():
        logp_new, values, ent = po.evaluate(vis, gest, targets, actions, resets, h0, params)
        a_c = tk.constant(adv)
        ratio = tk.exp(tk.sub(logp_new, tk.constant(old_logp)))
        surr1 = tk.mul(ratio, a_c)
        surr2 = tk.mul(tk.clip(ratio, 0.8, 1.2), a_c)
        policy_loss = tk.neg(tk.mean(tk.minimum(surr1, surr2)))
        diff = tk.sub(values, tk.constant(returns[:, None]))
        value_loss = tk.mean(tk.mul(diff, diff))
        return tk.add(tk.add(policy_loss, tk.scale(value_loss, 0.5)),
                      tk.scale(tk.mean(ent), -0.01))

    return params, build_loss, rng


def test_gradient_correctness():
    t0 = time.time()
    worst_op = ("", 0.0)
    worst_loss = 0.0
    for seed in range(100):
        rng = np.random.default_rng([seed, 40])
        for name, arrays, build in _op_cases(rng):
            err = _fd_check_op(name, arrays, build, rng)
            if err > worst_op[1]:
                worst_op = (name, err)

        params, build_loss, rng2 = _ppo_loss_case(seed)
        loss = build_loss()
        params.zero_grads()
        loss.backward()
        for tname, tensor in params.t.items():
            flat = tensor.data.reshape(-1)
            gflat = tensor.grad.reshape(-1)
            cands = rng2.integers(0, flat.size, 8)
            j = int(cands[np.argmax(np.abs(gflat[cands]))])
            h = 1e-5 * (1.0 + abs(flat[j]))
            keep = flat[j]
            flat[j] = keep + h
            lp = float(build_loss().data)
            flat[j] = keep - h
            lm = float(build_loss().data)
            flat[j] = keep
            fd = (lp - lm) / (2 * h)
            worst_loss = max(worst_loss, _rel_err(np.array(gflat[j]), np.array(fd)))
    elapsed = time.time() - t0
    ok = worst_op[1] < 1e-4 and worst_loss < 1e-4 and elapsed < 60
    _verdict("gradient-correctness", ok,
             f"op max rel err {worst_op[1]:.2e} ({worst_op[0]}), "
             f"ppo loss max rel err {worst_loss:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------- 2: GAE


def _lambda_return_adv(rewards, values, dones, bootstrap, gamma, lam):
    """Explicit lambda-weighted n-step return mixture, cut at episode ends."""
    T = len(rewards)
    adv = np.zeros(T)
    for t in range(T):
        returns_n = []
        G = 0.0
        disc = 1.0
        k = t
        while True:
            G += disc * rewards[k]
            disc *= gamma
            terminal = bool(dones[k])
            last = k == T - 1
            tail = 0.0 if terminal else (bootstrap if last else values[k + 1])
            returns_n.append(G + disc * tail)
            if terminal or last:
                break
            k += 1
        n = len(returns_n)
        mix = sum((1 - lam) * lam ** i * returns_n[i] for i in range(n - 1))
        mix += lam ** (n - 1) * returns_n[-1]
        adv[t] = mix - values[t]
    return adv


def test_gae_oracle():
    t0 = time.time()
    gamma, lam = 0.99, 0.95
    worst = 0.0
    for trial in range(100):
        rng = np.random.default_rng([trial, 60])
        T = 50
        cfg = ppotrain.TrainConfig(total_env_steps=0, horizon=T, num_envs=1,
                                   minibatch=T, gamma=gamma, gae_lambda=lam)
        buf = ppotrain.RolloutBuffer(cfg, vis_dim=352, hidden=256)
        buf.rewards[:] = rng.standard_normal(T)
        buf.values[:] = rng.standard_normal(T)
        buf.dones[:] = rng.random(T) < 0.1
        buf.bootstrap_values[:] = rng.standard_normal(1)
        ppotrain.compute_gae(buf, gamma, lam)
        want = _lambda_return_adv(buf.rewards, buf.values, buf.dones,
                                  float(buf.bootstrap_values[0]), gamma, lam)
        worst = max(worst, float(np.max(np.abs(buf.advantages - want))))
    elapsed = time.time() - t0
    ok = worst < 1e-10 and elapsed < 5
    _verdict("gae-oracle", ok, f"max abs diff {worst:.2e}, {elapsed:.2f}s")


# ------------------------------------------------------- 3: metric oracles


def test_metric_oracles(tmp_path):
    t0 = time.time()
    scenes = [scenegen.generate_scene(s, "kitchen", ACCEPT_PARAMS)
              for s in list(TEST_SCENE_SEEDS)[:2]]
    params = po.PolicyParams.init(seed=3)
    budgets = (1, 2, 3, float("inf"))
    log_path = tmp_path / "episodes.jsonl"
    with open(log_path, "w") as sink:
        report, _ = evalkit.evaluate_policy(params, scenes, "referencing",
                                            budgets=budgets, episodes_per_scene=15,
                                            seed=9, log_sink=sink)
    redone = evalkit.recompute_from_logs(log_path, budgets=budgets)

    worst = 0.0
    for st, conds in report.items():
        for cond, cells in conds.items():
            for label, cell in cells.items():
                other = redone[st][cond][label]
                worst = max(worst, abs(cell["sr"] - other["sr"]),
                            abs(cell["spl"] - other["spl"]))
                assert cell["n"] == other["n"]

    ordered = True
    spl_le_sr = True
    for conds in report.values():
        for cells in conds.values():
            labels = [evalkit.budget_label(b) for b in budgets]
            srs = [cells[k]["sr"] for k in labels]
            spls = [cells[k]["spl"] for k in labels]
            ordered &= all(a <= b + 1e-12 for a, b in zip(srs, srs[1:]))
            ordered &= all(a <= b + 1e-12 for a, b in zip(spls, spls[1:]))
            spl_le_sr &= all(s <= r + 1e-12 for s, r in zip(spls, srs))

    elapsed = time.time() - t0
    ok = worst <= 1e-12 and ordered and spl_le_sr and elapsed < 60
    _verdict("metric-oracles", ok,
             f"recompute max diff {worst:.1e}, monotone {ordered}, "
             f"spl<=sr {spl_le_sr}, {elapsed:.1f}s")


# ------------------------------------------------- 4: scripted agent sanity


def test_scripted_oracle_sanity():
    t0 = time.time()
    scenes = [scenegen.generate_scene(s, "kitchen", ACCEPT_PARAMS)
              for s in TEST_SCENE_SEEDS]
    oracle, _ = evalkit.evaluate_scripted(scenes, "referencing", kind="oracle",
                                          budgets=(1,), episodes_per_scene=20,
                                          seed=17)
    rand, _ = evalkit.evaluate_scripted(scenes, "referencing", kind="random",
                                        budgets=(1,), episodes_per_scene=20,
                                        seed=17)
    sr_oracle = oracle["all"]["referencing"]["1"]["sr"]
    sr_random = rand["all"]["referencing"]["1"]["sr"]
    n = oracle["all"]["referencing"]["1"]["n"]
    elapsed = time.time() - t0
    ok = sr_oracle == 1.0 and n == 100 and sr_random < sr_oracle and elapsed < 120
    _verdict("scripted-oracle-sanity", ok,
             f"oracle sr@1 {sr_oracle:.3f} over {n} eps, random {sr_random:.3f}, "
             f"{elapsed:.1f}s")


# ------------------------------------------------- 5: gesture learnability


def test_gesture_learnability():
    t0 = time.time()
    an = gs.GestureAnatomy(0)
    rng = np.random.default_rng(0)
    bearings = rng.uniform(-math.pi, math.pi, 1000)
    feats = np.stack([
        gs.hold_phase_mean(gs.referencing_gesture(b, an, 30_000 + i, 0.05))
        for i, b in enumerate(bearings)])
    coef = gs.fit_bearing_probe(feats[:800], bearings[:800])
    errs = []
    for i in range(800, 1000):
        f = np.append(feats[i], 1.0)
        c, s = f @ coef
        errs.append(abs(simcore.wrap_pi(math.atan2(s, c) - bearings[i])))
    mae_deg = math.degrees(float(np.mean(errs)))

    X, y = [], []
    for i in range(500):
        b = rng.uniform(-math.pi, math.pi)
        X.append(gs.hold_phase_mean(gs.referencing_gesture(b, an, 60_000 + i, 0.05)))
        y.append(-1.0)
    for i in range(500):
        X.append(gs.hold_phase_mean(gs.intervention_gesture(int(rng.integers(10)), an)))
        y.append(1.0)
    X = np.hstack([np.stack(X), np.ones((1000, 1))])
    y = np.asarray(y)
    order = rng.permutation(1000)
    tr, te = order[:800], order[800:]
    w, *_ = np.linalg.lstsq(X[tr], y[tr], rcond=None)
    acc = float(np.mean(np.sign(X[te] @ w) == y[te]))

    elapsed = time.time() - t0
    ok = mae_deg < 10.0 and acc > 0.99 and elapsed < 60
    _verdict("gesture-learnability", ok,
             f"probe MAE {mae_deg:.2f} deg, separability {acc:.4f}, {elapsed:.1f}s")


# ----------------------------------------------------------- 7: determinism


_DET_CFG = """
[scene]
min_size_m = 4.0
max_size_m = 4.5
max_wall_stubs = 1
train_scenes = 2
val_scenes = 1
test_scenes = 1
types = kitchen

[ppo]
horizon = 16
num_envs = 2
minibatch = 16
total_env_steps = 64

[eval]
episodes_per_scene = 2
"""


def _run_cli(args, cwd):
    env = {k: v for k, v in os.environ.items() if k != "GESTNAV_SEED"}
    code = "import sys; from gestnav.cli import main; sys.exit(main())"
    proc = subprocess.run([sys.executable, "-c", code, *args],
                          cwd=cwd, env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr[-2000:]


def test_determinism(tmp_path):
    t0 = time.time()
    cfg = tmp_path / "det.ini"
    cfg.write_text(_DET_CFG)
    blobs = []
    for run in ("a", "b"):
        root = tmp_path / run
        root.mkdir()
        _run_cli(["gen-scenes", "--config", str(cfg), "--out", str(root / "scenes")],
                 tmp_path)
        _run_cli(["train", "--config", str(cfg), "--scenes", str(root / "scenes"),
                  "--condition", "referencing", "--seed", "5",
                  "--out", str(root / "run")], tmp_path)
        _run_cli(["eval", "--config", str(cfg), "--scenes", str(root / "scenes"),
                  "--checkpoint", str(root / "run" / "checkpoint.bin"),
                  "--seed", "5", "--out", str(root / "report.json")], tmp_path)
        blobs.append(((root / "run" / "checkpoint.bin").read_bytes(),
                      (root / "report.json").read_bytes()))
    same_ckpt = blobs[0][0] == blobs[1][0]
    same_report = blobs[0][1] == blobs[1][1]
    elapsed = time.time() - t0
    ok = same_ckpt and same_report
    _verdict("determinism", ok,
             f"checkpoint bytes equal {same_ckpt}, report bytes equal "
             f"{same_report}, {elapsed:.1f}s")


# ------------------------------------------------ 6: condition ordering


def test_condition_ordering(tmp_path):
    t0 = time.time()
    train_scenes = [scenegen.generate_scene(s, "kitchen", ACCEPT_PARAMS)
                    for s in TRAIN_SCENE_SEEDS]
    test_scenes = [scenegen.generate_scene(s, "kitchen", ACCEPT_PARAMS)
                   for s in TEST_SCENE_SEEDS]
    means = {}
    for cond in simcore.CONDITIONS:
        srs = []
        for seed in (0, 1, 2):
            out = tmp_path / f"{cond}_s{seed}"
            cfg = ppotrain.TrainConfig(total_env_steps=500_000, seed=seed,
                                       anatomy_seed=0)
            ppotrain.train(cfg, train_scenes, cond, out)
            params, _ = po.load_checkpoint(out / "checkpoint.bin")
            report, _ = evalkit.evaluate_policy(params, test_scenes, cond,
                                                budgets=(1,),
                                                episodes_per_scene=250, seed=1000)
            sr = report["all"][cond]["1"]["sr"]
            srs.append(sr)
            print(f"condition-ordering run {cond} seed {seed}: sr@1 {sr:.4f}")
        means[cond] = float(np.mean(srs))
    elapsed = time.time() - t0
    int_margin = means["intervention"] - means["baseline"]
    ref_margin = means["referencing"] - means["baseline"]
    ok = int_margin >= 0.10 and ref_margin >= 0.03
    _verdict("condition-ordering", ok,
             f"mean sr@1 baseline {means['baseline']:.4f}, referencing "
             f"{means['referencing']:.4f} ({100 * ref_margin:+.1f} pts), "
             f"intervention {means['intervention']:.4f} "
             f"({100 * int_margin:+.1f} pts), {elapsed / 60:.0f} min")

"""Acceptance suite. Each test checks one numbered criterion at its stated
tolerance and records a PASS/FAIL line that pytest prints in its terminal
summary. The heavy tests share one default-size pipeline run (dataset,
forward model, three-seed ablation) built by the ``pipeline`` fixture.
"""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from softarm import artifacts as art
from softarm import cli
from softarm import nncore as nn
from softarm.control import KINDS, Tracker, WorkspaceBox, report_from_csv, report_to_csv
from softarm.datagen import (
    DataGenConfig,
    ForwardWindows,
    compute_norm_stats,
    generate_dataset,
    make_forward_windows,
    make_inverse_windows,
)
from softarm.models import (
    ForwardModel,
    InverseModel,
    TrainConfig,
    compute_loss,
    consistency_rollout,
    evaluate_forward,
    sigmoid_to_z,
    train_inverse,
)
from softarm.plant import (
    KAPPA_EPS,
    ActuatorParams,
    ActuatorState,
    PlantParams,
    actuator_length,
    pcc_from_lengths,
    segment_transform,
    tip_from_lengths,
)

SEEDS = (1, 2, 3)


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------- shared pipeline


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    base = ["--out", str(out)]
    t0 = time.perf_counter()
    assert cli.main(["gen-data", *base]) == 0
    t1 = time.perf_counter()
    assert cli.main(["train", "forward", *base]) == 0
    t2 = time.perf_counter()
    assert cli.main(["ablate", *base, "--seeds", ",".join(map(str, SEEDS))]) == 0
    t3 = time.perf_counter()
    return {"out": out, "t_data": t1 - t0, "t_forward": t2 - t1, "t_ablate": t3 - t2}


@pytest.fixture(scope="module")
def dataset(pipeline):
    return art.load_dataset(pipeline["out"] / "data.csv")


@pytest.fixture(scope="module")
def forward_ck(pipeline):
    return art.load_checkpoint(pipeline["out"] / "forward.ckpt")


# ---------------------------------------------------------------- 1: gradients


def test_criterion_1_gradient_oracles():
    t0 = time.perf_counter()
    ds = generate_dataset(PlantParams(), DataGenConfig(total_frames=200, seed=11))
    st = compute_norm_stats(ds)
    rng = np.random.default_rng(0)
    fw = make_forward_windows(ds, st)
    idx = rng.choice(len(fw), 4, replace=False)
    fb = ForwardWindows(fw.x[idx], fw.y[idx], fw.t[idx])
    fm = ForwardModel(st, seed=5)
    for k in fm.params:  # move off the initialization so every block is generic
        fm.params[k] = fm.params[k] + rng.normal(0, 0.05, fm.params[k].shape)

    def f_loss():
        return nn.mse(fm.forward(fb.x)[0], fb.y)[0]

    _, f_grads = fm.loss(fb)
    rep_f = nn.grad_check(f_loss, fm.params, f_grads, tolerance=1e-4, h=1e-5)

    iw = make_inverse_windows(ds, st)
    ib = iw.subset(rng.choice(len(iw), 4, replace=False))
    im = InverseModel(st, seed=6)
    for k in im.params:
        im.params[k] = im.params[k] + rng.normal(0, 0.05, im.params[k].shape)

    def c_loss():
        return compute_loss("f+c", ib, fm, im, need_grad=False)[0]

    _, c_grads, _ = compute_loss("f+c", ib, fm, im)
    rep_c = nn.grad_check(c_loss, im.params, c_grads, tolerance=1e-4, h=1e-5)

    u = rng.normal(size=(4, 6))

    def u_loss():
        y, _ = consistency_rollout(fm, ib.fwd_hist, ib.u_prev, u)
        return nn.mse(sigmoid_to_z(st, y)[0], ib.target_z)[0]

    y, back = consistency_rollout(fm, ib.fwd_hist, ib.u_prev, u)
    pz, scale = sigmoid_to_z(st, y)
    du = back(nn.mse(pz, ib.target_z)[1] * scale)
    err_u = nn.rel_error(du, nn.numeric_grad(u_loss, u, 1e-5))
    elapsed = time.perf_counter() - t0

    init_keys = [k for k in im.params if k.startswith("init_")]
    ok = rep_f.passed and rep_c.passed and err_u <= 1e-4 and elapsed < 30
    ok = ok and all(np.any(c_grads[k] != 0) for k in init_keys)
    record(
        1,
        ok,
        f"forward max rel {rep_f.max_rel_error:.2e} ({rep_f.worst}), consistency max rel "
        f"{rep_c.max_rel_error:.2e} ({rep_c.worst}), d/du {err_u:.2e}; {elapsed:.1f} s",
    )
    assert ok


# ---------------------------------------------------------------- 2: hysteresis


def _random_actuator(rng):
    n = int(rng.integers(1, 10))
    r = np.sort(rng.uniform(1, 249, n))
    while np.any(np.diff(r) <= 0):
        r = np.sort(rng.uniform(1, 249, n))
    return ActuatorParams(L0=float(rng.uniform(50, 150)), c0=float(rng.uniform(0.05, 0.5)),
                          r=tuple(r), w=tuple(rng.uniform(0, 0.1, n)))


def _run(params, seq):
    state = ActuatorState(np.zeros(params.n))
    out, states = [], []
    for p in seq:
        length, state = actuator_length(params, state, p)
        out.append(length)
        states.append(state.y)
    return np.array(out), states


def test_criterion_2_hysteresis_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    failures = []
    for case in range(100):
        params = _random_actuator(rng)
        r = np.asarray(params.r)
        # loop direction over a randomized 0 -> 250 -> 0 grid
        grid = np.unique(np.concatenate([[0.0, 250.0], rng.uniform(0, 250, int(rng.integers(5, 40)))]))
        up, _ = _run(params, grid)
        sweep, _ = _run(params, np.concatenate([grid, grid[-2::-1]]))
        down = sweep[len(grid) - 1 :][::-1]
        if not (np.all(down >= up[: len(down)] - 1e-12) and np.any(down > up + 1e-9)):
            failures.append((case, "loop"))
        # rate independence: repeating every sample changes nothing
        seq = rng.uniform(0, 250, int(rng.integers(5, 60)))
        reps = rng.integers(1, 4, len(seq))
        plain, _ = _run(params, seq)
        dup, _ = _run(params, np.repeat(seq, reps))
        if not np.array_equal(dup[np.cumsum(reps) - 1], plain):
            failures.append((case, "rate"))
        # monotone loading from rest
        mono, _ = _run(params, np.sort(rng.uniform(0, 250, 30)))
        if np.any(np.diff(mono) < 0):
            failures.append((case, "monotone"))
        # play-state envelope
        _, states = _run(params, seq)
        for p, y in zip(seq, states):
            if np.any(y < p - r - 1e-12) or np.any(y > p + r + 1e-12):
                failures.append((case, "envelope"))
                break
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 5
    record(2, ok, f"100 randomized cases, {len(failures)} failures; {elapsed:.2f} s")
    assert ok, failures[:5]


# ---------------------------------------------------------------- 3: kinematics


def _rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def test_criterion_3_kinematics():
    t0 = time.perf_counter()
    geo = PlantParams().geometry
    s0 = geo.s0
    rng = np.random.default_rng(3)
    # straight arm: equal lengths in both segments
    straight = max(np.max(np.abs(tip_from_lengths(np.full(6, L), geo) - [0, 0, 2 * s0]))
                   for L in rng.uniform(90, 180, 50))
    # continuity across the small-curvature switch
    cont = 0.0
    for phi in rng.uniform(-math.pi, math.pi, 20):
        below = segment_transform(KAPPA_EPS * (1 - 1e-9), phi, s0)[1]
        above = segment_transform(KAPPA_EPS * (1 + 1e-9), phi, s0)[1]
        cont = max(cont, float(np.linalg.norm(above - below)))
    # symmetry of the whole arm
    rot = refl = 0.0
    for ls in rng.uniform(90, 180, size=(200, 6)):
        perm = ls[[2, 0, 1, 5, 3, 4]]
        swap = ls[[0, 2, 1, 3, 5, 4]]
        tip = tip_from_lengths(ls, geo)
        rot = max(rot, float(np.linalg.norm(_rot_z(2 * math.pi / 3) @ tip - tip_from_lengths(perm, geo))))
        refl = max(refl, float(np.linalg.norm(tip * [1, -1, 1] - tip_from_lengths(swap, geo))))
        k1, f1 = pcc_from_lengths(*ls[:3], geo.d)
        k2, f2 = pcc_from_lengths(*swap[:3], geo.d)
        refl = max(refl, abs(k1 - k2), abs(math.remainder(f1 + f2, 2 * math.pi)))
    elapsed = time.perf_counter() - t0
    ok = straight <= 1e-12 and cont <= 1e-6 and rot <= 1e-9 and refl <= 1e-9 and elapsed < 5
    record(3, ok, f"straight {straight:.1e} mm, switch jump {cont:.1e} mm, rotation {rot:.1e} mm, "
                  f"reflection {refl:.1e}; {elapsed:.2f} s")
    assert ok


# ---------------------------------------------------------------- 4: forward quality


def test_criterion_4_forward_quality(pipeline, dataset, forward_ck):
    box = WorkspaceBox.from_positions(dataset.p)
    rep = evaluate_forward(forward_ck, dataset, "val")
    w = make_forward_windows(dataset.val_split(), forward_ck.stats)
    truth = dataset.val_split().p[w.t]
    mean_pred = np.broadcast_to(dataset.train_split().p.mean(axis=0), truth.shape)
    base = evaluate_forward(forward_ck, dataset, "val", predictions=mean_pred).rmse
    diag = box.diagonal
    model_pct, base_pct, ratio = 100 * rep.rmse / diag, 100 * base / diag, base / rep.rmse
    ok_model = model_pct <= 5.0
    ok_base = base_pct > 25.0
    ok_ratio = ratio >= 5.0
    ok_time = pipeline["t_forward"] <= 600
    ok = ok_model and ok_base and ok_ratio and ok_time and len(dataset) == 13_000
    record(
        4,
        ok,
        f"val RMSE {rep.rmse:.2f} mm = {model_pct:.2f}% of {diag:.1f} mm diagonal (<= 5%: {ok_model}); "
        f"mean-predictor baseline {base_pct:.1f}% (> 25%: {ok_base}); model beats it {ratio:.1f}x "
        f"(>= 5x: {ok_ratio}); training {pipeline['t_forward']:.0f} s",
    )
    assert ok


# ---------------------------------------------------------------- 5: ordering


def test_criterion_5_loss_ordering(pipeline):
    rows = cli.read_ablation_csv(pipeline["out"] / "ablation.csv")
    summary, ordered, gain = cli.ablation_summary(rows)
    assert sorted({r["seed"] for r in rows}) == list(SEEDS) and len(rows) == 9
    ok = ordered and gain >= 0.10 and pipeline["t_ablate"] <= 45 * 60
    med = ", ".join(f"{v} {summary[v]['mean']:.2f}" for v in ("f+c", "f+i+c", "f+i"))
    record(5, ok, f"median mean error (mm): {med}; ordering holds: {ordered}; "
                  f"f+c gain over f+i {100 * gain:.1f}% (>= 10%); ablation {pipeline['t_ablate']:.0f} s")
    assert ok


# ---------------------------------------------------------------- 6: tracking sanity


def test_criterion_6_tracking_sanity(pipeline, dataset):
    diag = WorkspaceBox.from_positions(dataset.p).diagonal
    out = pipeline["out"] / "ablation"
    finite = True
    for seed in SEEDS:
        for kind in KINDS:
            rep = art.load_report(out / f"track-c-s{seed}-{kind}.csv")
            finite &= bool(np.all(np.isfinite(rep.errors))) and len(rep) == 60
    rows = cli.read_ablation_csv(pipeline["out"] / "ablation.csv")
    mean_c = float(np.median([r["mean"] for r in rows if r["variant"] == "f+c"]))
    ok = finite and mean_c < 0.15 * diag
    record(6, ok, f"all four trajectories finite: {finite}; f+c mean {mean_c:.2f} mm = "
                  f"{100 * mean_c / diag:.2f}% of diagonal (< 15%)")
    assert ok


# ---------------------------------------------------------------- 7: determinism


def test_criterion_7_determinism_and_persistence(pipeline, dataset, forward_ck, tmp_path):
    out2 = tmp_path / "rerun"
    assert cli.main(["gen-data", "--out", str(out2)]) == 0
    data_a = (pipeline["out"] / "data.csv").read_text().split("\n---\n", 1)[1]
    data_b = (out2 / "data.csv").read_text().split("\n---\n", 1)[1]
    same_data = data_a == data_b
    assert cli.main(["train", "forward", "--out", str(out2)]) == 0
    blocks = art.parameter_blocks
    same_fwd = blocks((pipeline["out"] / "forward.ckpt").read_text()) == blocks((out2 / "forward.ckpt").read_text())
    inv_path = pipeline["out"] / "inverse-c-s1.ckpt"
    inv = art.load_checkpoint(inv_path)
    again = train_inverse(dataset, forward_ck, TrainConfig(variant="c", seed=1))
    same_inv = blocks(inv_path.read_text()) == blocks(art.checkpoint_to_text(again))

    # load(save(x)) identity for the three artifact kinds
    ds2 = art.dataset_from_text(art.dataset_to_text(dataset))
    rt_data = ds2.u.tobytes() == dataset.u.tobytes() and ds2.p.tobytes() == dataset.p.tobytes()
    rt_ckpt = all(
        art.checkpoint_from_text(art.checkpoint_to_text(ck)).params[k].tobytes() == ck.params[k].tobytes()
        for ck in (forward_ck, inv)
        for k in ck.params
    )
    rep = art.load_report(pipeline["out"] / "ablation" / "track-c-s1-star.csv")
    rep2 = report_from_csv(report_to_csv(rep))
    rt_rep = np.array_equal(rep2.achieved, rep.achieved) and rep2.labels == rep.labels
    ok = same_data and same_fwd and same_inv and rt_data and rt_ckpt and rt_rep
    record(7, ok, f"dataset bytes {same_data}, forward blocks {same_fwd}, inverse blocks {same_inv}, "
                  f"round trips data/ckpt/report {rt_data}/{rt_ckpt}/{rt_rep}")
    assert ok


# ---------------------------------------------------------------- 8: one-to-many


def test_criterion_8_one_to_many(forward_ck, dataset):
    t0 = time.perf_counter()
    fm = forward_ck.model()
    st = forward_ck.stats
    iw = make_inverse_windows(dataset.val_split(), st)
    b = iw.subset(np.array([100, 100]))
    hist, prev = b.fwd_hist[:1], b.u_prev[:1]

    def roll(u):
        y, back = consistency_rollout(fm, hist, prev, u[None])
        pz, scale = sigmoid_to_z(st, y)
        return pz[0], back, scale

    # two distinct controls that the fixed forward model maps to one target
    u_a = b.label[0].copy()
    target = roll(u_a)[0]
    u_b = u_a + np.array([1.2, -1.2, 0.8, -0.8, 1.2, -1.2])
    opt, p = nn.Adam(lr=2e-2), {"u": u_b}
    for _ in range(4000):
        pz, back, scale = roll(p["u"])
        opt.update(p, {"u": back(((pz - target) * scale)[None])[0]})
    u_b = p["u"]
    b.label[:] = np.stack([u_a, u_b])
    b.target_z[:] = target

    def minimize(variant):
        im = InverseModel(st, seed=0)
        adam = nn.Adam(lr=1e-2)
        for _ in range(600):
            adam.update(im.params, compute_loss(variant, b, fm, im)[1])
        return im.forward(b.x[:1], b.target_z[:1])[0][0]

    u_i, u_c = minimize("f+i"), minimize("f+c")
    err = {k: float(np.linalg.norm(roll(u)[0] - target)) for k, u in (("i", u_i), ("c", u_c), ("b", u_b))}
    mean_gap = float(np.max(np.abs(u_i - 0.5 * (u_a + u_b))))
    elapsed = time.perf_counter() - t0
    ok = err["i"] > err["c"] and err["b"] < 1e-3 and mean_gap < 1e-2 and elapsed < 10
    record(8, ok, f"|u_a - u_b| {np.linalg.norm(u_a - u_b):.2f} (z), rollout error f+i {err['i']:.4f} vs "
                  f"f+c {err['c']:.2e} (z units); f+i output within {mean_gap:.1e} of the label mean; {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------- extra sanity


def test_holding_current_position(pipeline, dataset):
    """Asking a trained model to stay where the arm already is should barely move it."""
    ck = art.load_checkpoint(pipeline["out"] / "inverse-c-s1.ckpt")
    diag = WorkspaceBox.from_positions(dataset.p).diagonal
    tr = Tracker(ck, dataset.plant)
    errs = []
    for u in dataset.u[dataset.n_train : dataset.n_train + 200 : 20]:
        for _ in range(4):
            tr.apply(u)
        here = tr.position.copy()
        tr.apply(tr.command(here))
        errs.append(np.linalg.norm(tr.position - here))
    assert np.mean(errs) < 0.05 * diag

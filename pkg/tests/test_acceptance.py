"""Acceptance gate: one test per release criterion.

Each test prints a single ``PASS:``/``FAIL:`` line (with the measured
numbers and the bound it was held to) before asserting, so the printed
scorecard survives even when a criterion fails.  Timed sections exclude
one-time JIT compilation, which a module fixture triggers up front.
"""

import gc
import math
import time
from pathlib import Path

import numpy as np
import pytest

import synth
from bruteforce import best_labeling
from dynafuse.config import load_config
from dynafuse.geometry import (
    Pose,
    backproject,
    pose_to_quat,
    project,
    quat_to_pose,
    se3_exp,
    se3_log,
)
from dynafuse.maxflow import max_flow
from dynafuse.odometry import OdomFrame, compute_residuals, estimate_pose, jacobian, warp
from dynafuse.pipeline import run
from dynafuse.reconstruction import read_trajectory
from dynafuse.segmentation import (
    DEFINITE_BG,
    UNKNOWN,
    GmmModel,
    _init_components,
    build_graph,
    compute_beta,
    data_term,
    dilate_mask,
    fit_gmm,
    grabcut,
    init_trimap,
    min_cut,
    smoothness_term,
    total_energy,
)

K = synth.K_320


@pytest.fixture
def report(capsys):
    """One scorecard line per criterion, emitted past pytest's capture."""

    def _report(name: str, ok: bool, detail: str) -> bool:
        status = "PASS" if ok else "FAIL"
        with capsys.disabled():
            print(f"{status}: {name} ({detail})", flush=True)
        return ok

    return _report


@pytest.fixture(scope="module", autouse=True)
def warm_solver():
    """Compile the max-flow kernel before anything is timed."""
    max_flow(
        2,
        np.array([0], dtype=np.int64),
        np.array([1], dtype=np.int64),
        np.array([1.0]),
        np.array([0.0]),
        0,
        1,
    )


def test_01_geometry_round_trips(report):
    n = 10_000
    rng = np.random.default_rng(11)
    # Inputs are generated up front; only the round trips are timed.
    px = rng.uniform(0.0, K.width - 1.0, n)
    py = rng.uniform(0.0, K.height - 1.0, n)
    pz = rng.uniform(0.1, 10.0, n)
    twists = np.empty((n, 6))
    twists[:, :3] = rng.uniform(-2.0, 2.0, (n, 3))
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    twists[:, 3:] = axes * rng.uniform(0.0, math.pi - 0.1, n)[:, None]
    poses = [se3_exp(xi) for xi in rng.uniform(-1.0, 1.0, (n, 6))]

    ref_R = np.array([p.R for p in poses])
    ref_t = np.array([p.t for p in poses])
    Ra = np.empty((n, 3, 3))
    ta = np.empty((n, 3))
    Rb = np.empty((n, 3, 3))
    tb = np.empty((n, 3))
    # Keep cyclic-GC pauses out of the measurement (as timeit does); the
    # loop's own garbage is acyclic and freed by refcounting regardless.
    gc.collect()
    gc.disable()
    try:
        t0 = time.perf_counter()
        uv = project(backproject(px, py, pz, K), K)
        err_pix = max(
            float(np.abs(uv[:, 0] - px).max()), float(np.abs(uv[:, 1] - py).max())
        )
        for i in range(n):
            T = se3_exp(twists[i])
            T2 = se3_exp(se3_log(T))
            Ra[i], ta[i] = T.R, T.t
            Rb[i], tb[i] = T2.R, T2.t
        err_se3 = max(float(np.abs(Rb - Ra).max()), float(np.abs(tb - ta).max()))
        for i in range(n):
            back = quat_to_pose(*pose_to_quat(poses[i]))
            Ra[i], ta[i] = back.R, back.t
        err_quat = max(
            float(np.abs(Ra - ref_R).max()), float(np.abs(ta - ref_t).max())
        )
        elapsed = time.perf_counter() - t0
    finally:
        gc.enable()

    ok = err_pix < 1e-9 and err_se3 < 1e-9 and err_quat < 1e-9 and elapsed < 1.0
    assert report(
        "camera and pose round trips",
        ok,
        f"{n} samples each: reproject {err_pix:.2e}, se3 {err_se3:.2e}, "
        f"quat {err_quat:.2e} (all < 1e-9), {elapsed:.2f}s < 1s",
    )


def test_02_cut_equals_exhaustive_search(report):
    rng = np.random.default_rng(404)
    trials = 200
    exact = 0
    t0 = time.perf_counter()
    for _ in range(trials):
        img = rng.random((5, 5, 3))
        while True:
            w = int(rng.integers(1, 5))
            h = int(rng.integers(1, 5))
            if 3 <= w * h <= 16:
                break
        x0 = int(rng.integers(0, 6 - w))
        y0 = int(rng.integers(0, 6 - h))
        tri = np.full((5, 5), DEFINITE_BG, dtype=np.uint8)
        tri[y0 : y0 + h, x0 : x0 + w] = UNKNOWN
        alpha0 = (tri != DEFINITE_BG).astype(np.uint8)
        k = _init_components(img, alpha0, 3)
        gmm = fit_gmm(img, alpha0, k, n_components=3)
        beta = compute_beta(img)
        graph = build_graph(img, tri, k, gmm, 50.0, beta)
        alpha = min_cut(graph)
        e_cut = total_energy(img, alpha, k, gmm, 50.0, beta)
        _, e_best = best_labeling(img, tri, k, gmm, 50.0, beta)
        if e_cut == e_best:
            exact += 1
    elapsed = time.perf_counter() - t0
    ok = exact == trials and elapsed < 30.0
    assert report(
        "min-cut equals exhaustive enumeration",
        ok,
        f"{exact}/{trials} energies exactly equal, {elapsed:.1f}s < 30s",
    )


def test_03_segmentation_descent_and_box_recovery(report):
    rng = np.random.default_rng(77)
    worst_rise = 0.0
    for _ in range(20):
        img = rng.random((64, 64, 3))
        tri = init_trimap((8.0, 8.0, 48.0, 48.0), 64, 64)
        res = grabcut(img, tri)
        for a, b in zip(res.energies, res.energies[1:]):
            worst_rise = max(worst_rise, b - a)

    img = np.full((64, 64, 3), (0.12, 0.2, 0.78))
    truth = np.zeros((64, 64), dtype=bool)
    truth[20:44, 20:44] = True
    img[truth] = (0.88, 0.16, 0.1)
    res = grabcut(img, init_trimap((16.0, 16.0, 32.0, 32.0), 64, 64))
    mislabeled = int((res.alpha.astype(bool) != truth).sum())

    ok = worst_rise <= 1e-9 and mislabeled == 0
    assert report(
        "energy descent and two-color box recovery",
        ok,
        f"worst per-step rise {worst_rise:.2e} <= 1e-9 over 20 runs, "
        f"{mislabeled} mislabeled px (need 0)",
    )


def test_04_energy_term_spot_values(report):
    def iso_gmm(sigma, pi):
        return GmmModel(
            pi=np.full((2, 1), pi),
            mu=np.full((2, 1, 3), 0.5),
            cov=np.tile(sigma * np.eye(3), (2, 1, 1, 1)),
            inv_cov=np.tile(np.eye(3) / sigma, (2, 1, 1, 1)),
            log_det=np.full((2, 1), 3.0 * math.log(sigma)),
        )

    d_unit = data_term((0.5, 0.5, 0.5), 1, 0, iso_gmm(1.0, 1.0))
    d_shrunk = data_term((0.5, 0.5, 0.5), 1, 0, iso_gmm(0.01, 0.5))
    img = np.full((1, 2, 3), 0.4)
    v_pair = smoothness_term(img, np.array([[0, 1]], dtype=np.uint8), gamma=50.0)

    ok = d_unit == 0.0 and abs(d_shrunk - (-6.2146)) < 1e-3 and v_pair == 50.0
    assert report(
        "energy term spot values",
        ok,
        f"D(pi=1, I, mu) = {d_unit} (need 0), D(pi=.5, .01I, mu) = {d_shrunk:.5f} "
        f"(need -6.2146 +/- 1e-3), axis pair V = {v_pair} (need exactly 50)",
    )


def test_05_jacobian_matches_finite_differences(report):
    step = 1e-6
    stride = 7
    cases = [
        (synth.Scene(), synth.yaw_pitch_pose(0.02, -0.012, (0.01, -0.004, 0.006)), None),
        (
            synth.Scene().with_sphere((0.05, 0.2, 1.7)),
            synth.yaw_pitch_pose(-0.015, 0.01, (0.006, 0.008, -0.004)),
            None,
        ),
        (
            synth.Scene().with_sphere((-0.2, 0.1, 1.9)),
            synth.yaw_pitch_pose(0.01, 0.018, (-0.008, 0.003, 0.005)),
            np.array([0.002, -0.001, 0.003, 0.004, -0.002, 0.001]),
        ),
    ]
    worst = 0.0
    checked = 0
    for scene, motion, offset in cases:
        rgb1, depth1, _ = synth.render(scene, K, Pose.identity())
        rgb2, depth2, _ = synth.render(scene, K, motion)
        f1 = OdomFrame(synth.intensity_of(rgb1), depth1)
        f2 = OdomFrame(synth.intensity_of(rgb2), depth2)
        T = synth.relative_pose(Pose.identity(), motion)
        if offset is not None:
            T = se3_exp(offset) @ T
        J, res = jacobian(f1, f2, T, K, stride=stride)

        # Keep only samples whose target lands away from bilinear cell
        # boundaries, where the interpolant is differentiable.
        u = np.zeros(res.valid.size)
        v = np.zeros(res.valid.size)
        for i in np.flatnonzero(res.valid):
            uv = warp((float(res.px[i]), float(res.py[i])), T, f1.depth, K)
            if uv is None:
                res.valid[i] = False
                continue
            u[i], v[i] = uv
        fu, fv = u % 1.0, v % 1.0
        gate = res.valid & (fu > 0.01) & (fu < 0.99) & (fv > 0.01) & (fv < 0.99)

        for axis in range(6):
            e = np.zeros(6)
            e[axis] = step
            rp = compute_residuals(f1, f2, se3_exp(e) @ T, K, stride=stride, min_valid_fraction=None)
            rm = compute_residuals(f1, f2, se3_exp(-e) @ T, K, stride=stride, min_valid_fraction=None)
            ok_slots = gate & rp.valid & rm.valid
            fd_i = (rp.r_i[ok_slots] - rm.r_i[ok_slots]) / (2 * step)
            fd_z = (rp.r_z[ok_slots] - rm.r_z[ok_slots]) / (2 * step)
            rel_i = np.abs(J[ok_slots, 0, axis] - fd_i) / np.maximum(np.abs(fd_i), 1e-3)
            rel_z = np.abs(J[ok_slots, 1, axis] - fd_z) / np.maximum(np.abs(fd_z), 1e-3)
            worst = max(worst, float(rel_i.max()), float(rel_z.max()))
            checked += int(ok_slots.sum())

    ok = checked >= 100 and worst < 1e-4
    assert report(
        "alignment Jacobian vs central differences",
        ok,
        f"3 scenes, {checked} samples (need >= 100), worst rel err {worst:.1e} < 1e-4",
    )


def _ground_truth_motion() -> Pose:
    """2 degrees about a skew axis plus a 1 cm translation."""
    axis = np.array([0.25, 0.88, -0.4])
    axis /= np.linalg.norm(axis)
    R = se3_exp(np.concatenate([np.zeros(3), axis * math.radians(2.0)])).R
    t = np.array([0.006, -0.004, 0.00663325])
    t *= 0.01 / np.linalg.norm(t)
    return Pose(R, t)


def test_06_pose_recovery_on_rendered_pair(report):
    scene = synth.Scene().with_sphere((0.05, 0.2, 1.7))
    M = _ground_truth_motion()
    rgb1, depth1, _ = synth.render(scene, K, Pose.identity())
    rgb2, depth2, _ = synth.render(scene, K, M)
    f1 = OdomFrame(synth.intensity_of(rgb1), depth1)
    f2 = OdomFrame(synth.intensity_of(rgb2), depth2)
    gt = synth.relative_pose(Pose.identity(), M)

    t0 = time.perf_counter()
    result = estimate_pose(f1, f2, K)
    elapsed = time.perf_counter() - t0
    rot_deg, trans_m = synth.pose_error(result.pose, gt)
    trans_limit = 0.01 * float(depth1[depth1 > 0].mean())

    ok = rot_deg < 0.5 and trans_m < trans_limit and elapsed < 5.0
    assert report(
        "pose recovery on a rendered RGB-D pair",
        ok,
        f"rot err {rot_deg:.4f} deg < 0.5, trans err {trans_m * 1000:.2f} mm < "
        f"{trans_limit * 1000:.1f} mm (1% mean depth), {elapsed:.2f}s < 5s",
    )


def test_07_masking_beats_unmasked_under_motion(report):
    M = _ground_truth_motion()
    c1 = np.array([0.05, 0.2, 1.7])
    c2 = c1 + (-0.12, 0.03, 0.0)
    scene1 = synth.Scene(sphere_radius=0.455).with_sphere(c1)
    scene2 = synth.Scene(sphere_radius=0.455).with_sphere(c2)
    rgb1, depth1, obj1 = synth.render(scene1, K, Pose.identity())
    rgb2, depth2, obj2 = synth.render(scene2, K, M)
    coverage = 0.5 * (obj1.mean() + obj2.mean())
    gt = synth.relative_pose(Pose.identity(), M)

    plain = estimate_pose(
        OdomFrame(synth.intensity_of(rgb1), depth1),
        OdomFrame(synth.intensity_of(rgb2), depth2),
        K,
    )
    masked = estimate_pose(
        OdomFrame(synth.intensity_of(rgb1), depth1, dilate_mask(obj1, 2).astype(bool)),
        OdomFrame(synth.intensity_of(rgb2), depth2, dilate_mask(obj2, 2).astype(bool)),
        K,
    )
    rot_u, trans_u = synth.pose_error(plain.pose, gt)
    rot_m, trans_m = synth.pose_error(masked.pose, gt)
    trans_limit = 0.01 * float(depth1[depth1 > 0].mean())

    ok = (
        0.15 < coverage < 0.25
        and rot_m < rot_u
        and trans_m < trans_u
        and rot_m < 0.5
        and trans_m < trans_limit
    )
    assert report(
        "masking an independently moving object",
        ok,
        f"object covers {coverage * 100:.1f}% of the pair; "
        f"unmasked err {rot_u:.3f} deg / {trans_u * 1000:.2f} mm vs "
        f"masked {rot_m:.4f} deg / {trans_m * 1000:.2f} mm "
        f"(masked must win and stay < 0.5 deg / {trans_limit * 1000:.1f} mm)",
    )


@pytest.fixture(scope="module")
def pipeline_artifacts(tmp_path_factory):
    """Render the 10-frame moving-object dataset and run the pipeline once."""
    root = tmp_path_factory.mktemp("acceptance_e2e")
    poses = [
        synth.yaw_pitch_pose(0.004 * i, -0.0025 * i, (0.012 * i, 0.004 * i, 0.006 * i))
        for i in range(10)
    ]
    centers = [np.array([-0.25 + 0.055 * i, 0.22, 1.7]) for i in range(10)]
    ds = synth.write_dataset(root / "data", K, poses, centers)

    def make_cfg(out_dir):
        out_dir.mkdir(exist_ok=True)
        return load_config(
            overrides={
                "rgb_index": str(ds.rgb_index),
                "depth_index": str(ds.depth_index),
                "detections": str(ds.detections),
                "fx": K.fx,
                "fy": K.fy,
                "ox": K.ox,
                "oy": K.oy,
                "out_ply": str(out_dir / "cloud.ply"),
                "out_traj": str(out_dir / "trajectory.txt"),
                "debug_mask_dir": str(out_dir / "masks"),
            }
        )

    cfg = make_cfg(root / "out1")
    t0 = time.perf_counter()
    summary = run(cfg)
    elapsed = time.perf_counter() - t0
    return {
        "ds": ds,
        "root": root,
        "make_cfg": make_cfg,
        "cfg": cfg,
        "summary": summary,
        "elapsed": elapsed,
    }


def _load_ply_xyz(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    body = lines[lines.index("end_header") + 1 :]
    return np.array([[float(v) for v in line.split()[:3]] for line in body])


def test_08_end_to_end_static_reconstruction(pipeline_artifacts, report):
    art = pipeline_artifacts
    ds, summary = art["ds"], art["summary"]
    xyz = _load_ply_xyz(art["cfg"].out_ply)
    swept = synth.swept_volume_fraction(xyz, ds.sphere_centers, ds.sphere_radius)
    entries = read_trajectory(art["cfg"].out_traj)
    worst_q = max(abs(np.linalg.norm(e.q) - 1.0) for e in entries)

    ok = (
        summary.frames_processed == 10
        and summary.alignment_failures == 0
        and len(xyz) > 0
        and swept < 0.01
        and len(entries) == 10
        and worst_q <= 1e-12
        and art["elapsed"] < 120.0
    )
    assert report(
        "end-to-end reconstruction of a dynamic sequence",
        ok,
        f"10 frames at 320x240 in {art['elapsed']:.1f}s < 120s; "
        f"{swept * 100:.3f}% of {len(xyz)} points inside the object's swept "
        f"volume (< 1%); trajectory parses, worst |q|-1 = {worst_q:.1e} <= 1e-12",
    )


def test_09_reruns_are_byte_identical(pipeline_artifacts, report):
    art = pipeline_artifacts
    cfg2 = art["make_cfg"](art["root"] / "out2")
    run(cfg2)
    ply_same = (
        Path(art["cfg"].out_ply).read_bytes() == Path(cfg2.out_ply).read_bytes()
    )
    traj_same = (
        Path(art["cfg"].out_traj).read_bytes() == Path(cfg2.out_traj).read_bytes()
    )
    ok = ply_same and traj_same
    assert report(
        "reruns are byte-identical",
        ok,
        f"point cloud identical: {ply_same}, trajectory identical: {traj_same}",
    )

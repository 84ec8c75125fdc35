"""Acceptance gate: ten behavioral criteria for the whole engine, each
printing one pass/fail line with its measured margin.

Run with `pytest -v tests/test_acceptance.py` (add -s to see the margins on
passing runs). Every criterion is self-contained and seeds its own data.
"""

import json
import math
import pathlib
import sys

import numpy as np

from asgsr.errors import ProtocolError
from asgsr.filters import FilterConfig, approx_error_curve, max_sampling_rates, mip_2d, smooth_3d
from asgsr.losses import (
    dssim,
    dssim_with_grad,
    mse,
    mse_grad,
    psnr_capped,
    structure_loss,
    structure_loss_with_grad,
    texture_loss,
    texture_loss_with_grad,
)
from asgsr.prior import ExternalProvider, Latent, LinearMockProvider, PriorConfig, lds_gradient
from asgsr.prior.protocol import Frame, Opcode, pack_frame, parse_frame
from asgsr.rasterizer import (
    RenderRequest,
    finite_difference_grads,
    render_backward,
    render_forward,
    render_oracle,
)
from asgsr.scene.cameras import Camera, look_at
from asgsr.scene.gaussians import PARAM_FIELDS, Gaussians
from asgsr.synth import SynthSpec, make_scene
from asgsr.trainer import ProgressiveSchedule, TrainConfig, train
from asgsr.trainer.train import ground_truth_render

GOLDEN_CSV = pathlib.Path(__file__).parent / "data" / "error_curve_golden.csv"


def report(index, name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {index}: {name} ({detail})")
    assert ok, f"criterion {index} failed: {name} ({detail})"


def random_cloud(rng, n):
    quats = rng.standard_normal((n, 4))
    return Gaussians(
        positions=rng.uniform(-0.5, 0.5, (n, 3)),
        rotations=quats / np.linalg.norm(quats, axis=1, keepdims=True),
        log_scales=rng.uniform(-2.8, -1.5, (n, 3)),
        opacity_logits=rng.uniform(-2.0, 1.5, n),
        colors=rng.uniform(0.05, 0.95, (n, 3)),
    )


def random_camera(rng, res):
    theta = rng.uniform(0, 2 * math.pi)
    elev = rng.uniform(-0.5, 0.7)
    radius = rng.uniform(1.8, 2.6)
    eye = radius * np.array([math.cos(theta) * math.cos(elev), math.sin(theta) * math.cos(elev), math.sin(elev)])
    rotation, translation = look_at(eye, np.zeros(3))
    return Camera(
        focal=rng.uniform(0.6, 1.1) * res[0],
        principal=np.array([res[0] / 2, res[1] / 2]),
        rotation=rotation,
        translation=translation,
        base_resolution=res,
    )


def test_criterion_01_oracle_equivalence():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(5, 101))
        res = (int(rng.integers(16, 65)), int(rng.integers(16, 65)))
        cloud = random_cloud(rng, n)
        camera = random_camera(rng, res)
        background = rng.uniform(0, 1, 3)
        for s in (1.0, 1.5, 2.0, 3.5):
            request = RenderRequest(camera=camera, scale_factor=s, background=background)
            tiled = render_forward(cloud, request)
            reference = render_oracle(cloud, request)
            worst = max(worst, float(np.abs(tiled.image - reference.image).max()))
    report(1, "tiled renderer matches the brute-force reference on 50 scenes", worst <= 1e-5,
           f"max |diff| {worst:.3e} <= 1e-5")


def test_criterion_02_gradient_suite():
    rng = np.random.default_rng(7)
    cloud = random_cloud(rng, 5)
    camera = random_camera(rng, (32, 32))
    request = RenderRequest(camera=camera, transmittance_min=0.0)
    out = render_forward(cloud, request, retain_state=True)
    grad_image = rng.standard_normal(out.image.shape)
    analytic = render_backward(out.state, grad_image)
    numeric = finite_difference_grads(cloud, request, grad_image)
    render_rel = {
        f: float(np.abs(getattr(analytic, f) - getattr(numeric, f)).max() / (np.abs(getattr(numeric, f)).max() + 1e-12))
        for f in PARAM_FIELDS
    }

    def fd(fn, image, step=1e-5):
        grad = np.zeros_like(image)
        flat_g, flat_x = grad.reshape(-1), image.reshape(-1)
        for i in range(flat_x.size):
            saved = flat_x[i]
            flat_x[i] = saved + step
            hi = fn(image)
            flat_x[i] = saved - step
            lo = fn(image)
            flat_x[i] = saved
            flat_g[i] = (hi - lo) / (2.0 * step)
        return grad

    image = rng.uniform(0.2, 0.8, (16, 16, 3))
    target = rng.uniform(0.2, 0.8, (16, 16, 3))
    loss_rel = {}
    pairs = [
        ("mse", mse_grad(image, target), lambda x: mse(x, target)),
        ("dssim", dssim_with_grad(image, target)[1], lambda x: dssim(x, target)),
        ("structure", structure_loss_with_grad(image, target, 0.5)[1], lambda x: structure_loss(x, target, 0.5)),
        ("texture", texture_loss_with_grad(image, target, True)[1], lambda x: texture_loss(x, target, True)),
    ]
    for name, grad, fn in pairs:
        numeric_g = fd(fn, image.copy())
        loss_rel[name] = float(np.abs(grad - numeric_g).max() / (np.abs(numeric_g).max() + 1e-12))

    ok = max(render_rel.values()) <= 1e-3 and max(loss_rel.values()) <= 1e-4
    report(2, "analytic gradients match finite differences", ok,
           f"renderer worst {max(render_rel.values()):.2e} <= 1e-3, losses worst {max(loss_rel.values()):.2e} <= 1e-4")


def test_criterion_03_filter_laws():
    errs = []
    _, coeff3 = smooth_3d(np.eye(3)[None], np.array([1.0]), gamma=1.0)
    errs.append(abs(coeff3[0] - math.sqrt(1.0 / 8.0)))
    _, coeff2, eps_k = mip_2d(0.1 * np.eye(2)[None], 2.0, FilterConfig())
    errs.append(abs(eps_k - 0.05))
    errs.append(abs(coeff2[0] - 2.0 / 3.0))

    def cam(eye, focal, scale):
        rotation, translation = look_at(np.asarray(eye, float), np.zeros(3))
        return Camera(focal=focal, principal=np.array([16.0, 16.0]), rotation=rotation,
                      translation=translation, base_resolution=(32, 32), scale_factor=scale)

    rate_single = max_sampling_rates(np.zeros((1, 3)), [cam([0, -2, 0], 1000.0, 4.0)])
    errs.append(abs(rate_single[0] - 2000.0))
    rate_pair = max_sampling_rates(
        np.zeros((1, 3)), [cam([0, -1, 0], 500.0, 1.0), cam([1, 0, 0], 100.0, 8.0)]
    )
    errs.append(abs(rate_pair[0] - 800.0))
    examples_ok = max(errs) <= 1e-12

    # parity: the scale-aware toggles pinned off must reproduce the fixed
    # filter formulas bitwise at scale 1
    rng = np.random.default_rng(3)
    cloud = random_cloud(rng, 40)
    camera = random_camera(rng, (24, 24))
    aware = render_forward(cloud, RenderRequest(camera=camera, scale_factor=1.0, filters=FilterConfig()))
    fixed = render_forward(
        cloud,
        RenderRequest(camera=camera, scale_factor=1.0,
                      filters=FilterConfig(scale_aware_3d=False, scale_aware_2d=False)),
    )
    parity_ok = np.array_equal(aware.image, fixed.image) and np.array_equal(aware.alpha, fixed.alpha)

    # power-of-two scale factors commute with rounding, so homogeneity of the
    # sampling rate in the scale factor must hold to the last bit
    positions = rng.uniform(-0.4, 0.4, (25, 3))
    cams = [random_camera(rng, (32, 32)) for _ in range(3)]
    base = max_sampling_rates(positions, cams, scale_override=1.0)
    homog_ok = all(
        np.array_equal(max_sampling_rates(positions, cams, scale_override=lam), lam * base)
        for lam in (2.0, 4.0, 8.0)
    )

    report(3, "filter coefficient examples, fixed-filter parity at scale 1, rate homogeneity",
           examples_ok and parity_ok and homog_ok,
           f"examples worst {max(errs):.1e} <= 1e-12, parity bitwise {parity_ok}, homogeneity exact {homog_ok}")


def test_criterion_04_error_curve():
    windows = np.linspace(0.5, 4.0, 36)
    rows = approx_error_curve(windows, 0.5, FilterConfig(epsilon=0.1))
    golden = np.loadtxt(GOLDEN_CSV, delimiter=",", skiprows=1)
    diff = float(np.abs(rows - golden).max())
    past_one = rows[rows[:, 0] >= 1.0]
    ordered = bool(np.all(past_one[:, 2] <= past_one[:, 1]))
    monotone = bool(np.all(np.diff(past_one[:, 1]) >= 0.0))
    report(4, "window-size error study: golden match, ordering, monotonicity",
           diff <= 1e-9 and ordered and monotone,
           f"golden diff {diff:.2e} <= 1e-9, err_sa <= err_fixed for w >= 1: {ordered}, err_fixed nondecreasing: {monotone}")


def test_criterion_05_distillation_closed_form():
    provider = LinearMockProvider(working_hw=None)
    cfg = PriorConfig(weight_scale=1.3)
    alpha_m = 1.0 - cfg.start_timestep / provider.schedule_length()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        sr = rng.uniform(0, 1, (12, 12, 3))
        lr = rng.uniform(0, 1, (12, 12, 3))
        got = lds_gradient(provider, sr, lr, cfg, np.random.default_rng(seed))
        want = cfg.weight_scale * alpha_m * (sr - lr)
        worst = max(worst, float(np.abs(got - want).max()))
    closed_ok = worst <= 1e-10

    rng = np.random.default_rng(0)
    sr = rng.uniform(0, 1, (8, 8, 3))
    lr = rng.uniform(0, 1, (8, 8, 3))
    one = lds_gradient(provider, sr, lr, PriorConfig(weight_scale=1.0), np.random.default_rng(5))
    scaled = lds_gradient(provider, sr, lr, PriorConfig(weight_scale=4.5), np.random.default_rng(5))
    linear_ok = np.array_equal(scaled, 4.5 * one)

    zero_plain = lds_gradient(provider, sr, sr.copy(), PriorConfig(), np.random.default_rng(1))
    mixing = LinearMockProvider(working_hw=(8, 8), latent_matrix=0.3 * np.eye(192))
    zero_pinned = lds_gradient(mixing, sr, sr.copy(), PriorConfig(fixed_render_timestep=200), np.random.default_rng(2))
    zero_ok = not zero_plain.any() and not zero_pinned.any()

    report(5, "latent-discrepancy gradient: closed form, weight linearity, zero discrepancy",
           closed_ok and linear_ok and zero_ok,
           f"closed-form worst {worst:.2e} <= 1e-10, linearity exact {linear_ok}, zero cases exact {zero_ok}")


def test_criterion_06_antialiasing_gain():
    spec = SynthSpec(preset="checker-wall", seed=0, base_resolution=(32, 32),
                     init_scale_shrink=3.0, init_position_jitter=0.04)
    scene = make_scene(spec)
    config = TrainConfig(schedule=ProgressiveSchedule(((1.0, 120),)), warmup_iterations=80, seed=1)
    trained = train(scene, None, config).scene.gaussians
    camera = scene.cameras[-1]  # the holdout, never seen in training
    truth = ground_truth_render(scene.gt_gaussians, camera, 4.0)
    aware = render_forward(trained, RenderRequest(camera=camera, scale_factor=4.0, filters=FilterConfig())).image
    vanilla = render_forward(trained, RenderRequest(camera=camera, scale_factor=4.0, filters=FilterConfig.vanilla())).image
    gain = psnr_capped(aware, truth) - psnr_capped(vanilla, truth)
    report(6, "scale-aware filtering beats filters-off rendering at 4x after scale-1 training",
           gain >= 1.0, f"gain {gain:+.2f} dB >= 1.0 dB")


def test_criterion_07_progressive_improvement():
    spec = SynthSpec(preset="checker-wall", seed=0, base_resolution=(16, 16),
                     init_scale_shrink=3.0, init_position_jitter=0.04)
    scene = make_scene(spec)
    config = TrainConfig(
        schedule=ProgressiveSchedule(((2.0, 300), (3.0, 300), (4.0, 300))),
        warmup_iterations=150,
        seed=2,
    )
    result = train(scene, LinearMockProvider(working_hw=(16, 16)), config)
    by_stage = {m["stage"]: m["psnr"] for m in result.metrics if m["stage"] >= 0 and m["scale"] == 2.0}
    first, last = by_stage[0], by_stage[2]
    report(7, "held-out 2x quality does not regress across the three stages",
           last >= first - 0.05, f"stage-3 {last:.2f} dB >= stage-1 {first:.2f} dB - 0.05")


def test_criterion_08_determinism_and_resume(tmp_path):
    spec = SynthSpec(preset="checker-wall", seed=1, cells=4, n_cameras=3, base_resolution=(16, 16))
    config = TrainConfig(schedule=ProgressiveSchedule(((1.5, 6), (2.0, 6))), warmup_iterations=6, seed=3)
    provider = LinearMockProvider(working_hw=(8, 8))

    ck_a, ck_b, ck_c = (str(tmp_path / n) for n in ("a.ckpt", "b.ckpt", "c.ckpt"))
    run_a = train(make_scene(spec), provider, config, checkpoint_path=ck_a)
    run_b = train(make_scene(spec), provider, config, checkpoint_path=ck_b)
    identical = open(ck_a, "rb").read() == open(ck_b, "rb").read()

    part = train(make_scene(spec), provider, config, checkpoint_path=ck_c, stop_after=9)
    resumed = train(make_scene(spec), provider, config, resume_from=ck_c, checkpoint_path=ck_c)
    resume_bits = open(ck_a, "rb").read() == open(ck_c, "rb").read()
    params_equal = all(
        np.array_equal(getattr(run_a.scene.gaussians, f), getattr(resumed.scene.gaussians, f))
        for f in PARAM_FIELDS
    )
    ok = identical and resume_bits and params_equal and not part.completed and resumed.completed
    report(8, "fixed seed gives bit-identical checkpoints; resume equals uninterrupted",
           ok, f"checkpoints identical {identical}, resume bitwise {resume_bits and params_equal}")


def test_criterion_09_protocol_conformance():
    with ExternalProvider(f"{sys.executable} -m asgsr.prior.echo_server") as provider:
        dims = provider.latent_dims((64, 64))  # DIMS
        noise = np.random.default_rng(0).standard_normal(dims).astype(np.float32).astype(np.float64)
        image = np.random.default_rng(1).uniform(0, 1, (64, 64, 3))
        latent = provider.encode(image, noise, 120)  # ENCODE
        echoed = provider.predict_noise(latent, image, 120)  # PREDICT
        jumped = provider.denoise(latent, 120, 40, image)  # DENOISE
        decoded = provider.decode(jumped, (32, 32), image)  # DECODE
        grad = provider.encode_vjp(image, noise, 120)  # GRAD
        round_trip_ok = (
            dims == (4, 8, 8)
            and np.array_equal(latent.data, noise)
            and np.array_equal(echoed, noise)
            and np.array_equal(jumped.data, noise)
            and decoded.shape == (32, 32, 3)
            and grad.shape == (64, 64, 3)
        )

    malformed = 0
    for blob in (
        b"NOPE" + pack_frame(Frame(Opcode.DIMS, dims_a=(3, 8, 8)))[4:],  # bad magic
        pack_frame(Frame(Opcode.ENCODE, dims_a=(1, 2, 2), payload_a=np.ones((1, 2, 2))))[:-5],  # truncated
        pack_frame(Frame(Opcode.DIMS, dims_a=(3, 8, 8))) + b"\x00",  # trailing bytes
    ):
        try:
            parse_frame(blob)
        except ProtocolError:
            malformed += 1
    report(9, "all six opcodes round-trip the echo server; malformed frames raise typed errors",
           round_trip_ok and malformed == 3,
           f"round trip {round_trip_ok}, malformed rejected {malformed}/3")


def test_criterion_10_benchmark_harness(tmp_path):
    from asgsr.cli import main

    out = tmp_path / "bench"
    rc = main(["bench", "--resolutions", "640x360,1920x1080", "--n-gaussians", "150",
               "--repeats", "1", "--out", str(out)])
    rows = json.loads((out / "bench.json").read_text())
    hd = [r for r in rows if (r["width"], r["height"]) == (1920, 1080)]
    fields = {"width", "height", "config", "n_gaussians", "repeats", "median_ms", "fps", "max_diff_vs_scale_aware"}
    ok = rc == 0 and len(hd) == 3 and all(fields <= set(r) for r in rows)
    detail = f"1920x1080 rows {len(hd)}, scale_aware {hd[0]['fps']:.2f} FPS" if hd else "no 1080p row"
    report(10, "benchmark emits per-resolution JSON including 1920x1080", ok, detail)

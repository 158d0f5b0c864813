"""Acceptance suite: one PASS/FAIL line per criterion.

Criteria 6, 7 and 9 train real models and take most of the suite's runtime
(roughly two hours on a single CPU core). Deselect them with `-m "not slow"`.
"""
import csv
import dataclasses
import itertools
import math
import sys
import time

import numpy as np
import pytest
import torch

from shapepose.ablate import ABLATION_COLUMNS, ablate
from shapepose.config import DECODER_WIDTHS, MODEL_PRESETS, NOCS_SCHEDULE, TrainConfig
from shapepose.data.occlusion import DIRECTIONS, occlude
from shapepose.data.synthetic import GeneratorSpec, generate_synthetic_dataset
from shapepose.data.tensors import load_split
from shapepose.evaluate import OCCLUSION_COLUMNS, evaluate_model, occlusion_study
from shapepose.geometry import PointCloud, Pose, axis_angle_to_matrix, random_quaternion
from shapepose.losses import chamfer_distance, emd_distance, kl_standard_normal, per_point_l2
from shapepose.metrics import app_indicator, pose_errors, ten_deg_ten_cm
from shapepose.nets.model import ShapePoseNet
from shapepose.nets.pointvae import PointDecoder
from shapepose.nets.unet import ImageUNet
from shapepose.train import RunLog, train

DESK = MODEL_PRESETS["desk"]

# training recipe for the desk experiments
DESK_LR = 1e-4
OVERFIT_BATCH = 4
OVERFIT_STEPS = 2000
OVERFIT_EPOCHS = 400            # 20 samples at batch 4: five steps per epoch
OVERFIT_MILESTONES = (200,)     # lr 1e-5 for the second half lets the shape head settle
OVERFIT_SEEDS = (0, 1, 2)
GENERALIZATION_BATCH = 16
GENERALIZATION_EPOCHS = 60
GENERALIZATION_MILESTONES = (40, 50)


@pytest.fixture(scope="module")
def record(pytestconfig):
    lines = pytestconfig.acceptance_lines

    def record(n, name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}  {name}" + (f"  ({detail})" if detail else "")
        print(line)
        lines.append(line)
        assert ok, line

    return record


# -- independent oracles ------------------------------------------------------------

def quat_matrix(q):
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                     [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                     [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])


def nn_mean(src, dst):
    return sum(min(math.dist(s, d) for d in dst) for s in src) / len(src)


def chamfer_loop(a, b):
    return 0.5 * (nn_mean(a, b) + nn_mean(b, a))


def emd_permutations(a, b):
    n = len(a)
    return min(sum(math.dist(a[i], b[p[i]]) for i in range(n)) / n
               for p in itertools.permutations(range(n)))


def relative_grad_error(f, x, h=1e-5):
    x = x.detach().clone().requires_grad_(True)
    (analytic,) = torch.autograd.grad(f(x), x)
    numeric = torch.zeros_like(x)
    flat = x.detach().view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + h
        up = f(x.detach()).item()
        flat[i] = old - h
        down = f(x.detach()).item()
        flat[i] = old
        numeric.view(-1)[i] = (up - down) / (2 * h)
    return float((analytic - numeric).norm() / max(numeric.norm().item(), 1e-12))


def occlusion_oracle(h, w, direction):
    """Boolean mask of occluded pixels built from coordinates."""
    bh, bw = h // 3, w // 3
    r, c = np.mgrid[0:h, 0:w]
    if direction == "top":
        return r < bh
    if direction == "bottom":
        return r >= h - bh
    if direction == "left":
        return c < bw
    if direction == "right":
        return c >= w - bw
    r0, c0 = (h - bh) // 2, (w - bw) // 2
    return (r >= r0) & (r < r0 + bh) & (c >= c0) & (c < c0 + bw)


# -- shared experiment fixtures ----------------------------------------------------------

@pytest.fixture(scope="module")
def overfit_data(tmp_path_factory):
    spec = GeneratorSpec(categories=("mug", "laptop"), instances_per_category=2, test_instances=0,
                         views_per_instance=5, n_points=512)
    manifest = generate_synthetic_dataset(spec, 0, tmp_path_factory.mktemp("overfit"))
    return manifest, load_split(manifest, "train")


@pytest.fixture(scope="module")
def overfit_runs(overfit_data, tmp_path_factory):
    """Seed -> (TrainResult, wall seconds), trained on first use."""
    cache = {}
    manifest, data = overfit_data

    def get(seed):
        if seed not in cache:
            cfg = TrainConfig(lr=DESK_LR, lr_milestones=OVERFIT_MILESTONES, lr_decay_factors=(0.1,),
                              epochs=OVERFIT_EPOCHS,
                              batch_size=OVERFIT_BATCH, seed=seed, model=DESK,
                              dataset=str(manifest.root), max_steps=OVERFIT_STEPS, ckpt_every=0,
                              out_dir=str(tmp_path_factory.mktemp(f"overfit_{seed}")))
            t0 = time.perf_counter()
            result = train(cfg, data=data)
            cache[seed] = (result, time.perf_counter() - t0)
        return cache[seed]

    return get


@pytest.fixture(scope="module")
def desk_dataset(tmp_path_factory):
    spec = GeneratorSpec(categories=("box", "mug", "laptop"), instances_per_category=10, test_instances=2,
                         views_per_instance=40, n_points=512)
    return generate_synthetic_dataset(spec, 0, tmp_path_factory.mktemp("desk"))


# -- 1. oracle equivalence -------------------------------------------------------------------

def test_criterion_01_oracle_equivalence(record):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = {"chamfer": 0.0, "emd": 0.0, "app": 0.0, "per_point_l2": 0.0}
    for _ in range(100):
        a = rng.normal(size=(rng.integers(1, 30), 3))
        b = rng.normal(size=(rng.integers(1, 30), 3))
        worst["chamfer"] = max(worst["chamfer"], abs(float(chamfer_distance(a, b)) - chamfer_loop(a, b)))
    for _ in range(50):
        n = int(rng.integers(1, 7))
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        worst["emd"] = max(worst["emd"], abs(float(emd_distance(a, b)) - emd_permutations(a, b)))
    for _ in range(50):
        pts = rng.uniform(-0.5, 0.5, size=(int(rng.integers(2, 25)), 3))
        scale = float(rng.uniform(0.05, 0.5))
        gt = Pose(random_quaternion(rng), rng.normal(size=3))
        hat = Pose(random_quaternion(rng), rng.normal(size=3))
        metric = pts * scale
        posed_gt = metric @ quat_matrix(gt.quat).T + gt.translation
        posed_hat = metric @ quat_matrix(hat.quat).T + hat.translation
        _, m1, m2 = app_indicator(PointCloud(pts, scale), gt, hat, 0.5)
        worst["app"] = max(worst["app"], abs(m1 - nn_mean(posed_gt, posed_hat)),
                           abs(m2 - nn_mean(posed_hat, posed_gt)))
    for _ in range(50):
        pts = rng.normal(size=(int(rng.integers(1, 20)), 3))
        qa, qb = rng.normal(size=4), random_quaternion(rng)
        ta, tb = rng.normal(size=3), rng.normal(size=3)
        expected = np.mean([math.dist(quat_matrix(qa) @ p + ta, quat_matrix(qb) @ p + tb) for p in pts])
        got = float(per_point_l2(pts, (torch.as_tensor(qa), ta), (qb, tb)))
        worst["per_point_l2"] = max(worst["per_point_l2"], abs(got - expected))
    elapsed = time.perf_counter() - t0
    ok = all(v <= 1e-10 for v in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f} s"
    record(1, "loss/metric oracle equivalence", ok, detail)


# -- 2. gradients -------------------------------------------------------------------------------

def test_criterion_02_gradient_checks(record):
    rng = np.random.default_rng(202)
    t = lambda *shape: torch.as_tensor(rng.normal(size=shape))
    t0 = time.perf_counter()
    worst = {}

    def check(name, f, x):
        worst[name] = max(worst.get(name, 0.0), relative_grad_error(f, x))

    for _ in range(20):
        a, b = t(6, 3), t(7, 3)
        check("chamfer", lambda x: chamfer_distance(x, b), a)
        a, b = t(5, 3), t(5, 3)
        check("emd", lambda x: emd_distance(x, b), a)
        pts = t(8, 3)
        q, tr = torch.as_tensor(random_quaternion(rng)), t(3)
        gt = (random_quaternion(rng), rng.normal(size=3))
        check("per_point_l2 quaternion", lambda x: per_point_l2(pts, (x, tr), gt), q)
        check("per_point_l2 translation", lambda x: per_point_l2(pts, (q, x), gt), tr)
        mu, lv = t(16), t(16)
        check("kl mu", lambda x: kl_standard_normal(x, lv), mu)
        check("kl logvar", lambda x: kl_standard_normal(mu, x), lv)
    elapsed = time.perf_counter() - t0
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 120
    detail = f"max rel {max(worst.values()):.1e} over {len(worst)} checks x 20, {elapsed:.1f} s"
    record(2, "analytic vs central-difference gradients", ok, detail)


# -- 3. metric boundaries -------------------------------------------------------------------------

def test_criterion_03_metric_boundaries(record):
    rng = np.random.default_rng(303)
    outcomes = []
    for _ in range(10):
        gt = Pose(random_quaternion(rng), rng.normal(size=3))
        axis, direction = rng.normal(size=3), rng.normal(size=3)
        direction /= np.linalg.norm(direction)

        def hat(deg, cm):
            R = gt.rotation @ axis_angle_to_matrix(axis, math.radians(deg))
            return Pose.from_matrix(R, gt.translation + direction * cm / 100)

        outcomes.append((ten_deg_ten_cm(pose_errors(hat(9.9, 9.9), gt)),
                         ten_deg_ten_cm(pose_errors(hat(10.1, 9.9), gt)),
                         ten_deg_ten_cm(pose_errors(hat(9.9, 10.1), gt))))
    boundary_ok = all(o == (1, 0, 0) for o in outcomes)

    alphas = np.linspace(0.01, 2.0, 40)
    violations = 0
    for _ in range(100):
        pc = PointCloud(rng.uniform(-0.5, 0.5, size=(40, 3)), float(rng.uniform(0.1, 0.4)))
        gt = Pose(random_quaternion(rng), rng.normal(size=3))
        hat = Pose(random_quaternion(rng), gt.translation + rng.normal(size=3) * 0.1)
        hits = [app_indicator(pc, gt, hat, a)[0] for a in alphas]
        violations += sum(h1 < h0 for h0, h1 in zip(hits, hits[1:]))
    record(3, "10deg/10cm boundaries and APP monotone in alpha", boundary_ok and violations == 0,
           f"boundary triples {set(outcomes)}, monotonicity violations {violations}")


# -- 4. zero-code inference ------------------------------------------------------------------------

def test_criterion_04_zero_code_inference(record):
    torch.manual_seed(0)
    net = ShapePoseNet(DESK).eval()
    image = torch.rand(2, 3, 128, 128)
    called = set()

    def profiler(frame, event, arg):
        if event == "call":
            called.add(frame.f_code.co_name)

    sys.setprofile(profiler)
    try:
        a = net.forward_infer(image)
    finally:
        sys.setprofile(None)
    b = net.forward_infer(image)
    forbidden = {"forward_train", "project_points", "roi_gather", "fusers", "encode_to_gaussian",
                 "farthest_point_sample", "ball_query", "per_point_l2", "reparameterize"}
    touched = called & forbidden
    ok = (not touched and torch.equal(a.pc_pred, b.pc_pred) and torch.equal(a.quat, b.quat)
          and torch.equal(a.translation, b.translation)
          and a.pc_pred.shape == (2, DESK.n_points_out, 3) and bool(torch.isfinite(a.pc_pred).all())
          and bool(((a.quat.norm(dim=-1) - 1).abs() < 1e-6).all()))
    record(4, "zero-code inference contract", ok, f"point/pose/intrinsics code touched: {sorted(touched)}")


# -- 5. fusion necessity ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_05_fusion_necessity(record, overfit_runs, overfit_data, tmp_path):
    _, data = overfit_data
    images = data.image_batch(np.array([0, 10]))
    disde_cfg = TrainConfig(lr=DESK_LR, lr_milestones=(), lr_decay_factors=(), batch_size=4, seed=0,
                            model=dataclasses.replace(DESK, enable_decoder_fusion=False),
                            max_steps=20, ckpt_every=0, out_dir=str(tmp_path))
    disde = train(disde_cfg, data=data).model
    out = disde.forward_infer(images).pc_pred
    same = float((out[0] - out[1]).abs().max())
    full = overfit_runs(OVERFIT_SEEDS[0])[0].model
    out = full.forward_infer(images).pc_pred
    differ = float((out[0] - out[1]).abs().max())
    record(5, "decoder fusion is what makes the cloud image-dependent", same <= 1e-7 and differ > 1e-3,
           f"DisDe L-inf {same:.1e}, trained full fusion L-inf {differ:.3g}")


# -- 6. overfit ------------------------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.parametrize("seed", OVERFIT_SEEDS)
def test_criterion_06_overfit(record, overfit_runs, overfit_data, seed):
    _, data = overfit_data
    result, wall = overfit_runs(seed)
    model = result.model
    with torch.no_grad():
        _, losses = model.forward_train(*data.train_batch(np.arange(len(data))),
                                        torch.Generator().manual_seed(seed))
    f = losses.as_floats()
    ok = (result.state["step"] == OVERFIT_STEPS and f["shape"] < 0.05 and f["pose"] < 0.05
          and f["kld"] < 1.0 and wall < 30 * 60)
    record(6, f"overfit 20 samples, seed {seed}", ok,
           f"chamfer {f['shape']:.4f}, pose {f['pose']:.4f} m, kl {f['kld']:.4f}, {wall / 60:.1f} min")


# -- 7. generalization -----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_07_generalization(record, desk_dataset, tmp_path):
    cfg = TrainConfig(lr=DESK_LR, lr_milestones=GENERALIZATION_MILESTONES, lr_decay_factors=(0.1, 0.1),
                      epochs=GENERALIZATION_EPOCHS,
                      batch_size=GENERALIZATION_BATCH, seed=0, model=DESK, dataset=str(desk_dataset.root),
                      out_dir=str(tmp_path), ckpt_every=10)
    t0 = time.perf_counter()
    result = train(cfg)
    wall = time.perf_counter() - t0
    test = load_split(desk_dataset, "test")
    ev = evaluate_model(result.model, test, category_order=desk_dataset.categories())
    app05, cd = ev.overall.app_05, float(ev.chamfer_canonical.mean())
    per_cat = ", ".join(f"{r.category} app {r.app_05:.2f}" for r in ev.reports)
    record(7, "held-out instances after desk training", app05 > 0.5 and cd < 0.15 and wall < 4 * 3600,
           f"APP(0.5) {app05:.3f}, chamfer {cd:.4f}, {per_cat}, {len(test)} test views, {wall / 60:.0f} min")


# -- 8. schedules and shapes ----------------------------------------------------------------------

def test_criterion_08_schedule_and_shapes(record, tmp_path):
    # one sample at batch 1 gives one logged step per epoch
    spec = GeneratorSpec(categories=("box",), instances_per_category=1, test_instances=0,
                         views_per_instance=1, n_points=256, image_size=64)
    manifest = generate_synthetic_dataset(spec, 0, tmp_path / "data")
    small = dataclasses.replace(DESK, image_height=64, image_width=64, n_points_in=256, n_points_out=64,
                                code_size=8, base_channels=4, sa_npoints=(64, 32, 16, 8, 4),
                                sa_kmax=(8, 8, 8, 8, 4), sa_width=8, pooled_dim=16,
                                pose_mlp_widths=(16, 16, 16, 16))
    cfg = TrainConfig(**NOCS_SCHEDULE, batch_size=1, model=small, dataset=str(manifest.root),
                      out_dir=str(tmp_path / "run"), ckpt_every=0)
    train(cfg)
    lrs = [r["lr"] for r in RunLog.read(tmp_path / "run" / "runlog.jsonl").steps]
    expected = [1e-4] * 100 + [1e-5] * 30 + [1e-6] * 30 + [1e-7] * 20
    schedule_ok = len(lrs) == 180 and np.allclose(lrs, expected, rtol=1e-12, atol=0)

    shapes_ok = True
    unet = ImageUNet(base_channels=64)
    for H, W in [(128, 128), (256, 192)]:
        with torch.no_grad():
            enc, pyr = unet(torch.zeros(1, 3, H, W))
        enc_table = [(64 * 2 ** k, H >> (k + 1), W >> (k + 1)) for k in range(5)]
        pyr_table = [(64 * 16 >> j, H >> (5 - j), W >> (5 - j)) for j in range(1, 6)]
        shapes_ok &= [tuple(f.shape[1:]) for f in enc] == enc_table
        shapes_ok &= [tuple(f.shape[1:]) for f in pyr.levels] == pyr_table
    decoder = PointDecoder(256, image_dim=256)
    with torch.no_grad():
        stack = decoder(torch.zeros(2, 256), [torch.zeros(2, 256)] * 4)
    widths = tuple(f.shape[-1] for f in stack)
    widths_ok = widths == DECODER_WIDTHS == (256, 512, 1024, 2048, 4096)
    record(8, "NOCS schedule from the RunLog, shape tables, decoder widths",
           schedule_ok and shapes_ok and widths_ok,
           f"{len(lrs)} logged epochs, shapes {'match' if shapes_ok else 'differ'}, widths {widths}")


# -- 9. ablation harness ----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_09_ablation_harness(record, desk_dataset, tmp_path):
    base = TrainConfig(lr=DESK_LR, lr_milestones=(), lr_decay_factors=(), epochs=1, batch_size=4, seed=0,
                       model=DESK, dataset=str(desk_dataset.root), out_dir=str(tmp_path), max_steps=50,
                       ckpt_every=0)
    expected = {"code_size": ["32", "64", "128", "256", "512", "1024"],
                "pose_head": ["decoder", "image_encoder", "none", "single_network"],
                "fusion": ["full", "DisEn", "DisDe"]}
    got, steps = {}, []
    for axis in expected:
        ablate(base, axis, out_csv=tmp_path / f"{axis}.csv", echo=None)
        rows = list(csv.DictReader(open(tmp_path / f"{axis}.csv")))
        assert tuple(rows[0].keys()) == ABLATION_COLUMNS
        got[axis] = [r["variant"] for r in rows]
        steps += [int(r["steps"]) for r in rows]
    ok = got == expected and min(steps) >= 50
    record(9, "ablation row sets and >= 50 training steps per variant", ok,
           f"{', '.join(f'{a} {len(v)}' for a, v in got.items())} variants, min steps {min(steps)}")


# -- 10. occlusion protocol ---------------------------------------------------------------------------

def test_criterion_10_occlusion_protocol(record, tiny_dataset, tmp_path):
    rng = np.random.default_rng(10)
    pixel_ok = True
    for H, W in [(128, 128), (256, 192)]:
        image = rng.integers(1, 256, size=(H, W, 3), dtype=np.uint8)
        for d in DIRECTIONS:
            mask = occlusion_oracle(H, W, d)
            out = occlude(image, d)
            pixel_ok &= bool((out[mask] == 0).all() and (out[~mask] == image[~mask]).all())
            chw = occlude(torch.from_numpy(image).permute(2, 0, 1), d).permute(1, 2, 0).numpy()
            pixel_ok &= bool(np.array_equal(chw, out))
    cfg = TrainConfig(lr=DESK_LR, lr_milestones=(), lr_decay_factors=(), batch_size=4, seed=0, model=DESK,
                      dataset=str(tiny_dataset.root), out_dir=str(tmp_path / "run"), max_steps=2)
    ckpt = train(cfg).checkpoint
    occlusion_study(ckpt, tiny_dataset.root, tmp_path / "occ.csv", echo=None)
    rows = list(csv.DictReader(open(tmp_path / "occ.csv")))
    schema_ok = (tuple(rows[0].keys()) == OCCLUSION_COLUMNS
                 == ("metric", "bottom", "center", "left", "right", "top", "overall")
                 and [r["metric"] for r in rows][:2] == ["chamfer_mm", "acc_10deg_10cm"])
    record(10, "occlusion blocks pixel-exact and report schema", pixel_ok and schema_ok,
           f"pixels {'exact' if pixel_ok else 'differ'}, columns {list(rows[0].keys())}")

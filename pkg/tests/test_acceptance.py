"""Acceptance suite: the nine end-to-end criteria at their stated tolerances.

Each test prints one PASS/FAIL line. Run alone with

    pytest tests/test_acceptance.py -v -s

or ``python tests/test_acceptance.py``. Criteria 4, 5 and 7 train real models
and take several minutes on one core.
"""
import time

import numpy as np
import pytest

from sitta import tensor as T
from sitta.bench import BenchProtocol, run_bench
from sitta.data import SyntheticSpec, make_synthetic_domain_pair, make_synthetic_set, to_tensor
from sitta.metrics import GaussianStats, channel_histogram_distance, fid, frechet_distance
from sitta.model import DomainId, SittaModel
from sitta.pono import extract_moments, inject_moments, pono_normalize
from sitta.tensor import Tensor
from sitta.trainer import Adam, TrainConfig, train_pair, train_step, translate
from sitta.losses import backbone

from gradcases import CASES, SEEDS, TOL, run_case

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number} {'PASS' if ok else 'FAIL'}: {title} | {detail}")
        assert ok, detail
    return emit


def test_1_gradient_suite(report):
    start = time.perf_counter()
    worst, worst_name = 0.0, None
    for name in CASES:
        for seed in SEEDS:
            err = run_case(name, seed)
            if err > worst:
                worst, worst_name = err, f"{name}/seed{seed}"
    elapsed = time.perf_counter() - start
    report(1, "gradient checks", worst < TOL and elapsed < 60,
           f"{len(CASES)} cases x {len(SEEDS)} seeds, worst {worst:.2e} ({worst_name}) < {TOL}, {elapsed:.1f}s < 60s")


def test_2_pono_algebra(report):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    round_trip, mean_dev, std_dev = 0.0, 0.0, 0.0
    for seed in range(5):
        x = Tensor(rng.normal(rng.uniform(-3, 3), rng.uniform(0.5, 4), (2, 16, 8, 8)).astype(np.float32))
        n, m = pono_normalize(x)
        round_trip = max(round_trip, float(np.abs(inject_moments(n, m).data - x.data).max()))
        mean_dev = max(mean_dev, float(np.abs(n.data.mean(axis=1)).max()))
        std_dev = max(std_dev, float(np.abs(n.data.std(axis=1) - 1).max()))
    gamma = extract_moments(Tensor(np.full((1, 8, 4, 4), 2.5, np.float32))).gamma.data
    exact = bool(np.all(gamma == np.float32(np.sqrt(1e-5))))
    elapsed = time.perf_counter() - start
    ok = round_trip <= 1e-5 and mean_dev <= 1e-5 and std_dev <= 1e-3 and exact and elapsed < 10
    report(2, "PONO algebra", ok,
           f"round trip {round_trip:.1e}, |mean| {mean_dev:.1e}, |std-1| {std_dev:.1e}, "
           f"constant gamma == sqrt(1e-5): {exact}, {elapsed:.2f}s")


def test_3_frechet_oracle(report):
    start = time.perf_counter()
    g = lambda mu, var: GaussianStats(np.array([mu]), np.array([[var]]), 2)
    d_mean = frechet_distance(g(0, 1), g(1, 1))
    d_var = frechet_distance(g(0, 1), g(0, 4))
    images = [to_tensor(i.load()) for i in make_synthetic_set(SyntheticSpec("checker", "blob", 32, 6, 0))]
    self_fid = fid(images, images)
    elapsed = time.perf_counter() - start
    ok = abs(d_mean - 1) < 1e-9 and abs(d_var - 1) < 1e-9 and abs(self_fid) < 1e-9 and elapsed < 10
    report(3, "Frechet oracle", ok,
           f"N(0,1)|N(1,1) {d_mean:.12f}, N(0,1)|N(0,4) {d_var:.12f}, FID(S,S) {self_fid:.1e}, {elapsed:.2f}s")


def test_4_self_reconstruction(report):
    a, _ = make_synthetic_domain_pair(SyntheticSpec("stripes", "disc", 64, 1, 0),
                                      SyntheticSpec("dots", "disc", 64, 1, 0))
    image = to_tensor(a.items[0].load())
    details, ok = [], True
    for seed in (0, 1, 2):
        start = time.perf_counter()
        _, history = train_pair(image, image, TrainConfig(iters=300, image_side=64, seed=seed, log_every=0))
        elapsed = time.perf_counter() - start
        ratio = history[-1].idt / history[10].idt
        ok &= ratio < 0.2 and elapsed < 300
        details.append(f"seed {seed}: {history[10].idt:.4f} -> {history[-1].idt:.4f} "
                       f"(ratio {ratio:.3f}, {elapsed:.0f}s)")
    report(4, "self-reconstruction L_idt < 20% of iteration 10", ok, "; ".join(details))


def test_5_texture_transfer(report):
    details, ok = [], True
    for seed in (0, 1, 2):
        start = time.perf_counter()
        stripes, dots = make_synthetic_domain_pair(SyntheticSpec("stripes", "disc", 64, 21, seed),
                                                   SyntheticSpec("dots", "disc", 64, 11, seed))
        px = lambda items: [to_tensor(i.load()) for i in items]
        content, texture = px(stripes.items[:1])[0], px(dots.items[:1])[0]
        held_out = px(stripes.items[1:11])
        ref_content, ref_texture = px(stripes.items[11:21]), px(dots.items[1:11])
        model, _ = train_pair(content, texture, TrainConfig(iters=800, image_side=64, seed=seed, log_every=0))
        wins = 0
        for c in held_out:
            out = translate(model, c, texture, DomainId.B)
            to_tex = np.mean([channel_histogram_distance(out, r) for r in ref_texture])
            to_con = np.mean([channel_histogram_distance(out, r) for r in ref_content])
            wins += to_tex < to_con
        elapsed = time.perf_counter() - start
        ok &= wins >= 8 and elapsed < 600
        details.append(f"seed {seed}: {wins}/10 closer to texture ({elapsed:.0f}s)")
    report(5, "stripes->dots texture transfer", ok, "; ".join(details))


def test_6_workflow_cardinality(report, tmp_path):
    from sitta.augmentor import AugJob, LabelPolicy, Mode, run_job

    start = time.perf_counter()
    a = make_synthetic_set(SyntheticSpec("stripes", "disc", 32, 3, 0)).write(tmp_path / "a")
    b = make_synthetic_set(SyntheticSpec("dots", "disc", 32, 2, 0)).write(tmp_path / "b")
    cfg = TrainConfig(iters=20, image_side=32, log_every=0)
    s2s = run_job(AugJob(a, b, Mode.SINGLE_TO_SINGLE, LabelPolicy.TEXTURE_LABEL, cfg, tmp_path / "s2s"))
    s2m = run_job(AugJob(a, b, Mode.SINGLE_TO_MULTI, LabelPolicy.TEXTURE_LABEL, cfg, tmp_path / "s2m"))
    written = len(list((tmp_path / "s2s").glob("*.png")))
    elapsed = time.perf_counter() - start
    ok = (len(s2s.images) == 6 and written == 6 and s2s.models_trained == 6
          and s2m.models_trained == 2 and len(s2m.images) == 6 and elapsed < 120)
    report(6, "workflow cardinality", ok,
           f"SingleToSingle {len(s2s.images)} images / {s2s.models_trained} models, "
           f"SingleToMulti {s2m.models_trained} models / {len(s2m.images)} images, {elapsed:.0f}s")


def test_7_downstream_bench(report):
    start = time.perf_counter()
    result = run_bench(BenchProtocol(compositions=("baseline", "repeat", "sitta"), seeds=(0, 1, 2)))
    elapsed = time.perf_counter() - start
    m = result.means()
    ok = (m["sitta"] >= m["repeat"] >= m["baseline"] and m["sitta"] - m["baseline"] >= 0.05
          and elapsed < 1800)
    report(7, "downstream SITTA >= Repeat >= Baseline", ok,
           f"baseline {m['baseline']:.3f}, repeat {m['repeat']:.3f}, sitta {m['sitta']:.3f}, "
           f"gain {100 * (m['sitta'] - m['baseline']):.1f} points, {elapsed:.0f}s")


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_8_determinism(report, tmp_path):
    from sitta.cli import main

    start = time.perf_counter()
    a = make_synthetic_set(SyntheticSpec("stripes", "disc", 32, 2, 0)).write(tmp_path / "a")
    b = make_synthetic_set(SyntheticSpec("dots", "disc", 32, 1, 0)).write(tmp_path / "b")
    (tmp_path / "job.cfg").write_text("content_dir = a\ntexture_dir = b\nmode = SingleToMulti\n"
                                      "label_policy = texture_label\noutput_dir = unused\n"
                                      "iters = 10\nimage_side = 32\n")
    same = {}
    for command in ("train", "augment", "bench"):
        trees = []
        out = tmp_path / command
        for _ in range(2):
            # same output directory both times so recorded paths match too
            if command == "train":
                argv = ["train", "--content", a.items[0].path, "--texture", b.items[0].path,
                        "--out", str(out), "--seed", "7", "--iters", "10", "--size", "32"]
            elif command == "augment":
                argv = ["augment", "--job", str(tmp_path / "job.cfg"), "--seed", "7", "--out", str(out)]
            else:
                argv = ["bench", "--seed", "7", "--n-seeds", "1", "--epochs", "2", "--n-major", "8",
                        "--translator-iters", "10", "--out", str(out)]
            assert main(argv) == 0
            trees.append(_tree_bytes(out))
        same[command] = trees[0] == trees[1] and len(trees[0]) > 1
    elapsed = time.perf_counter() - start
    report(8, "determinism", all(same.values()) and elapsed < 300,
           ", ".join(f"{k} identical: {v}" for k, v in same.items()) + f", {elapsed:.0f}s")


def test_9_throughput(report):
    cfg = TrainConfig()
    model = SittaModel(cfg.model_config())
    rng = np.random.default_rng(0)
    a, b = (Tensor(rng.uniform(-1, 1, (1, 3, 288, 288)).astype(np.float32)) for _ in range(2))
    opt_g = Adam(model.generator_parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    opt_d = Adam(model.discriminator_parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    pyramid = backbone(cfg.backbone_seed)
    train_step(model, a, b, opt_g, opt_d, cfg.weights, pyramid)
    steps = []
    for _ in range(3):
        start = time.perf_counter()
        train_step(model, a, b, opt_g, opt_d, cfg.weights, pyramid)
        steps.append(time.perf_counter() - start)
    translate(model, a, b)
    fwd = []
    for _ in range(3):
        start = time.perf_counter()
        translate(model, a, b)
        fwd.append(time.perf_counter() - start)
    step, tr = float(np.median(steps)), float(np.median(fwd))
    report(9, "throughput at 288x288", step < 2.0 and tr < 0.5,
           f"train iteration {step:.2f}s < 2s, translate {tr:.3f}s < 0.5s (median of 3)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))

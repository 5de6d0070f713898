"""Acceptance gate: ten go/no-go checks over the whole package.

Each test prints exactly one verdict line (bypassing pytest capture), so a
full run always shows the ten-line scoreboard:

    criterion  1 PASS gradient suite: ...
    ...
    criterion 10 PASS checkpoint round trip: ...

The expensive pieces — a full default experiment, its determinism twins,
and the scenario-set replay — share one module-scoped run.
"""

import csv
import hashlib
import json
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

from scenario_bands.data import SampleSet, Scaler, SynthConfig
from scenario_bands.gan import (
    CheckpointFormatError,
    CheckpointVersionError,
    GanHyper,
    ModelCheckpoint,
    TrainingMeta,
    _critic_update,
    _generator_update,
    _interleave,
    _penalty_and_grads,
    load_checkpoint,
    save_checkpoint,
    train,
)
from scenario_bands.harness import (
    THREADS_ENV_VAR,
    ExperimentConfig,
    derive_seed,
    prepare_datasets,
    run_experiment,
)
from scenario_bands.intervals import build_interval, generate_scenarios
from scenario_bands.metrics import (
    CoverageMatrix,
    coverage_matrix,
    eaw_per_sample,
    eawapi_per_repeat,
    ecp_per_sample,
    ecpas_per_repeat,
    fallacy_report,
)
from scenario_bands.numerics import grad_check, init_mlp, make_rng


@pytest.fixture
def verdict(capfd):
    """Print one scoreboard line per criterion on the real terminal (pytest
    captures at the fd level, so a plain print would only surface on
    failure), then assert."""

    def _verdict(num: int, title: str, ok: bool, detail: str):
        status = "PASS" if ok else "FAIL"
        line = f"criterion {num:2d} {status} {title}: {detail}"
        with capfd.disabled():
            print(line, flush=True)
        assert ok, line

    return _verdict


@contextmanager
def _threads(n: int):
    old = os.environ.get(THREADS_ENV_VAR)
    os.environ[THREADS_ENV_VAR] = str(n)
    try:
        yield
    finally:
        if old is None:
            del os.environ[THREADS_ENV_VAR]
        else:
            os.environ[THREADS_ENV_VAR] = old


def _default_config(out_dir) -> ExperimentConfig:
    """The reference experiment: 65 synthetic days (60 train + 5 test),
    9 noise scales, 100 repeats of 100 scenarios."""
    return ExperimentConfig(synth=SynthConfig(days=65), output_dir=str(out_dir))


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance") / "serial"
    config = _default_config(out)
    t0 = time.monotonic()
    with _threads(1):
        manifest = run_experiment(config)
    elapsed = time.monotonic() - t0
    return config, manifest, out, elapsed


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --- 1: every gradient fed to Adam, finite-difference checked -----------------


def test_criterion_01_gradient_suite(verdict):
    rng = make_rng(1001)
    # Smooth hidden activations, so finite differences are trustworthy; no
    # identity hiddens in the critic, because a fully linear path from a bias
    # to the output makes that bias's true gradient exactly zero (the
    # Wasserstein means cancel it) and fd roundoff noise at a true zero is
    # not gradient error. The one structural zero left — the critic's output
    # bias — is asserted to be exactly 0.0, which is stronger than fd
    # agreement.
    pool = ("tanh", "logistic")
    t0 = time.monotonic()
    worst = 0.0
    n_nets = 0

    def rand_dims(in_dim, out_dim):
        depth = int(rng.integers(1, 3))
        return [in_dim] + [int(rng.integers(2, 9)) for _ in range(depth)] + [out_dim]

    def check_without_output_bias(loss_and_grad_full, net):
        """grad_check over all params except the final bias; that one must
        come back identically zero."""
        full = net.arrays()
        _, grads = loss_and_grad_full(full)
        assert float(grads[-1][0]) == 0.0
        fixed_bias = full[-1]

        def clipped(arrays):
            loss, grads = loss_and_grad_full(list(arrays) + [fixed_bias])
            return loss, grads[:-1]

        return grad_check(clipped, full[:-1])

    for _ in range(8):  # full critic loss: Wasserstein terms + penalty
        scen = int(rng.integers(2, 7))
        cond = int(rng.integers(1, 5))
        batch = int(rng.integers(2, 7))
        dims = rand_dims(scen + cond, 1)
        critic = init_mlp(rng, dims, [str(rng.choice(pool)) for _ in dims[1:-1]] + ["identity"])
        real = rng.standard_normal((batch, scen))
        fake = rng.standard_normal((batch, scen))
        cvec = rng.standard_normal((batch, cond))
        eps = rng.uniform(0.05, 0.95, batch)

        def loss_and_grad(arrays, critic=critic):
            c = critic.with_arrays(arrays)
            loss, wg, bg, _, _ = _critic_update(c, real, fake, cvec, eps, 10.0)
            return loss, _interleave(wg, bg)

        worst = max(worst, check_without_output_bias(loss_and_grad, critic))
        n_nets += 1

    for _ in range(8):  # penalty alone, double-backprop path
        width = int(rng.integers(3, 9))
        dims = rand_dims(width, 1)
        critic = init_mlp(rng, dims, [str(rng.choice(pool)) for _ in dims[1:-1]] + ["identity"])
        inputs = rng.standard_normal((int(rng.integers(2, 7)), width))
        scen = int(rng.integers(1, width + 1))

        def loss_and_grad(arrays, critic=critic):
            c = critic.with_arrays(arrays)
            p, wg, bg = _penalty_and_grads(c, inputs, scen)
            return p, _interleave(wg, bg)

        worst = max(worst, check_without_output_bias(loss_and_grad, critic))
        n_nets += 1

    # identity hiddens are fine for the generator: the frozen critic's
    # nonlinearities sit downstream of every generator parameter
    gen_pool = ("tanh", "logistic", "identity")
    for _ in range(8):  # generator loss chained through a frozen critic
        scen = int(rng.integers(2, 7))
        cond = int(rng.integers(1, 5))
        noise = int(rng.integers(2, 7))
        gdims = rand_dims(noise + cond, scen)
        gen = init_mlp(rng, gdims, [str(rng.choice(gen_pool)) for _ in gdims[1:-1]] + ["identity"])
        cdims = rand_dims(scen + cond, 1)
        critic = init_mlp(rng, cdims, [str(rng.choice(pool)) for _ in cdims[1:-1]] + ["identity"])
        z = rng.standard_normal((int(rng.integers(2, 7)), noise))
        cvec = rng.standard_normal((z.shape[0], cond))

        def loss_and_grad(arrays, gen=gen, critic=critic):
            g = gen.with_arrays(arrays)
            loss, wg, bg, _ = _generator_update(g, critic, z, cvec)
            return loss, _interleave(wg, bg)

        worst = max(worst, grad_check(loss_and_grad, gen.arrays()))
        n_nets += 1

    elapsed = time.monotonic() - t0
    verdict(1, "gradient suite",
             n_nets >= 20 and worst < 1e-4 and elapsed < 30.0,
             f"{n_nets} random architectures, worst rel err {worst:.2e}, {elapsed:.1f}s")


# --- 2/3: metric reductions vs nested-loop oracles ----------------------------


def _random_bands(rng):
    r = int(rng.integers(1, 51))
    n = int(rng.integers(1, 51))
    lower = rng.standard_normal((r, n))
    upper = lower + rng.random((r, n)) * 2.0
    truth = rng.standard_normal(n)
    return lower, upper, truth


def test_criterion_02_metric_oracles(verdict):
    t0 = time.monotonic()
    rng = make_rng(1002)
    ok = True
    for _ in range(200):
        lower, upper, truth = _random_bands(rng)
        m = coverage_matrix(lower, upper, truth)
        r_count, n_count = m.covered.shape

        covered_oracle = np.empty((r_count, n_count), dtype=bool)
        widths_oracle = np.empty((r_count, n_count))
        for r in range(r_count):
            for i in range(n_count):
                covered_oracle[r, i] = lower[r][i] <= truth[i] <= upper[r][i]
                widths_oracle[r, i] = upper[r][i] - lower[r][i]
        ok &= np.array_equal(m.covered, covered_oracle)       # counts: bitwise
        ok &= np.array_equal(m.widths, widths_oracle)

        ecp_o = np.array([sum(covered_oracle[r][i] for r in range(r_count)) / r_count
                          for i in range(n_count)])
        eaw_o = np.array([sum(widths_oracle[r][i] for r in range(r_count)) / r_count
                          for i in range(n_count)])
        ecpas_o = np.array([sum(covered_oracle[r][i] for i in range(n_count)) / n_count
                            for r in range(r_count)])
        eawapi_o = np.array([sum(widths_oracle[r][i] for i in range(n_count)) / n_count
                             for r in range(r_count)])
        ok &= np.abs(ecp_per_sample(m) - ecp_o).max() <= 1e-12
        ok &= np.abs(eaw_per_sample(m) - eaw_o).max() <= 1e-12
        ok &= np.abs(ecpas_per_repeat(m) - ecpas_o).max() <= 1e-12
        ok &= np.abs(eawapi_per_repeat(m) - eawapi_o).max() <= 1e-12
    elapsed = time.monotonic() - t0
    verdict(2, "metric oracles", bool(ok) and elapsed < 10.0,
             f"200 random matrices vs nested loops, {elapsed:.1f}s")


def test_criterion_03_transpose_identity(verdict):
    rng = make_rng(1003)
    worst = 0.0
    for _ in range(200):
        lower, upper, truth = _random_bands(rng)
        m = coverage_matrix(lower, upper, truth)
        worst = max(worst, abs(float(ecp_per_sample(m).mean() - ecpas_per_repeat(m).mean())))
        worst = max(worst, abs(float(eaw_per_sample(m).mean() - eawapi_per_repeat(m).mean())))
    verdict(3, "transpose identity", worst < 1e-12,
             f"|mean ECP - mean ECPAS| and width twin <= {worst:.2e} on 200 instances")


# --- 4: the per-sample/all-sample conflation fixture --------------------------


def test_criterion_04_plateau_fixture(verdict):
    covered = np.ones((100, 240), dtype=bool)
    never = [17, 101, 229]
    covered[:, never] = False
    m = CoverageMatrix(covered=covered, widths=np.full((100, 240), 0.25))
    ecpas = ecpas_per_repeat(m)
    report = fallacy_report(m, low_ecp_threshold=0.5)
    flagged = [i for i, _ in report.low_ecp_points]
    ok = (np.all(ecpas == 0.9875)
          and flagged == never
          and all(e == 0.0 for _, e in report.low_ecp_points))
    verdict(4, "coverage plateau fixture", bool(ok),
             "all 100 repeats at ECPAS 0.9875; exactly 3 points flagged at ECP 0")


# --- 5: quantile orderings in the emitted confidence table --------------------


def test_criterion_05_confidence_ordering(verdict, full_run):
    config, _, out, _ = full_run
    rows = _read_rows(out / "fig9.csv")
    n_cl = len(config.cl_grid)
    ok = len(rows) == len(config.sigma_grid) * n_cl
    for k in range(len(config.sigma_grid)):
        block = rows[k * n_cl:(k + 1) * n_cl]
        cls = [float(r["cl"]) for r in block]
        ecpas = [float(r["ecpas_at_cl"]) for r in block]
        eawapi = [float(r["eawapi_at_cl"]) for r in block]
        ok &= cls == sorted(cls)
        ok &= all(a >= b for a, b in zip(ecpas, ecpas[1:]))    # non-increasing
        ok &= all(a <= b for a, b in zip(eawapi, eawapi[1:]))  # non-decreasing
    verdict(5, "confidence ordering", bool(ok),
             f"ecpas_at_cl falls and eawapi_at_cl rises with CL at all "
             f"{len(config.sigma_grid)} noise scales")


# --- 6: 1-D moment-matching convergence ---------------------------------------


def test_criterion_06_toy_convergence(verdict):
    t0 = time.monotonic()
    rng = make_rng(99)
    sample_set = SampleSet(
        conditions=np.zeros((256, 0)),
        targets=rng.normal(0.5, 0.1, (256, 1)),
        true_indices=np.zeros(256, dtype=np.int64),
        points_per_day=1,
    )
    # low penalty weight: the toy critic must be free to re-orient its slope
    # while the generator crosses the target, which a strong two-sided
    # penalty turns into a limit cycle
    hyper = GanHyper(iterations=3000, gp_weight=0.5)
    checkpoint, _ = train(sample_set, hyper, seed=1)
    sset = generate_scenarios(checkpoint, np.zeros(0), sigma=1.0,
                              n_scenarios=4000, seed=7)
    mean = float(sset.scenarios.mean())
    std = float(sset.scenarios.std())
    elapsed = time.monotonic() - t0
    ok = abs(mean - 0.5) < 0.05 and 0.05 <= std <= 0.2 and elapsed < 180.0
    verdict(6, "toy convergence",
             ok, f"generated mean {mean:.3f} (target 0.5+-0.05), "
                 f"std {std:.3f} (band [0.05, 0.2]), {elapsed:.0f}s")


# --- 7: coverage/width trends across the sigma grid ---------------------------


def test_criterion_07_sigma_trend(verdict, full_run):
    config, _, out, elapsed = full_run
    rows = _read_rows(out / "fig8.csv")
    med_ecpas, med_eawapi = [], []
    for k, sigma in enumerate(config.sigma_grid):
        block = rows[k * config.repeats:(k + 1) * config.repeats]
        assert all(float(r["sigma"]) == sigma for r in block)
        med_ecpas.append(float(np.median([float(r["ecpas"]) for r in block])))
        med_eawapi.append(float(np.median([float(r["eawapi"]) for r in block])))

    diffs = np.diff(med_ecpas)
    inversions = diffs[diffs < 0]
    ok_a = inversions.size <= 1 and (inversions >= -0.01).all()
    ok_b = bool((np.diff(med_eawapi) > 0).all())
    k1 = config.sigma_grid.index(1.0)
    k3 = config.sigma_grid.index(3.0)
    growth = (med_eawapi[k3] - med_eawapi[k1]) / med_eawapi[k1]
    ok_c = growth < 0.5
    verdict(7, "sigma trend",
             ok_a and ok_b and ok_c and elapsed < 600.0,
             f"median ECPAS {med_ecpas[0]:.3f}->{med_ecpas[-1]:.3f} rising, "
             f"median EAWAPI strictly rising, width growth sigma 1->3 "
             f"{growth * 100:.0f}% (< 50%), run {elapsed:.0f}s")


# --- 8: byte-identical reruns, serial == parallel -----------------------------


def test_criterion_08_determinism(verdict, full_run, tmp_path):
    _, manifest_a, out_a, _ = full_run
    with _threads(1):
        manifest_b = run_experiment(_default_config(tmp_path / "again"))
    with _threads(3):
        manifest_p = run_experiment(_default_config(tmp_path / "parallel"))
    same_rerun = manifest_b.checksums == manifest_a.checksums
    same_parallel = manifest_p.checksums == manifest_a.checksums
    # belt and braces: recompute one digest from the bytes on disk
    name = "fig8.csv"
    digest = hashlib.sha256((out_a / name).read_bytes()).hexdigest()
    ok = same_rerun and same_parallel and digest == manifest_a.checksums[name]
    verdict(8, "determinism", ok,
             f"{len(manifest_a.checksums)} file checksums identical across rerun "
             f"and 3-thread run")


# --- 9: envelopes contain every scenario they came from -----------------------


def test_criterion_09_hull_property(verdict, full_run):
    config, _, out, _ = full_run
    checkpoint = load_checkpoint(out / "checkpoint.json")
    _, _, _, test_set = prepare_datasets(config, scaler=checkpoint.scaler)
    n_sets = 0
    violations = 0
    for k, sigma in enumerate(config.sigma_grid):
        for r in range(config.repeats):
            for day in range(test_set.n_samples):
                seed = derive_seed(config.master_seed,
                                   ("sigma", k, "repeat", r, "day", day))
                sset = generate_scenarios(checkpoint, test_set.conditions[day], sigma,
                                          n_scenarios=config.scenarios_per_interval,
                                          seed=seed, condition_id=day)
                band = build_interval(sset, "envelope")
                violations += int(np.sum(sset.scenarios < band.lower))
                violations += int(np.sum(sset.scenarios > band.upper))
                n_sets += 1
    verdict(9, "hull property", violations == 0,
             f"{n_sets} scenario sets replayed, {violations} points outside "
             f"their own envelope")


# --- 10: checkpoint serialization round trip ----------------------------------


def _random_checkpoint(rng) -> ModelCheckpoint:
    cond = int(rng.integers(0, 7))
    target = int(rng.integers(1, 7))
    noise = int(rng.integers(1, 7))
    acts = ["identity", "relu", "tanh", "logistic"]

    def net(in_dim, out_dim):
        depth = int(rng.integers(1, 4))
        dims = [in_dim] + [int(rng.integers(1, 9)) for _ in range(depth)] + [out_dim]
        hidden = [str(rng.choice(acts)) for _ in dims[1:-1]]
        mlp = init_mlp(rng, dims, hidden + ["identity"])
        # non-trivial biases so the round trip exercises every array
        return mlp.with_arrays([rng.standard_normal(a.shape) for a in mlp.arrays()])

    lo = float(rng.uniform(0.1, 1.0))
    meta_losses = (None, None) if rng.random() < 0.2 else \
        (float(rng.standard_normal()), float(rng.standard_normal()))
    return ModelCheckpoint(
        generator=net(noise + cond, target),
        critic=net(target + cond, 1),
        scaler=Scaler(min=float(rng.uniform(-50, 0)), max=float(rng.uniform(1, 100))),
        condition_dim=cond,
        target_dim=target,
        noise_dim=noise,
        train_sigma_range=(lo, lo + float(rng.uniform(0.5, 3.0))),
        training_meta=TrainingMeta(
            iterations_run=int(rng.integers(0, 10000)),
            final_critic_loss=meta_losses[0],
            final_generator_loss=meta_losses[1],
            seed=int(rng.integers(0, 2**63)),
        ),
    )


def test_criterion_10_checkpoint_round_trip(verdict, tmp_path):
    rng = make_rng(1010)
    path = tmp_path / "ckpt.json"
    exact = True
    for _ in range(50):
        original = _random_checkpoint(rng)
        save_checkpoint(original, path)
        loaded = load_checkpoint(path)
        for a, b in zip(original.generator.arrays() + original.critic.arrays(),
                        loaded.generator.arrays() + loaded.critic.arrays()):
            exact &= bool(np.array_equal(a, b))
        exact &= loaded.generator.activations == original.generator.activations
        exact &= loaded.critic.activations == original.critic.activations
        exact &= (loaded.scaler.min, loaded.scaler.max) == \
                 (original.scaler.min, original.scaler.max)
        exact &= loaded.train_sigma_range == original.train_sigma_range
        exact &= loaded.training_meta == original.training_meta
        exact &= (loaded.condition_dim, loaded.target_dim, loaded.noise_dim) == \
                 (original.condition_dim, original.target_dim, original.noise_dim)

    corrupt = tmp_path / "corrupt.json"
    corrupt.write_text(path.read_text(encoding="utf-8")[:100], encoding="utf-8")
    try:
        load_checkpoint(corrupt)
        clean_corrupt = False
    except CheckpointFormatError:
        clean_corrupt = True

    mismatched = tmp_path / "version.json"
    doc = json.loads(path.read_text(encoding="utf-8"))
    doc["format_version"] = 99
    mismatched.write_text(json.dumps(doc), encoding="utf-8")
    try:
        load_checkpoint(mismatched)
        clean_version = False
    except CheckpointVersionError:
        clean_version = True

    verdict(10, "checkpoint round trip",
             exact and clean_corrupt and clean_version,
             "50 random checkpoints bit-exact; corrupt and version-mismatch "
             "files raise the dedicated errors")

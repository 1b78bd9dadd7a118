import csv

import numpy as np
import pytest

from diffuir import denoiser
from diffuir.degradations import DatasetSpec, make_batch
from diffuir.diffusion import forward_closed_form
from diffuir.errors import CheckpointError, ConfigError, DimensionError, NonFiniteLossError
from diffuir.schedule import build_schedule
from diffuir.training import (AdamState, Conditioning, RunConfig, adam_update, apply_ablation,
                              load_training_state, loss_l1, model_setup, random_flips, train,
                              train_step)

from oracles import rddm_forward, steps

S = build_schedule()


def test_loss_examples():
    a = np.array([0.2, -0.4])
    assert loss_l1(a, a) == 0.0
    assert loss_l1(a, a + 0.5) == pytest.approx(0.5)
    assert loss_l1(a, np.zeros(2)) == pytest.approx(0.3)
    with pytest.raises(DimensionError):
        loss_l1(np.zeros(2), np.zeros(3))


def test_adam_against_scalar_recurrence():
    p = denoiser.init_denoiser(0, 2, (1,), in_channels=2, out_channels=1)
    state = AdamState.zeros_like(p)
    g = {k: np.full_like(a, 0.3) for k, a in p.arrays.items()}
    orig = p.arrays["out.b"].copy()
    m = v = 0.0
    x = 0.0
    for step in range(1, 4):
        p, state = adam_update(p, g, state, lr=0.01)
        m = 0.9 * m + 0.1 * 0.3
        v = 0.999 * v + 0.001 * 0.09
        x -= 0.01 * (m / (1 - 0.9**step)) / (np.sqrt(v / (1 - 0.999**step)) + 1e-8)
    assert state.step == 3
    assert p.arrays["out.b"][0] == pytest.approx(x, abs=1e-15)
    assert not orig.any()  # inputs are not modified


def test_ablation_modes():
    s4 = build_schedule(T=4)
    sched, cond = apply_ablation("full", s4)
    assert sched is s4 and cond == Conditioning()
    sched, cond = apply_ablation("no_sdt", s4)
    assert not sched.delta_bar.any() and cond == Conditioning()
    x = forward_closed_form(sched, np.array([0.2]), np.array([0.7]), np.array([0.5]), 4)
    assert x[0] == pytest.approx(0.7 + 0.5)
    sched, cond = apply_ablation("no_ec_sdt", s4)
    assert not cond.explicit and cond.implicit
    # zero explicit condition: the endpoint is I0 + 1 * (0 - I0) = 0
    I0 = np.array([0.2, 0.9])
    np.testing.assert_allclose(forward_closed_form(sched, I0, np.zeros(2), np.zeros(2), 4), 0.0)
    sched, cond = apply_ablation("no_ic_sdt", s4)
    assert cond.explicit and not cond.implicit
    with pytest.raises(ConfigError):
        apply_ablation("nothing", s4)


def test_no_sdt_forward_matches_residual_reference():
    sched, _ = apply_ablation("no_sdt", S)
    alpha, beta, _ = steps(sched)
    for t in (1, 10, 50):
        got = forward_closed_form(sched, np.array([0.3]), np.array([0.8]), np.array([-0.4]), t)[0]
        assert got == pytest.approx(rddm_forward(alpha, beta, 0.3, 0.8, -0.4, t), abs=1e-12)


def test_model_setup_channels():
    for mode, cin in [("full", 6), ("no_sdt", 6), ("no_ec_sdt", 6), ("no_ic_sdt", 3)]:
        _, _, p = model_setup(RunConfig(ablation_mode=mode))
        assert p.arch.in_channels == cin


class OracleNet:
    """Stands in for the denoiser: returns the true residual, has one dummy param."""

    def __init__(self, target):
        self.target = target

    def forward(self, params, It, Iin, t, return_cache=False):
        return self.target.copy(), None

    def backward(self, params, cache, g):
        return {"out.b": np.array([g.sum()])}


def test_oracle_gives_zero_loss_and_no_update():
    batch = make_batch(DatasetSpec(), 4, 0)
    p = denoiser.init_denoiser(0)
    p = denoiser.DenoiserParams(p.arch, {"out.b": np.array([0.25])})
    Ires = np.stack([s.Ires for s in batch])
    p2, opt, loss = train_step(p, AdamState.zeros_like(p), S, batch, np.random.default_rng(0),
                               net=OracleNet(Ires), lr=0.1)
    assert loss == 0.0 and opt.step == 1
    assert p2.arrays["out.b"][0] == 0.25


def test_step_changes_params_and_counts():
    p = denoiser.init_denoiser(0, dtype=np.float32)
    opt = AdamState.zeros_like(p)
    p2, opt2, loss = train_step(p, opt, S, make_batch(DatasetSpec(), 10, 0),
                                np.random.default_rng(0))
    assert loss > 0 and opt2.step == opt.step + 1
    assert any(not np.array_equal(p.arrays[k], p2.arrays[k]) for k in p.arrays)


def test_non_finite_loss_aborts():
    p = denoiser.init_denoiser(0)
    p.arrays["out.b"][:] = np.nan
    with pytest.raises(NonFiniteLossError, match="step 1"):
        train_step(p, AdamState.zeros_like(p), S, make_batch(DatasetSpec(), 2, 0),
                   np.random.default_rng(0), seed=5)


def test_flips_keep_pairs_aligned():
    batch = make_batch(DatasetSpec(), 20, 1)
    flipped = random_flips(batch, np.random.default_rng(0))
    changed = 0
    for a, b in zip(batch, flipped):
        np.testing.assert_allclose(b.Ires, b.Iin - b.I0)
        ok = [np.array_equal(b.I0, f(a.I0)) and np.array_equal(b.Iin, f(a.Iin)) for f in (
            lambda x: x, lambda x: x[:, :, ::-1], lambda x: x[:, ::-1], lambda x: x[:, ::-1, ::-1])]
        assert any(ok)
        changed += not ok[0]
    assert changed > 0


def small_cfg(tmp_path, **kw):
    base = dict(iterations=6, log_every=2, eval_every=3, ckpt_every=3, base_width=4,
                out_dir=str(tmp_path), data=DatasetSpec(image_size=16, samples_per_task=2))
    base.update(kw)
    return RunConfig(**base)


def test_config_validation():
    for kw in ({"lr": 0}, {"iterations": 0}, {"ablation_mode": "x"}, {"sampling_steps": 0}):
        with pytest.raises(ConfigError):
            RunConfig(**kw)


def test_train_determinism_and_logs(tmp_path):
    a = train(small_cfg(tmp_path), run_dir=tmp_path / "a")
    b = train(small_cfg(tmp_path), run_dir=tmp_path / "b")
    assert a.losses == b.losses and len(a.losses) == 6
    rows = list(csv.reader(open(a.metrics)))
    assert rows[0] == ["iter", "loss", "psnr_derain", "psnr_lowlight", "psnr_desnow",
                       "psnr_dehaze", "psnr_deblur"]
    assert [int(r[0]) for r in rows[1:]] == [2, 3, 4, 6]
    assert all(r[2] for r in rows[1:] if int(r[0]) in (3, 6))
    assert (a.run_dir / "ckpt-0000003.dfui").exists() and a.checkpoint.exists()
    assert set(a.final_eval) == {"derain", "lowlight", "desnow", "dehaze", "deblur"}


def test_single_iteration_and_resume(tmp_path):
    one = train(small_cfg(tmp_path, iterations=1), run_dir=tmp_path / "one")
    params, opt, meta = load_training_state(one.checkpoint)
    assert opt.step == 1 and meta["step"] == 1
    more = train(small_cfg(tmp_path, iterations=2, resume=str(one.checkpoint)),
                 run_dir=tmp_path / "two")
    assert load_training_state(more.checkpoint)[1].step == 3
    with pytest.raises(CheckpointError):
        train(small_cfg(tmp_path, base_width=6, resume=str(one.checkpoint)),
              run_dir=tmp_path / "bad")


def test_lowlight_convergence():
    # single-task lowlight, desk config otherwise, 2000 steps
    spec = DatasetSpec(task_weights=(0, 1, 0, 0, 0))
    cfg = RunConfig(data=spec)
    sched, cond, p = model_setup(cfg)
    opt = AdamState.zeros_like(p)
    rng = np.random.default_rng(0)
    seeds = np.random.default_rng(1)
    losses = []
    for _ in range(2000):
        batch = random_flips(make_batch(spec, 10, int(seeds.integers(2**63))), rng)
        p, opt, loss = train_step(p, opt, sched, batch, rng, conditioning=cond)
        losses.append(loss)
    # measured ratio 0.53 for this seed; pinned with a little headroom
    assert np.mean(losses[-100:]) < 0.6 * np.mean(losses[:100])

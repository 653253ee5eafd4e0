import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eamat import tensor as tn
from eamat.config import RunConfig
from eamat.model import Localizer
from eamat.query import InputError
from eamat.synth import GenConfig, generate
from eamat.tensor import Tensor
from eamat.training import (
    Adam,
    LossWeights,
    NonFiniteError,
    TrainingReport,
    boundary_loss,
    inner_loss,
    inner_targets,
    load_checkpoint,
    sample_loss,
    save_checkpoint,
    total_loss,
    train,
)

TINY_GEN = GenConfig(t_min=8, t_max=10, span_mean=3, span_spread=1, entity_slack=2,
                     n_train=4, n_val=2, n_test=2)


def tiny_config(**kw):
    base = dict(d=12, heads=2, scales=3, steps=6, gen=TINY_GEN)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def data():
    return generate(TINY_GEN, "train")


class TestBoundaryLoss:
    def test_confident_correct(self):
        s = Tensor([0.0, 60.0, 0.0])
        assert boundary_loss(s, s, 1, 1).item() < 1e-20

    @pytest.mark.parametrize("T", [1, 3, 10])
    def test_uniform(self, T):
        assert abs(boundary_loss(Tensor(np.zeros(T)), Tensor(np.zeros(T)), 0, T - 1).item() - 2 * math.log(T)) < 1e-12

    def test_half_and_quarter(self):
        # log-scores giving P_s[0]=0.5 and P_e[1]=0.25
        s = Tensor(np.log([0.5, 0.25, 0.25]))
        e = Tensor(np.log([0.5, 0.25, 0.25]))
        assert abs(boundary_loss(s, e, 0, 1).item() - 2.0794415416798357) < 1e-12

    def test_index_out_of_range(self):
        with pytest.raises(InputError):
            boundary_loss(Tensor(np.zeros(3)), Tensor(np.zeros(3)), 0, 3)


class TestInnerLoss:
    def test_perfect_prediction(self):
        assert inner_loss(Tensor([1.0, 0.0, 1.0]), np.array([1.0, 0.0, 1.0])).item() < 1e-6

    def test_max_entropy(self):
        assert abs(inner_loss(Tensor(np.full(5, 0.5)), np.array([1, 0, 1, 1, 0.0])).item() - math.log(2)) < 1e-15

    def test_worked_example(self):
        got = inner_loss(Tensor([0.9, 0.2]), np.array([1.0, 0.0])).item()
        assert abs(got - -(math.log(0.9) + math.log(0.8)) / 2) < 1e-15
        assert abs(got - 0.1643) < 5e-5

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            inner_loss(Tensor([0.5, 0.5]), np.ones(3))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.integers(0, 2**31))
    def test_finite_nonnegative(self, probs, seed):
        y = np.random.default_rng(seed).integers(0, 2, size=len(probs)).astype(float)
        v = inner_loss(Tensor(probs), y).item()
        assert math.isfinite(v) and v >= 0


class TestTotalLoss:
    def test_examples(self):
        assert total_loss(LossWeights(1.0, 0.0), 2.5, 7.0) == 2.5
        assert total_loss(LossWeights(1.0, 1.0), 2.0, 3.0) == 5.0
        assert abs(total_loss(LossWeights(), 1.0, 0.3) - 4.0) < 1e-15

    def test_targets(self):
        y = inner_targets(8, 2, 5)
        assert y.sum() == 4 and y[2] == y[5] == 1 and y[1] == y[6] == 0


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        p = tn.parameter(np.array([1.0, -2.0]))
        opt = Adam([p], lr=0.1, total_steps=10)
        p.grad[:] = 0
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_scalar_trace(self):
        x = tn.parameter(np.array([1.0]))
        opt = Adam([x], lr=0.1, total_steps=1000)
        tn.backward(x.sum())
        opt.step()
        # m = 0.1, v = 0.001; bias-corrected both are 1
        m_hat = (0.1 * 1.0) / (1 - 0.9)
        v_hat = (0.001 * 1.0) / (1 - 0.999)
        expected = 1.0 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert abs(x.data[0] - expected) < 1e-15
        assert abs(x.data[0] - 0.9) < 1e-8
        assert np.all(x.grad == 0)

    def test_decay_reaches_zero(self):
        x = tn.parameter(np.array([1.0]))
        opt = Adam([x], lr=0.1, total_steps=3)
        lrs = []
        for _ in range(4):
            tn.backward(x.sum())
            lrs.append(opt.step())
        assert lrs[:3] == pytest.approx([0.1, 0.1 * 2 / 3, 0.1 / 3])
        frozen = x.data.copy()
        assert lrs[3] == 0.0 and opt.current_lr() == 0.0
        tn.backward(x.sum())
        opt.step()
        np.testing.assert_array_equal(x.data, frozen)

    def test_clipping_bounds_the_effective_gradient(self):
        x = tn.parameter(np.zeros(4))
        opt = Adam([x], lr=0.1, total_steps=10, clip_norm=1.0)
        x.grad[:] = 100.0
        opt.step()
        np.testing.assert_allclose(opt.m[0], 0.1 * 0.5, atol=1e-15)


class TestTrainingLoop:
    def test_zero_steps(self, data, tmp_path):
        cfg = tiny_config(steps=0)
        model = Localizer(cfg, TINY_GEN.d_v)
        report = train(model, data, cfg, data[:2], tmp_path)
        assert len(report.rows) == 1
        assert math.isnan(report.rows[0]["loss"]) and 0 <= report.rows[0]["val_mIoU"] <= 1
        assert (tmp_path / "checkpoint.bin").exists()

    def test_report_rows(self, data):
        cfg = tiny_config(steps=10, eval_every=3)
        report = train(Localizer(cfg, TINY_GEN.d_v), data, cfg)
        steps = [r["step"] for r in report.rows]
        assert steps == [0, 3, 4, 6, 8, 9, 10]
        text = report.to_text().splitlines()
        assert text[0] == ",".join(TrainingReport.COLUMNS) and len(text) == 8

    def test_same_seed_gives_identical_checkpoints(self, data, tmp_path):
        cfg = tiny_config()
        for run in ("a", "b"):
            train(Localizer(cfg, TINY_GEN.d_v), data, cfg, data[:2], tmp_path / run)
        assert (tmp_path / "a/checkpoint.bin").read_bytes() == (tmp_path / "b/checkpoint.bin").read_bytes()

    def test_checkpoint_round_trip(self, data, tmp_path):
        cfg = tiny_config()
        model = Localizer(cfg, TINY_GEN.d_v)
        train(model, data, cfg)
        save_checkpoint(model, tmp_path / "m.bin")
        loaded = load_checkpoint(tmp_path / "m.bin")
        assert loaded.config == model.config
        a, b = model(data[0]), loaded(data[0])
        for name in ("relevance", "start_scores", "end_scores", "inner"):
            assert getattr(a, name).data.tobytes() == getattr(b, name).data.tobytes()

    def test_bad_checkpoint(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"not a checkpoint")
        with pytest.raises(InputError):
            load_checkpoint(p)

    def test_one_small_step_decreases_loss(self, data):
        w = LossWeights()
        for trial in range(5):
            model = Localizer(tiny_config(seed=trial), TINY_GEN.d_v)
            sample = data[trial % len(data)]
            loss, _ = sample_loss(model, sample, w)
            tn.backward(loss)
            Adam(model.parameters(), lr=1e-4, total_steps=100, clip_norm=5.0).step()
            with tn.no_grad():
                after, _ = sample_loss(model, sample, w)
            assert after.item() < loss.item(), trial

    def test_nan_aborts_and_names_tensor(self, data):
        cfg = tiny_config()
        model = Localizer(cfg, TINY_GEN.d_v)
        model.entity.fc4.weight.data[0, 0] = np.nan
        with pytest.raises(NonFiniteError, match="entity.fc4.weight"):
            train(model, data, cfg)

    def test_loss_finite_and_nonnegative(self, data):
        model = Localizer(tiny_config(), TINY_GEN.d_v)
        for s in data:
            with tn.no_grad():
                v = sample_loss(model, s, LossWeights())[0].item()
            assert math.isfinite(v) and v >= 0

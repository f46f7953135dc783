import copy

import numpy as np
import pytest
import torch

from mddiff.denoiser import (
    DenoiserModel,
    ModelConfig,
    init_optimizer,
    loss_and_gradients,
    masked_mse_loss,
    optimizer_step,
    plateau_update,
    sinusoidal_embedding,
)
from conftest import (
    make_tiny_image_model,
    make_tiny_vector_model,
    make_vector_model,
    max_fd_relative_error,
)


def vector_inputs(model, B=4, seed=0):
    g = torch.Generator().manual_seed(seed)
    m = model.config.num_domains
    k = model.config.data_shape[0]
    x = [torch.randn(B, k, generator=g) for _ in range(m)]
    tvec = torch.randint(0, 1001, (B, m), generator=g)
    return x, tvec


class TestForward:
    def test_output_shapes_match_input(self):
        model = make_vector_model()
        x, tvec = vector_inputs(model)
        out = model(x, tvec)
        assert [tuple(o.shape) for o in out] == [tuple(xi.shape) for xi in x]

    def test_deterministic(self):
        model = make_vector_model()
        x, tvec = vector_inputs(model)
        with torch.no_grad():
            a = model(x, tvec)
            b = model(x, tvec)
        for ai, bi in zip(a, b):
            assert torch.equal(ai, bi)

    @pytest.mark.parametrize("mode", ["vector", "image"])
    def test_wiring_permutation(self, mode):
        if mode == "vector":
            model = make_vector_model(m=3)
            g = torch.Generator().manual_seed(1)
            x = [torch.randn(4, 8, generator=g) for _ in range(3)]
        else:
            with torch.random.fork_rng():
                torch.manual_seed(0)
                model = DenoiserModel(ModelConfig(
                    mode="image", num_domains=3, data_shape=(3, 16, 16),
                    base_channels=8, channel_mult=(1, 2), num_groups=4,
                ))
            g = torch.Generator().manual_seed(1)
            x = [torch.randn(2, 3, 16, 16, generator=g) for _ in range(3)]
        tvec = torch.randint(0, 1001, (x[0].shape[0], 3), generator=g)
        perm = [2, 0, 1]
        with torch.no_grad():
            out = model(x, tvec)
            permuted = copy.deepcopy(model)
            permuted.branches = torch.nn.ModuleList([model.branches[p] for p in perm])
            out_p = permuted([x[p] for p in perm], tvec[:, perm])
        for i, p in enumerate(perm):
            assert torch.allclose(out_p[i], out[p], atol=1e-5)

    def test_rejects_shape_mismatch(self):
        model = make_vector_model()
        x, tvec = vector_inputs(model)
        x[1] = torch.randn(4, 5)
        with pytest.raises(ValueError):
            model(x, tvec)

    def test_rejects_non_finite(self):
        model = make_vector_model()
        x, tvec = vector_inputs(model)
        x[0][0, 0] = float("nan")
        with pytest.raises(ValueError):
            model(x, tvec)

    def test_max_timestep_on_noise_domain_is_finite(self):
        model = make_vector_model()
        g = torch.Generator().manual_seed(2)
        x = [torch.randn(4, 8, generator=g) for _ in range(3)]
        tvec = torch.tensor([[3, 1000, 7]]).expand(4, 3)
        with torch.no_grad():
            out = model(x, tvec)
        assert all(torch.isfinite(o).all() for o in out)

    def test_sinusoidal_embedding_shape(self):
        emb = sinusoidal_embedding(torch.tensor([0, 500, 1000]), 64)
        assert emb.shape == (3, 64)
        assert torch.isfinite(emb).all()


class TestLoss:
    def test_zero_at_minimum(self):
        model = make_tiny_vector_model()
        x, _ = vector_inputs(model, B=3)
        tvec = torch.randint(0, 51, (3, 2))
        with torch.no_grad():
            preds = model(x, tvec)
        loss, grads = loss_and_gradients(model, x, tvec, [p.clone() for p in preds],
                                         torch.ones(2))
        assert loss == pytest.approx(0.0, abs=1e-10)
        assert all(float(g.abs().max()) < 1e-8 for g in grads.values())

    def test_mask_excludes_other_domains(self):
        model = make_vector_model()
        x, tvec = vector_inputs(model)
        targets = [torch.randn_like(xi) for xi in x]
        mask = torch.tensor([1.0, 0.0, 0.0])
        loss1, _ = loss_and_gradients(model, x, tvec, targets, mask)
        targets[1] = targets[1] + 100.0
        targets[2] = -targets[2]
        loss2, _ = loss_and_gradients(model, x, tvec, targets, mask)
        assert loss1 == pytest.approx(loss2, rel=1e-12)

    def test_all_zero_mask_rejected(self):
        model = make_vector_model()
        x, tvec = vector_inputs(model)
        with pytest.raises(ValueError):
            loss_and_gradients(model, x, tvec, x, torch.zeros(3))

    def test_duplicated_batch_same_loss(self):
        model = make_vector_model()
        x, tvec = vector_inputs(model, B=2)
        targets = [torch.randn_like(xi) for xi in x]
        with torch.no_grad():
            base = masked_mse_loss(model(x, tvec), targets, torch.ones(3))
            doubled = masked_mse_loss(
                model([torch.cat([xi, xi]) for xi in x], torch.cat([tvec, tvec])),
                [torch.cat([t, t]) for t in targets], torch.ones(3))
        assert float(base) == pytest.approx(float(doubled), abs=1e-6)


class TestGradientCheck:
    def test_vector_blocks(self):
        model = make_tiny_vector_model()
        assert sum(p.numel() for p in model.parameters()) <= 5000
        g = torch.Generator().manual_seed(0)
        x = [torch.randn(2, 3, generator=g) for _ in range(2)]
        tvec = torch.randint(0, 51, (2, 2), generator=g)
        targets = [torch.randn(2, 3, generator=g) for _ in range(2)]
        assert max_fd_relative_error(model, x, tvec, targets) < 1e-4

    def test_image_blocks(self):
        # covers conv residual blocks, attention, time embedding, up/downsampling
        model = make_tiny_image_model()
        assert sum(p.numel() for p in model.parameters()) <= 5000
        g = torch.Generator().manual_seed(0)
        x = [torch.randn(1, 1, 8, 8, generator=g) for _ in range(2)]
        tvec = torch.randint(0, 51, (1, 2), generator=g)
        targets = [torch.randn(1, 1, 8, 8, generator=g) for _ in range(2)]
        assert max_fd_relative_error(model, x, tvec, targets) < 1e-4

    def test_no_dead_parameters(self):
        model = make_vector_model()
        x, tvec = vector_inputs(model)
        targets = [torch.randn_like(xi) for xi in x]
        _, grads = loss_and_gradients(model, x, tvec, targets, torch.ones(3))
        dead = [n for n, g in grads.items() if float(g.abs().max()) == 0.0]
        assert dead == []


class TestOptimizer:
    def test_zero_gradients_leave_parameters(self):
        model = make_tiny_vector_model()
        state = init_optimizer(model, lr=1e-3)
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        zeros = {n: torch.zeros_like(p) for n, p in model.named_parameters()}
        optimizer_step(model, zeros, state)
        for n, p in model.named_parameters():
            assert torch.equal(p, before[n])

    def test_first_step_is_signed_lr_step(self):
        model = make_tiny_vector_model()
        lr = 1e-2
        state = init_optimizer(model, lr=lr)
        g = torch.Generator().manual_seed(4)
        grads = {n: torch.randn(p.shape, generator=g) for n, p in model.named_parameters()}
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        optimizer_step(model, grads, state)
        for n, p in model.named_parameters():
            delta = p.detach() - before[n]
            big = grads[n].abs() > 1e-3
            assert torch.all(torch.sign(delta[big]) == -torch.sign(grads[n][big]))
            assert float(delta.abs().max()) <= lr * (1 + 1e-6)
        assert state.step == 1

    def test_non_finite_gradients_abort(self):
        model = make_tiny_vector_model()
        state = init_optimizer(model, lr=1e-3)
        grads = {n: torch.zeros_like(p) for n, p in model.named_parameters()}
        next(iter(grads.values())).view(-1)[0] = float("inf")
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        with pytest.raises(FloatingPointError):
            optimizer_step(model, grads, state)
        for n, p in model.named_parameters():
            assert torch.equal(p, before[n])
        assert state.step == 0

    def test_plateau_halves_once_after_patience(self):
        model = make_tiny_vector_model()
        state = init_optimizer(model, lr=1e-3, patience=10, factor=0.5)
        plateau_update(state, 1.0)
        for _ in range(11):
            plateau_update(state, 2.0)
        assert state.lr == pytest.approx(5e-4)
        # counter resets: the next bad epoch does not halve again
        plateau_update(state, 2.0)
        assert state.lr == pytest.approx(5e-4)

    def test_improvement_resets_counter(self):
        model = make_tiny_vector_model()
        state = init_optimizer(model, lr=1e-3, patience=2)
        plateau_update(state, 1.0)
        plateau_update(state, 2.0)
        plateau_update(state, 0.5)  # improvement
        plateau_update(state, 2.0)
        plateau_update(state, 2.0)
        assert state.lr == pytest.approx(1e-3)

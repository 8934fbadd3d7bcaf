import numpy as np
import pytest
import torch

from meshdiff.codec import pad_token, position_tuples
from meshdiff.net import (
    NetConfig,
    NetError,
    TaskFlag,
    apply_multilevel_rope,
    count_parameters,
    init_model,
    load_checkpoint,
    save_checkpoint,
)

from conftest import small_net_config, toy_net_config


def expected_param_count(cfg: NetConfig) -> int:
    d, b, r = cfg.d_model, cfg.codebook, cfg.mlp_ratio
    ln = 2 * d
    mlp = d * (r * d) + r * d + (r * d) * d + d
    enc = 3 * d * d + d * d + 2 * ln + mlp           # self-attn (no bias) + 2 LN + mlp
    cross = d * d + 2 * d * d + d * d                # q, kv, proj (no bias)
    trunk = enc + cross + ln
    up = cross + mlp + 2 * ln
    l0, l1, l2, l3, l4 = cfg.layers_per_level
    total = b * d                                    # token embedding
    total += 2 * (d * d + d)                         # time mlp
    total += 2 * d                                   # flag embedding
    feat = 6 * cfg.cond_freqs
    total += feat * d + d + d * d + d                # condition mlp
    total += (l0 + l1 + l3 + l4) * enc + l2 * trunk + 2 * up
    total += ln                                      # final norm
    total += d * b + b                               # token head
    total += d + 1                                   # classifier head
    return total


def make_inputs(cfg, n_faces=2, seed=0):
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, cfg.resolution, size=9 * n_faces)
    points = rng.random((12, 3))
    return tokens, points


class TestInitModel:
    def test_deterministic(self):
        cfg = small_net_config()
        a = init_model(cfg, 5)
        b = init_model(cfg, 5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_param_count_analytic(self):
        for cfg in (toy_net_config(), small_net_config(), NetConfig()):
            assert count_parameters(init_model(cfg, 0)) == expected_param_count(cfg)

    def test_default_under_5m(self):
        assert count_parameters(init_model(NetConfig(), 0)) < 5_000_000

    def test_invalid_split(self):
        with pytest.raises(NetError):
            NetConfig(rope_dim_split=(16, 8, 4))
        with pytest.raises(NetError):
            NetConfig(rope_dim_split=(15, 9, 8))


class TestRope:
    def setup_method(self):
        self.split = (8, 4, 4)
        self.rng = np.random.default_rng(0)

    def test_zero_tuples_identity(self):
        x = torch.randn(2, 3, 12, 16, dtype=torch.float64)
        tuples = torch.zeros(12, 3, dtype=torch.long)
        out = apply_multilevel_rope(x, tuples, self.split)
        assert torch.allclose(out, x)

    def test_norm_preserved(self):
        x = torch.randn(1, 2, 27, 16, dtype=torch.float64)
        tuples = torch.as_tensor(position_tuples(27))
        out = apply_multilevel_rope(x, tuples, self.split)
        assert torch.allclose(out.norm(dim=-1), x.norm(dim=-1), atol=1e-5)

    def test_scores_depend_only_on_tuple_differences(self):
        s = 27
        q = torch.randn(1, 2, s, 16, dtype=torch.float64)
        k = torch.randn(1, 2, s, 16, dtype=torch.float64)
        tuples = torch.as_tensor(position_tuples(s))
        for shift in ((7, 0, 0), (3, 1, 2)):
            shifted = tuples + torch.tensor(shift)
            base = apply_multilevel_rope(q, tuples, self.split) @ \
                apply_multilevel_rope(k, tuples, self.split).transpose(-2, -1)
            moved = apply_multilevel_rope(q, shifted, self.split) @ \
                apply_multilevel_rope(k, shifted, self.split).transpose(-2, -1)
            assert (base - moved).abs().max().item() < 1e-5

    def test_length_mismatch(self):
        x = torch.randn(1, 1, 9, 16)
        with pytest.raises(NetError):
            apply_multilevel_rope(x, torch.zeros(8, 3, dtype=torch.long), self.split)


class TestForward:
    def setup_method(self):
        self.cfg = small_net_config()
        self.model = init_model(self.cfg, 1)

    def test_shapes(self):
        tokens, points = make_inputs(self.cfg)
        cond = self.model.encode_condition(points)
        out = self.model(tokens, 100, cond, TaskFlag.mask_task)
        assert out.token_logits.shape == (1, 18, self.cfg.codebook)
        assert out.correctness_logits.shape == (1, 18)
        assert torch.isfinite(out.token_logits).all()

    def test_pad_invariance(self):
        tokens, points = make_inputs(self.cfg, n_faces=2)
        cond = self.model.encode_condition(points)
        pad = pad_token(self.cfg.resolution)
        a = np.concatenate([tokens, [pad] * 9])
        b = np.concatenate([tokens, np.arange(9) + 1])  # junk beyond the valid length
        out_a = self.model(a, 50, cond, TaskFlag.uniform_task)
        out_b = self.model(b, 50, cond, TaskFlag.uniform_task, lengths=[18])
        assert torch.allclose(out_a.token_logits[:, :18], out_b.token_logits[:, :18], atol=1e-6)
        assert torch.allclose(
            out_a.correctness_logits[:, :18], out_b.correctness_logits[:, :18], atol=1e-6
        )

    def test_pad_interior_rejected(self):
        tokens, points = make_inputs(self.cfg)
        cond = self.model.encode_condition(points)
        bad = tokens.copy()
        bad[3] = pad_token(self.cfg.resolution)
        with pytest.raises(NetError, match="interior"):
            self.model(bad, 10, cond, TaskFlag.mask_task)

    def test_bad_length(self):
        tokens, points = make_inputs(self.cfg)
        cond = self.model.encode_condition(points)
        with pytest.raises(NetError):
            self.model(tokens[:10], 10, cond, TaskFlag.mask_task)
        with pytest.raises(NetError):
            self.model(np.zeros(9 * (self.cfg.max_faces + 1), dtype=int), 10, cond, TaskFlag.mask_task)

    def test_flags_change_output(self):
        tokens, points = make_inputs(self.cfg)
        cond = self.model.encode_condition(points)
        out_m = self.model(tokens, 100, cond, TaskFlag.mask_task)
        out_u = self.model(tokens, 100, cond, TaskFlag.uniform_task)
        assert not torch.allclose(out_m.token_logits, out_u.token_logits)

    def test_classifier_head_independent_of_token_head(self):
        tokens, points = make_inputs(self.cfg)
        cond = self.model.encode_condition(points)
        before = self.model(tokens, 100, cond, TaskFlag.mask_task).token_logits
        with torch.no_grad():
            self.model.classifier_head.weight.mul_(0.0)
            self.model.classifier_head.bias.fill_(7.0)
        after = self.model(tokens, 100, cond, TaskFlag.mask_task).token_logits
        assert torch.equal(before, after)

    def test_deterministic(self):
        tokens, points = make_inputs(self.cfg)
        cond = self.model.encode_condition(points)
        a = self.model(tokens, 100, cond, TaskFlag.mask_task)
        b = self.model(tokens, 100, cond, TaskFlag.mask_task)
        assert torch.equal(a.token_logits, b.token_logits)

    def test_fuzz_finite(self):
        cfg = toy_net_config()
        model = init_model(cfg, 2)
        rng = np.random.default_rng(7)
        cond = model.encode_condition(rng.random((5, 3)))
        for _ in range(100):
            n = int(rng.integers(1, cfg.max_faces + 1))
            tokens = rng.integers(0, cfg.resolution + 1, size=9 * n)  # may include MASK
            t = int(rng.integers(0, cfg.t_train + 1))
            flag = TaskFlag.mask_task if rng.random() < 0.5 else TaskFlag.uniform_task
            out = model(tokens, t, cond, flag)
            assert torch.isfinite(out.token_logits).all()
            assert torch.isfinite(out.correctness_logits).all()


class TestEncodeCondition:
    def setup_method(self):
        self.cfg = small_net_config()
        self.model = init_model(self.cfg, 3)

    def test_deterministic_and_shape(self):
        pts = np.random.default_rng(0).random((40, 3))
        a = self.model.encode_condition(pts)
        b = self.model.encode_condition(pts)
        assert torch.equal(a, b)
        assert a.shape == (1, self.cfg.cond_points, self.cfg.d_model)

    def test_pointwise_map_permutes(self):
        rng = np.random.default_rng(1)
        pts = rng.random((self.cfg.cond_points, 3))
        perm = rng.permutation(self.cfg.cond_points)
        a = self.model.encode_condition(pts)
        b = self.model.encode_condition(pts[perm])
        assert torch.allclose(a[:, perm], b, atol=1e-6)

    def test_empty_error(self):
        with pytest.raises(NetError):
            self.model.encode_condition(np.zeros((0, 3)))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        cfg = small_net_config()
        model = init_model(cfg, 4)
        path = str(tmp_path / "model.tssr")
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        tokens, points = make_inputs(cfg)
        cond = model.encode_condition(points)
        a = model(tokens, 100, cond, TaskFlag.mask_task)
        b = loaded(tokens, 100, loaded.encode_condition(points), TaskFlag.mask_task)
        assert torch.equal(a.token_logits, b.token_logits)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.tssr"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(NetError):
            load_checkpoint(str(path))

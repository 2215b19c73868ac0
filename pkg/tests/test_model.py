import numpy as np
import pytest

from mstsr import model as M
from mstsr import tensor as T
from mstsr.tensor import TensorF, Tape


def _micro(s=2):
    return M.ModelConfig.micro(sr_factor=s)


@pytest.fixture(scope="module")
def micro_params():
    cfg = _micro()
    return M.init_params(cfg, np.random.default_rng(0), dtype=np.float64), cfg


class TestConfig:
    def test_validation(self):
        with pytest.raises(M.ModelError):
            M.ModelConfig(1, 1, 7, 2, 4, 2, 2)  # embed dim not divisible by heads
        with pytest.raises(M.ModelError):
            M.ModelConfig(1, 1, 8, 2, 4, 1, 2)  # shift != window // 2

    def test_round_trip(self):
        cfg = M.ModelConfig.lw(4)
        assert M.ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestParameterBudget:
    def test_lw_x4_count_within_2pct_of_890k(self):
        n = M.count_params(M.ModelConfig.lw(4))
        assert abs(n - 890_000) / 890_000 < 0.02, n

    def test_lw_x4_exact_regression(self):
        assert M.count_params(M.ModelConfig.lw(4)) == 896_928

    def test_lw_x2_matches_published_878k(self):
        assert M.count_params(M.ModelConfig.lw(2)) == 877_452

    def test_micro_closed_form(self, micro_params):
        params, cfg = micro_params
        assert M.count_params(cfg) == 3_080
        assert sum(p.size for p in params.values()) == 3_080

    def test_init_matches_declared_shapes(self, micro_params):
        params, cfg = micro_params
        shapes = M.param_shapes(cfg)
        assert set(params) == set(shapes)
        for name, t in params.items():
            assert t.shape == shapes[name], name


class TestForwardShapes:
    @pytest.mark.parametrize("h,w", [(8, 8), (7, 5), (12, 20), (4, 4), (11, 13)])
    def test_shape_contract(self, micro_params, h, w):
        params, cfg = micro_params
        lr = np.random.default_rng(h * 100 + w).integers(
            0, 256, (h, w, 3)
        ).astype(np.uint8)
        out = M.forward(params, cfg, lr)
        assert out.shape == (1, 3, cfg.sr_factor * h, cfg.sr_factor * w)

    def test_randomized_sweep(self, micro_params):
        params, cfg = micro_params
        rng = np.random.default_rng(7)
        for _ in range(6):
            h, w = int(rng.integers(3, 17)), int(rng.integers(3, 17))
            lr = rng.integers(0, 256, (h, w, 3)).astype(np.uint8)
            assert M.forward(params, cfg, lr).shape == (1, 3, 2 * h, 2 * w)

    def test_forward_deterministic(self, micro_params):
        params, cfg = micro_params
        lr = np.random.default_rng(3).integers(0, 256, (9, 6, 3)).astype(np.uint8)
        a = M.forward(params, cfg, lr).data
        b = M.forward(params, cfg, lr).data
        assert np.array_equal(a, b)

    def test_upscale_image_u8(self, micro_params):
        params, cfg = micro_params
        lr = np.random.default_rng(4).integers(0, 256, (8, 8, 3)).astype(np.uint8)
        out = M.upscale_image(params, cfg, lr)
        assert out.shape == (16, 16, 3) and out.dtype == np.uint8


class TestAttention:
    def test_rpb_index_bounds(self):
        idx = M._rpb_index(4)
        assert idx.shape == (16, 16)
        assert idx.min() >= 0 and idx.max() < 7 * 7

    def test_rpb_index_diagonal_constant(self):
        idx = M._rpb_index(3)
        assert len(set(idx[np.arange(9), np.arange(9)])) == 1

    def test_mask_blocks_cross_region_attention(self):
        # 8x8 grid, window 4, shift 2: wrapped-around tokens must not attend
        # across their original boundary
        mask = M._attn_mask(8, 8, 4, 2)
        assert mask.shape == (4, 16, 16)
        assert np.all((mask == 0.0) | (mask == -1e9))
        # the top-left window is interior: fully visible
        assert np.all(mask[0] == 0.0)
        # the bottom-right window mixes 4 regions: some pairs must be blocked
        assert np.any(mask[-1] == -1e9)

    def test_mask_symmetric(self):
        mask = M._attn_mask(8, 8, 4, 2)
        assert np.array_equal(mask, mask.transpose(0, 2, 1))

    def test_masked_attention_weight_is_zero(self, micro_params):
        params, cfg = micro_params
        rng = np.random.default_rng(0)
        H = W = 2 * cfg.window_size
        mask = M._attn_mask(H, W, cfg.window_size, cfg.shift_size)
        n = cfg.window_size**2
        x = TensorF(rng.standard_normal((4, n, cfg.embed_dim)), dtype=np.float64)
        # recompute the softmax the same way w_mhsa does and check blocked pairs
        qkv = T.linear(x, params["rstb0.stl0.attn.qkv.weight"],
                       params["rstb0.stl0.attn.qkv.bias"])
        qkv = T.reshape(qkv, (4, n, 3, cfg.num_heads, cfg.embed_dim // cfg.num_heads))
        qkv = T.transpose(qkv, (2, 0, 3, 1, 4))
        q, k = T.index_axis0(qkv, 0), T.index_axis0(qkv, 1)
        attn = T.matmul(q, T.transpose(k, (0, 1, 3, 2)))
        attn = attn + TensorF(mask[:, None].astype(np.float64))
        w = T.softmax_lastdim(attn).data
        blocked = np.broadcast_to(mask[:, None] < 0, w.shape)
        assert np.all(w[blocked] < 1e-12)

    def test_w_mhsa_single_token_hand_case(self):
        # window 1 => one token per window: softmax is 1, so the output is
        # exactly proj(v) + proj_bias with v = x @ Wv^T + bv
        cfg = M.ModelConfig(1, 1, 4, 1, 1, 0, 2)
        rng = np.random.default_rng(5)
        params = M.init_params(cfg, rng, dtype=np.float64)
        x = rng.standard_normal((3, 1, 4))
        out = M.w_mhsa(TensorF(x, dtype=np.float64), params,
                       "rstb0.stl0.attn", cfg).data
        wqkv = params["rstb0.stl0.attn.qkv.weight"].data
        bqkv = params["rstb0.stl0.attn.qkv.bias"].data
        v = x @ wqkv[8:].T + bqkv[8:]
        want = v @ params["rstb0.stl0.attn.proj.weight"].data.T \
            + params["rstb0.stl0.attn.proj.bias"].data
        assert np.allclose(out, want, atol=1e-12)


class TestGradients:
    def test_end_to_end_input_gradient(self, micro_params):
        params, cfg = micro_params
        rng = np.random.default_rng(2)
        x = TensorF(rng.random((1, 3, 6, 6)), requires_grad=True, dtype=np.float64)
        target = rng.random((1, 3, 12, 12))

        def f(v):
            return T.mean(T.square(M.forward(params, cfg, v) - TensorF(
                target, dtype=np.float64)))

        err = T.finite_difference_check(f, x)
        assert err < 1e-4, err

    def test_param_gradients_spot_check(self, micro_params):
        params, cfg = micro_params
        rng = np.random.default_rng(9)
        x = TensorF(rng.random((1, 3, 5, 7)), dtype=np.float64)
        target = rng.random((1, 3, 10, 14))
        for t in params.values():
            t.zero_grad()
        with Tape() as tape:
            loss = T.mean(T.square(M.forward(params, cfg, x)
                                   - TensorF(target, dtype=np.float64)))
        T.backward(tape, loss)
        eps = 1e-5
        for name in ("conv_first.weight", "rstb0.stl0.attn.rpb",
                     "rstb0.stl1.mlp.fc1.weight", "recon.bias", "rstb0.conv.weight"):
            t = params[name]
            assert t.grad is not None, name
            flat = t.data.reshape(-1)
            gflat = t.grad.reshape(-1)
            for idx in rng.choice(flat.size, size=min(3, flat.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + eps
                fp = float(T.mean(T.square(
                    M.forward(params, cfg, x) - TensorF(target, dtype=np.float64)
                )).data)
                flat[idx] = orig - eps
                fm = float(T.mean(T.square(
                    M.forward(params, cfg, x) - TensorF(target, dtype=np.float64)
                )).data)
                flat[idx] = orig
                numeric = (fp - fm) / (2 * eps)
                denom = max(abs(numeric), abs(gflat[idx]), 1e-8)
                assert abs(numeric - gflat[idx]) / denom < 1e-4, name
            t.zero_grad()


class TestCheckpoints:
    def test_round_trip(self, micro_params, tmp_path):
        params, cfg = micro_params
        p = str(tmp_path / "ck.bin")
        M.save_checkpoint(params, cfg, p)
        loaded, cfg2 = M.load_checkpoint(p)
        assert cfg2 == cfg
        for name in params:
            assert np.array_equal(loaded[name].data, params[name].data)

    def test_corrupted_magic(self, micro_params, tmp_path):
        params, cfg = micro_params
        p = str(tmp_path / "ck.bin")
        M.save_checkpoint(params, cfg, p)
        raw = bytearray(open(p, "rb").read())
        raw[0] ^= 0xFF
        open(p, "wb").write(bytes(raw))
        with pytest.raises(M.CheckpointError):
            M.load_checkpoint(p)

    def test_truncated(self, micro_params, tmp_path):
        params, cfg = micro_params
        p = str(tmp_path / "ck.bin")
        M.save_checkpoint(params, cfg, p)
        raw = open(p, "rb").read()
        open(p, "wb").write(raw[: len(raw) // 2])
        with pytest.raises(M.CheckpointError):
            M.load_checkpoint(p)

    def test_transfer_trunk_x2_to_x4(self, tmp_path):
        rng = np.random.default_rng(1)
        cfg2, cfg4 = _micro(2), _micro(4)
        p2 = M.init_params(cfg2, rng)
        out = M.transfer_trunk(p2, cfg4, rng)
        shapes4 = M.param_shapes(cfg4)
        assert set(out) == set(shapes4)
        # trunk copied exactly, reconstruction head re-initialized
        assert np.array_equal(out["conv_first.weight"].data,
                              p2["conv_first.weight"].data)
        assert out["recon.weight"].shape == shapes4["recon.weight"]
        assert out["recon.weight"].shape != p2["recon.weight"].shape

import numpy as np
import pytest
import torch

from pixelact.model import ModelConfig, build_mask
from pixelact.model.backbone import Transformer
from pixelact.model.layout import (
    ROLE_ACTION,
    ROLE_AIN,
    ROLE_IMAGE,
    ROLE_TEXT,
    ROLE_THINK,
    TokenLayout,
)
from pixelact.model.rope import apply_rope, rope_cos_sin

OBS = (ROLE_TEXT, ROLE_IMAGE, ROLE_THINK)


def oracle_allowed(q_ts, q_role, k_ts, k_role):
    """Straight transcription of the attendability rules, one pair at a
    time, independent of the vectorized implementation."""
    if k_ts > q_ts:
        return False
    if k_role == ROLE_AIN:
        return q_role == ROLE_AIN and q_ts == k_ts
    if k_ts < q_ts:
        return True
    # same timestep
    if q_role == ROLE_AIN:
        return k_role in OBS
    if q_role in OBS:
        return k_role in OBS
    if q_role == ROLE_ACTION:
        return k_role in OBS or k_role == ROLE_ACTION
    raise AssertionError("unreachable")


@pytest.mark.parametrize("timesteps", [1, 2, 4])
@pytest.mark.parametrize("n_images", [1, 2])
def test_mask_matches_rule_oracle(timesteps, n_images):
    layout = TokenLayout.from_config(ModelConfig(number_of_image_tokens=n_images))
    mask = build_mask(timesteps, layout)
    n = layout.tokens_per_step
    assert mask.shape == (timesteps * n, timesteps * n)
    for q in range(timesteps * n):
        for k in range(timesteps * n):
            expected = oracle_allowed(
                q // n, layout.roles[q % n], k // n, layout.roles[k % n])
            assert mask[q, k] == expected, (q, k)


def test_mask_specific_entries():
    # positions per step with N_i=1: t=0, o=1, k=2, a_in=3, a1..a8=4..11
    layout = TokenLayout.from_config(ModelConfig(number_of_image_tokens=1))
    mask = build_mask(3, layout)
    n = layout.tokens_per_step
    for i in range(3):
        for j in range(8):
            assert not mask[i * n + 3, i * n + 4 + j]  # a_in vs own gt action
    assert mask[n + 3, 4]  # a_in(1) attends a1(0)
    assert not mask[1, 3]  # o(0) does not attend a_in(0)
    assert not mask[n + 1, 3]  # o(1) does not attend a_in(0)
    assert not mask[0, n]  # nothing attends the future
    assert np.all(np.diag(mask))


def test_mask_global_properties():
    layout = TokenLayout.from_config(ModelConfig())
    n = layout.tokens_per_step
    mask = build_mask(5, layout)
    ts = np.repeat(np.arange(5), n)
    roles = np.array(layout.type_ids(5))
    future = ts[None, :] > ts[:, None]
    assert not mask[future].any()
    ain_cols = roles == ROLE_AIN
    non_ain_rows = roles != ROLE_AIN
    assert not mask[np.ix_(non_ain_rows, ain_cols)].any()


def test_type_ids_layout():
    layout = TokenLayout.from_config(ModelConfig(number_of_image_tokens=2))
    ids = layout.type_ids(2)
    per_step = [ROLE_TEXT, ROLE_IMAGE, ROLE_IMAGE, ROLE_THINK, ROLE_AIN] + \
        [ROLE_ACTION] * 8
    assert list(ids) == per_step * 2
    assert layout.ain_offset == 4


def test_build_mask_rejects_zero_timesteps():
    layout = TokenLayout.from_config(ModelConfig())
    with pytest.raises(ValueError):
        build_mask(0, layout)


def test_rope_shift_leaves_attention_logits_unchanged():
    torch.manual_seed(0)
    head_dim = 16
    q = torch.randn(1, 2, 10, head_dim)
    k = torch.randn(1, 2, 10, head_dim)

    def logits(offset):
        pos = torch.arange(10) + offset
        cos, sin = rope_cos_sin(pos, head_dim)
        qr = apply_rope(q, cos, sin)
        kr = apply_rope(k, cos, sin)
        return qr @ kr.transpose(-2, -1)

    assert torch.allclose(logits(0), logits(17), atol=1e-5)


def _dense_reference_forward(model, x, positions, mask):
    """Independent single-pass reimplementation of the backbone math with
    explicit loops over heads, float64."""
    import math

    x = x.double()
    n_heads = model.blocks[0].attn.n_heads
    hd = model.blocks[0].attn.head_dim

    def rms(v, w):
        return v / torch.sqrt((v ** 2).mean(-1, keepdim=True) + 1e-6) * w.double()

    for block in model.blocks:
        h = rms(x, block.attn_norm.weight)
        attn = block.attn
        q = (h @ attn.q_proj.weight.double().T).view(-1, n_heads, hd)
        k = (h @ attn.k_proj.weight.double().T).view(-1, n_heads, hd)
        v = (h @ attn.v_proj.weight.double().T).view(-1, n_heads, hd)
        if attn.q_norm is not None:
            q = rms(q, attn.q_norm.weight)
            k = rms(k, attn.k_norm.weight)
        cos, sin = rope_cos_sin(positions, hd)
        out = torch.zeros_like(x)
        s = x.shape[0]
        for head in range(n_heads):
            qh = apply_rope(q[:, head], cos, sin)
            kh = apply_rope(k[:, head], cos, sin)
            scores = qh @ kh.T / math.sqrt(hd)
            scores[~mask] = -np.inf
            w = torch.softmax(scores, dim=-1)
            out[:, head * hd : (head + 1) * hd] = w @ v[:, head]
        x = x + out @ attn.o_proj.weight.double().T
        h = rms(x, block.mlp_norm.weight)
        mlp = block.mlp
        h = torch.nn.functional.gelu(h @ mlp.fc1.weight.double().T + mlp.fc1.bias.double())
        x = x + h @ mlp.fc2.weight.double().T + mlp.fc2.bias.double()
    return rms(x, model.final_norm.weight)


def test_backbone_matches_dense_reference():
    torch.manual_seed(1)
    model = Transformer(dim=8, n_layers=2, n_heads=2, n_kv_heads=2)
    layout = TokenLayout.from_config(ModelConfig(hidden_dimension=8, query_heads=2, key_value_heads=2))
    s = 2 * layout.tokens_per_step
    x = torch.randn(1, s, 8)
    positions = torch.arange(s)
    mask = torch.from_numpy(build_mask(2, layout))
    with torch.no_grad():
        got, _ = model(x, positions, mask)
        want = _dense_reference_forward(model, x[0], positions, mask)
    assert torch.allclose(got[0].double(), want, atol=1e-5)


def test_zero_weight_backbone_maps_zero_to_zero():
    model = Transformer(dim=8, n_layers=1, n_heads=2, n_kv_heads=2)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    layout = TokenLayout.from_config(ModelConfig(hidden_dimension=8, query_heads=2, key_value_heads=2))
    s = layout.tokens_per_step
    x = torch.zeros(1, s, 8)
    out, _ = model(x, torch.arange(s), torch.from_numpy(build_mask(1, layout)))
    assert torch.all(out == 0)

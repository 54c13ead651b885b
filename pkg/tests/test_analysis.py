import math
import warnings

import numpy as np
import pytest
import torch

from pixelact.analysis import (
    CausalityEvalConfig,
    _factored_kl,
    causality_score,
    gap_probe,
    gap_probe_sweep,
    keyboard_perplexity,
    lossy_transform,
    select_checkpoint,
)
from pixelact.model import ModelConfig, PolicyModel

SMALL = ModelConfig(number_of_layers=1, hidden_dimension=16, query_heads=2,
                    key_value_heads=2, decoder_layers=1, decoder_heads=2,
                    history_length=20, frame_resolution=16,
                    mouse_bins_x=3, mouse_bins_y=3)


def _sequences(n=4, t=20, res=16, seed=0, game_id="g"):
    rng = np.random.default_rng(seed)
    seqs = []
    for _ in range(n):
        seqs.append({
            "frames": rng.integers(0, 256, (t, res, res, 3), dtype=np.uint8),
            "slots": np.stack(
                [rng.integers(0, v, t) for v in SMALL.slot_vocabs], axis=-1),
            "game_id": game_id,
        })
    return seqs


def test_zero_perturb_probability_gives_exactly_zero():
    torch.manual_seed(0)
    model = PolicyModel(SMALL)
    cfg = CausalityEvalConfig(chunks=4, perturb_prob=0.0, batch_size=4)
    score = causality_score(model, _sequences(), cfg, np.random.default_rng(0))
    assert score == 0.0


def test_image_blind_model_scores_near_zero():
    torch.manual_seed(1)
    model = PolicyModel(SMALL)

    class ConstantEncoder(torch.nn.Module):
        def __init__(self, inner):
            super().__init__()
            self.inner = inner

        def forward(self, frames):
            return self.inner(torch.zeros_like(frames))

    model.encoder = ConstantEncoder(model.encoder)
    cfg = CausalityEvalConfig(chunks=4, perturb_prob=0.8, batch_size=4)
    score = causality_score(model, _sequences(), cfg, np.random.default_rng(1))
    assert score <= 1e-6


def test_responsive_model_scores_positive():
    torch.manual_seed(2)
    model = PolicyModel(SMALL)
    cfg = CausalityEvalConfig(chunks=4, perturb_prob=0.8, batch_size=4)
    score = causality_score(model, _sequences(), cfg, np.random.default_rng(2))
    assert score > 0.0


def test_factored_kl_matches_hand_computation():
    # two 3-way distributions per "slot", one slot, one frame
    p = torch.tensor([[[0.5, 0.3, 0.2]]]).log()
    q = torch.tensor([[[0.2, 0.3, 0.5]]]).log()
    got = float(_factored_kl([p], [q])[0, 0])
    want = 0.5 * math.log(0.5 / 0.2) + 0.3 * math.log(0.3 / 0.3) \
        + 0.2 * math.log(0.2 / 0.5)
    assert abs(got - want) < 1e-6
    assert float(_factored_kl([p], [p]).max()) == 0.0


def test_no_same_game_partner_warns_and_skips():
    torch.manual_seed(3)
    model = PolicyModel(SMALL)
    seqs = _sequences(n=3, game_id="a") + _sequences(n=1, seed=9, game_id="b")
    cfg = CausalityEvalConfig(chunks=4, perturb_prob=0.5, batch_size=4)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        causality_score(model, seqs, cfg, np.random.default_rng(3))
    assert any("no same-game partner" in str(w.message) for w in caught)
    only_b = _sequences(n=2, game_id="x")
    only_b[1]["game_id"] = "y"
    with pytest.raises(ValueError):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            causality_score(model, only_b, cfg, np.random.default_rng(4))


def _prepared(n=2, t=20, res=16, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        out.append({
            "frames": rng.integers(0, 256, (t, res, res, 3), dtype=np.uint8),
            "slots": np.stack(
                [rng.integers(0, v, t) for v in SMALL.slot_vocabs], axis=-1),
            "mask": np.ones(t, dtype=bool),
            "instructions": np.zeros(t, dtype=np.int64),
            "game_id": "g",
        })
    return out


def test_uniform_keyboard_logits_give_vocab_perplexity():
    torch.manual_seed(4)
    model = PolicyModel(SMALL)
    with torch.no_grad():
        for head in model.decoder.heads[:4]:
            head.weight.zero_()
    ppl = keyboard_perplexity(model, _prepared())
    assert abs(ppl - 65.0) < 1e-3


def test_oracle_keyboard_predictor_has_perplexity_one():
    torch.manual_seed(5)
    model = PolicyModel(SMALL)
    prepared = _prepared(n=1, t=8)

    class Oracle:
        cfg = model.cfg

        def slot_logits(self, frames, slots, instructions=None):
            t = frames.shape[1]
            out = []
            for j, v in enumerate(model.cfg.slot_vocabs):
                logits = torch.full((t, v), -1e9)
                logits[torch.arange(t), slots[0, :, j]] = 0.0
                out.append(logits)
            return out

    ppl = keyboard_perplexity(Oracle(), prepared)
    assert abs(ppl - 1.0) < 1e-6


def test_perplexity_skips_masked_frames():
    torch.manual_seed(6)
    model = PolicyModel(SMALL)
    prepared = _prepared(n=1)
    full = keyboard_perplexity(model, prepared)
    prepared[0]["mask"][:10] = False
    partial = keyboard_perplexity(model, prepared)
    assert partial != full
    prepared[0]["mask"][:] = False
    with pytest.raises(ValueError):
        keyboard_perplexity(model, prepared)


def test_gap_probe_identity_transform_is_zero():
    torch.manual_seed(7)
    model = PolicyModel(SMALL)
    rng = np.random.default_rng(7)
    frames = rng.integers(0, 256, (8, 16, 16, 3), dtype=np.uint8)
    slots = np.stack([rng.integers(0, v, 8) for v in SMALL.slot_vocabs], axis=-1)
    assert gap_probe(model, frames, slots, lambda f: f.copy()) == 0.0
    for name, strength in (("additive_noise", 20.0), ("downscale", 4),
                           ("quantize", 2)):
        assert gap_probe(model, frames, slots,
                         lossy_transform(name, strength)) >= 0.0


def test_gap_probe_sweep_rows():
    torch.manual_seed(8)
    model = PolicyModel(SMALL)
    rng = np.random.default_rng(8)
    frames = rng.integers(0, 256, (8, 16, 16, 3), dtype=np.uint8)
    slots = np.stack([rng.integers(0, v, 8) for v in SMALL.slot_vocabs], axis=-1)
    rows = gap_probe_sweep(model, frames, slots, "quantize", [8, 4, 1])
    assert [r[:2] for r in rows] == [("quantize", 8), ("quantize", 4),
                                     ("quantize", 1)]
    assert rows[0][2] == 0.0  # 8-bit quantization is the identity


def test_lossy_transforms_are_deterministic_and_bounded():
    rng = np.random.default_rng(9)
    frames = rng.integers(0, 256, (4, 16, 16, 3), dtype=np.uint8)
    for name, strength in (("additive_noise", 30.0), ("downscale", 2),
                           ("quantize", 3)):
        fn = lossy_transform(name, strength)
        a, b = fn(frames), fn(frames)
        assert np.array_equal(a, b)
        assert a.dtype == np.uint8 and a.shape == frames.shape
    with pytest.raises(ValueError):
        lossy_transform("nope", 1.0)


def test_select_checkpoint_minimum_and_tie_break():
    assert select_checkpoint([(100, 2.0), (200, 1.5), (300, 1.8)]) == (200, 1.5)
    assert select_checkpoint([(100, 1.5), (200, 1.5)]) == (100, 1.5)

    class Entry:
        def __init__(self, step, test_loss):
            self.step, self.test_loss = step, test_loss

    entries = [Entry(1, 3.0), Entry(2, 0.5), Entry(3, 0.5)]
    assert select_checkpoint(entries) is entries[1]
    with pytest.raises(ValueError):
        select_checkpoint([])


def test_select_checkpoint_matches_scan_oracle():
    rng = np.random.default_rng(10)
    for _ in range(20):
        series = [(i, float(rng.uniform(0, 1))) for i in range(10)]
        got = select_checkpoint(series)
        want = min(series, key=lambda e: (e[1], e[0]))
        assert got == want

import numpy as np
import pytest
import torch

from pixelact.actions import fit_quantile_bins
from pixelact.engine import InferenceEngine, RealtimeConfig, benchmark
from pixelact.model import ModelConfig, PolicyModel


def _model(window, layers=2, seed=0):
    torch.manual_seed(seed)
    cfg = ModelConfig(number_of_layers=layers, hidden_dimension=16,
                      query_heads=2, key_value_heads=2, decoder_layers=1,
                      decoder_heads=2, history_length=window,
                      frame_resolution=16, mouse_bins_x=3, mouse_bins_y=3)
    return PolicyModel(cfg)


def _binning(seed=0):
    rng = np.random.default_rng(seed)
    return fit_quantile_bins(rng.normal(0, 96, 500), rng.normal(0, 22, 500),
                             bins_per_side=1)


def _frames(n, res=16, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (n, res, res, 3), dtype=np.uint8)


@pytest.mark.parametrize("window", [4, 8])
def test_streaming_latents_match_batch_forward(window):
    model = _model(window)
    engine = InferenceEngine(model, _binning(),
                             config=RealtimeConfig(temperature=0.0))
    frames = _frames(int(window * 2.5) + 1)
    for f in frames:
        engine.step(f)

    # oracle: for every step, one ordinary batch forward over the visible
    # window, conditioned on the actions the engine decoded earlier
    for t in range(len(frames)):
        s = max(0, t - window + 1)
        w = t - s + 1
        f = torch.from_numpy(frames[s : t + 1])[None]
        slots = torch.zeros(1, w, 8, dtype=torch.long)
        for i in range(w - 1):
            slots[0, i] = torch.tensor(engine.conditioning_slots[s + i])
        with torch.no_grad():
            latents = model(f, slots, position_offset=s)
        delta = float((latents[0, -1] - engine.latents[t]).abs().max())
        assert delta <= 1e-4, (t, delta)


def test_cache_evicts_whole_timesteps():
    window = 4
    engine = InferenceEngine(_model(window), _binning())
    frames = _frames(10)
    for t, f in enumerate(frames):
        engine.step(f)
        assert engine.cached_timesteps == min(t + 1, window)


def test_reset_matches_fresh_engine():
    model = _model(4)
    binning = _binning()
    frames = _frames(9)
    fresh = InferenceEngine(model, binning, config=RealtimeConfig(seed=3))
    fresh_out = [fresh.step(f)[0] for f in frames]

    reused = InferenceEngine(model, binning, config=RealtimeConfig(seed=3))
    for f in _frames(5, seed=99):
        reused.step(f)
    reused.reset()
    reused_out = [reused.step(f)[0] for f in frames]
    assert fresh_out == reused_out
    for a, b in zip(fresh.latents, reused.latents):
        assert torch.equal(a, b)


def test_double_reset_is_idempotent():
    engine = InferenceEngine(_model(4), _binning())
    engine.reset()
    engine.reset()
    frames = _frames(3)
    out1 = [engine.step(f)[0] for f in frames]
    engine.reset()
    out2 = [engine.step(f)[0] for f in frames]
    assert out1 == out2


def test_identical_seeds_are_deterministic():
    model = _model(4)
    binning = _binning()
    frames = _frames(8)
    runs = []
    for _ in range(2):
        e = InferenceEngine(model, binning,
                            config=RealtimeConfig(temperature=1.0, seed=7))
        runs.append([e.step(f) for f in frames])
    for (a1, m1, _), (a2, m2, _) in zip(*runs):
        assert a1 == a2
        assert m1 == m2


def test_one_backbone_and_eight_decoder_calls_per_step():
    model = _model(6)
    engine = InferenceEngine(model, _binning())
    frames = _frames(14)  # crosses the window-full boundary
    for f in frames:
        b0 = model.backbone.call_count
        d0 = model.decoder.call_count
        engine.step(f)
        assert model.backbone.call_count == b0 + 1
        assert model.decoder.call_count == d0 + 8


def test_benchmark_report_shape():
    engine = InferenceEngine(_model(4), _binning())
    report = benchmark(engine, _frames(6), n_steps=110, warmup=10)
    assert report.achieved_fps > 0
    for stage, pcts in report.percentiles.items():
        assert pcts["p50"] <= pcts["p90"] <= pcts["p99"], stage
    lines = report.to_csv().strip().split("\n")
    assert lines[0] == "step,encode_us,backbone_us,decode_us,sample_us"
    assert len(lines) == 101  # header + steady-state rows
    assert all(len(line.split(",")) == 5 for line in lines[1:])
    assert "achieved_fps" in report.summary()


def test_benchmark_rejects_short_runs():
    engine = InferenceEngine(_model(4), _binning())
    with pytest.raises(ValueError):
        benchmark(engine, _frames(4), n_steps=50)


def test_deeper_backbone_costs_more_time():
    binning = _binning()
    frames = _frames(6)
    medians = []
    for layers in (1, 8):
        engine = InferenceEngine(_model(4, layers=layers), binning)
        report = benchmark(engine, frames, n_steps=120, warmup=20)
        medians.append(report.percentiles["backbone_us"]["p50"])
    assert medians[1] > medians[0]


def test_rejects_bad_window():
    with pytest.raises(ValueError):
        InferenceEngine(_model(4), _binning(),
                        config=RealtimeConfig(window=0))


def test_rejects_bad_rate():
    with pytest.raises(ValueError):
        RealtimeConfig(target_hz=0)

"""Release gate: one test per acceptance criterion.

Each test checks a single property of the engine at its stated tolerance
and finishes by printing one ``[acceptance] PASS`` line carrying the
measured quantity (written past pytest's output capture so the lines
appear in ordinary runs; a failed assert makes the criterion's FAILED
line instead).  Expected constants marked "frozen" were captured from
the first verified run of the corresponding configuration and guard
against regressions.
"""

import json
import shutil
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import blob_image, checker_image
from styleforge import color as col
from styleforge import guidance, losses
from styleforge import pipelines as pl
from styleforge.model import load_model
from styleforge.optimize import OptimizerConfig
from styleforge.weights_io import read_weight_file, write_weight_file

STYLE_LAYERS = ("conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1")


_CAPTURE_MANAGER = None


@pytest.fixture(autouse=True)
def _find_capture_manager(request):
    global _CAPTURE_MANAGER
    _CAPTURE_MANAGER = request.config.pluginmanager.getplugin("capturemanager")
    yield


def report(name: str, detail: str) -> None:
    line = f"[acceptance] PASS {name}: {detail}"
    if _CAPTURE_MANAGER is not None:
        with _CAPTURE_MANAGER.global_and_fixture_disabled():
            print(line, flush=True)
    else:
        print(line, flush=True)


def settings(iterations: int, **kwargs) -> pl.TransferSettings:
    return pl.TransferSettings(
        optimizer=OptimizerConfig(max_iterations=iterations), **kwargs
    )


def central_difference_worst(func, x, grad, h):
    """Worst relative error of grad against central differences of func,
    probed at every coordinate of x."""
    worst = 0.0
    for idx in np.ndindex(x.shape):
        xp = x.copy(); xp[idx] += h
        xm = x.copy(); xm[idx] -= h
        fd = (func(xp) - func(xm)) / (2.0 * h)
        denom = max(abs(fd), abs(grad[idx]), 1e-8)
        worst = max(worst, abs(fd - grad[idx]) / denom)
    return worst


def test_gradient_suite_every_loss_and_end_to_end(model):
    started = time.monotonic()
    rng = np.random.default_rng(99)
    shape = (3, 4, 5)
    m = shape[1] * shape[2]
    worst_per_loss = 0.0

    f = rng.standard_normal(shape)
    target = rng.standard_normal(shape)
    _, grad = losses.content_loss(f, target)
    worst_per_loss = max(
        worst_per_loss,
        central_difference_worst(lambda a: losses.content_loss(a, target)[0], f, grad, 1e-6),
    )

    gram_target = losses.gram_matrix(rng.standard_normal(shape))
    _, grad = losses.style_layer_loss(f, gram_target)
    worst_per_loss = max(
        worst_per_loss,
        central_difference_worst(
            lambda a: losses.style_layer_loss(a, gram_target)[0], f, grad, 1e-6
        ),
    )

    def normalised(channel):
        return channel / np.sqrt(np.sum(channel**2))

    channels = {
        "a": normalised(rng.uniform(0.1, 1.0, shape[1:])),
        "b": normalised(rng.uniform(0.1, 1.0, shape[1:])),
    }
    guided_targets = {
        region: losses.guided_gram(rng.standard_normal(shape), channel)
        for region, channel in channels.items()
    }
    weights = {"a": 1.5, "b": 0.5}
    _, grad = losses.guided_style_layer_loss(f, guided_targets, channels, weights)
    worst_per_loss = max(
        worst_per_loss,
        central_difference_worst(
            lambda a: losses.guided_style_layer_loss(a, guided_targets, channels, weights)[0],
            f,
            grad,
            1e-6,
        ),
    )

    raw_channels = {"a": rng.uniform(0.0, 1.0, shape[1:]), "b": rng.uniform(0.0, 1.0, shape[1:])}
    stacked_target = losses.stacked_gram(rng.standard_normal(shape), raw_channels)
    _, grad = losses.stacked_gram_loss(f, stacked_target, raw_channels)
    worst_per_loss = max(
        worst_per_loss,
        central_difference_worst(
            lambda a: losses.stacked_gram_loss(a, stacked_target, raw_channels)[0], f, grad, 1e-6
        ),
    )
    assert worst_per_loss < 1e-4

    # End to end: the full network pass composed with the loss program,
    # probed in float64 at a sample of pixel coordinates.
    content = checker_image(64, 64)
    style = blob_image(64, 64, seed=77)
    program = pl.build_transfer_program(model, content, style, settings(0))
    objective = pl.StyleObjective(model, program, dtype=np.float64)
    x0 = model.preprocess(content) + 0.5 * rng.standard_normal((3, 64, 64))
    _, _, grad = objective.value_and_grad(x0)

    flat = x0.reshape(-1)
    grad_flat = grad.reshape(-1)
    coords = rng.choice(flat.size, size=12, replace=False)
    # Near the float64 optimum for an objective of magnitude ~1e8, and small
    # enough that the probe interval does not straddle a rectifier state flip
    # (the objective is only piecewise smooth; a larger step can land the
    # central difference across a kink).
    h = 1e-4
    worst_end_to_end = 0.0
    for c in coords:
        xp = flat.copy(); xp[c] += h
        xm = flat.copy(); xm[c] -= h
        fd = (objective.value(xp.reshape(x0.shape))[0] - objective.value(xm.reshape(x0.shape))[0]) / (2 * h)
        denom = max(abs(fd), abs(grad_flat[c]), 1e-8)
        worst_end_to_end = max(worst_end_to_end, abs(fd - grad_flat[c]) / denom)
    assert worst_end_to_end < 1e-3

    elapsed = time.monotonic() - started
    assert elapsed < 120.0
    report(
        "gradient suite",
        f"per-loss rel err {worst_per_loss:.2e} < 1e-4, "
        f"end-to-end rel err {worst_end_to_end:.2e} < 1e-3, {elapsed:.1f}s < 120s",
    )


def test_statistics_match_loop_oracles():
    rng = np.random.default_rng(7)
    worst_plain = 0.0
    worst_guided = 0.0
    for _ in range(200):
        c = int(rng.integers(1, 6))
        h = int(rng.integers(1, 8))
        w = int(rng.integers(1, 8))
        f = rng.standard_normal((c, h, w))
        m = h * w

        oracle = np.zeros((c, c))
        for i in range(c):
            for j in range(c):
                acc = 0.0
                for y in range(h):
                    for x in range(w):
                        acc += f[i, y, x] * f[j, y, x]
                oracle[i, j] = acc / m
        worst_plain = max(worst_plain, float(np.abs(losses.gram_matrix(f) - oracle).max()))

        t = rng.uniform(0.1, 1.0, (h, w))
        t = t / np.sqrt(np.sum(t**2))
        guided_oracle = np.zeros((c, c))
        for i in range(c):
            for j in range(c):
                acc = 0.0
                for y in range(h):
                    for x in range(w):
                        acc += (t[y, x] * f[i, y, x]) * (t[y, x] * f[j, y, x])
                guided_oracle[i, j] = acc
        worst_guided = max(
            worst_guided, float(np.abs(losses.guided_gram(f, t) - guided_oracle).max())
        )
    assert worst_plain < 1e-6
    assert worst_guided < 1e-6

    # A uniform channel of value 1/sqrt(M) must reduce the guided
    # statistic to the plain one exactly.
    worst_reduction = 0.0
    for _ in range(20):
        f = rng.standard_normal((4, 6, 5))
        uniform = np.full((6, 5), 1.0 / np.sqrt(30.0))
        worst_reduction = max(
            worst_reduction,
            float(np.abs(losses.guided_gram(f, uniform) - losses.gram_matrix(f)).max()),
        )
    assert worst_reduction < 1e-6
    report(
        "statistic oracles",
        f"200 cases: plain {worst_plain:.2e}, guided {worst_guided:.2e}, "
        f"uniform reduction {worst_reduction:.2e}, all < 1e-6",
    )


def test_augmented_statistic_matches_stack_then_gram_oracle():
    rng = np.random.default_rng(21)
    worst = 0.0
    worst_block = 0.0
    for _ in range(50):
        c = int(rng.integers(1, 6))
        h = int(rng.integers(2, 7))
        w = int(rng.integers(2, 7))
        n_regions = int(rng.integers(1, 4))
        f = rng.standard_normal((c, h, w))
        m = h * w
        raw = {f"r{k}": rng.uniform(0.0, 1.0, (h, w)) for k in range(n_regions)}

        stacked = np.concatenate(
            [f.reshape(c, m)] + [raw[r].reshape(1, m) for r in sorted(raw)], axis=0
        )
        rows = stacked.shape[0]
        oracle = np.zeros((rows, rows))
        for i in range(rows):
            for j in range(rows):
                acc = 0.0
                for p in range(m):
                    acc += stacked[i, p] * stacked[j, p]
                oracle[i, j] = acc / m

        mine = losses.stacked_gram(f, raw)
        worst = max(worst, float(np.abs(mine - oracle).max()))
        worst_block = max(worst_block, float(np.abs(mine[:c, :c] - losses.gram_matrix(f)).max()))
    assert worst < 1e-6
    assert worst_block < 1e-6
    report(
        "augmented statistic",
        f"50 cases vs stack-then-gram oracle: {worst:.2e} < 1e-6 "
        f"(top block vs plain statistic {worst_block:.2e})",
    )


def test_color_moment_matching():
    rng = np.random.default_rng(11)
    worst_mean = 0.0
    worst_cov = 0.0
    for _ in range(50):
        content = rng.uniform(0.0, 1.0, (3, 16, 16))
        style = rng.uniform(0.0, 1.0, (3, 16, 16)) * rng.uniform(0.5, 1.5, (3, 1, 1))
        for method in ("symmetric", "cholesky"):
            transform = col.fit_color_transform(style, content, method=method)
            matched = col.apply_color_transform(style, transform)
            mc = content.reshape(3, -1)
            mm = matched.reshape(3, -1)
            worst_mean = max(worst_mean, float(np.abs(mm.mean(axis=1) - mc.mean(axis=1)).max()))
            worst_cov = max(worst_cov, float(np.abs(np.cov(mm) - np.cov(mc)).max()))
    assert worst_mean < 1e-4
    assert worst_cov < 1e-4

    worst_lum = 0.0
    for _ in range(50):
        style_lum = rng.uniform(0.0, 1.0, (12, 14))
        content_lum = rng.uniform(0.2, 0.8, (12, 14))
        out = col.match_luminance_moments(style_lum, content_lum)
        worst_lum = max(
            worst_lum,
            abs(float(out.mean()) - float(content_lum.mean())),
            abs(float(out.std()) - float(content_lum.std())),
        )
    assert worst_lum < 1e-5
    report(
        "colour moments",
        f"50 pairs x 2 methods: mean gap {worst_mean:.2e}, covariance gap "
        f"{worst_cov:.2e} < 1e-4; luminance moment gap {worst_lum:.2e} < 1e-5",
    )


def test_chroma_preserved_through_luminance_pipeline(model, content_96, style_96):
    result = pl.transfer_luminance_preserving(
        model, content_96, [pl.StyleInput(image=style_96)], settings(3)
    )
    chroma_out = col.rgb_to_yiq(np.asarray(result.image))[1:]
    chroma_content = col.rgb_to_yiq(content_96)[1:]
    gap = float(np.abs(chroma_out - chroma_content).max())
    # The recombination carries the content's chroma planes through
    # unchanged; measuring after the rebuild costs one rounding step, so
    # the observable gap sits at double-precision rounding, far inside
    # the stated 1e-6.  Frozen bound: observed 2.2e-16.
    assert gap < 1e-6
    assert gap < 1e-12
    report("chroma preservation", f"max chroma gap {gap:.2e} < 1e-6 (and < 1e-12)")


def test_guidance_band_widths_normalisation_and_nesting():
    size = (512, 512)
    left = np.zeros(size)
    left[:, : size[1] // 2] = 1.0
    masks = {"left": left, "right": 1.0 - left}
    simple = guidance.build_pyramid(
        masks, size, STYLE_LAYERS, mode="simple", global_channel=False, normalise=False
    )
    eroded = guidance.build_pyramid(
        masks, size, STYLE_LAYERS, mode="eroded", global_channel=False, normalise=False
    )

    expected_half_widths = {
        "conv1_1": 1,
        "conv2_1": 3,
        "conv3_1": 3,
        "conv4_1": 5,
        "conv5_1": 5,
    }
    measured = {}
    for layer in STYLE_LAYERS:
        simple_vals = simple.channel(layer, "left").values
        eroded_vals = eroded.channel(layer, "left").values
        mid = simple_vals.shape[0] // 2
        simple_edge = int(np.flatnonzero(simple_vals[mid] > 0).max())
        eroded_edge = int(np.flatnonzero(eroded_vals[mid] > 0).max())
        measured[layer] = simple_edge - eroded_edge
        assert measured[layer] == expected_half_widths[layer]
        assert measured[layer] == guidance.erosion_half_width(layer)
        for region in masks:
            s_support = simple.channel(layer, region).values > 0
            e_support = eroded.channel(layer, region).values > 0
            assert np.all(s_support | ~e_support), f"{layer}/{region}: eroded outside simple"

    normalised = guidance.build_pyramid(
        masks, size, STYLE_LAYERS, mode="simple", global_channel=True, normalise=True
    )
    worst_norm = 0.0
    for layer in STYLE_LAYERS:
        for region in ("left", "right", guidance.GLOBAL_REGION):
            total = float(np.sum(normalised.channel(layer, region).values ** 2))
            worst_norm = max(worst_norm, abs(total - 1.0))
    assert worst_norm < 1e-6
    report(
        "guidance channels",
        f"band widths {[measured[l] for l in STYLE_LAYERS]} match analytic half-widths, "
        f"unit-power gap {worst_norm:.2e} < 1e-6, eroded support nested in simple",
    )


def test_pipeline_degenerations_reproduce_plain_transfer(model, content_96, style_96):
    run_settings = settings(8, init="noise", seed=3)
    styles = [pl.StyleInput(image=style_96)]
    base = pl.transfer(model, content_96, styles, run_settings)
    base_track = [r.total_loss for r in base.report.iterations]

    spatial = pl.transfer_spatial(model, content_96, styles, {}, run_settings)
    color_result, _ = pl.transfer_color_matched(
        model, content_96, styles, run_settings, transform=col.ColorTransform.identity()
    )
    highres = pl.transfer_highres(
        model,
        content_96,
        styles,
        run_settings,
        pl.HighResConfig(budget_pixels=96 * 96, refinement_iterations=0),
    )

    for name, result in [
        ("one-global-region spatial", spatial),
        ("identity colour match", color_result),
        ("single-stage coarse-to-fine", highres),
    ]:
        assert np.array_equal(np.asarray(result.image), np.asarray(base.image)), name
        track = [r.total_loss for r in result.report.iterations]
        assert track == base_track, name
    assert len(highres.stages) == 1
    report(
        "pipeline degenerations",
        "spatial/colour/coarse-to-fine special cases reproduce plain transfer bit-identically",
    )


def test_highres_constants_from_a_full_size_run(model):
    content = blob_image(1000, 1000, seed=5)
    style = blob_image(1000, 1000, seed=9)
    config = pl.HighResConfig(budget_pixels=500 * 500)
    result = pl.transfer_highres(
        model, content, [pl.StyleInput(image=style)], settings(5), config
    )
    assert result.reduction_factor == 2
    assert [stage.reduction_factor for stage in result.stages] == [2, 1]
    assert result.stages[0].size == (500, 500)
    assert result.stages[1].size == (1000, 1000)
    scheduled = [stage.iterations for stage in result.stages]
    assert scheduled[1] == scheduled[0] / 2.5
    executed = [len(stage.report.iterations) - 1 for stage in result.stages]
    assert executed == scheduled
    assert result.stages[1].report.settings["reduction_factor"] == 1
    assert result.stages[0].report.settings["reduction_factor"] == 2
    report(
        "coarse-to-fine constants",
        f"1000x1000 input, 250000-pixel budget: reduction factor 2, "
        f"stage iterations {scheduled[0]} -> {scheduled[1]} (ratio 1/2.5), "
        f"asserted from the run reports",
    )


def test_descent_determinism_and_loss_reduction(model, content_96, style_96):
    styles = [pl.StyleInput(image=style_96)]
    result = pl.transfer(model, content_96, styles, settings(200))
    track = [r.total_loss for r in result.report.iterations]
    assert all(b <= a for a, b in zip(track, track[1:])), "a step increased the loss"
    ratio = track[-1] / track[0]
    assert ratio < 0.1

    seeded = settings(8, init="noise", seed=5)
    first = pl.transfer(model, content_96, styles, seeded)
    second = pl.transfer(model, content_96, styles, seeded)
    assert np.array_equal(np.asarray(first.image), np.asarray(second.image))
    assert [r.total_loss for r in first.report.iterations] == [
        r.total_loss for r in second.report.iterations
    ]
    report(
        "descent and determinism",
        f"200 steps monotone, final/initial {ratio:.4f} < 0.1, "
        f"seeded runs bit-identical",
    )


# -- exported weights --------------------------------------------------


EXPORTER_DIR = Path(__file__).resolve().parent.parent / "exporter"


def _run_exporter(args, cwd):
    proc = subprocess.run(
        ["node", str(EXPORTER_DIR / "dist" / "cli.js"), *args],
        cwd=cwd,
        capture_output=True,
        text=True,
        timeout=300,
    )
    if proc.returncode != 0:
        raise RuntimeError(
            f"exporter {args[0]} failed ({proc.returncode}):\n{proc.stderr[-2000:]}"
        )
    return proc


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    """Generate a checkpoint and export it; skip when the tool isn't built."""
    if shutil.which("node") is None:
        pytest.skip("node is not installed")
    if not (EXPORTER_DIR / "dist" / "cli.js").exists():
        pytest.skip("exporter not built (cd exporter && npm install && npm run build)")
    base = tmp_path_factory.mktemp("export")
    _run_exporter(["generate", "--out", str(base / "checkpoint"), "--seed", "4"], base)
    _run_exporter(
        [
            "export",
            "--checkpoint", str(base / "checkpoint"),
            "--weights", str(base / "vgg19.sfw1"),
            "--fixtures", str(base / "fixtures"),
        ],
        base,
    )
    return base


def test_exported_file_round_trips_byte_identically(exported, tmp_path):
    original = (exported / "vgg19.sfw1").read_bytes()
    loaded = read_weight_file(exported / "vgg19.sfw1")
    rewritten_path = tmp_path / "again.sfw1"
    write_weight_file(rewritten_path, loaded)
    assert rewritten_path.read_bytes() == original
    report(
        "export round trip",
        f"export -> load -> re-serialise reproduces all {len(original)} bytes",
    )


def test_engine_forward_matches_exporter_activations(exported):
    index = json.loads((exported / "fixtures" / "index.json").read_text())
    net = load_model(exported / "vgg19.sfw1", pooling=index["pooling"])
    worst = 0.0
    for image in index["images"]:
        content = np.fromfile(
            exported / "fixtures" / image["input"], dtype="<f4"
        ).reshape(image["inputShape"])
        acts = net.forward(net.preprocess(content), index["layers"])
        for layer in index["layers"]:
            entry = image["activations"][layer]
            expected = np.fromfile(
                exported / "fixtures" / entry["file"], dtype="<f4"
            ).reshape(entry["shape"])
            assert acts[layer].shape == expected.shape
            rel = np.max(np.abs(acts[layer] - expected)) / np.max(np.abs(expected))
            worst = max(worst, float(rel))
    assert worst < 1e-4
    report(
        "cross-framework parity",
        f"3 images x {len(index['layers'])} layers: worst relative gap "
        f"{worst:.2e} < 1e-4",
    )

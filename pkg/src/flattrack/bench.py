"""Latency harness for the capture -> reconstruct -> regress pipeline.

Reports per-stage wall-clock milliseconds (median and p95 over warm
frames) plus an fps equivalent of the processing budget. Frame synthesis
(render + simulate) is prep work and is never counted in the budget.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError
from .eyesim import render_eye
from .geometry import make_grid, screen_to_gaze
from .optics import Psf, simulate_measurement
from .reconstruct import wiener_deconvolve
from .regressor import RegressorModel, downsample_image, forward
from .seeds import mix_seed

TIMED_STAGES = ("reconstruct", "downsample", "regress")


@dataclass
class BenchResult:
    stages: dict[str, dict[str, float]]  # stage -> median_ms/p95_ms/mean_ms
    total_median_ms: float
    total_p95_ms: float
    fps: float
    frames: int

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["stage", "median_ms", "p95_ms", "mean_ms"])
            for name in TIMED_STAGES:
                st = self.stages[name]
                w.writerow([name, repr(st["median_ms"]), repr(st["p95_ms"]),
                            repr(st["mean_ms"])])
            w.writerow(["total", repr(self.total_median_ms),
                        repr(self.total_p95_ms), ""])
            w.writerow(["fps", repr(self.fps), "", ""])


def _stats(ms: np.ndarray) -> dict[str, float]:
    return {
        "median_ms": float(np.median(ms)),
        "p95_ms": float(np.percentile(ms, 95)),
        "mean_ms": float(ms.mean()),
    }


def run_pipeline_bench(model: RegressorModel, psf: Psf, config: ExperimentConfig,
                       frames: int | None = None, warmup: int | None = None) -> BenchResult:
    """Time reconstruct/downsample/regress per frame over >= ``frames`` warm frames.

    Each frame is a freshly simulated measurement of a rendered eye (both
    excluded from the budget). fps = 1000 / median total ms.
    """
    frames = config["bench.frames"] if frames is None else frames
    warmup = config["bench.warmup"] if warmup is None else warmup
    if frames < 1:
        raise ConfigError("bench.frames must be >= 1")
    screen = config.screen()
    grid = config.grid()
    params = config.render_params()
    noise = config.noise_model()
    seed = config["seed"]
    wcfg = config.wiener_config()
    pts = make_grid(grid, screen.monitor)
    gazes = [screen_to_gaze(p, screen) for p in pts]

    times = {name: np.empty(frames) for name in TIMED_STAGES}
    totals = np.empty(frames)
    for k in range(-warmup, frames):
        g = gazes[(k + warmup) % len(gazes)]
        scene = render_eye(g, params, mix_seed(seed, 0xBE7C, 0),
                           mix_seed(seed, 0xBE7C, 1, k + warmup))
        y = simulate_measurement(scene, psf, noise, mix_seed(seed, 0xBE7C, 2, k + warmup))

        t0 = time.perf_counter()
        recon = wiener_deconvolve(y, psf, wcfg)
        t1 = time.perf_counter()
        small = downsample_image(recon)
        t2 = time.perf_counter()
        forward(model, small)
        t3 = time.perf_counter()
        if k >= 0:
            times["reconstruct"][k] = (t1 - t0) * 1e3
            times["downsample"][k] = (t2 - t1) * 1e3
            times["regress"][k] = (t3 - t2) * 1e3
            totals[k] = (t3 - t0) * 1e3
    total_median = float(np.median(totals))
    return BenchResult(
        stages={name: _stats(ms) for name, ms in times.items()},
        total_median_ms=total_median,
        total_p95_ms=float(np.percentile(totals, 95)),
        fps=1000.0 / total_median,
        frames=frames,
    )

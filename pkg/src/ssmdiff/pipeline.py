"""Training and imputation runs: the glue between data, model and diffusion.

A run is described by a :class:`RunConfig` (JSON-serializable).  Training
fits the scaler on the train split, regenerates scenario masks freshly for
every batch, steps Adam on the diffusion objective, and emits a checkpoint,
a loss-trace CSV and the exact config used.  Imputation draws S reverse
samples per test series (one fixed mask per series per seed), destandardizes,
and emits a draws file, metric reports for both the per-draw and
mean-imputation conventions, and a quantile CSV for external plotting.
"""

from __future__ import annotations

import dataclasses
import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import masking, metrics
from .data import Dataset, Scaler, channel_split, save_array
from .diffusion import (
    ConditioningBundle,
    make_schedule,
    reverse_sample_batch,
    summarize_samples,
    training_loss,
    training_step,
)
from .errors import ConfigError, NumericError
from .model import Denoiser, ModelConfig, load_checkpoint, save_checkpoint
from .optim import Adam
from .rng import Rng
from .tensor import no_grad

DEFAULT_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass
class DiffusionConfig:
    steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    mode: str = "D1"
    parametrization: str = "eps"


@dataclass
class TrainingConfig:
    iterations: int = 2000
    batch_size: int = 16
    learning_rate: float = 2e-4
    val_interval: int = 100
    val_batch: int = 8


@dataclass
class SamplingConfig:
    n_draws: int = 8
    quantiles: tuple = DEFAULT_QUANTILES
    max_batch: int = 16  # chains per chunk; larger batches thrash the cache


@dataclass
class RunConfig:
    """Everything a train or impute run needs besides the data and the seed."""

    scenario: str = "RM"
    ratio: float | None = 0.2
    horizon: int | None = None
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    model: dict = field(default_factory=dict)  # overrides onto the desk defaults
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    channel_split_width: int | None = None
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        try:
            for key, sub in (("diffusion", DiffusionConfig),
                             ("training", TrainingConfig),
                             ("sampling", SamplingConfig)):
                if key in raw and isinstance(raw[key], dict):
                    raw[key] = sub(**raw[key])
            cfg = cls(**raw)
        except TypeError as err:
            raise ConfigError(f"bad run config: {err}") from err
        if isinstance(cfg.sampling.quantiles, list):
            cfg.sampling.quantiles = tuple(cfg.sampling.quantiles)
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err


def _model_config(cfg: RunConfig, in_channels: int, length: int) -> ModelConfig:
    base = ModelConfig.desk(in_channels, length)
    if cfg.model:
        try:
            base = dataclasses.replace(base, **cfg.model)
        except TypeError as err:
            raise ConfigError(f"bad model overrides {cfg.model}: {err}") from err
    return dataclasses.replace(base, in_channels=in_channels, length=length)


def _scenario_masks(cfg: RunConfig, n: int, channels: int, length: int,
                    rng: Rng) -> np.ndarray:
    masks = np.empty((n, channels, length))
    for i in range(n):
        masks[i] = masking.scenario_mask(
            cfg.scenario, length, channels, rng, ratio=cfg.ratio, horizon=cfg.horizon
        )
    return masks


def _split_for_model(values: np.ndarray, m_mvi: np.ndarray, width: int | None):
    """Channel-split plus zero-padding of the narrow tail group.

    Padded channels carry m_mvi = 0 so they contribute neither loss nor
    conditioning.  Returns (list of (values, m_mvi) groups, group bounds,
    model channel count).
    """
    channels = values.shape[1]
    if width is None or width >= channels:
        return [(values, m_mvi)], [(0, channels)], channels
    parts, groups = channel_split(values, width)
    mvi_parts, _ = channel_split(m_mvi, width)
    out = []
    for vals, mvi in zip(parts, mvi_parts):
        short = width - vals.shape[1]
        if short > 0:
            pad = ((0, 0), (0, short), (0, 0))
            vals = np.pad(vals, pad)
            mvi = np.pad(mvi, pad)
        out.append((vals, mvi))
    return out, groups, width


def _write_trace(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,train_loss,val_loss,wall_time_s\n")
        for it, train, val, wall in rows:
            val_text = repr(val) if val is not None else ""
            fh.write(f"{it},{train!r},{val_text},{wall:.3f}\n")


def train_model(dataset: Dataset, cfg: RunConfig, out_dir) -> dict:
    """Train per the config; returns paths of checkpoint, trace and config."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_values, train_mvi = dataset.split("train")
    val_values, val_mvi = dataset.split("val")
    scaler = Scaler.fit(train_values)
    schedule = make_schedule(cfg.diffusion.steps, cfg.diffusion.beta_start,
                             cfg.diffusion.beta_end)

    groups, _, model_channels = _split_for_model(scaler.apply(train_values),
                                                 train_mvi, cfg.channel_split_width)
    model_cfg = _model_config(cfg, model_channels, dataset.length)

    root = Rng(cfg.seed)
    rng_init = root.split()
    rng_train = root.split()
    rng_val = root.split()

    model = Denoiser(model_cfg, rng_init)
    params = [p for _, p in model.parameters()]
    optimizer = Adam(params, learning_rate=cfg.training.learning_rate)

    # Fixed validation pack: same series, masks, steps and noise for every
    # model trained from this seed, so validation losses are comparable.
    val_pack = None
    if len(val_values) > 0 and cfg.training.val_interval > 0:
        n_val = min(cfg.training.val_batch, len(val_values))
        val_groups, _, _ = _split_for_model(scaler.apply(val_values[:n_val]),
                                            val_mvi[:n_val], cfg.channel_split_width)
        vx = np.concatenate([g[0] for g in val_groups])
        vm = np.concatenate([g[1] for g in val_groups])
        v_imp = _scenario_masks(cfg, vx.shape[0], vx.shape[1], vx.shape[2], rng_val)
        v_t = rng_val.integers(schedule.t_steps, (vx.shape[0],))
        v_eps = rng_val.normal(vx.shape)
        val_pack = (vx, v_imp, vm, v_t, v_eps)

    n_groups = len(groups)
    trace = []
    last_loss = None
    start = time.perf_counter()
    for iteration in range(1, cfg.training.iterations + 1):
        g_vals, g_mvi = groups[(iteration - 1) % n_groups]
        idx = rng_train.integers(g_vals.shape[0], (cfg.training.batch_size,))
        xb = g_vals[idx]
        mvi = g_mvi[idx]
        m_imp = _scenario_masks(cfg, xb.shape[0], xb.shape[1], xb.shape[2], rng_train)
        model.zero_grad()
        loss = training_step(model, xb, m_imp, mvi, schedule, cfg.diffusion.mode,
                             rng_train, cfg.diffusion.parametrization)
        if not np.isfinite(loss):
            raise NumericError(
                f"training diverged at iteration {iteration}: loss={loss}, "
                f"lr={cfg.training.learning_rate}, last finite loss={last_loss}"
            )
        optimizer.step()
        last_loss = loss

        val_loss = None
        if val_pack is not None and (iteration % cfg.training.val_interval == 0
                                     or iteration == cfg.training.iterations):
            val_loss = _validation_loss(model, val_pack, schedule, cfg)
        trace.append((iteration, loss, val_loss, time.perf_counter() - start))

    ckpt_path = out_dir / "model.ckpt"
    trace_path = out_dir / "loss_trace.csv"
    config_path = out_dir / "run_config.json"
    extra = {
        "scaler_mean": scaler.mean.tolist(),
        "scaler_std": scaler.std.tolist(),
        "run_config": asdict(cfg),
        "data_channels": dataset.channels,
    }
    save_checkpoint(ckpt_path, model, extra)
    _write_trace(trace_path, trace)
    config_path.write_text(cfg.to_json() + "\n", encoding="utf-8")
    return {
        "checkpoint": ckpt_path,
        "trace": trace_path,
        "config": config_path,
        "final_loss": last_loss,
        "final_val_loss": next(
            (row[2] for row in reversed(trace) if row[2] is not None), None
        ),
    }


def _validation_loss(model: Denoiser, val_pack, schedule, cfg: RunConfig) -> float:
    vx, v_imp, vm, v_t, v_eps = val_pack
    with no_grad():
        loss = training_loss(model, vx, v_imp, vm, schedule, cfg.diffusion.mode,
                             v_t, v_eps, cfg.diffusion.parametrization)
    return float(loss.data)


def impute_run(checkpoint_path, dataset: Dataset, seed: int, out_dir,
               n_draws: int | None = None, scenario: str | None = None,
               ratio: float | None = None, horizon: int | None = None,
               split: str = "test") -> dict:
    """Probabilistic imputation over a dataset split with a trained model."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, extra = load_checkpoint(checkpoint_path)
    if "run_config" not in extra:
        raise ConfigError(f"{checkpoint_path} lacks run metadata")
    cfg = RunConfig.from_dict(extra["run_config"])
    if scenario is not None:
        cfg.scenario = scenario
    if ratio is not None:
        cfg.ratio = ratio
    if horizon is not None:
        cfg.horizon = horizon
    if n_draws is None:
        n_draws = cfg.sampling.n_draws
    scaler = Scaler(mean=np.asarray(extra["scaler_mean"]),
                    std=np.asarray(extra["scaler_std"]))
    schedule = make_schedule(cfg.diffusion.steps, cfg.diffusion.beta_start,
                             cfg.diffusion.beta_end)

    values, m_mvi = dataset.split(split)
    if dataset.channels != len(scaler.mean):
        raise ConfigError(
            f"checkpoint was trained on {len(scaler.mean)} channels, "
            f"data has {dataset.channels}"
        )

    root = Rng(seed)
    rng_masks = root.split()
    rng_draws = root.split()

    n = values.shape[0]
    k, length = dataset.channels, dataset.length
    m_imp = _scenario_masks(cfg, n, k, length, rng_masks)

    x_std = scaler.apply(values)
    groups, bounds, model_channels = _split_for_model(x_std, m_mvi,
                                                      cfg.channel_split_width)
    if model.cfg.in_channels != model_channels:
        raise ConfigError(
            f"model expects {model.cfg.in_channels} channels, split width gives "
            f"{model_channels}"
        )
    draws_std = np.empty((n, n_draws, k, length))
    for g, (lo, hi) in enumerate(bounds):
        gx_std, gm = groups[g]
        g_imp = m_imp[:, lo:hi, :]
        short = gx_std.shape[1] - (hi - lo)
        if short > 0:  # padded tail group: padded channels fully conditioned
            g_imp = np.pad(g_imp, ((0, 0), (0, short), (0, 0)), constant_values=1.0)
        out = _draw_batched(model, gx_std, g_imp, gm, schedule, cfg, rng_draws,
                            n_draws)
        draws_std[:, :, lo:hi, :] = out[:, :, : hi - lo, :]

    draws = scaler.inverse(draws_std.reshape(-1, k, length)).reshape(n, n_draws, k, length)
    combined = m_imp * m_mvi
    if cfg.diffusion.mode == "D1":
        # Hard constraint carried through destandardization: conditioned
        # entries are the ground truth, bit for bit.
        draws = np.where(combined[:, None] > 0.5, values[:, None], draws)

    m_eval = metrics.eval_mask(m_imp, m_mvi)
    mean_imputation = draws.mean(axis=1)
    per_draw_reports = [
        metrics.evaluate(values, draws[:, s], m_eval) for s in range(n_draws)
    ]
    report_per_draw = _average_reports(per_draw_reports)
    report_mean = metrics.evaluate(values, mean_imputation, m_eval)

    draws_path = out_dir / "draws.bin"
    save_array(draws_path, draws)
    report_path = out_dir / "report.json"
    report_path.write_text(
        json.dumps(
            {
                "per_draw": report_per_draw,
                "mean_imputation": report_mean.to_dict(),
                "n_draws": n_draws,
                "scenario": cfg.scenario,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    quantiles_path = out_dir / "quantiles.csv"
    _write_quantile_csv(quantiles_path, values, draws, combined,
                        cfg.sampling.quantiles)
    return {
        "draws": draws_path,
        "report": report_path,
        "quantiles": quantiles_path,
        "per_draw": report_per_draw,
        "mean_imputation": report_mean,
    }


def _draw_batched(model, x_std, m_imp, m_mvi, schedule, cfg, rng, n_draws):
    """All (sample, draw) chains batched together, chunked deterministically."""
    n, k, length = x_std.shape
    combined = m_imp * m_mvi
    cond = np.repeat(x_std * combined, n_draws, axis=0)
    mask = np.repeat(combined, n_draws, axis=0)
    total = cond.shape[0]
    out = np.empty_like(cond)
    chunk = max(1, cfg.sampling.max_batch)
    from .diffusion import _reverse

    for lo in range(0, total, chunk):
        hi = min(lo + chunk, total)
        out[lo:hi] = _reverse(model, cond[lo:hi], mask[lo:hi], schedule,
                              cfg.diffusion.mode, rng.split(),
                              cfg.diffusion.parametrization)
    return out.reshape(n, n_draws, k, length)


def _average_reports(reports) -> dict:
    """Metrics averaged over draws (the per-draw reporting convention)."""
    out = {
        "mae": float(np.mean([r.mae for r in reports])),
        "mse": float(np.mean([r.mse for r in reports])),
        "rmse": float(np.mean([r.rmse for r in reports])),
        "n_eval": reports[0].n_eval,
    }
    mres = [r.mre for r in reports if r.mre is not None]
    out["mre"] = float(np.mean(mres)) if mres else None
    return out


def _format_float(x: float) -> str:
    return repr(float(x))


def _write_quantile_csv(path, truth, draws, combined_mask, quantiles) -> None:
    """Per (sample, channel, t): truth, mask, quantile band, mean, one draw."""
    n, n_draws, k, length = draws.shape
    q_list = list(quantiles)
    headers = ["sample_id", "channel", "t", "ground_truth", "mask"]
    headers += [f"q{int(round(q * 100)):02d}" for q in q_list]
    headers += ["mean", "one_draw"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(headers) + "\n")
        for i in range(n):
            summary = summarize_samples(draws[i], q_list)
            surfaces = summary["quantiles"]
            means = summary["mean"]
            for ch in range(k):
                for t in range(length):
                    row = [str(i), str(ch), str(t),
                           _format_float(truth[i, ch, t]),
                           str(int(combined_mask[i, ch, t]))]
                    row += [_format_float(surfaces[qi, ch, t])
                            for qi in range(len(q_list))]
                    row += [_format_float(means[ch, t]),
                            _format_float(draws[i, 0, ch, t])]
                    fh.write(",".join(row) + "\n")


def evaluate_files(pred_path, truth_path, m_imp_path, m_mvi_path=None):
    """Metric report from saved arrays (delegates to the metrics module)."""
    from .data import load_array

    pred = load_array(pred_path)
    truth = load_array(truth_path)
    m_imp = load_array(m_imp_path)
    if pred.shape != truth.shape or pred.shape != m_imp.shape:
        raise ConfigError(
            f"aligned shapes required: pred {pred.shape}, truth {truth.shape}, "
            f"m_imp {m_imp.shape}"
        )
    m_mvi = load_array(m_mvi_path) if m_mvi_path else np.ones_like(truth)
    return metrics.evaluate(truth, pred, metrics.eval_mask(m_imp, m_mvi))

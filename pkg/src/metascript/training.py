"""Adversarial training loop, checkpoints, config files and ablation runs."""

import dataclasses
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from metascript.glyphs import DatasetIndex, collate, load_dataset, sample_training_tuple
from metascript.nets import Generator, ModelConfig, MultiScaleDiscriminator
from metascript.objectives import (
    TERMS,
    LossWeights,
    NonFiniteLossError,
    authenticity_accuracy,
    discriminator_loss,
    generator_loss,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "metascript-checkpoint"
CHECKPOINT_VERSION = 1
PROFILES = {"paper": ModelConfig.paper(), "desk": ModelConfig.desk()}
RUNS_DIR_ENV = "METASCRIPT_RUNS_DIR"


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, term: str, last_checkpoint):
        super().__init__(
            f"non-finite {term} loss at iteration {iteration}; last good checkpoint: {last_checkpoint or 'none'}"
        )
        self.iteration = iteration
        self.last_checkpoint = last_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    dataset_root: str = ""
    name: str = "run"
    profile: str = "paper"
    references: int = 4
    batch_size: int = 32
    iterations: int = 100_000
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 5000
    holdout_fraction: float = 0.0
    runs_dir: str = ""
    font: str = ""  # prototype font, recorded for later composition
    # 0 means "take it from the profile"
    resolution: int = 0
    base_channels: int = 0
    style_dim: int = 0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; expected one of {sorted(PROFILES)}")
        if self.batch_size < 1 or self.iterations < 1 or self.references < 1:
            raise ValueError("batch_size, iterations and references must all be >= 1")
        if not (self.lr_g > 0 and self.lr_d > 0):
            raise ValueError("learning rates must be > 0")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in [0, 1)")

    def model(self) -> ModelConfig:
        base = PROFILES[self.profile]
        return ModelConfig(
            resolution=self.resolution or base.resolution,
            base_channels=self.base_channels or base.base_channels,
            style_dim=self.style_dim or base.style_dim,
            references=self.references,
        )

    def run_dir(self) -> Path:
        root = self.runs_dir or os.environ.get(RUNS_DIR_ENV) or "runs"
        return Path(root) / self.name

    def with_updates(self, **updates) -> "TrainConfig":
        flat = config_to_flat(self)
        flat.update(updates)
        return config_from_flat(flat)


# ---------------------------------------------------------------------------
# flat key = value config files

_WEIGHT_PREFIX = "w_"


def config_to_flat(config: TrainConfig) -> dict:
    flat = {f.name: getattr(config, f.name) for f in dataclasses.fields(config) if f.name != "weights"}
    for key, value in dataclasses.asdict(config.weights).items():
        flat[_WEIGHT_PREFIX + key] = value
    return flat


def config_from_flat(flat: dict) -> TrainConfig:
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    weight_fields = {f.name for f in dataclasses.fields(LossWeights)}
    kwargs, weights = {}, {}
    for key, value in flat.items():
        if key.startswith(_WEIGHT_PREFIX) and key[len(_WEIGHT_PREFIX) :] in weight_fields:
            weights[key[len(_WEIGHT_PREFIX) :]] = float(value)
        elif key in fields and key != "weights":
            kwargs[key] = _coerce(fields[key].type, value, key)
        else:
            raise KeyError(f"unknown config key {key!r}")
    return TrainConfig(weights=LossWeights(**weights), **kwargs)


def _coerce(kind, value, key):
    kind = kind if isinstance(kind, type) else {"int": int, "float": float, "str": str}[kind]
    if isinstance(value, kind):
        return value
    try:
        if kind is int:
            return int(float(value)) if float(value).is_integer() else int(value)
        return kind(value)
    except (TypeError, ValueError) as err:
        raise ValueError(f"config key {key}: cannot read {value!r} as {kind.__name__}") from err


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    flat = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        flat[key] = value.strip("\"'")
    return flat


def load_config(path=None, overrides: dict | None = None) -> TrainConfig:
    """Defaults, then the config file, then ``overrides``."""
    flat = config_to_flat(TrainConfig())
    if path is not None:
        flat.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    flat.update(overrides or {})
    return config_from_flat(flat)


def dump_config(config: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config_to_flat(config).items())


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    generator: Generator
    discriminator: MultiScaleDiscriminator | None
    model: ModelConfig
    config: TrainConfig | None
    characters: list
    writers: list
    iteration: int


def save_checkpoint(path, generator, discriminator, model: ModelConfig, config, index: DatasetIndex, iteration: int):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": dataclasses.asdict(model),
        "config": config_to_flat(config) if config is not None else None,
        "characters": list(index.characters),
        "writers": list(index.writers),
        "iteration": iteration,
        "generator": {
            "structure": generator.structure.state_dict(),
            "style": generator.style.state_dict(),
            "decoder": generator.decoder.state_dict(),
        },
        "discriminator": discriminator.state_dict() if discriminator is not None else None,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path, with_discriminator: bool = True) -> Checkpoint:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a generator checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    model = ModelConfig(**payload["model"])
    generator = model.build_generator()
    generator.structure.load_state_dict(payload["generator"]["structure"])
    generator.style.load_state_dict(payload["generator"]["style"])
    generator.decoder.load_state_dict(payload["generator"]["decoder"])
    generator.eval()
    discriminator = None
    if with_discriminator and payload["discriminator"] is not None:
        discriminator = model.build_discriminator(len(payload["characters"]), len(payload["writers"]))
        discriminator.load_state_dict(payload["discriminator"])
        discriminator.eval()
    config = config_from_flat(payload["config"]) if payload["config"] is not None else None
    return Checkpoint(
        generator, discriminator, model, config, payload["characters"], payload["writers"], payload["iteration"]
    )


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    run_dir: Path
    checkpoint: Path
    log_path: Path
    history: list  # one dict per iteration


def batch_tensors(index: DatasetIndex, config: TrainConfig, rng: np.random.Generator) -> dict:
    tuples = [sample_training_tuple(index, config.references, rng) for _ in range(config.batch_size)]
    return {k: torch.from_numpy(v) for k, v in collate(tuples).items()}


def discriminator_step(discriminator, opt_d, batch: dict, fake: torch.Tensor, weights: LossWeights):
    """One discriminator update on real scripts and detached generated ones."""
    labels = (batch["type_label"], batch["writer_label"])
    discriminator.requires_grad_(True)
    verdict_real = discriminator(batch["truth"])
    verdict_fake = discriminator(fake.detach())
    report = discriminator_loss(verdict_real, verdict_fake, labels, weights)
    accuracy = authenticity_accuracy(verdict_real, verdict_fake)
    opt_d.zero_grad(set_to_none=True)
    report.total.backward()
    opt_d.step()
    return report, accuracy


def generator_step(generator, discriminator, opt_g, batch: dict, fake, template_pyramid, ref_style, weights):
    """One generator update with the discriminator frozen."""
    labels = (batch["type_label"], batch["writer_label"])
    discriminator.requires_grad_(False)
    report = generator_loss(
        discriminator(fake),
        (generator.encode_structure(fake), template_pyramid),
        (generator.encode_style_single(fake), ref_style),
        fake,
        batch["truth"],
        labels,
        weights,
    )
    opt_g.zero_grad(set_to_none=True)
    report.total.backward()
    opt_g.step()
    discriminator.requires_grad_(True)
    return report


def train(config: TrainConfig, index: DatasetIndex | None = None, progress=None) -> TrainResult:
    """Run alternating discriminator/generator updates and write checkpoints and a JSONL log.

    ``progress``, when given, is called with each log row.
    """
    model = config.model()
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    if index is None:
        index = load_dataset(config.dataset_root, model.resolution)
    train_index, _ = index.split_writers(config.holdout_fraction, np.random.default_rng([config.seed, 1]))

    generator = model.build_generator()
    discriminator = model.build_discriminator(index.n, index.m)
    betas = (config.beta1, config.beta2)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr_g, betas=betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.lr_d, betas=betas)

    run_dir = config.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(dump_config(config), encoding="utf-8")
    log_path = run_dir / "metrics.jsonl"
    history, last_ckpt = [], None
    weights = config.weights

    generator.train()
    discriminator.train()
    with open(log_path, "w", encoding="utf-8") as log_file:
        for it in range(1, config.iterations + 1):
            started = time.perf_counter()
            batch = batch_tensors(train_index, config, rng)
            try:
                fake, template_pyramid, ref_style = generator(batch["references"], batch["template"], True)
                d_report, d_accuracy = discriminator_step(discriminator, opt_d, batch, fake, weights)
                g_report = generator_step(
                    generator, discriminator, opt_g, batch, fake, template_pyramid, ref_style, weights
                )
            except NonFiniteLossError as err:
                log.error("training diverged at iteration %d: %s", it, err)
                raise TrainingDiverged(it, err.term, last_ckpt) from err

            row = {"iter": it}
            row.update({f"g_{k}": v for k, v in g_report.as_dict().items()})
            row.update({f"d_{k}": v for k, v in d_report.as_dict().items()})
            row["d_accuracy"] = d_accuracy
            row["seconds"] = time.perf_counter() - started
            history.append(row)
            log_file.write(json.dumps(row) + "\n")
            if progress is not None:
                progress(row)

            if it % config.checkpoint_every == 0 or it == config.iterations:
                last_ckpt = save_checkpoint(
                    run_dir / f"ckpt_{it}.pt", generator, discriminator, model, config, index, it
                )
    generator.eval()
    discriminator.eval()
    return TrainResult(run_dir, last_ckpt, log_path, history)


def read_log(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# ablations

_TERM_LABELS = {"adv": "L_adv", "cls": "L_cls", "str": "L_str", "sty": "L_sty", "rec": "L_rec"}


def delta_label(delta: dict) -> str:
    if not delta:
        return "w/ L_all"
    parts = []
    for key, value in delta.items():
        if key == "remove":
            parts.append(f"w/o {_TERM_LABELS[value]}")
        elif key == "references":
            parts.append(f"c={value}")
        else:
            parts.append(f"{key}={value}")
    return ", ".join(parts)


def apply_delta(config: TrainConfig, delta: dict) -> TrainConfig:
    """``{"remove": term}`` zeroes a loss term; any other key overrides that config key."""
    delta = dict(delta)
    updates = {}
    term = delta.pop("remove", None)
    if term is not None:
        if term not in TERMS:
            raise ValueError(f"cannot remove unknown term {term!r}")
        for key, value in dataclasses.asdict(config.weights.without(term)).items():
            updates[_WEIGHT_PREFIX + key] = value
    updates.update(delta)
    return config.with_updates(**updates)


def parse_delta(text: str) -> dict:
    """``"remove=cls"`` or ``"references=2,lr_g=0.0002"`` -> dict; ``"baseline"`` -> {}."""
    if text.strip() in ("", "baseline"):
        return {}
    out = {}
    for part in text.split(","):
        key, _, value = part.partition("=")
        if not value:
            raise ValueError(f"bad ablation delta {part!r}; expected key=value")
        out[key.strip()] = value.strip()
    if "references" in out:
        out["references"] = int(out["references"])
    return out


def run_ablation(base: TrainConfig, matrix, index: DatasetIndex | None = None, evaluate=None, progress=None) -> list:
    """Train one run per delta and summarize it.

    ``evaluate(checkpoint_path, config)`` may return extra columns (e.g. RA/IS/FID).
    """
    rows = []
    for k, delta in enumerate(matrix):
        label = delta_label(delta)
        slug = re.sub(r"[^0-9A-Za-z]+", "_", label).strip("_") or f"run{k}"
        config = apply_delta(base, delta).with_updates(name=f"{base.name}/{slug}")
        log.info("ablation run %s", label)
        result = train(config, index=index, progress=progress)
        tail = result.history[-min(50, len(result.history)) :]
        row = {
            "label": label,
            "checkpoint": str(result.checkpoint),
            "g_rec": float(np.mean([r["g_rec"] for r in tail])),
            "d_accuracy": float(np.mean([r["d_accuracy"] for r in tail])),
        }
        if evaluate is not None:
            row.update(evaluate(result.checkpoint, config))
        rows.append(row)
    return rows


def format_table(rows, columns=("RA", "IS", "FID")) -> str:
    header = ["Run"] + [c for c in columns if any(c in r for r in rows)]
    lines = [" | ".join(header)]
    for row in rows:
        cells = [row["label"]]
        for col in header[1:]:
            value = row.get(col)
            if value is None:
                cells.append("-")
            elif col == "RA":
                cells.append(f"{100 * value:.1f}%")
            else:
                cells.append(f"{value:.3f}")
        lines.append(" | ".join(cells))
    return "\n".join(lines)

"""Recognition accuracy, inception score and Frechet distance over a character classifier."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from metascript.glyphs import DatasetIndex

log = logging.getLogger(__name__)

EIG_TOLERANCE = 1e-6


# ---------------------------------------------------------------------------
# metrics


def recognition_accuracy(probs, labels) -> float:
    """Fraction of rows whose argmax equals the true type."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.shape[0] == 0:
        raise ValueError("recognition accuracy of an empty set")
    if probs.shape[0] != labels.shape[0]:
        raise ValueError("one label per prediction required")
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def inception_score(probs, splits: int = 1) -> float:
    """``exp(E_x KL(p(y|x) || p(y)))`` with ``p(y)`` the marginal of each split; mean over splits."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 2:
        raise ValueError("inception score needs at least 2 predictions")
    if splits < 1 or splits > probs.shape[0]:
        raise ValueError(f"splits must be in [1, {probs.shape[0]}]")
    scores = []
    for part in np.array_split(probs, splits):
        marginal = part.mean(axis=0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0).sum(axis=1)
        scores.append(np.exp(kl.mean()))
    return float(np.mean(scores))


@dataclass(frozen=True)
class ActivationStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    @classmethod
    def from_features(cls, features) -> "ActivationStats":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 2:
            raise ValueError("activation statistics need at least 2 feature rows")
        cov = np.cov(features, rowvar=False)
        return cls(features.mean(axis=0), np.atleast_2d(0.5 * (cov + cov.T)), features.shape[0])


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(matrix)
    vals = _clip_eigenvalues(vals)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _clip_eigenvalues(vals: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(vals)))) if vals.size else 1.0
    if vals.size and vals.min() < -EIG_TOLERANCE * scale:
        raise ValueError(f"covariance has a negative eigenvalue {vals.min():.3g}")
    return np.clip(vals, 0.0, None)


def frechet_distance(a: ActivationStats, b: ActivationStats) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    The trace of the product root is taken as ``tr((R S_b R)^(1/2))`` with
    ``R = S_a^(1/2)``, which is symmetric, so both roots come from symmetric
    eigendecompositions.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"feature dimensions differ: {a.mean.shape} vs {b.mean.shape}")
    for stats in (a, b):
        if not (np.all(np.isfinite(stats.mean)) and np.all(np.isfinite(stats.cov))):
            raise ValueError("activation statistics are not finite")
    root_a = _psd_sqrt(a.cov)
    middle = root_a @ b.cov @ root_a
    cross = np.sqrt(_clip_eigenvalues(np.linalg.eigvalsh(0.5 * (middle + middle.T)))).sum()
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * cross)
    return max(value, 0.0)


def diversity_probe(images) -> float:
    """Mean pairwise L1 distance (per pixel) among a set of glyphs."""
    flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    if flat.shape[0] < 2:
        raise ValueError("diversity needs at least 2 images")
    total, pairs = 0.0, 0
    for i in range(flat.shape[0] - 1):
        total += np.abs(flat[i + 1 :] - flat[i]).mean(axis=1).sum()
        pairs += flat.shape[0] - 1 - i
    return float(total / pairs)


def blur_probe(images) -> float:
    """Mean of ``4 x (1 - x)``: 0 for crisp binary glyphs, 1 for all mid-gray."""
    x = np.asarray(images, dtype=np.float64)
    return float(np.mean(4.0 * x * (1.0 - x)))


# ---------------------------------------------------------------------------
# classifier


class SmallBackbone(nn.Module):
    def __init__(self, width: int = 32):
        super().__init__()
        layers, in_ch = [], 1
        for ch in (width, 2 * width, 4 * width, 4 * width):
            layers += [nn.Conv2d(in_ch, ch, 3, padding=1), nn.BatchNorm2d(ch), nn.ReLU(), nn.MaxPool2d(2)]
            in_ch = ch
        self.body = nn.Sequential(*layers)
        self.out_features = in_ch

    def forward(self, x):
        return self.body(x).mean(dim=(2, 3))


class EfficientNetBackbone(nn.Module):
    def __init__(self):
        super().__init__()
        from torchvision.models import efficientnet_v2_s

        net = efficientnet_v2_s(weights=None)
        self.body = net.features
        self.out_features = net.classifier[1].in_features

    def forward(self, x):
        return self.body(x.expand(-1, 3, -1, -1)).mean(dim=(2, 3))


BACKBONES = {"small": SmallBackbone, "efficientnet_v2_s": EfficientNetBackbone}


class CharacterClassifier(nn.Module):
    """Backbone, pooled penultimate features, linear class head."""

    def __init__(self, characters, resolution: int, backbone: str = "small", width: int = 32):
        super().__init__()
        if backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {backbone!r}; expected one of {sorted(BACKBONES)}")
        self.characters = list(characters)
        self.resolution = resolution
        self.backbone_name = backbone
        self.width = width
        self.backbone = BACKBONES[backbone](width) if backbone == "small" else BACKBONES[backbone]()
        self.head = nn.Linear(self.backbone.out_features, len(self.characters))

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.resolution:
            x = F.interpolate(x, size=(self.resolution, self.resolution), mode="bilinear", align_corners=False)
        return self.backbone(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


@dataclass(frozen=True)
class ClassifierConfig:
    backbone: str = "small"
    width: int = 32
    steps: int = 400
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


def _augment(x: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Random affine jitter plus random stroke thickening or thinning."""
    b = x.shape[0]
    angle = (torch.rand(b, generator=gen) - 0.5) * np.deg2rad(20.0)
    scale = 0.85 + 0.3 * torch.rand(b, generator=gen)
    shear = (torch.rand(b, generator=gen) - 0.5) * 0.6
    shift = (torch.rand(b, 2, generator=gen) - 0.5) * 0.16
    cos, sin = torch.cos(angle) / scale, torch.sin(angle) / scale
    theta = torch.stack(
        [torch.stack([cos, -sin + shear, shift[:, 0]], 1), torch.stack([sin, cos, shift[:, 1]], 1)], 1
    )
    grid = F.affine_grid(theta, list(x.shape), align_corners=False)
    x = F.grid_sample(x, grid, padding_mode="zeros", align_corners=False)
    mode = torch.randint(0, 3, (b,), generator=gen)
    thick = F.max_pool2d(x, 3, 1, 1)
    thin = -F.max_pool2d(-x, 3, 1, 1)
    x = torch.where((mode == 1)[:, None, None, None], thick, x)
    return torch.where((mode == 2)[:, None, None, None], thin, x)


def _split_entries(index: DatasetIndex, rng: np.random.Generator):
    """Hold out one script of every class that has at least two."""
    by_type = {}
    for cp, writer in index.entry_keys:
        by_type.setdefault(cp, []).append(writer)
    train, held = [], []
    for cp in index.characters:
        writers = by_type.get(cp, [])
        if not writers:
            raise ValueError(f"class U+{cp:04X} has no samples")
        if len(writers) >= 2:
            k = int(rng.integers(len(writers)))
            held.append((cp, writers[k]))
            writers = writers[:k] + writers[k + 1 :]
        train += [(cp, w) for w in writers]
    return train, held


def train_eval_classifier(index: DatasetIndex, config: ClassifierConfig = ClassifierConfig()):
    """Train a character classifier on the dataset scripts.

    One script per class (when the class has two or more) is kept out of
    training; returns ``(classifier, {"holdout_accuracy", "train_accuracy"})``.
    """
    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    train_keys, held_keys = _split_entries(index, rng)

    def stack(keys):
        images = np.stack([index.script(cp, w) for cp, w in keys])[:, None]
        labels = np.array([index.type_label(cp) for cp, _ in keys])
        return torch.from_numpy(images.astype(np.float32)), torch.from_numpy(labels)

    x_train, y_train = stack(train_keys)
    model = CharacterClassifier(index.characters, index.resolution, config.backbone, config.width)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    model.train()
    for _ in range(config.steps):
        pick = torch.randint(0, x_train.shape[0], (config.batch_size,), generator=gen)
        logits = model(_augment(x_train[pick], gen))
        loss = F.cross_entropy(logits, y_train[pick])
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    model.eval()

    report = {"train_accuracy": recognition_accuracy(predict(model, x_train)[0], y_train.numpy())}
    if held_keys:
        x_held, y_held = stack(held_keys)
        report["holdout_accuracy"] = recognition_accuracy(predict(model, x_held)[0], y_held.numpy())
    return model, report


@torch.no_grad()
def predict(classifier: CharacterClassifier, images, batch_size: int = 256):
    """Return ``(class probabilities, penultimate features)`` as numpy arrays."""
    x = torch.as_tensor(np.asarray(images, dtype=np.float32))
    if x.dim() == 3:
        x = x[:, None]
    classifier.eval()
    probs, feats = [], []
    for start in range(0, x.shape[0], batch_size):
        f = classifier.features(x[start : start + batch_size])
        feats.append(f.double().numpy())
        probs.append(torch.softmax(classifier.head(f).double(), dim=1).numpy())
    return np.concatenate(probs), np.concatenate(feats)


def save_classifier(classifier: CharacterClassifier, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": "metascript-classifier",
            "characters": classifier.characters,
            "resolution": classifier.resolution,
            "backbone": classifier.backbone_name,
            "width": classifier.width,
            "state": classifier.state_dict(),
        },
        path,
    )
    return path


def load_classifier(path) -> CharacterClassifier:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != "metascript-classifier":
        raise ValueError(f"{path} is not a classifier checkpoint")
    model = CharacterClassifier(payload["characters"], payload["resolution"], payload["backbone"], payload["width"])
    model.load_state_dict(payload["state"])
    model.eval()
    return model


# ---------------------------------------------------------------------------
# generator evaluation


@torch.no_grad()
def generate_testset(generator, testset: DatasetIndex, references=None, seed: int = 0):
    """Generate every (character, writer) script of ``testset``.

    ``references`` (c, R, R) overrides per-writer references; otherwise ``c``
    glyphs of each writer other than the target are drawn.
    Returns ``(generated images, codepoints, writers)``.
    """
    rng = np.random.default_rng(seed)
    c = generator.references
    images, codepoints, writers = [], [], []
    for writer in testset.writers:
        own = testset.by_writer[writer]
        if not own:
            continue
        for cp in own:
            if references is None:
                pool = [o for o in own if o != cp]
                if len(pool) < c:
                    pool = list(own)
                if len(pool) < c:
                    raise ValueError(f"writer {writer} has fewer than {c} glyphs for references")
                picks = rng.choice(len(pool), size=c, replace=False)
                refs = np.stack([testset.script(pool[i], writer) for i in picks])
            else:
                refs = np.asarray(references, dtype=np.float32)
            fake = generator(
                torch.from_numpy(refs[None].astype(np.float32)),
                torch.from_numpy(testset.prototype(cp)[None, None].astype(np.float32)),
            )
            images.append(fake[0, 0].numpy())
            codepoints.append(cp)
            writers.append(writer)
    return np.stack(images), codepoints, writers


def evaluate_generator(generator, classifier: CharacterClassifier, testset: DatasetIndex, references=None,
                       seed: int = 0, splits: int = 1) -> dict:
    """RA, IS and FID of generated test scripts against the real ones."""
    generator.eval()
    fakes, codepoints, writers = generate_testset(generator, testset, references, seed)
    known = {cp: i for i, cp in enumerate(classifier.characters)}
    keep = [k for k, cp in enumerate(codepoints) if cp in known]
    if not keep:
        raise ValueError("no test character is known to the classifier")
    if len(keep) < len(codepoints):
        log.warning("%d test characters unknown to the classifier are ignored", len(codepoints) - len(keep))
    fakes = fakes[keep]
    labels = np.array([known[codepoints[k]] for k in keep])
    reals = np.stack([testset.script(codepoints[k], writers[k]) for k in keep])
    fake_probs, fake_feats = predict(classifier, fakes)
    _, real_feats = predict(classifier, reals)
    return {
        "RA": recognition_accuracy(fake_probs, labels),
        "IS": inception_score(fake_probs, splits),
        "FID": frechet_distance(ActivationStats.from_features(fake_feats), ActivationStats.from_features(real_feats)),
        "count": len(keep),
    }

"""Adversarial, classification, structure, style and reconstruction losses.

Every term is averaged over the batch and summed over the three discriminator
scales. Authenticity logits go through log-sigmoid, class logits through
log-softmax, so each term is finite for finite inputs.
"""

import math
from dataclasses import asdict, dataclass, field, replace

import torch
import torch.nn.functional as F

TERMS = ("adv", "cls", "str", "sty", "rec")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str):
        super().__init__(f"loss term {term} is not finite")
        self.term = term


@dataclass(frozen=True)
class LossWeights:
    adv_g: float = 1.0
    cls_g: float = 1.0
    str_g: float = 0.5
    sty_g: float = 0.1
    rec_g: float = 20.0
    adv_d: float = 1.0
    cls_d: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {value}")

    def without(self, term: str) -> "LossWeights":
        """Zero every weight of one loss term (both networks where it applies)."""
        if term not in TERMS:
            raise ValueError(f"unknown loss term {term!r}; expected one of {TERMS}")
        zeroed = {k: 0.0 for k in asdict(self) if k.startswith(term + "_")}
        return replace(self, **zeroed)


@dataclass
class LossReport:
    terms: dict  # name -> scalar tensor
    weights: dict  # name -> weight
    total: torch.Tensor = field(default=None)

    def as_dict(self) -> dict:
        out = {name: float(value.detach()) for name, value in self.terms.items()}
        out["total"] = float(self.total.detach())
        return out


def _weighted(terms: dict, weights: dict) -> LossReport:
    for name, value in terms.items():
        if not torch.isfinite(value).all():
            raise NonFiniteLossError(name)
    total = None
    reported = {}
    for name, value in terms.items():
        w = weights[name]
        if w == 0.0:
            reported[name] = value.detach()
            continue
        reported[name] = value
        total = w * value if total is None else total + w * value
    if total is None:
        total = next(iter(terms.values())).detach() * 0.0
    return LossReport(reported, weights, total)


def adversarial_real(verdicts) -> torch.Tensor:
    """``-sum_s log sigmoid(logit_s)``, batch mean."""
    return -sum(F.logsigmoid(v.authenticity).mean() for v in verdicts)


def adversarial_fake(verdicts) -> torch.Tensor:
    """``-sum_s log(1 - sigmoid(logit_s))``, batch mean."""
    return -sum(F.logsigmoid(-v.authenticity).mean() for v in verdicts)


def classification(verdicts, type_label: torch.Tensor, writer_label: torch.Tensor) -> torch.Tensor:
    return sum(F.cross_entropy(v.types, type_label) + F.cross_entropy(v.writers, writer_label) for v in verdicts)


def structure_distance(fake_pyramid, template_pyramid) -> torch.Tensor:
    """Half the squared distance, averaged per element within a level, summed over levels."""
    return sum(0.5 * (a - b).pow(2).mean() for a, b in zip(fake_pyramid, template_pyramid, strict=True))


def style_distance(fake_style: torch.Tensor, ref_style: torch.Tensor) -> torch.Tensor:
    return 0.5 * (fake_style - ref_style).pow(2).sum(dim=1).mean()


def reconstruction(fake: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    return (fake - truth).abs().mean()


def generator_loss(verdict_fake, pyramids, styles, fake, truth, labels, weights: LossWeights) -> LossReport:
    """Total generator objective and its terms.

    Args:
        verdict_fake: per-scale verdicts on the generated glyphs.
        pyramids: (structure maps of the fake, structure maps of the template).
        styles: (style of the fake tiled over the reference channels, style of the references).
        fake, truth: generated and ground-truth glyph batches.
        labels: (type labels, writer labels).
    """
    type_label, writer_label = labels
    terms = {
        "adv": adversarial_real(verdict_fake),
        "cls": classification(verdict_fake, type_label, writer_label),
        "str": structure_distance(*pyramids),
        "sty": style_distance(*styles),
        "rec": reconstruction(fake, truth),
    }
    w = {"adv": weights.adv_g, "cls": weights.cls_g, "str": weights.str_g, "sty": weights.sty_g, "rec": weights.rec_g}
    return _weighted(terms, w)


def discriminator_loss(verdict_real, verdict_fake, labels, weights: LossWeights) -> LossReport:
    """Total discriminator objective; generated samples are classified toward the target labels."""
    type_label, writer_label = labels
    terms = {
        "adv": adversarial_real(verdict_real) + adversarial_fake(verdict_fake),
        "cls": classification(verdict_real, type_label, writer_label)
        + classification(verdict_fake, type_label, writer_label),
    }
    return _weighted(terms, {"adv": weights.adv_d, "cls": weights.cls_d})


@torch.no_grad()
def authenticity_accuracy(verdict_real, verdict_fake) -> float:
    """Fraction of correct real/fake calls over all scales and samples."""
    hits = sum((v.authenticity > 0).float().sum() for v in verdict_real)
    hits = hits + sum((v.authenticity < 0).float().sum() for v in verdict_fake)
    count = sum(v.authenticity.numel() for v in verdict_real) + sum(v.authenticity.numel() for v in verdict_fake)
    return float(hits) / count
